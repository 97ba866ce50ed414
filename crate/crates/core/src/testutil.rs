//! Oracles shared by the unit tests of several modules.

use core::ops::{Add, Mul, Neg, Sub};

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float as _;

use crate::model::{LinkInertial, TwoLinkArm};

// Hyper-dual numbers a + b ε₁ + c ε₂ + d ε₁ε₂ (ε₁² = ε₂² = 0) give exact
// first and mixed second derivatives, so the Lagrangian oracle below has no
// truncation error.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Hd {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Hd {
    pub fn cst(a: f64) -> Self {
        Hd { a, b: 0.0, c: 0.0, d: 0.0 }
    }
    fn sin(self) -> Self {
        let (s, co) = self.a.sin_cos();
        Hd {
            a: s,
            b: co * self.b,
            c: co * self.c,
            d: co * self.d - s * self.b * self.c,
        }
    }
    fn cos(self) -> Self {
        let (s, co) = self.a.sin_cos();
        Hd {
            a: co,
            b: -s * self.b,
            c: -s * self.c,
            d: -s * self.d - co * self.b * self.c,
        }
    }
}

impl Add for Hd {
    type Output = Hd;
    fn add(self, o: Hd) -> Hd {
        Hd { a: self.a + o.a, b: self.b + o.b, c: self.c + o.c, d: self.d + o.d }
    }
}

impl Sub for Hd {
    type Output = Hd;
    fn sub(self, o: Hd) -> Hd {
        self + (-o)
    }
}

impl Neg for Hd {
    type Output = Hd;
    fn neg(self) -> Hd {
        Hd { a: -self.a, b: -self.b, c: -self.c, d: -self.d }
    }
}

impl Mul for Hd {
    type Output = Hd;
    fn mul(self, o: Hd) -> Hd {
        Hd {
            a: self.a * o.a,
            b: self.a * o.b + self.b * o.a,
            c: self.a * o.c + self.c * o.a,
            d: self.a * o.d + self.b * o.c + self.c * o.b + self.d * o.a,
        }
    }
}

impl Mul<f64> for Hd {
    type Output = Hd;
    fn mul(self, k: f64) -> Hd {
        Hd { a: self.a * k, b: self.b * k, c: self.c * k, d: self.d * k }
    }
}

/// Lagrangian of the two-link arm from per-link kinetic and potential
/// energy of the center of mass (no regressor, no Newton–Euler).
pub(crate) fn arm_lagrangian(arm: &TwoLinkArm, links: &[LinkInertial; 2], q: [Hd; 2], qd: [Hd; 2]) -> Hd {
    let l1 = arm.lengths[0];
    let rotate = |ang: Hd, v: [f64; 2]| {
        let (c, s) = (ang.cos(), ang.sin());
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    };
    let th1 = q[0];
    let th2 = q[0] + q[1];
    let w1 = qd[0];
    let w2 = qd[0] + qd[1];

    let r1 = rotate(th1, links[0].com);
    let v1 = [-r1[1] * w1, r1[0] * w1];
    let j2 = rotate(th1, [l1, 0.0]);
    let r2 = rotate(th2, links[1].com);
    let v2 = [-j2[1] * w1 - r2[1] * w2, j2[0] * w1 + r2[0] * w2];
    let y2 = j2[1] + r2[1];

    let half = 0.5;
    let (m1, m2) = (links[0].mass, links[1].mass);
    let t = (v1[0] * v1[0] + v1[1] * v1[1]) * (half * m1)
        + w1 * w1 * (half * links[0].inertia_com)
        + (v2[0] * v2[0] + v2[1] * v2[1]) * (half * m2)
        + w2 * w2 * (half * links[1].inertia_com);
    let v = r1[1] * (m1 * arm.gravity) + y2 * (m2 * arm.gravity);
    t - v
}

/// τ = (∂²L/∂q̇∂q̇) q̈ + (∂²L/∂q̇∂q) q̇ − ∂L/∂q via hyper-dual seeding.
pub(crate) fn lagrange_oracle(arm: &TwoLinkArm, links: &[LinkInertial; 2], q: &[f64; 2], qd: &[f64; 2], qdd: &[f64; 2]) -> [f64; 2] {
    // Variable order: [q0, q1, qd0, qd1].
    let x = [q[0], q[1], qd[0], qd[1]];
    let eval = |i: Option<usize>, j: Option<usize>| {
        let mut v = [Hd::cst(0.0); 4];
        for k in 0..4 {
            v[k] = Hd::cst(x[k]);
            if Some(k) == i {
                v[k].b = 1.0;
            }
            if Some(k) == j {
                v[k].c = 1.0;
            }
        }
        arm_lagrangian(arm, links, [v[0], v[1]], [v[2], v[3]])
    };
    let mut tau = [0.0; 2];
    for (i, t) in tau.iter_mut().enumerate() {
        let mut acc = -eval(Some(i), None).b;
        for j in 0..2 {
            acc += eval(Some(2 + i), Some(2 + j)).d * qdd[j];
            acc += eval(Some(2 + i), Some(j)).d * qd[j];
        }
        *t = acc;
    }
    tau
}

