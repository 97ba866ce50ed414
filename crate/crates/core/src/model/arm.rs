use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Vector2};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float as _;

use super::{dv, AffineMatrix, ConsistencyConstraint, ConstraintKind, Mechanics, ModelClass, ParamEntry, ParamLayout, ParamRole, GRAVITY};

/// Planar link inertial in the link frame (origin at the proximal joint,
/// x-axis along the link).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinkInertial {
    pub mass: f64,
    pub com: [f64; 2],
    /// Rotational inertia about the center of mass.
    pub inertia_com: f64,
}

impl LinkInertial {
    /// `[m, m cₓ, m c_y, I_origin]` with the parallel-axis shift applied.
    pub fn params(&self) -> [f64; 4] {
        let [cx, cy] = self.com;
        let m = self.mass;
        [m, m * cx, m * cy, self.inertia_com + m * (cx * cx + cy * cy)]
    }
}

/// Two-link planar arm in a vertical plane, gravity along −y.
///
/// Parameters per link: mass, first moments `(m cₓ, m c_y)` and rotational
/// inertia about the joint axis, all in the link frame.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TwoLinkArm {
    pub lengths: [f64; 2],
    /// Gravitational acceleration (0 disables gravity).
    pub gravity: f64,
}

impl TwoLinkArm {
    pub fn new(lengths: [f64; 2], gravity: bool) -> Self {
        Self {
            lengths,
            gravity: if gravity { GRAVITY } else { 0.0 },
        }
    }

    pub fn params_for(&self, links: &[LinkInertial; 2]) -> DVector<f64> {
        let mut v = Vec::with_capacity(8);
        for l in links {
            v.extend_from_slice(&l.params());
        }
        DVector::from_vec(v)
    }

    /// Planar pseudo-inertia `[[I, hₓ, h_y], [hₓ, m, 0], [h_y, 0, m]]` of
    /// link `link`; PSD iff `m ≥ 0` and `I m ≥ ‖h‖²`.
    pub fn pseudo_inertia(&self, link: usize) -> AffineMatrix {
        let base = 4 * link;
        let mut coeffs = vec![DMatrix::zeros(3, 3); 8];
        coeffs[base][(1, 1)] = 1.0;
        coeffs[base][(2, 2)] = 1.0;
        coeffs[base + 1][(0, 1)] = 1.0;
        coeffs[base + 1][(1, 0)] = 1.0;
        coeffs[base + 2][(0, 2)] = 1.0;
        coeffs[base + 2][(2, 0)] = 1.0;
        coeffs[base + 3][(0, 0)] = 1.0;
        AffineMatrix {
            constant: DMatrix::zeros(3, 3),
            coeffs,
        }
    }
}

fn rot(a: f64, v: Vector2<f64>) -> Vector2<f64> {
    let (s, c) = a.sin_cos();
    Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

fn perp(v: Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-v.y, v.x)
}

fn cross(u: Vector2<f64>, v: Vector2<f64>) -> f64 {
    u.x * v.y - u.y * v.x
}

impl Mechanics for TwoLinkArm {
    fn class(&self) -> ModelClass {
        ModelClass::InertiaDominated
    }

    fn dof(&self) -> usize {
        2
    }

    fn layout(&self) -> ParamLayout {
        let mut entries = Vec::with_capacity(8);
        for link in 0..2 {
            let k = link + 1;
            entries.push(ParamEntry::new(format!("m{k}"), ParamRole::Mass, "kg", link));
            entries.push(ParamEntry::new(format!("mx{k}"), ParamRole::FirstMomentX, "kg m", link));
            entries.push(ParamEntry::new(format!("my{k}"), ParamRole::FirstMomentY, "kg m", link));
            entries.push(ParamEntry::new(format!("izz{k}"), ParamRole::RotationalInertia, "kg m^2", link));
        }
        ParamLayout { entries }
    }

    fn coordinate_names(&self) -> Vec<String> {
        vec!["shoulder".into(), "elbow".into()]
    }

    fn coordinate_units(&self) -> Vec<String> {
        vec!["rad".into(), "rad".into()]
    }

    fn shape_coordinates(&self) -> Vec<usize> {
        vec![0, 1]
    }

    fn regressor(&self, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>) -> DMatrix<f64> {
        let l1 = self.lengths[0];
        let g = self.gravity;
        let (s1, c1) = q[0].sin_cos();
        let (s2, c2) = q[1].sin_cos();
        let (s12, c12) = (q[0] + q[1]).sin_cos();
        let (w1, w2) = (qd[0], qd[1]);
        let (a1, a2) = (qdd[0], qdd[1]);
        // Velocity-product terms of the off-diagonal inertia coupling.
        let vel1 = 2.0 * w1 * w2 + w2 * w2;
        let vel2 = w1 * w1;

        let mut y = DMatrix::zeros(2, 8);
        // Link 1: m1 never enters the dynamics.
        y[(0, 1)] = g * c1;
        y[(0, 2)] = -g * s1;
        y[(0, 3)] = a1;
        // Link 2.
        y[(0, 4)] = l1 * l1 * a1 + g * l1 * c1;
        y[(0, 5)] = l1 * c2 * (2.0 * a1 + a2) - l1 * s2 * vel1 + g * c12;
        y[(1, 5)] = l1 * c2 * a1 + l1 * s2 * vel2 + g * c12;
        y[(0, 6)] = -l1 * s2 * (2.0 * a1 + a2) - l1 * c2 * vel1 - g * s12;
        y[(1, 6)] = -l1 * s2 * a1 + l1 * c2 * vel2 - g * s12;
        y[(0, 7)] = a1 + a2;
        y[(1, 7)] = a1 + a2;
        y
    }

    fn metric_basis(&self, q: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let l1 = self.lengths[0];
        let (s2, c2) = q[1].sin_cos();
        let mut mp = vec![DMatrix::zeros(2, 2); 8];
        mp[3][(0, 0)] = 1.0;
        mp[4][(0, 0)] = l1 * l1;
        mp[5] = DMatrix::from_row_slice(2, 2, &[2.0 * l1 * c2, l1 * c2, l1 * c2, 0.0]);
        mp[6] = DMatrix::from_row_slice(2, 2, &[-2.0 * l1 * s2, -l1 * s2, -l1 * s2, 0.0]);
        mp[7] = DMatrix::from_element(2, 2, 1.0);
        (DMatrix::zeros(2, 2), mp)
    }

    fn metric(&self, q: &DVector<f64>, pi: &DVector<f64>) -> DMatrix<f64> {
        let zero = DVector::zeros(2);
        let bias = self.inverse_dynamics(q, &zero, &zero, pi);
        let mut m = DMatrix::zeros(2, 2);
        for j in 0..2 {
            let mut e = DVector::zeros(2);
            e[j] = 1.0;
            let col = self.inverse_dynamics(q, &zero, &e, pi) - &bias;
            m.set_column(j, &col);
        }
        m
    }

    /// Recursive Newton–Euler with the base accelerated upward by `g`.
    fn inverse_dynamics(&self, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>, pi: &DVector<f64>) -> DVector<f64> {
        let l1 = self.lengths[0];
        let angles = [q[0], q[0] + q[1]];
        let omega = [qd[0], qd[0] + qd[1]];
        let alpha = [qdd[0], qdd[0] + qdd[1]];

        let joint2 = rot(angles[0], Vector2::new(l1, 0.0));
        let acc0 = Vector2::new(0.0, self.gravity);
        let acc1 = acc0 + perp(joint2) * alpha[0] - joint2 * (omega[0] * omega[0]);
        let accs = [acc0, acc1];

        let mut force = [Vector2::zeros(); 2];
        let mut moment = [0.0; 2];
        for i in 0..2 {
            let b = 4 * i;
            let (m, hx, hy, inertia) = (pi[b], pi[b + 1], pi[b + 2], pi[b + 3]);
            let h = rot(angles[i], Vector2::new(hx, hy));
            force[i] = accs[i] * m + perp(h) * alpha[i] - h * (omega[i] * omega[i]);
            moment[i] = inertia * alpha[i] + cross(h, accs[i]);
        }
        let tau2 = moment[1];
        let tau1 = moment[0] + tau2 + cross(joint2, force[1]);
        dv(&[tau1, tau2])
    }

    fn parameter_blocks(&self) -> Vec<ConsistencyConstraint> {
        (0..2)
            .map(|link| ConsistencyConstraint {
                label: format!("pseudo-inertia link {}", link + 1),
                kind: ConstraintKind::PseudoInertia,
                form: self.pseudo_inertia(link),
                margin: 0.0,
            })
            .collect()
    }

    fn reference_params(&self) -> DVector<f64> {
        let [l1, l2] = self.lengths;
        let link = |l: f64| LinkInertial {
            mass: 1.0,
            com: [0.5 * l, 0.0],
            inertia_com: l * l / 12.0,
        };
        self.params_for(&[link(l1), link(l2)])
    }
}
