use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, RowDVector};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float as _;

use super::{dv, scalar_block, ConsistencyConstraint, Mechanics, ModelClass, ParamEntry, ParamLayout, ParamRole};

const LINK_NAMES: [&str; 3] = ["rear", "middle", "front"];

/// Three-link planar crawler moving through a resistive medium.
///
/// Coordinates `(x, y, θ, α₁, α₂)`: world position and heading of the middle
/// link, then the rear and front joint angles. Each link dissipates through
/// longitudinal and lateral viscous drag at its center; each joint has its
/// own viscous drag. Parameters:
/// `[long_rear, lat_rear, long_mid, lat_mid, long_front, lat_front, joint1, joint2]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DragCrawler {
    /// Rear, middle and front link lengths (m).
    pub lengths: [f64; 3],
}

/// Center velocity Jacobian (2×5) and heading of one link.
struct LinkKinematics {
    jac: DMatrix<f64>,
    heading: f64,
}

impl DragCrawler {
    pub fn new(lengths: [f64; 3]) -> Self {
        Self { lengths }
    }

    fn links(&self, q: &DVector<f64>) -> [LinkKinematics; 3] {
        let [lr, lm, lf] = self.lengths;
        let th = q[2];
        let th_r = th + q[3];
        let th_f = th + q[4];
        let ep = |a: f64| {
            let (s, c) = a.sin_cos();
            (-s, c)
        };
        let (pm_x, pm_y) = ep(th);
        let (pr_x, pr_y) = ep(th_r);
        let (pf_x, pf_y) = ep(th_f);

        let mut mid = DMatrix::zeros(2, 5);
        mid[(0, 0)] = 1.0;
        mid[(1, 1)] = 1.0;

        // p_rear = p − (lm/2) e(θ) − (lr/2) e(θ + α₁)
        let mut rear = mid.clone();
        rear[(0, 2)] = -0.5 * lm * pm_x - 0.5 * lr * pr_x;
        rear[(1, 2)] = -0.5 * lm * pm_y - 0.5 * lr * pr_y;
        rear[(0, 3)] = -0.5 * lr * pr_x;
        rear[(1, 3)] = -0.5 * lr * pr_y;

        // p_front = p + (lm/2) e(θ) + (lf/2) e(θ + α₂)
        let mut front = mid.clone();
        front[(0, 2)] = 0.5 * lm * pm_x + 0.5 * lf * pf_x;
        front[(1, 2)] = 0.5 * lm * pm_y + 0.5 * lf * pf_y;
        front[(0, 4)] = 0.5 * lf * pf_x;
        front[(1, 4)] = 0.5 * lf * pf_y;

        [
            LinkKinematics { jac: rear, heading: th_r },
            LinkKinematics { jac: mid, heading: th },
            LinkKinematics { jac: front, heading: th_f },
        ]
    }

    /// Rows mapping `q̇` to the longitudinal and lateral center velocity.
    fn local_rows(link: &LinkKinematics) -> (RowDVector<f64>, RowDVector<f64>) {
        let (s, c) = link.heading.sin_cos();
        let long = link.jac.row(0) * c + link.jac.row(1) * s;
        let lat = link.jac.row(1) * c - link.jac.row(0) * s;
        (long, lat)
    }
}

impl Mechanics for DragCrawler {
    fn class(&self) -> ModelClass {
        ModelClass::DragDominated
    }

    fn dof(&self) -> usize {
        5
    }

    fn layout(&self) -> ParamLayout {
        let mut entries = Vec::with_capacity(8);
        for (i, name) in LINK_NAMES.iter().enumerate() {
            entries.push(ParamEntry::new(format!("long_{name}"), ParamRole::LongitudinalDrag, "N s/m", i));
            entries.push(ParamEntry::new(format!("lat_{name}"), ParamRole::LateralDrag, "N s/m", i));
        }
        entries.push(ParamEntry::new("joint1", ParamRole::JointDrag, "N m s/rad", 0));
        entries.push(ParamEntry::new("joint2", ParamRole::JointDrag, "N m s/rad", 1));
        ParamLayout { entries }
    }

    fn coordinate_names(&self) -> Vec<String> {
        vec!["x".into(), "y".into(), "heading".into(), "alpha1".into(), "alpha2".into()]
    }

    fn coordinate_units(&self) -> Vec<String> {
        vec!["m".into(), "m".into(), "rad".into(), "rad".into(), "rad".into()]
    }

    fn shape_coordinates(&self) -> Vec<usize> {
        vec![3, 4]
    }

    fn regressor(&self, q: &DVector<f64>, qd: &DVector<f64>, _qdd: &DVector<f64>) -> DMatrix<f64> {
        let (_, basis) = self.metric_basis(q);
        let mut y = DMatrix::zeros(5, basis.len());
        for (p, mp) in basis.iter().enumerate() {
            y.set_column(p, &(mp * qd));
        }
        y
    }

    fn metric_basis(&self, q: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let mut mp = Vec::with_capacity(8);
        for link in &self.links(q) {
            let (long, lat) = Self::local_rows(link);
            mp.push(long.transpose() * &long);
            mp.push(lat.transpose() * &lat);
        }
        for j in 0..2 {
            let mut m = DMatrix::zeros(5, 5);
            m[(3 + j, 3 + j)] = 1.0;
            mp.push(m);
        }
        (DMatrix::zeros(5, 5), mp)
    }

    fn metric(&self, q: &DVector<f64>, pi: &DVector<f64>) -> DMatrix<f64> {
        // Σ Jᵀ R C Rᵀ J over links plus joint drag.
        let mut m = DMatrix::zeros(5, 5);
        for (i, link) in self.links(q).iter().enumerate() {
            let (s, c) = link.heading.sin_cos();
            let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
            let coef = DMatrix::from_diagonal(&dv(&[pi[2 * i], pi[2 * i + 1]]));
            m += link.jac.transpose() * &r * coef * r.transpose() * &link.jac;
        }
        m[(3, 3)] += pi[6];
        m[(4, 4)] += pi[7];
        m
    }

    fn inverse_dynamics(&self, q: &DVector<f64>, qd: &DVector<f64>, _qdd: &DVector<f64>, pi: &DVector<f64>) -> DVector<f64> {
        self.metric(q, pi) * qd
    }

    fn parameter_blocks(&self) -> Vec<ConsistencyConstraint> {
        let layout = self.layout();
        layout
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| scalar_block(format!("drag coefficient {}", e.name), i, layout.len()))
            .collect()
    }

    fn reference_params(&self) -> DVector<f64> {
        dv(&[1.0, 5.0, 1.0, 5.0, 1.0, 5.0, 0.2, 0.2])
    }
}
