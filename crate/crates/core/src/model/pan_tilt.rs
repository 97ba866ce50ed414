use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float as _;

use super::{dv, scalar_block, ConsistencyConstraint, Mechanics, ModelClass, ParamEntry, ParamLayout, ParamRole, GRAVITY};

/// Point mass on a massless link of length `l`, carried by a pan (θ) and a
/// tilt (φ) joint. Position `x = l (cos φ cos θ, cos φ sin θ, sin φ)`, so
/// the metric is `m l² diag(cos² φ, 1)`.
///
/// Parameters: `[m l²]`, plus `[m l]` when gravity is enabled.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PanTilt {
    pub gravity: bool,
}

impl PanTilt {
    pub fn new(gravity: bool) -> Self {
        Self { gravity }
    }

    /// Ground-truth parameter vector for mass `m` at distance `l`.
    pub fn params_for(&self, mass: f64, length: f64) -> DVector<f64> {
        if self.gravity {
            dv(&[mass * length * length, mass * length])
        } else {
            dv(&[mass * length * length])
        }
    }
}

impl Mechanics for PanTilt {
    fn class(&self) -> ModelClass {
        ModelClass::InertiaDominated
    }

    fn dof(&self) -> usize {
        2
    }

    fn layout(&self) -> ParamLayout {
        let mut entries = vec![ParamEntry::new("point_inertia", ParamRole::PointInertia, "kg m^2", 0)];
        if self.gravity {
            entries.push(ParamEntry::new("gravity_moment", ParamRole::GravityMoment, "kg m", 0));
        }
        ParamLayout { entries }
    }

    fn coordinate_names(&self) -> Vec<String> {
        vec!["pan".into(), "tilt".into()]
    }

    fn coordinate_units(&self) -> Vec<String> {
        vec!["rad".into(), "rad".into()]
    }

    fn shape_coordinates(&self) -> Vec<usize> {
        vec![0, 1]
    }

    fn regressor(&self, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>) -> DMatrix<f64> {
        let phi = q[1];
        let (s, c) = phi.sin_cos();
        let d = self.layout().len();
        let mut y = DMatrix::zeros(2, d);
        y[(0, 0)] = c * c * qdd[0] - 2.0 * s * c * qd[0] * qd[1];
        y[(1, 0)] = qdd[1] + s * c * qd[0] * qd[0];
        if self.gravity {
            y[(1, 1)] = GRAVITY * c;
        }
        y
    }

    fn metric_basis(&self, q: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let c = q[1].cos();
        let mut mp = vec![DMatrix::from_diagonal(&dv(&[c * c, 1.0]))];
        if self.gravity {
            mp.push(DMatrix::zeros(2, 2));
        }
        (DMatrix::zeros(2, 2), mp)
    }

    fn metric(&self, q: &DVector<f64>, pi: &DVector<f64>) -> DMatrix<f64> {
        // Mass times JᵀJ of the point position.
        let (th, ph) = (q[0], q[1]);
        let (st, ct) = th.sin_cos();
        let (sp, cp) = ph.sin_cos();
        let j = DMatrix::from_row_slice(3, 2, &[-cp * st, -sp * ct, cp * ct, -sp * st, 0.0, cp]);
        j.transpose() * j * pi[0]
    }

    fn inverse_dynamics(&self, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>, pi: &DVector<f64>) -> DVector<f64> {
        let p = pi[0];
        let (s, c) = q[1].sin_cos();
        let (td, pd) = (qd[0], qd[1]);
        // d/dt(p cos²φ θ̇) and d/dt(p φ̇) − ∂T/∂φ.
        let tau_pan = p * (c * c * qdd[0] - (2.0 * q[1]).sin() * td * pd);
        let mut tau_tilt = p * (qdd[1] + s * c * td * td);
        if self.gravity {
            tau_tilt += pi[1] * GRAVITY * c;
        }
        dv(&[tau_pan, tau_tilt])
    }

    fn parameter_blocks(&self) -> Vec<ConsistencyConstraint> {
        let d = self.layout().len();
        let mut out = vec![scalar_block("point inertia".into(), 0, d)];
        if self.gravity {
            out.push(scalar_block("gravity moment".into(), 1, d));
        }
        out
    }

    fn reference_params(&self) -> DVector<f64> {
        self.params_for(1.0, 1.0)
    }
}
