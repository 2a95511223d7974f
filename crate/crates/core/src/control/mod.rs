//! Proposal control policies and their synthesis.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

mod ilqr;
mod lqr;
mod path_integral;

pub use ilqr::{ilqr_design, discretized_cost, IlqrConfig, IlqrOutput, NominalTrajectory};
pub use lqr::{lqr_design, lqr_design_for, solve_affine_lq, AffineLqProblem};
pub use path_integral::{path_integral_control_estimate, PathIntegralEstimate};

/// Which controller produced a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    Zero,
    Lqr,
    Ilqr,
    /// Hand-built affine law.
    Custom,
}

/// Time-varying affine feedback `u_j = k_j + G_j x` on a block of grid steps.
///
/// Queries past the last stored step hold the final law.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePolicy<T: Real> {
    kind: PolicyKind,
    start: usize,
    gains: Vec<DMatrix<T>>,
    offsets: Vec<DVector<T>>,
}

impl<T: Real> AffinePolicy<T> {
    pub fn new(kind: PolicyKind, start: usize, gains: Vec<DMatrix<T>>, offsets: Vec<DVector<T>>) -> Self {
        assert_eq!(gains.len(), offsets.len(), "one gain per offset");
        assert!(!gains.is_empty(), "affine policy needs at least one step");
        Self {
            kind,
            start,
            gains,
            offsets,
        }
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn steps(&self) -> usize {
        self.gains.len()
    }

    fn slot(&self, step: usize) -> usize {
        step.saturating_sub(self.start).min(self.gains.len() - 1)
    }

    /// Feedback gain `G_j` (`m × n`).
    pub fn gain(&self, step: usize) -> &DMatrix<T> {
        &self.gains[self.slot(step)]
    }

    /// Feedforward term `k_j`.
    pub fn offset(&self, step: usize) -> &DVector<T> {
        &self.offsets[self.slot(step)]
    }
}

/// A state-feedback proposal control.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy<T: Real> {
    Zero { control_dim: usize },
    Affine(AffinePolicy<T>),
}

impl<T: Real> Policy<T> {
    pub fn zero(control_dim: usize) -> Self {
        Policy::Zero { control_dim }
    }

    /// The same affine law `u = offset + gain·x` on every step of a block.
    pub fn constant_affine(start: usize, steps: usize, gain: DMatrix<T>, offset: DVector<T>) -> Self {
        Policy::Affine(AffinePolicy::new(
            PolicyKind::Custom,
            start,
            vec![gain; steps.max(1)],
            vec![offset; steps.max(1)],
        ))
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Zero { .. } => PolicyKind::Zero,
            Policy::Affine(p) => p.kind,
        }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            Policy::Zero { control_dim } => *control_dim,
            Policy::Affine(p) => p.offsets[0].len(),
        }
    }

    /// Writes `u(t_step, x)` into `out`.
    #[inline]
    pub fn control_into(&self, step: usize, x: &DVector<T>, out: &mut DVector<T>) {
        match self {
            Policy::Zero { .. } => out.fill(T::zero()),
            Policy::Affine(p) => {
                let i = p.slot(step);
                out.copy_from(&p.offsets[i]);
                out.gemv(T::one(), &p.gains[i], x, T::one());
            }
        }
    }

    pub fn control(&self, step: usize, x: &DVector<T>) -> DVector<T> {
        let mut out = DVector::zeros(self.control_dim());
        self.control_into(step, x, &mut out);
        out
    }

    pub fn as_affine(&self) -> Option<&AffinePolicy<T>> {
        match self {
            Policy::Affine(p) => Some(p),
            Policy::Zero { .. } => None,
        }
    }
}

/// Quadratic value ansatz `V_j(x) = ½xᵀP_j x + s_jᵀx (+ c_j)` on the grid
/// points of a window. `P` and `s` vanish at the window end.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineValueFunction<T: Real> {
    start: usize,
    p: Vec<DMatrix<T>>,
    s: Vec<DVector<T>>,
}

impl<T: Real> AffineValueFunction<T> {
    pub(crate) fn new(start: usize, p: Vec<DMatrix<T>>, s: Vec<DVector<T>>) -> Self {
        debug_assert_eq!(p.len(), s.len());
        Self { start, p, s }
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.start + self.p.len() - 1
    }

    pub fn p(&self, j: usize) -> &DMatrix<T> {
        &self.p[j - self.start]
    }

    pub fn s(&self, j: usize) -> &DVector<T> {
        &self.s[j - self.start]
    }

    /// `∇V_j(x) = P_j x + s_j`
    pub fn gradient(&self, j: usize, x: &DVector<T>) -> DVector<T> {
        self.p(j) * x + self.s(j)
    }

    /// `½xᵀP_j x + s_jᵀx`, i.e. the value without its constant term.
    pub fn value(&self, j: usize, x: &DVector<T>) -> T {
        let half = T::one() / (T::one() + T::one());
        half * x.dot(&(self.p(j) * x)) + self.s(j).dot(x)
    }
}
