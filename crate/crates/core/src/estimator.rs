//! Output-feedback state estimator in original coordinates with the
//! derivative-free dynamic filter.
//!
//! The estimator integrates x̂₁, x̂₂, and the auxiliary filter state η̄;
//! the filter output η is recovered algebraically at every evaluation,
//! never stored as an integrated state.

use nalgebra::DVector;

use crate::barrier::{barrier, rate_factor, BarrierError, BarrierLimits};
use crate::plant::PlantModel;

/// Estimator gains; β₁ > α is required by the estimation-error analysis
/// and is surfaced as a warning at config load, not enforced here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorGains {
    pub k: f64,
    pub alpha: f64,
    pub beta1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub xhat1: DVector<f64>,
    pub xhat2: DVector<f64>,
    pub eta_bar: DVector<f64>,
    /// b(x₁(0)) − b(x̂₁(0)), captured once at run start for the filter
    /// output map.
    pub s1_tilde0: DVector<f64>,
}

impl EstimatorState {
    /// Initializes the estimator at t = 0 with η̄(0) = 0 and the initial
    /// transform mismatch snapshot.
    pub fn new(
        x0: &DVector<f64>,
        xhat0: &DVector<f64>,
        lims: &BarrierLimits,
    ) -> Result<Self, BarrierError> {
        let n = x0.len() / 2;
        let lims1 = lims.slice(0..n);
        let x1_0 = x0.rows(0, n).into_owned();
        let xhat1_0 = xhat0.rows(0, n).into_owned();
        let s1_tilde0 = crate::barrier::vec_barrier(&x1_0, &lims1)?
            - crate::barrier::vec_barrier(&xhat1_0, &lims1)?;
        Ok(Self {
            xhat1: xhat1_0,
            xhat2: xhat0.rows(n, n).into_owned(),
            eta_bar: DVector::zeros(n),
            s1_tilde0,
        })
    }

    pub fn n(&self) -> usize {
        self.xhat1.len()
    }

    /// Full estimate [x̂₁; x̂₂].
    pub fn xhat(&self) -> DVector<f64> {
        let n = self.n();
        let mut x = DVector::zeros(2 * n);
        x.rows_mut(0, n).copy_from(&self.xhat1);
        x.rows_mut(n, n).copy_from(&self.xhat2);
        x
    }
}

/// Transform mismatch s̃₁ = b(x₁) − b(x̂₁) on the output block.
fn s1_mismatch(
    est: &EstimatorState,
    x1: &DVector<f64>,
    lims: &BarrierLimits,
) -> Result<DVector<f64>, BarrierError> {
    let n = est.n();
    let mut d = DVector::zeros(n);
    for j in 0..n {
        d[j] = barrier(x1[j], lims.pair(j))? - barrier(est.xhat1[j], lims.pair(j))?;
    }
    Ok(d)
}

/// Filter output η = η̄ − (k+α)(b(x₁) − b(x̂₁) − b(x₁(0)) + b(x̂₁(0))).
pub fn eta(
    est: &EstimatorState,
    x1: &DVector<f64>,
    lims: &BarrierLimits,
    gains: EstimatorGains,
) -> Result<DVector<f64>, BarrierError> {
    let s1_tilde = s1_mismatch(est, x1, lims)?;
    Ok(&est.eta_bar - (s1_tilde - &est.s1_tilde0) * (gains.k + gains.alpha))
}

/// Estimator feedback ν₁ⱼ = [α²(b(x₁ⱼ)−b(x̂₁ⱼ)) − (k+α+β₁)ηⱼ] / B₁ⱼ(b(x̂₁ⱼ)).
pub fn nu1(
    est: &EstimatorState,
    x1: &DVector<f64>,
    lims: &BarrierLimits,
    gains: EstimatorGains,
) -> Result<DVector<f64>, BarrierError> {
    let n = est.n();
    let s1_tilde = s1_mismatch(est, x1, lims)?;
    let eta = eta(est, x1, lims, gains)?;
    let mut out = DVector::zeros(n);
    for j in 0..n {
        let shat1 = barrier(est.xhat1[j], lims.pair(j))?;
        let b1 = rate_factor(shat1, lims.pair(j));
        out[j] = (gains.alpha * gains.alpha * s1_tilde[j]
            - (gains.k + gains.alpha + gains.beta1) * eta[j])
            / b1;
    }
    Ok(out)
}

/// Derivatives (dx̂₁, dx̂₂, dη̄) of the estimator driven by the measured
/// output x₁ and the applied control u. Pure; no state is mutated.
pub fn estimator_derivatives(
    est: &EstimatorState,
    x1: &DVector<f64>,
    u: &DVector<f64>,
    plant: &PlantModel,
    gains: EstimatorGains,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>), BarrierError> {
    let lims = &plant.limits;
    let s1_tilde = s1_mismatch(est, x1, lims)?;
    let eta = eta(est, x1, lims, gains)?;
    let nu1 = nu1(est, x1, lims, gains)?;

    let xhat = est.xhat();
    let dxhat1 = est.xhat2.clone();
    let dxhat2 = plant.drift(&xhat) + plant.effectiveness(&xhat) * u + nu1;
    let deta_bar = -eta * (gains.k + gains.beta1) - s1_tilde * (gains.k * gains.alpha);
    Ok((dxhat1, dxhat2, deta_bar))
}

/// ŝ = b(x̂); errors here signal that the estimate escaped the box.
pub fn transformed_estimate(
    est: &EstimatorState,
    lims: &BarrierLimits,
) -> Result<DVector<f64>, BarrierError> {
    crate::barrier::vec_barrier(&est.xhat(), lims)
}
