//! Actor-critic learner: value/policy approximation over a shared basis,
//! Bellman-error extrapolation across a fixed virtual-excitation grid,
//! and the critic/gain/actor update laws.

use nalgebra::{DMatrix, DVector};

use crate::basis::QuadraticBasis;
use crate::plant::{transformed_dynamics, GridSpec, PlantModel};

/// Learner adaptation gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerGains {
    pub kc: f64,
    pub ka1: f64,
    pub ka2: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub wc: DVector<f64>,
    pub gamma: DMatrix<f64>,
    pub wa: DVector<f64>,
}

/// Fixed extrapolation points in transformed coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtrapolationGrid {
    points: Vec<DVector<f64>>,
}

impl ExtrapolationGrid {
    pub fn new(points: Vec<DVector<f64>>) -> Self {
        assert!(!points.is_empty(), "grid must have at least one point");
        Self { points }
    }

    /// Uniform lattice over the axis-aligned box [-w, w]^dim with
    /// `points_per_axis` samples per axis (endpoints included).
    pub fn uniform(spec: GridSpec, dim: usize) -> Self {
        let p = spec.points_per_axis;
        assert!(p >= 2, "need at least two points per axis");
        let w = spec.half_width;
        let coords: Vec<f64> = (0..p)
            .map(|i| -w + 2.0 * w * i as f64 / (p - 1) as f64)
            .collect();
        let total = p.pow(dim as u32);
        let mut points = Vec::with_capacity(total);
        for idx in 0..total {
            let mut rem = idx;
            let mut z = DVector::zeros(dim);
            for d in 0..dim {
                z[d] = coords[rem % p];
                rem /= p;
            }
            points.push(z);
        }
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }
}

/// û(ŝ, Ŵ_a) = −½R⁻¹Gᵀ(ŝ)∇_{ŝ₂}σᵀ(ŝ)Ŵ_a; linear in the actor weights.
pub fn policy(
    s: &DVector<f64>,
    wa: &DVector<f64>,
    plant: &PlantModel,
    basis: &QuadraticBasis,
    r: &DMatrix<f64>,
) -> DVector<f64> {
    let (_, _, g) = transformed_dynamics(s, plant);
    policy_with_effectiveness(s, wa, &g, basis, r)
}

/// Same as [`policy`] but reusing an already-computed G(ŝ).
pub fn policy_with_effectiveness(
    s: &DVector<f64>,
    wa: &DVector<f64>,
    g: &DMatrix<f64>,
    basis: &QuadraticBasis,
    r: &DMatrix<f64>,
) -> DVector<f64> {
    let grad2 = basis.jacobian_s2(s); // L x n
    let r_inv = r.clone().try_inverse().expect("R must be PD");
    -0.5 * r_inv * g.transpose() * grad2.transpose() * wa
}

/// V̂(ŝ, Ŵ_c) = Ŵ_cᵀσ(ŝ).
pub fn value(s: &DVector<f64>, wc: &DVector<f64>, basis: &QuadraticBasis) -> f64 {
    wc.dot(&basis.eval(s))
}

/// Quadratic state penalty Q′(s) = sᵀQs.
pub fn state_penalty(s: &DVector<f64>, q: &DMatrix<f64>) -> f64 {
    (q * s).dot(s)
}

/// Bellman error at one extrapolation point.
///
/// Returns the residual δ̂ = ωᵀŴ_c + Q′(z) + ûᵀRû and the regressor
/// ω = ∇_{z₁}σ·H + ∇_{z₂}σ·(F + G·û).
pub fn bellman_error(
    z: &DVector<f64>,
    wc: &DVector<f64>,
    wa: &DVector<f64>,
    plant: &PlantModel,
    basis: &QuadraticBasis,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> (f64, DVector<f64>) {
    let n = plant.n;
    let (h, f, g) = transformed_dynamics(z, plant);
    let u = policy_with_effectiveness(z, wa, &g, basis, r);
    let jac = basis.jacobian(z);
    let grad1 = jac.columns(0, n);
    let grad2 = jac.columns(n, n);
    let omega = grad1 * &h + grad2 * (&f + &g * &u);
    let delta = omega.dot(wc) + state_penalty(z, q) + (r * &u).dot(&u);
    (delta, omega)
}

/// Derivatives (dŴ_c, dΓ, dŴ_a) of the update laws, accumulated over the
/// grid in fixed order so runs are bit-reproducible.
pub fn learner_derivatives(
    state: &LearnerState,
    grid: &ExtrapolationGrid,
    plant: &PlantModel,
    basis: &QuadraticBasis,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    gains: LearnerGains,
) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let l = basis.len();
    let n_points = grid.len() as f64;
    let r_inv = r.clone().try_inverse().expect("R must be PD");

    let mut sum_critic = DVector::zeros(l);
    let mut sum_gain = DMatrix::zeros(l, l);
    let mut sum_actor = DVector::zeros(l);
    for z in grid.points() {
        let (delta, omega) = bellman_error(z, &state.wc, &state.wa, plant, basis, q, r);
        let rho = 1.0 + gains.gamma * omega.dot(&omega);
        sum_critic += &omega * (delta / rho);
        sum_gain += &omega * omega.transpose() / (rho * rho);

        let grad2 = basis.jacobian_s2(z);
        let (_, _, g) = transformed_dynamics(z, plant);
        let g_sigma = &grad2 * &g * &r_inv * g.transpose() * grad2.transpose();
        sum_actor += g_sigma.transpose() * &state.wa * (omega.dot(&state.wc) / rho);
    }

    let dwc = -(gains.kc / n_points) * &state.gamma * sum_critic;
    let dgamma =
        &state.gamma * gains.beta - (gains.kc / n_points) * &state.gamma * sum_gain * &state.gamma;
    let dwa = -(&state.wa - &state.wc) * gains.ka1 + sum_actor * (gains.kc / (4.0 * n_points))
        - &state.wa * gains.ka2;
    (dwc, dgamma, dwa)
}

/// Grid quantities that do not depend on the weights: since the
/// extrapolation points are fixed, H, F, G, Q′ and the basis Jacobians are
/// constants of the run. With them precomputed, each Bellman-error
/// evaluation reduces to a few small mat-vec products:
/// u = −½R⁻¹Pᵀw_a, ω = ω₀ + Pu, δ = ωᵀw_c + Q′ + uᵀRu,
/// where ω₀ = ∇₁σ·H + ∇₂σ·F and P = ∇₂σ·G.
pub struct PrecomputedGrid {
    q_prime: Vec<f64>,
    omega0: Vec<DVector<f64>>,
    p: Vec<DMatrix<f64>>,
    /// −½R⁻¹Pᵀ per point, so u = b·w_a in one gemv.
    b: Vec<DMatrix<f64>>,
    g_sigma: Vec<DMatrix<f64>>,
    r: DMatrix<f64>,
    l: usize,
    m: usize,
}

impl PrecomputedGrid {
    pub fn new(
        grid: &ExtrapolationGrid,
        plant: &PlantModel,
        basis: &QuadraticBasis,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
    ) -> Self {
        let n = plant.n;
        let r_inv = r.clone().try_inverse().expect("R must be PD");
        let mut q_prime = Vec::with_capacity(grid.len());
        let mut omega0 = Vec::with_capacity(grid.len());
        let mut p = Vec::with_capacity(grid.len());
        let mut b = Vec::with_capacity(grid.len());
        let mut g_sigma = Vec::with_capacity(grid.len());
        for z in grid.points() {
            let (h, f, g) = transformed_dynamics(z, plant);
            let jac = basis.jacobian(z);
            let grad1 = jac.columns(0, n);
            let grad2 = jac.columns(n, n);
            let pk = grad2 * &g;
            q_prime.push(state_penalty(z, q));
            omega0.push(grad1 * &h + grad2 * &f);
            b.push(-0.5 * &r_inv * pk.transpose());
            g_sigma.push(&pk * &r_inv * pk.transpose());
            p.push(pk);
        }
        Self {
            q_prime,
            omega0,
            p,
            b,
            g_sigma,
            r: r.clone(),
            l: basis.len(),
            m: plant.m,
        }
    }

    pub fn len(&self) -> usize {
        self.q_prime.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_prime.is_empty()
    }

    /// u = −½R⁻¹Pᵀw_a and ω = ω₀ + Pu, written into the provided buffers.
    fn fill_point(&self, k: usize, wa: &DVector<f64>, u: &mut DVector<f64>, omega: &mut DVector<f64>) {
        u.gemv(1.0, &self.b[k], wa, 0.0);
        omega.copy_from(&self.omega0[k]);
        omega.gemv(1.0, &self.p[k], u, 1.0);
    }

    fn control_penalty(&self, u: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.m {
            for j in 0..self.m {
                acc += u[i] * self.r[(i, j)] * u[j];
            }
        }
        acc
    }

    /// Bellman error and regressor at grid point `k`.
    pub fn bellman_error(
        &self,
        k: usize,
        wc: &DVector<f64>,
        wa: &DVector<f64>,
    ) -> (f64, DVector<f64>) {
        let mut u = DVector::zeros(self.m);
        let mut omega = DVector::zeros(self.l);
        self.fill_point(k, wa, &mut u, &mut omega);
        let delta = omega.dot(wc) + self.q_prime[k] + self.control_penalty(&u);
        (delta, omega)
    }

    /// Same update laws as [`learner_derivatives`], via the fast path.
    pub fn learner_derivatives(
        &self,
        state: &LearnerState,
        gains: LearnerGains,
    ) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
        let l = self.l;
        let n_points = self.len() as f64;
        let mut sum_critic = DVector::zeros(l);
        let mut sum_gain = DMatrix::zeros(l, l);
        let mut sum_actor = DVector::zeros(l);
        let mut u = DVector::zeros(self.m);
        let mut omega = DVector::zeros(l);
        for k in 0..self.len() {
            self.fill_point(k, &state.wa, &mut u, &mut omega);
            let delta = omega.dot(&state.wc) + self.q_prime[k] + self.control_penalty(&u);
            let rho = 1.0 + gains.gamma * omega.dot(&omega);
            sum_critic.axpy(delta / rho, &omega, 1.0);
            sum_gain.ger(1.0 / (rho * rho), &omega, &omega, 1.0);
            // Gσ is symmetric, so Gσᵀw_a = Gσ·w_a
            sum_actor.gemv(omega.dot(&state.wc) / rho, &self.g_sigma[k], &state.wa, 1.0);
        }
        let dwc = -(gains.kc / n_points) * &state.gamma * sum_critic;
        let dgamma = &state.gamma * gains.beta
            - (gains.kc / n_points) * &state.gamma * sum_gain * &state.gamma;
        let dwa = -(&state.wa - &state.wc) * gains.ka1
            + sum_actor * (gains.kc / (4.0 * n_points))
            - &state.wa * gains.ka2;
        (dwc, dgamma, dwa)
    }

    /// Same excitation metric as [`pe_metric`], via the fast path.
    pub fn pe_metric(&self, wa: &DVector<f64>, gamma_gain: f64) -> f64 {
        let mut acc = DMatrix::zeros(self.l, self.l);
        let mut u = DVector::zeros(self.m);
        let mut omega = DVector::zeros(self.l);
        for k in 0..self.len() {
            self.fill_point(k, wa, &mut u, &mut omega);
            let rho = 1.0 + gamma_gain * omega.dot(&omega);
            acc.ger(1.0 / (rho * rho), &omega, &omega, 1.0);
        }
        acc /= self.len() as f64;
        acc.symmetric_eigen().eigenvalues.min()
    }
}

/// λ_min((1/N)Σ ω_kω_kᵀ/ρ_k²): the online-verifiable excitation measure.
pub fn pe_metric(
    grid: &ExtrapolationGrid,
    wa: &DVector<f64>,
    plant: &PlantModel,
    basis: &QuadraticBasis,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    gamma_gain: f64,
) -> f64 {
    let l = basis.len();
    let wc_dummy = DVector::zeros(l);
    let mut acc = DMatrix::zeros(l, l);
    for z in grid.points() {
        let (_, omega) = bellman_error(z, &wc_dummy, wa, plant, basis, q, r);
        let rho = 1.0 + gamma_gain * omega.dot(&omega);
        acc += &omega * omega.transpose() / (rho * rho);
    }
    acc /= grid.len() as f64;
    acc.symmetric_eigen().eigenvalues.min()
}
