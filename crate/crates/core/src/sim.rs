//! Fixed-step closed-loop integration of the coupled plant + estimator +
//! learner system, cost accumulation, divergence detection, and the
//! trajectory-equivalence check drivers.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::barrier::{rate_factor, vec_barrier, BarrierError};
use crate::estimator::{
    estimator_derivatives, eta, transformed_estimate, EstimatorGains, EstimatorState,
};
use crate::learner::{
    policy_with_effectiveness, ExtrapolationGrid, LearnerGains, LearnerState, PrecomputedGrid,
};
use crate::plant::{transformed_dynamics, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceReason {
    /// x or x̂ left the constraint box.
    BarrierExit,
    /// A NaN or infinity appeared in the augmented state.
    NonFinite,
    /// ‖Ŵ_a‖∞ or ‖Ŵ_c‖∞ exceeded the configured cap.
    WeightCap,
}

impl std::fmt::Display for DivergenceReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DivergenceReason::BarrierExit => write!(f, "barrier exit"),
            DivergenceReason::NonFinite => write!(f, "non-finite value"),
            DivergenceReason::WeightCap => write!(f, "weight cap exceeded"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    HorizonReached,
    Diverged(DivergenceReason),
}

impl RunStatus {
    pub fn is_diverged(&self) -> bool {
        matches!(self, RunStatus::Diverged(_))
    }
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunStatus::Converged => write!(f, "converged"),
            RunStatus::HorizonReached => write!(f, "horizon reached"),
            RunStatus::Diverged(r) => write!(f, "diverged ({r})"),
        }
    }
}

/// A rejected integration step; consumed by the run loop as divergence.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("barrier domain violated: {0}")]
    Barrier(#[from] BarrierError),
    #[error("non-finite value produced during step")]
    NonFinite,
}

impl StepError {
    pub fn reason(&self) -> DivergenceReason {
        match self {
            StepError::Barrier(_) => DivergenceReason::BarrierExit,
            StepError::NonFinite => DivergenceReason::NonFinite,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_final: f64,
    /// Log every `log_decimation`-th step.
    pub log_decimation: usize,
    /// Divergence cap on ‖Ŵ‖∞.
    pub weight_cap: f64,
    /// Extra margin to the box limits beyond the barrier's own guard.
    pub barrier_margin: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 10.0,
            log_decimation: 10,
            weight_cap: 1e6,
            barrier_margin: 1e-9,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0) {
            return Err("sim.dt must be positive".into());
        }
        if !(self.t_final > 0.0) {
            return Err("sim.t_final must be positive".into());
        }
        if self.log_decimation == 0 {
            return Err("sim.log_decimation must be at least 1".into());
        }
        if !(self.barrier_margin > 0.0) {
            return Err("sim.barrier_margin must be positive".into());
        }
        Ok(())
    }
}

/// One logged sample of the closed-loop trajectory.
#[derive(Debug, Clone)]
pub struct SimRow {
    pub t: f64,
    pub x: DVector<f64>,
    pub xhat: DVector<f64>,
    pub s: DVector<f64>,
    pub shat: DVector<f64>,
    pub u: DVector<f64>,
    pub wc: DVector<f64>,
    pub wa: DVector<f64>,
    pub gamma_min_eig: f64,
    pub gamma_max_eig: f64,
    pub pe_metric: f64,
    pub cost: f64,
    pub v_se: f64,
}

#[derive(Debug, Clone)]
pub struct SimLog {
    pub rows: Vec<SimRow>,
    pub status: RunStatus,
    pub final_cost: f64,
    pub final_time: f64,
}

impl SimLog {
    pub fn last(&self) -> &SimRow {
        self.rows.last().expect("log always has the initial row")
    }
}

/// Classical 4th-order Runge–Kutta step over a flat state vector. The
/// derivative field may reject a stage (barrier exit); non-finite stage
/// values are also rejected.
pub fn rk4_step<F>(deriv: F, y: &DVector<f64>, dt: f64) -> Result<DVector<f64>, StepError>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, StepError>,
{
    let k1 = deriv(y)?;
    let k2 = deriv(&(y + &k1 * (dt / 2.0)))?;
    let k3 = deriv(&(y + &k2 * (dt / 2.0)))?;
    let k4 = deriv(&(y + &k3 * dt))?;
    let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(StepError::NonFinite);
    }
    Ok(next)
}

/// Offsets into the flat augmented state
/// (x, x̂₁, x̂₂, η̄, Ŵ_c, Γ, Ŵ_a, J).
#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
    l: usize,
}

impl Layout {
    fn total(&self) -> usize {
        5 * self.n + 2 * self.l + self.l * self.l + 1
    }
    fn x(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(0, 2 * self.n).into_owned()
    }
    fn estimator(&self, y: &DVector<f64>, s1_tilde0: &DVector<f64>) -> EstimatorState {
        let n = self.n;
        EstimatorState {
            xhat1: y.rows(2 * n, n).into_owned(),
            xhat2: y.rows(3 * n, n).into_owned(),
            eta_bar: y.rows(4 * n, n).into_owned(),
            s1_tilde0: s1_tilde0.clone(),
        }
    }
    fn learner(&self, y: &DVector<f64>) -> LearnerState {
        let (n, l) = (self.n, self.l);
        LearnerState {
            wc: y.rows(5 * n, l).into_owned(),
            gamma: DMatrix::from_column_slice(l, l, y.rows(5 * n + l, l * l).as_slice()),
            wa: y.rows(5 * n + l + l * l, l).into_owned(),
        }
    }
    fn cost(&self, y: &DVector<f64>) -> f64 {
        y[self.total() - 1]
    }
    fn pack(
        &self,
        x: &DVector<f64>,
        est: &EstimatorState,
        lrn: &LearnerState,
        cost: f64,
    ) -> DVector<f64> {
        let (n, l) = (self.n, self.l);
        let mut y = DVector::zeros(self.total());
        y.rows_mut(0, 2 * n).copy_from(x);
        y.rows_mut(2 * n, n).copy_from(&est.xhat1);
        y.rows_mut(3 * n, n).copy_from(&est.xhat2);
        y.rows_mut(4 * n, n).copy_from(&est.eta_bar);
        y.rows_mut(5 * n, l).copy_from(&lrn.wc);
        y.rows_mut(5 * n + l, l * l)
            .copy_from_slice(lrn.gamma.as_slice());
        y.rows_mut(5 * n + l + l * l, l).copy_from(&lrn.wa);
        y[self.total() - 1] = cost;
        y
    }
    fn symmetrize_gamma(&self, y: &mut DVector<f64>) {
        let (n, l) = (self.n, self.l);
        let off = 5 * n + l;
        for i in 0..l {
            for j in (i + 1)..l {
                let a = y[off + j * l + i];
                let b = y[off + i * l + j];
                let m = 0.5 * (a + b);
                y[off + j * l + i] = m;
                y[off + i * l + j] = m;
            }
        }
    }
}

enum LearnerMode {
    Adaptive,
    Frozen,
}

/// Computes the control input from estimator output and actor weights.
/// Only the measured output x₁ ever reaches this path; x₂ is untouchable
/// by construction of the argument list.
pub fn output_feedback_control(
    est: &EstimatorState,
    wa: &DVector<f64>,
    scenario: &Scenario,
) -> Result<DVector<f64>, BarrierError> {
    let shat = transformed_estimate(est, &scenario.plant.limits)?;
    let (_, _, g) = transformed_dynamics(&shat, &scenario.plant);
    Ok(policy_with_effectiveness(
        &shat,
        wa,
        &g,
        &scenario.basis,
        &scenario.r,
    ))
}

struct Runner<'a> {
    scenario: &'a Scenario,
    cfg: SimConfig,
    pre: PrecomputedGrid,
    layout: Layout,
    s1_tilde0: DVector<f64>,
    est_gains: EstimatorGains,
    lrn_gains: LearnerGains,
    mode: LearnerMode,
}

impl<'a> Runner<'a> {
    fn new(scenario: &'a Scenario, cfg: SimConfig, mode: LearnerMode) -> Result<Self, StepError> {
        let n = scenario.plant.n;
        let l = scenario.basis.len();
        let est0 = EstimatorState::new(&scenario.x0, &scenario.xhat0, &scenario.plant.limits)?;
        let grid = ExtrapolationGrid::uniform(scenario.grid, 2 * n);
        Ok(Self {
            scenario,
            cfg,
            pre: PrecomputedGrid::new(&grid, &scenario.plant, &scenario.basis, &scenario.q, &scenario.r),
            layout: Layout { n, l },
            s1_tilde0: est0.s1_tilde0,
            est_gains: scenario.gains.estimator(),
            lrn_gains: scenario.gains.learner(),
            mode,
        })
    }

    fn initial_state(&self, wa_override: Option<&DVector<f64>>) -> DVector<f64> {
        let sc = self.scenario;
        let est = EstimatorState {
            xhat1: sc.xhat0.rows(0, self.layout.n).into_owned(),
            xhat2: sc.xhat0.rows(self.layout.n, self.layout.n).into_owned(),
            eta_bar: DVector::zeros(self.layout.n),
            s1_tilde0: self.s1_tilde0.clone(),
        };
        let lrn = LearnerState {
            wc: wa_override.cloned().unwrap_or_else(|| sc.wc0.clone()),
            gamma: sc.gamma0.clone(),
            wa: wa_override.cloned().unwrap_or_else(|| sc.wa0.clone()),
        };
        self.layout.pack(&sc.x0, &est, &lrn, 0.0)
    }

    fn derivative(&self, y: &DVector<f64>) -> Result<DVector<f64>, StepError> {
        let sc = self.scenario;
        let lo = self.layout;
        let n = lo.n;
        let x = lo.x(y);
        let est = lo.estimator(y, &self.s1_tilde0);
        let lrn = lo.learner(y);

        let x1 = x.rows(0, n).into_owned();
        let u = output_feedback_control(&est, &lrn.wa, sc)?;

        // plant, in original coordinates
        let dx = sc.plant.state_derivative(&x, &u);

        // estimator, driven by the measured output only
        let (dxh1, dxh2, deta_bar) =
            estimator_derivatives(&est, &x1, &u, &sc.plant, self.est_gains)?;
        let dest = EstimatorState {
            xhat1: dxh1,
            xhat2: dxh2,
            eta_bar: deta_bar,
            s1_tilde0: DVector::zeros(n),
        };

        // learner, over the fixed extrapolation grid
        let dlrn = match self.mode {
            LearnerMode::Adaptive => {
                let (dwc, dgamma, dwa) = self.pre.learner_derivatives(&lrn, self.lrn_gains);
                LearnerState {
                    wc: dwc,
                    gamma: dgamma,
                    wa: dwa,
                }
            }
            LearnerMode::Frozen => LearnerState {
                wc: DVector::zeros(lo.l),
                gamma: DMatrix::zeros(lo.l, lo.l),
                wa: DVector::zeros(lo.l),
            },
        };

        // running cost in transformed coordinates
        let s = vec_barrier(&x, &sc.plant.limits)?;
        let dcost = crate::learner::state_penalty(&s, &sc.q) + (&sc.r * &u).dot(&u);

        Ok(lo.pack(&dx, &dest, &dlrn, dcost))
    }

    fn check_caps(&self, y: &DVector<f64>) -> Option<DivergenceReason> {
        let lo = self.layout;
        let lrn = lo.learner(y);
        if lrn.wa.amax() > self.cfg.weight_cap || lrn.wc.amax() > self.cfg.weight_cap {
            return Some(DivergenceReason::WeightCap);
        }
        let x = lo.x(y);
        let est = lo.estimator(y, &self.s1_tilde0);
        let xhat = est.xhat();
        for i in 0..2 * lo.n {
            let p = self.scenario.plant.limits.pair(i);
            for v in [x[i], xhat[i]] {
                if v <= p.lower + self.cfg.barrier_margin || v >= p.upper - self.cfg.barrier_margin
                {
                    return Some(DivergenceReason::BarrierExit);
                }
            }
        }
        None
    }

    fn log_row(&self, t: f64, y: &DVector<f64>) -> Result<SimRow, StepError> {
        let sc = self.scenario;
        let lo = self.layout;
        let x = lo.x(y);
        let est = lo.estimator(y, &self.s1_tilde0);
        let lrn = lo.learner(y);
        let s = vec_barrier(&x, &sc.plant.limits)?;
        let shat = transformed_estimate(&est, &sc.plant.limits)?;
        let u = output_feedback_control(&est, &lrn.wa, sc)?;
        let eig = lrn.gamma.clone().symmetric_eigen().eigenvalues;
        let pe = self.pre.pe_metric(&lrn.wa, self.lrn_gains.gamma);
        let v_se = estimation_lyapunov(&s, &shat, &est, &x.rows(0, lo.n).into_owned(), sc, self.est_gains)?;
        Ok(SimRow {
            t,
            xhat: est.xhat(),
            x,
            s,
            shat,
            u,
            wc: lrn.wc,
            wa: lrn.wa,
            gamma_min_eig: eig.min(),
            gamma_max_eig: eig.max(),
            pe_metric: pe,
            cost: lo.cost(y),
            v_se,
        })
    }

    fn run(&self) -> SimLog {
        self.run_from(self.initial_state(None))
    }

    fn run_from(&self, mut y: DVector<f64>) -> SimLog {
        let steps = (self.cfg.t_final / self.cfg.dt).round() as usize;
        let mut rows = Vec::with_capacity(steps / self.cfg.log_decimation + 2);
        let mut status = RunStatus::HorizonReached;
        let mut t = 0.0;

        match self.log_row(t, &y) {
            Ok(row) => rows.push(row),
            Err(e) => {
                return SimLog {
                    rows,
                    status: RunStatus::Diverged(e.reason()),
                    final_cost: 0.0,
                    final_time: 0.0,
                }
            }
        }

        for step in 0..steps {
            match rk4_step(|v| self.derivative(v), &y, self.cfg.dt) {
                Ok(next) => {
                    y = next;
                    self.layout.symmetrize_gamma(&mut y);
                }
                Err(e) => {
                    status = RunStatus::Diverged(e.reason());
                    break;
                }
            }
            t = (step + 1) as f64 * self.cfg.dt;
            if let Some(reason) = self.check_caps(&y) {
                status = RunStatus::Diverged(reason);
                break;
            }
            if (step + 1) % self.cfg.log_decimation == 0 || step + 1 == steps {
                match self.log_row(t, &y) {
                    Ok(row) => rows.push(row),
                    Err(e) => {
                        status = RunStatus::Diverged(e.reason());
                        break;
                    }
                }
            }
        }

        if !status.is_diverged() {
            let last = rows.last().expect("at least the initial row");
            let tail_rate = crate::learner::state_penalty(&last.s, &self.scenario.q)
                + (&self.scenario.r * &last.u).dot(&last.u);
            if last.s.norm() < 1e-3 && tail_rate < 1e-3 {
                status = RunStatus::Converged;
            }
        }
        let final_cost = self.layout.cost(&y);
        SimLog {
            rows,
            status,
            final_cost,
            final_time: t,
        }
    }
}

/// V_se = (α²/2)‖s̃₁‖² + ½‖r‖² + ½‖η‖² with r built from the analytic
/// ṡ̃₁ = H(s) − H(ŝ); a simulation-only diagnostic needing ground truth.
pub fn estimation_lyapunov(
    s: &DVector<f64>,
    shat: &DVector<f64>,
    est: &EstimatorState,
    x1: &DVector<f64>,
    scenario: &Scenario,
    gains: EstimatorGains,
) -> Result<f64, StepError> {
    let n = scenario.plant.n;
    let s1_tilde = s.rows(0, n) - shat.rows(0, n);
    let eta = eta(est, x1, &scenario.plant.limits, gains)?;
    let (h_true, _, _) = transformed_dynamics(s, &scenario.plant);
    let (h_hat, _, _) = transformed_dynamics(shat, &scenario.plant);
    let r = (h_true - h_hat) + &s1_tilde * gains.alpha + &eta;
    Ok(0.5 * gains.alpha * gains.alpha * s1_tilde.norm_squared()
        + 0.5 * r.norm_squared()
        + 0.5 * eta.norm_squared())
}

/// Integrates the full output-feedback closed loop from the scenario's
/// initial conditions.
pub fn run_closed_loop(scenario: &Scenario, cfg: &SimConfig) -> SimLog {
    match Runner::new(scenario, *cfg, LearnerMode::Adaptive) {
        Ok(r) => r.run(),
        Err(e) => SimLog {
            rows: vec![],
            status: RunStatus::Diverged(e.reason()),
            final_cost: 0.0,
            final_time: 0.0,
        },
    }
}

/// Frozen-weight policy evaluation: Ŵ_a ≡ w_fixed, learner dynamics off,
/// estimator still running.
pub fn evaluation_rollout(scenario: &Scenario, w_fixed: &DVector<f64>, cfg: &SimConfig) -> SimLog {
    match Runner::new(scenario, *cfg, LearnerMode::Frozen) {
        Ok(r) => {
            let y0 = r.initial_state(Some(w_fixed));
            r.run_from(y0)
        }
        Err(e) => SimLog {
            rows: vec![],
            status: RunStatus::Diverged(e.reason()),
            final_cost: 0.0,
            final_time: 0.0,
        },
    }
}

/// Extracts the V_se diagnostic series (t, V_se) from a run log.
pub fn vse_trace(log: &SimLog) -> Vec<(f64, f64)> {
    log.rows.iter().map(|r| (r.t, r.v_se)).collect()
}

/// Dual-integration check of the trajectory-equivalence property: the
/// original flow under ξ(x,t) = ζ(b(x),t) against the transformed flow
/// under ζ, from matched initial conditions. Returns the max deviation
/// max_t ‖Λ(t) − b⁻¹(Φ(t))‖∞.
pub fn lemma1_check<Z>(
    plant: &crate::plant::PlantModel,
    zeta: Z,
    x0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<f64, StepError>
where
    Z: Fn(&DVector<f64>, f64) -> DVector<f64>,
{
    let steps = (cfg.t_final / cfg.dt).round() as usize;
    let mut x = x0.clone();
    let mut s = vec_barrier(x0, &plant.limits)?;
    let mut max_dev: f64 = 0.0;

    for step in 0..steps {
        let t = step as f64 * cfg.dt;
        let x_next = rk4_step(
            |xv| {
                let sv = vec_barrier(xv, &plant.limits)?;
                Ok(plant.state_derivative(xv, &zeta(&sv, t)))
            },
            &x,
            cfg.dt,
        )?;
        let s_next = rk4_step(
            |sv| {
                let (h, f, g) = transformed_dynamics(sv, plant);
                let u = zeta(sv, t);
                let n = plant.n;
                let mut ds = DVector::zeros(2 * n);
                ds.rows_mut(0, n).copy_from(&h);
                ds.rows_mut(n, n).copy_from(&(f + g * u));
                Ok(ds)
            },
            &s,
            cfg.dt,
        )?;
        x = x_next;
        s = s_next;
        let mapped = crate::barrier::vec_barrier_inverse(&s, &plant.limits);
        max_dev = max_dev.max((&x - mapped).amax());
    }
    Ok(max_dev)
}

/// Dual-integration check of estimator equivalence: the original-coordinate
/// estimator against the transformed-coordinate estimator (with
/// ν₂ⱼ = B₂ⱼ(ŝ₂ⱼ)ν₁ⱼ), both driven by the same true output trajectory and
/// control. Returns max_t ‖b(x̂(t)) − ŝ(t)‖∞.
pub fn lemma2_check<U>(
    scenario: &Scenario,
    control: U,
    cfg: &SimConfig,
) -> Result<f64, StepError>
where
    U: Fn(&DVector<f64>, f64) -> DVector<f64>, // (ŝ, t) -> u
{
    let plant = &scenario.plant;
    let n = plant.n;
    let lims = &plant.limits;
    let gains = EstimatorGains {
        k: scenario.gains.k,
        alpha: scenario.gains.alpha,
        beta1: scenario.gains.beta1,
    };

    // joint state: x (2n), x̂₁ x̂₂ η̄ (3n, original), ŝ η̄ₜ (3n, transformed)
    let est0 = EstimatorState::new(&scenario.x0, &scenario.xhat0, lims)?;
    let shat0 = transformed_estimate(&est0, lims)?;
    let dim = 8 * n;
    let mut y = DVector::zeros(dim);
    y.rows_mut(0, 2 * n).copy_from(&scenario.x0);
    y.rows_mut(2 * n, 2 * n).copy_from(&est0.xhat());
    // η̄ blocks start at zero
    y.rows_mut(5 * n, 2 * n).copy_from(&shat0);

    let s1_tilde0 = est0.s1_tilde0.clone();
    let steps = (cfg.t_final / cfg.dt).round() as usize;
    let mut max_dev: f64 = 0.0;

    for step in 0..steps {
        let t = step as f64 * cfg.dt;
        y = rk4_step(
            |v| {
                let x = v.rows(0, 2 * n).into_owned();
                let x1 = x.rows(0, n).into_owned();
                let est = EstimatorState {
                    xhat1: v.rows(2 * n, n).into_owned(),
                    xhat2: v.rows(3 * n, n).into_owned(),
                    eta_bar: v.rows(4 * n, n).into_owned(),
                    s1_tilde0: s1_tilde0.clone(),
                };
                let shat = v.rows(5 * n, 2 * n).into_owned();
                let eta_bar_t = v.rows(7 * n, n).into_owned();

                let u = control(&transformed_estimate(&est, lims)?, t);

                let dx = plant.state_derivative(&x, &u);
                let (dxh1, dxh2, detab) = estimator_derivatives(&est, &x1, &u, plant, gains)?;

                // transformed-coordinate estimator
                let s1 = vec_barrier(&x1, &lims.slice(0..n))?;
                let s1_tilde = &s1 - shat.rows(0, n);
                let eta_t = &eta_bar_t
                    - (&s1_tilde - &s1_tilde0) * (gains.k + gains.alpha);
                let (h_hat, f_hat, g_hat) = transformed_dynamics(&shat, plant);
                let mut nu2 = DVector::zeros(n);
                for j in 0..n {
                    let b1 = rate_factor(shat[j], lims.pair(j));
                    let b2 = rate_factor(shat[n + j], lims.pair(n + j));
                    let nu1_j = (gains.alpha * gains.alpha * s1_tilde[j]
                        - (gains.k + gains.alpha + gains.beta1) * eta_t[j])
                        / b1;
                    nu2[j] = b2 * nu1_j;
                }
                let detab_t = -&eta_t * (gains.k + gains.beta1)
                    - &s1_tilde * (gains.k * gains.alpha);

                let mut d = DVector::zeros(dim);
                d.rows_mut(0, 2 * n).copy_from(&dx);
                d.rows_mut(2 * n, n).copy_from(&dxh1);
                d.rows_mut(3 * n, n).copy_from(&dxh2);
                d.rows_mut(4 * n, n).copy_from(&detab);
                d.rows_mut(5 * n, n).copy_from(&h_hat);
                d.rows_mut(6 * n, n).copy_from(&(f_hat + g_hat * &u + nu2));
                d.rows_mut(7 * n, n).copy_from(&detab_t);
                Ok(d)
            },
            &y,
            cfg.dt,
        )?;

        let est = EstimatorState {
            xhat1: y.rows(2 * n, n).into_owned(),
            xhat2: y.rows(3 * n, n).into_owned(),
            eta_bar: y.rows(4 * n, n).into_owned(),
            s1_tilde0: s1_tilde0.clone(),
        };
        let mapped = transformed_estimate(&est, lims)?;
        let shat = y.rows(5 * n, 2 * n).into_owned();
        max_dev = max_dev.max((mapped - shat).amax());
    }
    Ok(max_dev)
}

/// Dual-integration check that the algebraic filter output matches the
/// directly integrated dynamic filter (driven by the ground-truth
/// ṡ̃₁ = H(s) − H(ŝ)). Returns max_t ‖η_algebraic − η_integrated‖∞.
pub fn filter_equivalence_check(scenario: &Scenario, cfg: &SimConfig) -> Result<f64, StepError> {
    let runner = Runner::new(scenario, *cfg, LearnerMode::Adaptive)?;
    let lo = runner.layout;
    let n = lo.n;
    let base_dim = lo.total();
    let gains = runner.est_gains;

    // augmented with η integrated per the dynamic-filter form
    let mut y = DVector::zeros(base_dim + n);
    y.rows_mut(0, base_dim).copy_from(&runner.initial_state(None));

    let steps = (cfg.t_final / cfg.dt).round() as usize;
    let mut max_dev: f64 = 0.0;

    for _ in 0..steps {
        y = rk4_step(
            |v| {
                let base = v.rows(0, base_dim).into_owned();
                let eta_direct = v.rows(base_dim, n).into_owned();
                let dbase = runner.derivative(&base)?;

                let x = lo.x(&base);
                let est = lo.estimator(&base, &runner.s1_tilde0);
                let s = vec_barrier(&x, &scenario.plant.limits)?;
                let shat = transformed_estimate(&est, &scenario.plant.limits)?;
                let (h_true, _, _) = transformed_dynamics(&s, &scenario.plant);
                let (h_hat, _, _) = transformed_dynamics(&shat, &scenario.plant);
                let ds1_tilde = h_true - h_hat;
                let s1_tilde = s.rows(0, n) - shat.rows(0, n);
                let r = &ds1_tilde + &s1_tilde * gains.alpha + &eta_direct;
                let deta = -&eta_direct * gains.beta1 - r * gains.k - &ds1_tilde * gains.alpha;

                let mut d = DVector::zeros(base_dim + n);
                d.rows_mut(0, base_dim).copy_from(&dbase);
                d.rows_mut(base_dim, n).copy_from(&deta);
                Ok(d)
            },
            &y,
            cfg.dt,
        )?;
        {
            let mut base = y.rows(0, base_dim).into_owned();
            lo.symmetrize_gamma(&mut base);
            y.rows_mut(0, base_dim).copy_from(&base);
        }

        let base = y.rows(0, base_dim).into_owned();
        let x = lo.x(&base);
        let est = lo.estimator(&base, &runner.s1_tilde0);
        let x1 = x.rows(0, n).into_owned();
        let eta_alg = eta(&est, &x1, &scenario.plant.limits, gains)?;
        let eta_direct = y.rows(base_dim, n).into_owned();
        max_dev = max_dev.max((eta_alg - eta_direct).amax());
    }
    Ok(max_dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rk4_zero_field_leaves_state_unchanged() {
        let y = DVector::from_vec(vec![1.0, -2.0]);
        let next = rk4_step(|_| Ok(DVector::zeros(2)), &y, 0.1).unwrap();
        assert_eq!(next, y);
    }

    #[test]
    fn rk4_constant_field_is_exact() {
        let y = DVector::from_vec(vec![1.0, -2.0]);
        let c = DVector::from_vec(vec![3.0, 0.5]);
        let next = rk4_step(|_| Ok(c.clone()), &y, 0.25).unwrap();
        assert_eq!(next, &y + &c * 0.25);
    }

    #[test]
    fn rk4_exponential_step() {
        // ẏ = y, y₀ = 1, dt = 0.1: RK4 gives 1.10517083…, exp(0.1) within 1e-7
        let y = DVector::from_element(1, 1.0);
        let next = rk4_step(|v| Ok(v.clone()), &y, 0.1).unwrap();
        assert_relative_eq!(next[0], 1.1051708333333333, epsilon = 1e-12);
        assert!((next[0] - 0.1f64.exp()).abs() < 1e-7);
    }

    #[test]
    fn rk4_rejects_non_finite() {
        let y = DVector::from_element(1, 1.0);
        let res = rk4_step(|_| Ok(DVector::from_element(1, f64::INFINITY)), &y, 0.1);
        assert!(res.is_err());
    }

    #[test]
    fn layout_pack_unpack_round_trip() {
        let lo = Layout { n: 1, l: 3 };
        let x = DVector::from_vec(vec![0.3, -0.4]);
        let est = EstimatorState {
            xhat1: DVector::from_element(1, 0.1),
            xhat2: DVector::from_element(1, -0.2),
            eta_bar: DVector::from_element(1, 0.05),
            s1_tilde0: DVector::from_element(1, 0.7),
        };
        let lrn = LearnerState {
            wc: DVector::from_vec(vec![1.0, 2.0, 3.0]),
            gamma: DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64),
            wa: DVector::from_vec(vec![-1.0, 0.5, 4.0]),
        };
        let y = lo.pack(&x, &est, &lrn, 9.25);
        assert_eq!(y.len(), lo.total());
        assert_eq!(lo.x(&y), x);
        let est2 = lo.estimator(&y, &est.s1_tilde0);
        assert_eq!(est2.xhat1, est.xhat1);
        assert_eq!(est2.xhat2, est.xhat2);
        assert_eq!(est2.eta_bar, est.eta_bar);
        let lrn2 = lo.learner(&y);
        assert_eq!(lrn2.wc, lrn.wc);
        assert_eq!(lrn2.gamma, lrn.gamma);
        assert_eq!(lrn2.wa, lrn.wa);
        assert_eq!(lo.cost(&y), 9.25);
    }

    #[test]
    fn symmetrize_gamma_averages_off_diagonals() {
        let lo = Layout { n: 1, l: 2 };
        let est = EstimatorState {
            xhat1: DVector::zeros(1),
            xhat2: DVector::zeros(1),
            eta_bar: DVector::zeros(1),
            s1_tilde0: DVector::zeros(1),
        };
        let lrn = LearnerState {
            wc: DVector::zeros(2),
            gamma: DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 5.0, 2.0]),
            wa: DVector::zeros(2),
        };
        let mut y = lo.pack(&DVector::zeros(2), &est, &lrn, 0.0);
        lo.symmetrize_gamma(&mut y);
        let g = lo.learner(&y).gamma;
        assert_eq!(g[(0, 1)], 4.0);
        assert_eq!(g[(1, 0)], 4.0);
        assert_eq!(g[(0, 0)], 1.0);
        assert_eq!(g[(1, 1)], 2.0);
    }

    #[test]
    fn lemma1_zero_feedback_two_state() {
        // the open loop is unstable, so ζ ≡ 0 only works for a small
        // initial condition over a short horizon
        let sc = crate::plant::two_state_scenario();
        let cfg = SimConfig {
            t_final: 0.5,
            ..SimConfig::default()
        };
        let dev = lemma1_check(
            &sc.plant,
            |_, _| DVector::zeros(1),
            &DVector::from_vec(vec![0.1, -0.1]),
            &cfg,
        )
        .unwrap();
        assert!(dev < 1e-6, "deviation {dev}");
    }

    #[test]
    fn lemma1_frozen_linear_feedback_two_state() {
        let sc = crate::plant::two_state_scenario();
        let cfg = SimConfig {
            t_final: 2.0,
            ..SimConfig::default()
        };
        let dev = lemma1_check(
            &sc.plant,
            |s: &DVector<f64>, _| DVector::from_element(1, -4.0 * s[0] - 10.0 * s[1]),
            &DVector::from_vec(vec![-1.0, 1.0]),
            &cfg,
        )
        .unwrap();
        assert!(dev < 1e-5, "deviation {dev}");
    }

    #[test]
    fn lemma2_two_state_zero_input() {
        let mut sc = crate::plant::two_state_scenario();
        sc.x0 = DVector::from_vec(vec![0.1, -0.1]);
        sc.xhat0 = DVector::from_vec(vec![0.05, 0.0]);
        let cfg = SimConfig {
            t_final: 0.5,
            ..SimConfig::default()
        };
        let dev = lemma2_check(&sc, |_, _| DVector::zeros(1), &cfg).unwrap();
        assert!(dev < 1e-5, "deviation {dev}");
    }

    #[test]
    fn lemma2_two_state_frozen_policy() {
        let sc = crate::plant::two_state_scenario();
        let cfg = SimConfig {
            t_final: 2.0,
            ..SimConfig::default()
        };
        let wa = sc.wa0.clone();
        let dev = lemma2_check(
            &sc,
            |shat: &DVector<f64>, _| {
                let (_, _, g) = transformed_dynamics(shat, &sc.plant);
                policy_with_effectiveness(shat, &wa, &g, &sc.basis, &sc.r)
            },
            &cfg,
        )
        .unwrap();
        assert!(dev < 1e-5, "deviation {dev}");
    }

    #[test]
    fn filter_forms_agree_on_two_state_run() {
        let sc = crate::plant::two_state_scenario();
        let cfg = SimConfig {
            t_final: 5.0,
            ..SimConfig::default()
        };
        let dev = filter_equivalence_check(&sc, &cfg).unwrap();
        assert!(dev < 1e-6, "deviation {dev}");
    }

    #[test]
    fn closed_loop_two_state_runs_and_stays_safe() {
        let sc = crate::plant::two_state_scenario();
        let cfg = SimConfig::default();
        let log = run_closed_loop(&sc, &cfg);
        assert!(
            !log.status.is_diverged(),
            "unexpected divergence: {}",
            log.status
        );
        for row in &log.rows {
            for i in 0..2 {
                let p = sc.plant.limits.pair(i);
                assert!(row.x[i] > p.lower && row.x[i] < p.upper);
                assert!(row.xhat[i] > p.lower && row.xhat[i] < p.upper);
                assert!(row.x.iter().all(|v| v.is_finite()));
            }
        }
        assert!(log.final_cost.is_finite() && log.final_cost > 0.0);
        // state and weights settle
        let last = log.last();
        assert!(last.x.norm() < 0.5, "final |x| = {}", last.x.norm());
    }

    #[test]
    fn closed_loop_is_deterministic() {
        let sc = crate::plant::two_state_scenario();
        let cfg = SimConfig {
            t_final: 1.0,
            ..SimConfig::default()
        };
        let a = run_closed_loop(&sc, &cfg);
        let b = run_closed_loop(&sc, &cfg);
        assert_eq!(a.rows.len(), b.rows.len());
        for (ra, rb) in a.rows.iter().zip(b.rows.iter()) {
            assert_eq!(ra.x, rb.x);
            assert_eq!(ra.wc, rb.wc);
            assert_eq!(ra.wa, rb.wa);
            assert_eq!(ra.cost, rb.cost);
        }
    }

    #[test]
    fn evaluation_rollout_keeps_weights_fixed() {
        let sc = crate::plant::two_state_scenario();
        let cfg = SimConfig {
            t_final: 1.0,
            ..SimConfig::default()
        };
        let w = DVector::from_vec(vec![0.5, 0.2, 1.0]);
        let log = evaluation_rollout(&sc, &w, &cfg);
        assert!(!log.status.is_diverged(), "status {}", log.status);
        for row in &log.rows {
            assert_relative_eq!(row.wa, w.clone(), epsilon = 1e-14);
            assert_relative_eq!(row.wc, w.clone(), epsilon = 1e-14);
        }
    }

    #[test]
    fn vse_trace_matches_log_rows() {
        let sc = crate::plant::two_state_scenario();
        let cfg = SimConfig {
            t_final: 0.5,
            ..SimConfig::default()
        };
        let log = run_closed_loop(&sc, &cfg);
        let trace = vse_trace(&log);
        assert_eq!(trace.len(), log.rows.len());
        for ((t, v), row) in trace.iter().zip(log.rows.iter()) {
            assert_eq!(*t, row.t);
            assert_eq!(*v, row.v_se);
            assert!(*v >= 0.0);
        }
    }

    #[test]
    fn divergence_reported_on_barrier_exit() {
        // an aggressive destabilizing frozen policy pushes the state out
        let mut sc = crate::plant::two_state_scenario();
        sc.x0 = DVector::from_vec(vec![-6.5, 6.5]);
        sc.xhat0 = sc.x0.clone();
        let w = DVector::from_vec(vec![-50.0, -50.0, -50.0]);
        let cfg = SimConfig {
            t_final: 5.0,
            ..SimConfig::default()
        };
        let log = evaluation_rollout(&sc, &w, &cfg);
        assert!(log.status.is_diverged(), "status {}", log.status);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = SimConfig::default();
        cfg.dt = -1.0;
        assert!(cfg.validate().unwrap_err().contains("sim.dt"));
        cfg = SimConfig::default();
        cfg.log_decimation = 0;
        assert!(cfg.validate().is_err());
    }
}
