//! Brunovsky-form plant abstraction (ẋ₁ = x₂, ẋ₂ = f(x) + g(x)u), its
//! barrier-transformed dynamics, and the two built-in benchmark scenarios.

use nalgebra::{DMatrix, DVector};

use crate::barrier::{barrier_inverse, rate_factor, BarrierLimits};
use crate::basis::QuadraticBasis;

type DriftFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type EffectivenessFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Control-affine plant in Brunovsky canonical form with box constraints.
///
/// `f` maps ℝ²ⁿ → ℝⁿ and `g` maps ℝ²ⁿ → ℝⁿˣᵐ; both are evaluated without
/// clamping, only the barrier enforces the box.
pub struct PlantModel {
    pub n: usize,
    pub m: usize,
    pub limits: BarrierLimits,
    drift: Box<DriftFn>,
    effectiveness: Box<EffectivenessFn>,
}

impl PlantModel {
    pub fn new(
        n: usize,
        m: usize,
        limits: BarrierLimits,
        drift: Box<DriftFn>,
        effectiveness: Box<EffectivenessFn>,
    ) -> Self {
        assert_eq!(limits.dim(), 2 * n, "limits must cover all 2n components");
        Self {
            n,
            m,
            limits,
            drift,
            effectiveness,
        }
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(x)
    }

    pub fn effectiveness(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.effectiveness)(x)
    }

    /// Full original-coordinate state derivative [x₂; f(x) + g(x)u].
    pub fn state_derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let x2 = x.rows(n, n).into_owned();
        let accel = self.drift(x) + self.effectiveness(x) * u;
        let mut dx = DVector::zeros(2 * n);
        dx.rows_mut(0, n).copy_from(&x2);
        dx.rows_mut(n, n).copy_from(&accel);
        dx
    }
}

/// Transformed-coordinate vector fields of ṡ₁ = H(s), ṡ₂ = F(s) + G(s)u.
///
/// Hⱼ = B₁ⱼ(s₁ⱼ)·b⁻¹(s₂ⱼ), Fⱼ = B₂ⱼ(s₂ⱼ)·f(b⁻¹(s))ⱼ, and the jth row of G
/// is B₂ⱼ(s₂ⱼ)·g(b⁻¹(s))ⱼ. Defined on all of ℝ²ⁿ.
pub fn transformed_dynamics(
    s: &DVector<f64>,
    plant: &PlantModel,
) -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
    let n = plant.n;
    let x = crate::barrier::vec_barrier_inverse(s, &plant.limits);
    let f = plant.drift(&x);
    let g = plant.effectiveness(&x);

    let mut h = DVector::zeros(n);
    let mut big_f = DVector::zeros(n);
    let mut big_g = DMatrix::zeros(n, plant.m);
    for j in 0..n {
        let b1 = rate_factor(s[j], plant.limits.pair(j));
        let b2 = rate_factor(s[n + j], plant.limits.pair(n + j));
        h[j] = b1 * barrier_inverse(s[n + j], plant.limits.pair(n + j));
        big_f[j] = b2 * f[j];
        for c in 0..plant.m {
            big_g[(j, c)] = b2 * g[(j, c)];
        }
    }
    (h, big_f, big_g)
}

/// The eight tuning gains shared by the estimator and the learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSet {
    pub k: f64,
    pub alpha: f64,
    pub beta1: f64,
    pub kc: f64,
    pub ka1: f64,
    pub ka2: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl GainSet {
    /// The estimator's share of the gain set.
    pub fn estimator(&self) -> crate::estimator::EstimatorGains {
        crate::estimator::EstimatorGains {
            k: self.k,
            alpha: self.alpha,
            beta1: self.beta1,
        }
    }

    /// The learner's share of the gain set.
    pub fn learner(&self) -> crate::learner::LearnerGains {
        crate::learner::LearnerGains {
            kc: self.kc,
            ka1: self.ka1,
            ka2: self.ka2,
            beta: self.beta,
            gamma: self.gamma,
        }
    }
}

/// Uniform lattice of Bellman-error extrapolation points, axis-aligned
/// box [-half_width, half_width]^2n in transformed coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub half_width: f64,
    pub points_per_axis: usize,
}

/// A complete benchmark setup: plant, cost, basis, initial conditions,
/// extrapolation grid geometry, and nominal gains.
pub struct Scenario {
    pub name: String,
    pub plant: PlantModel,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub basis: QuadraticBasis,
    pub x0: DVector<f64>,
    pub xhat0: DVector<f64>,
    pub wc0: DVector<f64>,
    pub wa0: DVector<f64>,
    pub gamma0: DMatrix<f64>,
    pub grid: GridSpec,
    pub gains: GainSet,
}

/// Two-state benchmark: scalar nonlinear plant with limits
/// x₁ ∈ (−7, 5), x₂ ∈ (−5, 7) and a three-feature quadratic basis.
pub fn two_state_scenario() -> Scenario {
    let limits = BarrierLimits::from_bounds(&[-7.0, -5.0], &[5.0, 7.0]);
    let drift = Box::new(|x: &DVector<f64>| {
        let c = (2.0 * x[0]).cos() + 2.0;
        DVector::from_element(1, -x[0] - 0.5 * x[1] * (1.0 - c * c))
    });
    let effectiveness = Box::new(|x: &DVector<f64>| {
        DMatrix::from_element(1, 1, (2.0 * x[0]).cos() + 2.0)
    });
    let plant = PlantModel::new(1, 1, limits, drift, effectiveness);
    Scenario {
        name: "two_state".to_string(),
        plant,
        q: DMatrix::identity(2, 2) * 10.0,
        r: DMatrix::from_element(1, 1, 0.1),
        basis: QuadraticBasis::new(2, vec![(0, 0), (0, 1), (1, 1)]),
        x0: DVector::from_vec(vec![-6.0, 6.0]),
        xhat0: DVector::from_vec(vec![-6.0, 4.0]),
        wc0: DVector::from_vec(vec![10.0, 0.5, 0.5]),
        wa0: DVector::from_vec(vec![10.0, 0.5, 0.5]),
        gamma0: DMatrix::identity(3, 3),
        grid: GridSpec {
            half_width: 2.0,
            points_per_axis: 10,
        },
        gains: GainSet {
            k: 10.0,
            alpha: 1.0,
            beta1: 5.0,
            kc: 5.0,
            ka1: 100.0,
            ka2: 0.1,
            beta: 1.0,
            gamma: 1.0,
        },
    }
}

const P1: f64 = 3.473;
const P2: f64 = 0.196;
const P3: f64 = 0.242;
const FD: [f64; 2] = [5.3, 1.1];
const FS: [f64; 2] = [8.45, 2.35];

/// Inertia matrix of the two-link manipulator; symmetric PD on the box.
pub fn manipulator_inertia(x12: f64) -> DMatrix<f64> {
    let c2 = x12.cos();
    DMatrix::from_row_slice(
        2,
        2,
        &[P1 + 2.0 * P3 * c2, P2 + P3 * c2, P2 + P3 * c2, P2],
    )
}

/// Centripetal-Coriolis matrix of the two-link manipulator.
pub fn manipulator_coriolis(x12: f64, x2: &DVector<f64>) -> DMatrix<f64> {
    let s2 = x12.sin();
    DMatrix::from_row_slice(
        2,
        2,
        &[
            -P3 * s2 * x2[1],
            -P3 * s2 * (x2[0] + x2[1]),
            P3 * s2 * x2[0],
            0.0,
        ],
    )
}

/// Four-state benchmark: two-link planar manipulator with limits
/// (−1, 1)² on angles and (−2, 2)² on rates, ten quadratic features.
pub fn manipulator_scenario() -> Scenario {
    let limits = BarrierLimits::from_bounds(&[-1.0, -1.0, -2.0, -2.0], &[1.0, 1.0, 2.0, 2.0]);
    let drift = Box::new(|x: &DVector<f64>| {
        let x2 = x.rows(2, 2).into_owned();
        let ma = manipulator_inertia(x[1]);
        let vm = manipulator_coriolis(x[1], &x2);
        let friction = DVector::from_vec(vec![
            FD[0] * x2[0] + FS[0] * x2[0].tanh(),
            FD[1] * x2[1] + FS[1] * x2[1].tanh(),
        ]);
        let rhs = vm * x2 + friction;
        -(ma.try_inverse().expect("inertia matrix is PD") * rhs)
    });
    let effectiveness = Box::new(|x: &DVector<f64>| {
        manipulator_inertia(x[1])
            .try_inverse()
            .expect("inertia matrix is PD")
    });
    let plant = PlantModel::new(2, 2, limits, drift, effectiveness);
    // ŝ ordered as (s₁₁, s₁₂, s₂₁, s₂₂) = indices (0, 1, 2, 3)
    let pairs = vec![
        (0, 2),
        (1, 3),
        (2, 1),
        (3, 0),
        (0, 1),
        (3, 2),
        (0, 0),
        (1, 1),
        (2, 2),
        (3, 3),
    ];
    Scenario {
        name: "manipulator".to_string(),
        plant,
        q: DMatrix::identity(4, 4) * 10.0,
        r: DMatrix::identity(2, 2),
        basis: QuadraticBasis::new(4, pairs),
        x0: DVector::from_vec(vec![-0.5, -0.5, 1.0, 1.0]),
        xhat0: DVector::from_vec(vec![-0.5, -0.5, 1.1, 1.1]),
        wc0: DVector::from_vec(vec![15.0, 15.0, 0.0, 0.0, 12.0, 2.0, 15.0, 8.0, 2.0, 2.0]),
        wa0: DVector::from_vec(vec![5.0, 15.0, 0.0, 0.0, 10.0, 2.0, 15.0, 5.0, 2.0, 2.0]),
        gamma0: DMatrix::identity(10, 10) * 10.0,
        grid: GridSpec {
            half_width: 0.45,
            points_per_axis: 5,
        },
        gains: GainSet {
            k: 50.0,
            alpha: 1.0,
            beta1: 10.0,
            kc: 1000.0,
            ka1: 100.0,
            ka2: 0.5,
            beta: 0.001,
            gamma: 500.0,
        },
    }
}

/// Looks up a built-in scenario by name.
pub fn scenario_by_name(name: &str) -> Option<Scenario> {
    match name {
        "two_state" => Some(two_state_scenario()),
        "manipulator" => Some(manipulator_scenario()),
        _ => None,
    }
}
