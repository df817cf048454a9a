//! Closed-loop simulation: adaptive Dormand-Prince 5(4) integration with
//! dense output, safety monitoring, and batch runs over initial sets.
//!
//! Barrier-state dynamics stiffen sharply near the constraint boundary
//! (`φ0` grows quadratically or exponentially in `z`), so the integrator
//! is adaptive with step rejection; non-finite right-hand sides and
//! margins at the floor are converted into flagged events rather than
//! propagating infinities. Trajectories are sampled on a uniform grid via
//! the 4th-order dense-output interpolant, with the horizon endpoint hit
//! exactly.
//!
//! Everything here is deterministic: identical inputs produce bitwise
//! identical trajectories (runs execute sequentially in input order).

use nalgebra::DVector;
use thiserror::Error;

use crate::analytic::ControlAffineSystem;
use crate::embedding::{bas_reference, EmbeddedSystem, EmbeddingError};
use crate::hjb_series::PolyController;
use crate::linear_synthesis::FeedbackGain;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("horizon must be positive, got {0}")]
    BadHorizon(f64),
    #[error("initial state is outside the safe set: h_{index}(x0) = {value}")]
    UnsafeInitialState { index: usize, value: f64 },
    #[error("{0}")]
    Embedding(#[from] EmbeddingError),
}

/// A state-feedback law `u = κ(x̄)`.
pub trait Feedback<T: Scalar> {
    fn control(&self, xbar: &DVector<T>) -> DVector<T>;
}

impl<T: Scalar> Feedback<T> for FeedbackGain<T> {
    fn control(&self, xbar: &DVector<T>) -> DVector<T> {
        FeedbackGain::control(self, xbar)
    }
}

impl<T: Scalar> Feedback<T> for PolyController<T> {
    fn control(&self, xbar: &DVector<T>) -> DVector<T> {
        PolyController::control(self, xbar)
    }
}

impl<T: Scalar, F: Fn(&DVector<T>) -> DVector<T>> Feedback<T> for F {
    fn control(&self, xbar: &DVector<T>) -> DVector<T> {
        self(xbar)
    }
}

/// Early-termination events recorded on a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub enum SimEvent<T> {
    /// A constraint margin reached the floor: barrier blow-up.
    MarginFloor { time: T, constraint: usize },
    /// A barrier state exceeded the cap: barrier blow-up.
    BasCap { time: T, bas_index: usize },
    /// The adaptive step collapsed (typically non-finite dynamics).
    StepSizeUnderflow { time: T },
}

/// Integrator configuration.
#[derive(Clone, Copy, Debug)]
pub struct IntegratorOptions<T> {
    /// Relative and absolute tolerance (used for both).
    pub tol: T,
    /// Output sample rate in Hz.
    pub sample_rate: T,
    /// Margin floor: `h_i ≤ h_floor` terminates with a blow-up event.
    pub h_floor: T,
    /// Barrier-state cap: `|z| > z_cap` terminates with a blow-up event.
    pub z_cap: T,
    pub max_steps: usize,
}

impl<T: Scalar> IntegratorOptions<T> {
    pub fn with_tol(tol: T) -> Self {
        IntegratorOptions {
            tol,
            sample_rate: T::lit(200.0),
            h_floor: T::lit(1e-9),
            z_cap: T::lit(1e6),
            max_steps: 20_000_000,
        }
    }
}

impl<T: Scalar> Default for IntegratorOptions<T> {
    fn default() -> Self {
        Self::with_tol(T::lit(1e-8))
    }
}

/// Time-stamped closed-loop record: states, controls, per-constraint
/// margins, integrator statistics, and the terminating event if any.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<DVector<T>>,
    pub controls: Vec<DVector<T>>,
    pub margins: Vec<DVector<T>>,
    /// Number of plant states (the leading block of each state vector).
    pub base_dim: usize,
    /// Number of trailing barrier states.
    pub z_dim: usize,
    pub steps: usize,
    pub rejected_steps: usize,
    pub event: Option<SimEvent<T>>,
    /// Whether integration reached the requested horizon.
    pub completed: bool,
}

impl<T: Scalar> Trajectory<T> {
    pub fn final_state(&self) -> &DVector<T> {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn final_time(&self) -> T {
        *self.times.last().expect("trajectory is never empty")
    }
}

/// Safety verdict for one trajectory.
#[derive(Clone, Debug)]
pub struct SafetyReport<T> {
    /// True iff every recorded margin is strictly positive and no
    /// blow-up event fired.
    pub safe: bool,
    /// Tightest margin over the run: `(constraint, value, time)`.
    pub min_margin: Option<(usize, T, T)>,
    /// `max_t |z(t) − (β(x(t)) − β0)|` over samples with valid margins.
    pub bas_drift_max: Option<T>,
    /// Reached the horizon with `‖x̄(T)‖` below the threshold (1e-3).
    pub converged: bool,
    pub final_state_norm: T,
    /// First time a margin was non-positive or a blow-up event fired.
    pub violation_time: Option<T>,
}

pub const CONVERGENCE_THRESHOLD: f64 = 1e-3;

const STAGES: usize = 7;

const DOPRI5_C: [f64; STAGES] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];

const DOPRI5_A: [[f64; 6]; STAGES] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

/// 5th-order weights (row 7 of A by the FSAL property).
const DOPRI5_B: [f64; STAGES] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];

/// Embedded 4th-order error weights (difference of the two solutions).
const DOPRI5_E: [f64; STAGES] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Dense-output coefficients for the 4th-order interpolant.
const DOPRI5_D: [f64; STAGES] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

struct DenseSegment<T> {
    t0: T,
    h: T,
    r: [DVector<T>; 5],
}

impl<T: Scalar> DenseSegment<T> {
    fn eval(&self, t: T) -> DVector<T> {
        let theta = (t - self.t0) / self.h;
        let theta1 = T::one() - theta;
        // Hairer's contd5 nesting
        &self.r[0]
            + (&self.r[1] + (&self.r[2] + (&self.r[3] + &self.r[4] * theta1) * theta) * theta1)
                * theta
    }
}

fn non_finite<T: Scalar>(v: &DVector<T>) -> bool {
    v.iter().any(|x| !x.is_finite())
}

/// Integrates the closed loop `ẋ̄ = f̄(x̄) + ḡ(x̄)·κ(x̄)` on `[0, T]`.
///
/// `z_dim` trailing states are treated as barrier states for the cap
/// check; margins come from the system's constraint list. The initial
/// state must be strictly safe.
fn integrate_core<T: Scalar, C: Feedback<T> + ?Sized>(
    sys: &ControlAffineSystem<T>,
    controller: &C,
    x0: &DVector<T>,
    horizon: T,
    opts: &IntegratorOptions<T>,
    z_dim: usize,
) -> Result<Trajectory<T>, SimError> {
    if !(opts.tol > T::zero()) {
        return Err(SimError::BadTolerance(opts.tol.as_f64()));
    }
    if !(horizon > T::zero()) {
        return Err(SimError::BadHorizon(horizon.as_f64()));
    }
    let h0 = sys.constraint_values(x0);
    for (i, v) in h0.iter().enumerate() {
        if !(*v > opts.h_floor) {
            return Err(SimError::UnsafeInitialState {
                index: i,
                value: v.as_f64(),
            });
        }
    }

    let n = sys.state_dim();
    let base_dim = n - z_dim;
    let rhs = |x: &DVector<T>| -> DVector<T> { sys.eval_field(x, &controller.control(x)) };

    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        controls: Vec::new(),
        margins: Vec::new(),
        base_dim,
        z_dim,
        steps: 0,
        rejected_steps: 0,
        event: None,
        completed: false,
    };
    let record = |t: T, x: &DVector<T>, traj: &mut Trajectory<T>| {
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.controls.push(controller.control(x));
        traj.margins.push(sys.constraint_values(x));
    };
    record(T::zero(), x0, &mut traj);

    let sample_dt = (opts.sample_rate).recip();
    let mut next_sample = sample_dt;

    let mut t = T::zero();
    let mut y = x0.clone();
    let mut k: Vec<DVector<T>> = vec![DVector::zeros(n); STAGES];
    k[0] = rhs(&y);

    // initial step: conservative power-law guess, refined by the controller
    let mut h = {
        let scale = y.norm().max(T::one());
        let d1 = k[0].norm() / scale;
        let guess = if d1 > T::lit(1e-10) {
            T::lit(0.01) / d1
        } else {
            T::lit(1e-3)
        };
        guess.min(horizon).min(T::lit(0.1))
    };
    let h_min_abs = T::lit(1e-14);
    let safety = T::lit(0.9);
    let fac_min = T::lit(0.2);
    let fac_max_normal = T::lit(10.0);
    let order_exp = T::lit(0.2); // 1/5
    let mut fac_max = fac_max_normal;

    // events to check at a candidate point; returns the first violation
    let check_events = |x: &DVector<T>, time: T| -> Option<SimEvent<T>> {
        let margins = sys.constraint_values(x);
        for (i, v) in margins.iter().enumerate() {
            if !(*v > opts.h_floor) {
                return Some(SimEvent::MarginFloor {
                    time,
                    constraint: i,
                });
            }
        }
        for l in 0..z_dim {
            let z = x[base_dim + l];
            if !(z.abs() <= opts.z_cap) {
                return Some(SimEvent::BasCap {
                    time,
                    bas_index: l,
                });
            }
        }
        None
    };

    'outer: while t < horizon {
        if traj.steps + traj.rejected_steps >= opts.max_steps {
            traj.event = Some(SimEvent::StepSizeUnderflow { time: t });
            break;
        }
        let h_left = horizon - t;
        if h > h_left {
            h = h_left;
        }

        // stages (k[0] is fresh from FSAL)
        let mut failed = false;
        for s in 1..STAGES {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = DOPRI5_A[s][j];
                if a != 0.0 {
                    ys += kj * (h * T::lit(a));
                }
            }
            let _ = DOPRI5_C; // nodes only matter for time-varying dynamics
            k[s] = rhs(&ys);
            if non_finite(&k[s]) {
                failed = true;
                break;
            }
        }

        let (y_new, err) = if failed {
            (y.clone(), T::lit(f64::INFINITY))
        } else {
            let mut y_new = y.clone();
            let mut err_vec = DVector::<T>::zeros(n);
            for (s, ks) in k.iter().enumerate() {
                if DOPRI5_B[s] != 0.0 {
                    y_new += ks * (h * T::lit(DOPRI5_B[s]));
                }
                if DOPRI5_E[s] != 0.0 {
                    err_vec += ks * (h * T::lit(DOPRI5_E[s]));
                }
            }
            if non_finite(&y_new) {
                (y.clone(), T::lit(f64::INFINITY))
            } else {
                // weighted RMS error norm
                let mut acc = T::zero();
                for i in 0..n {
                    let sc = opts.tol + opts.tol * y[i].abs().max(y_new[i].abs());
                    let e = err_vec[i] / sc;
                    acc += e * e;
                }
                let err = (acc / T::from_usize(n).unwrap()).sqrt();
                (y_new, err)
            }
        };

        if !(err <= T::one()) {
            // reject
            traj.rejected_steps += 1;
            let shrink = if err.is_finite() {
                (safety * err.powf(-order_exp)).max(fac_min)
            } else {
                fac_min
            };
            h *= shrink;
            fac_max = T::one();
            if h < h_min_abs {
                traj.event = Some(SimEvent::StepSizeUnderflow { time: t });
                break 'outer;
            }
            continue;
        }

        // accepted: FSAL final stage is the derivative at the new point
        let k_new = if DOPRI5_C[6] == 1.0 {
            k[6].clone()
        } else {
            rhs(&y_new)
        };

        // dense output coefficients for this segment
        let ydiff = &y_new - &y;
        let bspl = &k[0] * h - &ydiff;
        let mut d_sum = DVector::<T>::zeros(n);
        for (s, ks) in k.iter().enumerate() {
            if DOPRI5_D[s] != 0.0 {
                d_sum += ks * T::lit(DOPRI5_D[s]);
            }
        }
        let segment = DenseSegment {
            t0: t,
            h,
            r: [
                y.clone(),
                ydiff.clone(),
                bspl.clone(),
                &ydiff - &bspl - &k_new * h,
                d_sum * h,
            ],
        };

        let t_new = t + h;
        traj.steps += 1;

        // emit grid samples inside (t, t_new]
        while next_sample <= t_new + h_min_abs && next_sample < horizon - h_min_abs {
            let xs = segment.eval(next_sample);
            if let Some(ev) = check_events(&xs, next_sample) {
                record(next_sample, &xs, &mut traj);
                traj.event = Some(ev);
                break 'outer;
            }
            record(next_sample, &xs, &mut traj);
            next_sample += sample_dt;
        }

        // events at the accepted endpoint are authoritative
        if let Some(ev) = check_events(&y_new, t_new) {
            record(t_new, &y_new, &mut traj);
            traj.event = Some(ev);
            break 'outer;
        }

        t = t_new;
        y = y_new;
        k[0] = k_new;

        if t >= horizon {
            record(t, &y, &mut traj);
            traj.completed = true;
            break;
        }

        // step-size controller
        let grow = if err > T::zero() {
            (safety * err.powf(-order_exp)).clamp(fac_min, fac_max)
        } else {
            fac_max
        };
        h *= grow;
        fac_max = fac_max_normal;
    }

    Ok(traj)
}

/// Integrates the embedded closed loop from a full embedded state `x̄0`.
pub fn integrate<T: Scalar, C: Feedback<T> + ?Sized>(
    esys: &EmbeddedSystem<T>,
    controller: &C,
    xbar0: &DVector<T>,
    horizon: T,
    opts: &IntegratorOptions<T>,
) -> Result<Trajectory<T>, SimError> {
    integrate_core(esys.full(), controller, xbar0, horizon, opts, esys.z_dim())
}

/// Integrates a plain (non-embedded) closed loop; margins are still
/// recorded from the system's constraint list.
pub fn integrate_plain<T: Scalar, C: Feedback<T> + ?Sized>(
    sys: &ControlAffineSystem<T>,
    controller: &C,
    x0: &DVector<T>,
    horizon: T,
    opts: &IntegratorOptions<T>,
) -> Result<Trajectory<T>, SimError> {
    integrate_core(sys, controller, x0, horizon, opts, 0)
}

fn margin_summary<T: Scalar>(traj: &Trajectory<T>) -> (Option<(usize, T, T)>, Option<T>) {
    let mut min_margin: Option<(usize, T, T)> = None;
    let mut violation: Option<T> = None;
    for (t, m) in traj.times.iter().zip(&traj.margins) {
        for (i, v) in m.iter().enumerate() {
            if min_margin.map_or(true, |(_, best, _)| *v < best) {
                min_margin = Some((i, *v, *t));
            }
            if *v <= T::zero() && violation.is_none() {
                violation = Some(*t);
            }
        }
    }
    (min_margin, violation)
}

/// Builds the safety verdict for an embedded run, including the
/// barrier-state drift `max_t |z(t) − (β(x(t)) − β0)|`.
pub fn monitor_safety<T: Scalar>(traj: &Trajectory<T>, esys: &EmbeddedSystem<T>) -> SafetyReport<T> {
    let mut report = safety_report_plain(traj);
    let mut drift = T::zero();
    for (state, margins) in traj.states.iter().zip(&traj.margins) {
        if margins.iter().any(|v| !(*v > T::zero())) {
            continue; // recentered barrier undefined outside the safe set
        }
        let (x, z) = esys.split_state(state);
        if let Ok(reference) = bas_reference(esys.bas(), esys.base(), &x) {
            drift = drift.max((z - reference).amax());
        }
    }
    report.bas_drift_max = Some(drift);
    report
}

/// Safety verdict without barrier-state drift (plain systems).
pub fn safety_report_plain<T: Scalar>(traj: &Trajectory<T>) -> SafetyReport<T> {
    let (min_margin, mut violation_time) = margin_summary(traj);
    let mut safe = violation_time.is_none();
    match &traj.event {
        Some(SimEvent::MarginFloor { time, .. }) | Some(SimEvent::BasCap { time, .. }) => {
            safe = false;
            if violation_time.is_none() {
                violation_time = Some(*time);
            }
        }
        _ => {}
    }
    let final_norm = traj.final_state().norm();
    SafetyReport {
        safe,
        min_margin,
        bas_drift_max: None,
        converged: traj.completed && final_norm < T::lit(CONVERGENCE_THRESHOLD),
        final_state_norm: final_norm,
        violation_time,
    }
}

/// One batch entry: the trajectory and its verdict.
#[derive(Clone, Debug)]
pub struct SimRun<T> {
    pub trajectory: Trajectory<T>,
    pub report: SafetyReport<T>,
}

/// Runs one simulation per initial plant state (exact barrier-state
/// initialization), sequentially and in input order. Per-run errors are
/// recorded; the batch continues.
pub fn batch_run<T: Scalar, C: Feedback<T> + ?Sized>(
    esys: &EmbeddedSystem<T>,
    controller: &C,
    initial_states: &[DVector<T>],
    horizon: T,
    opts: &IntegratorOptions<T>,
) -> Vec<Result<SimRun<T>, SimError>> {
    initial_states
        .iter()
        .map(|x0| {
            let xbar0 = esys.embed_state(x0)?;
            let trajectory = integrate(esys, controller, &xbar0, horizon, opts)?;
            let report = monitor_safety(&trajectory, esys);
            Ok(SimRun { trajectory, report })
        })
        .collect()
}
