//! Sagittal locomotion control: a wheeled inverted pendulum linearized
//! about upright, condensed into a box-constrained QP over ground
//! accelerations and solved with warm starts.

mod qp;

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use qp::{solve_qp, QpError, QpOptions, QpProblem, QpSolution};

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("invalid controller config: {0}")]
    Config(String),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("pendulum fell at t = {t:.2} s (pitch {phi:.3} rad)")]
    Fell { t: f64, phi: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// `(r, phi, r_dot, phi_dot)`: ground position, base pitch and their rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WipState {
    pub r: f64,
    pub phi: f64,
    pub r_dot: f64,
    pub phi_dot: f64,
}

impl WipState {
    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.r, self.phi, self.r_dot, self.phi_dot)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self { r: v[0], phi: v[1], r_dot: v[2], phi_dot: v[3] }
    }
}

/// Explicit-Euler discretization of `r'' = u`, `phi'' = (g/l) phi - u/l`.
pub fn linearize_wip(g: f64, l: f64, dt: f64) -> (Matrix4<f64>, Vector4<f64>) {
    assert!(l > 0.0 && dt > 0.0, "pendulum length and step must be positive");
    let mut ac = Matrix4::zeros();
    ac[(0, 2)] = 1.0;
    ac[(1, 3)] = 1.0;
    ac[(3, 1)] = g / l;
    let bc = Vector4::new(0.0, 0.0, 1.0, -1.0 / l);
    (Matrix4::identity() + ac * dt, bc * dt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub g: f64,
    /// Pendulum length, m.
    pub l: f64,
    pub horizon: usize,
    pub dt: f64,
    /// Ground acceleration bound, m/s^2.
    pub u_max: f64,
    pub w_r: f64,
    pub w_phi: f64,
    pub w_u: f64,
    pub terminal_scale: f64,
    pub wheel_radius: f64,
    pub track: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Plant and controller period, s.
    pub plant_dt: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            g: 9.81,
            l: 0.58,
            horizon: 50,
            dt: 0.02,
            u_max: 5.0,
            w_r: 10.0,
            w_phi: 100.0,
            w_u: 0.1,
            terminal_scale: 10.0,
            wheel_radius: 0.06,
            track: 0.3,
            max_iter: 5000,
            tol: 1e-6,
            plant_dt: 0.01,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), MpcError> {
        let positive = [
            ("g", self.g),
            ("l", self.l),
            ("dt", self.dt),
            ("w_r", self.w_r),
            ("w_phi", self.w_phi),
            ("w_u", self.w_u),
            ("terminal_scale", self.terminal_scale),
            ("wheel_radius", self.wheel_radius),
            ("track", self.track),
            ("tol", self.tol),
            ("plant_dt", self.plant_dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MpcError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.u_max >= 0.0) {
            return Err(MpcError::Config("u_max must be non-negative".into()));
        }
        if self.horizon < 2 {
            return Err(MpcError::Config("horizon must be at least 2".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> WipModel {
        WipModel::new(self.g, self.l, self.dt, self.horizon)
    }

    pub fn weights(&self) -> CostWeights {
        CostWeights { w_r: self.w_r, w_phi: self.w_phi, w_u: self.w_u, terminal_scale: self.terminal_scale }
    }

    pub fn qp_options(&self) -> QpOptions {
        QpOptions { max_iter: self.max_iter, tol: self.tol }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WipModel {
    pub g: f64,
    pub l: f64,
    pub dt: f64,
    pub horizon: usize,
    pub a: Matrix4<f64>,
    pub b: Vector4<f64>,
}

impl WipModel {
    pub fn new(g: f64, l: f64, dt: f64, horizon: usize) -> Self {
        let (a, b) = linearize_wip(g, l, dt);
        Self { g, l, dt, horizon, a, b }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub w_r: f64,
    pub w_phi: f64,
    pub w_u: f64,
    /// Multiplies the state cost of the last stage.
    pub terminal_scale: f64,
}

fn stage_scale(k: usize, horizon: usize, w: &CostWeights) -> f64 {
    if k == horizon {
        w.terminal_scale
    } else {
        1.0
    }
}

/// Cost of a control sequence by explicit simulation of the linear model.
pub fn rollout_cost(model: &WipModel, x0: &WipState, v_ref: f64, w: &CostWeights, u: &[f64]) -> f64 {
    let n = u.len();
    let mut x = x0.to_vector();
    let mut cost = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        x = model.a * x + model.b * uj;
        let k = j + 1;
        let r_ref = x0.r + v_ref * k as f64 * model.dt;
        cost += stage_scale(k, n, w) * (w.w_r * (x[0] - r_ref).powi(2) + w.w_phi * x[1] * x[1]);
        cost += w.w_u * uj * uj;
    }
    cost
}

/// Condenses the horizon into `0.5 u'Hu + q'u + c` over `u_0..u_{N-1}`
/// with states `x_1..x_N` eliminated.
pub fn build_qp(model: &WipModel, x0: &WipState, v_ref: f64, w: &CostWeights, u_max: f64) -> Result<QpProblem, QpError> {
    let n = model.horizon;
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut q = DVector::<f64>::zeros(n);
    let mut c = 0.0;
    // cols[j] = d x_k / d u_j for the current k
    let mut cols: Vec<Vector4<f64>> = Vec::with_capacity(n);
    let mut free = x0.to_vector();
    for k in 1..=n {
        for col in cols.iter_mut() {
            *col = model.a * *col;
        }
        cols.push(model.b);
        free = model.a * free;
        let s = stage_scale(k, n, w);
        let r_err = free[0] - (x0.r + v_ref * k as f64 * model.dt);
        let phi = free[1];
        c += s * (w.w_r * r_err * r_err + w.w_phi * phi * phi);
        for i in 0..k {
            q[i] += 2.0 * s * (w.w_r * r_err * cols[i][0] + w.w_phi * phi * cols[i][1]);
            for j in 0..=i {
                let v = 2.0 * s * (w.w_r * cols[i][0] * cols[j][0] + w.w_phi * cols[i][1] * cols[j][1]);
                h[(i, j)] += v;
                if i != j {
                    h[(j, i)] += v;
                }
            }
        }
    }
    for i in 0..n {
        h[(i, i)] += 2.0 * w.w_u;
    }
    let mut p = QpProblem::new(h, q, DVector::from_element(n, -u_max), DVector::from_element(n, u_max))?;
    p.c = c;
    Ok(p)
}

/// Previous plan advanced by one stage, last entry repeated.
pub fn shift_warm_start(prev: &DVector<f64>) -> DVector<f64> {
    let n = prev.len();
    DVector::from_fn(n, |i, _| prev[(i + 1).min(n - 1)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcOutput {
    /// Planned wheel base velocity after the first control interval, m/s.
    pub velocity: f64,
    /// First planned ground acceleration.
    pub acceleration: f64,
    pub solution: QpSolution,
}

/// One receding-horizon solve, warm-started from the shifted previous plan.
pub fn mpc_step(
    model: &WipModel,
    weights: &CostWeights,
    u_max: f64,
    opts: &QpOptions,
    x0: &WipState,
    v_ref: f64,
    prev: Option<&DVector<f64>>,
) -> Result<MpcOutput, MpcError> {
    let problem = build_qp(model, x0, v_ref, weights, u_max)?;
    let warm = prev.filter(|p| p.len() == model.horizon).map(shift_warm_start);
    let solution = solve_qp(&problem, warm.as_ref(), opts)?;
    let acceleration = solution.u[0];
    Ok(MpcOutput { velocity: x0.r_dot + acceleration * model.dt, acceleration, solution })
}

/// `(omega_left, omega_right)` in rad/s.
pub fn differential_drive(v_base: f64, v_theta: f64, wheel_radius: f64, track: f64) -> (f64, f64) {
    let half = v_theta * track / 2.0;
    ((v_base - half) / wheel_radius, (v_base + half) / wheel_radius)
}

/// Controller instance holding the warm-start plan.
#[derive(Debug, Clone)]
pub struct MpcController {
    config: MpcConfig,
    model: WipModel,
    prev: Option<DVector<f64>>,
}

impl MpcController {
    pub fn new(config: MpcConfig) -> Result<Self, MpcError> {
        config.validate()?;
        Ok(Self { model: config.model(), config, prev: None })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    pub fn reset(&mut self) {
        self.prev = None;
    }

    pub fn step(&mut self, x0: &WipState, v_ref: f64) -> Result<MpcOutput, MpcError> {
        let out = mpc_step(
            &self.model,
            &self.config.weights(),
            self.config.u_max,
            &self.config.qp_options(),
            x0,
            v_ref,
            self.prev.as_ref(),
        )?;
        self.prev = Some(out.solution.u.clone());
        Ok(out)
    }

    /// Same problem solved without a warm start; for iteration comparisons.
    pub fn solve_cold(&self, x0: &WipState, v_ref: f64) -> Result<MpcOutput, MpcError> {
        mpc_step(&self.model, &self.config.weights(), self.config.u_max, &self.config.qp_options(), x0, v_ref, None)
    }
}

/// Nonlinear pendulum on a cart: `r'' = u`, `phi'' = (g sin phi - u cos phi) / l`.
pub fn plant_derivative(g: f64, l: f64, x: &Vector4<f64>, u: f64) -> Vector4<f64> {
    Vector4::new(x[2], x[3], u, (g * x[1].sin() - u * x[1].cos()) / l)
}

/// One RK4 step with `u` held constant.
pub fn plant_step(g: f64, l: f64, x: &WipState, u: f64, dt: f64) -> WipState {
    let x = x.to_vector();
    let k1 = plant_derivative(g, l, &x, u);
    let k2 = plant_derivative(g, l, &(x + k1 * (dt / 2.0)), u);
    let k3 = plant_derivative(g, l, &(x + k2 * (dt / 2.0)), u);
    let k4 = plant_derivative(g, l, &(x + k3 * dt), u);
    WipState::from_vector(&(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub r: f64,
    pub phi: f64,
    pub r_dot: f64,
    pub phi_dot: f64,
    pub u: f64,
    pub omega_l: f64,
    pub omega_r: f64,
    /// QP iterations spent on this tick.
    pub iterations: usize,
}

pub fn write_trajectory<W: Write>(mut out: W, points: &[TrajectoryPoint]) -> std::io::Result<()> {
    for p in points {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Runs the controller against the nonlinear plant for `duration` seconds,
/// holding the first planned ground acceleration for each plant tick.
pub fn simulate_wip_closed_loop(
    config: &MpcConfig,
    x0: WipState,
    v_ref: &dyn Fn(f64) -> f64,
    duration: f64,
) -> Result<Vec<TrajectoryPoint>, MpcError> {
    if !(duration > 0.0) {
        return Err(MpcError::Config("duration must be positive".into()));
    }
    let mut controller = MpcController::new(config.clone())?;
    let ticks = (duration / config.plant_dt).round() as usize;
    let mut x = x0;
    let mut out = Vec::with_capacity(ticks + 1);
    for tick in 0..=ticks {
        let t = tick as f64 * config.plant_dt;
        if x.phi.abs() > std::f64::consts::FRAC_PI_2 || !x.phi.is_finite() {
            return Err(MpcError::Fell { t, phi: x.phi });
        }
        let step = controller.step(&x, v_ref(t))?;
        let u = step.acceleration;
        let (omega_l, omega_r) = differential_drive(step.velocity, 0.0, config.wheel_radius, config.track);
        out.push(TrajectoryPoint {
            t,
            r: x.r,
            phi: x.phi,
            r_dot: x.r_dot,
            phi_dot: x.phi_dot,
            u,
            omega_l,
            omega_r,
            iterations: step.solution.iterations,
        });
        if tick < ticks {
            x = plant_step(config.g, config.l, &x, u, config.plant_dt);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCriterion {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcBenchReport {
    pub criteria: Vec<BenchCriterion>,
    pub warm_median_iterations: f64,
    pub cold_median_iterations: f64,
}

impl MpcBenchReport {
    pub fn all_pass(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }
}

pub const STABILIZE_PHI0: f64 = 0.1;
pub const STABILIZE_TIME: f64 = 2.0;
pub const STABILIZE_TOL: f64 = 0.01;
pub const TRACK_V_REF: f64 = 0.5;
pub const TRACK_DURATION: f64 = 5.0;

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Max `|phi|` from `STABILIZE_TIME` to the end of a run started at
/// `phi = STABILIZE_PHI0`.
pub fn stabilization_error(config: &MpcConfig) -> Result<f64, MpcError> {
    let x0 = WipState { phi: STABILIZE_PHI0, ..WipState::default() };
    let traj = simulate_wip_closed_loop(config, x0, &|_| 0.0, STABILIZE_TIME + 1.0)?;
    Ok(traj
        .iter()
        .filter(|p| p.t >= STABILIZE_TIME - 1e-9)
        .map(|p| p.phi.abs())
        .fold(0.0, f64::max))
}

/// Mean `r_dot` over the last second of a `TRACK_V_REF` step response.
pub fn tracking_mean_velocity(config: &MpcConfig) -> Result<f64, MpcError> {
    let traj = simulate_wip_closed_loop(config, WipState::default(), &|_| TRACK_V_REF, TRACK_DURATION)?;
    let tail: Vec<f64> = traj.iter().filter(|p| p.t > TRACK_DURATION - 1.0 + 1e-9).map(|p| p.r_dot).collect();
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Median QP iterations, warm-started versus cold, over `steps` closed-loop
/// ticks of the tracking run.
pub fn warm_cold_iterations(config: &MpcConfig, steps: usize) -> Result<(f64, f64), MpcError> {
    let mut controller = MpcController::new(config.clone())?;
    let mut x = WipState::default();
    let (mut warm, mut cold) = (Vec::new(), Vec::new());
    for _ in 0..steps {
        let cold_out = controller.solve_cold(&x, TRACK_V_REF)?;
        let out = controller.step(&x, TRACK_V_REF)?;
        warm.push(out.solution.iterations as f64);
        cold.push(cold_out.solution.iterations as f64);
        x = plant_step(config.g, config.l, &x, out.acceleration, config.plant_dt);
    }
    Ok((median(warm), median(cold)))
}

/// Stabilization, tracking and warm-start criteria. Failures, including a
/// fall or a solver error, become report entries.
pub fn mpc_bench(config: &MpcConfig) -> MpcBenchReport {
    let mut criteria = Vec::new();
    let entry = |name: &str, r: Result<(bool, f64, String), MpcError>| match r {
        Ok((pass, value, detail)) => BenchCriterion { name: name.into(), pass, value, detail },
        Err(e) => BenchCriterion { name: name.into(), pass: false, value: f64::NAN, detail: e.to_string() },
    };
    criteria.push(entry(
        "stabilization",
        stabilization_error(config).map(|e| {
            (e < STABILIZE_TOL, e, format!("max |phi| after {STABILIZE_TIME} s from phi0 = {STABILIZE_PHI0} rad"))
        }),
    ));
    criteria.push(entry(
        "tracking",
        tracking_mean_velocity(config).map(|v| {
            ((TRACK_V_REF - 0.1..=TRACK_V_REF + 0.1).contains(&v), v, format!("mean r_dot over final second, v_ref = {TRACK_V_REF}"))
        }),
    ));
    let iters = warm_cold_iterations(config, 100);
    let (warm, cold) = iters.as_ref().map(|&(w, c)| (w, c)).unwrap_or((f64::NAN, f64::NAN));
    criteria.push(entry(
        "warm_start",
        iters.map(|(w, c)| (w <= c, w, format!("median iterations warm {w} vs cold {c}"))),
    ));
    MpcBenchReport { criteria, warm_median_iterations: warm, cold_median_iterations: cold }
}
