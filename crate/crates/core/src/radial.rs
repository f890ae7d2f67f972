//! Radially symmetric solver for the primitive (u, v, w) system.
//!
//! Finite volumes on a [`RadialGrid`]: diffusion of u and w is implicit, the
//! chemotactic flux u∇v is upwinded and explicit, and the reaction −w + f(u)
//! is explicit. The elliptic equation for v is solved exactly in the radial
//! setting by a single cumulative quadrature:
//!
//! ```text
//! r^{n−1} v_r(r) = μ_w rⁿ/n − ∫_0^r ρ^{n−1} w(ρ) dρ
//! ```
//!
//! so the face velocities needed by the transport step are partial sums over
//! cells and the discrete mass of u is conserved to round-off.

use thiserror::Error;

use crate::grid::RadialGrid;
use crate::model::{ModelError, ModelParams};
use crate::tridiag::Tridiagonal;

/// Relative tolerance on the mean of w handed to [`solve_v`].
pub const MEAN_RTOL: f64 = 1e-9;
/// Admissible negative undershoot relative to the field maximum.
pub const NEGATIVITY_RTOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("supplied mean of w ({given}) differs from the quadrature mean ({actual})")]
    MeanMismatch { given: f64, actual: f64 },
    #[error("time step {dt} exceeds the transport stability bound {bound}")]
    StabilityViolated { dt: f64, bound: f64 },
    #[error("{field} became negative ({min}) beyond round-off relative to its maximum {max}")]
    NegativeDensityProduced {
        field: &'static str,
        min: f64,
        max: f64,
    },
    #[error("field length {got} does not match the grid ({expected} nodes)")]
    LengthMismatch { got: usize, expected: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Primitive fields at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialState {
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    /// Radial derivative of v at the nodes.
    pub v_r: Vec<f64>,
    /// Mean of w, the constant in the elliptic equation.
    pub mu_w: f64,
}

impl RadialState {
    /// Builds a state from u and w, solving for v.
    pub fn new(grid: &RadialGrid, t: f64, u: Vec<f64>, w: Vec<f64>) -> Result<Self, SolverError> {
        for (name, f) in [("u", &u), ("w", &w)] {
            if f.len() != grid.nodes() {
                return Err(SolverError::LengthMismatch {
                    got: f.len(),
                    expected: grid.nodes(),
                });
            }
            if f.iter().any(|x| !x.is_finite()) {
                return Err(SolverError::NonFinite(name));
            }
        }
        let mu_w = grid.mean(&w);
        let (v, v_r) = solve_v(grid, &w, mu_w)?;
        Ok(Self {
            t,
            u,
            v,
            w,
            v_r,
            mu_w,
        })
    }

    pub fn sup_u(&self) -> f64 {
        self.u.iter().copied().fold(0.0, f64::max)
    }

    pub fn sup_w(&self) -> f64 {
        self.w.iter().copied().fold(0.0, f64::max)
    }
}

/// Solves 0 = Δv − μ_w + w with Neumann data and ∫_Ω v = 0.
///
/// Returns (v, v_r) at the nodes.
pub fn solve_v(grid: &RadialGrid, w: &[f64], mu_w: f64) -> Result<(Vec<f64>, Vec<f64>), SolverError> {
    let actual = grid.mean(w);
    if (actual - mu_w).abs() > MEAN_RTOL * actual.abs().max(mu_w.abs()).max(f64::MIN_POSITIVE) {
        return Err(SolverError::MeanMismatch {
            given: mu_w,
            actual,
        });
    }
    let n = grid.n as f64;
    let cum = grid.cumulate_nodes(w);
    let last = grid.cells();
    let v_r: Vec<f64> = (0..grid.nodes())
        .map(|i| {
            if i == 0 || i == last {
                0.0
            } else {
                (mu_w * grid.s[i] / n - cum[i]) / grid.r[i].powi(grid.n as i32 - 1)
            }
        })
        .collect();
    let mut v = vec![0.0; grid.nodes()];
    for i in 1..grid.nodes() {
        v[i] = v[i - 1] + 0.5 * (v_r[i] + v_r[i - 1]) * (grid.r[i] - grid.r[i - 1]);
    }
    let mean = grid.mean(&v);
    v.iter_mut().for_each(|x| *x -= mean);
    Ok((v, v_r))
}

/// Residual of r^{n−1} v_r at R, i.e. μ_w Rⁿ/n − ∫_0^R ρ^{n−1} w dρ. Zero up
/// to round-off when μ_w is the quadrature mean.
pub fn outer_flux_residual(grid: &RadialGrid, w: &[f64], mu_w: f64) -> f64 {
    let faces = grid.cumulate_faces(w);
    mu_w * grid.s_face[grid.cells() + 1] / grid.n as f64 - faces[grid.cells() + 1]
}

/// Time-integration controls for [`RadialSolver::run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunControls {
    pub t_end: f64,
    pub dt_init: f64,
    /// An adaptive step below this value is read as blow-up.
    pub dt_min: f64,
    /// Blow-up is declared once ‖u‖_∞ ≥ blowup_factor·‖u₀‖_∞.
    pub blowup_factor: f64,
    /// Safety factor on the transport stability bound.
    pub c_adv: f64,
    /// Hard cap on the number of steps.
    pub max_steps: usize,
    /// Optional window [μ*, μ⋆] whose first exit by μ_w(t) is recorded.
    pub mu_window: Option<(f64, f64)>,
}

impl Default for RunControls {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            dt_init: 1e-4,
            dt_min: 0.0,
            blowup_factor: 1e6,
            c_adv: 0.5,
            max_steps: 2_000_000,
            mu_window: None,
        }
    }
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Horizon,
    Threshold,
    StepCollapse,
    StepLimit,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Horizon => "horizon",
            StopReason::Threshold => "threshold",
            StopReason::StepCollapse => "step_collapse",
            StopReason::StepLimit => "step_limit",
        }
    }
}

/// Time series and verdict of one primitive run. All histories share the
/// time axis `times`; entry 0 is the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub final_time: f64,
    pub step_count: usize,
    /// max_t |∫u(t) − ∫u₀| / ∫u₀.
    pub mass_drift: f64,
    pub times: Vec<f64>,
    pub sup_u_history: Vec<f64>,
    pub sup_w_history: Vec<f64>,
    pub mass_u_history: Vec<f64>,
    pub muw_history: Vec<f64>,
    pub dt_history: Vec<f64>,
    /// Solution value at the axis r = 0.
    pub u_axis_history: Vec<f64>,
    pub blowup_flag: bool,
    pub blowup_time_estimate: Option<f64>,
    /// First time ‖w‖_∞ > 2‖w₀‖_∞.
    pub t0_estimate: Option<f64>,
    /// First time μ_w(t) leaves the configured window.
    pub mu_window_exit: Option<f64>,
    pub stop_reason: StopReason,
}

impl RunReport {
    fn start(state: &RadialState, mass: f64) -> Self {
        Self {
            final_time: state.t,
            step_count: 0,
            mass_drift: 0.0,
            times: vec![state.t],
            sup_u_history: vec![state.sup_u()],
            sup_w_history: vec![state.sup_w()],
            mass_u_history: vec![mass],
            muw_history: vec![state.mu_w],
            dt_history: vec![0.0],
            u_axis_history: vec![state.u[0]],
            blowup_flag: false,
            blowup_time_estimate: None,
            t0_estimate: None,
            mu_window_exit: None,
            stop_reason: StopReason::Horizon,
        }
    }

    fn record(&mut self, state: &RadialState, mass: f64, dt: f64) {
        self.times.push(state.t);
        self.sup_u_history.push(state.sup_u());
        self.sup_w_history.push(state.sup_w());
        self.mass_u_history.push(mass);
        self.muw_history.push(state.mu_w);
        self.dt_history.push(dt);
        self.u_axis_history.push(state.u[0]);
        self.final_time = state.t;
    }

    /// CSV with columns t, sup_u, sup_w, mass_u, mu_w, dt.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,sup_u,sup_w,mass_u,mu_w,dt\n");
        for i in 0..self.times.len() {
            out.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e},{:e}\n",
                self.times[i],
                self.sup_u_history[i],
                self.sup_w_history[i],
                self.mass_u_history[i],
                self.muw_history[i],
                self.dt_history[i]
            ));
        }
        out
    }
}

/// Full-field dump (r, u, v, w) of one state.
pub fn checkpoint_csv(grid: &RadialGrid, state: &RadialState) -> String {
    let mut out = String::from("r,u,v,w\n");
    for i in 0..grid.nodes() {
        out.push_str(&format!(
            "{:e},{:e},{:e},{:e}\n",
            grid.r[i], state.u[i], state.v[i], state.w[i]
        ));
    }
    out
}

/// Rate used by the reaction step limiter dt ≤ 0.1 / max(1, rate).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReactionLimiter {
    /// f′(‖u‖_∞).
    Slope,
    /// √(‖u‖_∞ f′(‖u‖_∞)), the growth rate of the local kinetics
    /// u′ = uw, w′ = f(u). Much larger steps when σ > 2 and u is huge.
    Kinetic,
}

impl std::str::FromStr for ReactionLimiter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "slope" => Ok(ReactionLimiter::Slope),
            "kinetic" => Ok(ReactionLimiter::Kinetic),
            other => Err(format!("unknown reaction limiter `{other}` (expected slope or kinetic)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RadialSolver {
    pub grid: RadialGrid,
    pub params: ModelParams,
    /// Safety factor on the transport bound checked by [`RadialSolver::step`].
    pub c_adv: f64,
    pub limiter: ReactionLimiter,
    /// Diffusive conductances r_{j−1/2}^{n−1} / (r_j − r_{j−1}) for interior faces.
    conductance: Vec<f64>,
}

impl RadialSolver {
    pub fn new(grid: RadialGrid, params: ModelParams) -> Self {
        let m = grid.cells();
        let mut conductance = vec![0.0; m + 2];
        for (j, c) in conductance.iter_mut().enumerate().take(m + 1).skip(1) {
            *c = grid.r_face[j].powi(grid.n as i32 - 1) / (grid.r[j] - grid.r[j - 1]);
        }
        Self {
            grid,
            params,
            c_adv: 0.5,
            limiter: ReactionLimiter::Slope,
            conductance,
        }
    }

    pub fn with_c_adv(mut self, c_adv: f64) -> Self {
        self.c_adv = c_adv;
        self
    }

    /// r^{n−1} v_r at every face, j = 0..=M+1. Boundary faces carry no flux.
    fn face_velocity(&self, state: &RadialState) -> Vec<f64> {
        let g = &self.grid;
        let n = g.n as f64;
        let cum = g.cumulate_faces(&state.w);
        let m = g.cells();
        (0..m + 2)
            .map(|j| {
                if j == 0 || j == m + 1 {
                    0.0
                } else {
                    state.mu_w * g.s_face[j] / n - cum[j]
                }
            })
            .collect()
    }

    /// Largest step for which the explicit upwind transport keeps every cell
    /// nonnegative, times `c_adv`.
    pub fn stability_bound(&self, state: &RadialState) -> f64 {
        let vel = self.face_velocity(state);
        self.c_adv * transport_bound(&self.grid, &vel)
    }

    pub fn with_limiter(mut self, limiter: ReactionLimiter) -> Self {
        self.limiter = limiter;
        self
    }

    /// Explicit-reaction limiter, see [`ReactionLimiter`].
    pub fn reaction_bound(&self, state: &RadialState) -> Result<f64, SolverError> {
        let u = state.sup_u();
        let slope = self.params.production_slope(u)?;
        let rate = match self.limiter {
            ReactionLimiter::Slope => slope,
            ReactionLimiter::Kinetic => (u * slope).sqrt(),
        };
        Ok(0.1 / rate.max(1.0))
    }

    /// One IMEX step of length `dt`.
    pub fn step(&self, state: &RadialState, dt: f64) -> Result<RadialState, SolverError> {
        let g = &self.grid;
        let m = g.cells();
        let vel = self.face_velocity(state);
        let bound = self.c_adv * transport_bound(g, &vel);
        if dt > bound * (1.0 + 1e-12) {
            return Err(SolverError::StabilityViolated { dt, bound });
        }

        // upwinded chemotactic flux through each face
        let flux: Vec<f64> = (0..m + 2)
            .map(|j| {
                if j == 0 || j == m + 1 {
                    0.0
                } else if vel[j] > 0.0 {
                    vel[j] * state.u[j - 1]
                } else {
                    vel[j] * state.u[j]
                }
            })
            .collect();

        let mut rhs_u: Vec<f64> = (0..=m)
            .map(|i| g.cell[i] * state.u[i] - dt * (flux[i + 1] - flux[i]))
            .collect();
        let mut rhs_w = Vec::with_capacity(m + 1);
        for i in 0..=m {
            let f = self.params.production_rate(state.u[i].max(0.0))?;
            rhs_w.push(g.cell[i] * (state.w[i] + dt * (f - state.w[i])));
        }

        let matrix = self.diffusion_matrix(dt);
        matrix.solve_in_place(&mut rhs_u);
        matrix.solve_in_place(&mut rhs_w);
        let u = clip_nonnegative("u", rhs_u)?;
        let w = clip_nonnegative("w", rhs_w)?;
        RadialState::new(g, state.t + dt, u, w)
    }

    /// cell_i + dt·(conductances) on the diagonal.
    fn diffusion_matrix(&self, dt: f64) -> Tridiagonal {
        let g = &self.grid;
        let m = g.cells();
        let mut a = Tridiagonal::zeros(m + 1);
        for i in 0..=m {
            let left = self.conductance[i];
            let right = self.conductance[i + 1];
            a.diag[i] = g.cell[i] + dt * (left + right);
            a.lower[i] = -dt * left;
            a.upper[i] = -dt * right;
        }
        a
    }

    /// Integrates from `state0` under `controls`.
    pub fn run(&self, state0: RadialState, controls: &RunControls) -> Result<RunReport, SolverError> {
        self.run_observed(state0, controls, |_| {})
    }

    /// As [`RadialSolver::run`], calling `observe` on every accepted state
    /// (including the initial one).
    pub fn run_observed<F>(
        &self,
        state0: RadialState,
        controls: &RunControls,
        mut observe: F,
    ) -> Result<RunReport, SolverError>
    where
        F: FnMut(&RadialState),
    {
        let g = &self.grid;
        let mass0 = g.integrate(&state0.u);
        let sup0 = state0.sup_u();
        let w_sup0 = state0.sup_w();
        let mut report = RunReport::start(&state0, mass0);
        observe(&state0);
        let check_window = |report: &mut RunReport, state: &RadialState| {
            if let Some((lo, hi)) = controls.mu_window {
                if report.mu_window_exit.is_none() && (state.mu_w < lo || state.mu_w > hi) {
                    report.mu_window_exit = Some(state.t);
                }
            }
        };
        check_window(&mut report, &state0);

        let mut state = state0;
        let mut dt_prev = controls.dt_init;
        let t_end = controls.t_end;
        while state.t < t_end {
            if report.step_count >= controls.max_steps {
                report.stop_reason = StopReason::StepLimit;
                break;
            }
            let dt_adaptive = (dt_prev * 1.2)
                .min(self.stability_bound(&state))
                .min(self.reaction_bound(&state)?);
            if report.step_count == 0 {
                dt_prev = controls.dt_init.min(dt_adaptive);
            } else {
                dt_prev = dt_adaptive;
            }
            if dt_prev < controls.dt_min {
                report.blowup_flag = true;
                report.blowup_time_estimate = Some(state.t);
                report.stop_reason = StopReason::StepCollapse;
                break;
            }
            let remaining = t_end - state.t;
            let dt = if remaining <= dt_prev * (1.0 + 1e-9) {
                remaining
            } else {
                dt_prev
            };
            state = self.step(&state, dt)?;
            if dt == remaining {
                state.t = t_end;
            }
            report.step_count += 1;
            let mass = g.integrate(&state.u);
            report.mass_drift = report.mass_drift.max((mass - mass0).abs() / mass0.abs().max(f64::MIN_POSITIVE));
            report.record(&state, mass, dt);
            observe(&state);
            check_window(&mut report, &state);
            if report.t0_estimate.is_none() && state.sup_w() > 2.0 * w_sup0 {
                report.t0_estimate = Some(state.t);
            }
            if state.sup_u() >= controls.blowup_factor * sup0 {
                report.blowup_flag = true;
                report.blowup_time_estimate = Some(state.t);
                report.stop_reason = StopReason::Threshold;
                break;
            }
        }
        Ok(report)
    }
}

/// min over cells of cell_i / (outflow speed of cell i).
fn transport_bound(grid: &RadialGrid, vel: &[f64]) -> f64 {
    let mut bound = f64::INFINITY;
    for i in 0..grid.nodes() {
        let out = vel[i + 1].max(0.0) + (-vel[i]).max(0.0);
        if out > 0.0 {
            bound = bound.min(grid.cell[i] / out);
        }
    }
    bound
}

fn clip_nonnegative(field: &'static str, mut x: Vec<f64>) -> Result<Vec<f64>, SolverError> {
    let max = x.iter().copied().fold(0.0, f64::max);
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite(field));
    }
    if min < -NEGATIVITY_RTOL * max {
        return Err(SolverError::NegativeDensityProduced { field, min, max });
    }
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(x)
}
