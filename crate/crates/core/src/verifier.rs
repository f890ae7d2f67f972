//! Region-by-region certification of the subsolution, ordering checks
//! against simulated mass functions, and blow-up verdicts.

use std::fmt;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::mass::{
    p_residual, q_residual, MassError, MassState, OperatorResidual, PointDerivatives, ResidualSide,
};
use crate::model::DerivedConstants;
use crate::radial::{RadialSolver, RadialState, RunControls, RunReport, SolverError, StopReason};
use crate::subsolution::{Profile, SubsolutionError, SubsolutionSpec};

/// Residuals must satisfy max ≤ CERT_RTOL·(largest term magnitude).
pub const CERT_RTOL: f64 = 1e-9;
/// Ordering slack relative to max U.
pub const ORDER_RTOL: f64 = 1e-4;
/// Envelope slack relative to the local value.
pub const ENVELOPE_RTOL: f64 = 1e-4;
pub const MIN_NS: usize = 256;
pub const MIN_NT: usize = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("lattice {ns} x {nt} is too coarse (need Ns >= {MIN_NS}, Nt >= {MIN_NT})")]
    LatticeTooCoarse { ns: usize, nt: usize },
    #[error("hypothesis window is empty: {0}")]
    HypothesisWindowEmpty(String),
    #[error(transparent)]
    Subsolution(#[from] SubsolutionError),
    #[error(transparent)]
    Mass(#[from] MassError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionKind {
    /// (0, 1/y(t))
    Inner,
    /// (1/y(t), Rⁿ) ∩ (0, s*)
    IntermediateP,
    /// (1/y(t), Rⁿ) ∩ (0, s**)
    IntermediateQ,
    /// (1/y(t), Rⁿ) ∩ [s₀, Rⁿ)
    OuterP,
    /// (1/y(t), Rⁿ) ∩ [s₀, Rⁿ)
    OuterQ,
}

impl RegionKind {
    pub const ALL: [RegionKind; 5] = [
        RegionKind::Inner,
        RegionKind::IntermediateP,
        RegionKind::IntermediateQ,
        RegionKind::OuterP,
        RegionKind::OuterQ,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegionKind::Inner => "inner",
            RegionKind::IntermediateP => "intermediate-P",
            RegionKind::IntermediateQ => "intermediate-Q",
            RegionKind::OuterP => "outer-P",
            RegionKind::OuterQ => "outer-Q",
        }
    }

    fn contains(self, spec: &SubsolutionSpec, kink: f64, s: f64) -> bool {
        match self {
            RegionKind::Inner => s < kink,
            RegionKind::IntermediateP => s > kink && s < spec.s_star,
            RegionKind::IntermediateQ => s > kink && s < spec.s_2star,
            RegionKind::OuterP | RegionKind::OuterQ => s > kink && s >= spec.s0,
        }
    }
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sample counts: Ns points in s per sampled time, Nt sampled times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lattice {
    pub ns: usize,
    pub nt: usize,
}

/// Maxima of both operators over one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSummary {
    pub kind: RegionKind,
    pub max_p: f64,
    pub max_q: f64,
    /// Largest residual divided by its term scale, over both operators.
    pub max_rel: f64,
    pub s_worst: f64,
    pub t_worst: f64,
    pub samples: usize,
}

impl RegionSummary {
    fn empty(kind: RegionKind) -> Self {
        Self {
            kind,
            max_p: f64::NEG_INFINITY,
            max_q: f64::NEG_INFINITY,
            max_rel: f64::NEG_INFINITY,
            s_worst: f64::NAN,
            t_worst: f64::NAN,
            samples: 0,
        }
    }

    fn absorb(&mut self, pt: &SamplePoint) {
        self.samples += 1;
        self.max_p = self.max_p.max(pt.p);
        self.max_q = self.max_q.max(pt.q);
        let rel = pt.rel();
        if rel > self.max_rel {
            self.max_rel = rel;
            self.s_worst = pt.s;
            self.t_worst = pt.t;
        }
    }

    pub fn passes(&self) -> bool {
        self.samples > 0 && self.max_rel <= CERT_RTOL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub regions: Vec<RegionSummary>,
    pub lattice: Lattice,
    pub tol_rel: f64,
    /// Lattice points (off the kink) not covered by a P region and a Q region.
    pub uncovered: usize,
    pub pass: bool,
    pub notes: Vec<String>,
    pub spec: SubsolutionSpec,
}

#[derive(Debug, Clone, Copy)]
struct SamplePoint {
    s: f64,
    t: f64,
    p: f64,
    q: f64,
    p_scale: f64,
    q_scale: f64,
}

impl SamplePoint {
    fn rel(&self) -> f64 {
        (self.p / self.p_scale.max(f64::MIN_POSITIVE)).max(self.q / self.q_scale.max(f64::MIN_POSITIVE))
    }
}

/// Sample times: half uniform on [0, T), half accumulating at T.
fn time_samples(spec: &SubsolutionSpec, nt: usize) -> Vec<f64> {
    let half = nt / 2;
    let horizon = spec.horizon;
    let mut out: Vec<f64> = (0..half).map(|j| horizon * j as f64 / half as f64).collect();
    let rest = nt - half;
    for k in 1..=rest {
        out.push(horizon * (1.0 - 10f64.powf(-10.0 * k as f64 / rest as f64)));
    }
    out
}

fn log_space(lo: f64, hi: f64, count: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(move |i| {
        if count == 1 {
            lo
        } else {
            (a + (b - a) * i as f64 / (count - 1) as f64).exp()
        }
    })
}

/// s samples at one time: a quarter inside the kink, the rest outside,
/// plus both sides of the kink, s*, s**, s₀ and the outer edge.
fn s_samples(spec: &SubsolutionSpec, kink: f64, ns: usize) -> Vec<f64> {
    let top = spec.radius.powi(spec.n as i32);
    let edge = 1.0 - 1e-9;
    let inner = ns / 4;
    let mut out: Vec<f64> = log_space(kink * 1e-12, kink * edge, inner).collect();
    out.extend(log_space(kink / edge, top * (1.0 - 1e-12), ns - inner));
    for anchor in [spec.s0, spec.s_star, spec.s_2star] {
        for x in [anchor * edge, anchor, anchor / edge] {
            if x > 0.0 && x < top && x != kink {
                out.push(x);
            }
        }
    }
    out.retain(|&s| s > 0.0 && s < top && s != kink);
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

fn evaluate(spec: &SubsolutionSpec, s: f64, t: f64) -> Result<SamplePoint, VerifyError> {
    let n = spec.n;
    let nf = n as f64;
    let u = spec.eval_sub(Profile::U, s, t)?;
    let w = spec.eval_sub(Profile::W, s, t)?;
    let (phi, psi) = (PointDerivatives::left(&u), PointDerivatives::left(&w));
    let p = p_residual(&phi, &psi, spec.mu_hi, n, s)?;
    let q = q_residual(&phi, &psi, spec.k_big, spec.sigma, n, s)?;
    let diff = nf * nf * s.powf(2.0 - 2.0 / nf);
    let p_scale = [
        phi.d_t.abs(),
        (diff * phi.d_ss).abs(),
        (nf * phi.d_s * psi.value).abs(),
        (phi.d_s * spec.mu_hi * s).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    let q_scale = [
        psi.d_t.abs(),
        (diff * psi.d_ss).abs(),
        psi.value.abs(),
        spec.k_big * s.powf(1.0 - spec.sigma) * phi.value.max(0.0).powf(spec.sigma),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    Ok(SamplePoint {
        s,
        t,
        p,
        q,
        p_scale,
        q_scale,
    })
}

/// Evaluates both operators on the closed-form subsolution over a lattice
/// covering every region.
pub fn certify_subsolution(
    spec: &SubsolutionSpec,
    lattice: Lattice,
) -> Result<Certificate, VerifyError> {
    if lattice.ns < MIN_NS || lattice.nt < MIN_NT {
        return Err(VerifyError::LatticeTooCoarse {
            ns: lattice.ns,
            nt: lattice.nt,
        });
    }
    let times = time_samples(spec, lattice.nt);
    let per_time: Vec<Result<(Vec<RegionSummary>, usize), VerifyError>> = times
        .par_iter()
        .map(|&t| {
            let kink = 1.0 / spec.y_of_t(t)?;
            let mut regions: Vec<RegionSummary> =
                RegionKind::ALL.iter().map(|&k| RegionSummary::empty(k)).collect();
            let mut uncovered = 0;
            for s in s_samples(spec, kink, lattice.ns) {
                let pt = evaluate(spec, s, t)?;
                let mut p_cov = false;
                let mut q_cov = false;
                for region in regions.iter_mut() {
                    if region.kind.contains(spec, kink, s) {
                        region.absorb(&pt);
                        match region.kind {
                            RegionKind::Inner => {
                                p_cov = true;
                                q_cov = true;
                            }
                            RegionKind::IntermediateP | RegionKind::OuterP => p_cov = true,
                            RegionKind::IntermediateQ | RegionKind::OuterQ => q_cov = true,
                        }
                    }
                }
                if !(p_cov && q_cov) {
                    uncovered += 1;
                }
            }
            Ok((regions, uncovered))
        })
        .collect();

    let mut regions: Vec<RegionSummary> =
        RegionKind::ALL.iter().map(|&k| RegionSummary::empty(k)).collect();
    let mut uncovered = 0;
    for item in per_time {
        let (local, unc) = item?;
        uncovered += unc;
        for (acc, part) in regions.iter_mut().zip(local) {
            acc.samples += part.samples;
            acc.max_p = acc.max_p.max(part.max_p);
            acc.max_q = acc.max_q.max(part.max_q);
            if part.max_rel > acc.max_rel {
                acc.max_rel = part.max_rel;
                acc.s_worst = part.s_worst;
                acc.t_worst = part.t_worst;
            }
        }
    }
    let pass = uncovered == 0 && regions.iter().all(RegionSummary::passes);
    Ok(Certificate {
        regions,
        lattice,
        tol_rel: CERT_RTOL,
        uncovered,
        pass,
        notes: certificate_notes(spec),
        spec: spec.clone(),
    })
}

fn certificate_notes(spec: &SubsolutionSpec) -> Vec<String> {
    let r = &spec.theta_2star_readings;
    vec![
        "time window sampled: [0, T); the inner and intermediate estimates are stated on (0, T) ∩ (0, 1/theta), which equals (0, T) since T < 1/theta".to_string(),
        format!(
            "outer-Q threshold: the derived bound carries s0^(-2/n) without the factor a, the stated one carries a and s0^(-n/2); theta_2star takes the max of all four readings ({:e}, {:e}, {:e}, {:e}), dominant = {}",
            r[0], r[1], r[2], r[3], spec.theta_2star_reading
        ),
    ]
}

impl Certificate {
    /// Flat text report; identical inputs give identical bytes.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "certificate: {}", if self.pass { "PASS" } else { "FAIL" });
        let _ = writeln!(out, "lattice: Ns = {}, Nt = {}", self.lattice.ns, self.lattice.nt);
        let _ = writeln!(out, "tolerance: residual <= {:e} * term scale", self.tol_rel);
        let _ = writeln!(out, "uncovered points: {}", self.uncovered);
        for r in &self.regions {
            let _ = writeln!(
                out,
                "region {:<15} samples {:>8}  max_p {:+.6e}  max_q {:+.6e}  max_rel {:+.6e}  worst (s, t) = ({:e}, {:e})  {}",
                r.kind.as_str(),
                r.samples,
                r.max_p,
                r.max_q,
                r.max_rel,
                r.s_worst,
                r.t_worst,
                if r.passes() { "ok" } else { "FAIL" }
            );
        }
        for note in &self.notes {
            let _ = writeln!(out, "note: {note}");
        }
        out.push_str("parameters:\n");
        for line in self.spec.to_config_string().lines() {
            let _ = writeln!(out, "  {line}");
        }
        out
    }

    /// CSV with columns region, max_p, max_q, s_worst, t_worst.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("region,max_p,max_q,s_worst,t_worst\n");
        for r in &self.regions {
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{:e}",
                r.kind.as_str(),
                r.max_p,
                r.max_q,
                r.s_worst,
                r.t_worst
            );
        }
        out
    }

    pub fn region(&self, kind: RegionKind) -> &RegionSummary {
        self.regions.iter().find(|r| r.kind == kind).expect("all regions present")
    }
}

/// Residuals on a small (s, t) lattice for heat maps. At the kink both
/// one-sided limits are recorded.
pub fn residual_sweep(
    spec: &SubsolutionSpec,
    ns: usize,
    nt: usize,
) -> Result<Vec<OperatorResidual>, VerifyError> {
    let n = spec.n;
    let mut rows = Vec::new();
    for t in time_samples(spec, nt) {
        let kink = 1.0 / spec.y_of_t(t)?;
        for s in s_samples(spec, kink, ns) {
            let pt = evaluate(spec, s, t)?;
            rows.push(OperatorResidual {
                s,
                t,
                p_value: pt.p,
                q_value: pt.q,
                side: ResidualSide::Interior,
            });
        }
        let u = spec.eval_sub(Profile::U, kink, t)?;
        let w = spec.eval_sub(Profile::W, kink, t)?;
        for (side, phi, psi) in [
            (ResidualSide::Left, PointDerivatives::left(&u), PointDerivatives::left(&w)),
            (ResidualSide::Right, PointDerivatives::right(&u), PointDerivatives::right(&w)),
        ] {
            rows.push(OperatorResidual {
                s: kink,
                t,
                p_value: p_residual(&phi, &psi, spec.mu_hi, n, kink)?,
                q_value: q_residual(&phi, &psi, spec.k_big, spec.sigma, n, kink)?,
                side,
            });
        }
    }
    rows.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.s.total_cmp(&b.s)));
    Ok(rows)
}

/// First point where U fell below the subsolution by more than the slack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub t: f64,
    pub s: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingReport {
    /// Number of states checked (those with t < T).
    pub checked: usize,
    /// Last time at which the hypothesis window still held.
    pub window_end: f64,
    pub states_in_window: usize,
    /// min over the window of min_s (U − uU).
    pub min_margin_window: f64,
    /// min over all checked states of min_s (U − uU).
    pub min_margin_run: f64,
    /// ORDER_RTOL · max U over the checked states.
    pub tol: f64,
    pub first_violation: Option<Violation>,
    /// min over the window of min_s (W − uW); informational.
    pub min_margin_w: f64,
    /// U(0) = W(0) = 0 and U, W ≥ uU, uW at s = Rⁿ at every checked time.
    pub boundary_ok: bool,
    /// U(·,0) ≥ uU(·,0) and W(·,0) ≥ uW(·,0) at every node.
    pub initial_ok: bool,
}

impl OrderingReport {
    pub fn window_ok(&self) -> bool {
        self.min_margin_window >= -self.tol
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "states checked: {}", self.checked);
        let _ = writeln!(out, "hypothesis window: {} states, ends at t = {:e}", self.states_in_window, self.window_end);
        let _ = writeln!(out, "min margin U - uU (window): {:e}", self.min_margin_window);
        let _ = writeln!(out, "min margin U - uU (run): {:e}", self.min_margin_run);
        let _ = writeln!(out, "tolerance: {:e}", self.tol);
        let _ = writeln!(out, "min margin W - uW (window, informational): {:e}", self.min_margin_w);
        let _ = writeln!(out, "boundary hypothesis: {}", self.boundary_ok);
        let _ = writeln!(out, "initial hypothesis: {}", self.initial_ok);
        match self.first_violation {
            Some(v) => {
                let _ = writeln!(out, "first violation: t = {:e}, s = {:e}, margin = {:e}", v.t, v.s, v.margin);
            }
            None => out.push_str("first violation: none\n"),
        }
        out
    }
}

fn in_window(ms: &MassState, dc: &DerivedConstants, w0_sup: f64) -> bool {
    let mu = ms.mean_w();
    let w_sup = ms.grid.n as f64 * ms.w_s.iter().copied().fold(0.0, f64::max);
    mu >= dc.mu_lo * (1.0 - 1e-9) && mu <= dc.mu_hi && w_sup <= 2.0 * w0_sup * (1.0 + 1e-12)
}

/// Checks U ≥ uU nodewise along a simulated sequence of mass states. States
/// must come from [`crate::mass::cumulate`] so that W_s = w/n.
pub fn compare_orderings(
    sim: &[MassState],
    spec: &SubsolutionSpec,
    dc: &DerivedConstants,
) -> Result<OrderingReport, VerifyError> {
    let Some(first) = sim.first() else {
        return Err(VerifyError::HypothesisWindowEmpty("no states".into()));
    };
    let n = first.grid.n as f64;
    let w0_sup = n * first.w_s.iter().copied().fold(0.0, f64::max);
    if !in_window(first, dc, w0_sup) {
        return Err(VerifyError::HypothesisWindowEmpty(format!(
            "mu_w(0) = {:e} outside [{:e}, {:e}]",
            first.mean_w(),
            dc.mu_lo,
            dc.mu_hi
        )));
    }
    let checked: Vec<&MassState> = sim.iter().take_while(|ms| ms.t < spec.horizon).collect();
    let u_max = checked
        .iter()
        .map(|ms| ms.u.iter().copied().fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let tol = ORDER_RTOL * u_max;

    let mut report = OrderingReport {
        checked: checked.len(),
        window_end: first.t,
        states_in_window: 0,
        min_margin_window: f64::INFINITY,
        min_margin_run: f64::INFINITY,
        tol,
        first_violation: None,
        min_margin_w: f64::INFINITY,
        boundary_ok: true,
        initial_ok: true,
    };
    let mut window_open = true;
    for (k, ms) in checked.iter().enumerate() {
        window_open = window_open && in_window(ms, dc, w0_sup);
        let last = ms.grid.len() - 1;
        let mut min_u = (f64::INFINITY, 0.0);
        let mut min_w = f64::INFINITY;
        for i in 0..=last {
            let s = ms.grid.s[i];
            let su = spec.eval_sub(Profile::U, s, ms.t)?.value;
            let sw = spec.eval_sub(Profile::W, s, ms.t)?.value;
            let mu = ms.u[i] - su;
            if mu < min_u.0 {
                min_u = (mu, s);
            }
            min_w = min_w.min(ms.w[i] - sw);
            if i == last && (mu < -tol || ms.w[i] < sw) {
                report.boundary_ok = false;
            }
        }
        if ms.u[0] != 0.0 || ms.w[0] != 0.0 {
            report.boundary_ok = false;
        }
        if k == 0 && (min_u.0 < 0.0 || min_w < 0.0) {
            report.initial_ok = false;
        }
        report.min_margin_run = report.min_margin_run.min(min_u.0);
        if window_open {
            report.states_in_window += 1;
            report.window_end = ms.t;
            report.min_margin_window = report.min_margin_window.min(min_u.0);
            report.min_margin_w = report.min_margin_w.min(min_w);
        }
        if report.first_violation.is_none() && min_u.0 < -tol {
            report.first_violation = Some(Violation {
                t: ms.t,
                s: min_u.1,
                margin: min_u.0,
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlowupVerdict {
    /// Threshold reached before min(T, T⋆).
    pub blew_up_before: bool,
    pub t_trigger: Option<f64>,
    /// u(0,t) ≥ e^{−θt} a y^{1−α}(t) at every checked time, up to slack.
    pub lower_envelope_check: bool,
    /// Smallest (u(0,t) − envelope)/max(u(0,t), envelope) over checked times.
    pub envelope_min_rel: f64,
    pub envelope_points: usize,
}

/// Reads the run's threshold verdict and checks the pointwise lower bound
/// at the axis for recorded times t < T (and t ≤ `window_end` if given).
pub fn detect_blowup(
    report: &RunReport,
    spec: &SubsolutionSpec,
    window_end: Option<f64>,
) -> Result<BlowupVerdict, VerifyError> {
    let deadline = spec.horizon.min(spec.t_star);
    let t_trigger = if report.blowup_flag {
        report.blowup_time_estimate
    } else {
        None
    };
    let blew_up_before = matches!(t_trigger, Some(t) if t < deadline);
    let limit = window_end.unwrap_or(f64::INFINITY);
    let mut min_rel = f64::INFINITY;
    let mut points = 0;
    for (&t, &axis) in report.times.iter().zip(&report.u_axis_history) {
        if t >= spec.horizon || t > limit {
            break;
        }
        let env = spec.axis_envelope(t)?;
        min_rel = min_rel.min((axis - env) / axis.max(env));
        points += 1;
    }
    Ok(BlowupVerdict {
        blew_up_before,
        t_trigger,
        lower_envelope_check: points > 0 && min_rel >= -ENVELOPE_RTOL,
        envelope_min_rel: min_rel,
        envelope_points: points,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundednessReport {
    /// sup u stayed below 10·sup u₀ over the whole horizon.
    pub bounded: bool,
    pub max_ratio: f64,
    pub horizon: f64,
    pub final_time: f64,
    pub stop_reason: StopReason,
}

/// Smooth radially decreasing data 1 + cos(πr/R), scaled to the given mean.
pub fn bump_data(grid: &crate::grid::RadialGrid, mean: f64) -> Vec<f64> {
    let shape: Vec<f64> = grid
        .r
        .iter()
        .map(|r| 1.0 + (std::f64::consts::PI * r / grid.radius).cos())
        .collect();
    let scale = mean * grid.volume() / grid.integrate(&shape);
    shape.into_iter().map(|x| x * scale).collect()
}

/// Runs the primitive solver and reports whether sup u stays below ten
/// times its initial value.
pub fn boundedness_probe(
    solver: &RadialSolver,
    state0: RadialState,
    controls: &RunControls,
) -> Result<(BoundednessReport, RunReport), VerifyError> {
    let mut controls = controls.clone();
    controls.blowup_factor = controls.blowup_factor.min(10.0);
    let run = solver.run(state0, &controls)?;
    let sup0 = run.sup_u_history[0];
    let max = run.sup_u_history.iter().copied().fold(0.0, f64::max);
    let max_ratio = max / sup0;
    Ok((
        BoundednessReport {
            bounded: max_ratio < 10.0 && run.stop_reason == StopReason::Horizon,
            max_ratio,
            horizon: controls.t_end,
            final_time: run.final_time,
            stop_reason: run.stop_reason,
        },
        run,
    ))
}
