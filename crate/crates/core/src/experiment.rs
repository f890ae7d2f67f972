//! Experiment pipeline: select parameters, certify, generate data, simulate,
//! compare, and write every artifact to an output directory.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{self, ConfigError, KvPairs};
use crate::grid::{GridError, RadialGrid, Spacing};
use crate::mass::{cumulate, residual_csv, MassState};
use crate::model::{ball_volume, DerivedConstants, ModelError, ModelParams, Mode};
use crate::radial::{
    checkpoint_csv, RadialSolver, RadialState, ReactionLimiter, RunControls, RunReport, SolverError,
};
use crate::subsolution::{
    initial_data, select_exponents, select_parameters, Profile, SubsolutionError, SubsolutionSpec,
};
use crate::verifier::{
    boundedness_probe, bump_data, certify_subsolution, compare_orderings, detect_blowup,
    residual_sweep, Certificate, Lattice, OrderingReport, VerifyError,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CERTIFICATION: i32 = 2;
pub const EXIT_VERDICT: i32 = 3;

/// Cap on mass states kept for the ordering check; the sampling stride
/// doubles whenever it is reached.
pub const MAX_RECORDED_STATES: usize = 4096;

/// Every key an experiment file may contain.
pub const EXPERIMENT_KEYS: &[&str] = &[
    "n",
    "R",
    "k",
    "sigma",
    "M_lo",
    "M_hi",
    "mu_lo",
    "mass_ratio",
    "mode",
    "M",
    "first_radius",
    "Ns",
    "Nt",
    "t_end",
    "dt_init",
    "dt_min",
    "blowup_factor",
    "T_star",
    "max_steps",
    "record_every",
    "reaction_limiter",
    "probe_mean",
    "reference_sigma",
    "sigmas",
    "scenario",
    "out",
];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Subsolution(#[from] SubsolutionError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("i/o error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Blowup,
    SubcriticalProbe,
    CertifyOnly,
    Sweep,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Blowup => "blowup",
            Scenario::SubcriticalProbe => "subcritical-probe",
            Scenario::CertifyOnly => "certify-only",
            Scenario::Sweep => "sweep",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "blowup" => Scenario::Blowup,
            "subcritical-probe" => Scenario::SubcriticalProbe,
            "certify-only" => Scenario::CertifyOnly,
            "sweep" => Scenario::Sweep,
            other => {
                return Err(format!(
                    "unknown scenario `{other}` (expected blowup, subcritical-probe, certify-only or sweep)"
                ))
            }
        })
    }
}

/// How the radial grid is placed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Grading {
    Uniform,
    /// First node at 1e−4 times the initial kink radius (blow-up runs).
    Auto,
    FirstRadius(f64),
}

impl std::str::FromStr for Grading {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Grading::Uniform),
            "auto" => Ok(Grading::Auto),
            other => other
                .parse::<f64>()
                .map(Grading::FirstRadius)
                .map_err(|_| format!("expected `uniform`, `auto` or a radius, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub params: ModelParams,
    /// Validation mode if given explicitly; otherwise implied by the scenario.
    pub mode: Option<Mode>,
    pub cells: usize,
    pub grading: Grading,
    pub lattice: Lattice,
    /// Run horizon; defaults to T (blow-up) or 10·T_ref (probe).
    pub t_end: Option<f64>,
    pub dt_init: Option<f64>,
    pub dt_min: f64,
    pub blowup_factor: f64,
    pub t_star: f64,
    pub max_steps: usize,
    /// Keep every k-th mass state for the ordering check.
    pub record_every: usize,
    pub limiter: ReactionLimiter,
    /// Mean density of the probe's bump data; defaults to 1.5·M_lo/|Ω|.
    pub probe_mean: Option<f64>,
    /// Exponent whose horizon T sets the probe horizon 10·T.
    pub reference_sigma: f64,
    pub sigmas: Vec<f64>,
    pub scenario: Scenario,
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn from_config_str(text: &str) -> Result<Self, ExperimentError> {
        let kv = config::parse(text)?;
        kv.reject_unknown(EXPERIMENT_KEYS)?;
        Self::from_pairs(&kv)
    }

    pub fn from_pairs(kv: &KvPairs) -> Result<Self, ExperimentError> {
        let kv = with_mass_window(kv)?;
        let (params, mode) = ModelParams::from_pairs(&kv)?;
        let scenario: Scenario = kv.get_or("scenario", Scenario::Blowup)?;
        let sigmas = kv.get_list("sigmas")?.unwrap_or_default();
        let cfg = Self {
            mode: kv.raw("mode").map(|_| mode),
            cells: kv.get_or("M", 512)?,
            grading: kv.get_or("first_radius", Grading::Auto)?,
            lattice: Lattice {
                ns: kv.get_or("Ns", 512)?,
                nt: kv.get_or("Nt", 256)?,
            },
            t_end: kv.get("t_end")?,
            dt_init: kv.get("dt_init")?,
            dt_min: kv.get_or("dt_min", 0.0)?,
            blowup_factor: kv.get_or("blowup_factor", 1e6)?,
            t_star: kv.get_or("T_star", 1.0)?,
            max_steps: kv.get_or("max_steps", 2_000_000)?,
            record_every: kv.get_or("record_every", 1)?,
            limiter: kv.get_or("reaction_limiter", ReactionLimiter::Slope)?,
            probe_mean: kv.get("probe_mean")?,
            reference_sigma: kv.get_or("reference_sigma", 2.0)?,
            sigmas,
            scenario,
            out: kv.get_or("out", PathBuf::from("chemoblow-out"))?,
            params,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that does not need a computation. Call again after
    /// changing fields by hand.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.params.clone().validate(Mode::Simulate)?;
        if let Some(mode) = self.mode {
            self.params.clone().validate(mode)?;
        }
        if self.scenario == Scenario::Sweep && self.sigmas.is_empty() {
            return Err(ConfigError::Invalid("scenario sweep needs `sigmas`".into()).into());
        }
        if matches!(self.scenario, Scenario::Blowup | Scenario::CertifyOnly) {
            self.params.clone().validate(Mode::Blowup)?;
        }
        for &sigma in &self.sigmas {
            self.params.clone().with_sigma(sigma).validate(Mode::Simulate)?;
        }
        let positive = [
            ("blowup_factor", self.blowup_factor),
            ("T_star", self.t_star),
            ("reference_sigma", self.reference_sigma),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {value}")).into());
            }
        }
        if self.record_every == 0 {
            return Err(ConfigError::Invalid("record_every must be at least 1".into()).into());
        }
        if let Some(t) = self.t_end {
            if !(t >= 0.0) {
                return Err(ConfigError::Invalid(format!("t_end must be nonnegative, got {t}")).into());
            }
        }
        if let Grading::FirstRadius(r) = self.grading {
            if !(r > 0.0 && r < self.params.radius / self.cells as f64) {
                return Err(GridError::BadGrading {
                    first: r,
                    limit: self.params.radius / self.cells as f64,
                }
                .into());
            }
        }
        if self.cells < crate::grid::MIN_CELLS {
            return Err(GridError::TooFewNodes(self.cells).into());
        }
        Ok(())
    }
}

/// Accepts `mu_lo` (+ optional `mass_ratio`, default 2) as an alternative
/// to the absolute bounds M_lo, M_hi.
fn with_mass_window(kv: &KvPairs) -> Result<KvPairs, ConfigError> {
    let mu: Option<f64> = kv.get("mu_lo")?;
    let ratio: Option<f64> = kv.get("mass_ratio")?;
    let mut out = kv.clone();
    match mu {
        Some(mu) => {
            if kv.raw("M_lo").is_some() || kv.raw("M_hi").is_some() {
                return Err(ConfigError::Invalid(
                    "give either mu_lo (and mass_ratio) or M_lo and M_hi, not both".into(),
                ));
            }
            let n: usize = kv.require("n")?;
            let radius: f64 = kv.get_or("R", 1.0)?;
            let lo = 2.0 * ball_volume(n, radius) * mu;
            out.insert("M_lo", &format!("{lo:?}"));
            out.insert("M_hi", &format!("{:?}", ratio.unwrap_or(2.0) * lo));
        }
        None if ratio.is_some() => {
            return Err(ConfigError::Invalid("mass_ratio requires mu_lo".into()));
        }
        None => {}
    }
    Ok(out)
}

/// Result of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    /// One machine-readable line.
    pub summary: String,
}

/// Runs the configured scenario and writes its artifacts under `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig, verbose: bool) -> Result<Outcome, ExperimentError> {
    create_dir(&cfg.out)?;
    let outcome = match cfg.scenario {
        Scenario::CertifyOnly => certify_only(cfg, &cfg.out, verbose)?,
        Scenario::Blowup => blowup(cfg, &cfg.params, &cfg.out, verbose)?.outcome,
        Scenario::SubcriticalProbe => probe(cfg, &cfg.params, &cfg.out, verbose)?.outcome,
        Scenario::Sweep => sweep(cfg, verbose)?,
    };
    write(&cfg.out.join("summary.txt"), &format!("{}\n", outcome.summary))?;
    Ok(outcome)
}

fn create_dir(path: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), ExperimentError> {
    fs::write(path, text).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn summary_line(scenario: Scenario, p: &ModelParams, pass: bool, verdict: &str, t_trigger: Option<f64>) -> String {
    format!(
        "scenario={} sigma={} n={} pass={} verdict={} t_trigger={}",
        scenario.as_str(),
        p.sigma,
        p.n,
        pass,
        verdict,
        t_trigger.map_or("none".to_string(), |t| format!("{t:e}"))
    )
}

/// Subsolution constants for blow-up parameters.
pub fn build_spec(params: &ModelParams, t_star: f64) -> Result<(DerivedConstants, SubsolutionSpec), ExperimentError> {
    let p = params.clone().validate(Mode::Blowup)?;
    let dc = DerivedConstants::new(&p);
    let ex = select_exponents(p.n, p.sigma)?;
    let spec = select_parameters(&p, &dc, ex, t_star)?;
    Ok((dc, spec))
}

fn certify_and_write(spec: &SubsolutionSpec, lattice: Lattice, dir: &Path) -> Result<Certificate, ExperimentError> {
    write(&dir.join("spec.txt"), &spec.to_config_string())?;
    let cert = certify_subsolution(spec, lattice)?;
    write(&dir.join("certificate.txt"), &cert.to_text())?;
    write(&dir.join("certificate.csv"), &cert.to_csv())?;
    write(&dir.join("residuals.csv"), &residual_csv(&residual_sweep(spec, 64, 32)?))?;
    Ok(cert)
}

fn certify_only(cfg: &ExperimentConfig, dir: &Path, verbose: bool) -> Result<Outcome, ExperimentError> {
    create_dir(dir)?;
    let (_, spec) = build_spec(&cfg.params, cfg.t_star)?;
    let cert = certify_and_write(&spec, cfg.lattice, dir)?;
    if verbose {
        eprint!("{}", cert.to_text());
    }
    write(&dir.join("plot.gp"), &certificate_plot_script())?;
    Ok(Outcome {
        exit_code: if cert.pass { EXIT_OK } else { EXIT_CERTIFICATION },
        summary: summary_line(
            Scenario::CertifyOnly,
            &cfg.params,
            cert.pass,
            if cert.pass { "certified" } else { "certification_failed" },
            None,
        ),
    })
}

/// Everything a blow-up pipeline run produced.
#[derive(Debug, Clone)]
pub struct BlowupArtifacts {
    pub outcome: Outcome,
    pub spec: SubsolutionSpec,
    pub certificate: Certificate,
    pub report: Option<RunReport>,
    pub ordering: Option<OrderingReport>,
    pub verdict: Option<crate::verifier::BlowupVerdict>,
}

fn make_grid(cfg: &ExperimentConfig, p: &ModelParams, spec: Option<&SubsolutionSpec>) -> Result<RadialGrid, ExperimentError> {
    let spacing = match (cfg.grading, spec) {
        (Grading::Uniform, _) | (Grading::Auto, None) => Spacing::Uniform,
        (Grading::Auto, Some(spec)) => Spacing::Graded {
            first_radius: 1e-4 * spec.y0.powf(-1.0 / p.n as f64),
        },
        (Grading::FirstRadius(r), _) => Spacing::Graded { first_radius: r },
    };
    Ok(RadialGrid::with_spacing(p.n, p.radius, cfg.cells, spacing)?)
}

/// select → certify → generate data → simulate → compare → verdict.
pub fn blowup(cfg: &ExperimentConfig, params: &ModelParams, dir: &Path, verbose: bool) -> Result<BlowupArtifacts, ExperimentError> {
    create_dir(dir)?;
    let (dc, spec) = build_spec(params, cfg.t_star)?;
    let certificate = certify_and_write(&spec, cfg.lattice, dir)?;
    if verbose {
        eprint!("{}", certificate.to_text());
    }
    if !certificate.pass {
        return Ok(BlowupArtifacts {
            outcome: Outcome {
                exit_code: EXIT_CERTIFICATION,
                summary: summary_line(Scenario::Blowup, params, false, "certification_failed", None),
            },
            spec,
            certificate,
            report: None,
            ordering: None,
            verdict: None,
        });
    }

    let grid = make_grid(cfg, params, Some(&spec))?;
    let data = initial_data(&spec, params, &grid)?;
    write(&dir.join("initial_data.txt"), &initial_data_text(&data, &grid))?;
    let state0 = RadialState::new(&grid, 0.0, data.u0.clone(), data.w0.clone())?;
    let controls = RunControls {
        t_end: cfg.t_end.unwrap_or(spec.horizon),
        dt_init: cfg.dt_init.unwrap_or(1e-3 * spec.horizon),
        dt_min: cfg.dt_min,
        blowup_factor: cfg.blowup_factor,
        max_steps: cfg.max_steps,
        mu_window: Some((dc.mu_lo, dc.mu_hi)),
        ..RunControls::default()
    };
    let solver = RadialSolver::new(grid.clone(), params.clone()).with_limiter(cfg.limiter);
    let mut states: Vec<MassState> = Vec::new();
    let mut last: Option<RadialState> = None;
    let mut counter = 0usize;
    let mut stride = cfg.record_every;
    let report = solver.run_observed(state0.clone(), &controls, |st| {
        if counter.is_multiple_of(stride) && st.t < spec.horizon {
            if states.len() == MAX_RECORDED_STATES {
                // keep every other state and halve the sampling rate
                let mut k = 0;
                states.retain(|_| {
                    k += 1;
                    k % 2 == 1
                });
                stride *= 2;
            }
            if counter.is_multiple_of(stride) {
                states.push(cumulate(st, &grid));
            }
        }
        counter += 1;
        last = Some(st.clone());
    })?;
    let ordering = compare_orderings(&states, &spec, &dc)?;
    let verdict = detect_blowup(&report, &spec, Some(ordering.window_end))?;

    write(&dir.join("run.csv"), &report.to_csv())?;
    write(&dir.join("axis.csv"), &axis_csv(&report, &spec))?;
    write(&dir.join("checkpoint_initial.csv"), &checkpoint_csv(&grid, &state0))?;
    if let Some(st) = &last {
        write(&dir.join("checkpoint_final.csv"), &checkpoint_csv(&grid, st))?;
    }
    write(&dir.join("ordering.txt"), &ordering.text())?;
    write(&dir.join("profiles.csv"), &profiles_csv(&states, &spec)?)?;
    write(&dir.join("plot.gp"), &blowup_plot_script())?;

    let ordering_ok = ordering.window_ok() && ordering.first_violation.is_none();
    let pass = verdict.blew_up_before && ordering_ok && verdict.lower_envelope_check;
    let mut verdict_text = String::new();
    let _ = writeln!(verdict_text, "blew_up_before = {}", verdict.blew_up_before);
    let _ = writeln!(verdict_text, "t_trigger = {:?}", verdict.t_trigger);
    let _ = writeln!(verdict_text, "horizon T = {:e}", spec.horizon);
    let _ = writeln!(verdict_text, "stop_reason = {}", report.stop_reason.as_str());
    let _ = writeln!(verdict_text, "steps = {}", report.step_count);
    let _ = writeln!(verdict_text, "mass_drift = {:e}", report.mass_drift);
    let _ = writeln!(verdict_text, "lower_envelope_check = {}", verdict.lower_envelope_check);
    let _ = writeln!(verdict_text, "envelope_min_rel = {:e}", verdict.envelope_min_rel);
    let _ = writeln!(verdict_text, "envelope_points = {}", verdict.envelope_points);
    let _ = writeln!(verdict_text, "ordering_ok = {ordering_ok}");
    write(&dir.join("verdict.txt"), &verdict_text)?;
    if verbose {
        eprint!("{}{}", ordering.text(), verdict_text);
    }

    let label = if verdict.blew_up_before { "blowup" } else { "no_blowup" };
    Ok(BlowupArtifacts {
        outcome: Outcome {
            exit_code: if pass { EXIT_OK } else { EXIT_VERDICT },
            summary: summary_line(Scenario::Blowup, params, pass, label, verdict.t_trigger),
        },
        spec,
        certificate,
        report: Some(report),
        ordering: Some(ordering),
        verdict: Some(verdict),
    })
}

fn initial_data_text(data: &crate::subsolution::InitialData, grid: &RadialGrid) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scale = {:?}", data.scale);
    let _ = writeln!(out, "mass_u = {:?}", data.mass_u);
    let _ = writeln!(out, "mass_w = {:?}", data.mass_w);
    let _ = writeln!(out, "ordering_margin_u = {:?}", data.ordering_margin_u);
    let _ = writeln!(out, "ordering_margin_w = {:?}", data.ordering_margin_w);
    let _ = writeln!(out, "w_sup_ratio = {:?}", data.w_sup_ratio);
    let _ = writeln!(out, "w_sup_within_bound = {}", data.w_sup_within_bound());
    let _ = writeln!(out, "first_radius = {:?}", grid.r[1]);
    let _ = writeln!(out, "cells = {}", grid.cells());
    out
}

/// t, u(0,t), envelope e^{−θt} a y^{1−α}(t) (empty once t ≥ T).
fn axis_csv(report: &RunReport, spec: &SubsolutionSpec) -> String {
    let mut out = String::from("t,u_axis,envelope\n");
    for (&t, &u) in report.times.iter().zip(&report.u_axis_history) {
        let env = spec.axis_envelope(t).map_or(String::new(), |e| format!("{e:e}"));
        let _ = writeln!(out, "{t:e},{u:e},{env}");
    }
    out
}

/// U against uU (and W against uW) at up to five recorded times.
fn profiles_csv(states: &[MassState], spec: &SubsolutionSpec) -> Result<String, ExperimentError> {
    let mut out = String::from("t,s,U,uU,W,uW\n");
    if states.is_empty() {
        return Ok(out);
    }
    let last = states.len() - 1;
    let mut picks: Vec<usize> = (0..5).map(|k| k * last / 4).collect();
    picks.dedup();
    for k in picks {
        let ms = &states[k];
        for i in 0..ms.grid.len() {
            let s = ms.grid.s[i];
            let su = spec.eval_sub(Profile::U, s, ms.t)?.value;
            let sw = spec.eval_sub(Profile::W, s, ms.t)?.value;
            let _ = writeln!(out, "{:e},{s:e},{:e},{su:e},{:e},{sw:e}", ms.t, ms.u[i], ms.w[i]);
        }
    }
    Ok(out)
}

/// Result of one subcritical probe.
#[derive(Debug, Clone)]
pub struct ProbeArtifacts {
    pub outcome: Outcome,
    pub bounded: bool,
    pub max_ratio: f64,
    pub horizon: f64,
    pub report: RunReport,
}

/// Horizon of the probe: `t_end` if given, else 10·T for the reference
/// exponent with the same n, R, k and masses.
pub fn probe_horizon(cfg: &ExperimentConfig, params: &ModelParams) -> Result<f64, ExperimentError> {
    if let Some(t) = cfg.t_end {
        return Ok(t);
    }
    let reference = params.clone().with_sigma(cfg.reference_sigma);
    let (_, spec) = build_spec(&reference, cfg.t_star)?;
    Ok(10.0 * spec.horizon)
}

/// Large smooth bump data, run over the probe horizon.
pub fn probe(cfg: &ExperimentConfig, params: &ModelParams, dir: &Path, verbose: bool) -> Result<ProbeArtifacts, ExperimentError> {
    create_dir(dir)?;
    let p = params.clone().validate(Mode::Simulate)?;
    let horizon = probe_horizon(cfg, &p)?;
    let grid = make_grid(cfg, &p, None)?;
    let mean = cfg.probe_mean.unwrap_or(1.5 * p.mass_lo / grid.volume());
    let u0 = bump_data(&grid, mean);
    let state0 = RadialState::new(&grid, 0.0, u0.clone(), u0)?;
    let controls = RunControls {
        t_end: horizon,
        dt_init: cfg.dt_init.unwrap_or(1e-3 * horizon),
        dt_min: cfg.dt_min,
        blowup_factor: cfg.blowup_factor,
        max_steps: cfg.max_steps,
        ..RunControls::default()
    };
    let solver = RadialSolver::new(grid.clone(), p.clone()).with_limiter(cfg.limiter);
    let (bounded, report) = boundedness_probe(&solver, state0.clone(), &controls)?;
    write(&dir.join("run.csv"), &report.to_csv())?;
    write(&dir.join("checkpoint_initial.csv"), &checkpoint_csv(&grid, &state0))?;
    write(&dir.join("plot.gp"), &probe_plot_script())?;
    let mut text = String::new();
    let _ = writeln!(text, "bounded = {}", bounded.bounded);
    let _ = writeln!(text, "max_ratio = {:e}", bounded.max_ratio);
    let _ = writeln!(text, "horizon = {:e}", bounded.horizon);
    let _ = writeln!(text, "final_time = {:e}", bounded.final_time);
    let _ = writeln!(text, "stop_reason = {}", bounded.stop_reason.as_str());
    write(&dir.join("verdict.txt"), &text)?;
    if verbose {
        eprint!("{text}");
    }
    let label = if bounded.bounded { "bounded" } else { "unbounded" };
    Ok(ProbeArtifacts {
        outcome: Outcome {
            exit_code: if bounded.bounded { EXIT_OK } else { EXIT_VERDICT },
            summary: summary_line(Scenario::SubcriticalProbe, &p, bounded.bounded, label, None),
        },
        bounded: bounded.bounded,
        max_ratio: bounded.max_ratio,
        horizon,
        report,
    })
}

/// Classification of one exponent relative to 4/n.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

pub fn regime(n: usize, sigma: f64) -> Regime {
    let critical = 4.0 / n as f64;
    if (sigma - critical).abs() <= 1e-12 * critical {
        Regime::Critical
    } else if sigma < critical {
        Regime::Subcritical
    } else {
        Regime::Supercritical
    }
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub verdict: String,
    pub expected: bool,
    pub exit_code: i32,
    pub t_trigger: Option<f64>,
}

fn sweep(cfg: &ExperimentConfig, verbose: bool) -> Result<Outcome, ExperimentError> {
    let rows: Vec<Result<SweepRow, ExperimentError>> = cfg
        .sigmas
        .par_iter()
        .map(|&sigma| {
            let dir = cfg.out.join(format!("sigma_{sigma}"));
            create_dir(&dir)?;
            let p = cfg.params.clone().with_sigma(sigma);
            let row = match regime(p.n, sigma) {
                Regime::Supercritical => {
                    let a = blowup(cfg, &p, &dir, verbose)?;
                    let verdict = if a.outcome.exit_code == EXIT_CERTIFICATION {
                        "certification_failed"
                    } else if a.verdict.as_ref().is_some_and(|v| v.blew_up_before) {
                        "blowup"
                    } else {
                        "no_blowup"
                    };
                    write(&dir.join("summary.txt"), &format!("{}\n", a.outcome.summary))?;
                    SweepRow {
                        sigma,
                        verdict: verdict.into(),
                        expected: a.outcome.exit_code == EXIT_OK,
                        exit_code: a.outcome.exit_code,
                        t_trigger: a.verdict.and_then(|v| v.t_trigger),
                    }
                }
                Regime::Subcritical => {
                    let a = probe(cfg, &p, &dir, verbose)?;
                    write(&dir.join("summary.txt"), &format!("{}\n", a.outcome.summary))?;
                    SweepRow {
                        sigma,
                        verdict: if a.bounded { "bounded" } else { "unbounded" }.into(),
                        expected: a.bounded,
                        exit_code: a.outcome.exit_code,
                        t_trigger: a.report.blowup_time_estimate,
                    }
                }
                Regime::Critical => SweepRow {
                    sigma,
                    verdict: "inconclusive".into(),
                    expected: true,
                    exit_code: EXIT_OK,
                    t_trigger: None,
                },
            };
            Ok(row)
        })
        .collect();
    let rows: Vec<SweepRow> = rows.into_iter().collect::<Result<_, _>>()?;
    write(&cfg.out.join("sweep.csv"), &sweep_csv(&rows))?;
    let exit_code = rows
        .iter()
        .map(|r| r.exit_code)
        .find(|&c| c == EXIT_CERTIFICATION)
        .or_else(|| rows.iter().map(|r| r.exit_code).find(|&c| c != EXIT_OK))
        .unwrap_or(EXIT_OK);
    let verdicts: Vec<String> = rows.iter().map(|r| format!("{}:{}", r.sigma, r.verdict)).collect();
    Ok(Outcome {
        exit_code,
        summary: format!(
            "scenario=sweep n={} pass={} verdicts={}",
            cfg.params.n,
            exit_code == EXIT_OK,
            verdicts.join(",")
        ),
    })
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("sigma,verdict,expected,t_trigger\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.sigma,
            r.verdict,
            r.expected,
            r.t_trigger.map_or(String::new(), |t| format!("{t:e}"))
        );
    }
    out
}

fn blowup_plot_script() -> String {
    "\
# gnuplot script; run from this directory: gnuplot plot.gp
set datafile separator ','
set key autotitle columnhead
set terminal pngcairo size 900,600

set output 'sup_u.png'
set logscale y
set xlabel 't'
set ylabel 'sup u'
plot 'run.csv' using 1:2 with linespoints title 'sup u', \\
     'axis.csv' using 1:3 with lines title 'envelope'

set output 'profiles.png'
set logscale xy
set xlabel 's'
set ylabel 'U'
plot 'profiles.csv' using 2:3 with points pt 7 ps 0.3 title 'U', \\
     'profiles.csv' using 2:4 with points pt 1 ps 0.3 title 'subsolution'

set output 'residuals.png'
unset logscale
set logscale x
set xlabel 's'
set ylabel 't'
set view map
splot 'residuals.csv' using 1:2:3 with points palette pt 5 ps 0.4 title 'P residual'
"
    .to_string()
}

fn certificate_plot_script() -> String {
    "\
# gnuplot script; run from this directory: gnuplot plot.gp
set datafile separator ','
set key autotitle columnhead
set terminal pngcairo size 900,600
set output 'residuals.png'
set logscale x
set xlabel 's'
set ylabel 't'
set view map
splot 'residuals.csv' using 1:2:3 with points palette pt 5 ps 0.4 title 'P residual'
"
    .to_string()
}

fn probe_plot_script() -> String {
    "\
# gnuplot script; run from this directory: gnuplot plot.gp
set datafile separator ','
set key autotitle columnhead
set terminal pngcairo size 900,600
set output 'sup_u.png'
set logscale y
set xlabel 't'
set ylabel 'sup u'
plot 'run.csv' using 1:2 with linespoints title 'sup u'
"
    .to_string()
}
