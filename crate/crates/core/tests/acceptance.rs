//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use chemoblow::experiment::{blowup, probe, run_experiment, BlowupArtifacts, ExperimentConfig, ProbeArtifacts};
use chemoblow::grid::{RadialGrid, Spacing};
use chemoblow::mass::{cumulate, step_mass};
use chemoblow::model::{DerivedConstants, ModelParams};
use chemoblow::radial::{RadialSolver, RadialState, RunControls, StopReason};
use chemoblow::subsolution::{select_exponents, select_parameters, SubsolutionSpec};
use chemoblow::verifier::{bump_data, certify_subsolution, Lattice, RegionKind};

const PAIRS: [(usize, f64); 6] = [(3, 1.5), (3, 2.0), (3, 3.0), (4, 1.5), (4, 2.0), (4, 3.0)];
const MU_LO: f64 = 1e4;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn params(n: usize, sigma: f64) -> ModelParams {
    ModelParams::with_mean_density(n, 1.0, 1.0, sigma, MU_LO, 2.0)
}

fn select(n: usize, sigma: f64) -> Result<SubsolutionSpec, String> {
    let p = params(n, sigma);
    let dc = DerivedConstants::new(&p);
    let ex = select_exponents(n, sigma).map_err(|e| e.to_string())?;
    select_parameters(&p, &dc, ex, 1.0).map_err(|e| e.to_string())
}

fn experiment(text: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_config_str(text).expect("config");
    cfg.out = out.to_path_buf();
    cfg
}

fn blowup_run(n: usize, sigma: f64, dir: &Path) -> Result<(BlowupArtifacts, Duration), String> {
    let cfg = experiment(&format!("n = {n}\nsigma = {sigma}\nmu_lo = {MU_LO}\nmass_ratio = 2\nM = 512\n"), dir);
    let start = Instant::now();
    let art = blowup(&cfg, &cfg.params, dir, false).map_err(|e| e.to_string())?;
    Ok((art, start.elapsed()))
}

fn probe_run(n: usize, sigma: f64, reference: f64, dir: &Path) -> Result<(ProbeArtifacts, Duration), String> {
    let cfg = experiment(
        &format!(
            "n = {n}\nsigma = {sigma}\nmu_lo = {MU_LO}\nmass_ratio = 2\nM = 512\n\
             scenario = subcritical-probe\nreference_sigma = {reference}\n"
        ),
        dir,
    );
    let start = Instant::now();
    let art = probe(&cfg, &cfg.params, dir, false).map_err(|e| e.to_string())?;
    Ok((art, start.elapsed()))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    for (n, sigma) in PAIRS {
        match select(n, sigma) {
            Ok(spec) => {
                for c in spec.verify().into_iter().filter(|c| !c.holds) {
                    failures.push(format!("n={n} sigma={sigma}: {} ({})", c.name, c.detail));
                }
            }
            Err(e) => failures.push(format!("n={n} sigma={sigma}: {e}")),
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(1);
    outcome(pass, format!("6 specs in {elapsed:.2?}; {}", summarize(&failures)))
}

fn criterion_2() -> Outcome {
    let lattice = Lattice { ns: 512, nt: 256 };
    let mut failures = Vec::new();
    let mut slowest = Duration::ZERO;
    let mut worst = f64::NEG_INFINITY;
    for (n, sigma) in PAIRS {
        let spec = match select(n, sigma) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("n={n} sigma={sigma}: {e}"));
                continue;
            }
        };
        let start = Instant::now();
        match certify_subsolution(&spec, lattice) {
            Ok(cert) => {
                let elapsed = start.elapsed();
                slowest = slowest.max(elapsed);
                worst = cert.regions.iter().map(|r| r.max_rel).fold(worst, f64::max);
                let all_regions = RegionKind::ALL.iter().all(|&k| cert.region(k).passes());
                if !cert.pass || !all_regions {
                    failures.push(format!("n={n} sigma={sigma}: certificate failed"));
                }
                if elapsed > Duration::from_secs(30) {
                    failures.push(format!("n={n} sigma={sigma}: {elapsed:.1?}"));
                }
            }
            Err(e) => failures.push(format!("n={n} sigma={sigma}: {e}")),
        }
    }
    outcome(
        failures.is_empty(),
        format!("worst relative residual {worst:.3e}, slowest {slowest:.2?}; {}", summarize(&failures)),
    )
}

/// Classical RK4 on y′ = γ y^{1+δ}, compared with the closed form at every
/// step up to 0.9 T. Returns the largest relative error.
fn rk4_error(spec: &SubsolutionSpec, steps: usize) -> f64 {
    let t_end = 0.9 * spec.horizon;
    let h = t_end / steps as f64;
    let f = |y: f64| spec.y_prime(y);
    let mut y = spec.y0;
    let mut err: f64 = 0.0;
    for k in 0..steps {
        let k1 = f(y);
        let k2 = f(y + 0.5 * h * k1);
        let k3 = f(y + 0.5 * h * k2);
        let k4 = f(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let exact = spec.y_of_t((k + 1) as f64 * h).expect("inside horizon");
        err = err.max((y - exact).abs() / exact);
    }
    err
}

fn criterion_3() -> Outcome {
    let mut example = match select(3, 2.0) {
        Ok(s) => s,
        Err(e) => return outcome(false, e),
    };
    example.y0 = 10.0;
    example.gamma = 0.1;
    example.delta = 0.5;
    example.horizon = 1.0 / (example.gamma * example.delta * example.y0.powf(example.delta));

    let mut specs = vec![("example".to_string(), example)];
    for (n, sigma) in PAIRS {
        match select(n, sigma) {
            Ok(s) => specs.push((format!("n={n} sigma={sigma}"), s)),
            Err(e) => return outcome(false, e),
        }
    }
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for (label, spec) in &specs {
        let err = rk4_error(spec, 20_000);
        worst = worst.max(err);
        if err > 1e-8 {
            failures.push(format!("{label}: rk4 rel err {err:.2e}"));
        }
        let late = spec.y_of_t((1.0 - 1e-7) * spec.horizon).unwrap_or(f64::NAN);
        if !(late > 1e6) {
            failures.push(format!("{label}: y((1-1e-7)T) = {late:e}"));
        }
    }
    outcome(failures.is_empty(), format!("max rel err {worst:.2e}; {}", summarize(&failures)))
}

fn criterion_4() -> Outcome {
    let p = ModelParams::with_mean_density(3, 1.0, 1.0, 1.0, 1.0, 2.0);
    let grid = match RadialGrid::with_spacing(3, 1.0, 256, Spacing::Uniform) {
        Ok(g) => g,
        Err(e) => return outcome(false, e.to_string()),
    };
    let u0 = bump_data(&grid, 10.0);
    let w0 = bump_data(&grid, 5.0);
    let state0 = match RadialState::new(&grid, 0.0, u0, w0) {
        Ok(s) => s,
        Err(e) => return outcome(false, e.to_string()),
    };
    let controls = RunControls {
        t_end: 1.0,
        dt_init: 1e-4,
        ..RunControls::default()
    };
    match RadialSolver::new(grid, p).run(state0, &controls) {
        Ok(report) => {
            let pass = report.mass_drift <= 1e-7 && report.stop_reason == StopReason::Horizon;
            outcome(
                pass,
                format!(
                    "drift {:.2e} over {} steps, stop {}",
                    report.mass_drift,
                    report.step_count,
                    report.stop_reason.as_str()
                ),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

/// Sup-norm gap between cumulating a primitive step and stepping the mass
/// system, with the bound 5(dt² + Δs²)·scale.
fn dual_path(cells: usize, dt: f64) -> (f64, f64) {
    let grid = RadialGrid::with_spacing(3, 1.0, cells, Spacing::Uniform).expect("grid");
    let p = ModelParams::with_mean_density(3, 1.0, 1.0, 2.0, 1.0, 2.0);
    let pi = std::f64::consts::PI;
    let u: Vec<f64> = grid.r.iter().map(|r| 1.0 + 0.5 * (pi * r).cos()).collect();
    let w: Vec<f64> = grid.r.iter().map(|r| 1.0 + 0.3 * (pi * r).cos()).collect();
    let st = RadialState::new(&grid, 0.0, u, w).expect("state");
    let next = RadialSolver::new(grid.clone(), p.clone()).step(&st, dt).expect("step");
    let via_radial = cumulate(&next, &grid);
    let via_mass = step_mass(&cumulate(&st, &grid), st.mu_w, &p, dt).expect("mass step");
    let gap = via_radial
        .u
        .iter()
        .zip(&via_mass.u)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = via_radial.u.iter().copied().fold(0.0, f64::max);
    let ds = grid.max_ds();
    (gap, 5.0 * (dt * dt + ds * ds) * scale)
}

fn criterion_5() -> Outcome {
    let (coarse, bound_c) = dual_path(64, 1e-4);
    let (fine, bound_f) = dual_path(128, 5e-5);
    let reduction = coarse / fine;
    let pass = coarse <= bound_c && fine <= bound_f && reduction >= 3.0;
    outcome(
        pass,
        format!("gap {coarse:.2e} (bound {bound_c:.2e}) -> {fine:.2e} (bound {bound_f:.2e}), reduction {reduction:.1}x"),
    )
}

fn criterion_6(art: &BlowupArtifacts, elapsed: Duration) -> Outcome {
    let Some(ord) = &art.ordering else {
        return outcome(false, "no simulation (certification failed)".into());
    };
    let trigger = art.verdict.as_ref().and_then(|v| v.t_trigger).unwrap_or(f64::INFINITY);
    let violated_before = ord.first_violation.is_some_and(|v| v.t < trigger);
    let pass = ord.window_ok() && !violated_before && elapsed < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "window margin {:.3e} >= -{:.3e} over {} states, violation before trigger: {violated_before}, {elapsed:.2?}",
            ord.min_margin_window, ord.tol, ord.states_in_window
        ),
    )
}

fn criterion_7(runs: &[(String, Result<bool, String>, Duration)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, ok, elapsed) in runs {
        let good = matches!(ok, Ok(true)) && *elapsed < Duration::from_secs(600);
        pass &= good;
        match ok {
            Ok(_) => parts.push(format!("{label} {} ({elapsed:.2?})", if good { "ok" } else { "wrong" })),
            Err(e) => parts.push(format!("{label} error: {e}")),
        }
    }
    outcome(pass, parts.join("; "))
}

fn blowup_ok(art: &BlowupArtifacts) -> bool {
    art.verdict
        .as_ref()
        .is_some_and(|v| v.blew_up_before && v.t_trigger.is_some_and(|t| t < art.spec.horizon))
}

fn criterion_8(art: &BlowupArtifacts) -> Outcome {
    let (Some(report), Some(ord)) = (&art.report, &art.ordering) else {
        return outcome(false, "no simulation".into());
    };
    let spec = &art.spec;
    let mut rows = Vec::new();
    for (&t, &axis) in report.times.iter().zip(&report.u_axis_history) {
        if t > ord.window_end || t >= spec.horizon {
            break;
        }
        match spec.axis_envelope(t) {
            Ok(env) => rows.push((axis, env)),
            Err(e) => return outcome(false, e.to_string()),
        }
    }
    let scale = rows.iter().map(|&(u, _)| u).fold(0.0, f64::max);
    let worst = rows.iter().map(|&(u, e)| u - e).fold(f64::INFINITY, f64::min);
    let pass = !rows.is_empty() && worst >= -1e-4 * scale;
    outcome(
        pass,
        format!("{} times, min u(0,t) - envelope = {worst:.3e} (scale {scale:.3e})", rows.len()),
    )
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).expect("read dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let key = path.strip_prefix(dir).expect("prefix").display().to_string();
                out.insert(key, fs::read(&path).expect("read"));
            }
        }
    }
    out
}

fn criterion_9() -> Outcome {
    let text = "n = 3\nsigma = 2\nmu_lo = 1e4\nmass_ratio = 2\nM = 256\nNs = 256\nNt = 128\n";
    let mut trees = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().expect("tempdir");
        let cfg = experiment(text, dir.path());
        if let Err(e) = run_experiment(&cfg, false) {
            return outcome(false, e.to_string());
        }
        trees.push(read_tree(dir.path()));
    }
    let differing: Vec<String> = trees[0]
        .iter()
        .filter(|(k, v)| trees[1].get(*k) != Some(v))
        .map(|(k, _)| k.clone())
        .collect();
    let csvs = trees[0].keys().filter(|k| k.ends_with(".csv")).count();
    let pass = differing.is_empty()
        && trees[0].len() == trees[1].len()
        && trees[0].contains_key("certificate.txt")
        && csvs > 0;
    outcome(
        pass,
        format!("{} files ({csvs} csv) compared; differing: {}", trees[0].len(), summarize(&differing)),
    )
}

fn summarize(items: &[String]) -> String {
    if items.is_empty() {
        "none".into()
    } else {
        items.join(", ")
    }
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |id: u32, name: &'static str, o: Outcome| {
        println!("{} criterion {id} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };

    report(1, "parameter pipeline", criterion_1());
    report(2, "subsolution certification", criterion_2());
    report(3, "closed-form ODE", criterion_3());
    report(4, "mass conservation", criterion_4());
    report(5, "transform consistency", criterion_5());

    let scratch = tempfile::tempdir().expect("tempdir");
    let n3 = blowup_run(3, 2.0, &scratch.path().join("n3_sigma2"));
    match &n3 {
        Ok((art, elapsed)) => {
            report(6, "comparison ordering", criterion_6(art, *elapsed));
        }
        Err(e) => report(6, "comparison ordering", outcome(false, e.clone())),
    }

    let mut runs = Vec::new();
    runs.push(match &n3 {
        Ok((art, elapsed)) => ("n=3 sigma=2 blowup".to_string(), Ok(blowup_ok(art)), *elapsed),
        Err(e) => ("n=3 sigma=2 blowup".to_string(), Err(e.clone()), Duration::ZERO),
    });
    let n3_sub = probe_run(3, 1.0, 2.0, &scratch.path().join("n3_sigma1"));
    runs.push(match n3_sub {
        Ok((art, elapsed)) => (format!("n=3 sigma=1 bounded (max ratio {:.3})", art.max_ratio), Ok(art.bounded), elapsed),
        Err(e) => ("n=3 sigma=1 bounded".to_string(), Err(e), Duration::ZERO),
    });
    let n4 = blowup_run(4, 1.5, &scratch.path().join("n4_sigma1.5"));
    runs.push(match n4 {
        Ok((art, elapsed)) => ("n=4 sigma=1.5 blowup".to_string(), Ok(blowup_ok(&art)), elapsed),
        Err(e) => ("n=4 sigma=1.5 blowup".to_string(), Err(e), Duration::ZERO),
    });
    let n4_sub = probe_run(4, 0.9, 1.5, &scratch.path().join("n4_sigma0.9"));
    runs.push(match n4_sub {
        Ok((art, elapsed)) => (format!("n=4 sigma=0.9 bounded (max ratio {:.3})", art.max_ratio), Ok(art.bounded), elapsed),
        Err(e) => ("n=4 sigma=0.9 bounded".to_string(), Err(e), Duration::ZERO),
    });
    report(7, "blow-up dichotomy", criterion_7(&runs));

    match &n3 {
        Ok((art, _)) => report(8, "envelope lower bound", criterion_8(art)),
        Err(e) => report(8, "envelope lower bound", outcome(false, e.clone())),
    }
    report(9, "determinism", criterion_9());

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} passed",
        results.len() - failed.len(),
        results.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
