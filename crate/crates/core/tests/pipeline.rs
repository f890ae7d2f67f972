use chemoblow::experiment::{blowup, build_spec, ExperimentConfig};
use chemoblow::grid::{RadialGrid, Spacing};
use chemoblow::mass::cumulate;
use chemoblow::model::ModelParams;
use chemoblow::radial::{RadialSolver, RadialState, RunControls, StopReason};
use chemoblow::subsolution::initial_data;
use chemoblow::verifier::{bump_data, compare_orderings};

fn config(text: &str, out: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_config_str(text).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

#[test]
fn empty_run_records_only_the_initial_state() {
    let p = ModelParams::with_mean_density(3, 1.0, 1.0, 1.0, 1.0, 2.0);
    let grid = RadialGrid::with_spacing(3, 1.0, 32, Spacing::Uniform).unwrap();
    let u0 = bump_data(&grid, 2.0);
    let st = RadialState::new(&grid, 0.0, u0.clone(), u0).unwrap();
    let controls = RunControls {
        t_end: 0.0,
        ..RunControls::default()
    };
    let report = RadialSolver::new(grid, p).run(st, &controls).unwrap();
    assert_eq!(report.step_count, 0);
    assert_eq!(report.stop_reason, StopReason::Horizon);
    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "t,sup_u,sup_w,mass_u,mu_w,dt");
    assert!(lines[1].starts_with("0e0,"));
}

#[test]
fn sup_u_increases_over_last_decade_before_trigger() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("n = 3\nsigma = 2\nmu_lo = 1e4\nmass_ratio = 2\nM = 256\nNs = 256\nNt = 128\n", dir.path());
    let art = blowup(&cfg, &cfg.params, dir.path(), false).unwrap();
    let report = art.report.unwrap();
    let trigger = art.verdict.unwrap().t_trigger.expect("blew up");
    assert!(trigger < art.spec.horizon);
    let series: Vec<f64> = report
        .times
        .iter()
        .zip(&report.sup_u_history)
        .filter(|(&t, _)| t >= 0.1 * trigger)
        .map(|(_, &s)| s)
        .collect();
    assert!(series.len() > 5);
    assert!(series.windows(2).all(|w| w[1] > w[0]));
    assert!(report.sup_u_history.last().unwrap() / report.sup_u_history[0] >= cfg.blowup_factor);
}

#[test]
fn halved_density_violates_ordering_at_start() {
    let p = ModelParams::with_mean_density(3, 1.0, 1.0, 2.0, 1e4, 2.0);
    let (dc, spec) = build_spec(&p, 1.0).unwrap();
    let first_radius = 1e-4 * spec.y0.powf(-1.0 / 3.0);
    let grid = RadialGrid::with_spacing(3, 1.0, 256, Spacing::Graded { first_radius }).unwrap();
    let data = initial_data(&spec, &p, &grid).unwrap();

    let st = RadialState::new(&grid, 0.0, data.u0.clone(), data.w0.clone()).unwrap();
    let ok = compare_orderings(&[cumulate(&st, &grid)], &spec, &dc).unwrap();
    assert!(ok.first_violation.is_none());
    assert!(ok.initial_ok);

    // Generated data carry a mass scale c >= 1; go to half the subsolution.
    assert!(data.scale >= 1.0);
    let half: Vec<f64> = data.u0.iter().map(|u| 0.5 * u / data.scale).collect();
    let st = RadialState::new(&grid, 0.0, half, data.w0).unwrap();
    let report = compare_orderings(&[cumulate(&st, &grid)], &spec, &dc).unwrap();
    let v = report.first_violation.expect("violation");
    assert_eq!(v.t, 0.0);
    assert!(!report.initial_ok);
}

#[test]
fn smooth_subcritical_run_conserves_mass() {
    let p = ModelParams::with_mean_density(4, 1.0, 1.0, 0.9, 1.0, 2.0);
    let grid = RadialGrid::with_spacing(4, 1.0, 128, Spacing::Uniform).unwrap();
    let u0 = bump_data(&grid, 10.0);
    let st = RadialState::new(&grid, 0.0, u0.clone(), u0).unwrap();
    let controls = RunControls {
        t_end: 0.5,
        dt_init: 1e-4,
        ..RunControls::default()
    };
    let report = RadialSolver::new(grid, p).run(st, &controls).unwrap();
    assert_eq!(report.stop_reason, StopReason::Horizon);
    assert!(report.mass_drift < 1e-10, "{}", report.mass_drift);
    assert!(report.sup_u_history.iter().all(|s| s.is_finite() && *s > 0.0));
}
