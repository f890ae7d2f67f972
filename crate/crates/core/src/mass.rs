//! Cumulated densities and the transformed system in s = rⁿ.
//!
//! With U(s,t) = ∫_0^{s^{1/n}} ρ^{n−1} u(ρ,t) dρ (and W likewise) the
//! radial system becomes
//!
//! ```text
//! U_t = n² s^{2−2/n} U_ss + n U_s (W − μ_w s/n)
//! W_t = n² s^{2−2/n} W_ss − W + (1/n) ∫_0^s f(n U_ξ) dξ
//! ```
//!
//! and a blow-up argument compares (U, W) with a subsolution through
//!
//! ```text
//! P[φ,ψ] = φ_t − n² s^{2−2/n} φ_ss − n φ_s (ψ − μ⋆ s/n)
//! Q[φ,ψ] = ψ_t − n² s^{2−2/n} ψ_ss + ψ − K s^{1−σ} φ^σ
//! ```

use std::fmt;

use thiserror::Error;

use crate::grid::RadialGrid;
use crate::model::{ModelError, ModelParams};
use crate::radial::RadialState;
use crate::subsolution::ProfileEval;
use crate::tridiag::Tridiagonal;

/// Relative tolerance on negative slopes before monotonicity counts as lost.
pub const MONOTONE_RTOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MassError {
    #[error("derivative `{0}` is undefined at this point")]
    UndefinedDerivative(&'static str),
    #[error("phi = {0} is negative")]
    NegativePhi(f64),
    #[error("monotonicity lost: U_s = {min} at s = {s} (max U_s = {max})")]
    MonotonicityLost { min: f64, s: f64, max: f64 },
    #[error("time step {dt} exceeds the transport bound {bound}")]
    StabilityViolated { dt: f64, bound: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Nodes s_i = r_iⁿ of a radial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SGrid {
    pub n: usize,
    pub s: Vec<f64>,
}

impl SGrid {
    pub fn from_radial(grid: &RadialGrid) -> Self {
        Self {
            n: grid.n,
            s: grid.s.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Largest spacing.
    pub fn max_ds(&self) -> f64 {
        self.s.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Degenerate diffusion coefficient n² s^{2−2/n}.
    pub fn diffusivity(&self, i: usize) -> f64 {
        let n = self.n as f64;
        n * n * self.s[i].powf(2.0 - 2.0 / n)
    }
}

/// Cumulated densities with derivatives on the s nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MassState {
    pub t: f64,
    pub grid: SGrid,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub u_s: Vec<f64>,
    pub w_s: Vec<f64>,
    pub u_ss: Vec<f64>,
    pub w_ss: Vec<f64>,
}

/// Cumulates a radial state: U from the cell quadrature, U_s = u/n at the
/// nodes, U_ss by differencing U_s.
pub fn cumulate(state: &RadialState, grid: &RadialGrid) -> MassState {
    let nf = grid.n as f64;
    let u = grid.cumulate_nodes(&state.u);
    let w = grid.cumulate_nodes(&state.w);
    let u_s: Vec<f64> = state.u.iter().map(|x| x / nf).collect();
    let w_s: Vec<f64> = state.w.iter().map(|x| x / nf).collect();
    let sg = SGrid::from_radial(grid);
    let u_ss = difference(&sg.s, &u_s);
    let w_ss = difference(&sg.s, &w_s);
    MassState {
        t: state.t,
        grid: sg,
        u,
        w,
        u_s,
        w_s,
        u_ss,
        w_ss,
    }
}

/// Central difference on a nonuniform grid, one-sided at the ends.
fn difference(s: &[f64], f: &[f64]) -> Vec<f64> {
    let m = s.len() - 1;
    (0..=m)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                _ if i == m => (m - 1, m),
                _ => (i - 1, i + 1),
            };
            (f[b] - f[a]) / (s[b] - s[a])
        })
        .collect()
}

impl MassState {
    /// Builds a state from cumulated values alone (slopes by differencing).
    pub fn from_cumulated(t: f64, grid: SGrid, u: Vec<f64>, w: Vec<f64>) -> Self {
        let u_s = slopes(&grid.s, &u);
        let w_s = slopes(&grid.s, &w);
        let u_ss = second_difference(&grid.s, &u);
        let w_ss = second_difference(&grid.s, &w);
        Self {
            t,
            grid,
            u,
            w,
            u_s,
            w_s,
            u_ss,
            w_ss,
        }
    }

    /// μ_u(t) = n U(Rⁿ)/Rⁿ.
    pub fn mean_u(&self) -> f64 {
        let last = self.grid.len() - 1;
        self.grid.n as f64 * self.u[last] / self.grid.s[last]
    }

    pub fn mean_w(&self) -> f64 {
        let last = self.grid.len() - 1;
        self.grid.n as f64 * self.w[last] / self.grid.s[last]
    }

    /// CSV with columns s, U, W, U_s, W_s.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,U,W,U_s,W_s\n");
        for i in 0..self.grid.len() {
            out.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e}\n",
                self.grid.s[i], self.u[i], self.w[i], self.u_s[i], self.w_s[i]
            ));
        }
        out
    }
}

/// Slope at node i taken as the average of the adjacent chord slopes
/// (one chord at the ends).
fn slopes(s: &[f64], f: &[f64]) -> Vec<f64> {
    let m = s.len() - 1;
    let chord = |j: usize| (f[j + 1] - f[j]) / (s[j + 1] - s[j]);
    (0..=m)
        .map(|i| match i {
            0 => chord(0),
            _ if i == m => chord(m - 1),
            _ => 0.5 * (chord(i - 1) + chord(i)),
        })
        .collect()
}

/// Three-point second difference; the end values copy their neighbours.
fn second_difference(s: &[f64], f: &[f64]) -> Vec<f64> {
    let m = s.len() - 1;
    let mut out = vec![0.0; m + 1];
    for i in 1..m {
        let (hl, hr) = (s[i] - s[i - 1], s[i + 1] - s[i]);
        out[i] = 2.0 / (hl + hr) * ((f[i + 1] - f[i]) / hr - (f[i] - f[i - 1]) / hl);
    }
    out[0] = out[1];
    out[m] = out[m - 1];
    out
}

/// Value and derivatives of a profile at one point. NaN marks an undefined
/// derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointDerivatives {
    pub value: f64,
    pub d_t: f64,
    pub d_s: f64,
    pub d_ss: f64,
}

impl PointDerivatives {
    pub fn constant(value: f64) -> Self {
        Self {
            value,
            d_t: 0.0,
            d_s: 0.0,
            d_ss: 0.0,
        }
    }

    /// Left limit at a kink (or the unique value elsewhere).
    pub fn left(e: &ProfileEval) -> Self {
        Self {
            value: e.value,
            d_t: e.d_t,
            d_s: e.d_s,
            d_ss: e.d_ss,
        }
    }

    /// Right limit at a kink (or the unique value elsewhere).
    pub fn right(e: &ProfileEval) -> Self {
        Self {
            d_ss: e.d_ss_right,
            ..Self::left(e)
        }
    }
}

fn defined(x: f64, name: &'static str) -> Result<f64, MassError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(MassError::UndefinedDerivative(name))
    }
}

/// P^{(μ⋆)}[φ,ψ](s) = φ_t − n² s^{2−2/n} φ_ss − n φ_s (ψ − μ⋆ s/n).
pub fn p_residual(
    phi: &PointDerivatives,
    psi: &PointDerivatives,
    mu_hi: f64,
    n: usize,
    s: f64,
) -> Result<f64, MassError> {
    let nf = n as f64;
    let (t, ss, d) = (
        defined(phi.d_t, "phi_t")?,
        defined(phi.d_ss, "phi_ss")?,
        defined(phi.d_s, "phi_s")?,
    );
    let psi_v = defined(psi.value, "psi")?;
    Ok(t - nf * nf * s.powf(2.0 - 2.0 / nf) * ss - nf * d * (psi_v - mu_hi * s / nf))
}

/// Q[φ,ψ](s) = ψ_t − n² s^{2−2/n} ψ_ss + ψ − K s^{1−σ} φ^σ, with
/// s^{1−σ}·0^σ read as 0.
pub fn q_residual(
    phi: &PointDerivatives,
    psi: &PointDerivatives,
    k_big: f64,
    sigma: f64,
    n: usize,
    s: f64,
) -> Result<f64, MassError> {
    let nf = n as f64;
    let phi_v = defined(phi.value, "phi")?;
    if phi_v < 0.0 {
        return Err(MassError::NegativePhi(phi_v));
    }
    let (t, ss, v) = (
        defined(psi.d_t, "psi_t")?,
        defined(psi.d_ss, "psi_ss")?,
        defined(psi.value, "psi")?,
    );
    let source = if phi_v == 0.0 {
        0.0
    } else {
        k_big * s.powf(1.0 - sigma) * phi_v.powf(sigma)
    };
    Ok(t - nf * nf * s.powf(2.0 - 2.0 / nf) * ss + v - source)
}

/// Which limit a residual was evaluated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualSide {
    Left,
    Right,
    Interior,
}

impl fmt::Display for ResidualSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResidualSide::Left => "left",
            ResidualSide::Right => "right",
            ResidualSide::Interior => "interior",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorResidual {
    pub s: f64,
    pub t: f64,
    pub p_value: f64,
    pub q_value: f64,
    pub side: ResidualSide,
}

/// CSV with columns s, t, p_value, q_value, side.
pub fn residual_csv(rows: &[OperatorResidual]) -> String {
    let mut out = String::from("s,t,p_value,q_value,side\n");
    for r in rows {
        out.push_str(&format!(
            "{:e},{:e},{:e},{:e},{}\n",
            r.s, r.t, r.p_value, r.q_value, r.side
        ));
    }
    out
}

/// Residuals of a discrete solution pair between two consecutive states,
/// using a backward difference in time. Each row carries the largest term
/// magnitude so callers can form a relative tolerance.
pub fn discrete_residuals(
    prev: &MassState,
    cur: &MassState,
    mu_hi: f64,
    k_big: f64,
    sigma: f64,
) -> Result<Vec<(OperatorResidual, f64)>, MassError> {
    let dt = cur.t - prev.t;
    let n = cur.grid.n;
    let nf = n as f64;
    let m = cur.grid.len() - 1;
    let mut rows = Vec::with_capacity(m);
    for i in 1..m {
        let s = cur.grid.s[i];
        let phi = PointDerivatives {
            value: cur.u[i],
            d_t: (cur.u[i] - prev.u[i]) / dt,
            d_s: cur.u_s[i],
            d_ss: cur.u_ss[i],
        };
        let psi = PointDerivatives {
            value: cur.w[i],
            d_t: (cur.w[i] - prev.w[i]) / dt,
            d_s: cur.w_s[i],
            d_ss: cur.w_ss[i],
        };
        let p = p_residual(&phi, &psi, mu_hi, n, s)?;
        let q = q_residual(&phi, &psi, k_big, sigma, n, s)?;
        let diff = nf * nf * s.powf(2.0 - 2.0 / nf);
        let scale = [
            phi.d_t.abs(),
            (diff * phi.d_ss).abs(),
            (nf * phi.d_s * psi.value).abs(),
            (phi.d_s * mu_hi * s).abs(),
            psi.d_t.abs(),
            (diff * psi.d_ss).abs(),
            psi.value.abs(),
            k_big * s.powf(1.0 - sigma) * phi.value.max(0.0).powf(sigma),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        rows.push((
            OperatorResidual {
                s,
                t: cur.t,
                p_value: p,
                q_value: q,
                side: ResidualSide::Interior,
            },
            scale,
        ));
    }
    Ok(rows)
}

/// Largest dt for which the explicit upwind transport keeps U monotone.
pub fn mass_stability_bound(ms: &MassState, mu_w: f64) -> f64 {
    let nf = ms.grid.n as f64;
    let s = &ms.grid.s;
    let m = s.len() - 1;
    let mut bound = f64::INFINITY;
    for i in 1..m {
        let b = nf * ms.w[i] - mu_w * s[i];
        let h = if b >= 0.0 { s[i + 1] - s[i] } else { s[i] - s[i - 1] };
        if b != 0.0 {
            bound = bound.min(h / b.abs());
        }
    }
    bound
}

/// One IMEX step of the mass system: implicit degenerate diffusion,
/// explicit upwind transport and explicit nonlocal source. U(0) = W(0) = 0,
/// U(Rⁿ) is conserved and W(Rⁿ) follows W′ = −W + (1/n)∫_0^{Rⁿ} f(nU_ξ)dξ.
pub fn step_mass(
    ms: &MassState,
    mu_w: f64,
    p: &ModelParams,
    dt: f64,
) -> Result<MassState, MassError> {
    if dt == 0.0 {
        return Ok(ms.clone());
    }
    let bound = mass_stability_bound(ms, mu_w);
    if dt > bound * (1.0 + 1e-12) {
        return Err(MassError::StabilityViolated { dt, bound });
    }
    let g = &ms.grid;
    let s = &g.s;
    let nf = g.n as f64;
    let m = s.len() - 1;

    // (1/n) ∫_0^{s_i} f(n U_ξ) dξ with U_ξ constant on each chord
    let mut source = vec![0.0; m + 1];
    for j in 0..m {
        let h = s[j + 1] - s[j];
        let slope = ((ms.u[j + 1] - ms.u[j]) / h).max(0.0);
        source[j + 1] = source[j] + p.production_rate(nf * slope)? * h / nf;
    }

    let mut rhs_u = vec![0.0; m - 1];
    let mut rhs_w = vec![0.0; m - 1];
    for i in 1..m {
        let b = nf * ms.w[i] - mu_w * s[i];
        let grad = if b >= 0.0 {
            (ms.u[i + 1] - ms.u[i]) / (s[i + 1] - s[i])
        } else {
            (ms.u[i] - ms.u[i - 1]) / (s[i] - s[i - 1])
        };
        rhs_u[i - 1] = ms.u[i] + dt * b * grad;
        rhs_w[i - 1] = ms.w[i] + dt * (source[i] - ms.w[i]);
    }
    let u_top = ms.u[m];
    let w_top = ms.w[m] + dt * (source[m] - ms.w[m]);

    let mut a = Tridiagonal::zeros(m - 1);
    for i in 1..m {
        let (hl, hr) = (s[i] - s[i - 1], s[i + 1] - s[i]);
        let c = dt * g.diffusivity(i) * 2.0 / (hl + hr);
        let k = i - 1;
        a.diag[k] = 1.0 + c / hl + c / hr;
        if i > 1 {
            a.lower[k] = -c / hl;
        }
        if i + 1 < m {
            a.upper[k] = -c / hr;
        } else {
            rhs_u[k] += c / hr * u_top;
            rhs_w[k] += c / hr * w_top;
        }
    }
    a.solve_in_place(&mut rhs_u);
    a.solve_in_place(&mut rhs_w);

    let mut u = Vec::with_capacity(m + 1);
    u.push(0.0);
    u.extend(rhs_u);
    u.push(u_top);
    let mut w = Vec::with_capacity(m + 1);
    w.push(0.0);
    w.extend(rhs_w);
    w.push(w_top);

    let next = MassState::from_cumulated(ms.t + dt, g.clone(), u, w);
    check_monotone(&next)?;
    Ok(next)
}

fn check_monotone(ms: &MassState) -> Result<(), MassError> {
    let s = &ms.grid.s;
    let mut max = 0.0_f64;
    let mut worst = (f64::INFINITY, 0.0);
    for j in 0..s.len() - 1 {
        let slope = (ms.u[j + 1] - ms.u[j]) / (s[j + 1] - s[j]);
        max = max.max(slope);
        if slope < worst.0 {
            worst = (slope, s[j]);
        }
    }
    if worst.0 < -MONOTONE_RTOL * max {
        return Err(MassError::MonotonicityLost {
            min: worst.0,
            s: worst.1,
            max,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Spacing;
    use crate::radial::RadialSolver;
    use proptest::prelude::*;

    fn grid(cells: usize) -> RadialGrid {
        RadialGrid::with_spacing(3, 1.0, cells, Spacing::Uniform).unwrap()
    }

    #[test]
    fn constant_density_cumulates_linearly() {
        let g = grid(64);
        let c = 2.5;
        let st = RadialState::new(&g, 0.0, vec![c; g.nodes()], vec![c; g.nodes()]).unwrap();
        let ms = cumulate(&st, &g);
        for i in 0..g.nodes() {
            assert!((ms.u[i] - c * g.s[i] / 3.0).abs() < 1e-14);
            assert!((ms.u_s[i] - c / 3.0).abs() < 1e-15);
        }
        assert!((ms.mean_u() - c).abs() < 1e-13);
        assert_eq!(ms.u[0], 0.0);
    }

    #[test]
    fn operator_examples() {
        let zero = PointDerivatives::constant(0.0);
        assert_eq!(p_residual(&zero, &zero, 1.0, 3, 0.4).unwrap(), 0.0);
        assert_eq!(q_residual(&zero, &zero, 3.0, 2.0, 3, 0.4).unwrap(), 0.0);
        let s = 0.7;
        let linear = PointDerivatives {
            value: s,
            d_t: 0.0,
            d_s: 1.0,
            d_ss: 0.0,
        };
        assert!((p_residual(&linear, &zero, 1.0, 3, s).unwrap() - s).abs() < 1e-15);
        assert!((q_residual(&zero, &linear, 3.0, 2.0, 3, s).unwrap() - s).abs() < 1e-15);
        let negative = PointDerivatives::constant(-1.0);
        assert_eq!(
            q_residual(&negative, &zero, 3.0, 2.0, 3, s),
            Err(MassError::NegativePhi(-1.0))
        );
        let undefined = PointDerivatives {
            d_ss: f64::NAN,
            ..linear
        };
        assert!(matches!(
            p_residual(&undefined, &zero, 1.0, 3, s),
            Err(MassError::UndefinedDerivative(_))
        ));
    }

    #[test]
    fn zero_step_is_identity() {
        let g = grid(32);
        let p = ModelParams::with_mean_density(3, 1.0, 1.0, 2.0, 1.0, 2.0);
        let u: Vec<f64> = g.r.iter().map(|r| 1.0 + r * r).collect();
        let st = RadialState::new(&g, 0.0, u.clone(), u).unwrap();
        let ms = cumulate(&st, &g);
        assert_eq!(step_mass(&ms, st.mu_w, &p, 0.0).unwrap(), ms);
    }

    #[test]
    fn affine_data_follow_homogeneous_ode() {
        // U = cs/n, W = ds/n: transport vanishes when μ_w = d and the ODE is
        // c′ = 0, d′ = −d + c^σ.
        let g = grid(32);
        let p = ModelParams::with_mean_density(3, 1.0, 1.0, 2.0, 1.0, 2.0);
        let (c, d) = (1.5, 0.5);
        let sg = SGrid::from_radial(&g);
        let u: Vec<f64> = sg.s.iter().map(|s| c * s / 3.0).collect();
        let w: Vec<f64> = sg.s.iter().map(|s| d * s / 3.0).collect();
        let ms = MassState::from_cumulated(0.0, sg.clone(), u, w);
        let dt = 1e-3;
        let next = step_mass(&ms, d, &p, dt).unwrap();
        let d_next = d + dt * (c * c - d);
        for i in 0..sg.len() {
            assert!((next.u[i] - c * sg.s[i] / 3.0).abs() < 1e-13);
            assert!((next.w[i] - d_next * sg.s[i] / 3.0).abs() < 1e-13);
        }
    }

    #[test]
    fn degenerate_diffusion_stays_finite() {
        let g = grid(64);
        let p = ModelParams::with_mean_density(3, 1.0, 1.0, 2.0, 1.0, 2.0);
        let u: Vec<f64> = g.r.iter().map(|r| 1.0 + (3.0 * r).cos()).collect();
        let w: Vec<f64> = g.r.iter().map(|r| 1.0 + 0.5 * (2.0 * r).cos()).collect();
        let st = RadialState::new(&g, 0.0, u, w).unwrap();
        let mut ms = cumulate(&st, &g);
        let mu_w = st.mu_w;
        let top = ms.u[g.cells()];
        for _ in 0..1000 {
            let dt = (0.5 * mass_stability_bound(&ms, mu_w)).min(1e-4);
            ms = step_mass(&ms, mu_w, &p, dt).unwrap();
        }
        assert!(ms.u.iter().chain(&ms.w).all(|x| x.is_finite()));
        assert_eq!(ms.u[g.cells()], top);
        assert_eq!(ms.u[0], 0.0);
    }

    /// One primitive step, cumulated, against one mass step from the
    /// cumulated data. The gap shrinks with dt and Δs.
    fn dual_path_gap(cells: usize, dt: f64) -> f64 {
        let g = grid(cells);
        let p = ModelParams::with_mean_density(3, 1.0, 1.0, 2.0, 1.0, 2.0);
        let u: Vec<f64> = g.r.iter().map(|r| 1.0 + 0.5 * (std::f64::consts::PI * r).cos()).collect();
        let w: Vec<f64> = g.r.iter().map(|r| 1.0 + 0.3 * (std::f64::consts::PI * r).cos()).collect();
        let st = RadialState::new(&g, 0.0, u, w).unwrap();
        let solver = RadialSolver::new(g.clone(), p.clone());
        let next = solver.step(&st, dt).unwrap();
        let via_radial = cumulate(&next, &g);
        let via_mass = step_mass(&cumulate(&st, &g), st.mu_w, &p, dt).unwrap();
        via_radial
            .u
            .iter()
            .zip(&via_mass.u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn dual_path_consistency() {
        // The two discretisations agree to O(dt·Δs²) after one step, well
        // inside the C(dt² + Δs²) envelope.
        let dt = 1e-4;
        let ds = grid(64).max_ds();
        let coarse = dual_path_gap(64, dt);
        let fine = dual_path_gap(128, dt);
        assert!(coarse <= dt * dt + ds * ds, "{coarse}");
        assert!(coarse <= 0.1 * dt * ds * ds, "{coarse}");
        let ratio = coarse / fine;
        assert!(ratio > 3.5 && ratio < 4.5, "refinement ratio {ratio}");
    }

    proptest! {
        #[test]
        fn holder_step(
            increments in proptest::collection::vec(0.0f64..5.0, 4..80),
            sigma in 1.0f64..4.0,
        ) {
            // Discrete U with nonnegative slopes on a uniform mesh.
            let m = increments.len();
            let ds = 1.0 / m as f64;
            let mut u = 0.0;
            let mut integral = 0.0;
            for (j, slope) in increments.iter().enumerate() {
                u += slope * ds;
                integral += slope.powf(sigma) * ds;
                let s = (j + 1) as f64 * ds;
                prop_assert!(u.powf(sigma) <= s.powf(sigma - 1.0) * integral * (1.0 + 1e-12) + 1e-300);
            }
        }

        #[test]
        fn cumulated_nonnegative_density_is_monotone(
            vals in proptest::collection::vec(0.0f64..10.0, 33)
        ) {
            let g = grid(32);
            let cum = g.cumulate_nodes(&vals);
            for w in cum.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
        }
    }
}
