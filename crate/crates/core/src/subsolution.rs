//! The exploding subsolution pair for the cumulated-density system.
//!
//! With a kink at s = 1/y(t), the profiles are
//!
//! ```text
//! Û(s,t) = a y^{1−α} s                          s ≤ 1/y(t)
//!        = α^{−α} a (s − (1−α)/y)^α             s > 1/y(t)
//! ```
//!
//! and Ŵ is the same with β in place of α. The subsolution is
//! (uU, uW) = e^{−θt}(Û, Ŵ), and y solves y′ = γ y^{1+δ}, y(0) = y₀, which
//! explodes at T = 1/(γδy₀^δ).
//!
//! [`select_parameters`] fixes every constant (α, β, δ, γ, θ, s₀, y₀, T) and
//! re-checks each sufficient inequality on the result before returning it.

use std::f64::consts::E;
use std::fmt;

use thiserror::Error;

use crate::config::{self, ConfigError};
use crate::grid::RadialGrid;
use crate::model::{sphere_area, DerivedConstants, ModelError, ModelParams, Mode};

/// Additive slack for strict inequalities on O(1) quantities.
pub const STRICT_SLACK: f64 = 1e-6;
/// Relative shrink applied to caps obtained by inverting a `≤` inequality so
/// that the re-check survives rounding.
const CAP_SHRINK: f64 = 1.0 - 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubsolutionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("parameter selection failed re-verification: {0}")]
    SelectionInfeasible(String),
    #[error("time {t} is outside [0, T) with T = {horizon}")]
    HorizonExceeded { t: f64, horizon: f64 },
    #[error("s = {s} is outside [0, Rⁿ = {max}]")]
    OutOfDomain { s: f64, max: f64 },
    #[error("no admissible initial data: {0}")]
    InfeasibleInitialData(String),
    #[error("y0 search did not terminate below {0}")]
    HorizonSearch(f64),
}

/// Profile exponents (α for U, β for W).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponents {
    pub alpha: f64,
    pub beta: f64,
}

impl Exponents {
    /// Strict form of 1 + 2/n − σ + ασ < β < 1 − 2/n with α, β ∈ (0, 1).
    pub fn admissible(&self, n: usize, sigma: f64) -> bool {
        let nf = n as f64;
        let (al, be) = (self.alpha, self.beta);
        al > 0.0
            && al < 1.0
            && be > 0.0
            && be < 1.0
            && 1.0 + 2.0 / nf - sigma + al * sigma < be
            && be < 1.0 - 2.0 / nf
    }
}

/// Deterministic exponent choice: with g = σ − 4/n, α = g/(2σ) and β is the
/// midpoint of (max(0, 1 + 2/n − σ + ασ), 1 − 2/n).
pub fn select_exponents(n: usize, sigma: f64) -> Result<Exponents, SubsolutionError> {
    let nf = n as f64;
    if !(n == 3 || n == 4) {
        return Err(ModelError::DimensionOutOfRange {
            n,
            allowed: Mode::Blowup.allowed_dimensions(),
        }
        .into());
    }
    let gap = sigma - 4.0 / nf;
    if gap <= 0.0 {
        return Err(ModelError::SubcriticalExponent {
            sigma,
            critical: 4.0 / nf,
        }
        .into());
    }
    let alpha = gap / (2.0 * sigma);
    let lower = (1.0 + 2.0 / nf - sigma + alpha * sigma).max(0.0);
    let beta = 0.5 * (lower + 1.0 - 2.0 / nf);
    let ex = Exponents { alpha, beta };
    if !ex.admissible(n, sigma) {
        return Err(SubsolutionError::SelectionInfeasible(format!(
            "exponents {ex:?} violate the admissibility window"
        )));
    }
    Ok(ex)
}

/// Which reading of the outer-region damping threshold produced θ**.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaReading {
    /// 2(1−β)(1+n²/β)·s₀^{−n/2}
    ExponentNOverTwo,
    /// 2(1−β)(1+n²/β)·s₀^{−2/n}
    ExponentTwoOverN,
    /// 2(1−β)(1+n²/β)·a·s₀^{−n/2}
    AmplitudeNOverTwo,
    /// 2(1−β)(1+n²/β)·a·s₀^{−2/n}
    AmplitudeTwoOverN,
    /// The floor θ** ≥ 2.
    Floor,
}

/// Every constant of the construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsolutionSpec {
    pub n: usize,
    pub radius: f64,
    pub sigma: f64,
    pub mu_lo: f64,
    pub mu_hi: f64,
    pub k_big: f64,
    pub exponents: Exponents,
    pub a: f64,
    pub theta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub y0: f64,
    /// Explosion time of y, T = 1/(γδy₀^δ).
    pub horizon: f64,
    pub s0: f64,
    pub delta_star: f64,
    pub delta_2star: f64,
    pub gamma_star: f64,
    pub y_star: f64,
    pub l_big: f64,
    /// The three caps on s*: mass-ratio, diffusion and time-derivative.
    pub s_star_caps: [f64; 3],
    pub s_star: f64,
    pub s_2star: f64,
    pub theta_star: f64,
    pub theta_2star: f64,
    /// All four candidate values of the θ** threshold, in [`ThetaReading`] order.
    pub theta_2star_readings: [f64; 4],
    pub theta_2star_reading: ThetaReading,
    /// Upper time bound requested by the caller.
    pub t_star: f64,
}

/// One re-verified inequality.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub holds: bool,
    pub detail: String,
}

fn check(name: &'static str, holds: bool, detail: String) -> Check {
    Check {
        name,
        holds,
        detail,
    }
}

/// Builds the full constant bundle for validated blow-up parameters.
pub fn select_parameters(
    p: &ModelParams,
    dc: &DerivedConstants,
    ex: Exponents,
    t_star: f64,
) -> Result<SubsolutionSpec, SubsolutionError> {
    let p = p.clone().validate(Mode::Blowup)?;
    if !(t_star > 0.0) {
        return Err(SubsolutionError::SelectionInfeasible(format!(
            "T_star = {t_star} must be positive"
        )));
    }
    if !ex.admissible(p.n, p.sigma) {
        return Err(SubsolutionError::SelectionInfeasible(format!(
            "exponents {ex:?} violate 1 + 2/n − σ + ασ < β < 1 − 2/n"
        )));
    }
    let n = p.n as f64;
    let (al, be) = (ex.alpha, ex.beta);
    let sigma = p.sigma;
    let a = dc.a;
    let mu_hi = dc.mu_hi;
    let rn = p.radius.powi(p.n as i32);

    let delta_star = 1.0 - be;
    let delta_2star = 0.5 * (1.0 - be);
    let gamma_star = n * a / E / (2.0 * (1.0 - al));
    let y_star = 1.0_f64
        .max((2.0 * E * mu_hi / (n * a)).powf(1.0 / (1.0 - be)))
        .max(1.0 / rn + STRICT_SLACK);
    let l_big = dc.l_big;

    let cap_mass = (n * a / (2.0 * E * mu_hi)).powf(1.0 / (1.0 - be));
    let cap_diffusion = (a * al / (4.0 * n * (1.0 - al) * E)).powf(1.0 / (1.0 - 2.0 / n - be));
    let cap_time = (n * a / (4.0 * (1.0 - al) * E)).powf(1.0 / (1.0 - be - delta_2star));
    let s_star_caps = [cap_mass, cap_diffusion, cap_time].map(|c| c.min(1.0) * CAP_SHRINK);
    let s_star = s_star_caps.iter().copied().fold(1.0, f64::min);

    let e9 = q_annulus_exponent(p.n, sigma, ex);
    let s_2star = ((dc.k_big * a.powf(sigma) * (-(sigma - 1.0)).exp()) / (a * (1.0 + n * n / be)))
        .powf(1.0 / e9)
        .min(1.0)
        * CAP_SHRINK;

    let s0 = s_star.min(s_2star);
    let theta_star = theta_star_threshold(n, p.radius, al, mu_hi, s0) * (1.0 + STRICT_SLACK);
    let theta_2star_readings = theta_2star_candidates(n, be, a, s0);
    let (mut theta_2star, mut theta_2star_reading) = (2.0, ThetaReading::Floor);
    for (value, reading) in theta_2star_readings.iter().zip([
        ThetaReading::ExponentNOverTwo,
        ThetaReading::ExponentTwoOverN,
        ThetaReading::AmplitudeNOverTwo,
        ThetaReading::AmplitudeTwoOverN,
    ]) {
        if *value > theta_2star {
            theta_2star = *value;
            theta_2star_reading = reading;
        }
    }

    let delta = delta_star.min(delta_2star).min(2.0 / n);
    let theta = theta_star.max(theta_2star).max(2.0);
    let gamma = gamma_star.min(l_big).min(1.0);

    let y_base = y_star.max(1.0).max(1.0 / rn) + 1.0;
    let deadline = (1.0 / theta).min(t_star);
    let mut y0 = y_base;
    let mut horizon = 1.0 / (gamma * delta * y0.powf(delta));
    while !(horizon < deadline) {
        y0 *= 2.0;
        if !y0.is_finite() {
            return Err(SubsolutionError::HorizonSearch(y_base));
        }
        horizon = 1.0 / (gamma * delta * y0.powf(delta));
    }

    let spec = SubsolutionSpec {
        n: p.n,
        radius: p.radius,
        sigma,
        mu_lo: dc.mu_lo,
        mu_hi,
        k_big: dc.k_big,
        exponents: ex,
        a,
        theta,
        gamma,
        delta,
        y0,
        horizon,
        s0,
        delta_star,
        delta_2star,
        gamma_star,
        y_star,
        l_big,
        s_star_caps,
        s_star,
        s_2star,
        theta_star,
        theta_2star,
        theta_2star_readings,
        theta_2star_reading,
        t_star,
    };
    let failed: Vec<String> = spec
        .verify()
        .into_iter()
        .filter(|c| !c.holds)
        .map(|c| format!("{} ({})", c.name, c.detail))
        .collect();
    if failed.is_empty() {
        Ok(spec)
    } else {
        Err(SubsolutionError::SelectionInfeasible(failed.join("; ")))
    }
}

/// β − 2/n − 1 + σ − ασ, positive under the exponent window.
fn q_annulus_exponent(n: usize, sigma: f64, ex: Exponents) -> f64 {
    ex.beta - 2.0 / n as f64 - 1.0 + sigma - ex.alpha * sigma
}

/// Right-hand side of the outer P-region threshold:
/// (1 + μ⋆Rⁿ)/s₀^{1+α} + n²R^{2n−2}/(α s₀^{2+α}).
fn theta_star_threshold(n: f64, radius: f64, alpha: f64, mu_hi: f64, s0: f64) -> f64 {
    (1.0 + mu_hi * radius.powf(n)) / s0.powf(1.0 + alpha)
        + n * n * radius.powf(2.0 * n - 2.0) / (alpha * s0.powf(2.0 + alpha))
}

fn theta_2star_candidates(n: f64, beta: f64, a: f64, s0: f64) -> [f64; 4] {
    let base = 2.0 * (1.0 - beta) * (1.0 + n * n / beta);
    [
        base * s0.powf(-n / 2.0),
        base * s0.powf(-2.0 / n),
        base * a * s0.powf(-n / 2.0),
        base * a * s0.powf(-2.0 / n),
    ]
}

impl SubsolutionSpec {
    /// Re-evaluates every sufficient condition used by the region estimates.
    pub fn verify(&self) -> Vec<Check> {
        let n = self.n as f64;
        let (al, be) = (self.exponents.alpha, self.exponents.beta);
        let a = self.a;
        let rn = self.radius.powi(self.n as i32);
        let sigma = self.sigma;
        let mut out = Vec::new();

        out.push(check(
            "exponent window",
            self.exponents.admissible(self.n, sigma),
            format!("alpha = {al}, beta = {be}"),
        ));
        out.push(check(
            "beta + (1-alpha) sigma > 1 + 2/n",
            be + (1.0 - al) * sigma > 1.0 + 2.0 / n,
            format!("{} vs {}", be + (1.0 - al) * sigma, 1.0 + 2.0 / n),
        ));
        out.push(check(
            "1 - 2/n - beta > 0",
            1.0 - 2.0 / n - be > 0.0,
            format!("{}", 1.0 - 2.0 / n - be),
        ));
        out.push(check(
            "delta_star = 1 - beta",
            self.delta_star == 1.0 - be,
            format!("{}", self.delta_star),
        ));
        out.push(check(
            "delta_2star in (0, 1 - beta)",
            self.delta_2star > 0.0 && self.delta_2star < 1.0 - be,
            format!("{}", self.delta_2star),
        ));
        let y_mass = (2.0 * E * self.mu_hi / (n * a)).powf(1.0 / (1.0 - be));
        out.push(check(
            "y_star >= 1, y_star >= (2e mu_hi/(n a))^(1/(1-beta)), y_star > 1/R^n",
            self.y_star >= 1.0 && self.y_star >= y_mass && self.y_star > 1.0 / rn,
            format!("y_star = {}, bound = {y_mass}", self.y_star),
        ));
        let gs = n * a / E / (2.0 * (1.0 - al));
        out.push(check(
            "gamma_star = n a e^-1 / (2(1-alpha))",
            (self.gamma_star - gs).abs() <= 4.0 * f64::EPSILON * gs,
            format!("{} vs {gs}", self.gamma_star),
        ));
        out.push(check(
            "s_star in (0, 1]",
            self.s_star > 0.0 && self.s_star <= 1.0,
            format!("{}", self.s_star),
        ));
        let bound74 = (n * a / (2.0 * E * self.mu_hi)).powf(1.0 / (1.0 - be));
        out.push(check(
            "s_star <= (n a/(2e mu_hi))^(1/(1-beta))",
            self.s_star <= bound74,
            format!("{} vs {bound74}", self.s_star),
        ));
        let lhs75 = 2.0 * n * (1.0 - al) * E / (a * al) * self.s_star.powf(1.0 - 2.0 / n - be);
        out.push(check(
            "2n(1-alpha)e/(a alpha) s_star^(1-2/n-beta) <= 1/2",
            lhs75 <= 0.5,
            format!("{lhs75}"),
        ));
        let lhs76 = 2.0 * (1.0 - al) * E / (n * a) * self.s_star.powf(1.0 - be - self.delta_2star);
        out.push(check(
            "2(1-alpha)e/(n a) s_star^(1-beta-delta_2star) <= 1/2",
            lhs76 <= 0.5,
            format!("{lhs76}"),
        ));
        let e9 = q_annulus_exponent(self.n, sigma, self.exponents);
        let lhs94 = a * (1.0 + n * n / be) * self.s_2star.powf(e9);
        let rhs94 = self.k_big * a.powf(sigma) * (-(sigma - 1.0)).exp();
        out.push(check(
            "a(1+n^2/beta) s_2star^e <= K a^sigma e^-(sigma-1)",
            e9 > 0.0 && self.s_2star > 0.0 && self.s_2star <= 1.0 && lhs94 <= rhs94,
            format!("{lhs94} vs {rhs94}"),
        ));
        out.push(check(
            "s0 = min(s_star, s_2star)",
            self.s0 == self.s_star.min(self.s_2star),
            format!("{}", self.s0),
        ));
        let rhs83 = theta_star_threshold(n, self.radius, al, self.mu_hi, self.s0);
        out.push(check(
            "theta_star > (1+mu_hi R^n)/s0^(1+alpha) + n^2 R^(2n-2)/(alpha s0^(2+alpha))",
            self.theta_star > rhs83,
            format!("{} vs {rhs83}", self.theta_star),
        ));
        let readings = theta_2star_candidates(n, be, a, self.s0);
        let needed = readings.iter().copied().fold(2.0, f64::max);
        out.push(check(
            "theta_2star >= 2 and >= every reading of the outer Q threshold",
            self.theta_2star >= needed,
            format!("{} vs {needed}", self.theta_2star),
        ));
        out.push(check(
            "delta = min(delta_star, delta_2star, 2/n)",
            self.delta == self.delta_star.min(self.delta_2star).min(2.0 / n),
            format!("{}", self.delta),
        ));
        out.push(check(
            "theta = max(theta_star, theta_2star, 2)",
            self.theta == self.theta_star.max(self.theta_2star).max(2.0) && self.theta >= 1.0,
            format!("{}", self.theta),
        ));
        out.push(check(
            "gamma = min(gamma_star, L, 1)",
            self.gamma == self.gamma_star.min(self.l_big).min(1.0) && self.gamma > 0.0,
            format!("{}", self.gamma),
        ));
        out.push(check(
            "y0 > max(1, 1/R^n) and y0 >= y_star",
            self.y0 > 1.0_f64.max(1.0 / rn) && self.y0 >= self.y_star,
            format!("{}", self.y0),
        ));
        let horizon = 1.0 / (self.gamma * self.delta * self.y0.powf(self.delta));
        out.push(check(
            "T = 1/(gamma delta y0^delta) < min(1/theta, T_star)",
            self.horizon == horizon && horizon < (1.0 / self.theta).min(self.t_star),
            format!("T = {horizon}, 1/theta = {}", 1.0 / self.theta),
        ));
        out
    }

    pub fn is_consistent(&self) -> bool {
        self.verify().iter().all(|c| c.holds)
    }

    /// Closed-form solution of y′ = γ y^{1+δ}, y(0) = y₀.
    pub fn y_of_t(&self, t: f64) -> Result<f64, SubsolutionError> {
        if !(t >= 0.0 && t < self.horizon) {
            return Err(SubsolutionError::HorizonExceeded {
                t,
                horizon: self.horizon,
            });
        }
        Ok(self.y0 * (1.0 - t / self.horizon).powf(-1.0 / self.delta))
    }

    /// y′(t) = γ y^{1+δ}.
    pub fn y_prime(&self, y: f64) -> f64 {
        self.gamma * y.powf(1.0 + self.delta)
    }

    fn exponent(&self, which: Profile) -> f64 {
        match which {
            Profile::U => self.exponents.alpha,
            Profile::W => self.exponents.beta,
        }
    }

    /// Û or Ŵ and their derivatives at (s, t).
    pub fn eval_hat(&self, which: Profile, s: f64, t: f64) -> Result<ProfileEval, SubsolutionError> {
        let y = self.y_of_t(t)?;
        self.check_s(s)?;
        Ok(hat_profile(self.a, self.exponent(which), y, self.y_prime(y), s))
    }

    /// e^{−θt}·Û (or Ŵ) with the product rule applied to d_t.
    pub fn eval_sub(&self, which: Profile, s: f64, t: f64) -> Result<ProfileEval, SubsolutionError> {
        let hat = self.eval_hat(which, s, t)?;
        let damp = (-self.theta * t).exp();
        Ok(ProfileEval {
            value: damp * hat.value,
            d_t: damp * (hat.d_t - self.theta * hat.value),
            d_s: damp * hat.d_s,
            d_ss: damp * hat.d_ss,
            d_ss_right: damp * hat.d_ss_right,
            kink: hat.kink,
            side: hat.side,
        })
    }

    fn check_s(&self, s: f64) -> Result<(), SubsolutionError> {
        let max = self.radius.powi(self.n as i32);
        if !(0.0..=max * (1.0 + 1e-12)).contains(&s) {
            return Err(SubsolutionError::OutOfDomain { s, max });
        }
        Ok(())
    }

    /// Lower envelope of u(0, t) implied by the ordering U ≥ uU:
    /// n·uU_s(0⁺, t)/n = e^{−θt} a y^{1−α}(t).
    pub fn axis_envelope(&self, t: f64) -> Result<f64, SubsolutionError> {
        let y = self.y_of_t(t)?;
        Ok((-self.theta * t).exp() * self.a * y.powf(1.0 - self.exponents.alpha))
    }

    /// Time after which the axis envelope is increasing. Its logarithmic
    /// derivative is −θ + (1−α)γ y^δ, so it grows once y^δ ≥ θ/((1−α)γ).
    pub fn envelope_monotone_from(&self) -> f64 {
        let y_turn = (self.theta / ((1.0 - self.exponents.alpha) * self.gamma)).powf(1.0 / self.delta);
        if y_turn <= self.y0 {
            0.0
        } else {
            // y(t) = y₀(1 − t/T)^{−1/δ}
            self.horizon * (1.0 - (self.y0 / y_turn).powf(self.delta))
        }
    }

    /// key = value rendering; [`SubsolutionSpec::from_config_str`] inverts it
    /// exactly.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.float_fields() {
            out.push_str(&format!("{key} = {value:?}\n"));
        }
        out.push_str(&format!("n = {}\n", self.n));
        out.push_str(&format!("theta_2star_reading = {}\n", self.theta_2star_reading));
        out
    }

    fn float_fields(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("R", self.radius),
            ("sigma", self.sigma),
            ("mu_lo", self.mu_lo),
            ("mu_hi", self.mu_hi),
            ("K", self.k_big),
            ("alpha", self.exponents.alpha),
            ("beta", self.exponents.beta),
            ("a", self.a),
            ("theta", self.theta),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("y0", self.y0),
            ("T", self.horizon),
            ("s0", self.s0),
            ("delta_star", self.delta_star),
            ("delta_2star", self.delta_2star),
            ("gamma_star", self.gamma_star),
            ("y_star", self.y_star),
            ("L", self.l_big),
            ("s_star_cap_mass", self.s_star_caps[0]),
            ("s_star_cap_diffusion", self.s_star_caps[1]),
            ("s_star_cap_time", self.s_star_caps[2]),
            ("s_star", self.s_star),
            ("s_2star", self.s_2star),
            ("theta_star", self.theta_star),
            ("theta_2star", self.theta_2star),
            ("theta_2star_n_over_2", self.theta_2star_readings[0]),
            ("theta_2star_2_over_n", self.theta_2star_readings[1]),
            ("theta_2star_a_n_over_2", self.theta_2star_readings[2]),
            ("theta_2star_a_2_over_n", self.theta_2star_readings[3]),
            ("T_star", self.t_star),
        ]
    }

    pub fn from_config_str(text: &str) -> Result<Self, ConfigError> {
        let kv = config::parse(text)?;
        let f = |key: &str| kv.require::<f64>(key);
        let reading: ThetaReading = kv.require("theta_2star_reading")?;
        let spec = Self {
            n: kv.require("n")?,
            radius: f("R")?,
            sigma: f("sigma")?,
            mu_lo: f("mu_lo")?,
            mu_hi: f("mu_hi")?,
            k_big: f("K")?,
            exponents: Exponents {
                alpha: f("alpha")?,
                beta: f("beta")?,
            },
            a: f("a")?,
            theta: f("theta")?,
            gamma: f("gamma")?,
            delta: f("delta")?,
            y0: f("y0")?,
            horizon: f("T")?,
            s0: f("s0")?,
            delta_star: f("delta_star")?,
            delta_2star: f("delta_2star")?,
            gamma_star: f("gamma_star")?,
            y_star: f("y_star")?,
            l_big: f("L")?,
            s_star_caps: [
                f("s_star_cap_mass")?,
                f("s_star_cap_diffusion")?,
                f("s_star_cap_time")?,
            ],
            s_star: f("s_star")?,
            s_2star: f("s_2star")?,
            theta_star: f("theta_star")?,
            theta_2star: f("theta_2star")?,
            theta_2star_readings: [
                f("theta_2star_n_over_2")?,
                f("theta_2star_2_over_n")?,
                f("theta_2star_a_n_over_2")?,
                f("theta_2star_a_2_over_n")?,
            ],
            theta_2star_reading: reading,
            t_star: f("T_star")?,
        };
        let known: Vec<&str> = spec
            .float_fields()
            .iter()
            .map(|(k, _)| *k)
            .chain(["n", "theta_2star_reading"])
            .collect();
        kv.reject_unknown(&known)?;
        Ok(spec)
    }

    /// CSV of both subsolution profiles at time t on the given s nodes:
    /// s, uU, uW, uU_t, uU_s, uU_ss, uW_t, uW_s, uW_ss, side.
    pub fn profile_csv(&self, s_nodes: &[f64], t: f64) -> Result<String, SubsolutionError> {
        let mut out = String::from("s,uU,uW,uU_t,uU_s,uU_ss,uW_t,uW_s,uW_ss,side\n");
        for &s in s_nodes {
            let u = self.eval_sub(Profile::U, s, t)?;
            let w = self.eval_sub(Profile::W, s, t)?;
            out.push_str(&format!(
                "{s:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}\n",
                u.value, w.value, u.d_t, u.d_s, u.d_ss, w.d_t, w.d_s, w.d_ss, u.side
            ));
        }
        Ok(out)
    }
}

impl fmt::Display for ThetaReading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThetaReading::ExponentNOverTwo => "n_over_2",
            ThetaReading::ExponentTwoOverN => "2_over_n",
            ThetaReading::AmplitudeNOverTwo => "a_n_over_2",
            ThetaReading::AmplitudeTwoOverN => "a_2_over_n",
            ThetaReading::Floor => "floor",
        })
    }
}

impl std::str::FromStr for ThetaReading {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "n_over_2" => ThetaReading::ExponentNOverTwo,
            "2_over_n" => ThetaReading::ExponentTwoOverN,
            "a_n_over_2" => ThetaReading::AmplitudeNOverTwo,
            "a_2_over_n" => ThetaReading::AmplitudeTwoOverN,
            "floor" => ThetaReading::Floor,
            other => return Err(format!("unknown theta reading `{other}`")),
        })
    }
}

/// Which of the two profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    U,
    W,
}

/// Position relative to the kink s = 1/y(t).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Inner,
    Kink,
    Outer,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Inner => "inner",
            Side::Kink => "kink",
            Side::Outer => "outer",
        })
    }
}

/// Value and derivatives of one profile at a point. At the kink `d_ss` is
/// the left limit and `d_ss_right` the right limit; elsewhere they agree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileEval {
    pub value: f64,
    pub d_t: f64,
    pub d_s: f64,
    pub d_ss: f64,
    pub d_ss_right: f64,
    /// Kink location 1/y(t).
    pub kink: f64,
    pub side: Side,
}

/// Evaluates the hat profile with exponent κ, amplitude a and kink 1/y.
pub fn hat_profile(a: f64, kappa: f64, y: f64, y_prime: f64, s: f64) -> ProfileEval {
    let kink = 1.0 / y;
    let inner = |s: f64| ProfileEval {
        value: a * y.powf(1.0 - kappa) * s,
        d_t: (1.0 - kappa) * a * y.powf(-kappa) * y_prime * s,
        d_s: a * y.powf(1.0 - kappa),
        d_ss: 0.0,
        d_ss_right: 0.0,
        kink,
        side: Side::Inner,
    };
    let outer = |s: f64| {
        let d = s - (1.0 - kappa) / y;
        let c = kappa.powf(1.0 - kappa) * a;
        let d_ss = -c * (1.0 - kappa) * d.powf(kappa - 2.0);
        ProfileEval {
            value: kappa.powf(-kappa) * a * d.powf(kappa),
            d_t: c * (1.0 - kappa) * d.powf(kappa - 1.0) * y_prime / (y * y),
            d_s: c * d.powf(kappa - 1.0),
            d_ss,
            d_ss_right: d_ss,
            kink,
            side: Side::Outer,
        }
    };
    if s < kink {
        inner(s)
    } else if s > kink {
        outer(s)
    } else {
        let right = outer(s);
        ProfileEval {
            d_ss_right: right.d_ss,
            side: Side::Kink,
            ..inner(s)
        }
    }
}

/// Generated initial data and its bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub u0: Vec<f64>,
    pub w0: Vec<f64>,
    /// Scale factor applied to both hat profiles.
    pub scale: f64,
    pub mass_u: f64,
    pub mass_w: f64,
    /// ‖w₀‖_∞ / (M⋆/|Ω|); the pointwise bound on w₀ holds iff this is ≤ 1.
    pub w_sup_ratio: f64,
    /// min over nodes of U(s,0) − uU(s,0) and W(s,0) − uW(s,0).
    pub ordering_margin_u: f64,
    pub ordering_margin_w: f64,
}

impl InitialData {
    pub fn w_sup_within_bound(&self) -> bool {
        self.w_sup_ratio <= 1.0
    }
}

/// u₀, w₀ on `grid` whose cumulated densities equal c·Û(·,0) and c·Ŵ(·,0)
/// at every cell face, with the smallest c ≥ 1 placing both masses in
/// [M_lo, M_hi].
pub fn initial_data(
    spec: &SubsolutionSpec,
    p: &ModelParams,
    grid: &RadialGrid,
) -> Result<InitialData, SubsolutionError> {
    let cell_average = |which: Profile| -> Result<Vec<f64>, SubsolutionError> {
        let faces: Vec<f64> = grid
            .s_face
            .iter()
            .map(|&s| spec.eval_hat(which, s.min(spec.radius.powi(spec.n as i32)), 0.0).map(|e| e.value))
            .collect::<Result<_, _>>()?;
        Ok((0..grid.nodes())
            .map(|i| (faces[i + 1] - faces[i]) / grid.cell[i])
            .collect())
    };
    let u_unit = cell_average(Profile::U)?;
    let w_unit = cell_average(Profile::W)?;
    let mass_u1 = grid.integrate(&u_unit);
    let mass_w1 = grid.integrate(&w_unit);
    let scale = 1.0_f64
        .max(p.mass_lo / mass_u1)
        .max(p.mass_lo / mass_w1);
    let (mass_u, mass_w) = (scale * mass_u1, scale * mass_w1);
    if mass_u > p.mass_hi || mass_w > p.mass_hi {
        return Err(SubsolutionError::InfeasibleInitialData(format!(
            "scale {scale} puts masses ({mass_u}, {mass_w}) above M_hi = {}; enlarge M_hi",
            p.mass_hi
        )));
    }
    let u0: Vec<f64> = u_unit.iter().map(|x| scale * x).collect();
    let w0: Vec<f64> = w_unit.iter().map(|x| scale * x).collect();
    let u_cum = grid.cumulate_nodes(&u0);
    let w_cum = grid.cumulate_nodes(&w0);
    let mut margin_u = f64::INFINITY;
    let mut margin_w = f64::INFINITY;
    for i in 0..grid.nodes() {
        let su = spec.eval_sub(Profile::U, grid.s[i], 0.0)?.value;
        let sw = spec.eval_sub(Profile::W, grid.s[i], 0.0)?.value;
        margin_u = margin_u.min(u_cum[i] - su);
        margin_w = margin_w.min(w_cum[i] - sw);
    }
    let slack = 1e-12 * (u_cum[grid.cells()] + w_cum[grid.cells()]);
    if margin_u < -slack || margin_w < -slack {
        return Err(SubsolutionError::InfeasibleInitialData(format!(
            "initial ordering fails: margins U {margin_u}, W {margin_w}"
        )));
    }
    let w_sup = w0.iter().copied().fold(0.0, f64::max);
    let w_sup_ratio = w_sup / (p.mass_hi / grid.volume());
    debug_assert!((sphere_area(grid.n) * spec.eval_hat(Profile::U, spec.radius.powi(spec.n as i32), 0.0)?.value - mass_u1).abs() <= 1e-9 * mass_u1);
    Ok(InitialData {
        u0,
        w0,
        scale,
        mass_u,
        mass_w,
        w_sup_ratio,
        ordering_margin_u: margin_u,
        ordering_margin_w: margin_w,
    })
}
