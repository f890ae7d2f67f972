//! Model parameters, hypothesis checks and the derived constants shared by
//! every other module.
//!
//! The system is
//!
//! ```text
//! u_t = Δu − ∇·(u∇v),   0 = Δv − μ_w(t) + w,   w_t = Δw − w + f(u)
//! ```
//!
//! on the ball B_R ⊂ ℝⁿ with homogeneous Neumann data, where the production
//! law satisfies f(u) ≥ k·u^σ.

use std::f64::consts::{E, PI};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::config::{self, ConfigError, KvPairs};

/// Relative slack admitted when checking a user production law against its
/// declared lower bound k·u^σ.
pub const LOWER_BOUND_RTOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension n = {n} is outside the admissible set {allowed:?} for this mode")]
    DimensionOutOfRange { n: usize, allowed: &'static [usize] },
    #[error("production exponent sigma = {sigma} does not exceed the critical value 4/n = {critical}")]
    SubcriticalExponent { sigma: f64, critical: f64 },
    #[error("mass bounds inverted: M_lo = {lo} must be strictly below M_hi = {hi}")]
    MassBoundsInverted { lo: f64, hi: f64 },
    #[error("parameter {name} = {value} must be strictly positive and finite")]
    NonpositiveParameter { name: &'static str, value: f64 },
    #[error("production law f({u}) = {value} falls below its declared lower bound {bound}")]
    LowerBoundViolated { u: f64, value: f64, bound: f64 },
    #[error("negative density {0} passed to the production law")]
    NegativeDensity(f64),
}

/// Which hypotheses a parameter set must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Subsolution construction: n ∈ {3, 4} and σ > 4/n.
    Blowup,
    /// Plain simulation: n ∈ {1, 2, 3, 4}, any σ > 0.
    Simulate,
}

impl Mode {
    pub fn allowed_dimensions(self) -> &'static [usize] {
        match self {
            Mode::Blowup => &[3, 4],
            Mode::Simulate => &[1, 2, 3, 4],
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Blowup => "blowup",
            Mode::Simulate => "simulate",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "blowup" => Ok(Mode::Blowup),
            "simulate" => Ok(Mode::Simulate),
            other => Err(format!("unknown mode `{other}` (expected blowup or simulate)")),
        }
    }
}

/// Production law f. Only the lower bound k·u^σ enters the blow-up
/// construction, so custom laws are checked against it on every call.
#[derive(Clone)]
pub enum ProductionLaw {
    /// f(u) = k·u^σ.
    Power,
    /// Arbitrary f with the declared witness (k, σ) taken from [`ModelParams`].
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for ProductionLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProductionLaw::Power => f.write_str("Power"),
            ProductionLaw::Custom(_) => f.write_str("Custom(<closure>)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    /// Spatial dimension.
    pub n: usize,
    /// Ball radius R.
    pub radius: f64,
    /// Production coefficient k in f(u) ≥ k·u^σ.
    pub k: f64,
    /// Production exponent σ.
    pub sigma: f64,
    /// Lower mass bound M*.
    pub mass_lo: f64,
    /// Upper mass bound M⋆.
    pub mass_hi: f64,
    pub law: ProductionLaw,
}

impl ModelParams {
    /// Power-law parameters f(u) = k·u^σ.
    pub fn power(n: usize, radius: f64, k: f64, sigma: f64, mass_lo: f64, mass_hi: f64) -> Self {
        Self {
            n,
            radius,
            k,
            sigma,
            mass_lo,
            mass_hi,
            law: ProductionLaw::Power,
        }
    }

    /// Parameters whose mass window corresponds to prescribed mean densities:
    /// M* = 2|Ω|·mu_lo, so that μ* = mu_lo.
    pub fn with_mean_density(
        n: usize,
        radius: f64,
        k: f64,
        sigma: f64,
        mu_lo: f64,
        mass_ratio: f64,
    ) -> Self {
        let vol = ball_volume(n, radius);
        let mass_lo = 2.0 * vol * mu_lo;
        Self::power(n, radius, k, sigma, mass_lo, mass_ratio * mass_lo)
    }

    pub fn with_law(mut self, law: ProductionLaw) -> Self {
        self.law = law;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn critical_sigma(&self) -> f64 {
        4.0 / self.n as f64
    }

    pub fn domain_volume(&self) -> f64 {
        ball_volume(self.n, self.radius)
    }

    /// Checks every invariant required by `mode` and hands the parameters back.
    pub fn validate(self, mode: Mode) -> Result<Self, ModelError> {
        let allowed = mode.allowed_dimensions();
        if !allowed.contains(&self.n) {
            return Err(ModelError::DimensionOutOfRange { n: self.n, allowed });
        }
        for (name, value) in [
            ("R", self.radius),
            ("k", self.k),
            ("sigma", self.sigma),
            ("M_lo", self.mass_lo),
            ("M_hi", self.mass_hi),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::NonpositiveParameter { name, value });
            }
        }
        if self.mass_lo >= self.mass_hi {
            return Err(ModelError::MassBoundsInverted {
                lo: self.mass_lo,
                hi: self.mass_hi,
            });
        }
        if mode == Mode::Blowup {
            let critical = self.critical_sigma();
            if self.sigma <= critical {
                return Err(ModelError::SubcriticalExponent {
                    sigma: self.sigma,
                    critical,
                });
            }
        }
        Ok(self)
    }

    /// Evaluates f(u), asserting f(u) ≥ k·u^σ for custom laws.
    pub fn production_rate(&self, u: f64) -> Result<f64, ModelError> {
        if u < 0.0 {
            return Err(ModelError::NegativeDensity(u));
        }
        let bound = self.k * u.powf(self.sigma);
        match &self.law {
            ProductionLaw::Power => Ok(bound),
            ProductionLaw::Custom(f) => {
                let value = f(u);
                if value < bound - LOWER_BOUND_RTOL * bound.abs() || value.is_nan() {
                    Err(ModelError::LowerBoundViolated { u, value, bound })
                } else {
                    Ok(value)
                }
            }
        }
    }

    /// One-sided finite-difference estimate of f′(u), used by the reaction
    /// time-step limiter.
    pub fn production_slope(&self, u: f64) -> Result<f64, ModelError> {
        let h = 1e-6 * u.max(1.0);
        let hi = self.production_rate(u + h)?;
        let lo = self.production_rate(u)?;
        Ok(((hi - lo) / h).max(0.0))
    }

    /// Reads the model keys (n, R, k, sigma, M_lo, M_hi, mode) from a
    /// key = value text. Any other key is rejected.
    pub fn from_config_str(text: &str) -> Result<(Self, Mode), ConfigError> {
        let kv = config::parse(text)?;
        kv.reject_unknown(MODEL_KEYS)?;
        Self::from_pairs(&kv)
    }

    /// Reads the model keys from already-parsed pairs; other keys are ignored.
    pub fn from_pairs(kv: &KvPairs) -> Result<(Self, Mode), ConfigError> {
        let n: usize = kv.require("n")?;
        let radius: f64 = kv.get_or("R", 1.0)?;
        let k: f64 = kv.get_or("k", 1.0)?;
        let sigma: f64 = kv.require("sigma")?;
        let mass_lo: f64 = kv.require("M_lo")?;
        let mass_hi: f64 = kv.require("M_hi")?;
        let mode: Mode = kv.get_or("mode", Mode::Blowup)?;
        Ok((Self::power(n, radius, k, sigma, mass_lo, mass_hi), mode))
    }

    /// key = value rendering accepted by [`ModelParams::from_config_str`].
    pub fn to_config_string(&self, mode: Mode) -> String {
        format!(
            "n = {}\nR = {:?}\nk = {:?}\nsigma = {:?}\nM_lo = {:?}\nM_hi = {:?}\nmode = {}\n",
            self.n, self.radius, self.k, self.sigma, self.mass_lo, self.mass_hi, mode
        )
    }
}

pub const MODEL_KEYS: &[&str] = &["n", "R", "k", "sigma", "M_lo", "M_hi", "mode"];

/// Constants computed once from validated parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    /// |Ω| = |B_R|.
    pub omega_vol: f64,
    /// μ* = M*/(2|Ω|).
    pub mu_lo: f64,
    /// μ⋆ = 2M⋆/|Ω|.
    pub mu_hi: f64,
    /// Subsolution amplitude a = μ*Rⁿ / (n e^{1/e} (Rⁿ + 1)).
    pub a: f64,
    /// K = k·n^{σ−1}.
    pub k_big: f64,
    /// L = K·(a/e)^{σ−1}.
    pub l_big: f64,
}

impl DerivedConstants {
    pub fn new(p: &ModelParams) -> Self {
        let n = p.n as f64;
        let omega_vol = p.domain_volume();
        let mu_lo = p.mass_lo / (2.0 * omega_vol);
        let mu_hi = 2.0 * p.mass_hi / omega_vol;
        let rn = p.radius.powi(p.n as i32);
        let a = mu_lo * rn / (n * E.powf(1.0 / E) * (rn + 1.0));
        let k_big = p.k * n.powf(p.sigma - 1.0);
        let l_big = k_big * (a / E).powf(p.sigma - 1.0);
        Self {
            omega_vol,
            mu_lo,
            mu_hi,
            a,
            k_big,
            l_big,
        }
    }
}

/// Γ(n/2 + 1) for integer n ≥ 0.
fn gamma_half_plus_one(n: usize) -> f64 {
    // Γ(1) = 1, Γ(1/2) = √π, Γ(x + 1) = x Γ(x).
    let target = n as f64 / 2.0 + 1.0;
    let (mut x, mut g) = if n.is_multiple_of(2) { (1.0, 1.0) } else { (0.5, PI.sqrt()) };
    while x < target - 0.25 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Volume of the n-ball of radius r: π^{n/2} rⁿ / Γ(n/2 + 1).
pub fn ball_volume(n: usize, r: f64) -> f64 {
    PI.powf(n as f64 / 2.0) * r.powi(n as i32) / gamma_half_plus_one(n)
}

/// Surface measure of the unit sphere S^{n−1}, i.e. n·|B_1|.
pub fn sphere_area(n: usize) -> f64 {
    n as f64 * ball_volume(n, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, sigma: f64) -> ModelParams {
        ModelParams::power(n, 1.0, 1.0, sigma, 1.0, 4.0)
    }

    #[test]
    fn ball_volumes() {
        assert!((ball_volume(1, 1.0) - 2.0).abs() < 1e-15);
        assert!((ball_volume(2, 1.0) - PI).abs() < 1e-15);
        assert!((ball_volume(3, 1.0) - 4.0 * PI / 3.0).abs() < 1e-14);
        assert!((ball_volume(4, 1.0) - PI * PI / 2.0).abs() < 1e-14);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-13);
        assert!((ball_volume(3, 2.0) - 32.0 * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn validation_examples() {
        assert!(params(3, 2.0).validate(Mode::Blowup).is_ok());
        assert!(matches!(
            params(3, 4.0 / 3.0).validate(Mode::Blowup),
            Err(ModelError::SubcriticalExponent { .. })
        ));
        assert!(matches!(
            params(5, 2.0).validate(Mode::Blowup),
            Err(ModelError::DimensionOutOfRange { n: 5, .. })
        ));
        assert!(params(1, 0.3).validate(Mode::Simulate).is_ok());
        assert!(params(2, 1.0).validate(Mode::Simulate).is_ok());
        assert!(matches!(
            params(2, 3.0).validate(Mode::Blowup),
            Err(ModelError::DimensionOutOfRange { .. })
        ));
        assert!(matches!(
            ModelParams::power(3, 1.0, 1.0, 2.0, 4.0, 4.0).validate(Mode::Simulate),
            Err(ModelError::MassBoundsInverted { .. })
        ));
        assert!(matches!(
            ModelParams::power(3, -1.0, 1.0, 2.0, 1.0, 4.0).validate(Mode::Simulate),
            Err(ModelError::NonpositiveParameter { name: "R", .. })
        ));
        assert!(matches!(
            ModelParams::power(3, 1.0, 0.0, 2.0, 1.0, 4.0).validate(Mode::Simulate),
            Err(ModelError::NonpositiveParameter { name: "k", .. })
        ));
    }

    #[test]
    fn derived_constant_examples() {
        // μ* = 3 on the unit ball in 3D: a = 1/(2 e^{1/e}).
        let p = ModelParams::with_mean_density(3, 1.0, 1.0, 2.0, 3.0, 4.0);
        let dc = DerivedConstants::new(&p);
        assert!((dc.mu_lo - 3.0).abs() < 1e-14);
        assert!((dc.a - 0.346_100_313_777_673_2).abs() < 1e-15, "{}", dc.a);
        assert!((dc.a - 1.0 / (2.0 * E.powf(1.0 / E))).abs() < 1e-15);
        assert!((dc.k_big - 3.0).abs() < 1e-15);
        assert!((dc.l_big - 3.0 * dc.a / E).abs() < 1e-15);
        assert!((dc.l_big - 0.381_966).abs() < 1e-5);
        assert!(dc.mu_lo < dc.mu_hi);
    }

    #[test]
    fn production_examples() {
        let p = params(3, 2.0);
        assert_eq!(p.production_rate(0.0).unwrap(), 0.0);
        let p = ModelParams::power(3, 1.0, 2.0, 1.5, 1.0, 4.0);
        assert!((p.production_rate(4.0).unwrap() - 16.0).abs() < 1e-12);
        assert!(matches!(p.production_rate(-1.0), Err(ModelError::NegativeDensity(_))));

        let half = params(3, 2.0).with_law(ProductionLaw::Custom(Arc::new(|u: f64| u * u / 2.0)));
        assert!(matches!(
            half.production_rate(1.0),
            Err(ModelError::LowerBoundViolated { .. })
        ));
        let above = params(3, 2.0).with_law(ProductionLaw::Custom(Arc::new(|u: f64| u * u + u)));
        assert_eq!(above.production_rate(2.0).unwrap(), 6.0);
    }

    #[test]
    fn config_round_trip_and_unknown_keys() {
        let p = ModelParams::power(4, 1.5, 0.7, 1.25, 3.0, 9.5);
        let text = p.to_config_string(Mode::Simulate);
        let (q, mode) = ModelParams::from_config_str(&text).unwrap();
        assert_eq!(mode, Mode::Simulate);
        assert_eq!((q.n, q.radius, q.k, q.sigma), (4, 1.5, 0.7, 1.25));
        assert_eq!((q.mass_lo, q.mass_hi), (3.0, 9.5));
        assert!(ModelParams::from_config_str("n = 3\nsigma = 2\nM_lo = 1\nM_hi = 2\nfoo = 1\n").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn blowup_mode_is_strictly_supercritical(n in 1usize..6, sigma in 0.05f64..4.0) {
                if let Ok(p) = params(n, sigma).validate(Mode::Blowup) {
                    prop_assert!(p.sigma * p.n as f64 > 4.0);
                    prop_assert!(p.n == 3 || p.n == 4);
                }
            }

            #[test]
            fn amplitude_is_linear_in_lower_mass(mass in 0.1f64..1e4, n in 3usize..5) {
                let p1 = ModelParams::power(n, 1.3, 1.0, 2.0, mass, 10.0 * mass);
                let p2 = ModelParams::power(n, 1.3, 1.0, 2.0, 2.0 * mass, 10.0 * mass);
                let (d1, d2) = (DerivedConstants::new(&p1), DerivedConstants::new(&p2));
                prop_assert!((d2.mu_lo / d1.mu_lo - 2.0).abs() < 1e-12);
                prop_assert!((d2.a / d1.a - 2.0).abs() < 1e-12);
            }

            #[test]
            fn power_law_is_monotone(u in 0.0f64..1e3, du in 0.0f64..10.0, sigma in 0.1f64..4.0) {
                let p = params(3, sigma);
                prop_assert!(p.production_rate(u + du).unwrap() >= p.production_rate(u).unwrap());
            }
        }
    }
}
