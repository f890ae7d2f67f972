//! Radial grids on [0, R] and their finite-volume geometry.
//!
//! Node i owns the cell [r_{i−1/2}, r_{i+1/2}] (with r_{−1/2} = 0 and
//! r_{M+1/2} = R). All integrals over Ω are taken per unit solid angle in the
//! variable s = rⁿ: the cell measure is (s_{i+1/2} − s_{i−1/2})/n, so the
//! cumulated densities of the mass formulation are exact partial sums.

use thiserror::Error;

use crate::model::{sphere_area, ModelParams};

pub const MIN_CELLS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs at least {MIN_CELLS} cells, got {0}")]
    TooFewNodes(usize),
    #[error("graded grid: first radius {first} must lie in (0, R/M) = (0, {limit})")]
    BadGrading { first: f64, limit: f64 },
}

/// Node placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Spacing {
    /// r_i = i R / M.
    Uniform,
    /// r_i = R sinh(κ i/M) / sinh(κ) with κ chosen so that r_1 equals
    /// `first_radius`: uniform near the axis, geometric further out.
    Graded { first_radius: f64 },
}

#[derive(Debug, Clone)]
pub struct RadialGrid {
    pub n: usize,
    pub radius: f64,
    /// Nodes r_0 = 0 < … < r_M = R.
    pub r: Vec<f64>,
    /// s_i = r_iⁿ.
    pub s: Vec<f64>,
    /// Cell faces: `r_face[j]` = r_{j−1/2}, j = 0..=M+1.
    pub r_face: Vec<f64>,
    /// `s_face[j]` = r_face[j]ⁿ.
    pub s_face: Vec<f64>,
    /// Cell measure per unit solid angle, (s_{i+1/2} − s_{i−1/2})/n.
    pub cell: Vec<f64>,
    /// Quadrature weights for ∫_Ω · dx (cell measure times |S^{n−1}|).
    pub weights: Vec<f64>,
    pub spacing: Spacing,
}

impl RadialGrid {
    pub fn build(p: &ModelParams, cells: usize) -> Result<Self, GridError> {
        Self::with_spacing(p.n, p.radius, cells, Spacing::Uniform)
    }

    pub fn with_spacing(
        n: usize,
        radius: f64,
        cells: usize,
        spacing: Spacing,
    ) -> Result<Self, GridError> {
        if cells < MIN_CELLS {
            return Err(GridError::TooFewNodes(cells));
        }
        let m = cells as f64;
        let map: Box<dyn Fn(f64) -> f64> = match spacing {
            Spacing::Uniform => Box::new(move |xi: f64| radius * xi),
            Spacing::Graded { first_radius } => {
                let limit = radius / m;
                if !(first_radius > 0.0 && first_radius < limit) {
                    return Err(GridError::BadGrading {
                        first: first_radius,
                        limit,
                    });
                }
                let kappa = stretch_for_first_radius(first_radius / radius, cells);
                let norm = kappa.sinh();
                Box::new(move |xi: f64| radius * (kappa * xi).sinh() / norm)
            }
        };
        let mut r: Vec<f64> = (0..=cells).map(|i| map(i as f64 / m)).collect();
        r[0] = 0.0;
        r[cells] = radius;
        let mut r_face = Vec::with_capacity(cells + 2);
        r_face.push(0.0);
        r_face.extend((0..cells).map(|i| map((i as f64 + 0.5) / m)));
        r_face.push(radius);

        let pow = |x: f64| x.powi(n as i32);
        let s: Vec<f64> = r.iter().map(|&x| pow(x)).collect();
        let s_face: Vec<f64> = r_face.iter().map(|&x| pow(x)).collect();
        let nf = n as f64;
        let cell: Vec<f64> = (0..=cells)
            .map(|i| (s_face[i + 1] - s_face[i]) / nf)
            .collect();
        let area = sphere_area(n);
        let weights = cell.iter().map(|c| c * area).collect();
        Ok(Self {
            n,
            radius,
            r,
            s,
            r_face,
            s_face,
            cell,
            weights,
            spacing,
        })
    }

    /// Number of cells M (there are M + 1 nodes).
    pub fn cells(&self) -> usize {
        self.r.len() - 1
    }

    pub fn nodes(&self) -> usize {
        self.r.len()
    }

    /// Largest node spacing in r.
    pub fn max_dr(&self) -> f64 {
        self.r.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Largest node spacing in s.
    pub fn max_ds(&self) -> f64 {
        self.s.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// ∫_Ω field dx.
    pub fn integrate(&self, field: &[f64]) -> f64 {
        self.weights.iter().zip(field).map(|(w, f)| w * f).sum()
    }

    /// |Ω| as seen by the quadrature.
    pub fn volume(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Mean value ⨍_Ω field.
    pub fn mean(&self, field: &[f64]) -> f64 {
        let total: f64 = self.cell.iter().sum();
        self.cell.iter().zip(field).map(|(c, f)| c * f).sum::<f64>() / total
    }

    /// Per-solid-angle cumulated integral ∫_0^{r} ρ^{n−1} field dρ evaluated
    /// at every face r_{j−1/2}, j = 0..=M+1, for piecewise-constant cells.
    pub fn cumulate_faces(&self, field: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.r_face.len());
        let mut acc = 0.0;
        out.push(0.0);
        for (c, f) in self.cell.iter().zip(field) {
            acc += c * f;
            out.push(acc);
        }
        out
    }

    /// Same cumulated integral evaluated at the nodes.
    pub fn cumulate_nodes(&self, field: &[f64]) -> Vec<f64> {
        let faces = self.cumulate_faces(field);
        let nf = self.n as f64;
        (0..self.nodes())
            .map(|i| faces[i] + field[i] * (self.s[i] - self.s_face[i]) / nf)
            .collect()
    }
}

/// κ such that sinh(κ/M)/sinh(κ) = ratio (ratio < 1/M).
fn stretch_for_first_radius(ratio: f64, cells: usize) -> f64 {
    let m = cells as f64;
    // log of sinh(κ/M)/sinh(κ), decreasing in κ.
    let g = |k: f64| -> f64 {
        let num = (k / m).sinh().ln();
        // ln sinh(k) without overflow
        let den = if k > 30.0 {
            k - std::f64::consts::LN_2
        } else {
            k.sinh().ln()
        };
        num - den
    };
    let target = ratio.ln();
    let (mut lo, mut hi) = (1e-8, 1.0);
    while g(hi) > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
