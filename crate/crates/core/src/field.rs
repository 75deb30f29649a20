//! Sampled fields: complex states on the branched grid and planar samples.

use crate::error::{Error, Result};
use crate::geometry::BranchedGrid;
use num_complex::Complex64;
use std::io::Write;

/// Complex state on a branched grid, stored sheet-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    pub nx: usize,
    pub ny: usize,
    pub n_sheets: usize,
    pub h: f64,
    values: Vec<Complex64>,
    norm_sq: f64,
}

/// Squared 2-norm with a fixed summation order.
pub fn sum_sq(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

impl WaveField {
    pub fn zeros(grid: &BranchedGrid) -> Self {
        WaveField {
            nx: grid.nx,
            ny: grid.ny,
            n_sheets: grid.num_sheets(),
            h: grid.h,
            values: vec![Complex64::new(0.0, 0.0); grid.num_nodes()],
            norm_sq: 0.0,
        }
    }

    pub fn from_values(grid: &BranchedGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.num_nodes() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                grid.num_nodes()
            )));
        }
        let norm_sq = grid.h * grid.h * sum_sq(&values);
        Ok(WaveField {
            nx: grid.nx,
            ny: grid.ny,
            n_sheets: grid.num_sheets(),
            h: grid.h,
            values,
            norm_sq,
        })
    }

    pub fn matches(&self, grid: &BranchedGrid) -> bool {
        self.nx == grid.nx && self.ny == grid.ny && self.n_sheets == grid.num_sheets() && self.h == grid.h
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// Replaces the values and refreshes the cached norm.
    pub fn set_values(&mut self, values: Vec<Complex64>) {
        assert_eq!(values.len(), self.values.len());
        self.values = values;
        self.refresh();
    }

    pub fn refresh(&mut self) {
        self.norm_sq = self.h * self.h * sum_sq(&self.values);
    }

    /// Cached h^2 * sum |psi|^2.
    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq.sqrt()
    }

    pub fn per_sheet(&self) -> usize {
        self.nx * self.ny
    }

    pub fn sheet(&self, k: usize) -> &[Complex64] {
        let n = self.per_sheet();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn sheet_mass(&self, k: usize) -> f64 {
        self.h * self.h * sum_sq(self.sheet(k))
    }

    /// <self, other> = h^2 sum conj(self) * other.
    pub fn inner(&self, other: &WaveField) -> Complex64 {
        let s: Complex64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.conj() * b)
            .sum();
        s * (self.h * self.h)
    }

    pub fn distance(&self, other: &WaveField) -> f64 {
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        (s * self.h * self.h).sqrt()
    }

    /// Copy with all sheets except `k` set to zero.
    pub fn restrict_to_sheet(&self, k: usize) -> WaveField {
        let n = self.per_sheet();
        let mut values = vec![Complex64::new(0.0, 0.0); self.values.len()];
        values[k * n..(k + 1) * n].copy_from_slice(self.sheet(k));
        let mut out = WaveField { values, ..self.clone() };
        out.refresh();
        out
    }

    /// Binary snapshot: n_sheets, nx, ny (u64 LE), h (f64 LE), then row-major (re, im) pairs.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&(self.n_sheets as u64).to_le_bytes())?;
        w.write_all(&(self.nx as u64).to_le_bytes())?;
        w.write_all(&(self.ny as u64).to_le_bytes())?;
        w.write_all(&self.h.to_le_bytes())?;
        for z in &self.values {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Complex samples on a tensor grid xs x ys, index j * xs.len() + i.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarField {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl PlanarField {
    pub fn zeros(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        let n = xs.len() * ys.len();
        PlanarField { xs, ys, values: vec![Complex64::new(0.0, 0.0); n] }
    }

    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[j * self.xs.len() + i]
    }

    /// Midpoint-rule L^2 norm squared for uniformly spaced samples.
    pub fn norm_sq(&self) -> f64 {
        let dx = spacing(&self.xs);
        let dy = spacing(&self.ys);
        dx * dy * sum_sq(&self.values)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("x,y,re,im\n");
        for (j, y) in self.ys.iter().enumerate() {
            for (i, x) in self.xs.iter().enumerate() {
                let z = self.at(i, j);
                out.push_str(&format!("{x},{y},{},{}\n", z.re, z.im));
            }
        }
        out
    }
}

pub fn spacing(v: &[f64]) -> f64 {
    if v.len() < 2 {
        1.0
    } else {
        v[1] - v[0]
    }
}
