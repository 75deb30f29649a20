//! Exact free evolution of planar samples by the FFT multiplier
//! exp(-i t (kx^2 + ky^2 + 2 G ky)) on a zero-padded periodic box.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

type C = Complex64;

pub struct FreePropagator {
    pub nx: usize,
    pub ny: usize,
    pub px: usize,
    pub py: usize,
    pub h: f64,
    pub gauge: f64,
    fx: Arc<dyn Fft<f64>>,
    fy: Arc<dyn Fft<f64>>,
    ix: Arc<dyn Fft<f64>>,
    iy: Arc<dyn Fft<f64>>,
    kx: Vec<f64>,
    ky: Vec<f64>,
}

/// Transformed samples, stored column-major (index i * py + j).
#[derive(Clone)]
pub struct Spectrum {
    data: Vec<C>,
}

fn wavenumbers(n: usize, h: f64) -> Vec<f64> {
    (0..n)
        .map(|m| {
            let q = if m < n / 2 { m as f64 } else { m as f64 - n as f64 };
            2.0 * PI * q / (n as f64 * h)
        })
        .collect()
}

impl FreePropagator {
    /// `pad` multiplies each dimension of the nx x ny sample box.
    pub fn new(nx: usize, ny: usize, h: f64, pad: usize, gauge: f64) -> Self {
        let px = (nx * pad.max(1)).div_ceil(2) * 2;
        let py = (ny * pad.max(1)).div_ceil(2) * 2;
        let mut planner = FftPlanner::new();
        FreePropagator {
            nx,
            ny,
            px,
            py,
            h,
            gauge,
            fx: planner.plan_fft_forward(px),
            fy: planner.plan_fft_forward(py),
            ix: planner.plan_fft_inverse(px),
            iy: planner.plan_fft_inverse(py),
            kx: wavenumbers(px, h),
            ky: wavenumbers(py, h),
        }
    }

    fn offsets(&self) -> (usize, usize) {
        ((self.px - self.nx) / 2, (self.py - self.ny) / 2)
    }

    /// Forward transform of samples v[j * nx + i].
    pub fn spectrum(&self, v: &[C]) -> Spectrum {
        assert_eq!(v.len(), self.nx * self.ny);
        let (ox, oy) = self.offsets();
        let mut rows = vec![C::new(0.0, 0.0); self.px * self.py];
        for j in 0..self.ny {
            let r = (j + oy) * self.px;
            rows[r + ox..r + ox + self.nx].copy_from_slice(&v[j * self.nx..(j + 1) * self.nx]);
        }
        for j in 0..self.py {
            if j < oy || j >= oy + self.ny {
                continue;
            }
            self.fx.process(&mut rows[j * self.px..(j + 1) * self.px]);
        }
        let mut cols = vec![C::new(0.0, 0.0); self.px * self.py];
        for j in 0..self.py {
            for i in 0..self.px {
                cols[i * self.py + j] = rows[j * self.px + i];
            }
        }
        for i in 0..self.px {
            self.fy.process(&mut cols[i * self.py..(i + 1) * self.py]);
        }
        Spectrum { data: cols }
    }

    pub fn symbol(&self, i: usize, j: usize) -> f64 {
        let (kx, ky) = (self.kx[i], self.ky[j]);
        kx * kx + ky * ky + 2.0 * self.gauge * ky
    }

    /// Samples of exp(-itA0) v (in the gauge) on the original box.
    pub fn evaluate(&self, spec: &Spectrum, t: f64) -> Vec<C> {
        let mut cols = spec.data.clone();
        for i in 0..self.px {
            for j in 0..self.py {
                cols[i * self.py + j] *= C::from_polar(1.0, -t * self.symbol(i, j));
            }
        }
        self.inverse(cols)
    }

    /// Applies an arbitrary multiplier m(i, j) and transforms back.
    pub fn evaluate_with<F: Fn(usize, usize) -> C>(&self, spec: &Spectrum, m: F) -> Vec<C> {
        let mut cols = spec.data.clone();
        for i in 0..self.px {
            for j in 0..self.py {
                cols[i * self.py + j] *= m(i, j);
            }
        }
        self.inverse(cols)
    }

    fn inverse(&self, mut cols: Vec<C>) -> Vec<C> {
        for i in 0..self.px {
            self.iy.process(&mut cols[i * self.py..(i + 1) * self.py]);
        }
        let (ox, oy) = self.offsets();
        let scale = 1.0 / (self.px * self.py) as f64;
        let mut rows = vec![C::new(0.0, 0.0); self.px];
        let mut out = vec![C::new(0.0, 0.0); self.nx * self.ny];
        for j in 0..self.ny {
            for i in 0..self.px {
                rows[i] = cols[i * self.py + j + oy];
            }
            self.ix.process(&mut rows);
            for i in 0..self.nx {
                out[j * self.nx + i] = rows[i + ox] * scale;
            }
        }
        out
    }

    pub fn propagate(&self, v: &[C], t: f64) -> Vec<C> {
        self.evaluate(&self.spectrum(v), t)
    }

    pub fn add_scaled(acc: &mut Spectrum, other: &Spectrum, w: C) {
        for (a, b) in acc.data.iter_mut().zip(&other.data) {
            *a += b * w;
        }
    }

    pub fn zero_spectrum(&self) -> Spectrum {
        Spectrum { data: vec![C::new(0.0, 0.0); self.px * self.py] }
    }

    /// Multiplies a spectrum by exp(i tau symbol).
    pub fn phase_shift(&self, spec: &mut Spectrum, tau: f64) {
        for i in 0..self.px {
            for j in 0..self.py {
                spec.data[i * self.py + j] *= C::from_polar(1.0, tau * self.symbol(i, j));
            }
        }
    }
}
