//! Bessel-zero oracle, the branched unit disc, and decay laws of freely evolving
//! band-limited packets.

use crate::error::{Error, Result};
use crate::geometry::{BranchedGrid, CoveringSpec, CutLayout, DIR_XM, DIR_XP, DIR_YM, DIR_YP};
use crate::linalg::{smallest_eigenpairs, Assembler};
use crate::packets::{cutoff_point, position_values_with_derivative, BandProfile, Evaluation, Packet, PacketSpec};
use crate::quadrature::{composite_nodes, gl_nodes};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

type C = Complex64;

/// J_nu(x) for x > 0 by Miller's backward recurrence, normalized with
/// (x/2)^nu = sum_k a_k J_{nu+2k}(x), a_0 = Gamma(nu+1), a_k = (nu+2k) Gamma(nu+k)/k!.
pub fn bessel_j(nu: f64, x: f64) -> f64 {
    assert!(nu >= 0.0 && x > 0.0);
    let mut n = (2.0 * (x + nu) + 40.0) as usize;
    n += n % 2;
    let mut f = vec![0.0f64; n + 2];
    f[n] = 1e-280;
    for m in (1..=n).rev() {
        f[m - 1] = 2.0 * (nu + m as f64) / x * f[m] - f[m + 1];
        if f[m - 1].abs() > 1e200 {
            for v in f.iter_mut().skip(m - 1) {
                *v *= 1e-200;
            }
        }
    }
    let lg = libm::lgamma(nu + 1.0);
    // normalize with the ratio against the leading coefficient to stay in range
    let mut sum = f[0];
    let mut k = 1;
    while 2 * k <= n {
        let ln_ak = (nu + 2.0 * k as f64).ln() + libm::lgamma(nu + k as f64) - libm::lgamma(k as f64 + 1.0);
        sum += (ln_ak - lg).exp() * f[2 * k];
        k += 1;
    }
    // J_nu = f0 (x/2)^nu / (Gamma(nu+1) sum)
    f[0] / sum * (nu * (0.5 * x).ln() - lg).exp()
}

/// k-th positive zero of J_nu, by a scan for sign changes and bisection.
pub fn bessel_zero_oracle(nu: f64, k: usize) -> Result<f64> {
    if !(nu >= 0.0) || k == 0 {
        return Err(Error::InvalidParameter(format!("nu = {nu}, k = {k}")));
    }
    let step = 0.05;
    let limit = (k as f64 + 0.5 * nu + 2.0) * std::f64::consts::PI + 10.0;
    let mut found = 0;
    let mut a = 1e-3;
    let mut fa = bessel_j(nu, a);
    while a < limit {
        let b = a + step;
        let fb = bessel_j(nu, b);
        if fa == 0.0 || fa.signum() != fb.signum() {
            found += 1;
            if found == k {
                return bisect(|x| bessel_j(nu, x), a, b);
            }
        }
        a = b;
        fa = fb;
    }
    Err(Error::NotConverged(format!("zero {k} of J_{nu} not bracketed below {limit}")))
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> Result<f64> {
    let mut fa = f(a);
    if fa == 0.0 {
        return Ok(a);
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 || (b - a) < 1e-15 * m {
            return Ok(m);
        }
        if fa.signum() == fm.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Err(Error::NotConverged("bisection".into()))
}

/// Distinct eigenvalue levels with multiplicities, clustered at relative gap `rel`.
pub fn cluster_levels(vals: &[f64], rel: f64) -> Vec<(f64, usize)> {
    let mut out: Vec<(f64, usize, f64)> = Vec::new();
    for &v in vals {
        match out.last_mut() {
            Some(last) if (v - last.2).abs() <= rel * v.abs() => {
                last.0 += v;
                last.1 += 1;
                last.2 = v;
            }
            _ => out.push((v, 1, v)),
        }
    }
    out.into_iter().map(|(s, m, _)| (s / m as f64, m)).collect()
}

/// Reference levels of the two-sheeted disc with one branch point at the centre:
/// (j_{l/2,1})^2 with multiplicity 1 for l = 0 and 2 otherwise, sorted.
pub fn disc_reference_levels(count: usize) -> Result<Vec<(f64, usize)>> {
    let mut levels = Vec::new();
    for l in 0..(2 * count + 2) {
        for k in 1..=count {
            let z = bessel_zero_oracle(0.5 * l as f64, k)?;
            levels.push((z * z, if l == 0 { 1 } else { 2 }));
        }
    }
    levels.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    levels.truncate(count);
    Ok(levels)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscSpectrum {
    pub h: f64,
    pub nodes: usize,
    pub eigenvalues: Vec<f64>,
    pub iterations: usize,
}

/// Lowest `count` eigenvalues of the Dirichlet Laplacian on the two-sheeted unit
/// disc branched at the origin (cut along the negative x-axis). Edges leaving the
/// disc are cut at the circle, the ghost value zero sitting at fraction theta.
pub fn branched_disc_eigenvalues(h: f64, count: usize) -> Result<DiscSpectrum> {
    if !(h > 0.0 && h < 0.5) {
        return Err(Error::InvalidParameter(format!("disc spacing h = {h}")));
    }
    let n = 2 * (1.0 / h - 1e-9).ceil() as usize;
    let grid = BranchedGrid {
        spec: CoveringSpec::default(),
        h,
        lx: n as f64 * h / 2.0,
        ly: n as f64 * h / 2.0,
        nx: n,
        ny: n,
        layout: CutLayout::NegativeAxis,
    };
    let inside = |id: usize| {
        let (x, y) = grid.coords(id);
        x * x + y * y < 1.0
    };
    let mut compact = vec![usize::MAX; grid.num_nodes()];
    let mut m = 0;
    for id in 0..grid.num_nodes() {
        if inside(id) {
            compact[id] = m;
            m += 1;
        }
    }
    let h2 = h * h;
    let mut asm = Assembler::new(m);
    for id in 0..grid.num_nodes() {
        if compact[id] == usize::MAX {
            continue;
        }
        let a = compact[id];
        let (x, y) = grid.coords(id);
        for (dir, dx, dy) in [(DIR_XP, 1.0, 0.0), (DIR_XM, -1.0, 0.0), (DIR_YP, 0.0, 1.0), (DIR_YM, 0.0, -1.0)] {
            match grid.neighbor(id, dir).filter(|&nb| compact[nb] != usize::MAX) {
                Some(nb) => {
                    if compact[nb] > a {
                        asm.add_edge(a, compact[nb], 1.0 / h2);
                    }
                }
                None => {
                    // |p + theta h e| = 1
                    let b = x * dx + y * dy;
                    let c = x * x + y * y - 1.0;
                    let theta = ((-b + (b * b - c).sqrt()) / h).clamp(1e-6, 1.0);
                    asm.add(a, a, C::new(1.0 / (theta * h2), 0.0));
                }
            }
        }
    }
    let mat = asm.finish();
    let (vals, _, iters) = smallest_eigenpairs(&mat, count, count + 6, 1e-8, 500)?;
    Ok(DiscSpectrum { h, nodes: m, eigenvalues: vals, iterations: iters })
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, y)| **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    /// Fitted exponent (slope on the log-log scale).
    pub exponent: f64,
    pub abscissae: Vec<f64>,
    pub values: Vec<f64>,
    /// Decades spanned by the abscissae used in the fit.
    pub decades: f64,
    pub points: usize,
    /// Set when fewer than 8 usable points or less than 1.5 decades remain.
    pub underdetermined: bool,
    pub hypothesis_ok: bool,
}

impl DecayFit {
    fn from_points(abscissae: Vec<f64>, values: Vec<f64>, floor: f64, hypothesis_ok: bool) -> Self {
        let (xs, ys): (Vec<f64>, Vec<f64>) =
            abscissae.iter().zip(&values).filter(|(_, v)| **v > floor).map(|(x, v)| (*x, *v)).unzip();
        let decades = if xs.is_empty() { 0.0 } else { (xs[xs.len() - 1] / xs[0]).log10() };
        DecayFit {
            exponent: if xs.len() >= 2 { loglog_slope(&xs, &ys) } else { f64::NAN },
            points: xs.len(),
            underdetermined: xs.len() < 8 || decades < 1.5,
            decades,
            abscissae,
            values,
            hypothesis_ok,
        }
    }
}

/// Geometric times with 1 + s t running from 2 to 2 * 10^decades.
pub fn fit_times(s: f64, decades: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| {
            let u = 2.0 * 10f64.powf(decades * i as f64 / (count - 1) as f64);
            (u - 1.0) / s
        })
        .collect()
}

/// |Psi(x_t, t)| at x_t = ratio * a * t on the forbidden side (a = half width of the
/// momentum support), fitted against 1 + |x| + t.
pub fn stationary_phase_pointwise(profile: &BandProfile, s: f64, ratio: f64, ts: &[f64]) -> Result<DecayFit> {
    let a = (profile.lo + s).abs().max((profile.hi + s).abs());
    let mut xs_fit = Vec::new();
    let mut vals = Vec::new();
    for &t in ts {
        let x = ratio * a * t;
        let ev = Evaluation::new(s, 0.0, t);
        let v = position_values_with_derivative(profile, &ev, &[x], false)?.0[0];
        xs_fit.push(1.0 + x.abs() + t);
        vals.push(v.norm());
    }
    // values below the quadrature floor carry no information
    Ok(DecayFit::from_points(xs_fit, vals, 1e-12, ratio > 2.0))
}

/// int_{x0}^{+-inf} of |Psi|^2 and |Psi'|^2 by growing panels.
fn half_line_masses(profile: &BandProfile, ev: &Evaluation, x0: f64, dir: f64) -> Result<(f64, f64)> {
    let mut start = 0.0;
    let mut width = 0.5;
    let (mut m, mut d) = (0.0, 0.0);
    let mut quiet = 0;
    while start < 2000.0 {
        let batch = composite_nodes(8, 16, start, start + 8.0 * width);
        let xs: Vec<f64> = batch.iter().map(|p| x0 + dir * p.0).collect();
        let (v, dv) = position_values_with_derivative(profile, ev, &xs, true)?;
        let bm: f64 = batch.iter().zip(&v).map(|(p, z)| p.1 * z.norm_sqr()).sum();
        let bd: f64 = batch.iter().zip(&dv).map(|(p, z)| p.1 * z.norm_sqr()).sum();
        m += bm;
        d += bd;
        start += 8.0 * width;
        width *= 1.5;
        if bm <= 1e-15 * m.max(1e-300) && bd <= 1e-15 * d.max(1e-300) || (bm < 1e-32 && bd < 1e-32) {
            quiet += 1;
            if quiet >= 2 {
                break;
            }
        } else {
            quiet = 0;
        }
    }
    Ok((m, d))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailDecay {
    pub mass: DecayFit,
    pub gradient: DecayFit,
}

/// Tail masses ||(1 - chi_{s,t}) e^{-itA0} u0||^2 outside Q_{s,t} = [-st, st] x [st, inf),
/// and the gradient analogue, fitted against 1 + s t.
pub fn tail_mass_decay(spec: &PacketSpec, ts: &[f64]) -> Result<TailDecay> {
    let pk = Packet::new(*spec)?;
    let s = spec.s;
    let g1 = pk.phi1.second_moment(0.0);
    let g2 = pk.phi2.second_moment(s);
    let mut us = Vec::new();
    let (mut mass, mut grad) = (Vec::new(), Vec::new());
    for &t in ts {
        let st = s * t;
        let e1 = Evaluation::new(0.0, spec.k, t);
        let (r1, dr1) = half_line_masses(&pk.phi1, &e1, st, 1.0)?;
        let (l1, dl1) = half_line_masses(&pk.phi1, &e1, -st, -1.0)?;
        let (m1, a_out) = (r1 + l1, dr1 + dl1);
        let e2 = Evaluation::new(s, 0.0, t);
        let (m2, b_out) = half_line_masses(&pk.phi2, &e2, st, -1.0)?;
        us.push(1.0 + st);
        mass.push(m1 + m2 - m1 * m2);
        grad.push(a_out + g1 * m2 - a_out * m2 + m1 * g2 + b_out - m1 * b_out);
    }
    let ok = s >= 2.0 * spec.a;
    Ok(TailDecay {
        mass: DecayFit::from_points(us.clone(), mass, 1e-20, ok),
        gradient: DecayFit::from_points(us, grad, 1e-18, ok),
    })
}

#[derive(Debug, Clone, Copy)]
struct BandPoint {
    i: i64,
    dx: f64,
    dy: f64,
    lap: f64,
}

/// Samples of grad chi and Lap chi on the lattice ((i+1/2) hq, (j+1/2) hq), kept only
/// where they are nonzero, computed row by row on demand.
pub struct CutoffBand {
    pub hq: f64,
    pub k: f64,
    rows: HashMap<i64, Vec<BandPoint>>,
}

impl CutoffBand {
    pub fn new(hq: f64, k: f64) -> Self {
        CutoffBand { hq, k, rows: HashMap::new() }
    }

    fn coord(&self, i: i64) -> f64 {
        (i as f64 + 0.5) * self.hq
    }

    fn row(&mut self, j: i64) -> Result<&[BandPoint]> {
        if !self.rows.contains_key(&j) {
            let y = self.coord(j);
            let mut pts = Vec::new();
            // the band hugs |x - k| = |y| + 1/2 within the mollifier radius
            let reach = 0.5 + y.abs() + 0.45;
            let lo = ((self.k - reach) / self.hq).floor() as i64 - 1;
            let hi = ((self.k + reach) / self.hq).ceil() as i64 + 1;
            for i in lo..=hi {
                let x = self.coord(i);
                let d = ((x - self.k).abs() - y.abs() - 0.5).abs();
                if y.abs() > 1.0 && d > 0.45 {
                    continue;
                }
                let v = cutoff_point(x, y, self.k)?;
                if v[1] != 0.0 || v[2] != 0.0 || v[3] != 0.0 {
                    pts.push(BandPoint { i, dx: v[1], dy: v[2], lap: v[3] });
                }
            }
            self.rows.insert(j, pts);
        }
        Ok(&self.rows[&j])
    }
}

/// ||f(t)|| for the source term of the truncated packet, by lattice sums over the band.
pub fn source_norm(pk: &Packet, band: &mut CutoffBand, t: f64) -> Result<f64> {
    let (a, s, k) = (pk.spec.a, pk.spec.s, pk.spec.k);
    let hq = band.hq;
    let xr = 2.0 * a * t.abs() + 16.0 + 64.0 / a;
    let (ylo, yhi) = {
        let lo = 2.0 * s * t - 2.0 * t.abs() - 40.0;
        let hi = 2.0 * (s + 1.0) * t + 2.0 * t.abs() + 40.0;
        (lo.max(-xr - 1.0), hi.min(xr + 1.0))
    };
    if ylo >= yhi {
        return Ok(0.0);
    }
    let jlo = (ylo / hq).floor() as i64;
    let jhi = (yhi / hq).ceil() as i64;
    let ys: Vec<f64> = (jlo..=jhi).map(|j| band.coord(j)).collect();
    let ilo = ((k - xr) / hq).floor() as i64;
    let ihi = ((k + xr) / hq).ceil() as i64;
    let xs: Vec<f64> = (ilo..=ihi).map(|i| band.coord(i)).collect();
    // the gauge G = s + 1/2 keeps the y-quadrature short; |f| is unchanged
    let (py, dpy) = pk.factor_y(&ys, t, s + 0.5, true)?;
    let (px, dpx) = pk.factor_x(&xs, t, true)?;
    let i1 = C::new(0.0, 1.0);
    let mut acc = 0.0;
    for (jj, j) in (jlo..=jhi).enumerate() {
        for p in band.row(j)? {
            if p.i < ilo || p.i > ihi {
                continue;
            }
            let ii = (p.i - ilo) as usize;
            let u = px[ii] * py[jj];
            let grad = dpx[ii] * py[jj] * p.dx + px[ii] * dpy[jj] * p.dy;
            let f = -2.0 * i1 * grad - i1 * u * p.lap;
            acc += f.norm_sqr();
        }
    }
    Ok((acc * hq * hq).sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizationRow {
    pub s: f64,
    pub a: f64,
    /// int ||f(t)|| dt over the whole line.
    pub integral: f64,
    /// Part of `integral` from the power-law extrapolation beyond the last panel.
    pub extrapolated: f64,
    /// Fitted exponent of ||f(t)|| against 1 + s|t| for s|t| >= 1.
    pub decay_exponent: f64,
    pub f0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizationTable {
    pub rows: Vec<LocalizationRow>,
    pub strictly_decreasing: bool,
}

impl LocalizationTable {
    pub fn below(&self, eps: f64) -> bool {
        self.rows.last().is_some_and(|r| r.integral < eps)
    }
}

/// int ||f(t)|| dt with Gauss panels in u = s t: [0,1], [1,2], [2,4], ... on both
/// sides, then a power-law tail fitted to the last panels.
pub fn localization_integral(spec: &PacketSpec, hq: f64) -> Result<LocalizationRow> {
    let pk = Packet::new(*spec)?;
    let s = spec.s;
    if !(s > 0.0) {
        return Err(Error::InvalidParameter("localization sweep needs s > 0".into()));
    }
    let mut band = CutoffBand::new(hq, spec.k);
    let f0 = source_norm(&pk, &mut band, 0.0)?;
    let mut total = 0.0;
    let mut extrapolated = 0.0;
    let mut fit_u = Vec::new();
    let mut fit_f = Vec::new();
    for sign in [1.0, -1.0] {
        let mut peak = 0.0f64;
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut last: Vec<(f64, f64)>;
        loop {
            let mut panel_max = 0.0f64;
            let mut pts = Vec::new();
            for (u, w) in gl_nodes(8, lo, hi) {
                let v = source_norm(&pk, &mut band, sign * u / s)?;
                total += w / s * v;
                panel_max = panel_max.max(v);
                pts.push((u, v));
                if sign > 0.0 && u >= 1.0 {
                    fit_u.push(1.0 + u);
                    fit_f.push(v);
                }
            }
            peak = peak.max(panel_max);
            last = pts;
            if panel_max < 1e-7 * peak || hi >= 4096.0 {
                break;
            }
            lo = hi;
            hi *= 2.0;
            if lo == 1.0 {
                hi = 2.0;
            }
        }
        // tail beyond u = hi from the decay across the last panel
        let (u1, f1) = last[0];
        let (u2, f2) = last[last.len() - 1];
        if f1 > 0.0 && f2 > 0.0 && f2 < f1 {
            let p = -((f2 / f1).ln() / ((1.0 + u2) / (1.0 + u1)).ln());
            if p > 1.0 {
                extrapolated += f2 * (1.0 + u2) / ((p - 1.0) * s) * ((1.0 + hi) / (1.0 + u2)).powf(1.0 - p);
            } else {
                return Err(Error::TailNotBounded(format!("source decays like (1+st)^-{p:.2}")));
            }
        }
    }
    let decay_exponent = if fit_u.len() >= 2 { loglog_slope(&fit_u, &fit_f) } else { f64::NAN };
    Ok(LocalizationRow {
        s,
        a: spec.a,
        integral: total + extrapolated,
        extrapolated,
        decay_exponent,
        f0,
    })
}

pub fn localization_error_decay(base: &PacketSpec, s_values: &[f64], hq: f64) -> Result<LocalizationTable> {
    let mut rows = Vec::new();
    for &s in s_values {
        let spec = PacketSpec { s, ..*base };
        rows.push(localization_integral(&spec, hq)?);
    }
    let strictly_decreasing = rows.windows(2).all(|w| w[1].integral < w[0].integral);
    Ok(LocalizationTable { rows, strictly_decreasing })
}
