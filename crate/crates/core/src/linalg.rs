//! Sparse Hermitian matrices, the Cayley-step Krylov solver and a shift-invert
//! eigensolver for real symmetric positive definite matrices.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use num_complex::Complex64;

type C = Complex64;

/// Compressed sparse rows; imaginary parts are stored only when present.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub re: Vec<f64>,
    pub im: Option<Vec<f64>>,
}

/// Row-wise accumulator used during assembly.
#[derive(Debug, Clone)]
pub struct Assembler {
    n: usize,
    rows: Vec<Vec<(u32, C)>>,
}

impl Assembler {
    pub fn new(n: usize) -> Self {
        Assembler { n, rows: vec![Vec::new(); n] }
    }

    pub fn add(&mut self, i: usize, j: usize, v: C) {
        self.rows[i].push((j as u32, v));
    }

    /// Adds the symmetric edge form c |u_a - u_b|^2.
    pub fn add_edge(&mut self, a: usize, b: usize, c: f64) {
        self.add(a, a, C::new(c, 0.0));
        self.add(b, b, C::new(c, 0.0));
        self.add(a, b, C::new(-c, 0.0));
        self.add(b, a, C::new(-c, 0.0));
    }

    pub fn finish(self) -> CsrMatrix {
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        let mut cols = Vec::new();
        let mut re = Vec::new();
        let mut im = Vec::new();
        row_ptr.push(0);
        for mut row in self.rows {
            row.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut v = C::new(0.0, 0.0);
                while k < row.len() && row[k].0 == c {
                    v += row[k].1;
                    k += 1;
                }
                cols.push(c);
                re.push(v.re);
                im.push(v.im);
            }
            row_ptr.push(cols.len());
        }
        let has_im = im.iter().any(|&v| v != 0.0);
        CsrMatrix { n: row_ptr.len() - 1, row_ptr, cols, re, im: has_im.then_some(im) }
    }
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn is_real(&self) -> bool {
        self.im.is_none()
    }

    pub fn get(&self, i: usize, j: usize) -> C {
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            if self.cols[k] as usize == j {
                return C::new(self.re[k], self.im.as_ref().map_or(0.0, |v| v[k]));
            }
        }
        C::new(0.0, 0.0)
    }

    #[inline(always)]
    fn row_dot(&self, i: usize, x: &[C]) -> C {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        let cols = &self.cols[lo..hi];
        let re = &self.re[lo..hi];
        let (mut ar, mut ai) = (0.0, 0.0);
        match &self.im {
            None => {
                for (&c, &a) in cols.iter().zip(re) {
                    let z = x[c as usize];
                    ar += a * z.re;
                    ai += a * z.im;
                }
            }
            Some(im) => {
                for ((&c, &a), &b) in cols.iter().zip(re).zip(&im[lo..hi]) {
                    let z = x[c as usize];
                    ar += a * z.re - b * z.im;
                    ai += a * z.im + b * z.re;
                }
            }
        }
        C::new(ar, ai)
    }

    pub fn matvec(&self, x: &[C], y: &mut [C]) {
        assert!(x.len() >= self.n && y.len() >= self.n);
        for (i, yi) in y[..self.n].iter_mut().enumerate() {
            *yi = self.row_dot(i, x);
        }
    }

    pub fn apply(&self, x: &[C]) -> Vec<C> {
        let mut y = vec![C::new(0.0, 0.0); self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn matvec_real(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += x[self.cols[k] as usize] * self.re[k];
            }
            y[i] = acc;
        }
    }

    /// Largest |H_ij - conj(H_ji)|.
    pub fn hermitian_defect(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k] as usize;
                let a = C::new(self.re[k], self.im.as_ref().map_or(0.0, |v| v[k]));
                m = m.max((a - self.get(j, i).conj()).norm());
            }
        }
        m
    }

    /// Gershgorin bound on the spectral radius.
    pub fn gershgorin(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .map(|k| C::new(self.re[k], self.im.as_ref().map_or(0.0, |v| v[k])).norm())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// <x, H x> (real for Hermitian H).
    pub fn quadratic_form(&self, x: &[C]) -> f64 {
        let hx = self.apply(x);
        dot(x, &hx).re
    }

    fn to_csc(&self) -> CscMatrix<f64> {
        let mut coo = CooMatrix::new(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                coo.push(i, self.cols[k] as usize, self.re[k]);
            }
        }
        CscMatrix::from(&coo)
    }
}

/// sum conj(a) b, fixed order.
pub fn dot(a: &[C], b: &[C]) -> C {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Krylov vectors kept per Lanczos run; the Cayley loop restarts beyond this.
const BASIS_CAP: usize = 48;

impl CsrMatrix {
    /// w = s H u and v = s u in one sweep; returns Re <v, w>.
    fn scaled_matvec(&self, u: &[C], s: f64, v: &mut [C], w: &mut [C]) -> f64 {
        let mut alpha = 0.0;
        for i in 0..self.n {
            let acc = self.row_dot(i, u);
            let vi = u[i] * s;
            let wi = acc * s;
            alpha += vi.re * wi.re + vi.im * wi.im;
            v[i] = vi;
            w[i] = wi;
        }
        alpha
    }
}

/// Buffers reused across Cayley steps.
#[derive(Debug, Default)]
pub struct KrylovWorkspace {
    basis: Vec<Vec<C>>,
    u: Vec<C>,
    w: Vec<C>,
    r0: Vec<C>,
}

impl KrylovWorkspace {
    pub fn new() -> Self {
        Self::default()
    }
}

fn resize(v: &mut Vec<C>, n: usize) {
    if v.len() != n {
        *v = vec![C::new(0.0, 0.0); n];
    }
}

/// Solves (H + sigma) y = r0 by Lanczos on H with the basis kept, then
/// y = V (T + sigma)^-1 beta1 e1. sigma has nonzero imaginary part, so the
/// tridiagonal solve needs no pivoting. Stops when the recurrence residual
/// drops below `target` or after `max_iter` vectors.
fn shifted_lanczos(
    h: &CsrMatrix,
    sigma: C,
    ws: &mut KrylovWorkspace,
    y: &mut [C],
    target: f64,
    max_iter: usize,
) -> (usize, f64) {
    let n = ws.r0.len();
    let zero = C::new(0.0, 0.0);
    let beta1 = norm(&ws.r0);
    if beta1 <= target || beta1 == 0.0 || max_iter == 0 {
        return (0, beta1);
    }
    let KrylovWorkspace { basis, u, w, r0 } = ws;
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    // u holds the unnormalised next vector, scale its inverse norm
    resize(u, n);
    resize(w, n);
    u.copy_from_slice(r0);
    let mut scale = 1.0 / beta1;
    let mut zeta = C::new(beta1, 0.0);
    let mut beta = 0.0;
    let mut eta_prev = C::new(1.0, 0.0);
    let mut est = beta1;
    let mut m = 0;
    while m < max_iter {
        if basis.len() == m {
            basis.push(vec![zero; n]);
        }
        resize(&mut basis[m], n);
        let (done, rest) = basis.split_at_mut(m);
        let v = &mut rest[0];
        let alpha_h = h.scaled_matvec(u, scale, v, w);
        m += 1;
        let it = m;
        let lambda = if it > 1 { beta / eta_prev } else { zero };
        if it > 1 {
            zeta = -lambda * zeta;
        }
        let eta = sigma + alpha_h - lambda * beta;
        let mut wn = 0.0;
        match done.last() {
            Some(vp) => {
                for k in 0..n {
                    let wk = w[k] - v[k] * alpha_h - vp[k] * beta;
                    w[k] = wk;
                    wn += wk.norm_sqr();
                }
            }
            None => {
                for k in 0..n {
                    let wk = w[k] - v[k] * alpha_h;
                    w[k] = wk;
                    wn += wk.norm_sqr();
                }
            }
        }
        alphas.push(alpha_h);
        let beta_next = wn.sqrt();
        est = beta_next * (zeta / eta).norm();
        if est <= target || beta_next == 0.0 {
            break;
        }
        betas.push(beta_next);
        std::mem::swap(u, w);
        scale = 1.0 / beta_next;
        beta = beta_next;
        eta_prev = eta;
    }
    // Thomas solve of the symmetric tridiagonal (T + sigma) c = beta1 e1
    let mut d: Vec<C> = alphas.iter().map(|&x| sigma + x).collect();
    let mut rhs = vec![zero; m];
    rhs[0] = C::new(beta1, 0.0);
    for j in 1..m {
        let l = betas[j - 1] / d[j - 1];
        d[j] -= l * betas[j - 1];
        rhs[j] = rhs[j] - l * rhs[j - 1];
    }
    let mut c = vec![zero; m];
    c[m - 1] = rhs[m - 1] / d[m - 1];
    for j in (0..m - 1).rev() {
        c[j] = (rhs[j] - betas[j] * c[j + 1]) / d[j];
    }
    let basis = &basis[..m];
    for (k, yk) in y.iter_mut().enumerate() {
        let mut acc = zero;
        for (cj, vj) in c.iter().zip(basis) {
            acc += cj * vj[k];
        }
        *yk += acc;
    }
    (m, est)
}

/// One Cayley step: solves (I + i a H) x = (I - i a H) psi starting from x = psi.
/// `hpsi` = H psi; returns x, H x and the solver statistics. The residual is
/// measured against ||psi|| and verified with an explicit product.
pub fn cayley_step(
    h: &CsrMatrix,
    a: f64,
    psi: &[C],
    hpsi: &[C],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<C>, Vec<C>, SolveStats)> {
    cayley_step_in(h, a, psi, hpsi, tol, max_iter, None, &mut KrylovWorkspace::new())
}

/// `cayley_step` with caller-owned buffers and an optional starting pair
/// (x0, H x0); without one the iteration starts from psi.
#[allow(clippy::too_many_arguments)]
pub fn cayley_step_in(
    h: &CsrMatrix,
    a: f64,
    psi: &[C],
    hpsi: &[C],
    tol: f64,
    max_iter: usize,
    guess: Option<(Vec<C>, Vec<C>)>,
    ws: &mut KrylovWorkspace,
) -> Result<(Vec<C>, Vec<C>, SolveStats)> {
    let n = psi.len();
    let ia = C::new(0.0, a);
    let inv = 1.0 / ia;
    let scale = norm(psi).max(1e-300);
    let mut total = 0;
    let sigma = 1.0 / ia;
    let target = 0.25 * tol * scale / a.abs();
    resize(&mut ws.r0, n);
    // r0 is the residual divided by i a
    let (mut x, mut hx, mut res) = match guess {
        Some((x, hx)) if x.len() == n && hx.len() == n => {
            let mut acc = 0.0;
            for k in 0..n {
                let r = psi[k] - x[k] - ia * (hpsi[k] + hx[k]);
                acc += r.norm_sqr();
                ws.r0[k] = r * inv;
            }
            (x, hx, acc.sqrt())
        }
        _ => {
            // at x = psi the residual is -2 i a H psi
            for (r, z) in ws.r0.iter_mut().zip(hpsi) {
                *r = z * -2.0;
            }
            (psi.to_vec(), hpsi.to_vec(), a.abs() * norm(&ws.r0))
        }
    };
    loop {
        if res <= tol * scale {
            return Ok((x, hx, SolveStats { iterations: total, residual: res / scale }));
        }
        if total >= max_iter {
            return Err(Error::SolverDiverged { residual: res / scale, iterations: total });
        }
        let cap = BASIS_CAP.min(max_iter - total);
        let (it, _) = shifted_lanczos(h, sigma, ws, &mut x, target, cap);
        total += it.max(1);
        h.matvec(&x, &mut hx);
        let mut acc = 0.0;
        for k in 0..n {
            let r = psi[k] - x[k] - ia * (hpsi[k] + hx[k]);
            acc += r.norm_sqr();
            ws.r0[k] = r * inv;
        }
        res = acc.sqrt();
    }
}

/// Smallest `count` eigenpairs of a real symmetric positive definite matrix by
/// shift-invert (sigma = 0) subspace iteration with Rayleigh-Ritz.
pub fn smallest_eigenpairs(
    h: &CsrMatrix,
    count: usize,
    block: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, DMatrix<f64>, usize)> {
    if !h.is_real() {
        return Err(Error::InvalidParameter("eigensolver needs a real matrix".into()));
    }
    let n = h.n;
    let m = block.max(count + 2).min(n);
    let chol = CscCholesky::factor(&h.to_csc())
        .map_err(|e| Error::EigensolverNotConverged(format!("factorization failed: {e:?}")))?;
    // deterministic start block
    let mut x = DMatrix::<f64>::from_fn(n, m, |i, j| {
        let s = (i as f64 + 1.0) * (j as f64 + 1.0);
        (0.618_033_988_75 * s).fract() - 0.5 + 0.1 * (0.37 * s).sin()
    });
    let mut hq = DMatrix::<f64>::zeros(n, m);
    let mut col_in = vec![0.0; n];
    let mut col_out = vec![0.0; n];
    for it in 1..=max_iter {
        let y = chol.solve(&x);
        let q = y.qr().q();
        for j in 0..m {
            col_in.copy_from_slice(q.column(j).as_slice());
            h.matvec_real(&col_in, &mut col_out);
            hq.column_mut(j).copy_from_slice(&col_out);
        }
        let t = q.transpose() * &hq;
        let t = (&t + t.transpose()) * 0.5;
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        let vecs = DMatrix::from_fn(m, m, |i, j| eig.eigenvectors[(i, order[j])]);
        let vals: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        x = &q * &vecs;
        let hx = &hq * &vecs;
        let mut worst: f64 = 0.0;
        for j in 0..count {
            let r: DVector<f64> = hx.column(j) - x.column(j) * vals[j];
            worst = worst.max(r.norm() / vals[j].abs().max(1e-300));
        }
        if worst <= tol {
            let sel = x.columns(0, count).into_owned();
            return Ok((vals[..count].to_vec(), sel, it));
        }
    }
    Err(Error::EigensolverNotConverged(format!(
        "subspace iteration did not reach {tol:e} in {max_iter} sweeps"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lap1d(n: usize, gauge: f64) -> CsrMatrix {
        let mut a = Assembler::new(n);
        for i in 0..n {
            a.add(i, i, C::new(2.0, 0.0));
            if i + 1 < n {
                a.add(i, i + 1, C::new(-1.0, -gauge));
                a.add(i + 1, i, C::new(-1.0, gauge));
            }
        }
        a.finish()
    }

    #[test]
    fn cayley_solves_system() {
        for g in [0.0, 0.7] {
            let h = lap1d(200, g);
            let psi: Vec<C> = (0..200).map(|i| C::new((i as f64 * 0.1).sin(), (i as f64 * 0.05).cos())).collect();
            let hpsi = h.apply(&psi);
            let a = 0.8;
            let (x, hx, st) = cayley_step(&h, a, &psi, &hpsi, 1e-12, 500).unwrap();
            let lhs: Vec<C> = (0..200).map(|k| x[k] + C::new(0.0, a) * hx[k]).collect();
            let rhs: Vec<C> = (0..200).map(|k| psi[k] - C::new(0.0, a) * hpsi[k]).collect();
            let err: Vec<C> = lhs.iter().zip(&rhs).map(|(p, q)| p - q).collect();
            assert!(norm(&err) <= 1e-12 * norm(&psi), "{st:?}");
            assert!((norm(&x) - norm(&psi)).abs() < 1e-10 * norm(&psi));
        }
    }

    #[test]
    fn eigen_of_path_laplacian() {
        let n = 300;
        let h = lap1d(n, 0.0);
        let (vals, _, _) = smallest_eigenpairs(&h, 4, 8, 1e-10, 500).unwrap();
        for (k, v) in vals.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((v - exact).abs() < 1e-9 * exact, "{v} vs {exact}");
        }
    }
}
