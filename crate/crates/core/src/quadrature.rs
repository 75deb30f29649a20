//! Gauss-Legendre rules with order doubling.

use crate::error::{Error, Result};
use gauss_quad::legendre::GaussLegendre;
use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

/// Nodes and weights on [-1, 1], cached per order.
pub fn gl_rule(n: usize) -> Arc<Vec<(f64, f64)>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<(f64, f64)>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    map.entry(n)
        .or_insert_with(|| {
            let rule = GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap());
            let mut v: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();
            v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            Arc::new(v)
        })
        .clone()
}

/// Nodes and weights mapped to [a, b].
pub fn gl_nodes(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    gl_rule(n).iter().map(|&(x, w)| (c + r * x, r * w)).collect()
}

pub fn gl_integrate<F: FnMut(f64) -> f64>(n: usize, a: f64, b: f64, mut f: F) -> f64 {
    gl_nodes(n, a, b).iter().map(|&(x, w)| w * f(x)).sum()
}

/// Composite rule: `panels` equal panels of order `n`.
pub fn composite_nodes(panels: usize, n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let w = (b - a) / panels as f64;
    (0..panels)
        .flat_map(|p| gl_nodes(n, a + p as f64 * w, a + (p + 1) as f64 * w))
        .collect()
}

pub const MAX_ORDER: usize = 8192;

/// Doubles the order from `n0` until successive results agree to `tol` (relative,
/// with absolute floor `tol` for results near zero).
pub fn integrate_adaptive<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    n0: usize,
    tol: f64,
) -> Result<f64> {
    let mut n = n0.max(4);
    let mut prev = gl_integrate(n, a, b, &f);
    while n < MAX_ORDER {
        n *= 2;
        let cur = gl_integrate(n, a, b, &f);
        if (cur - prev).abs() <= tol * cur.abs().max(1.0) {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::QuadratureNotConverged(format!(
        "order {n} on [{a}, {b}] still changing (last {prev})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exactness() {
        let v = gl_integrate(5, 0.0, 2.0, |x| x.powi(9));
        assert!((v - 2f64.powi(10) / 10.0).abs() < 1e-10);
        let w: f64 = gl_rule(37).iter().map(|p| p.1).sum();
        assert!((w - 2.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_smooth() {
        let v = integrate_adaptive(|x: f64| x.cos(), 0.0, 30.0, 8, 1e-12).unwrap();
        assert!((v - 30f64.sin()).abs() < 1e-11);
    }
}
