//! Band-limited profiles, the product packet, the mollified cone cutoff and the
//! source term of the truncated packet.

use crate::error::{Error, Result};
use crate::field::{PlanarField, WaveField};
use crate::geometry::BranchedGrid;
use crate::quadrature::{gl_nodes, integrate_adaptive};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// exp(-1/(1-t^2)) on (-1,1), zero outside.
pub fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ProfileShape {
    Bump,
    /// exp(-(xi-center)^2 / (2 width^2)) cut to [lo, hi].
    TruncatedGaussian { center: f64, width: f64 },
}

/// Unit-norm momentum profile supported in [lo, hi].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandProfile {
    pub lo: f64,
    pub hi: f64,
    pub shape: ProfileShape,
    c: f64,
}

impl BandProfile {
    fn raw(&self, xi: f64) -> f64 {
        if xi <= self.lo || xi >= self.hi {
            return 0.0;
        }
        match self.shape {
            ProfileShape::Bump => bump((2.0 * xi - self.lo - self.hi) / (self.hi - self.lo)),
            ProfileShape::TruncatedGaussian { center, width } => {
                (-(xi - center).powi(2) / (2.0 * width * width)).exp()
            }
        }
    }

    pub fn value(&self, xi: f64) -> f64 {
        self.c * self.raw(xi)
    }

    pub fn norm_const(&self) -> f64 {
        self.c
    }

    /// Quadrature nodes with weights already multiplied by phi.
    pub fn weighted_nodes(&self, n: usize) -> Vec<(f64, f64)> {
        gl_nodes(n, self.lo, self.hi)
            .into_iter()
            .map(|(x, w)| (x, w * self.value(x)))
            .collect()
    }

    pub fn norm_sq(&self, n: usize) -> f64 {
        gl_nodes(n, self.lo, self.hi)
            .iter()
            .map(|&(x, w)| w * self.value(x).powi(2))
            .sum()
    }

    /// int (xi + shift)^2 phi(xi)^2 dxi.
    pub fn second_moment(&self, shift: f64) -> f64 {
        gl_nodes(256, self.lo, self.hi)
            .iter()
            .map(|&(x, w)| w * (x + shift).powi(2) * self.value(x).powi(2))
            .sum()
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

fn normalized(lo: f64, hi: f64, shape: ProfileShape) -> Result<BandProfile> {
    if !(lo < hi) {
        return Err(Error::EmptySupport(lo, hi));
    }
    let mut p = BandProfile { lo, hi, shape, c: 1.0 };
    let m = integrate_adaptive(|x| p.raw(x).powi(2), lo, hi, 32, 1e-14)?;
    if !(m > 0.0) {
        return Err(Error::EmptySupport(lo, hi));
    }
    p.c = 1.0 / m.sqrt();
    Ok(p)
}

pub fn bump_profile(lo: f64, hi: f64) -> Result<BandProfile> {
    normalized(lo, hi, ProfileShape::Bump)
}

pub fn truncated_gaussian_profile(lo: f64, hi: f64, center: f64, width: f64) -> Result<BandProfile> {
    if !(width > 0.0) {
        return Err(Error::InvalidParameter(format!("gaussian width {width} must be positive")));
    }
    normalized(lo, hi, ProfileShape::TruncatedGaussian { center, width })
}

/// Psi(x,t) = (2pi)^(-1/2) int phi(xi - m) exp(i (x - x0) xi - i t xi^2) dxi, with
/// optional gauge G: the returned values carry the factor exp(-i G x + i G^2 t).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub shift_momentum: f64,
    pub shift_position: f64,
    pub t: f64,
    pub gauge: f64,
}

impl Evaluation {
    pub fn new(shift_momentum: f64, shift_position: f64, t: f64) -> Self {
        Evaluation { shift_momentum, shift_position, t, gauge: 0.0 }
    }

    pub fn with_gauge(mut self, g: f64) -> Self {
        self.gauge = g;
        self
    }
}

fn eval_order(
    profile: &BandProfile,
    ev: &Evaluation,
    xs: &[f64],
    n: usize,
    derivative: bool,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let nodes = profile.weighted_nodes(n);
    let g = ev.gauge;
    let mut vals = Vec::with_capacity(xs.len());
    let mut ders = Vec::with_capacity(if derivative { xs.len() } else { 0 });
    for &x in xs {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut dacc = Complex64::new(0.0, 0.0);
        for &(eta, w) in &nodes {
            if w == 0.0 {
                continue;
            }
            let xi = eta + ev.shift_momentum;
            let phase = x * (xi - g) - ev.shift_position * xi - ev.t * (xi - g) * (xi + g);
            let e = Complex64::from_polar(w, phase);
            acc += e;
            if derivative {
                dacc += e * Complex64::new(0.0, xi);
            }
        }
        vals.push(acc * INV_SQRT_2PI);
        if derivative {
            ders.push(dacc * INV_SQRT_2PI);
        }
    }
    (vals, ders)
}

fn rms_diff(a: &[Complex64], b: &[Complex64]) -> (f64, f64) {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let m: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    let n = a.len().max(1) as f64;
    ((d / n).sqrt(), (m / n).sqrt())
}

pub const QUAD_TOL: f64 = 1e-9;
/// Absolute amplitude below which two orders count as agreeing (summation noise).
pub const QUAD_ABS_FLOOR: f64 = 1e-13;

fn start_order(profile: &BandProfile, ev: &Evaluation, xs: &[f64]) -> usize {
    let xmax = xs.iter().fold(0.0f64, |m, &x| m.max((x - ev.shift_position).abs()));
    let lo = profile.lo + ev.shift_momentum;
    let hi = profile.hi + ev.shift_momentum;
    let phase = xmax * profile.width() + ev.t.abs() * (hi * hi - lo * lo).abs();
    let mut n = 32;
    while (n as f64) < 1.5 * phase / PI + 16.0 {
        n *= 2;
    }
    n
}

/// Values and x-derivatives of Psi at `xs`, with order doubling until two orders
/// agree to QUAD_TOL relative in L^2 over xs (or to QUAD_ABS_FLOOR absolute).
pub fn position_values_with_derivative(
    profile: &BandProfile,
    ev: &Evaluation,
    xs: &[f64],
    derivative: bool,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let mut n = start_order(profile, ev, xs);
    let mut prev = eval_order(profile, ev, xs, n, derivative);
    loop {
        if n >= 16384 {
            return Err(Error::QuadratureNotConverged(format!(
                "position_values at order {n}"
            )));
        }
        n *= 2;
        let cur = eval_order(profile, ev, xs, n, derivative);
        let (d, m) = rms_diff(&prev.0, &cur.0);
        let mut ok = d <= (QUAD_TOL * m).max(QUAD_ABS_FLOOR);
        if derivative {
            let (dd, dm) = rms_diff(&prev.1, &cur.1);
            ok &= dd <= (QUAD_TOL * dm).max(QUAD_ABS_FLOOR * (1.0 + ev.shift_momentum.abs() + profile.hi.abs().max(profile.lo.abs())));
        }
        if ok {
            return Ok(cur);
        }
        prev = cur;
    }
}

pub fn position_values(
    profile: &BandProfile,
    shift_momentum: f64,
    shift_position: f64,
    xs: &[f64],
    t: f64,
) -> Result<Vec<Complex64>> {
    let ev = Evaluation::new(shift_momentum, shift_position, t);
    Ok(position_values_with_derivative(profile, &ev, xs, false)?.0)
}

/// Parameters (a, s, k, eps) of the product packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketSpec {
    pub a: f64,
    pub s: f64,
    #[serde(default)]
    pub k: f64,
    pub eps: f64,
}

impl PacketSpec {
    pub fn new(a: f64, s: f64, k: f64, eps: f64) -> Result<Self> {
        let p = PacketSpec { a, s, k, eps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(Error::InvalidParameter(format!("a = {} must be positive", self.a)));
        }
        if !(self.s >= 0.0) {
            return Err(Error::InvalidParameter(format!("s = {} must be nonnegative", self.s)));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidParameter(format!("eps = {} must lie in (0,1)", self.eps)));
        }
        if !self.k.is_finite() {
            return Err(Error::InvalidParameter("k must be finite".into()));
        }
        Ok(())
    }

    pub fn eps_prime(&self) -> f64 {
        self.eps / 5.0
    }

    /// Support of the shifted momentum profile of psi_2.
    pub fn momentum_support(&self) -> (f64, f64) {
        (self.s, self.s + 1.0)
    }
}

/// The two factors psi_1 = F^-1[phi_1](. - k) and psi_2 = F^-1[phi_2(. - s)].
#[derive(Debug, Clone)]
pub struct Packet {
    pub spec: PacketSpec,
    pub phi1: BandProfile,
    pub phi2: BandProfile,
}

impl Packet {
    pub fn new(spec: PacketSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Packet {
            spec,
            phi1: bump_profile(-spec.a, spec.a)?,
            phi2: bump_profile(0.0, 1.0)?,
        })
    }

    /// Psi_1(x,t) and its derivative.
    pub fn factor_x(&self, xs: &[f64], t: f64, derivative: bool) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        let ev = Evaluation::new(0.0, self.spec.k, t);
        position_values_with_derivative(&self.phi1, &ev, xs, derivative)
    }

    /// Psi_2(y,t) and its derivative, optionally in the co-moving gauge G.
    pub fn factor_y(
        &self,
        ys: &[f64],
        t: f64,
        gauge: f64,
        derivative: bool,
    ) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        let ev = Evaluation::new(self.spec.s, 0.0, t).with_gauge(gauge);
        position_values_with_derivative(&self.phi2, &ev, ys, derivative)
    }

    /// (e^{-itA0} u0)(x,y) = Psi_1(x,t) Psi_2(y,t) on xs x ys.
    pub fn values(&self, xs: &[f64], ys: &[f64], t: f64) -> Result<PlanarField> {
        self.values_gauge(xs, ys, t, 0.0)
    }

    pub fn values_gauge(&self, xs: &[f64], ys: &[f64], t: f64, gauge: f64) -> Result<PlanarField> {
        let (px, _) = self.factor_x(xs, t, false)?;
        let (py, _) = self.factor_y(ys, t, gauge, false)?;
        let mut out = PlanarField::zeros(xs.to_vec(), ys.to_vec());
        for (j, b) in py.iter().enumerate() {
            for (i, a) in px.iter().enumerate() {
                out.values[j * xs.len() + i] = a * b;
            }
        }
        Ok(out)
    }
}

pub fn packet_values(spec: &PacketSpec, xs: &[f64], ys: &[f64], t: f64) -> Result<PlanarField> {
    Packet::new(*spec)?.values(xs, ys, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    /// ||chi_(-1/4,1/4) psi_1||.
    pub norm: f64,
    /// Its square.
    pub mass: f64,
    pub threshold: f64,
    pub ok: bool,
}

/// Localization of psi_1 built from bump_profile(-a, a) on (-1/4, 1/4), tested
/// against 1 - eps'.
pub fn check_localization(a: f64, eps_prime: f64) -> Result<Localization> {
    let phi = bump_profile(-a, a)?;
    let nodes = gl_nodes(96, -0.25, 0.25);
    let xs: Vec<f64> = nodes.iter().map(|p| p.0).collect();
    let vals = position_values(&phi, 0.0, 0.0, &xs, 0.0)?;
    let mass: f64 = nodes.iter().zip(&vals).map(|(p, v)| p.1 * v.norm_sqr()).sum();
    let norm = mass.sqrt();
    Ok(Localization { norm, mass, threshold: 1.0 - eps_prime, ok: norm > 1.0 - eps_prime })
}

/// Radius of the Friedrichs mollifier.
pub const MOLLIFIER_RADIUS: f64 = 0.25;

/// Radial primitives of the mollifier on u = r/rho in [0,1], tabulated for cubic
/// Hermite interpolation.
struct MollifierTables {
    n: usize,
    m0: f64,
    int_j: Vec<f64>,
    int_ju: Vec<f64>,
}

fn j_prime(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let d = 1.0 - u * u;
        bump(u) * (-2.0 * u / (d * d))
    }
}

fn tables() -> &'static MollifierTables {
    static T: OnceLock<MollifierTables> = OnceLock::new();
    T.get_or_init(|| {
        let n = 8192;
        let du = 1.0 / n as f64;
        let mut int_j = vec![0.0; n + 1];
        let mut int_ju = vec![0.0; n + 1];
        for k in 0..n {
            let (a, b) = (k as f64 * du, (k + 1) as f64 * du);
            let nodes = gl_nodes(12, a, b);
            int_j[k + 1] = int_j[k] + nodes.iter().map(|&(u, w)| w * bump(u)).sum::<f64>();
            int_ju[k + 1] = int_ju[k] + nodes.iter().map(|&(u, w)| w * bump(u) * u).sum::<f64>();
        }
        let m0 = int_ju[n];
        MollifierTables { n, m0, int_j, int_ju }
    })
}

fn hermite(tab: &[f64], n: usize, u: f64, deriv: impl Fn(f64) -> f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return tab[n];
    }
    let du = 1.0 / n as f64;
    let k = ((u / du) as usize).min(n - 1);
    let (u0, u1) = (k as f64 * du, (k + 1) as f64 * du);
    let s = (u - u0) / du;
    let (h00, h10, h01, h11) = (
        2.0 * s.powi(3) - 3.0 * s * s + 1.0,
        s.powi(3) - 2.0 * s * s + s,
        -2.0 * s.powi(3) + 3.0 * s * s,
        s.powi(3) - s * s,
    );
    h00 * tab[k] + h10 * du * deriv(u0) + h01 * tab[k + 1] + h11 * du * deriv(u1)
}

/// Radial mollifier data at radius r (0 <= r <= rho):
/// [G0 = int_0^r j r' dr', G1 = r j - int_0^r j, r j'(r)].
fn radial(r: f64) -> [f64; 3] {
    let t = tables();
    let rho = MOLLIFIER_RADIUS;
    let u = (r / rho).clamp(0.0, 1.0);
    let c = 1.0 / (2.0 * PI * t.m0);
    let iju = hermite(&t.int_ju, t.n, u, |v| bump(v) * v);
    let ij = hermite(&t.int_j, t.n, u, bump);
    [c * iju, c / rho * (u * bump(u) - ij), c / (rho * rho) * u * j_prime(u)]
}

/// Mollifier j_{1/4}(p) with unit integral.
pub fn mollifier(x: f64, y: f64) -> f64 {
    let t = tables();
    let rho = MOLLIFIER_RADIUS;
    bump(x.hypot(y) / rho) / (2.0 * PI * t.m0 * rho * rho)
}

const SQRT1_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// The two complementary wedges of the cone {|x| < 1/2 + |y|} as pairs of half-planes n.p >= c.
const WEDGES: [[(f64, f64, f64); 2]; 2] = [
    [(SQRT1_2, -SQRT1_2, 0.5 * SQRT1_2), (SQRT1_2, SQRT1_2, 0.5 * SQRT1_2)],
    [(-SQRT1_2, -SQRT1_2, 0.5 * SQRT1_2), (-SQRT1_2, SQRT1_2, 0.5 * SQRT1_2)],
];
const APEX: [(f64, f64); 2] = [(0.5, 0.0), (-0.5, 0.0)];

fn point_ray_dist(p: (f64, f64), a: (f64, f64), d: (f64, f64)) -> f64 {
    let t = ((p.0 - a.0) * d.0 + (p.1 - a.1) * d.1).max(0.0);
    (p.0 - a.0 - t * d.0).hypot(p.1 - a.1 - t * d.1)
}

fn dist_to_cone_boundary(p: (f64, f64)) -> f64 {
    let mut m = f64::INFINITY;
    for (k, apex) in APEX.iter().enumerate() {
        let sx = if k == 0 { 1.0 } else { -1.0 };
        for sy in [1.0, -1.0] {
            m = m.min(point_ray_dist(p, *apex, (sx * SQRT1_2, sy * SQRT1_2)));
        }
    }
    m
}

pub fn in_cone(x: f64, y: f64) -> bool {
    x.abs() < 0.5 + y.abs()
}

/// Integrand over the direction theta: wedge contributions of [G0, G1 cos, G1 sin, r j'].
fn ray_terms(p: (f64, f64), theta: f64) -> [f64; 4] {
    let rho = MOLLIFIER_RADIUS;
    let (c, s) = (theta.cos(), theta.sin());
    let d = (-c, -s);
    let mut out = [0.0; 4];
    for wedge in WEDGES.iter() {
        let (mut lo, mut hi) = (0.0f64, rho);
        for &(nx, ny, cc) in wedge.iter() {
            let np = nx * p.0 + ny * p.1;
            let nd = nx * d.0 + ny * d.1;
            if nd.abs() < 1e-300 {
                if np < cc {
                    hi = -1.0;
                }
            } else {
                let r = (cc - np) / nd;
                if nd > 0.0 {
                    lo = lo.max(r);
                } else {
                    hi = hi.min(r);
                }
            }
        }
        if hi > lo {
            let a = radial(lo);
            let b = radial(hi);
            out[0] += b[0] - a[0];
            out[1] += (b[1] - a[1]) * c;
            out[2] += (b[1] - a[1]) * s;
            out[3] += b[2] - a[2];
        }
    }
    out
}

/// Marginal of the mollifier across a straight edge, tabulated on v in [-rho, rho]:
/// cumulative M(v), density m(v) and its first two derivatives.
struct EdgeTables {
    n: usize,
    cum: Vec<f64>,
    m: Vec<[f64; 3]>,
}

fn bump_derivs(u: f64) -> [f64; 3] {
    if u >= 1.0 {
        return [0.0; 3];
    }
    let d = 1.0 - u * u;
    let b = bump(u);
    // b'(u)/u and b''(u)
    [b, -2.0 * b / (d * d), b * (4.0 * u * u / d.powi(4) - 2.0 / (d * d) - 8.0 * u * u / d.powi(3))]
}

fn marginal(v: f64) -> [f64; 3] {
    let rho = MOLLIFIER_RADIUS;
    let w = (rho * rho - v * v).max(0.0).sqrt();
    if w == 0.0 {
        return [0.0; 3];
    }
    let c = 1.0 / (2.0 * PI * tables().m0 * rho * rho);
    let mut out = [0.0; 3];
    for (t, wt) in gl_nodes(96, -w, w) {
        let r2 = v * v + t * t;
        let u = r2.sqrt() / rho;
        let [b, bp_over_u, bpp] = bump_derivs(u);
        // j' / r = c b'(u) / (u rho^2), j'' = c b'' / rho^2
        let jr = c * bp_over_u / (rho * rho);
        let jpp = c * bpp / (rho * rho);
        let (cos2, sin2) = if r2 > 0.0 { (v * v / r2, t * t / r2) } else { (1.0, 0.0) };
        out[0] += wt * c * b;
        out[1] += wt * jr * v;
        out[2] += wt * (jpp * cos2 + jr * sin2);
    }
    out
}

fn edge_tables() -> &'static EdgeTables {
    static T: OnceLock<EdgeTables> = OnceLock::new();
    T.get_or_init(|| {
        let rho = MOLLIFIER_RADIUS;
        let n = 4096;
        let dv = 2.0 * rho / n as f64;
        let m: Vec<[f64; 3]> = (0..=n).map(|k| marginal(-rho + k as f64 * dv)).collect();
        let mut cum = vec![0.0; n + 1];
        for k in 0..n {
            let a = -rho + k as f64 * dv;
            cum[k + 1] = cum[k] + gl_nodes(8, a, a + dv).iter().map(|&(v, w)| w * marginal(v)[0]).sum::<f64>();
        }
        EdgeTables { n, cum, m }
    })
}

/// [M, m, m', m''] at v by cubic Hermite interpolation.
fn edge_profile(v: f64) -> [f64; 4] {
    let rho = MOLLIFIER_RADIUS;
    let t = edge_tables();
    if v <= -rho {
        return [0.0; 4];
    }
    if v >= rho {
        return [t.cum[t.n], 0.0, 0.0, 0.0];
    }
    let dv = 2.0 * rho / t.n as f64;
    let k = (((v + rho) / dv) as usize).min(t.n - 1);
    let s = (v + rho) / dv - k as f64;
    let (h00, h10, h01, h11) = (
        2.0 * s.powi(3) - 3.0 * s * s + 1.0,
        s.powi(3) - 2.0 * s * s + s,
        -2.0 * s.powi(3) + 3.0 * s * s,
        s.powi(3) - s * s,
    );
    let herm = |f0: f64, d0: f64, f1: f64, d1: f64| h00 * f0 + h10 * dv * d0 + h01 * f1 + h11 * dv * d1;
    let (a, b) = (t.m[k], t.m[k + 1]);
    [
        herm(t.cum[k], a[0], t.cum[k + 1], b[0]),
        herm(a[0], a[1], b[0], b[1]),
        herm(a[1], a[2], b[1], b[2]),
        0.0,
    ]
}

/// When the mollifier disc around p meets a single boundary ray away from the apexes,
/// chi is the edge marginal of the signed distance into the cone.
fn single_edge(p: (f64, f64)) -> Option<[f64; 4]> {
    let rho = MOLLIFIER_RADIUS;
    for apex in APEX {
        if (apex.0 - p.0).hypot(apex.1 - p.1) <= rho {
            return None;
        }
    }
    let mut hit = None;
    let mut count = 0;
    for wedge in WEDGES.iter() {
        for (h, &(nx, ny, cc)) in wedge.iter().enumerate() {
            let dist = nx * p.0 + ny * p.1 - cc;
            if dist.abs() >= rho {
                continue;
            }
            let foot = (p.0 - dist * nx, p.1 - dist * ny);
            let (mx, my, mc) = wedge[1 - h];
            if mx * foot.0 + my * foot.1 >= mc {
                count += 1;
                hit = Some((nx, ny, -dist));
            }
        }
    }
    if count != 1 {
        return None;
    }
    let (nx, ny, s) = hit?;
    let e = edge_profile(s);
    Some([e[0], -e[1] * nx, -e[1] * ny, e[2]])
}

/// [chi, d_x chi, d_y chi, Laplacian chi] of the mollified cone translated by (k, 0).
pub fn cutoff_point(x: f64, y: f64, k: f64) -> Result<[f64; 4]> {
    let rho = MOLLIFIER_RADIUS;
    let p = (x - k, y);
    if dist_to_cone_boundary(p) >= rho {
        let v = if in_cone(p.0, p.1) { 1.0 } else { 0.0 };
        return Ok([v, 0.0, 0.0, 0.0]);
    }
    if let Some(v) = single_edge(p) {
        return Ok(v);
    }
    cutoff_general(p)
}

fn cutoff_general(p: (f64, f64)) -> Result<[f64; 4]> {
    let rho = MOLLIFIER_RADIUS;
    let mut breaks: Vec<f64> = Vec::new();
    for apex in APEX {
        let (dx, dy) = (apex.0 - p.0, apex.1 - p.1);
        if dx.hypot(dy) < rho {
            // the ray p - r e_theta points to the apex
            breaks.push((-dy).atan2(-dx));
        }
    }
    for wedge in WEDGES.iter() {
        for &(nx, ny, cc) in wedge.iter() {
            let kappa = (nx * p.0 + ny * p.1 - cc) / rho;
            if kappa.abs() < 1.0 {
                // rays meeting the line exactly at r = rho, and rays parallel to it
                let tn = ny.atan2(nx);
                let ac = kappa.acos();
                breaks.extend([tn + ac, tn - ac, tn + 0.5 * PI, tn - 0.5 * PI]);
            }
        }
    }
    let theta0 = breaks.first().copied().unwrap_or(0.0);
    let mut edges: Vec<f64> = breaks
        .iter()
        .map(|b| theta0 + (b - theta0).rem_euclid(2.0 * PI))
        .collect();
    edges.push(theta0 + 2.0 * PI);
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let mut total = [0.0; 4];
    let mut start = theta0;
    for &end in &edges {
        if end - start < 1e-14 {
            continue;
        }
        let seg = integrate_segment(p, start, end)?;
        for q in 0..4 {
            total[q] += seg[q];
        }
        start = end;
    }
    Ok([1.0 - total[0], -total[1], -total[2], -total[3]])
}

fn integrate_segment(p: (f64, f64), a: f64, b: f64) -> Result<[f64; 4]> {
    let eval = |n: usize| {
        let mut acc = [0.0; 4];
        for (th, w) in gl_nodes(n, a, b) {
            let t = ray_terms(p, th);
            for q in 0..4 {
                acc[q] += w * t[q];
            }
        }
        acc
    };
    let mut n = 24;
    let mut prev = eval(n);
    while n < 6144 {
        n *= 2;
        let cur = eval(n);
        let scale = [1.0, 4.0, 4.0, 16.0 / MOLLIFIER_RADIUS];
        let ok = (0..4).all(|q| (cur[q] - prev[q]).abs() <= 1e-9 * scale[q]);
        if ok {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::QuadratureNotConverged(format!(
        "cutoff at ({}, {}) on [{a}, {b}]",
        p.0, p.1
    )))
}

/// chi and its derivatives sampled on xs x ys (index j * nx + i).
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffField {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub shift: f64,
    pub chi: Vec<f64>,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub lap: Vec<f64>,
}

pub fn build_cutoff(xs: &[f64], ys: &[f64], k: f64) -> Result<CutoffField> {
    let n = xs.len() * ys.len();
    let mut f = CutoffField {
        xs: xs.to_vec(),
        ys: ys.to_vec(),
        shift: k,
        chi: vec![0.0; n],
        dx: vec![0.0; n],
        dy: vec![0.0; n],
        lap: vec![0.0; n],
    };
    for (j, &y) in ys.iter().enumerate() {
        for (i, &x) in xs.iter().enumerate() {
            let v = cutoff_point(x, y, k)?;
            let id = j * xs.len() + i;
            f.chi[id] = v[0];
            f.dx[id] = v[1];
            f.dy[id] = v[2];
            f.lap[id] = v[3];
        }
    }
    Ok(f)
}

impl CutoffField {
    pub fn is_constant_at(&self, id: usize) -> bool {
        self.dx[id] == 0.0 && self.dy[id] == 0.0 && self.lap[id] == 0.0
    }
}

/// v0 = chi u0 at time t on the cutoff's sample grid (u0 evolved freely, gauge G).
pub fn truncated_packet(packet: &Packet, cutoff: &CutoffField, t: f64, gauge: f64) -> Result<PlanarField> {
    let mut u = packet.values_gauge(&cutoff.xs, &cutoff.ys, t, gauge)?;
    for (v, c) in u.values.iter_mut().zip(&cutoff.chi) {
        *v *= *c;
    }
    Ok(u)
}

#[derive(Debug, Clone)]
pub struct SourceTerm {
    pub field: PlanarField,
    pub norm: f64,
}

/// f = -2i grad chi . grad u - i u Lap chi with u = e^{-itA0} u0, in gauge G.
pub fn source_term(packet: &Packet, cutoff: &CutoffField, t: f64, gauge: f64) -> Result<SourceTerm> {
    let (px, dpx) = packet.factor_x(&cutoff.xs, t, true)?;
    let (py, dpy) = packet.factor_y(&cutoff.ys, t, gauge, true)?;
    let nx = cutoff.xs.len();
    let mut field = PlanarField::zeros(cutoff.xs.clone(), cutoff.ys.clone());
    let i1 = Complex64::new(0.0, 1.0);
    for j in 0..cutoff.ys.len() {
        for i in 0..nx {
            let id = j * nx + i;
            if cutoff.is_constant_at(id) {
                continue;
            }
            let u = px[i] * py[j];
            let ux = dpx[i] * py[j];
            let uy = px[i] * dpy[j];
            let grad = ux * cutoff.dx[id] + uy * cutoff.dy[id];
            field.values[id] = -2.0 * i1 * grad - i1 * u * cutoff.lap[id];
        }
    }
    let norm = field.norm();
    Ok(SourceTerm { field, norm })
}

/// Lifting of a planar field to the cover: y < 0 onto `low`, y > 0 onto its
/// monodromy image.
pub fn lift_to_cover(v: &PlanarField, grid: &BranchedGrid, low: usize) -> Result<WaveField> {
    check_planar(v, grid)?;
    let up = grid.spec.monodromy(low);
    let mut values = vec![Complex64::new(0.0, 0.0); grid.num_nodes()];
    for j in 0..grid.ny {
        let sheet = if grid.y_of(j) < 0.0 { low } else { up };
        for i in 0..grid.nx {
            values[grid.index(sheet, i, j)] = v.values[j * grid.nx + i];
        }
    }
    WaveField::from_values(grid, values)
}

/// Embeds the whole planar field into one sheet.
pub fn lift_to_sheet(v: &PlanarField, grid: &BranchedGrid, sheet: usize) -> Result<WaveField> {
    check_planar(v, grid)?;
    let mut values = vec![Complex64::new(0.0, 0.0); grid.num_nodes()];
    let n = grid.nodes_per_sheet();
    values[sheet * n..(sheet + 1) * n].copy_from_slice(&v.values);
    WaveField::from_values(grid, values)
}

fn check_planar(v: &PlanarField, grid: &BranchedGrid) -> Result<()> {
    if v.xs.len() != grid.nx || v.ys.len() != grid.ny {
        return Err(Error::GridMismatch(format!(
            "planar field {}x{} vs grid {}x{}",
            v.xs.len(),
            v.ys.len(),
            grid.nx,
            grid.ny
        )));
    }
    let tol = 1e-9 * grid.h;
    let ok = v.xs.iter().enumerate().all(|(i, &x)| (x - grid.x_of(i)).abs() < tol)
        && v.ys.iter().enumerate().all(|(j, &y)| (y - grid.y_of(j)).abs() < tol);
    if !ok {
        return Err(Error::GridMismatch("sample coordinates differ from grid nodes".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_endpoints_and_norm() {
        let p = bump_profile(-1.0, 1.0).unwrap();
        assert!((p.value(0.0) - p.norm_const() * (-1f64).exp()).abs() < 1e-15);
        assert_eq!(p.value(1.0), 0.0);
        assert_eq!(p.value(-1.0), 0.0);
        let q = bump_profile(0.0, 1.0).unwrap();
        assert!((q.norm_sq(200) - 1.0).abs() < 1e-10);
        assert!((q.norm_sq(400) - q.norm_sq(800)).abs() < 1e-10);
        assert!(matches!(bump_profile(1.0, 1.0), Err(Error::EmptySupport(..))));
    }

    #[test]
    fn gaussian_dispersion() {
        let p = truncated_gaussian_profile(-12.0, 12.0, 0.0, 1.0).unwrap();
        let a = position_values(&p, 0.0, 0.0, &[0.0], 0.0).unwrap()[0].norm_sqr();
        let b = position_values(&p, 0.0, 0.0, &[0.0], 1.0).unwrap()[0].norm_sqr();
        assert!((b / a - 5f64.powf(-0.5)).abs() < 1e-6);
    }

    #[test]
    fn parseval_on_line() {
        let p = bump_profile(-2.0, 2.0).unwrap();
        let h = 0.05;
        let xs: Vec<f64> = (0..4000).map(|i| -100.0 + (i as f64 + 0.5) * h).collect();
        for t in [0.0, 0.7] {
            let v = position_values(&p, 0.0, 0.0, &xs, t).unwrap();
            let m: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>() * h;
            assert!((m - 1.0).abs() < 1e-6, "mass {m} at t={t}");
        }
    }

    #[test]
    fn gauge_factor() {
        let pk = Packet::new(PacketSpec::new(2.0, 10.0, 0.0, 0.2).unwrap()).unwrap();
        let ys = [-0.3, 0.0, 1.7];
        let t = 0.05;
        let (a, _) = pk.factor_y(&ys, t, 0.0, false).unwrap();
        let (b, _) = pk.factor_y(&ys, t, 10.5, false).unwrap();
        for (k, y) in ys.iter().enumerate() {
            let f = Complex64::from_polar(1.0, -10.5 * y + 10.5 * 10.5 * t);
            assert!((a[k] * f - b[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn localization_monotone_in_a() {
        let ms: Vec<f64> = [4.0, 8.0, 16.0, 32.0]
            .iter()
            .map(|&a| check_localization(a, 0.1).unwrap().norm)
            .collect();
        assert!(ms.windows(2).all(|w| w[1] > w[0]), "{ms:?}");
        assert!(!check_localization(0.1, 0.01).unwrap().ok);
    }

    #[test]
    fn mollifier_unit_mass() {
        let r = radial(MOLLIFIER_RADIUS);
        assert!((2.0 * PI * r[0] - 1.0).abs() < 1e-12);
        let m = crate::quadrature::gl_integrate(400, 0.0, MOLLIFIER_RADIUS, |r| {
            2.0 * PI * r * mollifier(r, 0.0)
        });
        assert!((m - 1.0).abs() < 1e-10);
    }

    #[test]
    fn cutoff_values() {
        assert_eq!(cutoff_point(0.0, 5.0, 0.0).unwrap(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(cutoff_point(5.0, 0.0, 0.0).unwrap(), [0.0, 0.0, 0.0, 0.0]);
        let a = cutoff_point(0.5, 0.0, 0.0).unwrap();
        let b = cutoff_point(-0.5, 0.0, 0.0).unwrap();
        assert!(a[0] > 0.0 && a[0] < 1.0);
        assert!((a[0] - b[0]).abs() < 1e-12);
        assert!((a[1] + b[1]).abs() < 1e-10);
        // shifted cutoff is a translate
        let c = cutoff_point(3.3, 0.2, 3.0).unwrap();
        let d = cutoff_point(0.3, 0.2, 0.0).unwrap();
        assert!((c[0] - d[0]).abs() < 1e-14);
    }

    #[test]
    fn cutoff_matches_brute_force_convolution() {
        // midpoint-rule convolution of the mollifier with the cone indicator
        let p = (0.42, 0.13);
        let n = 1200;
        let hq = 2.0 * MOLLIFIER_RADIUS / n as f64;
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                let qx = -MOLLIFIER_RADIUS + (a as f64 + 0.5) * hq;
                let qy = -MOLLIFIER_RADIUS + (b as f64 + 0.5) * hq;
                if in_cone(p.0 - qx, p.1 - qy) {
                    s += mollifier(qx, qy);
                }
            }
        }
        s *= hq * hq;
        let v = cutoff_point(p.0, p.1, 0.0).unwrap();
        assert!((v[0] - s).abs() < 2e-4, "{} vs {}", v[0], s);
    }

    #[test]
    fn cutoff_derivatives_match_differences() {
        let p = (0.55, -0.1);
        let e = 1e-4;
        let f = |x: f64, y: f64| cutoff_point(x, y, 0.0).unwrap();
        let c = f(p.0, p.1);
        let dx = (f(p.0 + e, p.1)[0] - f(p.0 - e, p.1)[0]) / (2.0 * e);
        let dy = (f(p.0, p.1 + e)[0] - f(p.0, p.1 - e)[0]) / (2.0 * e);
        let lap = (f(p.0 + e, p.1)[0] + f(p.0 - e, p.1)[0] + f(p.0, p.1 + e)[0] + f(p.0, p.1 - e)[0]
            - 4.0 * c[0])
            / (e * e);
        assert!((c[1] - dx).abs() < 1e-6, "{} {}", c[1], dx);
        assert!((c[2] - dy).abs() < 1e-6, "{} {}", c[2], dy);
        assert!((c[3] - lap).abs() < 1e-3 * c[3].abs().max(1.0), "{} {}", c[3], lap);
    }

    #[test]
    fn single_edge_matches_polar_quadrature() {
        for &(x, y) in &[(1.6, 1.2), (1.5, -1.05), (-2.4, 2.0), (-0.95, -0.6), (2.62, 2.0), (0.8, 0.4)] {
            let fast = single_edge((x, y)).expect("single edge");
            let slow = cutoff_general((x, y)).unwrap();
            for q in 0..4 {
                assert!((fast[q] - slow[q]).abs() < 1e-8 * [1.0, 4.0, 4.0, 64.0][q], "{x} {y} {q} {fast:?} {slow:?}");
            }
        }
        assert!(single_edge((0.5, 0.1)).is_none());
    }
}
