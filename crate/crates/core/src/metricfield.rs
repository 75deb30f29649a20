//! Graph metrics g_f = g_E + df (x) df: curvature, quasi-distances to the
//! Euclidean metric, admissibility and injectivity-radius lower bounds.

use crate::error::{Error, Result};
use crate::evolution::MetricSampler;
use crate::geometry::{Q_MINUS, Q_PLUS};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Built-in surface families with analytic derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Surface {
    Zero,
    Linear { ax: f64, ay: f64 },
    /// c (x^2 + y^2) / 2
    Paraboloid { c: f64 },
    /// A exp(-|p - center|^2 / (2 sigma^2))
    GaussianBump { amp: f64, sigma: f64, center: (f64, f64) },
    Scaled { base: Box<Surface>, factor: f64 },
}

/// Declared decay of |grad f|^2 at infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Envelope {
    /// |grad f|^2 vanishes identically.
    Vanishing,
    /// |grad f(p)|^2 <= c |p|^(-q), q > 2.
    Power { c: f64, q: f64 },
    /// The exact Gaussian-bump profile (scaled by factor^2).
    Gaussian { amp: f64, sigma: f64, center_norm: f64 },
}

impl Envelope {
    /// Upper bound for int_{|p| > r} |grad f|^2 dp on one sheet.
    pub fn tail(&self, r: f64) -> f64 {
        match *self {
            Envelope::Vanishing => 0.0,
            Envelope::Power { c, q } => 2.0 * PI * c * r.powf(2.0 - q) / (q - 2.0),
            Envelope::Gaussian { amp, sigma, center_norm } => {
                let rp = (r - center_norm).max(0.0);
                let s2 = sigma * sigma;
                PI * amp * amp * (rp * rp + s2) / s2 * (-rp * rp / s2).exp()
            }
        }
    }

    fn valid(&self) -> bool {
        match *self {
            Envelope::Power { c, q } => c >= 0.0 && q > 2.0,
            _ => true,
        }
    }
}

/// f with value, gradient [fx, fy] and Hessian [fxx, fxy, fyy].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub f: f64,
    pub grad: [f64; 2],
    pub hess: [f64; 3],
}

impl Surface {
    pub fn jet(&self, x: f64, y: f64) -> Jet {
        match self {
            Surface::Zero => Jet { f: 0.0, grad: [0.0; 2], hess: [0.0; 3] },
            Surface::Linear { ax, ay } => Jet { f: ax * x + ay * y, grad: [*ax, *ay], hess: [0.0; 3] },
            Surface::Paraboloid { c } => Jet {
                f: 0.5 * c * (x * x + y * y),
                grad: [c * x, c * y],
                hess: [*c, 0.0, *c],
            },
            Surface::GaussianBump { amp, sigma, center } => {
                let (dx, dy) = (x - center.0, y - center.1);
                let s2 = sigma * sigma;
                let e = amp * (-(dx * dx + dy * dy) / (2.0 * s2)).exp();
                Jet {
                    f: e,
                    grad: [-dx / s2 * e, -dy / s2 * e],
                    hess: [
                        (dx * dx / s2 - 1.0) / s2 * e,
                        dx * dy / (s2 * s2) * e,
                        (dy * dy / s2 - 1.0) / s2 * e,
                    ],
                }
            }
            Surface::Scaled { base, factor } => {
                let j = base.jet(x, y);
                Jet {
                    f: factor * j.f,
                    grad: [factor * j.grad[0], factor * j.grad[1]],
                    hess: [factor * j.hess[0], factor * j.hess[1], factor * j.hess[2]],
                }
            }
        }
    }

    /// Global bounds (beta, gamma) on |D_i f| and |D_ij f|, when finite.
    pub fn declared_bounds(&self) -> Option<(f64, f64)> {
        match self {
            Surface::Zero => Some((0.0, 0.0)),
            Surface::Linear { ax, ay } => Some((ax.abs().max(ay.abs()), 0.0)),
            Surface::Paraboloid { c } => (*c == 0.0).then_some((0.0, 0.0)),
            Surface::GaussianBump { amp, sigma, .. } => {
                // max |t| e^{-t^2/2} = e^{-1/2}; max |t^2 - 1| e^{-t^2/2} = 1; max |st| e^{-(s^2+t^2)/2} = 1/e
                let a = amp.abs();
                Some((a / sigma * (-0.5f64).exp(), a / (sigma * sigma)))
            }
            Surface::Scaled { base, factor } => {
                base.declared_bounds().map(|(b, g)| (b * factor.abs(), g * factor.abs()))
            }
        }
    }

    pub fn default_envelope(&self) -> Option<Envelope> {
        match self {
            Surface::Zero => Some(Envelope::Vanishing),
            Surface::Linear { ax, ay } => (*ax == 0.0 && *ay == 0.0).then_some(Envelope::Vanishing),
            Surface::Paraboloid { c } => (*c == 0.0).then_some(Envelope::Vanishing),
            Surface::GaussianBump { amp, sigma, center } => Some(Envelope::Gaussian {
                amp: *amp,
                sigma: *sigma,
                center_norm: center.0.hypot(center.1),
            }),
            Surface::Scaled { base, factor } => base.default_envelope().map(|e| match e {
                Envelope::Vanishing => Envelope::Vanishing,
                Envelope::Power { c, q } => Envelope::Power { c: c * factor * factor, q },
                Envelope::Gaussian { amp, sigma, center_norm } => {
                    Envelope::Gaussian { amp: amp * factor, sigma, center_norm }
                }
            }),
        }
    }

    pub fn scaled(self, factor: f64) -> Surface {
        Surface::Scaled { base: Box::new(self), factor }
    }
}

/// A surface family with an optional user-declared tail envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFunction {
    #[serde(flatten)]
    pub surface: Surface,
    #[serde(default)]
    pub envelope: Option<Envelope>,
}

impl SurfaceFunction {
    pub fn new(surface: Surface) -> Self {
        SurfaceFunction { surface, envelope: None }
    }

    pub fn jet(&self, x: f64, y: f64) -> Jet {
        self.surface.jet(x, y)
    }

    pub fn envelope(&self) -> Option<Envelope> {
        self.envelope.or_else(|| self.surface.default_envelope())
    }

    pub fn metric_at(&self, x: f64, y: f64) -> MetricSample {
        MetricSample::from_gradient(self.jet(x, y).grad)
    }
}

impl MetricSampler for SurfaceFunction {
    fn metric(&self, x: f64, y: f64, _sheet: usize) -> [f64; 3] {
        let m = self.metric_at(x, y);
        [m.g11, m.g12, m.g22]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub g11: f64,
    pub g12: f64,
    pub g22: f64,
    pub det: f64,
    /// Eigenvalues 1 and det g.
    pub alpha: [f64; 2],
}

impl MetricSample {
    pub fn from_gradient(g: [f64; 2]) -> Self {
        let z = g[0] * g[0] + g[1] * g[1];
        MetricSample {
            g11: 1.0 + g[0] * g[0],
            g12: g[0] * g[1],
            g22: 1.0 + g[1] * g[1],
            det: 1.0 + z,
            alpha: [1.0, 1.0 + z],
        }
    }
}

pub fn gauss_curvature(f: &SurfaceFunction, x: f64, y: f64) -> f64 {
    curvature_of(&f.jet(x, y))
}

pub fn curvature_of(j: &Jet) -> f64 {
    let det = 1.0 + j.grad[0] * j.grad[0] + j.grad[1] * j.grad[1];
    (j.hess[0] * j.hess[2] - j.hess[1] * j.hess[1]) / (det * det)
}

/// Pointwise eigenvalue discrepancy sqrt(alpha_2) - 1/sqrt(alpha_2).
pub fn dtilde_from_alpha(alpha: f64) -> f64 {
    (alpha.sqrt() - 1.0 / alpha.sqrt()).abs()
}

pub fn dtilde(f: &SurfaceFunction, x: f64, y: f64) -> f64 {
    let g = f.jet(x, y).grad;
    let z = g[0] * g[0] + g[1] * g[1];
    // z / sqrt(1 + z) without cancellation
    z / (1.0 + z).sqrt()
}

/// d0(p) = min{1, |p - q-|, |p - q+|}.
pub fn d0(x: f64, y: f64) -> f64 {
    let dm = (x - Q_MINUS.0).hypot(y - Q_MINUS.1);
    let dp = (x - Q_PLUS.0).hypot(y - Q_PLUS.1);
    dm.min(dp).min(1.0)
}

pub fn r0_default(x: f64, y: f64, rho: f64) -> f64 {
    rho * d0(x, y)
}

/// Truncation of the covering used by the integral and lattice functionals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    /// Half side of the square [-R, R]^2; must be at least 2.
    pub radius: f64,
    pub n_sheets: usize,
    /// Radius of the discs around the branch points left out of the integrals.
    #[serde(default = "default_exclusion")]
    pub exclusion: f64,
    /// Lattice pitch for maximization.
    #[serde(default = "default_pitch")]
    pub pitch: f64,
}

fn default_exclusion() -> f64 {
    1e-3
}
fn default_pitch() -> f64 {
    0.05
}

impl Domain {
    pub fn new(radius: f64, n_sheets: usize) -> Self {
        Domain { radius, n_sheets, exclusion: default_exclusion(), pitch: default_pitch() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius >= 2.0) || self.n_sheets < 2 || !(self.exclusion > 0.0 && self.exclusion < 1.0) {
            return Err(Error::InvalidParameter(format!("invalid domain {self:?}")));
        }
        if !(self.pitch > 0.0) {
            return Err(Error::InvalidParameter("lattice pitch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedIntegral {
    /// Quadrature value over all sheets of the truncated domain.
    pub value: f64,
    /// Upper bound of the contribution beyond the square.
    pub tail: f64,
    /// Size of |grad f|^2 at the branch points; nonzero means the weight
    /// d0^-4 makes the untruncated integral diverge there.
    pub branch_gradient_sq: f64,
    pub exclusion: f64,
}

impl WeightedIntegral {
    pub fn total(&self) -> f64 {
        self.value + self.tail
    }

    pub fn finite(&self) -> bool {
        self.branch_gradient_sq == 0.0
    }
}

fn square_integral<F: Fn(f64, f64) -> f64>(f: &F, r: f64) -> Result<f64> {
    let mut panels = (2.0 * r).ceil() as usize;
    let mut prev = f64::NAN;
    for _ in 0..7 {
        let nodes = crate::quadrature::composite_nodes(panels, 12, -r, r);
        let mut acc = 0.0;
        for &(y, wy) in &nodes {
            let mut row = 0.0;
            for &(x, wx) in &nodes {
                row += wx * f(x, y);
            }
            acc += wy * row;
        }
        // steep bumps give |grad f| a near-conical tip, so full precision is not pursued
        if (acc - prev).abs() <= 1e-8 * acc.abs().max(1e-300) {
            return Ok(acc);
        }
        prev = acc;
        panels *= 2;
    }
    Err(Error::QuadratureNotConverged(format!("square integral at {panels} panels")))
}

/// int over {delta < |p - q| < 1} of g(p) in polar coordinates, log-spaced in r.
fn annulus_integral<F: Fn(f64, f64) -> f64>(g: &F, q: (f64, f64), delta: f64, inner: bool) -> Result<f64> {
    let (lo, hi) = if inner { (0.0, delta) } else { (delta.ln(), 0.0) };
    let mut m = 64;
    let mut panels = 8;
    let mut prev = f64::NAN;
    for _ in 0..7 {
        let nodes = crate::quadrature::composite_nodes(panels, 12, lo, hi);
        let mut acc = 0.0;
        for &(u, w) in &nodes {
            let r = if inner { u } else { u.exp() };
            // jacobian r dr = r^2 du on the log scale
            let jac = if inner { r } else { r * r };
            let mut ring = 0.0;
            for k in 0..m {
                let th = 2.0 * PI * k as f64 / m as f64;
                ring += g(q.0 + r * th.cos(), q.1 + r * th.sin());
            }
            acc += w * jac * ring * 2.0 * PI / m as f64;
        }
        if (acc - prev).abs() <= 1e-10 * acc.abs().max(1e-300) {
            return Ok(acc);
        }
        prev = acc;
        m *= 2;
        panels *= 2;
    }
    Err(Error::QuadratureNotConverged("annulus integral".into()))
}

/// int_M density(p) * weight * d0(p)^-4 dp over the truncated domain, with the
/// discs of radius `exclusion` around q+- removed. Outside B_1(q+-) d0 = 1, so the
/// square is integrated with the smooth weight and the unit discs get a correction.
fn branch_weighted<F: Fn(f64, f64) -> f64>(
    density: F,
    grad_sq_tail: Option<f64>,
    domain: &Domain,
) -> Result<(f64, f64)> {
    domain.validate()?;
    let square = square_integral(&density, domain.radius)?;
    let mut correction = 0.0;
    for q in [Q_MINUS, Q_PLUS] {
        let ring = |x: f64, y: f64| {
            let r = (x - q.0).hypot(y - q.1);
            density(x, y) * (r.powi(-4) - 1.0)
        };
        correction += annulus_integral(&ring, q, domain.exclusion, false)?;
        correction -= annulus_integral(&density, q, domain.exclusion, true)?;
    }
    let tail = match grad_sq_tail {
        Some(t) => t,
        None => {
            let wider = square_integral(&density, 2.0 * domain.radius)?;
            let diff = (wider - square).abs();
            if diff > 1e-6 * square.abs().max(1e-12) {
                return Err(Error::TailNotBounded(format!(
                    "no decay envelope and the truncated integral moved by {diff:.3e} under doubling R"
                )));
            }
            diff
        }
    };
    let n = domain.n_sheets as f64;
    Ok((n * (square + correction), n * tail))
}

fn branch_gradient_sq(f: &SurfaceFunction) -> f64 {
    [Q_MINUS, Q_PLUS]
        .iter()
        .map(|q| {
            let g = f.jet(q.0, q.1).grad;
            g[0] * g[0] + g[1] * g[1]
        })
        .fold(0.0, f64::max)
}

fn envelope_tail(f: &SurfaceFunction, r: f64) -> Result<Option<f64>> {
    match f.envelope() {
        Some(e) if !e.valid() => Err(Error::InvalidParameter(format!("invalid envelope {e:?}"))),
        Some(e) => Ok(Some(e.tail(r))),
        None => Ok(None),
    }
}

/// d~_1(g_E, g_f) = int d~(p) r0(p)^-4 dp with r0 = rho d0.
pub fn dtilde_1(f: &SurfaceFunction, rho: f64, domain: &Domain) -> Result<WeightedIntegral> {
    if !(rho > 0.0 && rho <= 0.5) {
        return Err(Error::InvalidParameter(format!("rho = {rho} must lie in (0, 1/2]")));
    }
    let w = rho.powi(-4);
    // d~ <= |grad f|^2, so the gradient envelope bounds the tail
    let tail = envelope_tail(f, domain.radius)?.map(|t| t * w);
    let (value, tail) = branch_weighted(|x, y| w * dtilde(f, x, y), tail, domain)?;
    Ok(WeightedIntegral { value, tail, branch_gradient_sq: branch_gradient_sq(f), exclusion: domain.exclusion })
}

/// int_M |grad f|^2 d0^-4 dp.
pub fn graph_condition_integral(f: &SurfaceFunction, domain: &Domain) -> Result<WeightedIntegral> {
    let tail = envelope_tail(f, domain.radius)?;
    let (value, tail) = branch_weighted(
        |x, y| {
            let g = f.jet(x, y).grad;
            g[0] * g[0] + g[1] * g[1]
        },
        tail,
        domain,
    )?;
    Ok(WeightedIntegral { value, tail, branch_gradient_sq: branch_gradient_sq(f), exclusion: domain.exclusion })
}

/// Maximum of `h` over lattice points of {r_in <= |p - c| <= r_out}, refined by
/// halving the pitch until successive maxima agree to 1%.
pub fn lattice_max<H: Fn(f64, f64) -> f64>(h: H, c: (f64, f64), r_in: f64, r_out: f64, pitch: f64) -> f64 {
    let scan = |p: f64| {
        let n = (r_out / p).ceil() as i64;
        let mut m = 0.0f64;
        for j in -n..=n {
            for i in -n..=n {
                let (dx, dy) = (i as f64 * p, j as f64 * p);
                let r = dx.hypot(dy);
                if r >= r_in && r <= r_out {
                    m = m.max(h(c.0 + dx, c.1 + dy));
                }
            }
        }
        m
    };
    let mut p = pitch;
    let mut prev = scan(p);
    for _ in 0..4 {
        p *= 0.5;
        let cur = scan(p);
        if (cur - prev).abs() <= 0.01 * cur.abs() {
            return cur;
        }
        prev = cur;
    }
    prev
}

/// Lattice maximum of d~ over the square domain.
pub fn dtilde_inf(f: &SurfaceFunction, domain: &Domain) -> Result<f64> {
    domain.validate()?;
    Ok(lattice_max(|x, y| dtilde(f, x, y), (0.0, 0.0), 0.0, domain.radius * 2f64.sqrt(), domain.pitch)
        .max(square_lattice_max(|x, y| dtilde(f, x, y), domain)))
}

fn square_lattice_max<H: Fn(f64, f64) -> f64>(h: H, domain: &Domain) -> f64 {
    let n = (domain.radius / domain.pitch).ceil() as i64;
    let mut m = 0.0f64;
    for j in -n..=n {
        for i in -n..=n {
            m = m.max(h(i as f64 * domain.pitch, j as f64 * domain.pitch));
        }
    }
    m
}

fn jet_maxima(f: &SurfaceFunction, c: (f64, f64), r_in: f64, r_out: f64) -> (f64, f64) {
    let beta = lattice_max(
        |x, y| {
            let g = f.jet(x, y).grad;
            g[0].abs().max(g[1].abs())
        },
        c,
        r_in,
        r_out,
        0.05,
    );
    let gamma = lattice_max(
        |x, y| {
            let h = f.jet(x, y).hess;
            h[0].abs().max(h[1].abs()).max(h[2].abs())
        },
        c,
        r_in,
        r_out,
        0.05,
    );
    (beta, gamma)
}

/// 1/2 min{eta^2 pi / sqrt K, eta inj0}; for K <= 0 the first entry is dropped.
pub fn inj_bound_comparison(eta: f64, k: f64, inj0: f64) -> f64 {
    let second = eta * inj0;
    if k <= 0.0 {
        return 0.5 * second;
    }
    0.5 * (eta * eta * PI / k.sqrt()).min(second)
}

/// pi / (2 sqrt 2) / ((1 + 2 beta^2)^2 gamma).
pub fn inj_bound_global(beta: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::ZeroGamma);
    }
    Ok(PI / (2.0 * 2f64.sqrt()) / ((1.0 + 2.0 * beta * beta).powi(2) * gamma))
}

/// Cutoff equal to 1 on B_1 and 0 outside B_2, radial transition
/// T(r) = e(2 - r) / (e(2 - r) + e(r - 1)), e(t) = exp(-1/t).
pub fn cutoff_profile(r: f64) -> [f64; 3] {
    let e = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    let de = |t: f64| if t > 0.0 { (-1.0 / t).exp() / (t * t) } else { 0.0 };
    let d2e = |t: f64| if t > 0.0 { (-1.0 / t).exp() * (1.0 - 2.0 * t) / t.powi(4) } else { 0.0 };
    let (a, b) = (e(2.0 - r), e(r - 1.0));
    let s = a + b;
    if b == 0.0 {
        return [1.0, 0.0, 0.0];
    }
    if a == 0.0 {
        return [0.0, 0.0, 0.0];
    }
    let (da, db) = (-de(2.0 - r), de(r - 1.0));
    let (d2a, d2b) = (d2e(2.0 - r), d2e(r - 1.0));
    let t = a / s;
    let ds = da + db;
    let dt = (da * s - a * ds) / (s * s);
    let d2s = d2a + d2b;
    // (a/s)'' = a''/s - 2 a' s'/s^2 - a s''/s^2 + 2 a s'^2/s^3
    let d2t = d2a / s - 2.0 * da * ds / (s * s) - a * d2s / (s * s) + 2.0 * a * ds * ds / (s * s * s);
    [t, dt, d2t]
}

/// c_phi = max(||grad phi||_inf, max_ij ||D_ij phi||_inf) for the cutoff above.
pub fn c_phi() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| {
        let mut m = 0.0f64;
        let n = 20000;
        for k in 1..n {
            let r = 1.0 + k as f64 / n as f64;
            let [_, d1, d2] = cutoff_profile(r);
            // Hessian of a radial function: T'' on the radial direction, T'/r across;
            // entries reach |T''|, |T'/r| and |T'' - T'/r| / 2
            let ent = d2.abs().max((d1 / r).abs()).max(0.5 * (d2 - d1 / r).abs());
            m = m.max(d1.abs()).max(ent);
        }
        m
    })
}

/// Coefficient bound of the order-2 reflection extension across a line.
pub const C_EXT: f64 = 3.0;

fn local_formula(beta: f64, gamma: f64, c: f64) -> f64 {
    let denom = (1.0 + 2.0 * c * c * beta * beta).powi(2) * (gamma + c * beta);
    if denom == 0.0 {
        1.0
    } else {
        (1.0 / denom).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjBound {
    pub value: f64,
    pub beta: f64,
    pub gamma: f64,
    pub c: f64,
}

/// min{1, (1 + 2c^2 beta^2)^-2 (gamma + c beta)^-1} with beta, gamma maximized over
/// the closed disc of radius 2 around p0.
pub fn inj_bound_local(f: &SurfaceFunction, p0: (f64, f64)) -> InjBound {
    let (beta, gamma) = jet_maxima(f, p0, 0.0, 2.0);
    let c = c_phi();
    InjBound { value: local_formula(beta, gamma, c), beta, gamma, c }
}

/// Bound near a puncture at the origin: maxima over the annulus
/// |p0|/2 <= |p| <= |p0|/2 + 2, constant c_phi * C_EXT.
pub fn inj_bound_punctured(f: &SurfaceFunction, p0: (f64, f64)) -> Result<InjBound> {
    let r = p0.0.hypot(p0.1);
    if r == 0.0 {
        return Err(Error::AtPuncture);
    }
    if r > 1.0 {
        return Err(Error::InvalidParameter(format!("|p0| = {r} exceeds 1")));
    }
    let (beta, gamma) = jet_maxima(f, (0.0, 0.0), 0.5 * r, 0.5 * r + 2.0);
    let c = c_phi() * C_EXT;
    let v = local_formula(beta, gamma, c);
    Ok(InjBound { value: (0.5 * r).min(if v >= 1.0 { f64::INFINITY } else { v }), beta, gamma, c })
}

/// Scale factor applied to the punctured construction so that the annuli around
/// q+ and q- stay disjoint.
pub const COVERING_SCALE: f64 = 0.5;

/// c_f from global derivative bounds: far from q+- the local bound, near them the
/// punctured bound at scale lambda (derivatives D f keep beta, D^2 f gets lambda gamma).
pub fn covering_constant(beta: f64, gamma: f64) -> f64 {
    let lam = COVERING_SCALE;
    let near = lam * local_formula(beta, lam * gamma, c_phi() * C_EXT);
    let far = local_formula(beta, gamma, c_phi());
    near.min(far)
}

/// c_f min{1, dist(p, q+), dist(p, q-)}.
pub fn inj_bound_covering(f: &SurfaceFunction, p: (f64, f64)) -> Result<f64> {
    let (beta, gamma) = f.surface.declared_bounds().ok_or_else(|| {
        Error::InvalidParameter("covering bound needs global derivative bounds".into())
    })?;
    Ok(covering_constant(beta, gamma) * d0(p.0, p.1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub eta: f64,
    pub d_inf: f64,
    pub d_1: WeightedIntegral,
    pub curvature_bound: f64,
    pub rho: f64,
    pub rho_limit: f64,
    pub c_f: f64,
    pub r0: String,
    pub member_met_r0: bool,
    pub member_gamma_eps: bool,
    pub failing: Vec<String>,
    pub low_confidence: Vec<String>,
}

/// Checks g_f against Met_{r0}(M) with r0 = rho d0 and against (gamma, eps).
pub fn membership(
    f: &SurfaceFunction,
    rho: f64,
    gamma: f64,
    eps: f64,
    domain: &Domain,
) -> Result<AdmissibilityReport> {
    let (beta_bar, gamma_bar) = f.surface.declared_bounds().ok_or_else(|| {
        Error::InvalidParameter("membership needs declared global derivative bounds".into())
    })?;
    let eta = 1.0 / (1.0 + 2.0 * beta_bar * beta_bar);
    let lattice_k = square_lattice_max(|x, y| gauss_curvature(f, x, y).abs(), domain);
    let k = lattice_k.max(2.0 * gamma_bar * gamma_bar);
    let c_f = covering_constant(beta_bar, gamma_bar);
    let mut rho_limit = 0.5f64.min(c_f);
    if k > 0.0 {
        rho_limit = rho_limit.min(1.0 / k.sqrt());
    }
    let d_inf = dtilde_inf(f, domain)?;
    let d_1 = dtilde_1(f, rho, domain)?;
    let mut failing = Vec::new();
    if rho > rho_limit {
        failing.push(format!("rho = {rho} exceeds min{{1/2, 1/sqrt K, c_f}} = {rho_limit:.6}"));
    }
    // curvature >= -1/r0^2 is implied by |kappa| <= K and rho <= 1/sqrt K since r0 <= rho
    if !d_1.finite() {
        failing.push(format!(
            "weighted integral diverges at the branch points (|grad f|^2 = {:.3e} there)",
            d_1.branch_gradient_sq
        ));
    }
    let member_met_r0 = failing.is_empty();
    let mut member_gamma_eps = member_met_r0;
    if d_inf > gamma {
        failing.push(format!("d_inf = {d_inf:.6e} exceeds gamma = {gamma}"));
        member_gamma_eps = false;
    }
    if d_1.total() > eps {
        failing.push(format!("d_1 = {:.6e} exceeds eps = {eps}", d_1.total()));
        member_gamma_eps = false;
    }
    Ok(AdmissibilityReport {
        eta,
        d_inf,
        d_1,
        curvature_bound: k,
        rho,
        rho_limit,
        c_f,
        r0: format!("r0(p) = {rho} * min{{1, dist(p, q-), dist(p, q+)}}"),
        member_met_r0,
        member_gamma_eps,
        failing,
        low_confidence: vec!["derivative maxima from lattice search".into()],
    })
}
