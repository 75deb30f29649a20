//! Discrete Hamiltonians on the branched grid and the Crank-Nicolson stepper.

use crate::error::{Error, Result};
use crate::field::WaveField;
use crate::geometry::{BranchedGrid, DIR_XM, DIR_XP, DIR_YM, DIR_YP};
use crate::linalg::{cayley_step_in, Assembler, CsrMatrix, KrylovWorkspace, SolveStats};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

type C = Complex64;

/// Sheet-aware sampler of a metric tensor (g11, g12, g22) at planar points.
pub trait MetricSampler {
    fn metric(&self, x: f64, y: f64, sheet: usize) -> [f64; 3];
}

/// The Euclidean metric.
pub struct Identity;

impl MetricSampler for Identity {
    fn metric(&self, _x: f64, _y: f64, _sheet: usize) -> [f64; 3] {
        [1.0, 0.0, 1.0]
    }
}

/// Flat-inner-product operator W^{-1/2} A W^{-1/2}. With a nonzero `gauge` G the
/// operator acts on envelopes psi e^{-iGy}, minus the constant G^2.
#[derive(Debug, Clone)]
pub struct DiscreteHamiltonian {
    pub grid: BranchedGrid,
    pub matrix: CsrMatrix,
    pub weights: Option<Vec<f64>>,
    pub gauge: f64,
}

impl DiscreteHamiltonian {
    pub fn apply(&self, psi: &WaveField) -> Vec<C> {
        self.matrix.apply(psi.values())
    }

    /// <H psi, psi> in the h^2-weighted inner product.
    pub fn energy(&self, psi: &WaveField) -> f64 {
        let h2 = self.grid.h * self.grid.h;
        self.matrix.quadratic_form(psi.values()) * h2
    }

    /// Physical nodal values u -> flat state W^{1/2} u.
    pub fn to_flat(&self, u: &WaveField) -> WaveField {
        match &self.weights {
            None => u.clone(),
            Some(w) => {
                let mut out = u.clone();
                let v = u.values().iter().zip(w).map(|(z, w)| z * w.sqrt()).collect();
                out.set_values(v);
                out
            }
        }
    }

    pub fn from_flat(&self, phi: &WaveField) -> WaveField {
        match &self.weights {
            None => phi.clone(),
            Some(w) => {
                let mut out = phi.clone();
                let v = phi.values().iter().zip(w).map(|(z, w)| z / w.sqrt()).collect();
                out.set_values(v);
                out
            }
        }
    }
}

pub fn assemble_euclidean(grid: &BranchedGrid) -> DiscreteHamiltonian {
    assemble_euclidean_gauge(grid, 0.0)
}

/// -Lap_h - 2iG D_y with D_y the central difference along the grid adjacency.
pub fn assemble_euclidean_gauge(grid: &BranchedGrid, gauge: f64) -> DiscreteHamiltonian {
    let n = grid.num_nodes();
    let h2 = grid.h * grid.h;
    let mut asm = Assembler::new(n);
    for id in 0..n {
        asm.add(id, id, C::new(4.0 / h2, 0.0));
        for dir in [DIR_XP, DIR_XM, DIR_YP, DIR_YM] {
            if let Some(nb) = grid.neighbor(id, dir) {
                asm.add(id, nb, C::new(-1.0 / h2, 0.0));
            }
        }
        if gauge != 0.0 {
            add_gauge_y(&mut asm, grid, id, gauge, 1.0, 1.0);
        }
    }
    DiscreteHamiltonian { grid: grid.clone(), matrix: asm.finish(), weights: None, gauge }
}

/// Adds -iG (D_y C + C D_y) row entries for node `id`, with c = c(id) and the
/// neighbor's coefficient supplied by `c_of`.
fn add_gauge_y(asm: &mut Assembler, grid: &BranchedGrid, id: usize, gauge: f64, c_here: f64, c_nb: f64) {
    let h = grid.h;
    if let Some(up) = grid.neighbor(id, DIR_YP) {
        asm.add(id, up, C::new(0.0, -gauge * (c_here + c_nb) / (2.0 * h)));
    }
    if let Some(dn) = grid.neighbor(id, DIR_YM) {
        asm.add(id, dn, C::new(0.0, gauge * (c_here + c_nb) / (2.0 * h)));
    }
}

fn inverse_density(g: [f64; 3], x: f64, y: f64) -> Result<([f64; 3], f64)> {
    let det = g[0] * g[2] - g[1] * g[1];
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::DegenerateMetric(det, x, y));
    }
    let s = det.sqrt();
    // sqrt(det g) g^{ij}
    Ok(([g[2] / s, -g[1] / s, g[0] / s], s))
}

/// Edge-weighted Dirichlet form of the metric Laplacian, mass-lumped with
/// weights sqrt(det g) and symmetrized; mixed terms through the two cell diagonals.
pub fn assemble_metric<M: MetricSampler>(
    grid: &BranchedGrid,
    metric: &M,
    gauge: f64,
) -> Result<DiscreteHamiltonian> {
    let n = grid.num_nodes();
    let h = grid.h;
    let h2 = h * h;
    let mut asm = Assembler::new(n);
    let mut w = vec![0.0; n];
    let mut c_node = vec![[0.0; 3]; n];
    let mut g22_up = vec![0.0; n];
    for id in 0..n {
        let (k, _, _) = grid.unpack(id);
        let (x, y) = grid.coords(id);
        let (c, s) = inverse_density(metric.metric(x, y, k), x, y)?;
        w[id] = s;
        c_node[id] = c;
        // g^{22} = c22 / sqrt(det g)
        g22_up[id] = c[2] / s;
    }
    for id in 0..n {
        let (k, _, _) = grid.unpack(id);
        let (x, y) = grid.coords(id);
        // x-edges: the +x edge once, boundary ghosts on both sides
        for (dir, dx) in [(DIR_XP, 0.5 * h), (DIR_XM, -0.5 * h)] {
            let (c, _) = inverse_density(metric.metric(x + dx, y, k), x + dx, y)?;
            match grid.neighbor(id, dir) {
                Some(nb) if dir == DIR_XP => asm.add_edge(id, nb, c[0] / h2),
                Some(_) => {}
                None => asm.add(id, id, C::new(c[0] / h2, 0.0)),
            }
        }
        for (dir, dy) in [(DIR_YP, 0.5 * h), (DIR_YM, -0.5 * h)] {
            // cut-crossing edges read the metric on the lower node's sheet
            let (c, _) = inverse_density(metric.metric(x, y + dy, k), x, y + dy)?;
            match grid.neighbor(id, dir) {
                Some(nb) if dir == DIR_YP => asm.add_edge(id, nb, c[2] / h2),
                Some(_) => {}
                None => asm.add(id, id, C::new(c[2] / h2, 0.0)),
            }
        }
        if gauge != 0.0 {
            for (dir, sign) in [(DIR_YP, 1.0), (DIR_YM, -1.0)] {
                if let Some(nb) = grid.neighbor(id, dir) {
                    let v = sign * (c_node[id][2] + c_node[nb][2]) / (2.0 * h);
                    asm.add(id, nb, C::new(0.0, -gauge * v));
                }
            }
            for (dir, sign) in [(DIR_XP, 1.0), (DIR_XM, -1.0)] {
                if let Some(nb) = grid.neighbor(id, dir) {
                    let v = sign * (c_node[id][1] + c_node[nb][1]) / (2.0 * h);
                    if v != 0.0 {
                        asm.add(id, nb, C::new(0.0, -gauge * v));
                    }
                }
            }
            let pot = gauge * gauge * w[id] * (g22_up[id] - 1.0);
            if pot != 0.0 {
                asm.add(id, id, C::new(pot, 0.0));
            }
        }
    }
    // mixed term: +c12/2 on the main diagonal, -c12/2 on the anti-diagonal of each cell
    for k in 0..grid.num_sheets() {
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let Some([a, b, c, d]) = grid.cell(k, i, j) else { continue };
                let xc = grid.x_of(i) + 0.5 * h;
                let yc = grid.y_of(j) + 0.5 * h;
                let (cc, _) = inverse_density(metric.metric(xc, yc, k), xc, yc)?;
                if cc[1] != 0.0 {
                    asm.add_edge(a, d, 0.5 * cc[1] / h2);
                    asm.add_edge(b, c, -0.5 * cc[1] / h2);
                }
            }
        }
    }
    let a = asm.finish();
    let identity = w.iter().all(|&v| v == 1.0);
    let matrix = if identity { a } else { symmetrize(a, &w) };
    Ok(DiscreteHamiltonian {
        grid: grid.clone(),
        matrix,
        weights: (!identity).then_some(w),
        gauge,
    })
}

fn symmetrize(mut a: CsrMatrix, w: &[f64]) -> CsrMatrix {
    let isq: Vec<f64> = w.iter().map(|v| 1.0 / v.sqrt()).collect();
    for i in 0..a.n {
        for k in a.row_ptr[i]..a.row_ptr[i + 1] {
            let f = isq[i] * isq[a.cols[k] as usize];
            a.re[k] *= f;
            if let Some(im) = a.im.as_mut() {
                im[k] *= f;
            }
        }
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub dt: f64,
    #[serde(default = "default_tol")]
    pub solver_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Mass in the outer 5% margin above which contamination is flagged.
    #[serde(default = "default_boundary")]
    pub boundary_threshold: f64,
    /// Largest energy carried by the data, used for the phase-per-step report.
    #[serde(default)]
    pub resolved_energy: Option<f64>,
}

fn default_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    2000
}
fn default_boundary() -> f64 {
    1e-4
}

impl StepperConfig {
    pub fn new(dt: f64) -> Self {
        StepperConfig {
            dt,
            solver_tol: default_tol(),
            max_iter: default_max_iter(),
            boundary_threshold: default_boundary(),
            resolved_energy: None,
        }
    }

    pub fn phase_per_step(&self) -> Option<f64> {
        self.resolved_energy.map(|e| e * self.dt.abs())
    }
}

/// Crank-Nicolson propagator holding H psi and the previous state between
/// steps; the solver starts from the linear extrapolation of the last two.
/// Call `reset` after changing the state externally.
pub struct Stepper<'a> {
    pub ham: &'a DiscreteHamiltonian,
    pub cfg: StepperConfig,
    hpsi: Option<Vec<C>>,
    prev: Option<(Vec<C>, Vec<C>)>,
    pub last: SolveStats,
    pub total_iterations: usize,
    ws: KrylovWorkspace,
}

impl<'a> Stepper<'a> {
    pub fn new(ham: &'a DiscreteHamiltonian, cfg: StepperConfig) -> Self {
        Stepper {
            ham,
            cfg,
            hpsi: None,
            prev: None,
            last: SolveStats::default(),
            total_iterations: 0,
            ws: KrylovWorkspace::new(),
        }
    }

    /// Advances values in place by one step of size cfg.dt.
    pub fn advance(&mut self, psi: &mut Vec<C>) -> Result<()> {
        let hpsi = match self.hpsi.take() {
            Some(v) => v,
            None => {
                self.prev = None;
                self.ham.matrix.apply(psi)
            }
        };
        let guess = self.prev.take().map(|(mut p, mut hp)| {
            for k in 0..p.len() {
                p[k] = 2.0 * psi[k] - p[k];
                hp[k] = 2.0 * hpsi[k] - hp[k];
            }
            (p, hp)
        });
        let (x, hx, st) = cayley_step_in(
            &self.ham.matrix,
            0.5 * self.cfg.dt,
            psi,
            &hpsi,
            self.cfg.solver_tol,
            self.cfg.max_iter,
            guess,
            &mut self.ws,
        )?;
        let old = std::mem::replace(psi, x);
        self.prev = Some((old, hpsi));
        self.hpsi = Some(hx);
        self.last = st;
        self.total_iterations += st.iterations;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.hpsi = None;
        self.prev = None;
    }
}

pub fn step(h: &DiscreteHamiltonian, psi: &WaveField, cfg: &StepperConfig) -> Result<WaveField> {
    let mut v = psi.values().to_vec();
    Stepper::new(h, *cfg).advance(&mut v)?;
    let mut out = psi.clone();
    out.set_values(v);
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolveSummary {
    pub steps: usize,
    pub total_iterations: usize,
    pub max_boundary_mass: f64,
    pub contaminated: bool,
    pub norm_drift: f64,
    pub warnings: Vec<String>,
}

pub struct EvolveOutcome {
    pub state: WaveField,
    pub summary: EvolveSummary,
}

/// Mass in the outer margin of relative width `frac` (all sheets).
pub fn margin_mass(grid: &BranchedGrid, psi: &WaveField, frac: f64) -> f64 {
    let h2 = grid.h * grid.h;
    psi.values()
        .iter()
        .enumerate()
        .filter(|(id, _)| grid.in_margin(*id, frac))
        .map(|(_, z)| z.norm_sqr())
        .sum::<f64>()
        * h2
}

/// Evolves psi0 over time T (negative T runs backward); `observer(t, psi)` is called
/// at t = 0, every `stride` steps and at the end.
pub fn evolve<F: FnMut(f64, &WaveField)>(
    ham: &DiscreteHamiltonian,
    psi0: &WaveField,
    t_total: f64,
    cfg: &StepperConfig,
    stride: usize,
    mut observer: F,
) -> Result<EvolveOutcome> {
    if !psi0.matches(&ham.grid) {
        return Err(Error::GridMismatch("state and Hamiltonian grids differ".into()));
    }
    if !(cfg.dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt = {} must be positive", cfg.dt)));
    }
    let ratio = t_total.abs() / cfg.dt;
    let steps = ratio.round() as usize;
    if (ratio - steps as f64).abs() > 1e-6 * ratio.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "T = {t_total} is not a multiple of dt = {}",
            cfg.dt
        )));
    }
    let mut scfg = *cfg;
    scfg.dt = cfg.dt * t_total.signum();
    let mut warnings = Vec::new();
    if let Some(p) = cfg.phase_per_step() {
        if p > 0.5 {
            warnings.push(format!("phase per step {p:.3} rad exceeds 0.5"));
        }
    }
    let stride = stride.max(1);
    let mut stepper = Stepper::new(ham, scfg);
    let mut psi = psi0.clone();
    let mut values = psi.values().to_vec();
    let mut max_margin = margin_mass(&ham.grid, &psi, 0.05);
    observer(0.0, &psi);
    for n in 1..=steps {
        stepper.advance(&mut values)?;
        if n % stride == 0 || n == steps {
            psi.set_values(values.clone());
            max_margin = max_margin.max(margin_mass(&ham.grid, &psi, 0.05));
            observer(n as f64 * scfg.dt, &psi);
        }
    }
    psi.set_values(values);
    let contaminated = max_margin > cfg.boundary_threshold;
    if contaminated {
        warnings.push(Error::BoundaryContamination(max_margin, cfg.boundary_threshold).to_string());
    }
    let norm_drift = (psi.norm_sq() - psi0.norm_sq()).abs() / psi0.norm_sq().max(1e-300);
    Ok(EvolveOutcome {
        state: psi,
        summary: EvolveSummary {
            steps,
            total_iterations: stepper.total_iterations,
            max_boundary_mass: max_margin,
            contaminated,
            norm_drift,
            warnings,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, CoveringSpec};

    fn small() -> BranchedGrid {
        build_grid(CoveringSpec::default(), 4.5, 0.25).unwrap()
    }

    #[test]
    fn euclidean_stencil_and_symmetry() {
        let g = small();
        let h = assemble_euclidean(&g);
        assert!(h.matrix.is_real());
        assert_eq!(h.matrix.hermitian_defect(), 0.0);
        let id = g.index(0, 5, 7);
        assert_eq!(h.matrix.get(id, id).re, 64.0);
        assert_eq!(h.matrix.get(id, g.index(0, 6, 7)).re, -16.0);
    }

    #[test]
    fn identity_metric_matches_euclidean() {
        let g = small();
        let a = assemble_euclidean_gauge(&g, 3.5);
        let b = assemble_metric(&g, &Identity, 3.5).unwrap();
        assert_eq!(a.matrix.row_ptr, b.matrix.row_ptr);
        assert_eq!(a.matrix.cols, b.matrix.cols);
        for k in 0..a.matrix.nnz() {
            assert!((a.matrix.re[k] - b.matrix.re[k]).abs() < 1e-12);
            let ai = a.matrix.im.as_ref().unwrap()[k];
            let bi = b.matrix.im.as_ref().unwrap()[k];
            assert!((ai - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn gauge_is_hermitian() {
        let g = small();
        let a = assemble_euclidean_gauge(&g, 7.0);
        assert!(a.matrix.hermitian_defect() < 1e-12);
    }

    #[test]
    fn eigenvector_phase() {
        // a Cayley step multiplies an eigenvector by (1 - i dt l/2)/(1 + i dt l/2)
        let g = small();
        let h = assemble_euclidean(&g);
        let (vals, vecs, _) =
            crate::linalg::smallest_eigenpairs(&h.matrix, 1, 6, 1e-12, 400).unwrap();
        let lam = vals[0];
        let v: Vec<C> = vecs.column(0).iter().map(|&x| C::new(x, 0.0)).collect();
        let psi = WaveField::from_values(&g, v.clone()).unwrap();
        let mut cfg = StepperConfig::new(0.01);
        cfg.solver_tol = 1e-13;
        let out = step(&h, &psi, &cfg).unwrap();
        let f = C::new(1.0, -0.005 * lam) / C::new(1.0, 0.005 * lam);
        let err: f64 = out.values().iter().zip(&v).map(|(a, b)| (a - b * f).norm_sqr()).sum();
        assert!(err.sqrt() < 1e-10);
        assert!((f.norm() - 1.0).abs() < 1e-15);
    }

    fn gaussian(g: &BranchedGrid, x0: f64, y0: f64, ky: f64) -> WaveField {
        let v = (0..g.num_nodes())
            .map(|id| {
                let (k, _, _) = g.unpack(id);
                let (x, y) = g.coords(id);
                if k != 0 {
                    return C::new(0.0, 0.0);
                }
                let r2 = (x - x0).powi(2) + (y - y0).powi(2);
                C::from_polar((-r2).exp(), ky * y)
            })
            .collect();
        WaveField::from_values(g, v).unwrap()
    }

    struct SinSin(f64);

    impl MetricSampler for SinSin {
        fn metric(&self, x: f64, y: f64, _sheet: usize) -> [f64; 3] {
            let fx = self.0 * x.cos() * y.sin();
            let fy = self.0 * x.sin() * y.cos();
            [1.0 + fx * fx, fx * fy, 1.0 + fy * fy]
        }
    }

    #[test]
    fn metric_operator_symmetric_positive() {
        let g = small();
        let h = assemble_metric(&g, &SinSin(0.7), 0.0).unwrap();
        assert!(h.matrix.hermitian_defect() < 1e-12);
        for seed in 0..5u64 {
            let v: Vec<C> = (0..g.num_nodes())
                .map(|i| {
                    let a = ((i as u64 * 2654435761 + seed * 97) % 1000) as f64 / 500.0 - 1.0;
                    let b = ((i as u64 * 40503 + seed * 31) % 1000) as f64 / 500.0 - 1.0;
                    C::new(a, b)
                })
                .collect();
            assert!(h.matrix.quadratic_form(&v) > 0.0);
        }
    }

    #[test]
    fn plane_wave_symbol() {
        let g = small();
        let h = assemble_euclidean(&g);
        let kappa = 1.3;
        let v: Vec<C> = (0..g.num_nodes()).map(|id| C::from_polar(1.0, kappa * g.coords(id).0)).collect();
        let hv = h.matrix.apply(&v);
        let sym = 4.0 / (g.h * g.h) * (0.5 * kappa * g.h).sin().powi(2);
        // interior node away from the cut and boundary
        let id = g.index(0, g.nx / 2, 3);
        assert!((hv[id] - v[id] * sym).norm() < 1e-9);
    }

    #[test]
    fn reversible_and_unitary() {
        let g = small();
        let h = assemble_euclidean(&g);
        let psi0 = gaussian(&g, 0.3, -1.0, 2.0);
        let cfg = StepperConfig::new(0.01);
        let fwd = evolve(&h, &psi0, 0.2, &cfg, 5, |_, _| {}).unwrap();
        assert!(fwd.summary.norm_drift < 1e-9);
        let back = evolve(&h, &fwd.state, -0.2, &cfg, 5, |_, _| {}).unwrap();
        assert!(back.state.distance(&psi0) < 1e-8 * psi0.norm());
        let e0 = h.energy(&psi0);
        assert!((h.energy(&fwd.state) - e0).abs() < 1e-7 * e0);
        assert!(evolve(&h, &psi0, 0.0, &cfg, 1, |_, _| {}).unwrap().state == psi0);
        assert!(evolve(&h, &psi0, 0.015, &cfg, 1, |_, _| {}).is_err());
    }

    #[test]
    fn second_order_in_dt() {
        let g = small();
        let h = assemble_euclidean(&g);
        let psi0 = gaussian(&g, 0.0, 0.0, 0.0);
        let run = |dt: f64| {
            let mut cfg = StepperConfig::new(dt);
            cfg.solver_tol = 1e-13;
            evolve(&h, &psi0, 0.1, &cfg, 1000, |_, _| {}).unwrap().state
        };
        let r = run(0.1 / 64.0);
        let e1 = run(0.1 / 8.0).distance(&r);
        let e2 = run(0.1 / 16.0).distance(&r);
        let ratio = e1 / e2;
        assert!(ratio > 3.5 && ratio < 5.0, "{ratio}");
    }
}
