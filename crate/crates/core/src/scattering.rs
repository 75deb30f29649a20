//! Channel experiments on the cover: sheet masses, finite-time wave operators,
//! transmission runs and far-field surveys.

use crate::error::{Error, Result};
use crate::evolution::{evolve, margin_mass, DiscreteHamiltonian, StepperConfig};
use crate::field::{PlanarField, WaveField};
use crate::freeprop::{FreePropagator, Spectrum};
use crate::geometry::BranchedGrid;
use crate::packets::{
    build_cutoff, lift_to_cover, lift_to_sheet, source_term, truncated_packet, CutoffField, Packet,
    PacketSpec, MOLLIFIER_RADIUS,
};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

type C = Complex64;

/// Default far-field radius.
pub const R_FAR: f64 = 4.0;
/// Extra clearance between a shifted cutoff support and the cut.
pub const SUPPORT_MARGIN: f64 = 0.25;

/// Per-sheet masses, total and restricted to planar radius > r_far.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelMasses {
    pub total: Vec<f64>,
    pub far: Vec<f64>,
}

pub fn channel_masses(grid: &BranchedGrid, psi: &WaveField, r_far: f64) -> ChannelMasses {
    let n = grid.nodes_per_sheet();
    let h2 = grid.h * grid.h;
    let mut total = vec![0.0; grid.num_sheets()];
    let mut far = vec![0.0; grid.num_sheets()];
    for k in 0..grid.num_sheets() {
        let vals = psi.sheet(k);
        let mut t = 0.0;
        let mut f = 0.0;
        for (id, z) in vals.iter().enumerate().take(n) {
            let m = z.norm_sqr();
            t += m;
            let (x, y) = grid.coords(id);
            if x.hypot(y) > r_far {
                f += m;
            }
        }
        total[k] = t * h2;
        far[k] = f * h2;
    }
    ChannelMasses { total, far }
}

/// Time series of sheet masses and the boundary-margin mass.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ChannelMassSeries {
    pub times: Vec<f64>,
    pub masses: Vec<Vec<f64>>,
    pub far: Vec<Vec<f64>>,
    pub boundary: Vec<f64>,
}

impl ChannelMassSeries {
    pub fn push(&mut self, t: f64, grid: &BranchedGrid, psi: &WaveField, r_far: f64) {
        let m = channel_masses(grid, psi, r_far);
        self.times.push(t);
        self.masses.push(m.total);
        self.far.push(m.far);
        self.boundary.push(margin_mass(grid, psi, 0.05));
    }

    /// Columns t, sheet{k}_mass, far{k}, boundary.
    pub fn csv(&self) -> String {
        let n = self.masses.first().map_or(0, |m| m.len());
        let mut out = String::from("t");
        for k in 0..n {
            out.push_str(&format!(",sheet{k}_mass"));
        }
        for k in 0..n {
            out.push_str(&format!(",far{k}"));
        }
        out.push_str(",boundary\n");
        for (r, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t}"));
            for v in self.masses[r].iter().chain(&self.far[r]) {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{}\n", self.boundary[r]));
        }
        out
    }
}

/// Gauge momentum used for a packet: the centre of its y-momentum band.
pub fn gauge_for(spec: &PacketSpec) -> f64 {
    spec.s + 0.5
}

/// The resolution rule, applied to the envelope e^{-iGy} psi: its momentum support
/// must sit within half the Nyquist band and dt <= h / (4(s+1)).
pub fn check_resolution(spec: &PacketSpec, h: f64, dt: f64, gauge: f64) -> Result<()> {
    let envelope = spec.a + (spec.s + 0.5 - gauge).abs() + 0.5;
    let band = 0.5 * PI / h;
    if envelope > band {
        return Err(Error::ResolutionViolation(format!(
            "envelope momentum a + |s + 1/2 - G| + 1/2 = {envelope} exceeds pi/(2h) = {band}"
        )));
    }
    let dt_max = h / (4.0 * (spec.s + 1.0));
    if dt > dt_max * (1.0 + 1e-12) {
        return Err(Error::ResolutionViolation(format!("dt = {dt} exceeds h/(4(s+1)) = {dt_max}")));
    }
    Ok(())
}

/// Settings shared by the channel experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    /// Final time T of each direction.
    pub t_final: f64,
    /// Residuals are sampled for |t| >= t0.
    pub t0: f64,
    /// Observer stride in steps; also the Duhamel time step.
    pub stride: usize,
    #[serde(default = "default_r_far")]
    pub r_far: f64,
    /// Zero padding factor of the free propagator box.
    #[serde(default = "default_pad")]
    pub pad: usize,
    #[serde(default)]
    pub duhamel: bool,
    /// Turn boundary contamination into an error.
    #[serde(default = "default_true")]
    pub strict_boundary: bool,
    #[serde(default = "default_threads")]
    pub threads: usize,
}

fn default_r_far() -> f64 {
    R_FAR
}
fn default_pad() -> usize {
    2
}
fn default_true() -> bool {
    true
}
fn default_threads() -> usize {
    1
}

impl RunSettings {
    pub fn new(t_final: f64, t0: f64, stride: usize) -> Self {
        RunSettings {
            t_final,
            t0,
            stride,
            r_far: R_FAR,
            pad: 2,
            duhamel: false,
            strict_boundary: true,
            threads: 1,
        }
    }
}

/// Truncated packet v0 = chi u0 on a grid together with its exact free evolution.
pub struct Scene {
    pub packet: Packet,
    pub cutoff: CutoffField,
    /// v0 in the gauge.
    pub v0: PlanarField,
    pub gauge: f64,
    prop: FreePropagator,
    spec0: Spectrum,
}

impl Scene {
    pub fn new(grid: &BranchedGrid, spec: PacketSpec, gauge: f64, pad: usize) -> Result<Self> {
        let packet = Packet::new(spec)?;
        let xs = grid.xs();
        let ys = grid.ys();
        let cutoff = build_cutoff(&xs, &ys, spec.k)?;
        let v0 = truncated_packet(&packet, &cutoff, 0.0, gauge)?;
        let prop = FreePropagator::new(grid.nx, grid.ny, grid.h, pad, gauge);
        let spec0 = prop.spectrum(&v0.values);
        Ok(Scene { packet, cutoff, v0, gauge, prop, spec0 })
    }

    pub fn propagator(&self) -> &FreePropagator {
        &self.prop
    }

    fn planar(&self, values: Vec<C>) -> PlanarField {
        PlanarField { xs: self.v0.xs.clone(), ys: self.v0.ys.clone(), values }
    }

    /// Samples of e^{-itA0} v0.
    pub fn free(&self, t: f64) -> PlanarField {
        self.planar(self.prop.evaluate(&self.spec0, t))
    }

    /// e^{-itA0} v0 rebuilt as chi u(t) - int_0^t e^{-i(t-tau)A0} f(tau) dtau with the
    /// trapezoidal rule in tau; `times` share one sign and lie on multiples of dtau.
    pub fn duhamel(&self, times: &[f64], dtau: f64) -> Result<Vec<PlanarField>> {
        if times.is_empty() {
            return Ok(Vec::new());
        }
        if !(dtau > 0.0) {
            return Err(Error::InvalidParameter(format!("dtau = {dtau} must be positive")));
        }
        let sign = if times.iter().any(|&t| t < 0.0) { -1.0 } else { 1.0 };
        let mut steps = Vec::with_capacity(times.len());
        for &t in times {
            if t * sign < 0.0 {
                return Err(Error::InvalidParameter("Duhamel times must share one sign".into()));
            }
            let r = t.abs() / dtau;
            if (r - r.round()).abs() > 1e-6 * r.max(1.0) {
                return Err(Error::InvalidParameter(format!("t = {t} is not a multiple of {dtau}")));
            }
            steps.push(r.round() as usize);
        }
        let last = *steps.iter().max().unwrap();
        let integrand = |tau: f64| -> Result<Spectrum> {
            let f = source_term(&self.packet, &self.cutoff, tau, self.gauge)?;
            let mut sp = self.prop.spectrum(&f.field.values);
            self.prop.phase_shift(&mut sp, tau);
            Ok(sp)
        };
        let mut out: Vec<Option<PlanarField>> = vec![None; times.len()];
        let mut acc = self.prop.zero_spectrum();
        let mut prev = integrand(0.0)?;
        let w = C::new(0.5 * sign * dtau, 0.0);
        for m in 0..=last {
            let tau = sign * m as f64 * dtau;
            if m > 0 {
                let cur = integrand(tau)?;
                FreePropagator::add_scaled(&mut acc, &prev, w);
                FreePropagator::add_scaled(&mut acc, &cur, w);
                prev = cur;
            }
            for (slot, _) in steps.iter().enumerate().filter(|(_, &s)| s == m) {
                let cu = truncated_packet(&self.packet, &self.cutoff, tau, self.gauge)?;
                let corr = self.prop.evaluate(&acc, tau);
                let vals = cu.values.iter().zip(&corr).map(|(a, b)| a - b).collect();
                out[slot] = Some(self.planar(vals));
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every time visited")).collect())
    }
}

fn planar_distance(a: &PlanarField, b: &PlanarField) -> f64 {
    a.values.iter().zip(&b.values).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
        * crate::field::spacing(&a.xs)
}

/// One direction of a channel run.
#[derive(Debug, Clone, Serialize)]
pub struct DirectionReport {
    /// Sheet the free reference is injected on.
    pub reference_sheet: usize,
    pub times: Vec<f64>,
    /// ||psi(t) - J e^{-itA0} v0|| / ||w0|| at the sampled times.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    /// Sheet masses at the final time over ||w0||^2.
    pub mass_fractions: Vec<f64>,
    /// Far-field sheet masses at the final time over ||w0||^2.
    pub far_fractions: Vec<f64>,
    /// Sheet norms at the final time over ||w0||.
    pub norm_fractions: Vec<f64>,
    /// max_t ||FFT reference - Duhamel reference|| / ||v0||, when computed.
    pub duhamel_discrepancy: Option<f64>,
    pub norm_drift: f64,
    pub max_boundary_mass: f64,
    pub contaminated: bool,
    pub solver_iterations: usize,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub series: ChannelMassSeries,
}

fn run_direction(
    ham: &DiscreteHamiltonian,
    scene: &Scene,
    w0: &WaveField,
    sheet: usize,
    sign: f64,
    cfg: &StepperConfig,
    run: &RunSettings,
) -> Result<DirectionReport> {
    let grid = &ham.grid;
    let phi0 = ham.to_flat(w0);
    let norm0 = w0.norm();
    let mut series = ChannelMassSeries::default();
    let mut times = Vec::new();
    let mut residuals = Vec::new();
    let window = run.t0.abs() - 1e-9 * run.t_final.abs();
    let mut failure = None;
    let out = evolve(ham, &phi0, sign * run.t_final, cfg, run.stride, |t, psi| {
        series.push(t, grid, psi, run.r_far);
        if t.abs() < window || failure.is_some() {
            return;
        }
        let reference = scene.free(t);
        match lift_to_sheet(&reference, grid, sheet) {
            Ok(r) => {
                times.push(t);
                residuals.push(psi.distance(&ham.to_flat(&r)) / norm0);
            }
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let summary = out.summary;
    if summary.contaminated && run.strict_boundary {
        return Err(Error::BoundaryContamination(summary.max_boundary_mass, cfg.boundary_threshold));
    }
    let m = channel_masses(grid, &out.state, run.r_far);
    let n2 = norm0 * norm0;
    let duhamel_discrepancy = if run.duhamel { duhamel_check(scene, &times, run.stride as f64 * cfg.dt)? } else { None };
    Ok(DirectionReport {
        reference_sheet: sheet,
        max_residual: residuals.iter().cloned().fold(0.0, f64::max),
        times,
        residuals,
        mass_fractions: m.total.iter().map(|v| v / n2).collect(),
        far_fractions: m.far.iter().map(|v| v / n2).collect(),
        norm_fractions: m.total.iter().map(|v| (v / n2).sqrt()).collect(),
        duhamel_discrepancy,
        norm_drift: summary.norm_drift,
        max_boundary_mass: summary.max_boundary_mass,
        contaminated: summary.contaminated,
        solver_iterations: summary.total_iterations,
        warnings: summary.warnings,
        series,
    })
}

/// Largest relative gap between the FFT and Duhamel references over the sampled
/// times lying on the Duhamel grid.
fn duhamel_check(scene: &Scene, times: &[f64], dtau: f64) -> Result<Option<f64>> {
    let on_grid: Vec<f64> = times
        .iter()
        .cloned()
        .filter(|t| {
            let r = t.abs() / dtau;
            (r - r.round()).abs() < 1e-6 * r.max(1.0)
        })
        .collect();
    if on_grid.is_empty() {
        return Ok(None);
    }
    let rebuilt = scene.duhamel(&on_grid, dtau)?;
    let nv = scene.v0.norm();
    Ok(Some(
        on_grid
            .iter()
            .zip(&rebuilt)
            .map(|(&t, d)| planar_distance(&scene.free(t), d) / nv)
            .fold(0.0, f64::max),
    ))
}

/// Forward and backward channel runs of one truncated packet.
#[derive(Debug, Clone, Serialize)]
pub struct TransmissionReport {
    pub spec: PacketSpec,
    pub gauge: f64,
    pub h: f64,
    pub dt: f64,
    pub t0: f64,
    pub t_final: f64,
    /// Sheet carrying the lower half of the lifted packet.
    pub launch: usize,
    /// Sheet the forward reference is injected on.
    pub target: usize,
    pub norm_v0: f64,
    /// Sheet masses of w0 over ||w0||^2.
    pub initial_fractions: Vec<f64>,
    pub forward: DirectionReport,
    pub backward: DirectionReport,
}

/// Approximations of ||P_{+-,sheet} w0|| / ||w0||.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectionMasses {
    pub forward_upper: f64,
    pub forward_lower: f64,
    pub backward_upper: f64,
    pub backward_lower: f64,
}

impl TransmissionReport {
    pub fn projections(&self) -> ProjectionMasses {
        let (up, low) = (self.target, self.launch);
        ProjectionMasses {
            forward_upper: self.forward.norm_fractions[up],
            forward_lower: self.forward.norm_fractions[low],
            backward_upper: self.backward.norm_fractions[up],
            backward_lower: self.backward.norm_fractions[low],
        }
    }
}

fn check_run(ham: &DiscreteHamiltonian, spec: &PacketSpec, cfg: &StepperConfig, run: &RunSettings) -> Result<()> {
    check_resolution(spec, ham.grid.h, cfg.dt, ham.gauge)?;
    if !(run.t_final >= 0.0) || !(run.t0 >= 0.0) || run.t0 > run.t_final {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= t0 = {} <= T = {}",
            run.t0, run.t_final
        )));
    }
    Ok(())
}

/// Lifts v0 = chi u0 across the cut (lower half on `launch`) and compares the
/// forward evolution with the free packet on the monodromy image of `launch`, the
/// backward one with the free packet on `launch`.
pub fn transmission_experiment(
    ham: &DiscreteHamiltonian,
    spec: PacketSpec,
    cfg: &StepperConfig,
    run: &RunSettings,
    launch: usize,
) -> Result<TransmissionReport> {
    check_run(ham, &spec, cfg, run)?;
    let grid = &ham.grid;
    if launch >= grid.num_sheets() {
        return Err(Error::InvalidParameter(format!("launch sheet {launch} out of range")));
    }
    let scene = Scene::new(grid, spec, ham.gauge, run.pad)?;
    let w0 = lift_to_cover(&scene.v0, grid, launch)?;
    let target = grid.spec.monodromy(launch);
    channel_report(ham, &scene, &w0, launch, target, launch, cfg, run)
}

#[allow(clippy::too_many_arguments)]
fn channel_report(
    ham: &DiscreteHamiltonian,
    scene: &Scene,
    w0: &WaveField,
    launch: usize,
    target: usize,
    back: usize,
    cfg: &StepperConfig,
    run: &RunSettings,
) -> Result<TransmissionReport> {
    let grid = &ham.grid;
    let n2 = w0.norm_sq();
    let initial = channel_masses(grid, w0, run.r_far);
    let forward = run_direction(ham, scene, w0, target, 1.0, cfg, run)?;
    let backward = run_direction(ham, scene, w0, back, -1.0, cfg, run)?;
    Ok(TransmissionReport {
        spec: scene.packet.spec,
        gauge: ham.gauge,
        h: grid.h,
        dt: cfg.dt,
        t0: run.t0,
        t_final: run.t_final,
        launch,
        target,
        norm_v0: scene.v0.norm(),
        initial_fractions: initial.total.iter().map(|m| m / n2).collect(),
        forward,
        backward,
    })
}

/// Minimum |k| keeping the shifted cutoff support off the cut.
pub fn same_sheet_min_shift() -> f64 {
    1.0 + 0.5 + MOLLIFIER_RADIUS + SUPPORT_MARGIN
}

/// Shifted packet embedded entirely in `sheet`; both directions are compared with the
/// free packet on that sheet.
pub fn same_sheet_experiment(
    ham: &DiscreteHamiltonian,
    spec: PacketSpec,
    cfg: &StepperConfig,
    run: &RunSettings,
    sheet: usize,
) -> Result<TransmissionReport> {
    let need = same_sheet_min_shift();
    if spec.k.abs() < need {
        return Err(Error::CutOverlap(spec.k.abs(), need));
    }
    check_run(ham, &spec, cfg, run)?;
    let grid = &ham.grid;
    if sheet >= grid.num_sheets() {
        return Err(Error::InvalidParameter(format!("sheet {sheet} out of range")));
    }
    let scene = Scene::new(grid, spec, ham.gauge, run.pad)?;
    let w0 = lift_to_sheet(&scene.v0, grid, sheet)?;
    channel_report(ham, &scene, &w0, sheet, sheet, sheet, cfg, run)
}

/// Far-field mass on `sheet` over the far-field mass on all sheets.
pub fn capture_fraction(dir: &DirectionReport, sheet: usize) -> f64 {
    let total: f64 = dir.far_fractions.iter().sum();
    if total > 0.0 {
        dir.far_fractions[sheet] / total
    } else {
        0.0
    }
}

/// e^{-iTH} J_channel e^{iTA0} v0: the finite-time approximant of W_- v0 (physical
/// nodal values).
pub fn approx_wave_operator_minus(
    ham: &DiscreteHamiltonian,
    prop: &FreePropagator,
    v0: &PlanarField,
    channel: usize,
    t: f64,
    cfg: &StepperConfig,
) -> Result<(WaveField, crate::evolution::EvolveSummary)> {
    let grid = &ham.grid;
    let incoming = PlanarField { xs: v0.xs.clone(), ys: v0.ys.clone(), values: prop.propagate(&v0.values, -t) };
    let w = ham.to_flat(&lift_to_sheet(&incoming, grid, channel)?);
    let out = evolve(ham, &w, t, cfg, usize::MAX, |_, _| {})?;
    Ok((ham.from_flat(&out.state), out.summary))
}

/// Finite-time realization of <S_ij v0, v0>.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SEntry {
    pub to: usize,
    pub from: usize,
    pub t: f64,
    /// <e^{-2iTH} J_j e^{iTA0} v0, J_i e^{-iTA0} v0>.
    pub raw: C,
    /// raw / ||v0||^2.
    pub overlap: C,
    /// |overlap - 1|.
    pub defect: f64,
    pub norm_drift: f64,
    pub contaminated: bool,
}

pub fn s_entry_estimate(
    ham: &DiscreteHamiltonian,
    prop: &FreePropagator,
    v0: &PlanarField,
    to: usize,
    from: usize,
    t: f64,
    cfg: &StepperConfig,
) -> Result<SEntry> {
    let grid = &ham.grid;
    let incoming = PlanarField { xs: v0.xs.clone(), ys: v0.ys.clone(), values: prop.propagate(&v0.values, -t) };
    let w = ham.to_flat(&lift_to_sheet(&incoming, grid, from)?);
    let out = evolve(ham, &w, 2.0 * t, cfg, usize::MAX, |_, _| {})?;
    let outgoing = PlanarField { xs: v0.xs.clone(), ys: v0.ys.clone(), values: prop.propagate(&v0.values, t) };
    let reference = ham.to_flat(&lift_to_sheet(&outgoing, grid, to)?);
    let raw = reference.inner(&out.state.restrict_to_sheet(to));
    let overlap = raw / v0.norm_sq();
    Ok(SEntry {
        to,
        from,
        t,
        raw,
        overlap,
        defect: (overlap - 1.0).norm(),
        norm_drift: out.summary.norm_drift,
        contaminated: out.summary.contaminated,
    })
}

/// Sheet norms of e^{-+iTH} w0 over ||w0||, forward then backward.
pub fn projection_masses(
    ham: &DiscreteHamiltonian,
    w0: &WaveField,
    t: f64,
    cfg: &StepperConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let phi = ham.to_flat(w0);
    let n2 = phi.norm_sq();
    let mut res = Vec::new();
    for sign in [1.0, -1.0] {
        let out = evolve(ham, &phi, sign * t, cfg, usize::MAX, |_, _| {})?;
        res.push((0..ham.grid.num_sheets()).map(|k| (out.state.sheet_mass(k) / n2).sqrt()).collect());
    }
    let backward = res.pop().unwrap();
    let forward = res.pop().unwrap();
    Ok((forward, backward))
}

/// Row `k` holds the sheet masses at time T of the packet launched with its lower
/// half on sheet k.
#[derive(Debug, Clone, Serialize)]
pub struct SurveyReport {
    pub n_sheets: usize,
    pub spec: PacketSpec,
    pub t_final: f64,
    pub norm_sq: f64,
    pub mass: Vec<Vec<f64>>,
    pub far: Vec<Vec<f64>>,
    /// far over the squared norm of the launched state.
    pub far_fractions: Vec<Vec<f64>>,
    /// max_k |sum_j mass[k][j] - ||psi_k(T)||^2|.
    pub row_sum_defect: f64,
    pub norm_drift: f64,
    pub contaminated: bool,
}

fn survey_row(
    ham: &DiscreteHamiltonian,
    scene: &Scene,
    launch: usize,
    cfg: &StepperConfig,
    run: &RunSettings,
) -> Result<(ChannelMasses, f64, f64, f64, bool)> {
    let w0 = ham.to_flat(&lift_to_cover(&scene.v0, &ham.grid, launch)?);
    let out = evolve(ham, &w0, run.t_final, cfg, run.stride, |_, _| {})?;
    if out.summary.contaminated && run.strict_boundary {
        return Err(Error::BoundaryContamination(out.summary.max_boundary_mass, cfg.boundary_threshold));
    }
    let m = channel_masses(&ham.grid, &out.state, run.r_far);
    let defect = (m.total.iter().sum::<f64>() - out.state.norm_sq()).abs();
    Ok((m, w0.norm_sq(), defect, out.summary.norm_drift, out.summary.contaminated))
}

/// Far-field transmission survey over every launch sheet.
pub fn multi_sheet_survey(
    ham: &DiscreteHamiltonian,
    spec: PacketSpec,
    cfg: &StepperConfig,
    run: &RunSettings,
) -> Result<SurveyReport> {
    check_run(ham, &spec, cfg, run)?;
    let n = ham.grid.num_sheets();
    let scene = Scene::new(&ham.grid, spec, ham.gauge, run.pad)?;
    let rows: Vec<Result<_>> = if run.threads > 1 {
        let scene = &scene;
        let mut slots: Vec<Option<Result<_>>> = (0..n).map(|_| None).collect();
        for chunk in (0..n).collect::<Vec<_>>().chunks(run.threads) {
            let done: Vec<_> = std::thread::scope(|sc| {
                let handles: Vec<_> =
                    chunk.iter().map(|&k| sc.spawn(move || (k, survey_row(ham, scene, k, cfg, run)))).collect();
                handles.into_iter().map(|h| h.join().expect("survey worker")).collect()
            });
            for (k, r) in done {
                slots[k] = Some(r);
            }
        }
        slots.into_iter().map(|s| s.unwrap()).collect()
    } else {
        (0..n).map(|k| survey_row(ham, &scene, k, cfg, run)).collect()
    };
    let norm_sq = scene.v0.norm_sq();
    let mut report = SurveyReport {
        n_sheets: n,
        spec,
        t_final: run.t_final,
        norm_sq,
        mass: Vec::new(),
        far: Vec::new(),
        far_fractions: Vec::new(),
        row_sum_defect: 0.0,
        norm_drift: 0.0,
        contaminated: false,
    };
    for r in rows {
        let (m, n0, defect, drift, cont) = r?;
        report.far_fractions.push(m.far.iter().map(|v| v / n0).collect());
        report.mass.push(m.total);
        report.far.push(m.far);
        report.row_sum_defect = report.row_sum_defect.max(defect);
        report.norm_drift = report.norm_drift.max(drift);
        report.contaminated |= cont;
    }
    Ok(report)
}
