use branchwave::evolution::StepperConfig;
use branchwave::geometry::{build_grid_rect, check_branch_avoidance, BranchedGrid, CoveringSpec, CutLayout};
use branchwave::metricfield::{Domain, SurfaceFunction};
use branchwave::packets::PacketSpec;
use branchwave::scattering::{check_resolution, gauge_for, same_sheet_min_shift, RunSettings};
use branchwave::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA: &str = "branchwave/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Distance,
    Evolve,
    Transmit,
    SameSheet,
    Smatrix,
    MultiSheet,
    MetricReport,
    InjBounds,
    Spectrum,
    PhaseDecay,
    ConvergenceSweep,
}

impl Kind {
    pub fn evolves(self) -> bool {
        matches!(self, Kind::Evolve | Kind::Transmit | Kind::SameSheet | Kind::Smatrix | Kind::MultiSheet)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(default = "two")]
    pub n_sheets: usize,
    pub h: f64,
    /// Half extent of a square box.
    #[serde(default, rename = "L")]
    pub l: Option<f64>,
    #[serde(default)]
    pub lx: Option<f64>,
    #[serde(default)]
    pub ly: Option<f64>,
    #[serde(default = "segment")]
    pub layout: CutLayout,
}

fn two() -> usize {
    2
}
fn segment() -> CutLayout {
    CutLayout::Segment
}

impl GeometryConfig {
    pub fn extents(&self) -> Result<(f64, f64)> {
        let lx = self.lx.or(self.l);
        let ly = self.ly.or(self.l);
        match (lx, ly) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::Config("geometry needs L or both lx and ly".into())),
        }
    }

    pub fn grid(&self) -> Result<BranchedGrid> {
        let (lx, ly) = self.extents()?;
        let mut g = build_grid_rect(CoveringSpec::new(self.n_sheets)?, lx, ly, self.h)?;
        g.layout = self.layout;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperSection {
    pub dt: f64,
    #[serde(default = "tol")]
    pub tol: f64,
    #[serde(default = "max_iter")]
    pub max_iter: usize,
    #[serde(default = "threshold")]
    pub boundary_threshold: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(default)]
    pub t0: f64,
    #[serde(default = "stride")]
    pub stride: usize,
    #[serde(default)]
    pub duhamel: bool,
    #[serde(default = "pad")]
    pub pad: usize,
    #[serde(default = "r_far")]
    pub r_far: f64,
    #[serde(default = "yes")]
    pub strict_boundary: bool,
}

fn tol() -> f64 {
    1e-10
}
fn max_iter() -> usize {
    2000
}
fn threshold() -> f64 {
    1e-4
}
fn stride() -> usize {
    10
}
fn pad() -> usize {
    2
}
fn r_far() -> f64 {
    branchwave::scattering::R_FAR
}
fn yes() -> bool {
    true
}

impl StepperSection {
    pub fn stepper(&self) -> StepperConfig {
        let mut c = StepperConfig::new(self.dt);
        c.solver_tol = self.tol;
        c.max_iter = self.max_iter;
        c.boundary_threshold = self.boundary_threshold;
        c
    }

    pub fn run(&self, threads: usize) -> RunSettings {
        let mut r = RunSettings::new(self.t_final, self.t0, self.stride);
        r.duhamel = self.duhamel;
        r.pad = self.pad;
        r.r_far = self.r_far;
        r.strict_boundary = self.strict_boundary;
        r.threads = threads.max(1);
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSection {
    #[serde(flatten)]
    pub surface: SurfaceFunction,
    #[serde(default = "rho")]
    pub rho: f64,
    #[serde(default = "gamma")]
    pub gamma: f64,
    #[serde(default = "eps")]
    pub eps: f64,
    /// Half side of the integration square.
    #[serde(default = "radius")]
    pub radius: f64,
    /// Sample points for curvature and injectivity bounds.
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
    /// Use g_f in the evolution experiments.
    #[serde(default)]
    pub evolve: bool,
}

fn rho() -> f64 {
    0.1
}
fn gamma() -> f64 {
    1.0
}
fn eps() -> f64 {
    0.5
}
fn radius() -> f64 {
    8.0
}

impl MetricSection {
    pub fn domain(&self, n_sheets: usize) -> Domain {
        Domain::new(self.radius, n_sheets)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceSection {
    /// Rows (x1, y1, sheet1, x2, y2, sheet2).
    pub pairs: Vec<[f64; 6]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    #[serde(default = "h_values")]
    pub h_values: Vec<f64>,
    #[serde(default = "count")]
    pub count: usize,
}

fn h_values() -> Vec<f64> {
    vec![1.0 / 16.0, 1.0 / 32.0]
}
fn count() -> usize {
    9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySection {
    #[serde(default = "s_values")]
    pub s_values: Vec<f64>,
    /// Lattice spacing of the source quadrature.
    #[serde(default = "hq")]
    pub hq: f64,
    #[serde(default = "decades")]
    pub decades: f64,
    #[serde(default = "samples")]
    pub samples: usize,
}

fn s_values() -> Vec<f64> {
    vec![4.0, 8.0, 16.0]
}
fn hq() -> f64 {
    1.0 / 16.0
}
fn decades() -> f64 {
    1.5
}
fn samples() -> usize {
    12
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default)]
    pub prefix: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub schema: Option<String>,
    pub experiment: Kind,
    #[serde(default)]
    pub geometry: Option<GeometryConfig>,
    #[serde(default)]
    pub packet: Option<PacketSpec>,
    #[serde(default)]
    pub stepper: Option<StepperSection>,
    #[serde(default)]
    pub metric: Option<MetricSection>,
    /// Sheet carrying the incoming half of the packet.
    #[serde(default)]
    pub launch: usize,
    #[serde(default)]
    pub distance: Option<DistanceSection>,
    #[serde(default)]
    pub spectrum: Option<SpectrumSection>,
    #[serde(default)]
    pub decay: Option<DecaySection>,
    #[serde(default)]
    pub output: OutputSection,
}

fn need<'a, T>(v: &'a Option<T>, what: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Error::Config(format!("missing section '{what}'")))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn geometry(&self) -> Result<&GeometryConfig> {
        need(&self.geometry, "geometry")
    }
    pub fn packet(&self) -> Result<&PacketSpec> {
        need(&self.packet, "packet")
    }
    pub fn stepper(&self) -> Result<&StepperSection> {
        need(&self.stepper, "stepper")
    }
    pub fn metric(&self) -> Result<&MetricSection> {
        need(&self.metric, "metric")
    }

    /// Rejects the config with the violated clause named.
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = &self.schema {
            if s != SCHEMA {
                return Err(Error::Config(format!("schema '{s}' is not {SCHEMA}")));
            }
        }
        if let Some(g) = &self.geometry {
            if !(g.h > 0.0) {
                return Err(Error::InvalidParameter(format!("spacing h = {} must be positive", g.h)));
            }
            check_branch_avoidance(g.h)?;
            g.grid()?;
        }
        if let Some(p) = &self.packet {
            p.validate()?;
        }
        match self.experiment {
            Kind::Distance => {
                need(&self.distance, "distance")?;
            }
            Kind::MetricReport | Kind::InjBounds => {
                self.metric()?;
            }
            Kind::PhaseDecay => {
                self.packet()?;
            }
            Kind::Spectrum | Kind::ConvergenceSweep => {
                let s = need(&self.spectrum, "spectrum")?;
                if s.h_values.is_empty() || s.count == 0 {
                    return Err(Error::Config("spectrum needs h_values and count > 0".into()));
                }
            }
            k if k.evolves() => {
                let g = self.geometry()?;
                let p = self.packet()?;
                let st = self.stepper()?;
                if st.stride == 0 {
                    return Err(Error::InvalidParameter("stride must be at least 1".into()));
                }
                let ratio = st.t_final / st.dt;
                if !(st.dt > 0.0) || (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "T = {} is not a positive multiple of dt = {}",
                        st.t_final, st.dt
                    )));
                }
                check_resolution(p, g.h, st.dt, gauge_for(p))?;
                if self.launch >= g.n_sheets {
                    return Err(Error::InvalidParameter(format!("launch sheet {} out of range", self.launch)));
                }
                if k == Kind::SameSheet && p.k.abs() < same_sheet_min_shift() {
                    return Err(Error::CutOverlap(p.k.abs(), same_sheet_min_shift()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}
