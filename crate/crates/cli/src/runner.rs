use crate::config::{ExperimentConfig, Kind, SCHEMA};
use branchwave::evolution::{assemble_euclidean_gauge, assemble_metric, evolve, DiscreteHamiltonian};
use branchwave::geometry::{geodesic_distance_route, BranchedGrid, CoveringSpec, SheetPoint};
use branchwave::metricfield::{
    curvature_of, dtilde, inj_bound_covering, inj_bound_global, inj_bound_local, inj_bound_punctured, membership,
};
use branchwave::packets::{check_localization, lift_to_cover, Packet};
use branchwave::scattering::{
    capture_fraction, gauge_for, multi_sheet_survey, s_entry_estimate, same_sheet_experiment,
    transmission_experiment, ChannelMassSeries, Scene,
};
use branchwave::spectral::{
    branched_disc_eigenvalues, cluster_levels, disc_reference_levels, fit_times, localization_error_decay,
    stationary_phase_pointwise, tail_mass_decay,
};
use branchwave::{Error, Result};
use serde_json::{json, Value};

/// Summary JSON plus named CSV artifacts.
pub struct Outcome {
    pub summary: Value,
    pub artifacts: Vec<(String, String)>,
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable report")
}

fn hamiltonian(cfg: &ExperimentConfig, grid: &BranchedGrid, gauge: f64) -> Result<DiscreteHamiltonian> {
    match &cfg.metric {
        Some(m) if m.evolve => assemble_metric(grid, &m.surface, gauge),
        _ => Ok(assemble_euclidean_gauge(grid, gauge)),
    }
}

pub fn run(cfg: &ExperimentConfig, threads: usize) -> Result<Outcome> {
    cfg.validate()?;
    let (mut summary, artifacts) = match cfg.experiment {
        Kind::Distance => distance(cfg)?,
        Kind::Evolve => evolve_run(cfg)?,
        Kind::Transmit | Kind::SameSheet => transmit(cfg)?,
        Kind::Smatrix => smatrix(cfg)?,
        Kind::MultiSheet => survey(cfg, threads)?,
        Kind::MetricReport => metric_report(cfg)?,
        Kind::InjBounds => inj_bounds(cfg)?,
        Kind::Spectrum | Kind::ConvergenceSweep => spectrum(cfg)?,
        Kind::PhaseDecay => phase_decay(cfg)?,
    };
    let obj = summary.as_object_mut().expect("object summary");
    obj.insert("schema".into(), json!(SCHEMA));
    obj.insert("experiment".into(), to_value(&cfg.experiment));
    obj.insert("config".into(), to_value(cfg));
    Ok(Outcome { summary, artifacts })
}

type Parts = (Value, Vec<(String, String)>);

fn distance(cfg: &ExperimentConfig) -> Result<Parts> {
    let n = cfg.geometry.as_ref().map_or(2, |g| g.n_sheets);
    let spec = CoveringSpec::new(n)?;
    let mut rows = Vec::new();
    let mut csv = String::from("x1,y1,sheet1,x2,y2,sheet2,distance,route\n");
    for p in &cfg.distance.as_ref().expect("validated").pairs {
        let sheet = |v: f64| -> Result<usize> {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::InvalidPoint(format!("sheet index {v}")));
            }
            Ok(v as usize)
        };
        let a = SheetPoint::new(p[0], p[1], sheet(p[2])?, &spec)?;
        let b = SheetPoint::new(p[3], p[4], sheet(p[5])?, &spec)?;
        let (d, route) = geodesic_distance_route(&a, &b, &spec);
        csv.push_str(&format!("{},{},{},{},{},{},{d},{route:?}\n", p[0], p[1], p[2], p[3], p[4], p[5]));
        rows.push(json!({"p1": [p[0], p[1], p[2]], "p2": [p[3], p[4], p[5]], "distance": d, "route": route}));
    }
    Ok((
        json!({"pairs": rows, "units": {"distance": "length in the flat metric of the cover"}}),
        vec![("distances.csv".into(), csv)],
    ))
}

fn evolve_run(cfg: &ExperimentConfig) -> Result<Parts> {
    let grid = cfg.geometry()?.grid()?;
    let spec = *cfg.packet()?;
    let st = cfg.stepper()?;
    let ham = hamiltonian(cfg, &grid, gauge_for(&spec))?;
    let scene = Scene::new(&grid, spec, ham.gauge, st.pad)?;
    let w0 = ham.to_flat(&lift_to_cover(&scene.v0, &grid, cfg.launch)?);
    let e0 = ham.energy(&w0);
    let mut series = ChannelMassSeries::default();
    let out = evolve(&ham, &w0, st.t_final, &st.stepper(), st.stride, |t, psi| {
        series.push(t, &grid, psi, st.r_far)
    })?;
    if out.summary.contaminated && st.strict_boundary {
        return Err(Error::BoundaryContamination(out.summary.max_boundary_mass, st.boundary_threshold));
    }
    let e1 = ham.energy(&out.state);
    let last = series.masses.last().cloned().unwrap_or_default();
    Ok((
        json!({
            "norm_sq_initial": w0.norm_sq(),
            "norm_sq_final": out.state.norm_sq(),
            "norm_drift": out.summary.norm_drift,
            "energy_initial": e0,
            "energy_final": e1,
            "final_sheet_masses": last,
            "max_boundary_mass": out.summary.max_boundary_mass,
            "contaminated": out.summary.contaminated,
            "steps": out.summary.steps,
            "solver_iterations": out.summary.total_iterations,
            "warnings": out.summary.warnings,
            "units": {
                "norm_sq_*": "h^2-weighted squared l2 norm (flat inner product)",
                "norm_drift": "relative change of the squared norm",
                "energy_*": "<H psi, psi> of the gauge operator, G^2 omitted",
                "final_sheet_masses": "squared norm per sheet"
            }
        }),
        vec![("masses.csv".into(), series.csv())],
    ))
}

fn transmit(cfg: &ExperimentConfig) -> Result<Parts> {
    let grid = cfg.geometry()?.grid()?;
    let spec = *cfg.packet()?;
    let st = cfg.stepper()?;
    let ham = hamiltonian(cfg, &grid, gauge_for(&spec))?;
    let run = st.run(1);
    let rep = if cfg.experiment == Kind::SameSheet {
        same_sheet_experiment(&ham, spec, &st.stepper(), &run, cfg.launch)?
    } else {
        transmission_experiment(&ham, spec, &st.stepper(), &run, cfg.launch)?
    };
    let loc = check_localization(spec.a, spec.eps_prime())?;
    let mut v = to_value(&rep);
    let o = v.as_object_mut().expect("object");
    o.insert("projections".into(), to_value(&rep.projections()));
    o.insert("localization".into(), to_value(&loc));
    o.insert("forward_capture".into(), json!(capture_fraction(&rep.forward, rep.target)));
    o.insert("backward_capture".into(), json!(capture_fraction(&rep.backward, rep.launch)));
    o.insert(
        "units".into(),
        json!({
            "residuals": "||psi(t) - J e^{-itA0} v0|| / ||w0||",
            "mass_fractions": "sheet mass over ||w0||^2 at the final time",
            "far_fractions": "sheet mass beyond r_far over ||w0||^2",
            "norm_fractions": "sheet norm over ||w0||",
            "*_capture": "far-field mass on the reference sheet over all far-field mass",
            "duhamel_discrepancy": "max_t ||FFT reference - Duhamel reference|| / ||v0||",
            "localization": "norm and mass of psi_1 on (-1/4, 1/4)"
        }),
    );
    Ok((
        v,
        vec![
            ("forward_masses.csv".into(), rep.forward.series.csv()),
            ("backward_masses.csv".into(), rep.backward.series.csv()),
        ],
    ))
}

fn smatrix(cfg: &ExperimentConfig) -> Result<Parts> {
    let grid = cfg.geometry()?.grid()?;
    let spec = *cfg.packet()?;
    let st = cfg.stepper()?;
    let ham = hamiltonian(cfg, &grid, gauge_for(&spec))?;
    let scene = Scene::new(&grid, spec, ham.gauge, st.pad)?;
    let n = grid.num_sheets();
    let mut entries = Vec::new();
    let mut csv = String::from("to,from,re,im,defect\n");
    for from in 0..n {
        for to in 0..n {
            let e = s_entry_estimate(&ham, scene.propagator(), &scene.v0, to, from, st.t_final, &st.stepper())?;
            if e.contaminated && st.strict_boundary {
                return Err(Error::BoundaryContamination(f64::NAN, st.boundary_threshold));
            }
            csv.push_str(&format!("{to},{from},{},{},{}\n", e.overlap.re, e.overlap.im, e.defect));
            entries.push(to_value(&e));
        }
    }
    Ok((
        json!({
            "entries": entries,
            "units": {"overlap": "<S_ij v0, v0> / ||v0||^2 at finite T", "defect": "|overlap - 1|"}
        }),
        vec![("smatrix.csv".into(), csv)],
    ))
}

fn survey(cfg: &ExperimentConfig, threads: usize) -> Result<Parts> {
    let grid = cfg.geometry()?.grid()?;
    let spec = *cfg.packet()?;
    let st = cfg.stepper()?;
    let ham = hamiltonian(cfg, &grid, gauge_for(&spec))?;
    let rep = multi_sheet_survey(&ham, spec, &st.stepper(), &st.run(threads))?;
    let mut csv = String::from("launch");
    for k in 0..rep.n_sheets {
        csv.push_str(&format!(",far{k}"));
    }
    csv.push('\n');
    for (k, row) in rep.far_fractions.iter().enumerate() {
        csv.push_str(&k.to_string());
        for v in row {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    let mut v = to_value(&rep);
    v.as_object_mut().expect("object").insert(
        "units".into(),
        json!({
            "mass": "squared norm per sheet at T, row = launch sheet",
            "far": "squared norm beyond r_far per sheet at T",
            "far_fractions": "far over the launched squared norm"
        }),
    );
    Ok((v, vec![("survey.csv".into(), csv)]))
}

fn metric_report(cfg: &ExperimentConfig) -> Result<Parts> {
    let m = cfg.metric()?;
    let n = cfg.geometry.as_ref().map_or(2, |g| g.n_sheets);
    let rep = membership(&m.surface, m.rho, m.gamma, m.eps, &m.domain(n))?;
    let samples: Vec<Value> = m
        .points
        .iter()
        .map(|p| {
            let j = m.surface.jet(p[0], p[1]);
            json!({"point": p, "curvature": curvature_of(&j), "dtilde": dtilde(&m.surface, p[0], p[1])})
        })
        .collect();
    let mut v = to_value(&rep);
    let o = v.as_object_mut().expect("object");
    o.insert("samples".into(), json!(samples));
    o.insert(
        "units".into(),
        json!({
            "eta": "quasi-isometry constant 1/(1 + 2 beta^2)",
            "d_inf": "sup of dtilde over the lattice",
            "d_1": "weighted L1 distance (value + tail)",
            "curvature": "Gauss curvature",
            "rho_limit": "min{1/2, 1/sqrt K, c_f}"
        }),
    );
    Ok((v, Vec::new()))
}

fn inj_bounds(cfg: &ExperimentConfig) -> Result<Parts> {
    let m = cfg.metric()?;
    let f = &m.surface;
    let global = match f.surface.declared_bounds() {
        Some((b, g)) if g > 0.0 => Some(inj_bound_global(b, g)?),
        _ => None,
    };
    let mut rows = Vec::new();
    let mut csv = String::from("x,y,local,punctured,covering\n");
    for p in &m.points {
        let q = (p[0], p[1]);
        let local = inj_bound_local(f, q);
        let punct = inj_bound_punctured(f, q).ok();
        let cover = inj_bound_covering(f, q).ok();
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            p[0],
            p[1],
            local.value,
            punct.map_or(String::new(), |b| b.value.to_string()),
            cover.map_or(String::new(), |c| c.to_string())
        ));
        rows.push(json!({"point": p, "local": local, "punctured": punct, "covering": cover}));
    }
    Ok((
        json!({
            "global": global,
            "points": rows,
            "units": {"*": "lower bounds for the injectivity radius, length in g_f"}
        }),
        vec![("inj_bounds.csv".into(), csv)],
    ))
}

fn spectrum(cfg: &ExperimentConfig) -> Result<Parts> {
    let s = cfg.spectrum.as_ref().expect("validated");
    let levels = disc_reference_levels(5)?;
    let mut rows = Vec::new();
    let mut csv = String::from("h,level,multiplicity,reference,computed,rel_error\n");
    let mut errors: Vec<Vec<f64>> = Vec::new();
    for &h in &s.h_values {
        let spec = branched_disc_eigenvalues(h, s.count)?;
        let found = cluster_levels(&spec.eigenvalues, 0.02);
        let mut errs = Vec::new();
        for (i, &(reference, mult)) in levels.iter().enumerate() {
            let computed = found.get(i).map_or(f64::NAN, |l| l.0);
            let rel = (computed - reference).abs() / reference;
            csv.push_str(&format!("{h},{i},{mult},{reference},{computed},{rel}\n"));
            errs.push(rel);
        }
        rows.push(json!({"h": h, "eigenvalues": spec.eigenvalues, "levels": found, "rel_errors": errs,
                         "nodes": spec.nodes, "iterations": spec.iterations}));
        errors.push(errs);
    }
    let orders: Vec<Vec<f64>> = errors
        .windows(2)
        .zip(s.h_values.windows(2))
        .map(|(e, h)| e[0].iter().zip(&e[1]).map(|(a, b)| (a / b).ln() / (h[0] / h[1]).ln()).collect())
        .collect();
    let decreasing = errors.windows(2).all(|e| e[0].iter().zip(&e[1]).all(|(a, b)| b < a));
    Ok((
        json!({
            "reference_levels": levels,
            "runs": rows,
            "observed_orders": orders,
            "errors_decreasing": decreasing,
            "units": {"eigenvalues": "Dirichlet Laplacian on the branched unit disc", "rel_errors": "|computed - reference| / reference"}
        }),
        vec![("spectrum.csv".into(), csv)],
    ))
}

fn phase_decay(cfg: &ExperimentConfig) -> Result<Parts> {
    let spec = *cfg.packet()?;
    let d = cfg.decay.clone().unwrap_or(crate::config::DecaySection {
        s_values: vec![4.0, 8.0, 16.0],
        hq: 1.0 / 16.0,
        decades: 1.5,
        samples: 12,
    });
    let ts = fit_times(spec.s.max(1e-9), d.decades, d.samples.max(8));
    let tails = tail_mass_decay(&spec, &ts)?;
    let pk = Packet::new(spec)?;
    let pointwise = stationary_phase_pointwise(&pk.phi2, spec.s, 4.0, &ts)?;
    let table = localization_error_decay(&spec, &d.s_values, d.hq)?;
    let mut csv = String::from("s,integral,extrapolated,decay_exponent\n");
    for r in &table.rows {
        csv.push_str(&format!("{},{},{},{}\n", r.s, r.integral, r.extrapolated, r.decay_exponent));
    }
    let mut tcsv = String::from("one_plus_st,tail_mass,tail_gradient\n");
    for (i, x) in tails.mass.abscissae.iter().enumerate() {
        tcsv.push_str(&format!("{x},{},{}\n", tails.mass.values[i], tails.gradient.values[i]));
    }
    Ok((
        json!({
            "tail": tails,
            "pointwise": pointwise,
            "localization": table,
            "below_eps_prime": table.below(spec.eps_prime()),
            "units": {
                "tail.mass": "||(1 - chi_Q) e^{-itA0} u0||^2 against 1 + st",
                "tail.gradient": "same for the gradient",
                "localization.integral": "int ||f(t)|| dt over the real line"
            }
        }),
        vec![("localization.csv".into(), csv), ("tails.csv".into(), tcsv)],
    ))
}
