mod config;
mod runner;

use branchwave::{Error, Result};
use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "branchwave", version, about = "Experiments on a branched covering of the plane")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured experiment.
    Run,
    /// Repeat the experiment over values of one parameter (JSON path like packet.s).
    Sweep {
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Check the config and exit.
    Validate,
    /// Write the grid adjacency list as CSV.
    ExportGrid,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(cli: &Cli) -> Result<(ExperimentConfig, Value)> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let raw: Value = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    Ok((ExperimentConfig::parse(&text)?, raw))
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let p = dir.join(name);
    std::fs::write(&p, body).map_err(|e| Error::Io(format!("{}: {e}", p.display())))
}

fn prefixed(cfg: &ExperimentConfig, name: &str) -> String {
    match &cfg.output.prefix {
        Some(p) => format!("{p}{name}"),
        None => name.to_string(),
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let (cfg, raw) = load(cli)?;
    match &cli.cmd {
        Cmd::Validate => {
            cfg.validate()?;
            if !cli.quiet {
                println!("ok");
            }
            Ok(())
        }
        Cmd::ExportGrid => {
            cfg.validate()?;
            let grid = cfg.geometry()?.grid()?;
            let dir = out_dir(cli, &cfg);
            write(&dir, &prefixed(&cfg, "adjacency.csv"), &grid.adjacency_csv())?;
            if !cli.quiet {
                println!("{} nodes", grid.num_nodes());
            }
            Ok(())
        }
        Cmd::Run => {
            let outcome = runner::run(&cfg, cli.threads)?;
            let dir = out_dir(cli, &cfg);
            let text = serde_json::to_string_pretty(&outcome.summary).expect("json");
            write(&dir, &prefixed(&cfg, "summary.json"), &text)?;
            for (name, body) in &outcome.artifacts {
                write(&dir, &prefixed(&cfg, name), body)?;
            }
            if !cli.quiet {
                println!("{text}");
            }
            Ok(())
        }
        Cmd::Sweep { param, values } => sweep(cli, &cfg, &raw, param, values),
    }
}

fn set_path(v: &mut Value, path: &str, x: f64) -> Result<()> {
    let mut cur = v;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, key) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("'{path}' does not name an object field")))?;
        if i + 1 == parts.len() {
            obj.insert((*key).to_string(), json!(x));
            return Ok(());
        }
        cur = obj.entry(key.to_string()).or_insert_with(|| json!({}));
    }
    Err(Error::Config("empty parameter path".into()))
}

/// Numeric leaves outside the echoed config, keyed by dotted path.
fn flatten(v: &Value, prefix: &str, out: &mut Vec<(String, f64)>) {
    match v {
        Value::Number(n) => out.push((prefix.to_string(), n.as_f64().unwrap_or(f64::NAN))),
        Value::Bool(b) => out.push((prefix.to_string(), if *b { 1.0 } else { 0.0 })),
        Value::Object(m) => {
            for (k, x) in m {
                if prefix.is_empty() && (k == "config" || k == "units") {
                    continue;
                }
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(x, &p, out);
            }
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                flatten(x, &format!("{prefix}.{i}"), out);
            }
        }
        _ => {}
    }
}

fn trend(col: &[f64]) -> &'static str {
    if col.len() < 2 || col.iter().any(|x| !x.is_finite()) {
        return "none";
    }
    if col.windows(2).all(|w| w[1] < w[0]) {
        "decreasing"
    } else if col.windows(2).all(|w| w[1] > w[0]) {
        "increasing"
    } else {
        "mixed"
    }
}

fn sweep(cli: &Cli, base: &ExperimentConfig, raw: &Value, param: &str, values: &[f64]) -> Result<()> {
    let mut configs = Vec::new();
    for &x in values {
        let mut v = raw.clone();
        set_path(&mut v, param, x)?;
        let cfg: ExperimentConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        configs.push(cfg);
    }
    let threads = cli.threads.max(1);
    let mut results: Vec<Option<Result<runner::Outcome>>> = (0..configs.len()).map(|_| None).collect();
    for chunk in (0..configs.len()).collect::<Vec<_>>().chunks(threads) {
        let done: Vec<(usize, Result<runner::Outcome>)> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let c = &configs[i];
                    s.spawn(move || (i, runner::run(c, 1)))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        });
        for (i, r) in done {
            results[i] = Some(r);
        }
    }

    let dir = out_dir(cli, base);
    let mut columns: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<(String, f64)>> = Vec::new();
    let mut first_err = None;
    for (i, r) in results.into_iter().enumerate() {
        let mut flat = Vec::new();
        match r.expect("every sweep slot filled") {
            Ok(o) => {
                flatten(&o.summary, "", &mut flat);
                let text = serde_json::to_string_pretty(&o.summary).expect("json");
                write(&dir, &prefixed(base, &format!("sweep_{i}_summary.json")), &text)?;
            }
            Err(e) => {
                if !cli.quiet {
                    eprintln!("{param} = {}: {e}", values[i]);
                }
                first_err.get_or_insert(e);
            }
        }
        for (k, _) in &flat {
            if !columns.contains(k) {
                columns.push(k.clone());
            }
        }
        rows.push(flat);
    }
    let mut csv = param.to_string();
    for c in &columns {
        csv.push_str(&format!(",{c}"));
    }
    csv.push('\n');
    let mut verdicts = serde_json::Map::new();
    let mut table = vec![Vec::new(); columns.len()];
    for (i, row) in rows.iter().enumerate() {
        csv.push_str(&values[i].to_string());
        for (j, c) in columns.iter().enumerate() {
            let x = row.iter().find(|(k, _)| k == c).map_or(f64::NAN, |p| p.1);
            table[j].push(x);
            csv.push_str(&format!(",{x}"));
        }
        csv.push('\n');
    }
    for (j, c) in columns.iter().enumerate() {
        verdicts.insert(c.clone(), json!(trend(&table[j])));
    }
    write(&dir, &prefixed(base, "sweep.csv"), &csv)?;
    let summary = json!({
        "schema": config::SCHEMA,
        "parameter": param,
        "values": values,
        "trends": verdicts,
        "units": {"trends": "strict monotonicity of each column along the listed values"}
    });
    let text = serde_json::to_string_pretty(&summary).expect("json");
    write(&dir, &prefixed(base, "sweep_summary.json"), &text)?;
    if !cli.quiet {
        print!("{csv}");
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
