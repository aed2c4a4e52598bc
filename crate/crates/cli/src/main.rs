use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use bbpim_cli::config::{parse_override, RunConfig};
use bbpim_cli::{exit_code, runner};
use clap::{Parser, Subcommand};

/// Bulk-bitwise PIM OLAP simulator.
///
/// Settings come from built-in defaults, then the --config TOML file, then
/// flags. Any configuration key can be set with --set key=value, e.g.
/// `--set params.t_host_read_ns=80` or `--set workload.scale_factor=0.1`.
/// The output directory defaults to $BBPIM_OUT_DIR, else ./bbpim-out.
#[derive(Parser, Debug)]
#[command(name = "bbpim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Dataset directory [default: <out-dir>/dataset].
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,

    /// Calibration file [default: <out-dir>/calibration.json].
    #[arg(long, global = true)]
    models: Option<PathBuf>,

    /// Seed for data generation [default: 42].
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Layouts to use: one-xb, two-xb [default: both].
    #[arg(long = "layout", global = true)]
    layouts: Vec<String>,

    /// Execution modes: hybrid, pim-only, host-only, logic-agg-baseline [default: all].
    #[arg(long = "mode", global = true)]
    modes: Vec<String>,

    /// Query ids to run [default: all].
    #[arg(long = "query", global = true)]
    queries: Vec<String>,

    /// Worker threads; 0 uses every core [default: 0].
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Raw `key=value` configuration override.
    #[arg(long = "set", global = true, value_parser = parse_override)]
    overrides: Vec<(String, toml::Value)>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the pre-joined relation and the tuned query suite.
    Generate {
        /// Scale factor [default: 0.01].
        #[arg(long)]
        scale_factor: Option<f64>,
    },
    /// Measure host-gb and pim-gb latency and fit the planner models.
    Calibrate,
    /// Run the query suite and write report.json / report.csv.
    Run {
        /// Also write each run's event log under <out-dir>/events.
        #[arg(long)]
        events: bool,
    },
    /// Turn report.json into per-metric tables under <out-dir>/tables.
    Report,
}

impl Cli {
    fn config(&self) -> Result<RunConfig> {
        let mut ov = Vec::new();
        let path = |p: &PathBuf| toml::Value::String(p.to_string_lossy().into_owned());
        let strings = |v: &[String]| toml::Value::Array(v.iter().cloned().map(toml::Value::String).collect());
        if let Some(p) = &self.out_dir {
            ov.push(("out_dir".to_string(), path(p)));
        }
        if let Some(p) = &self.dataset {
            ov.push(("dataset".to_string(), path(p)));
        }
        if let Some(p) = &self.models {
            ov.push(("models".to_string(), path(p)));
        }
        if let Some(s) = self.seed {
            ov.push(("seed".to_string(), toml::Value::Integer(s as i64)));
        }
        if !self.layouts.is_empty() {
            ov.push(("layouts".to_string(), strings(&self.layouts)));
        }
        if !self.modes.is_empty() {
            ov.push(("modes".to_string(), strings(&self.modes)));
        }
        if !self.queries.is_empty() {
            ov.push(("queries".to_string(), strings(&self.queries)));
        }
        if let Some(w) = self.workers {
            ov.push(("workers".to_string(), toml::Value::Integer(w as i64)));
        }
        match &self.command {
            Command::Generate { scale_factor: Some(sf) } => ov.push(("workload.scale_factor".into(), toml::Value::Float(*sf))),
            Command::Run { events: true } => ov.push(("events".into(), toml::Value::Boolean(true))),
            _ => {}
        }
        ov.extend(self.overrides.iter().cloned());
        RunConfig::load(self.config.as_deref(), &ov)
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = cli.config()?;
    match cli.command {
        Command::Generate { .. } => {
            let summary = runner::generate(&cfg)?;
            println!("dataset written to {}", cfg.dataset_dir().display());
            for q in summary {
                let flag = if q.degenerate { "  (degenerate)" } else { "" };
                println!(
                    "{:5} selectivity {:.3e} (target {:.3e}), k_max {}{flag}",
                    q.id, q.selectivity, q.target, q.k_max
                );
            }
        }
        Command::Calibrate => {
            let file = runner::calibrate_models(&cfg)?;
            println!("models written to {}", cfg.models_path().display());
            for t in &file.tables {
                for (s, f) in &t.host {
                    println!("{} host-gb s={s}: a={:.4e} b={:.4e} R2={:.4}", t.layout.name(), f.a, f.b, f.r2);
                }
                for (n, f) in &t.pim {
                    println!("{} pim-gb n={n}: slope={:.4e} intercept={:.4e} R2={:.6}", t.layout.name(), f.slope, f.intercept, f.r2);
                }
            }
        }
        Command::Run { .. } => {
            let rep = runner::run(&cfg)?;
            println!("{} runs, report in {}", rep.rows.len(), cfg.out_dir().display());
            for g in &rep.geomean {
                println!(
                    "geomean {:7} {:18} latency {:.4e} s, energy {:.4e} J",
                    g.layout,
                    g.mode,
                    g.latency_s.unwrap_or(0.0),
                    g.energy_j.unwrap_or(0.0)
                );
            }
        }
        Command::Report => {
            let tables = runner::report(&cfg)?;
            for (name, t) in tables {
                println!("{name}\n{}", t.to_csv());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
