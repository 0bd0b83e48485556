use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use serde_json::json;

use ftscomm::cluster::adjusted_rand_index;
use ftscomm::error::Error;
use ftscomm::graph_encoder::AttentionMode;
use ftscomm::marketdata::{load_prices, write_prices, PriceMatrix, SectorMap};
use ftscomm::neuralcore::GradCheckOptions;
use ftscomm::pipeline::{
    generate_synthetic, read_assignments, read_labels, resolve_output_dir, run_ablation, run_gradcheck,
    run_pipeline, run_window_sweep, write_labels, write_outputs, PipelineConfig, RunManifest, SyntheticSpec,
    METRICS_FILE, ASSIGNMENTS_FILE,
};

const EXIT_CONFIG: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "ftscomm", version, about = "Temporal community detection over price panels")]
struct Cli {
    /// Log at debug level.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Inputs {
    /// Price CSV: `date,ASSET1,...`.
    #[arg(long)]
    prices: PathBuf,
    /// Optional `asset,sector_code` CSV.
    #[arg(long)]
    sectors: Option<PathBuf>,
    /// TOML or JSON config; defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate a price file and report what was kept.
    Ingest {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        sectors: Option<PathBuf>,
        /// Write the cleaned, gap-filled panel here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate planted-community prices and their labels.
    Synth {
        /// TOML or JSON synthetic spec; defaults when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Train, cluster every window and write results.
    Run {
        #[command(flatten)]
        inputs: Option<Inputs>,
        /// Repeat the run recorded in a manifest.
        #[arg(long, conflicts_with_all = ["prices", "sectors", "config", "seed"])]
        manifest: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Compare attention modes on the same data and seed.
    Ablate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_delimiter = ',', default_value = "static,basic,enhanced,full")]
        modes: Vec<AttentionMode>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Rerun with several window lengths.
    Sweep {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_delimiter = ',', default_value = "60,89,120")]
        windows: Vec<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Finite-difference gradient checks on a toy model.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        coords: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Perturbs the analytic gradient of the named parameter.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Summarize a run directory, optionally scoring it against true labels.
    Metrics {
        #[arg(long)]
        dir: PathBuf,
        /// `asset_id,label` CSV of planted communities.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}

enum Failure {
    Lib(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Lib(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(EXIT_CHECK)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            match e.root() {
                Error::Config(_) => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::from(EXIT_DATA),
            }
        }
    }
}

fn dispatch(cmd: Cmd) -> Outcome {
    match cmd {
        Cmd::Ingest { prices, sectors, out } => ingest(&prices, sectors.as_deref(), out.as_deref()),
        Cmd::Synth { spec, seed, out, labels } => synth(spec.as_deref(), seed, &out, labels.as_deref()),
        Cmd::Run {
            inputs,
            manifest,
            output_dir,
        } => match (manifest, inputs) {
            (Some(m), _) => rerun(&m, output_dir.as_deref()),
            (None, Some(i)) => run(&i, output_dir.as_deref()),
            (None, None) => Err(Error::Config("run needs --prices or --manifest".into()).into()),
        },
        Cmd::Ablate {
            inputs,
            modes,
            output_dir,
        } => ablate(&inputs, &modes, output_dir.as_deref()),
        Cmd::Sweep {
            inputs,
            windows,
            output_dir,
        } => sweep(&inputs, &windows, output_dir.as_deref()),
        Cmd::Gradcheck {
            coords,
            seed,
            tolerance,
            report,
            inject_fault,
        } => gradcheck(coords, seed, tolerance, report.as_deref(), inject_fault),
        Cmd::Metrics { dir, labels } => metrics(&dir, labels.as_deref()),
    }
}

fn print(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value"));
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig, Error> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_inputs(prices: &Path, sectors: Option<&Path>) -> Result<(PriceMatrix, Option<Vec<String>>), Error> {
    let loaded = load_prices(prices)?;
    for (id, frac) in &loaded.dropped {
        log::warn!("dropped {id}: {:.1}% of rows missing", 100.0 * frac);
    }
    let codes = sectors
        .map(|p| SectorMap::load(p)?.codes_for(loaded.prices.asset_ids()))
        .transpose()?;
    Ok((loaded.prices, codes))
}

fn ingest(prices: &Path, sectors: Option<&Path>, out: Option<&Path>) -> Outcome {
    let loaded = load_prices(prices)?;
    if let Some(s) = sectors {
        SectorMap::load(s)?.codes_for(loaded.prices.asset_ids())?;
    }
    if let Some(o) = out {
        write_prices(&loaded.prices, o)?;
    }
    let p = &loaded.prices;
    print(&json!({
        "assets": p.n_assets(),
        "days": p.n_times(),
        "first_date": p.dates().first().map(|d| d.to_string()),
        "last_date": p.dates().last().map(|d| d.to_string()),
        "dropped": loaded.dropped.iter().map(|(id, f)| json!({"asset": id, "missing_fraction": f})).collect::<Vec<_>>(),
    }));
    Ok(())
}

fn synth(spec: Option<&Path>, seed: Option<u64>, out: &Path, labels: Option<&Path>) -> Outcome {
    let mut s = match spec {
        Some(p) => SyntheticSpec::load(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(x) = seed {
        s.seed = x;
    }
    let data = generate_synthetic(&s)?;
    write_prices(&data.prices, out)?;
    if let Some(l) = labels {
        write_labels(data.prices.asset_ids(), &data.labels, l)?;
    }
    info!("wrote {} assets x {} days to {}", s.n_assets, s.t_total, out.display());
    Ok(())
}

fn execute(cfg: &PipelineConfig, prices: &Path, sectors: Option<&Path>, dir: &Path) -> Outcome {
    let (p, codes) = load_inputs(prices, sectors)?;
    let out = run_pipeline(cfg, &p, codes.as_deref())?;
    write_outputs(dir, cfg, &out, prices, sectors)?;
    print(&json!({
        "output_dir": dir,
        "windows": out.report.n_windows,
        "eval": out.report.eval,
        "best_epoch": out.report.best_epoch,
    }));
    Ok(())
}

fn run(i: &Inputs, output_dir: Option<&Path>) -> Outcome {
    let cfg = load_config(i.config.as_deref(), i.seed)?;
    execute(&cfg, &i.prices, i.sectors.as_deref(), &resolve_output_dir(output_dir))
}

fn rerun(manifest: &Path, output_dir: Option<&Path>) -> Outcome {
    let m = RunManifest::load(manifest)?;
    m.verify_inputs()?;
    let cfg = PipelineConfig { seed: m.seed, ..m.config.clone() };
    execute(&cfg, &m.input_path, m.sectors_path.as_deref(), &resolve_output_dir(output_dir))
}

fn ablate(i: &Inputs, modes: &[AttentionMode], output_dir: Option<&Path>) -> Outcome {
    let cfg = load_config(i.config.as_deref(), i.seed)?;
    let (p, codes) = load_inputs(&i.prices, i.sectors.as_deref())?;
    let rows = run_ablation(&cfg, &p, codes.as_deref(), modes)?;
    let v = serde_json::to_value(&rows)?;
    if let Some(d) = output_dir {
        std::fs::create_dir_all(d)?;
        std::fs::write(d.join("ablation.json"), serde_json::to_string_pretty(&v)?)?;
    }
    print(&v);
    Ok(())
}

fn sweep(i: &Inputs, windows: &[usize], output_dir: Option<&Path>) -> Outcome {
    let cfg = load_config(i.config.as_deref(), i.seed)?;
    let (p, codes) = load_inputs(&i.prices, i.sectors.as_deref())?;
    let table = run_window_sweep(&cfg, &p, codes.as_deref(), windows)?;
    let v = serde_json::to_value(&table)?;
    if let Some(d) = output_dir {
        std::fs::create_dir_all(d)?;
        std::fs::write(d.join("sweep.json"), serde_json::to_string_pretty(&v)?)?;
    }
    print(&v);
    Ok(())
}

fn gradcheck(coords: usize, seed: u64, tolerance: f64, report: Option<&Path>, fault: Option<String>) -> Outcome {
    let opts = GradCheckOptions {
        coords_per_param: coords,
        seed,
        tolerance,
        corrupt: fault,
        ..GradCheckOptions::default()
    };
    let s = run_gradcheck(&opts)?;
    if let Some(p) = report {
        std::fs::write(p, serde_json::to_string_pretty(&s)?)?;
    }
    for r in &s.reports {
        let status = if r.skipped() > 0 {
            "skipped (stochastic)"
        } else if r.pass {
            "ok"
        } else {
            "FAIL"
        };
        println!("{:<28} max rel err {:.3e}  {status}", r.fragment, r.max_rel_error);
    }
    println!("overall max rel err {:.3e}", s.max_rel_error);
    if s.pass {
        Ok(())
    } else {
        Err(Failure::Check(format!("gradients off for {}", s.failing.join(", "))))
    }
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 { xs[m] } else { 0.5 * (xs[m - 1] + xs[m]) })
}

fn metrics(dir: &Path, labels: Option<&Path>) -> Outcome {
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join(METRICS_FILE))?)?;
    let mut out = json!({
        "eval": report["eval"],
        "stability": report["stability"],
        "best_epoch": report["best_epoch"],
    });
    if let Some(l) = labels {
        let truth = read_labels(l)?;
        let windows = read_assignments(&dir.join(ASSIGNMENTS_FILE))?;
        let mut aris = Vec::with_capacity(windows.len());
        for (start, assigned) in &windows {
            let mut a = Vec::with_capacity(assigned.len());
            let mut t = Vec::with_capacity(assigned.len());
            for (id, &label) in assigned {
                let tl = truth
                    .get(id)
                    .ok_or_else(|| Error::Data(format!("no true label for {id} (window {start})")))?;
                a.push(label);
                t.push(*tl);
            }
            aris.push(adjusted_rand_index(&a, &t)?);
        }
        out["ari_median"] = json!(median(aris.clone()));
        out["ari"] = json!(aris);
    }
    print(&out);
    Ok(())
}
