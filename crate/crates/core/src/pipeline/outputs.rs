use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use super::run::RunOutput;
use crate::error::{Error, Result};
use crate::training::write_log;

/// Overrides the default output directory; a command-line flag wins over it.
pub const OUTPUT_DIR_ENV: &str = "FTSCOMM_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "ftscomm-out";
pub const MANIFEST_FORMAT: &str = "ftscomm-run/1";

pub const ASSIGNMENTS_FILE: &str = "assignments.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const WINDOWS_FILE: &str = "windows.csv";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const GRAPHS_DIR: &str = "graphs";

/// Everything needed to repeat a run: rerunning the stored config on the
/// same input bytes gives bitwise-identical assignment files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: String,
    pub config: PipelineConfig,
    pub seed: u64,
    /// SHA-256 of the price file bytes.
    pub input_hash: String,
    pub input_path: PathBuf,
    pub sectors_path: Option<PathBuf>,
    pub sectors_hash: Option<String>,
    /// Output name → path.
    pub outputs: BTreeMap<String, PathBuf>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Config(format!(
                "{}: unsupported manifest format `{}`",
                path.display(),
                m.format
            )));
        }
        m.config.validate()?;
        Ok(m)
    }

    /// Errors if an input file no longer matches its recorded hash.
    pub fn verify_inputs(&self) -> Result<()> {
        check_hash(&self.input_path, &self.input_hash)?;
        match (&self.sectors_path, &self.sectors_hash) {
            (Some(p), Some(h)) => check_hash(p, h),
            _ => Ok(()),
        }
    }
}

fn check_hash(path: &Path, expected: &str) -> Result<()> {
    let got = file_hash(path)?;
    if got != expected {
        return Err(Error::Data(format!(
            "{} changed since the manifest was written (sha256 {got}, expected {expected})",
            path.display()
        )));
    }
    Ok(())
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Flag, then environment, then the default.
pub fn resolve_output_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUTPUT_DIR),
    }
}

pub fn write_assignments(out: &RunOutput, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["window_start", "asset_id", "label"])?;
    for a in &out.assignments {
        for (id, label) in out.asset_ids.iter().zip(&a.labels) {
            w.write_record([a.window_start.to_string(), id.clone(), label.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_window_table(out: &RunOutput, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "window_start",
        "split",
        "k",
        "intra_corr",
        "inter_corr",
        "inter_dissim",
        "nav_s_intra",
        "nav_s_inter",
        "nav_score",
    ])?;
    for r in &out.report.windows {
        let split = serde_json::to_value(r.split)?;
        w.write_record([
            r.window_start.to_string(),
            split.as_str().unwrap_or_default().to_string(),
            r.k.to_string(),
            cell(r.intra_corr),
            cell(r.inter_corr),
            cell(r.inter_dissim),
            cell(r.nav_s_intra),
            cell(r.nav_s_inter),
            cell(r.nav_score),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every result file and the manifest into `dir`.
pub fn write_outputs(
    dir: &Path,
    cfg: &PipelineConfig,
    out: &RunOutput,
    input_path: &Path,
    sectors_path: Option<&Path>,
) -> Result<RunManifest> {
    fs::create_dir_all(dir)?;
    let mut outputs = BTreeMap::new();
    let mut put = |key: &str, name: &str| {
        let p = dir.join(name);
        outputs.insert(key.to_string(), p.clone());
        p
    };
    write_assignments(out, &put("assignments", ASSIGNMENTS_FILE))?;
    fs::write(put("metrics", METRICS_FILE), serde_json::to_string_pretty(&out.report)?)?;
    write_window_table(out, &put("windows", WINDOWS_FILE))?;
    write_log(&put("train_log", LOG_FILE), &out.log)?;
    if cfg.cache_graphs {
        let gdir = put("graphs", GRAPHS_DIR);
        fs::create_dir_all(&gdir)?;
        for w in &out.windows {
            let p = gdir.join(format!("window_{:05}.json", w.start));
            fs::write(p, serde_json::to_string(&w.graph)?)?;
        }
    }
    let manifest_path = put("manifest", MANIFEST_FILE);
    let manifest = RunManifest {
        format: MANIFEST_FORMAT.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        seed: cfg.seed,
        input_hash: file_hash(input_path)?,
        input_path: input_path.to_path_buf(),
        sectors_path: sectors_path.map(Path::to_path_buf),
        sectors_hash: sectors_path.map(file_hash).transpose()?,
        outputs,
    };
    fs::write(manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Writes `asset_id,label` rows.
pub fn write_labels(ids: &[String], labels: &[usize], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["asset_id", "label"])?;
    for (id, l) in ids.iter().zip(labels) {
        w.write_record([id.clone(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `asset_id,label` rows.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, usize>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for rec in r.deserialize() {
        let (id, label): (String, usize) = rec?;
        out.insert(id, label);
    }
    Ok(out)
}

/// Reads an assignment file back into per-window `asset_id → label` maps,
/// keyed by window start.
pub fn read_assignments(path: &Path) -> Result<BTreeMap<usize, BTreeMap<String, usize>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out: BTreeMap<usize, BTreeMap<String, usize>> = BTreeMap::new();
    for rec in r.deserialize() {
        let (start, id, label): (usize, String, usize) = rec?;
        out.entry(start).or_default().insert(id, label);
    }
    Ok(out)
}
