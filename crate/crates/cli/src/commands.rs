//! One function per subcommand. Every output path is derived from the run
//! configuration so reruns overwrite the same files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use charlee::data::{slice_boundaries, split_train_val, write_csv, write_ts, znormalize};
use charlee::data::synthetic::SYNTH_SLICES;
use charlee::episode::write_traces;
use charlee::evaluation::{
    evaluate, synthetic_alignment, toee_baseline, verdict, viability_curve, EvalReport, Verdict,
};
use charlee::models::ModelSidecar;
use charlee::ranking::{group_channels, weighted_rank, RankingReport};
use charlee::training::{fit, write_history_csv};
use charlee::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// One line of a summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub delta: f64,
    pub seed: u64,
    pub f1: f64,
    pub savings: f64,
    pub method: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: String,
    pub delta: f64,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_done: usize,
    pub files: Vec<String>,
    pub config: RunConfig,
}

pub fn dataset_dir(root: &Path, cfg: &RunConfig) -> PathBuf {
    root.join(&cfg.name)
}

pub fn delta_dir(root: &Path, cfg: &RunConfig) -> PathBuf {
    dataset_dir(root, cfg).join(format!("delta-{}", cfg.delta))
}

pub fn run_dir(root: &Path, cfg: &RunConfig, seed: u64) -> PathBuf {
    delta_dir(root, cfg).join(format!("seed-{seed}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn write_metadata(dir: &Path) -> Result<()> {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_json(
        &dir.join("metadata.json"),
        &serde_json::json!({ "finished_unix": secs, "version": env!("CARGO_PKG_VERSION") }),
    )
}

/// Writes the train/test splits as `.ts` and `.csv`, plus the ideal utilization table.
pub fn synth(cfg: &RunConfig, root: &Path) -> Result<PathBuf> {
    if !cfg.is_synthetic() {
        return Err(Error::Config("synth needs a synthetic dataset source".into()));
    }
    let data = cfg.load_data()?;
    let dir = dataset_dir(root, cfg).join("data");
    fs::create_dir_all(&dir)?;
    write_ts(&data.train, &dir.join("train.ts"))?;
    write_ts(&data.test, &dir.join("test.ts"))?;
    write_csv(&data.train, &dir.join("train.csv"))?;
    write_csv(&data.test, &dir.join("test.csv"))?;
    write_json(&dir.join("ideal_utilization.json"), &data.ideal)?;
    Ok(dir)
}

/// Ranks channels on the training split used by the first seed.
pub fn rank(cfg: &RunConfig, root: &Path) -> Result<PathBuf> {
    let data = cfg.load_data()?;
    let train = if cfg.normalize() { znormalize(&data.train) } else { data.train };
    let (train, _) = split_train_val(&train, cfg.val_fraction, cfg.seeds[0])?;
    let slices = slice_boundaries(train.series_len(), cfg.n_checkpoints)?;
    let ranking = weighted_rank(&train, &slices, cfg.w_last)?;
    let groups = group_channels(&ranking, cfg.n_groups.unwrap_or(train.n_channels().min(10)))?;
    let dir = dataset_dir(root, cfg);
    fs::create_dir_all(&dir)?;
    let path = dir.join("ranking.json");
    write_json(&path, &RankingReport::new(&ranking, &groups))?;
    Ok(path)
}

/// Trains every seed, resuming from saved state where present.
pub fn train(cfg: &RunConfig, root: &Path) -> Result<Vec<PathBuf>> {
    let data = cfg.load_data()?;
    fs::create_dir_all(delta_dir(root, cfg))?;
    cfg.save(&delta_dir(root, cfg).join("config.json"))?;
    let mut dirs = Vec::new();
    for &seed in &cfg.seeds {
        let dir = run_dir(root, cfg, seed);
        fs::create_dir_all(&dir)?;
        log::info!("training {} delta {} seed {seed}", cfg.name, cfg.delta);
        let fitted = fit(&data.train, &cfg.train_config(seed), Some(&dir.join("state")))?;
        fitted.params.save(&dir.join("params.bin"))?;
        fitted.sidecar.save(&dir.join("model.json"))?;
        write_history_csv(&fitted.history, &dir.join("history.csv"))?;
        let manifest = Manifest {
            dataset: cfg.name.clone(),
            delta: cfg.delta,
            seed,
            best_epoch: fitted.best_epoch,
            epochs_done: fitted.history.len(),
            files: ["params.bin", "model.json", "history.csv", "state/"].map(String::from).to_vec(),
            config: cfg.clone(),
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        write_metadata(&dir)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Evaluates every trained seed on the test split.
pub fn eval(cfg: &RunConfig, root: &Path) -> Result<Vec<EvalReport>> {
    let data = cfg.load_data()?;
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let dir = run_dir(root, cfg, seed);
        let sidecar = ModelSidecar::load(&dir.join("model.json"))
            .map_err(|e| Error::Input(format!("no trained model in {}: {e}", dir.display())))?;
        let (model, params) = sidecar.restore(&dir.join("params.bin"))?;
        let mut test = if sidecar.normalize { znormalize(&data.test) } else { data.test.clone() };
        test.align_classes(&sidecar.class_names);
        let mut report = evaluate(&model, &params, &test, cfg.delta, sidecar.mask_value)?;
        report.seed = Some(seed);
        write_json(&dir.join("eval.json"), &report)?;
        write_traces(&report.traces, BufWriter::new(File::create(dir.join("traces.jsonl"))?))?;
        write_rows(
            &dir.join("summary.csv"),
            &[SummaryRow {
                dataset: cfg.name.clone(),
                delta: cfg.delta,
                seed,
                f1: report.macro_f1,
                savings: report.mean_savings,
                method: "charlee".into(),
            }],
        )?;
        match &data.ideal {
            Some(ideal) if model.n_slices() == SYNTH_SLICES => {
                write_json(&dir.join("alignment.json"), &synthetic_alignment(&report, ideal)?)?;
            }
            Some(_) => log::warn!("alignment needs {} slices, model has {}", SYNTH_SLICES, model.n_slices()),
            None => {}
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Mean test savings of the evaluated seeds at this savings factor.
fn matched_savings(cfg: &RunConfig, root: &Path) -> Result<f64> {
    let mut values = Vec::new();
    for &seed in &cfg.seeds {
        let path = run_dir(root, cfg, seed).join("eval.json");
        if let Ok(text) = fs::read_to_string(&path) {
            let report: EvalReport = serde_json::from_str(&text)?;
            values.push(report.mean_savings);
        }
    }
    if values.is_empty() {
        return Err(Error::Config(
            "no evaluated runs to match savings against; pass --savings or run eval first".into(),
        ));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Time-only baseline at `savings`, or at the mean savings of the evaluated runs.
pub fn toee(cfg: &RunConfig, root: &Path, savings: Option<f64>) -> Result<PathBuf> {
    let target = match savings {
        Some(s) => s,
        None => matched_savings(cfg, root)?,
    };
    let data = cfg.load_data()?;
    let result = toee_baseline(&data.train, &data.test, target, &cfg.classifier_config(), &cfg.seeds)?;
    let dir = delta_dir(root, cfg);
    fs::create_dir_all(&dir)?;
    let rows: Vec<SummaryRow> = result
        .seeds
        .iter()
        .zip(&result.f1_per_seed)
        .map(|(&seed, &f1)| SummaryRow {
            dataset: cfg.name.clone(),
            delta: cfg.delta,
            seed,
            f1,
            savings: 1.0 - result.kept_len as f64 / data.train.series_len() as f64,
            method: "toee".into(),
        })
        .collect();
    write_json(&dir.join("toee.json"), &result)?;
    let path = dir.join("toee.csv");
    write_rows(&path, &rows)?;
    Ok(path)
}

/// Accuracy of a standalone classifier at 20 truncation fractions.
pub fn viability(cfg: &RunConfig, root: &Path) -> Result<PathBuf> {
    let data = cfg.load_data()?;
    let curve = viability_curve(&data.train, &data.test, &cfg.classifier_config(), cfg.seeds[0])?;
    let dir = dataset_dir(root, cfg);
    fs::create_dir_all(&dir)?;
    let path = dir.join("viability.csv");
    write_rows(&path, &curve)?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub delta: f64,
    pub charlee_f1_mean: f64,
    pub charlee_f1_std: f64,
    pub charlee_savings_mean: f64,
    pub charlee_savings_std: f64,
    pub toee_f1_mean: Option<f64>,
    pub toee_f1_std: Option<f64>,
    pub toee_savings: Option<f64>,
    pub n_charlee: usize,
    pub n_toee: usize,
    pub verdict: Option<Verdict>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn collect_summaries(dir: &Path, rows: &mut Vec<SummaryRow>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_summaries(&path, rows)?;
        } else if matches!(path.file_name().and_then(|n| n.to_str()), Some("summary.csv" | "toee.csv")) {
            rows.extend(read_rows::<SummaryRow>(&path)?);
        }
    }
    Ok(())
}

/// Aggregates summary tables below `dirs` into one comparison per (dataset, δ).
pub fn report(dirs: &[PathBuf], margin: f64) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for d in dirs {
        if !d.is_dir() {
            return Err(Error::Input(format!("{} is not a directory", d.display())));
        }
        collect_summaries(d, &mut rows)?;
    }
    Ok(aggregate(&rows, margin))
}

pub fn aggregate(rows: &[SummaryRow], margin: f64) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(String, u64), (Vec<&SummaryRow>, Vec<&SummaryRow>)> = BTreeMap::new();
    for r in rows {
        let entry = groups.entry((r.dataset.clone(), r.delta.to_bits())).or_default();
        match r.method.as_str() {
            "toee" => entry.1.push(r),
            _ => entry.0.push(r),
        }
    }
    groups
        .into_iter()
        .filter(|(_, (ours, _))| !ours.is_empty())
        .map(|((dataset, bits), (ours, theirs))| {
            let (f1, f1_sd) = mean_std(&ours.iter().map(|r| r.f1).collect::<Vec<_>>());
            let (sv, sv_sd) = mean_std(&ours.iter().map(|r| r.savings).collect::<Vec<_>>());
            let toee = (!theirs.is_empty()).then(|| {
                let (m, s) = mean_std(&theirs.iter().map(|r| r.f1).collect::<Vec<_>>());
                (m, s, theirs.iter().map(|r| r.savings).sum::<f64>() / theirs.len() as f64)
            });
            ReportRow {
                dataset,
                delta: f64::from_bits(bits),
                charlee_f1_mean: f1,
                charlee_f1_std: f1_sd,
                charlee_savings_mean: sv,
                charlee_savings_std: sv_sd,
                toee_f1_mean: toee.map(|t| t.0),
                toee_f1_std: toee.map(|t| t.1),
                toee_savings: toee.map(|t| t.2),
                n_charlee: ours.len(),
                n_toee: theirs.len(),
                verdict: toee.map(|t| verdict(f1, t.0, margin)),
            }
        })
        .collect()
}

pub fn write_report(rows: &[ReportRow], path: &Path) -> Result<()> {
    write_rows(path, rows)
}
