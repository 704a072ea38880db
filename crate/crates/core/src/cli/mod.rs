//! Experiment driver behind the `jointseg` binary.
//!
//! Run directories hold `model.jseg`, `history.csv` and `manifest.toml`
//! after training, plus `metrics.csv` and `summary.json` after evaluation.

mod config;
pub mod figures;

pub use config::RunConfig;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{PairScore, Stats, Summary};
use crate::pipelines::{binarize, evaluate, predict, train, MetricsReport, ModelParams, PipelineKind, TrainedModel};
use crate::synthdata::{
    dataset_stats, generate_dataset, read_dataset, write_dataset, write_metadata, DatasetMeta, DatasetStats, SceneSpec,
};
use figures::{boxplot_svg, panel_png, precision_recall_svg, Cell};

pub const CHECKPOINT_FILE: &str = "model.jseg";
pub const HISTORY_FILE: &str = "history.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Git-style content hash: SHA-256 over `"blob <len>\0"` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// `JOINTSEG_THREADS`, else the number of available cores.
pub fn generation_threads() -> usize {
    std::env::var("JOINTSEG_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn load_spec(path: &Path) -> Result<SceneSpec> {
    let text = fs::read_to_string(path)?;
    let spec: SceneSpec = toml::from_str(&text).map_err(|e| Error::InvalidSpec(e.message().to_string()))?;
    spec.validate()?;
    Ok(spec)
}

/// Generates `count` samples and writes the dataset plus its metadata sidecar.
pub fn cmd_gen_data(spec: Option<&Path>, count: usize, seed: u64, out: &Path) -> Result<DatasetStats> {
    let spec = match spec {
        Some(p) => load_spec(p)?,
        None => SceneSpec::default(),
    };
    let samples = generate_dataset(&spec, seed, count, generation_threads())?;
    write_dataset(&samples, out)?;
    write_metadata(
        out,
        &DatasetMeta {
            master_seed: seed,
            count,
            spec,
        },
    )?;
    Ok(dataset_stats(&samples))
}

pub fn format_stats(s: &DatasetStats) -> String {
    format!(
        "samples {}\nmyocardium pixel fraction {:.4}\nscar pixel fraction {:.4}\nscar-free fraction {:.4}\n",
        s.samples, s.myocardium_fraction, s.scar_fraction, s.scar_free_fraction
    )
}

/// Config snapshot plus the identity of the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset_hash: String,
    pub samples: usize,
    pub config: RunConfig,
}

/// Loads `path`, applies the optional overrides and trains.
pub fn cmd_train(path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<TrainedModel> {
    let mut cfg = RunConfig::load(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    if cfg.train_data.is_relative() {
        cfg.train_data = base.join(&cfg.train_data);
    }
    if let Some(o) = out {
        cfg.out_dir = o.to_path_buf();
    } else if cfg.out_dir.is_relative() {
        cfg.out_dir = base.join(&cfg.out_dir);
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    run_training(&cfg)
}

/// Trains per `cfg` and writes checkpoint, history and manifest into
/// `cfg.out_dir`.
pub fn run_training(cfg: &RunConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let bytes = fs::read(&cfg.train_data)?;
    let data = crate::synthdata::io::decode_dataset(&bytes)?;
    let model = train(&data, &cfg.train_config())?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut ckpt = Vec::new();
    model.params.write_checkpoint(&mut ckpt)?;
    fs::write(cfg.out_dir.join(CHECKPOINT_FILE), ckpt)?;
    fs::write(cfg.out_dir.join(HISTORY_FILE), model.history_csv())?;
    let manifest = RunManifest {
        dataset_hash: content_hash(&bytes),
        samples: data.len(),
        config: cfg.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Invalid(e.to_string()))?;
    fs::write(cfg.out_dir.join(MANIFEST_FILE), text)?;
    Ok(model)
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub kind: PipelineKind,
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub dataset_hash: String,
    pub samples: usize,
    pub tau: f64,
    pub scar: Summary,
    pub myo: Option<Summary>,
}

fn csv_scores(scar: &[PairScore], myo: Option<&[PairScore]>) -> String {
    let mut s = String::from("id,dice,precision,recall,flags");
    if myo.is_some() {
        s.push_str(",myo_dice,myo_precision,myo_recall,myo_flags");
    }
    s.push('\n');
    for (i, p) in scar.iter().enumerate() {
        let _ = write!(s, "{},{},{},{},{}", p.id, p.dice, p.precision, p.recall, p.flags());
        if let Some(m) = myo {
            let m = &m[i];
            let _ = write!(s, ",{},{},{},{}", m.dice, m.precision, m.recall, m.flags());
        }
        s.push('\n');
    }
    s
}

/// Scores `checkpoint` on `dataset` and writes `metrics.csv` and
/// `summary.json` into `out`.
pub fn cmd_eval(checkpoint: &Path, dataset: &Path, tau: f64, out: &Path) -> Result<MetricsReport> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(vec![format!("tau must lie in (0, 1), got {tau}")]));
    }
    let model = ModelParams::read_checkpoint(fs::File::open(checkpoint).map(std::io::BufReader::new)?)?;
    let bytes = fs::read(dataset)?;
    let samples = crate::synthdata::io::decode_dataset(&bytes)?;
    let report = evaluate(&model, &samples, tau)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(METRICS_FILE), csv_scores(&report.scar, report.myo.as_deref()))?;
    let summary = EvalSummary {
        kind: model.kind(),
        checkpoint: checkpoint.to_path_buf(),
        dataset: dataset.to_path_buf(),
        dataset_hash: content_hash(&bytes),
        samples: samples.len(),
        tau,
        scar: report.scar_summary.clone(),
        myo: report.myo_summary.clone(),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Invalid(e.to_string()))?;
    fs::write(out.join(SUMMARY_FILE), json + "\n")?;
    Ok(report)
}

pub fn read_summary(run: &Path) -> Result<EvalSummary> {
    let text = fs::read_to_string(run.join(SUMMARY_FILE))?;
    serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", run.join(SUMMARY_FILE).display())))
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub method: String,
    pub metric: &'static str,
    pub stats: Option<Stats>,
}

const TABLE_HEADER: [&str; 10] = ["method", "metric", "n", "excluded", "mean", "median", "q1", "q3", "min", "max"];

fn table_cells(rows: &[TableRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            let mut c = vec![r.method.clone(), r.metric.to_string()];
            match &r.stats {
                Some(s) => c.extend(
                    [s.count.to_string(), s.excluded.to_string()]
                        .into_iter()
                        .chain([s.mean, s.median, s.q1, s.q3, s.min, s.max].map(|v| v.to_string())),
                ),
                None => c.extend(std::iter::repeat_n(String::new(), 8)),
            }
            c
        })
        .collect()
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut s = TABLE_HEADER.join(",") + "\n";
    for c in table_cells(rows) {
        s.push_str(&c.join(","));
        s.push('\n');
    }
    s
}

/// Same table with columns padded to equal width; numbers to 4 places.
pub fn table_text(rows: &[TableRow]) -> String {
    let mut cells: Vec<Vec<String>> = vec![TABLE_HEADER.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        let mut c = vec![r.method.clone(), r.metric.to_string()];
        match &r.stats {
            Some(s) => {
                c.push(s.count.to_string());
                c.push(s.excluded.to_string());
                c.extend([s.mean, s.median, s.q1, s.q3, s.min, s.max].map(|v| format!("{v:.4}")));
            }
            None => c.extend(std::iter::repeat_n("-".to_string(), 8)),
        }
        cells.push(c);
    }
    let widths: Vec<usize> = (0..TABLE_HEADER.len())
        .map(|j| cells.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(j, (v, &w))| if j < 2 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        s.push_str(line.join("  ").trim_end());
        s.push('\n');
    }
    s
}

/// Run labels: the pipeline kind, suffixed `-2`, `-3`, ... on repeats.
fn labels(summaries: &[EvalSummary]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in summaries {
        let base = s.kind.to_string();
        let n = out
            .iter()
            .filter(|l| **l == base || l.starts_with(&format!("{base}-")))
            .count();
        out.push(if n == 0 { base } else { format!("{base}-{}", n + 1) });
    }
    out
}

/// Writes `comparison.csv`, `comparison.txt`, `scar_dice.svg`,
/// `precision_recall.svg` and `panel.png` (the first `panel_samples` test
/// cases that contain scar) into `out`.
pub fn cmd_compare(runs: &[PathBuf], out: &Path, panel_samples: usize) -> Result<Vec<TableRow>> {
    if runs.len() < 2 {
        return Err(Error::Invalid(format!("compare needs at least 2 runs, got {}", runs.len())));
    }
    let summaries = runs.iter().map(|r| read_summary(r)).collect::<Result<Vec<_>>>()?;
    let reference = &summaries[0];
    for (run, s) in runs.iter().zip(&summaries) {
        if s.dataset_hash != reference.dataset_hash {
            return Err(Error::Invalid(format!(
                "{} was evaluated on a different dataset ({} vs {})",
                run.display(),
                s.dataset_hash,
                reference.dataset_hash
            )));
        }
    }
    let names = labels(&summaries);
    let mut rows = Vec::new();
    for (name, s) in names.iter().zip(&summaries) {
        for (metric, stats) in [
            ("scar_dice", &s.scar.dice),
            ("scar_precision", &s.scar.precision),
            ("scar_recall", &s.scar.recall),
            ("myo_dice", &s.myo.as_ref().and_then(|m| m.dice.clone())),
        ] {
            rows.push(TableRow {
                method: name.clone(),
                metric,
                stats: stats.clone(),
            });
        }
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("comparison.csv"), table_csv(&rows))?;
    fs::write(out.join("comparison.txt"), table_text(&rows))?;

    let dice: Vec<(String, Option<Stats>)> =
        names.iter().zip(&summaries).map(|(n, s)| (n.clone(), s.scar.dice.clone())).collect();
    fs::write(out.join("scar_dice.svg"), boxplot_svg("Scar Dice per method", &dice))?;
    let pr: Vec<_> = names
        .iter()
        .zip(&summaries)
        .map(|(n, s)| (n.clone(), s.scar.precision.clone(), s.scar.recall.clone()))
        .collect();
    fs::write(
        out.join("precision_recall.svg"),
        precision_recall_svg("Scar precision and recall", &pr),
    )?;

    let samples = read_dataset(&reference.dataset)?;
    let chosen: Vec<_> = samples.iter().filter(|s| !s.scar.is_empty()).take(panel_samples).collect();
    if let Some(first) = chosen.first() {
        let models = summaries
            .iter()
            .map(|s| {
                let f = fs::File::open(&s.checkpoint)?;
                ModelParams::read_checkpoint(std::io::BufReader::new(f))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut masks = Vec::with_capacity(chosen.len());
        for s in &chosen {
            let row = models
                .iter()
                .zip(&summaries)
                .map(|(m, sum)| binarize(&predict(m, s)?.scar, sum.tau))
                .collect::<Result<Vec<_>>>()?;
            masks.push(row);
        }
        let grid: Vec<Vec<Cell<'_>>> = chosen
            .iter()
            .zip(&masks)
            .map(|(s, row)| {
                let mut cells = vec![
                    Cell::Image(&s.image),
                    Cell::Truth {
                        myo: &s.myo,
                        scar: &s.scar,
                    },
                ];
                cells.extend(row.iter().map(Cell::Mask));
                cells
            })
            .collect();
        let (h, w) = first.dims();
        panel_png(&grid, h, w, 2)
            .save(out.join("panel.png"))
            .map_err(|e| Error::Invalid(format!("panel.png: {e}")))?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_hash_matches_git_blob_sha256() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(
            content_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }

    #[test]
    fn labels_disambiguate_repeats() {
        let s = |kind| EvalSummary {
            kind,
            checkpoint: PathBuf::new(),
            dataset: PathBuf::new(),
            dataset_hash: String::new(),
            samples: 0,
            tau: 0.5,
            scar: Summary {
                dice: None,
                precision: None,
                recall: None,
            },
            myo: None,
        };
        let l = labels(&[s(PipelineKind::Jdl), s(PipelineKind::Direct), s(PipelineKind::Jdl)]);
        assert_eq!(l, ["jdl", "direct", "jdl-2"]);
    }

    #[test]
    fn text_table_is_aligned() {
        let rows = vec![
            TableRow {
                method: "jdl".into(),
                metric: "scar_dice",
                stats: Stats::from_values(&[0.5, 0.75], 0),
            },
            TableRow {
                method: "direct".into(),
                metric: "myo_dice",
                stats: None,
            },
        ];
        let text = table_text(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let col = lines[0].find("mean").unwrap();
        assert_eq!(lines[1].find("0.6250").unwrap() + 6, col + 4);
        assert_eq!(table_csv(&rows).lines().nth(2).unwrap(), "direct,myo_dice,,,,,,,,");
    }
}
