//! Experiment orchestration on top of the training loop: single runs,
//! multi-seed ablation sweeps, spectrum analysis, and the file formats the
//! CLI speaks (metrics JSONL, CSV reports, raw matrix files).

use crate::checkpoint;
use crate::config::{build_dataset, build_model, AdapterVariant, RunConfig};
use crate::error::{Error, Result};
use crate::matrix::RealMatrix;
use crate::parallel;
use crate::rng_util::derive_seed;
use crate::spectral::radial_psd;
use crate::train::{evaluate, train, EpochEval, RunLog, TrainState};
use std::io::Write;
use std::path::Path;

/// Outcome of one training run.
pub struct RunResult {
    pub state: TrainState,
    pub log: RunLog,
    pub final_eval: EpochEval,
}

/// Builds the model and dataset a config describes and trains to completion.
pub fn run(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let model = build_model(cfg)?;
    let dataset = build_dataset(cfg)?;
    let (state, log) = train(TrainState::new(model), &dataset, &cfg.train_options(), cfg.seed)?;
    let final_eval = match log.evals.last() {
        Some(e) => e.clone(),
        None => evaluate(&state.model, &dataset)?,
    };
    Ok(RunResult {
        state,
        log,
        final_eval,
    })
}

/// One ablation measurement.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: &'static str,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// Runs the full method plus the requested variants over `seeds` seeds each,
/// holding every other hyperparameter fixed. Runs execute in parallel; rows
/// come back ordered (variant-major, then seed) for deterministic reports.
pub fn ablate(
    cfg: &RunConfig,
    variants: &[AdapterVariant],
    seeds: u64,
) -> Result<Vec<AblationRow>> {
    let mut jobs: Vec<(AdapterVariant, u64)> = Vec::new();
    let mut all = vec![AdapterVariant::Full];
    all.extend_from_slice(variants);
    for v in &all {
        for s in 0..seeds {
            jobs.push((*v, derive_seed(cfg.seed, 7000 + s)));
        }
    }
    let results = parallel::map_slice(&jobs, |(variant, seed)| -> Result<AblationRow> {
        let mut run_cfg = cfg.clone();
        run_cfg.variant = *variant;
        run_cfg.seed = *seed;
        run_cfg.task.seed = *seed;
        let result = run(&run_cfg)?;
        Ok(AblationRow {
            variant: variant.slug(),
            seed: *seed,
            metric: result.final_eval.eval_metric,
            value: result.final_eval.eval_value,
        })
    });
    results.into_iter().collect()
}

/// Mean metric value per variant, in first-appearance order.
pub fn ablation_means(rows: &[AblationRow]) -> Vec<(&'static str, f64)> {
    let mut order: Vec<&'static str> = Vec::new();
    for r in rows {
        if !order.contains(&r.variant) {
            order.push(r.variant);
        }
    }
    order
        .into_iter()
        .map(|v| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.variant == v)
                .map(|r| r.value)
                .collect();
            (v, vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

/// Writes the per-step metrics log: newline-delimited UTF-8 JSON objects,
/// one per optimizer step.
pub fn write_metrics_jsonl(path: &Path, log: &RunLog) -> Result<()> {
    let mut out = String::new();
    for rec in &log.steps {
        out.push_str(&serde_json::to_string(rec).expect("step record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes per-epoch evaluations as JSONL.
pub fn write_evals_jsonl(path: &Path, log: &RunLog) -> Result<()> {
    let mut out = String::new();
    for rec in &log.evals {
        out.push_str(&serde_json::to_string(rec).expect("eval record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Raw matrix interchange format: rows u32 LE, cols u32 LE, then row-major
/// f64 LE payload.
pub fn write_matrix_file(path: &Path, m: &RealMatrix) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + 8 * m.data().len());
    buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_matrix_file(path: &Path) -> Result<RealMatrix> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::Corrupt("matrix file shorter than its header".into()));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Corrupt("matrix file declares a zero dimension".into()));
    }
    let expected = 8 + 8 * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Corrupt(format!(
            "matrix file holds {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let data = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(RealMatrix::from_vec(rows, cols, data))
}

/// One radially binned PSD row of the spectrum-analysis report.
#[derive(Debug, Clone)]
pub struct SpectrumRow {
    pub source: String,
    pub bin: usize,
    pub mean_power: f64,
}

/// Per-expert radial PSD of every reconstructed update in a checkpoint.
pub fn analyze_checkpoint_spectrum(path: &Path, bins: usize) -> Result<Vec<SpectrumRow>> {
    let (model, _) = checkpoint::load_checkpoint(path)?;
    let mut rows = Vec::new();
    for (s, site) in model.sites().iter().enumerate() {
        for (i, expert) in site.experts().iter().enumerate() {
            let psd = radial_psd(&expert.reconstruct(), bins)?;
            for (b, p) in psd.iter().enumerate() {
                rows.push(SpectrumRow {
                    source: format!("site{s}/expert{i}"),
                    bin: b,
                    mean_power: *p,
                });
            }
        }
    }
    Ok(rows)
}

/// Radial PSD of a raw matrix file.
pub fn analyze_matrix_spectrum(path: &Path, bins: usize) -> Result<Vec<SpectrumRow>> {
    let m = read_matrix_file(path)?;
    let psd = radial_psd(&m, bins)?;
    Ok(psd
        .iter()
        .enumerate()
        .map(|(b, p)| SpectrumRow {
            source: "matrix".into(),
            bin: b,
            mean_power: *p,
        })
        .collect())
}

/// CSV with a header row, '.' decimal separator, '\n' line endings, and
/// shortest round-trip float formatting.
pub fn spectrum_csv(rows: &[SpectrumRow]) -> String {
    let mut out = String::from("source,bin,mean_power\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.source, r.bin, r.mean_power));
    }
    out
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,seed,metric,value\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.variant, r.seed, r.metric, r.value));
    }
    out.push_str("variant,mean,,\n");
    for (v, mean) in ablation_means(rows) {
        out.push_str(&format!("{v},{mean},,\n"));
    }
    out
}

/// Summary row for `report`: one line per run directory.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub run: String,
    pub steps: usize,
    pub final_loss_total: f64,
    pub eval_metric: String,
    pub eval_value: f64,
    pub trainable_params: usize,
}

/// Scans run directories (each holding `metrics.jsonl`, `eval.jsonl`, and
/// `checkpoint.fmoe`) under `root`, ordered by name.
pub fn collect_report(root: &Path) -> Result<Vec<ReportRow>> {
    let mut dirs: Vec<_> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    dirs.sort();
    let mut rows = Vec::new();
    for dir in dirs {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let metrics = dir.join("metrics.jsonl");
        let evals = dir.join("eval.jsonl");
        let ckpt = dir.join("checkpoint.fmoe");
        if !metrics.exists() || !ckpt.exists() {
            continue;
        }
        let steps_text = std::fs::read_to_string(&metrics)?;
        let steps: Vec<crate::train::StepRecord> = steps_text
            .lines()
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Corrupt(format!("bad metrics line in {name}: {e}")))?;
        let final_loss_total = steps.last().map(|s| s.loss_total).unwrap_or(f64::NAN);

        let (eval_metric, eval_value) = if evals.exists() {
            let text = std::fs::read_to_string(&evals)?;
            let last: Option<EpochEval> = text
                .lines()
                .last()
                .map(serde_json::from_str)
                .transpose()
                .map_err(|e| Error::Corrupt(format!("bad eval line in {name}: {e}")))?;
            match last {
                Some(e) => (e.eval_metric, e.eval_value),
                None => ("none".into(), f64::NAN),
            }
        } else {
            ("none".into(), f64::NAN)
        };

        let (model, _) = checkpoint::load_checkpoint(&ckpt)?;
        rows.push(ReportRow {
            run: name,
            steps: steps.len(),
            final_loss_total,
            eval_metric,
            eval_value,
            trainable_params: model.num_params(),
        });
    }
    Ok(rows)
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("run,steps,final_loss_total,eval_metric,eval_value,trainable_params\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.run, r.steps, r.final_loss_total, r.eval_metric, r.eval_value, r.trainable_params
        ));
    }
    out
}

/// Writes a string to a file, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.mat");
        let m = RealMatrix::from_vec(3, 4, (0..12).map(|i| i as f64 * 0.5 - 2.0).collect());
        write_matrix_file(&path, &m).unwrap();
        let back = read_matrix_file(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn matrix_file_rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.mat");
        let m = RealMatrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        write_matrix_file(&path, &m).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        assert!(read_matrix_file(&path).is_err());
    }

    #[test]
    fn csv_uses_header_and_newlines() {
        let rows = vec![
            SpectrumRow {
                source: "matrix".into(),
                bin: 0,
                mean_power: 1.25,
            },
            SpectrumRow {
                source: "matrix".into(),
                bin: 1,
                mean_power: 0.0,
            },
        ];
        let csv = spectrum_csv(&rows);
        assert_eq!(csv, "source,bin,mean_power\nmatrix,0,1.25\nmatrix,1,0\n");
    }
}
