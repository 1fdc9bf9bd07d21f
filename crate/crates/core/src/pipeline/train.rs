//! Training runs: data, train-hold rounds, per-epoch validation, final test
//! metrics and run-directory output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::model::{evaluate, Model};
use crate::config::RunConfig;
use crate::ebrrl::{EpisodeReport, Orchestrator, TrainSet, EPISODE_HEADER};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::nets::Target;
use crate::synth::{self, Dataset};
use crate::tensor::Image;

/// The configured dataset: loaded from `data_dir` or generated from `seed`.
pub fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let ds = match &cfg.data_dir {
        Some(dir) => synth::load_dataset(dir)?,
        None => synth::generate_dataset(
            cfg.train_samples,
            cfg.val_samples,
            cfg.test_samples,
            cfg.seed,
            cfg.image_size,
        )?,
    };
    if ds.train.is_empty() || ds.test.is_empty() {
        return Err(Error::domain("dataset needs training and test samples"));
    }
    let wrong = ds
        .train
        .iter()
        .chain(&ds.val)
        .chain(&ds.test)
        .find(|s| s.image.rows() != cfg.image_size || s.image.cols() != cfg.image_size);
    if let Some(s) = wrong {
        return Err(Error::shape(
            (cfg.image_size, cfg.image_size),
            (s.image.rows(), s.image.cols()),
        ));
    }
    Ok(ds)
}

pub const EPOCH_METRICS_HEADER: &str = "epoch,metric,class,threshold,value";

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub episodes: Vec<EpisodeReport>,
    /// `epoch,metric,class,threshold,value` rows on the validation split.
    pub epoch_metrics: Vec<String>,
    pub test_report: EvalReport,
}

impl TrainOutcome {
    pub fn episodes_csv(&self) -> String {
        let mut s = String::from(EPISODE_HEADER);
        s.push('\n');
        for e in &self.episodes {
            s.push_str(&e.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn epoch_metrics_csv(&self) -> String {
        let mut s = String::from(EPOCH_METRICS_HEADER);
        s.push('\n');
        for r in &self.epoch_metrics {
            s.push_str(r);
            s.push('\n');
        }
        s
    }
}

/// Trains per `cfg`. With `run_dir`, writes the effective config, episode
/// and metric CSVs and the final checkpoint there. `on_round` sees every
/// episode report as it is produced.
pub fn train(
    cfg: &RunConfig,
    data: &Dataset,
    run_dir: Option<&Path>,
    on_round: &mut dyn FnMut(&EpisodeReport),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(dir) = run_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.cfg"), cfg.render())?;
    }
    let model = Model::new(cfg)?;
    let mut orch = Orchestrator::new(cfg.train_hold_config(), model.detector, model.predictor)?;
    let images: Vec<Image> = data.train.iter().map(|s| s.image.clone()).collect();
    let targets: Vec<Vec<Target>> = data
        .train
        .iter()
        .map(|s| {
            s.boxes
                .iter()
                .map(|b| Target::from_pixels(&b.to_bbox(), b.class.id(), cfg.image_size))
                .collect()
        })
        .collect();
    let set = TrainSet {
        images: &images,
        targets: &targets,
    };
    let mut episodes = Vec::with_capacity(cfg.epochs);
    let mut epoch_metrics = Vec::new();
    let snapshot = |orch: &Orchestrator| Model {
        config: cfg.clone(),
        predictor: orch.stem.as_ref().map(|a| a.predictor.clone()),
        detector: orch.detector.clone(),
    };
    for epoch in 1..=cfg.epochs {
        let report = orch.train_hold_step(set)?;
        on_round(&report);
        episodes.push(report);
        let due = cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        if due && !data.val.is_empty() {
            let r = evaluate(&snapshot(&orch), &data.val, cfg.score_threshold)?;
            epoch_metrics.extend(r.csv_rows().into_iter().map(|row| format!("{epoch},{row}")));
        }
    }
    let model = snapshot(&orch);
    let test_report = evaluate(&model, &data.test, cfg.score_threshold)?;
    let outcome = TrainOutcome {
        model,
        episodes,
        epoch_metrics,
        test_report,
    };
    if let Some(dir) = run_dir {
        fs::write(dir.join("episodes.csv"), outcome.episodes_csv())?;
        fs::write(dir.join("metrics_epoch.csv"), outcome.epoch_metrics_csv())?;
        fs::write(dir.join("metrics.csv"), outcome.test_report.to_csv())?;
        fs::write(
            dir.join("confusion.csv"),
            outcome.test_report.confusion_csv(),
        )?;
        outcome.model.save(&dir.join("checkpoint"))?;
    }
    Ok(outcome)
}

pub const ABLATION_HEADER: &str = "model,precision,recall,f1,ap,map,mar";

/// One row of the ablation comparison.
pub fn ablation_row(name: &str, r: &EvalReport) -> String {
    let f = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_else(|| "nan".into());
    format!(
        "{name},{:.6},{:.6},{:.6},{},{},{}",
        r.prf.precision,
        r.prf.recall,
        r.prf.f1,
        f(r.ap50),
        f(r.map),
        f(r.mar)
    )
}

/// The base config and its two ablations, in reporting order.
pub fn ablation_configs(base: &RunConfig) -> Vec<RunConfig> {
    let full = RunConfig {
        stem_block: true,
        spiral_pool: true,
        ..base.clone()
    };
    let no_stem = RunConfig {
        stem_block: false,
        ..full.clone()
    };
    let no_spiral = RunConfig {
        spiral_pool: false,
        ..full.clone()
    };
    vec![full, no_stem, no_spiral]
}

/// Trains the full model and both ablations on the same data and returns
/// the comparison CSV with each run's test report.
pub fn ablation(
    base: &RunConfig,
    data: &Dataset,
    out_dir: Option<&Path>,
) -> Result<(String, Vec<(String, EvalReport)>)> {
    let mut csv = String::from(ABLATION_HEADER);
    csv.push('\n');
    let mut results = Vec::new();
    for cfg in ablation_configs(base) {
        let name = cfg.model_name().to_string();
        let dir = out_dir.map(|d| d.join(&name));
        let outcome = train(&cfg, data, dir.as_deref(), &mut |_| {})?;
        let _ = writeln!(csv, "{}", ablation_row(&name, &outcome.test_report));
        results.push((name, outcome.test_report));
    }
    if let Some(d) = out_dir {
        fs::create_dir_all(d)?;
        fs::write(d.join("ablation.csv"), &csv)?;
    }
    Ok((csv, results))
}
