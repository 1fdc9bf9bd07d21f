//! Evaluation under every corruption of the requested severity levels.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::model::{evaluate, DetectionSource};
use crate::corruptions::{condition_suite, CorruptionConfig, Level};
use crate::error::Result;
use crate::metrics::{EvalReport, METRICS_HEADER};
use crate::synth::{map_images, Sample};

#[derive(Debug, Clone)]
pub struct RobustnessRow {
    pub config: CorruptionConfig,
    pub report: EvalReport,
}

impl RobustnessRow {
    pub fn condition(&self) -> &'static str {
        self.config.corruption.kind()
    }

    pub fn level(&self) -> &'static str {
        self.config.level.map(|l| l.name()).unwrap_or("custom")
    }
}

/// Corrupts the samples with every condition of every level, in order, and
/// evaluates each corrupted set.
pub fn robustness(
    source: &dyn DetectionSource,
    samples: &[Sample],
    levels: &[Level],
    seed: u64,
    score_threshold: f64,
) -> Result<Vec<RobustnessRow>> {
    let mut rows = Vec::new();
    for &level in levels {
        for config in condition_suite(level, seed) {
            let corrupted = map_images(samples, |i, img| config.apply(img, i as u64))?;
            let report = evaluate(source, &corrupted, score_threshold)?;
            rows.push(RobustnessRow { config, report });
        }
    }
    Ok(rows)
}

pub const LONG_HEADER: &str = "condition,level,parameters,metric,class,threshold,value";

/// All rows in one long-format table.
pub fn long_csv(rows: &[RobustnessRow]) -> String {
    let mut s = String::from(LONG_HEADER);
    s.push('\n');
    for r in rows {
        for m in r.report.csv_rows() {
            let _ = writeln!(
                s,
                "{},{},\"{}\",{m}",
                r.condition(),
                r.level(),
                r.config.corruption
            );
        }
    }
    s
}

/// Writes `robustness_<condition>_<level>.csv` per row plus
/// `robustness.csv`.
pub fn write_robustness(rows: &[RobustnessRow], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for r in rows {
        let path = dir.join(format!("robustness_{}_{}.csv", r.condition(), r.level()));
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for m in r.report.csv_rows() {
            s.push_str(&m);
            s.push('\n');
        }
        fs::write(path, s)?;
    }
    fs::write(dir.join("robustness.csv"), long_csv(rows))?;
    Ok(())
}
