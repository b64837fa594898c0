//! Aggregate statistics, plot data and the attack-versus-baseline table.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{AttackKind, ExperimentConfig, Scale};
use super::run::RepetitionRecord;
use crate::error::{Error, Result};
use crate::fairness::FairnessReport;

pub const MANIFEST_FILE: &str = "config.json";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

/// Resolved configuration stored alongside results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scale: Scale,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Reporting(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesRole {
    Pretrained,
    Attack,
    Baseline,
}

/// Mean and standard error over the successful repetitions of one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: String,
    pub label: String,
    pub panel: String,
    pub x: String,
    pub series: String,
    pub role: SeriesRole,
    pub n_ok: usize,
    pub n_failed: usize,
    /// Repetitions with a defined increment ratio.
    pub ratio_n: usize,
    pub ratio_mean: Option<f64>,
    pub ratio_stderr: Option<f64>,
    pub delta_mean: Option<f64>,
    pub delta_stderr: Option<f64>,
    pub aeod_before_mean: Option<f64>,
    pub aeod_after_mean: Option<f64>,
    pub aeod_after_stderr: Option<f64>,
    pub acc_before_mean: Option<f64>,
    pub acc_before_stderr: Option<f64>,
    pub acc_after_mean: Option<f64>,
    pub acc_after_stderr: Option<f64>,
}

/// Sample mean and standard error (sample standard deviation over
/// `sqrt(k)`); the error is 0 for a single value.
pub fn mean_stderr(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let k = values.len();
    if k == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return (Some(mean), Some(0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (Some(mean), Some((var / k as f64).sqrt()))
}

fn series_row(
    base: &AggregateRow,
    series: String,
    role: SeriesRole,
    reports: &[&FairnessReport],
    n_failed: usize,
) -> AggregateRow {
    let col = |f: fn(&FairnessReport) -> f64| reports.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let ratios: Vec<f64> = reports.iter().filter_map(|r| r.increment_ratio).collect();
    let (ratio_mean, ratio_stderr) = mean_stderr(&ratios);
    let (delta_mean, delta_stderr) = mean_stderr(&col(|r| r.aeod_delta));
    let (aeod_after_mean, aeod_after_stderr) = mean_stderr(&col(|r| r.aeod_after));
    let (acc_before_mean, acc_before_stderr) = mean_stderr(&col(|r| r.test_acc_before));
    let (acc_after_mean, acc_after_stderr) = mean_stderr(&col(|r| r.test_acc_after));
    AggregateRow {
        series,
        role,
        n_ok: reports.len(),
        n_failed,
        ratio_n: ratios.len(),
        ratio_mean,
        ratio_stderr,
        delta_mean,
        delta_stderr,
        aeod_before_mean: mean_stderr(&col(|r| r.aeod_before)).0,
        aeod_after_mean,
        aeod_after_stderr,
        acc_before_mean,
        acc_before_stderr,
        acc_after_mean,
        acc_after_stderr,
        ..base.clone()
    }
}

/// One row per (scenario, series), in configuration order.
pub fn aggregate(config: &ExperimentConfig, records: &[Vec<RepetitionRecord>]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for (si, (s, recs)) in config.scenarios.iter().zip(records).enumerate() {
        let ok: Vec<_> = recs.iter().filter_map(RepetitionRecord::result).collect();
        let n_failed = recs.len() - ok.len();
        let base = AggregateRow {
            scenario: s.directory(si),
            label: s.label.clone(),
            panel: s.panel.clone().unwrap_or_default(),
            x: s.x.clone().unwrap_or_default(),
            series: String::new(),
            role: SeriesRole::Pretrained,
            n_ok: 0,
            n_failed,
            ratio_n: 0,
            ratio_mean: None,
            ratio_stderr: None,
            delta_mean: None,
            delta_stderr: None,
            aeod_before_mean: None,
            aeod_after_mean: None,
            aeod_after_stderr: None,
            acc_before_mean: None,
            acc_before_stderr: None,
            acc_after_mean: None,
            acc_after_stderr: None,
        };
        if s.attack == AttackKind::None {
            let pre: Vec<FairnessReport> = ok
                .iter()
                .map(|r| FairnessReport::new(&s.attribute, r.pre_aeod, r.pre_aeod, r.pre_test_accuracy, r.pre_test_accuracy))
                .collect();
            let refs: Vec<&FairnessReport> = pre.iter().collect();
            let mut row = series_row(&base, s.series.clone().unwrap_or_else(|| "pretrained".into()), SeriesRole::Pretrained, &refs, n_failed);
            row.ratio_n = 0;
            row.ratio_mean = None;
            row.ratio_stderr = None;
            rows.push(row);
            continue;
        }
        let attack: Vec<&FairnessReport> = ok.iter().filter_map(|r| r.attack.as_ref().map(|a| &a.report)).collect();
        rows.push(series_row(&base, s.attack_series(), SeriesRole::Attack, &attack, n_failed));
        for kind in &s.baselines {
            let reports: Vec<&FairnessReport> = ok
                .iter()
                .filter_map(|r| r.baselines.iter().find(|b| b.kind == *kind).map(|b| &b.report))
                .collect();
            rows.push(series_row(&base, s.baseline_series(*kind), SeriesRole::Baseline, &reports, n_failed));
        }
    }
    rows
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Reporting(format!("{}: {e}", path.display())))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::Reporting(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Reporting(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<AggregateRow>, _>>()
        .map_err(|e| Error::Reporting(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub x: String,
    pub series: String,
    pub y: Option<f64>,
    pub yerr: Option<f64>,
}

fn file_stem(panel: &str) -> String {
    panel
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes `plot_<panel>.csv` (x, series, mean increment ratio, standard
/// error) for every panel named in the configuration.
pub fn write_plot_data(dir: &Path, rows: &[AggregateRow]) -> Result<Vec<std::path::PathBuf>> {
    let mut panels: BTreeMap<&str, Vec<PlotPoint>> = BTreeMap::new();
    for row in rows.iter().filter(|r| !r.panel.is_empty() && r.role != SeriesRole::Pretrained) {
        panels.entry(&row.panel).or_default().push(PlotPoint {
            x: row.x.clone(),
            series: row.series.clone(),
            y: row.ratio_mean,
            yerr: row.ratio_stderr,
        });
    }
    let mut written = Vec::new();
    for (panel, points) in panels {
        let path = dir.join(format!("plot_{}.csv", file_stem(panel)));
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Reporting(e.to_string()))?;
        for p in points {
            w.serialize(p).map_err(|e| Error::Reporting(e.to_string()))?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStat {
    pub series: String,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub label: String,
    pub attack: SeriesStat,
    pub baselines: Vec<SeriesStat>,
    /// Attack mean increment ratio strictly above every baseline mean.
    pub attack_dominates: bool,
}

pub fn attack_dominates(attack: f64, baselines: &[f64]) -> bool {
    !baselines.is_empty() && baselines.iter().all(|&b| attack > b)
}

/// Attack-versus-baseline table for every scenario in a results directory
/// that configures baselines.
pub fn compare_baselines(dir: &Path) -> Result<Vec<ComparisonRow>> {
    let manifest = RunManifest::read(dir)?;
    let rows = read_aggregate(&dir.join(AGGREGATE_FILE))?;
    let mut table = Vec::new();
    let mut missing = Vec::new();
    for (si, s) in manifest.config.scenarios.iter().enumerate() {
        if s.attack == AttackKind::None || s.baselines.is_empty() {
            continue;
        }
        let scenario = s.directory(si);
        let mut stat = |series: String| {
            let found = rows
                .iter()
                .find(|r| r.scenario == scenario && r.series == series)
                .and_then(|r| Some(SeriesStat {
                    series: series.clone(),
                    mean: r.ratio_mean?,
                    stderr: r.ratio_stderr?,
                }));
            if found.is_none() {
                missing.push(format!("{scenario}/{series}"));
            }
            found
        };
        let attack = stat(s.attack_series());
        let baselines: Vec<Option<SeriesStat>> = s.baselines.iter().map(|k| stat(s.baseline_series(*k))).collect();
        if let (Some(attack), Some(baselines)) = (attack, baselines.into_iter().collect::<Option<Vec<_>>>()) {
            let means: Vec<f64> = baselines.iter().map(|b| b.mean).collect();
            table.push(ComparisonRow {
                scenario,
                label: s.label.clone(),
                attack_dominates: attack_dominates(attack.mean, &means),
                attack,
                baselines,
            });
        }
    }
    if !missing.is_empty() {
        return Err(Error::Reporting(format!(
            "no successful repetitions with a defined increment ratio for: {}",
            missing.join(", ")
        )));
    }
    Ok(table)
}
