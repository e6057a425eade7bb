use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::config::{ExperimentConfig, Scenario};
use crate::experiments::stats::{mean, sample_std};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", content = "reason", rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed(String),
}

impl CellStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, CellStatus::Ok)
    }
}

/// Metrics of one (setting, seed) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub setting: String,
    pub seed: u64,
    pub status: CellStatus,
    pub metrics: BTreeMap<String, f64>,
}

impl CellRecord {
    pub fn ok(setting: impl Into<String>, seed: u64, metrics: impl IntoIterator<Item = (&'static str, f64)>) -> Self {
        CellRecord {
            setting: setting.into(),
            seed,
            status: CellStatus::Ok,
            metrics: metrics.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn failed(setting: impl Into<String>, seed: u64, reason: impl Into<String>) -> Self {
        CellRecord {
            setting: setting.into(),
            seed,
            status: CellStatus::Failed(reason.into()),
            metrics: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub setting: String,
    pub metric: String,
    /// Mean over successful seeds; absent when every seed failed.
    pub mean: Option<f64>,
    /// Sample standard deviation (N - 1 denominator); absent below two values.
    pub std: Option<f64>,
    pub count: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub label: String,
    pub seed: u64,
    pub values: Vec<f64>,
}

/// Plot-ready table; written as `label, seed, columns...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label_column: String,
    pub columns: Vec<String>,
    pub rows: Vec<SeriesRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub code_version: String,
    pub config_hash: String,
    pub setting_hash: String,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
}

impl Provenance {
    pub fn new(config: &ExperimentConfig) -> Self {
        Provenance {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            setting_hash: config.setting_hash(),
            master_seed: config.master_seed,
            seeds: config.seeds.clone(),
            config: config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: Scenario,
    pub cells: Vec<CellRecord>,
    pub aggregates: Vec<Aggregate>,
    /// Scenario-level conclusions such as `lambda_star`.
    pub derived: BTreeMap<String, f64>,
    pub series: BTreeMap<String, Series>,
    pub provenance: Provenance,
}

fn rank_of<'a>(items: impl Iterator<Item = &'a str>) -> HashMap<String, usize> {
    let mut ranks = HashMap::new();
    for s in items {
        let next = ranks.len();
        ranks.entry(s.to_string()).or_insert(next);
    }
    ranks
}

fn aggregates_of(cells: &[CellRecord]) -> Vec<Aggregate> {
    let settings = rank_of(cells.iter().map(|c| c.setting.as_str()));
    let mut order: Vec<(&String, &usize)> = settings.iter().collect();
    order.sort_by_key(|(_, r)| **r);
    let mut out = Vec::new();
    for (setting, _) in order {
        let group: Vec<&CellRecord> = cells.iter().filter(|c| &c.setting == setting).collect();
        let failed = group.iter().filter(|c| !c.status.is_ok()).count();
        let metrics: BTreeSet<&String> = group.iter().flat_map(|c| c.metrics.keys()).collect();
        for metric in metrics {
            let values: Vec<f64> = group
                .iter()
                .filter(|c| c.status.is_ok())
                .filter_map(|c| c.metrics.get(metric).copied())
                .collect();
            out.push(Aggregate {
                setting: setting.clone(),
                metric: metric.clone(),
                mean: mean(&values),
                std: sample_std(&values),
                count: values.len(),
                failed,
            });
        }
    }
    out
}

fn derived_of(scenario: Scenario, aggregates: &[Aggregate]) -> BTreeMap<String, f64> {
    let mut derived = BTreeMap::new();
    if scenario == Scenario::LambdaSweep {
        let best = aggregates
            .iter()
            .filter(|a| a.metric == "student_accuracy")
            .filter_map(|a| Some((a.setting.strip_prefix("lambda=")?.parse::<f64>().ok()?, a.mean?)))
            .fold(None, |best: Option<(f64, f64)>, (l, acc)| match best {
                Some((_, b)) if b >= acc => best,
                _ => Some((l, acc)),
            });
        if let Some((lambda, _)) = best {
            derived.insert("lambda_star".to_string(), lambda);
        }
    }
    derived
}

impl Report {
    /// Puts cells and series rows in canonical order (setting first seen,
    /// then position in the seed list) and recomputes aggregates.
    pub fn assemble(
        config: &ExperimentConfig,
        mut cells: Vec<CellRecord>,
        mut series: BTreeMap<String, Series>,
    ) -> Report {
        let seed_pos: HashMap<u64, usize> = config.seeds.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let settings = rank_of(cells.iter().map(|c| c.setting.as_str()));
        cells.sort_by_key(|c| (settings[&c.setting], seed_pos.get(&c.seed).copied().unwrap_or(usize::MAX)));
        for s in series.values_mut() {
            let labels = rank_of(s.rows.iter().map(|r| r.label.as_str()));
            s.rows
                .sort_by_key(|r| (labels[&r.label], seed_pos.get(&r.seed).copied().unwrap_or(usize::MAX)));
        }
        let aggregates = aggregates_of(&cells);
        Report {
            scenario: config.scenario,
            derived: derived_of(config.scenario, &aggregates),
            cells,
            aggregates,
            series,
            provenance: Provenance::new(config),
        }
    }

    pub fn aggregate_for(&self, setting: &str, metric: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.setting == setting && a.metric == metric)
    }

    pub fn mean_of(&self, setting: &str, metric: &str) -> Option<f64> {
        self.aggregate_for(setting, metric)?.mean
    }

    pub fn failed_cells(&self) -> impl Iterator<Item = &CellRecord> {
        self.cells.iter().filter(|c| !c.status.is_ok())
    }

    /// `cells.csv`: one row per (setting, seed) with the union of metric columns.
    pub fn cells_csv(&self) -> Result<Vec<u8>> {
        let metrics: BTreeSet<&String> = self.cells.iter().flat_map(|c| c.metrics.keys()).collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["setting", "seed", "status"];
        header.extend(metrics.iter().map(|m| m.as_str()));
        w.write_record(&header)?;
        for c in &self.cells {
            let mut row = vec![
                c.setting.clone(),
                c.seed.to_string(),
                match &c.status {
                    CellStatus::Ok => "ok".to_string(),
                    CellStatus::Failed(reason) => format!("failed: {reason}"),
                },
            ];
            row.extend(
                metrics
                    .iter()
                    .map(|m| c.metrics.get(*m).map(|v| v.to_string()).unwrap_or_default()),
            );
            w.write_record(&row)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    fn series_csv(series: &Series) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![series.label_column.as_str(), "seed"];
        header.extend(series.columns.iter().map(|c| c.as_str()));
        w.write_record(&header)?;
        for r in &series.rows {
            let mut row = vec![r.label.clone(), r.seed.to_string()];
            row.extend(r.values.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    /// Writes `cells.csv`, `summary.json` and one CSV per series into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("cells.csv"), self.cells_csv()?)?;
        let summary = serde_json::json!({
            "scenario": self.scenario,
            "aggregates": self.aggregates,
            "derived": self.derived,
            "failed_cells": self.failed_cells().collect::<Vec<_>>(),
            "provenance": self.provenance,
        });
        let mut text = serde_json::to_string_pretty(&summary)?;
        text.push('\n');
        fs::write(dir.join("summary.json"), text)?;
        for (name, s) in &self.series {
            fs::write(dir.join(format!("{name}.csv")), Self::series_csv(s)?)?;
        }
        Ok(())
    }
}

/// Pools reports over disjoint seed sets of one setting.
pub fn aggregate(reports: &[Report]) -> Result<Report> {
    let first = reports.first().ok_or_else(|| Error::KeyMismatch("no reports to aggregate".into()))?;
    let settings = |r: &Report| r.cells.iter().map(|c| c.setting.clone()).collect::<BTreeSet<_>>();
    let keys = settings(first);
    let mut seeds: Vec<u64> = Vec::new();
    for r in reports {
        if r.scenario != first.scenario {
            return Err(Error::KeyMismatch(format!(
                "scenario {} vs {}",
                r.scenario.name(),
                first.scenario.name()
            )));
        }
        if r.provenance.setting_hash != first.provenance.setting_hash {
            return Err(Error::KeyMismatch("reports come from different settings".into()));
        }
        if settings(r) != keys {
            return Err(Error::KeyMismatch("reports cover different setting keys".into()));
        }
        for &s in &r.provenance.seeds {
            if seeds.contains(&s) {
                return Err(Error::KeyMismatch(format!("seed {s} appears in more than one report")));
            }
            seeds.push(s);
        }
    }
    let config = ExperimentConfig {
        seeds,
        ..first.provenance.config.clone()
    };
    let cells = reports.iter().flat_map(|r| r.cells.iter().cloned()).collect();
    let mut series: BTreeMap<String, Series> = BTreeMap::new();
    for r in reports {
        for (name, s) in &r.series {
            match series.get_mut(name) {
                Some(acc) => acc.rows.extend(s.rows.iter().cloned()),
                None => {
                    series.insert(name.clone(), s.clone());
                }
            }
        }
    }
    // Settings are ranked by first appearance, which is the first report's order.
    let report = Report::assemble(&config, cells, series);
    Ok(report)
}
