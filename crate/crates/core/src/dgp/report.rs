//! CSV tables and the JSON run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::study::{CoverageStudy, DnnStudyRow, PowerStudy};
use crate::error::Result;

fn level_label(x: f64) -> String {
    format!("{x}")
}

/// Serialize `rows` to `dir/name` with a header row.
pub fn write_rows<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_path(dir.join(name))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(name.to_string())
}

fn write_table(dir: &Path, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_path(dir.join(name))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(name.to_string())
}

/// One row per `(dgp, T, π)`, one column per nominal level.
pub fn coverage_table(study: &CoverageStudy) -> (Vec<String>, Vec<Vec<String>>) {
    let mut levels: Vec<f64> = Vec::new();
    let mut keys: Vec<(String, usize, String)> = Vec::new();
    let mut rows: Vec<(Vec<String>, BTreeMap<String, f64>)> = Vec::new();
    for c in &study.cells {
        if !levels.contains(&c.nominal) {
            levels.push(c.nominal);
        }
        let key = (c.dgp.clone(), c.t, level_label(c.pi));
        let idx = match keys.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                keys.push(key);
                rows.push((
                    vec![c.dgp.clone(), c.t.to_string(), level_label(c.pi), c.n_ok.to_string(), c.n_failed.to_string()],
                    BTreeMap::new(),
                ));
                keys.len() - 1
            }
        };
        rows[idx].1.insert(level_label(c.nominal), c.coverage);
    }
    let mut header: Vec<String> = ["dgp", "T", "pi", "n_ok", "n_failed"].iter().map(|s| s.to_string()).collect();
    header.extend(levels.iter().map(|l| format!("coverage_{}", level_label(*l))));
    let body = rows
        .into_iter()
        .map(|(mut lead, cells)| {
            lead.extend(levels.iter().map(|l| cells.get(&level_label(*l)).map_or(String::new(), |v| v.to_string())));
            lead
        })
        .collect();
    (header, body)
}

/// One row per `(dgp, method, π, T)`, one column per test level.
pub fn power_table(study: &PowerStudy) -> (Vec<String>, Vec<Vec<String>>) {
    let mut levels: Vec<f64> = Vec::new();
    let mut order: Vec<(String, String, String, usize)> = Vec::new();
    let mut cells: Vec<(Vec<String>, BTreeMap<String, f64>)> = Vec::new();
    for c in &study.cells {
        if !levels.contains(&c.alpha) {
            levels.push(c.alpha);
        }
        let key = (c.dgp.clone(), c.method.clone(), level_label(c.pi), c.t);
        let idx = match order.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                order.push(key);
                cells.push((
                    vec![
                        c.dgp.clone(),
                        c.method.clone(),
                        level_label(c.pi),
                        c.t.to_string(),
                        c.n_ok.to_string(),
                        c.n_failed.to_string(),
                    ],
                    BTreeMap::new(),
                ));
                order.len() - 1
            }
        };
        cells[idx].1.insert(level_label(c.alpha), c.rejection_rate);
    }
    // group rows as dgp blocks, then method, then π, then T
    let mut idx: Vec<usize> = (0..order.len()).collect();
    idx.sort_by_key(|&i| {
        let first_dgp = order.iter().position(|k| k.0 == order[i].0).unwrap_or(0);
        let first_method = order.iter().position(|k| k.1 == order[i].1).unwrap_or(0);
        let first_pi = order.iter().position(|k| k.2 == order[i].2).unwrap_or(0);
        (first_dgp, first_method, first_pi, order[i].3)
    });
    let mut header: Vec<String> = ["dgp", "method", "pi", "T", "n_ok", "n_failed"].iter().map(|s| s.to_string()).collect();
    header.extend(levels.iter().map(|l| format!("alpha_{}", level_label(*l))));
    let body = idx
        .into_iter()
        .map(|i| {
            let (lead, map) = &cells[i];
            let mut row = lead.clone();
            row.extend(levels.iter().map(|l| map.get(&level_label(*l)).map_or(String::new(), |v| v.to_string())));
            row
        })
        .collect();
    (header, body)
}

/// Writes `coverage.csv`, `samples.csv` and `failures.csv`; returns the names.
pub fn write_coverage(study: &CoverageStudy, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let (header, rows) = coverage_table(study);
    Ok(vec![
        write_table(dir, "coverage.csv", &header, &rows)?,
        write_rows(dir, "samples.csv", &study.samples)?,
        write_failures(dir, study.failures.as_slice())?,
    ])
}

/// Writes only the per-replication Δ / ER samples and failures.
pub fn write_samples(study: &CoverageStudy, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    Ok(vec![
        write_rows(dir, "samples.csv", &study.samples)?,
        write_failures(dir, study.failures.as_slice())?,
    ])
}

/// Writes `power.csv`, `statistics.csv` and `failures.csv`.
pub fn write_power(study: &PowerStudy, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let (header, rows) = power_table(study);
    Ok(vec![
        write_table(dir, "power.csv", &header, &rows)?,
        write_rows(dir, "statistics.csv", &study.samples)?,
        write_failures(dir, study.failures.as_slice())?,
    ])
}

pub fn write_dnn(rows: &[DnnStudyRow], dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    Ok(vec![write_rows(dir, "dnn.csv", rows)?])
}

fn write_failures(dir: &Path, failures: &[super::study::RepFailure]) -> Result<String> {
    let name = "failures.csv";
    let mut w = csv::Writer::from_path(dir.join(name))?;
    w.write_record(["dgp", "T", "pi", "rep", "method", "message"])?;
    for f in failures {
        w.serialize(f)?;
    }
    w.flush()?;
    Ok(name.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub master_seed: u64,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub files: Vec<String>,
    /// The only field that differs between otherwise identical runs.
    pub wall_time_secs: f64,
}

pub const MANIFEST_NAME: &str = "manifest.json";

impl Manifest {
    pub fn new(command: &str, master_seed: u64, config: serde_json::Value, files: Vec<String>, wall_time_secs: f64) -> Self {
        Self {
            tool: "oos-infer".into(),
            version: format!("v{}", env!("CARGO_PKG_VERSION")),
            command: command.into(),
            master_seed,
            config_hash: crate::mdh::config_hash(&config),
            config,
            files,
            wall_time_secs,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST_NAME), text)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_NAME))?)?)
    }
}
