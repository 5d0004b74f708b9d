use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scenarios::Scenario;
use crate::design::{StopReason, TrialRecord};
use crate::error::{Error, Result};

/// Whether early-stopped trials count in the PCS and POS denominators.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EarlyStopDenominator {
    #[default]
    Include,
    Exclude,
}

impl std::str::FromStr for EarlyStopDenominator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "include" => Ok(Self::Include),
            "exclude" => Ok(Self::Exclude),
            other => Err(Error::Parse(format!("unknown early-stop denominator '{other}' (expected include|exclude)"))),
        }
    }
}

/// Operating characteristics in percent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub pcs: f64,
    pub pca: f64,
    pub pos: f64,
    pub poa: f64,
    pub pdlt: f64,
    pub early_stop: f64,
}

pub fn compute_metrics(records: &[TrialRecord], scenario: &Scenario, denominator: EarlyStopDenominator) -> Metrics {
    if records.is_empty() {
        return Metrics::default();
    }
    let n = records.len() as f64;
    let mtd = scenario.mtd_index;
    let stopped = records.iter().filter(|r| r.stop_reason == Some(StopReason::Safety)).count();
    let selection_base = match denominator {
        EarlyStopDenominator::Include => records.len(),
        EarlyStopDenominator::Exclude => records.iter().filter(|r| r.stop_reason.is_none()).count(),
    };
    let pct = |count: usize| if selection_base == 0 { 0.0 } else { 100.0 * count as f64 / selection_base as f64 };
    let correct = records.iter().filter(|r| r.recommendation == Some(mtd)).count();
    let over = records.iter().filter(|r| r.recommendation.is_some_and(|d| d > mtd)).count();
    let share = |f: &dyn Fn(&TrialRecord) -> usize| {
        100.0 * records.iter().map(|r| if r.enrolled == 0 { 0.0 } else { f(r) as f64 / r.enrolled as f64 }).sum::<f64>() / n
    };
    Metrics {
        pcs: pct(correct),
        pca: share(&|r| r.allocation[mtd - 1]),
        pos: pct(over),
        poa: share(&|r| r.allocation[mtd..].iter().sum()),
        pdlt: share(&|r| r.dlts),
        early_stop: 100.0 * stopped as f64 / n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: u32,
    pub design: String,
    pub r: f64,
    pub reps: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

fn round2(x: f64) -> f64 {
    format!("{x:.2}").parse().expect("formatted float parses")
}

impl MetricsTable {
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            (a.scenario, &a.design).cmp(&(b.scenario, &b.design)).then(a.r.total_cmp(&b.r))
        });
    }

    pub fn extend(&mut self, other: MetricsTable) {
        self.rows.extend(other.rows);
        self.sort();
    }

    pub fn get(&self, scenario: u32, design: &str, r: f64) -> Option<&Metrics> {
        self.rows
            .iter()
            .find(|row| row.scenario == scenario && row.design == design && row.r == r)
            .map(|row| &row.metrics)
    }

    /// The table as it reads back from CSV: every metric at two decimals.
    pub fn rounded(&self) -> MetricsTable {
        let mut t = self.clone();
        for row in &mut t.rows {
            let m = &mut row.metrics;
            for v in [&mut m.pcs, &mut m.pca, &mut m.pos, &mut m.poa, &mut m.pdlt, &mut m.early_stop] {
                *v = round2(*v);
            }
            row.r = round2(row.r);
        }
        t
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut sorted = self.clone();
        sorted.sort();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HEADER).map_err(csv_err)?;
        for row in &sorted.rows {
            let m = &row.metrics;
            let mut rec = vec![row.scenario.to_string(), row.design.clone(), format!("{:.2}", row.r), row.reps.to_string(), row.seed.to_string()];
            rec.extend([m.pcs, m.pca, m.pos, m.poa, m.pdlt, m.early_stop].iter().map(|v| format!("{v:.2}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn write_results(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers().map_err(csv_err)?.clone();
        if header.iter().ne(HEADER) {
            return Err(Error::Parse(format!("unexpected results header: {}", header.iter().collect::<Vec<_>>().join(","))));
        }
        let mut rows = Vec::new();
        for rec in r.deserialize::<CsvRow>() {
            let c = rec.map_err(csv_err)?;
            rows.push(MetricsRow {
                scenario: c.scenario,
                design: c.design,
                r: c.r,
                reps: c.reps,
                seed: c.seed,
                metrics: Metrics { pcs: c.pcs, pca: c.pca, pos: c.pos, poa: c.poa, pdlt: c.pdlt, early_stop: c.early_stop },
            });
        }
        Ok(MetricsTable { rows })
    }

    pub fn read_results(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

pub const HEADER: [&str; 11] = ["scenario", "design", "r", "reps", "seed", "pcs", "pca", "pos", "poa", "pdlt", "early_stop"];

#[derive(Deserialize)]
struct CsvRow {
    scenario: u32,
    design: String,
    r: f64,
    reps: usize,
    seed: u64,
    pcs: f64,
    pca: f64,
    pos: f64,
    poa: f64,
    pdlt: f64,
    early_stop: f64,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("results csv: {e}"))
}
