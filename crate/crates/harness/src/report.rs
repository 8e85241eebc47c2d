//! Cross-seed summaries and plot data.
//!
//! Alignment rule: a seed's value at grid point x is taken from its last
//! record whose axis value does not exceed x. Each method's grid is the union
//! of its seeds' axis values inside the range covered by every seed.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use wgflow::samplers::Method;

use crate::error::{HarnessError, Result};
use crate::experiment::{read_csv, sort_records, MetricsRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Axis {
    Step,
    GradEvals,
}

impl Axis {
    pub const ALL: [Axis; 2] = [Axis::Step, Axis::GradEvals];

    pub fn label(self) -> &'static str {
        match self {
            Axis::Step => "step",
            Axis::GradEvals => "grad",
        }
    }

    pub fn of(self, r: &MetricsRecord) -> u64 {
        match self {
            Axis::Step => r.step,
            Axis::GradEvals => r.grad_evals,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Criterion {
    Kl,
    Fisher,
}

impl Criterion {
    pub const ALL: [Criterion; 2] = [Criterion::Kl, Criterion::Fisher];

    pub fn label(self) -> &'static str {
        match self {
            Criterion::Kl => "kl",
            Criterion::Fisher => "fisher",
        }
    }

    pub fn of(self, r: &MetricsRecord) -> f64 {
        match self {
            Criterion::Kl => r.kl,
            Criterion::Fisher => r.fisher,
        }
    }
}

/// Median and interquartile range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

/// Quantile of ascending `sorted` with linear interpolation between order
/// statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let (a, b) = (sorted[lo], sorted[hi]);
    let frac = pos - lo as f64;
    if a == b || frac == 0.0 {
        a
    } else {
        a + (b - a) * frac
    }
}

pub fn quartiles(values: &[f64]) -> Quartiles {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Quartiles {
        q25: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q75: quantile(&v, 0.75),
    }
}

/// Records of one (method, seed) run, ordered by step.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
}

impl SeedRun {
    /// Last record with axis value ≤ x.
    pub fn at(&self, axis: Axis, x: u64) -> Option<&MetricsRecord> {
        let n = self.records.partition_point(|r| axis.of(r) <= x);
        n.checked_sub(1).map(|i| &self.records[i])
    }

    fn range(&self, axis: Axis) -> (u64, u64) {
        (axis.of(&self.records[0]), axis.of(self.records.last().expect("nonempty run")))
    }
}

/// Groups records by method, then seed.
pub fn group_runs(records: &[MetricsRecord]) -> BTreeMap<Method, Vec<SeedRun>> {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut out: BTreeMap<Method, Vec<SeedRun>> = BTreeMap::new();
    for r in sorted {
        let runs = out.entry(r.method).or_default();
        match runs.last_mut() {
            Some(last) if last.seed == r.seed => last.records.push(r),
            _ => runs.push(SeedRun {
                seed: r.seed,
                records: vec![r],
            }),
        }
    }
    out
}

/// Axis range covered by every seed of a method.
pub fn common_range(runs: &[SeedRun], axis: Axis) -> (u64, u64) {
    runs.iter().map(|s| s.range(axis)).fold((0, u64::MAX), |(lo, hi), (a, b)| (lo.max(a), hi.min(b)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandPoint {
    pub x: u64,
    pub band: Quartiles,
}

/// One panel: a criterion against an axis, one band series per method.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub criterion: Criterion,
    pub axis: Axis,
    pub series: Vec<(Method, Vec<BandPoint>)>,
}

impl Panel {
    pub fn file_name(&self) -> String {
        format!("{}_vs_{}.csv", self.criterion.label(), self.axis.label())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,x,median,q25,q75\n");
        for (method, points) in &self.series {
            for p in points {
                s.push_str(&format!(
                    "{},{},{:.16e},{:.16e},{:.16e}\n",
                    method.label(),
                    p.x,
                    p.band.median,
                    p.band.q25,
                    p.band.q75
                ));
            }
        }
        s
    }
}

/// Per-seed values at a matched axis position.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedFinal {
    pub axis: Axis,
    /// min over methods of each method's common maximum.
    pub x: u64,
    pub values: Vec<(Method, Vec<MetricsRecord>)>,
}

impl MatchedFinal {
    pub fn records(&self, method: Method) -> Option<&[MetricsRecord]> {
        self.values.iter().find(|(m, _)| *m == method).map(|(_, v)| v.as_slice())
    }

    pub fn quartiles(&self, method: Method, c: Criterion) -> Option<Quartiles> {
        self.records(method).map(|v| quartiles(&v.iter().map(|r| c.of(r)).collect::<Vec<_>>()))
    }
}

/// Values of each seed of each listed method at the largest axis position
/// reached by all of them.
pub fn matched_final(groups: &BTreeMap<Method, Vec<SeedRun>>, axis: Axis, methods: &[Method]) -> Option<MatchedFinal> {
    let present: Vec<Method> = methods.iter().copied().filter(|m| groups.contains_key(m)).collect();
    if present.is_empty() {
        return None;
    }
    let x = present.iter().map(|m| common_range(&groups[m], axis).1).min()?;
    let values = present
        .iter()
        .map(|m| {
            let recs = groups[m].iter().filter_map(|s| s.at(axis, x).cloned()).collect();
            (*m, recs)
        })
        .collect();
    Some(MatchedFinal { axis, x, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub axis: Axis,
    pub method: Method,
    pub x: u64,
    pub seeds: usize,
    pub kl: Quartiles,
    pub fisher: Quartiles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub panels: Vec<Panel>,
    pub summary: Vec<SummaryRow>,
}

pub fn build_report(records: &[MetricsRecord]) -> Report {
    let groups = group_runs(records);
    let methods: Vec<Method> = groups.keys().copied().collect();
    let mut panels = Vec::new();
    for axis in Axis::ALL {
        for criterion in Criterion::ALL {
            let series = groups
                .iter()
                .map(|(m, runs)| (*m, bands(runs, axis, criterion)))
                .collect();
            panels.push(Panel { criterion, axis, series });
        }
    }
    let mut summary = Vec::new();
    for axis in Axis::ALL {
        if let Some(mf) = matched_final(&groups, axis, &methods) {
            for (method, recs) in &mf.values {
                summary.push(SummaryRow {
                    axis,
                    method: *method,
                    x: mf.x,
                    seeds: recs.len(),
                    kl: mf.quartiles(*method, Criterion::Kl).expect("present"),
                    fisher: mf.quartiles(*method, Criterion::Fisher).expect("present"),
                });
            }
        }
    }
    Report { panels, summary }
}

fn bands(runs: &[SeedRun], axis: Axis, criterion: Criterion) -> Vec<BandPoint> {
    let (lo, hi) = common_range(runs, axis);
    let mut grid: Vec<u64> = runs
        .iter()
        .flat_map(|s| s.records.iter().map(|r| axis.of(r)))
        .filter(|x| (lo..=hi).contains(x))
        .collect();
    grid.sort_unstable();
    grid.dedup();
    grid.into_iter()
        .map(|x| {
            let vals: Vec<f64> = runs.iter().filter_map(|s| s.at(axis, x)).map(|r| criterion.of(r)).collect();
            BandPoint { x, band: quartiles(&vals) }
        })
        .collect()
}

impl Report {
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("axis,method,x,seeds,kl_median,kl_q25,kl_q75,fisher_median,fisher_q25,fisher_q75\n");
        for r in &self.summary {
            s.push_str(&format!(
                "{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.axis.label(),
                r.method.label(),
                r.x,
                r.seeds,
                r.kl.median,
                r.kl.q25,
                r.kl.q75,
                r.fisher.median,
                r.fisher.q25,
                r.fisher.q75
            ));
        }
        s
    }

    /// Writes the four panel files and summary.csv into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let mut files: Vec<(String, String)> = self.panels.iter().map(|p| (p.file_name(), p.to_csv())).collect();
        files.push(("summary.csv".into(), self.summary_csv()));
        files
            .into_iter()
            .map(|(name, body)| {
                let path = dir.join(name);
                fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))?;
                Ok(path)
            })
            .collect()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<5} {:<6} {:>10} {:>5}  {:>12} {:>23}  {:>12} {:>23}",
            "axis", "method", "x", "seeds", "kl median", "kl IQR", "fisher median", "fisher IQR"
        )?;
        for r in &self.summary {
            writeln!(
                f,
                "{:<5} {:<6} {:>10} {:>5}  {:>12.4e} [{:>10.3e}, {:>10.3e}]  {:>12.4e} [{:>10.3e}, {:>10.3e}]",
                r.axis.label(),
                r.method.label(),
                r.x,
                r.seeds,
                r.kl.median,
                r.kl.q25,
                r.kl.q75,
                r.fisher.median,
                r.fisher.q25,
                r.fisher.q75
            )?;
        }
        Ok(())
    }
}

/// Reads the CSVs and builds a report. A (method, seed) group may come from
/// only one file.
pub fn report_files(paths: &[PathBuf]) -> Result<Report> {
    let mut all = Vec::new();
    let mut owner: BTreeMap<(Method, u64), &Path> = BTreeMap::new();
    for path in paths {
        let recs = read_csv(path)?;
        for r in &recs {
            let prev = owner.entry((r.method, r.seed)).or_insert(path.as_path());
            if *prev != path.as_path() {
                return Err(HarnessError::SchemaMismatch {
                    path: path.clone(),
                    message: format!("({}, {}) already present in {}", r.method, r.seed, prev.display()),
                });
            }
        }
        all.extend(recs);
    }
    Ok(build_report(&all))
}
