use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::matching::Matching;
use crate::metrics::OutcomeMetrics;

pub const REPORT_FORMAT: &str = "smlab-report/1";

/// Episodes averaged into one plot-data point.
pub const PLOT_STRIDE: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance_seed: u64,
    pub repeat: usize,
    pub run_seed: u64,
    /// Set when the run failed; `matching` and `metrics` are then absent.
    pub error: Option<String>,
    pub matching: Option<Matching>,
    pub metrics: Option<OutcomeMetrics>,
    pub episodes: usize,
    /// Mean reward per agent and step, one entry per training episode.
    pub training_curve: Vec<f64>,
    pub wall_seconds: f64,
}

/// Population mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// `None` for an empty sample.
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Some(MeanStd { mean, std: var.sqrt() })
    }
}

/// Cross-run summary. Instability measures cover unstable runs only; costs
/// cover every successful run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub runs: usize,
    pub failed: usize,
    pub stable_runs: usize,
    pub unstable_runs: usize,
    pub stability_pct: Option<f64>,
    pub doi: Option<MeanStd>,
    pub roi: Option<MeanStd>,
    pub md: Option<MeanStd>,
    /// Over runs with a nonempty matching.
    pub regret: Option<MeanStd>,
    pub egalitarian: Option<MeanStd>,
    pub set_equality: Option<MeanStd>,
    /// Over runs where median stable matching is defined.
    pub msm_pct: Option<f64>,
    /// Mean percentage of agents holding their median stable partner.
    pub mm_pct: Option<f64>,
}

pub fn aggregate(runs: &[RunRecord]) -> Aggregates {
    let ok: Vec<&OutcomeMetrics> = runs.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let unstable: Vec<&&OutcomeMetrics> = ok.iter().filter(|m| !m.stable).collect();
    let over = |xs: &[&&OutcomeMetrics], f: fn(&OutcomeMetrics) -> f64| MeanStd::of(&xs.iter().map(|m| f(m)).collect::<Vec<_>>());
    let all: Vec<&&OutcomeMetrics> = ok.iter().collect();
    let pct = |hits: usize, of: usize| (of > 0).then(|| 100.0 * hits as f64 / of as f64);
    let msm: Vec<bool> = ok.iter().filter_map(|m| m.is_msm).collect();
    let mm: Vec<f64> = ok.iter().filter_map(|m| m.mm_fraction.map(|f| 100.0 * f)).collect();
    let stable_runs = ok.len() - unstable.len();
    Aggregates {
        runs: runs.len(),
        failed: runs.len() - ok.len(),
        stable_runs,
        unstable_runs: unstable.len(),
        stability_pct: pct(stable_runs, ok.len()),
        doi: over(&unstable, |m| m.doi as f64),
        roi: over(&unstable, |m| m.roi),
        md: over(&unstable, |m| m.md),
        regret: MeanStd::of(&ok.iter().filter_map(|m| m.regret.map(f64::from)).collect::<Vec<_>>()),
        egalitarian: over(&all, |m| f64::from(m.egalitarian)),
        set_equality: over(&all, |m| f64::from(m.set_equality)),
        msm_pct: pct(msm.iter().filter(|&&b| b).count(), msm.len()),
        mm_pct: MeanStd::of(&mm).map(|s| s.mean),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeReport {
    pub format: String,
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub aggregates: Aggregates,
    pub total_episodes: u64,
    pub wall_seconds: f64,
}

impl OutcomeReport {
    pub fn all_succeeded(&self) -> bool {
        self.runs.iter().all(|r| r.error.is_none())
    }

    /// Copy with wall-clock fields zeroed, for determinism checks.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.wall_seconds = 0.0;
        r.runs.iter_mut().for_each(|x| x.wall_seconds = 0.0);
        r
    }

    /// Recomputes the aggregates from the run records.
    pub fn reaggregate(&mut self) {
        self.aggregates = aggregate(&self.runs);
        self.total_episodes = self.runs.iter().map(|r| r.episodes as u64).sum();
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        let r: OutcomeReport = serde_json::from_reader(input)?;
        if r.format != REPORT_FORMAT {
            return Err(Error::Format(format!("unknown report format {:?}", r.format)));
        }
        Ok(r)
    }

    /// Per-run rows followed by one aggregate row, columns as in
    /// [`CSV_COLUMNS`]. Aggregate cells hold means with `_std` companions.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record(CSV_COLUMNS).map_err(io)?;
        for r in &self.runs {
            w.write_record(run_row(r)).map_err(io)?;
        }
        w.write_record(aggregate_row(&self.aggregates)).map_err(io)?;
        w.flush()?;
        Ok(())
    }

    /// `run,instance_seed,repeat,episode,mean_reward`, one point per
    /// [`PLOT_STRIDE`] episodes.
    pub fn write_plot_data<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "run,instance_seed,repeat,episode,mean_reward")?;
        for (k, r) in self.runs.iter().enumerate() {
            for (b, chunk) in r.training_curve.chunks(PLOT_STRIDE).enumerate() {
                let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
                writeln!(out, "{k},{},{},{},{mean}", r.instance_seed, r.repeat, b * PLOT_STRIDE)?;
            }
        }
        Ok(())
    }
}

pub const CSV_COLUMNS: [&str; 25] = [
    "kind",
    "instance_seed",
    "repeat",
    "run_seed",
    "status",
    "stable",
    "blocking_pairs",
    "doi",
    "doi_std",
    "roi",
    "roi_std",
    "md",
    "md_std",
    "regret",
    "regret_std",
    "egalitarian",
    "egalitarian_std",
    "set_equality",
    "set_equality_std",
    "is_msm",
    "mm_fraction",
    "stability_pct",
    "msm_pct",
    "mm_pct",
    "matching",
];

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn run_row(r: &RunRecord) -> Vec<String> {
    let m = r.metrics.as_ref();
    let status = match &r.error {
        None => "ok".to_string(),
        Some(e) => format!("failed: {e}"),
    };
    let matching = r
        .matching
        .as_ref()
        .map(|m| m.partners_1().iter().map(|p| p.map_or(-1, |j| j as i64).to_string()).collect::<Vec<_>>().join(" "))
        .unwrap_or_default();
    vec![
        "run".into(),
        r.instance_seed.to_string(),
        r.repeat.to_string(),
        r.run_seed.to_string(),
        status,
        opt(m.map(|m| m.stable)),
        opt(m.map(|m| m.blocking_pairs)),
        opt(m.map(|m| m.doi)),
        String::new(),
        opt(m.map(|m| m.roi)),
        String::new(),
        opt(m.map(|m| m.md)),
        String::new(),
        opt(m.and_then(|m| m.regret)),
        String::new(),
        opt(m.map(|m| m.egalitarian)),
        String::new(),
        opt(m.map(|m| m.set_equality)),
        String::new(),
        opt(m.and_then(|m| m.is_msm)),
        opt(m.and_then(|m| m.mm_fraction)),
        String::new(),
        String::new(),
        String::new(),
        matching,
    ]
}

fn aggregate_row(a: &Aggregates) -> Vec<String> {
    let pair = |s: Option<MeanStd>| [opt(s.map(|s| s.mean)), opt(s.map(|s| s.std))];
    let mut row = vec![
        "aggregate".into(),
        String::new(),
        String::new(),
        String::new(),
        format!("runs={} failed={}", a.runs, a.failed),
        String::new(),
        String::new(),
    ];
    for s in [a.doi, a.roi, a.md, a.regret, a.egalitarian, a.set_equality] {
        row.extend(pair(s));
    }
    row.extend([String::new(), String::new(), opt(a.stability_pct), opt(a.msm_pct), opt(a.mm_pct), String::new()]);
    row
}

/// Writes `report.json`, `runs.csv` and `plot.csv` into `dir`.
pub fn emit_report(report: &OutcomeReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = BufWriter::new(File::create(dir.join("report.json"))?);
    report.write_json(&mut json)?;
    json.flush()?;
    report.write_csv(BufWriter::new(File::create(dir.join("runs.csv"))?))?;
    let mut plot = BufWriter::new(File::create(dir.join("plot.csv"))?);
    report.write_plot_data(&mut plot)?;
    plot.flush()?;
    Ok(())
}
