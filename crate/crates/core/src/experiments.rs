//! Convergence-rate sweeps: sample over a grid of sample sizes, fit each
//! dataset, record estimation errors and fit log-log slopes.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{em_fit, EmConfig};
use crate::metrics::{expected_hellinger, param_errors, ErrorReport, QuadratureConfig};
use crate::sampler::{make_truth, sample, Scenario, ScenarioTag};
use crate::seed::derive_seed;

/// Column order of the sweep CSV.
pub const CSV_HEADER: [&str; 14] = [
    "scenario",
    "n",
    "trial",
    "seed",
    "converged",
    "err_exp_tau",
    "err_beta",
    "err_eta",
    "err_nu",
    "d1",
    "d2",
    "drift_norm",
    "hellinger",
    "wall_ms",
];

pub const RECORDS_FILE: &str = "records.csv";
pub const RATES_FILE: &str = "rates.json";
pub const PLOT_FILE: &str = "plot.csv";

/// `points` sample sizes, log-spaced between `lo` and `hi` and rounded.
/// Rounding collisions are dropped so the result is strictly increasing.
pub fn log_spaced_grid(lo: usize, hi: usize, points: usize) -> Result<Vec<usize>> {
    if lo == 0 || hi < lo || points == 0 || (points == 1 && lo != hi) {
        return Err(Error::Input(format!(
            "bad sample-size grid: {points} points in [{lo}, {hi}]"
        )));
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = ((lo as f64).log10(), (hi as f64).log10());
    let mut grid: Vec<usize> = (0..points)
        .map(|k| {
            10f64
                .powf(a + (b - a) * k as f64 / (points - 1) as f64)
                .round() as usize
        })
        .collect();
    grid.dedup();
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub scenario: Scenario,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub em: EmConfig,
    pub quad: QuadratureConfig,
    pub base_seed: u64,
    pub compute_hellinger: bool,
    pub out_dir: PathBuf,
    /// Measure fit wall time. Off by default so output files are reproducible byte for byte.
    pub record_timing: bool,
}

impl SweepConfig {
    /// Twenty log-spaced sizes in `[1e3, 1e5]` and forty trials.
    pub fn new(scenario: Scenario) -> Self {
        SweepConfig {
            scenario,
            n_grid: log_spaced_grid(1_000, 100_000, 20).expect("static grid"),
            trials: 40,
            em: EmConfig::default(),
            quad: QuadratureConfig::default(),
            base_seed: 0,
            compute_hellinger: false,
            out_dir: PathBuf::from("results"),
            record_timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.em.validate()?;
        self.quad.validate()?;
        if self.trials == 0 {
            return Err(Error::Input("trials must be >= 1".into()));
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return Err(Error::Input(
                "sample-size grid must be non-empty and positive".into(),
            ));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input(
                "sample-size grid must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub scenario: ScenarioTag,
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    pub converged: bool,
    pub report: ErrorReport,
    pub wall_ms: u64,
}

/// Seeds for the dataset and the EM start of one `(n, trial)` cell.
pub fn cell_seeds(base_seed: u64, n: usize, trial: usize) -> (u64, u64) {
    let data = derive_seed(base_seed, &[n as u64, trial as u64]);
    let fit = derive_seed(base_seed, &[n as u64, trial as u64, 1]);
    (data, fit)
}

fn run_cell(cfg: &SweepConfig, n: usize, trial: usize) -> Result<SweepRecord> {
    let (spec, truth) = make_truth(&cfg.scenario, n)?;
    let (data_seed, fit_seed) = cell_seeds(cfg.base_seed, n, trial);
    let data = sample(&spec, &truth, n, data_seed)?;
    let start = Instant::now();
    let fit = em_fit(&spec, &data, &truth, &cfg.em, fit_seed)?;
    let wall_ms = if cfg.record_timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    };
    let mut report = param_errors(
        &fit.estimate,
        &truth,
        &spec.pretrained.eta0,
        spec.pretrained.nu0,
    )?;
    if cfg.compute_hellinger {
        report.hellinger = Some(expected_hellinger(&spec, &fit.estimate, &truth, &cfg.quad)?.mean);
    }
    Ok(SweepRecord {
        scenario: cfg.scenario.tag,
        n,
        trial,
        seed: data_seed,
        converged: fit.converged,
        report,
        wall_ms,
    })
}

/// One record per `(n, trial)`, ordered by `n` then trial. Cells run in
/// parallel on the current rayon pool; the result does not depend on the
/// number of threads.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRecord>> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.trials).map(move |t| (n, t)))
        .collect();
    cells
        .into_par_iter()
        .map(|(n, t)| run_cell(cfg, n, t))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ErrExpTau,
    ErrBeta,
    ErrEta,
    ErrNu,
    D1,
    D2,
    Hellinger,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::ErrExpTau,
        Metric::ErrBeta,
        Metric::ErrEta,
        Metric::ErrNu,
        Metric::D1,
        Metric::D2,
        Metric::Hellinger,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::ErrExpTau => "err_exp_tau",
            Metric::ErrBeta => "err_beta",
            Metric::ErrEta => "err_eta",
            Metric::ErrNu => "err_nu",
            Metric::D1 => "d1",
            Metric::D2 => "d2",
            Metric::Hellinger => "hellinger",
        }
    }

    pub fn value(self, r: &ErrorReport) -> Option<f64> {
        match self {
            Metric::ErrExpTau => Some(r.err_exp_tau),
            Metric::ErrBeta => Some(r.err_beta),
            Metric::ErrEta => Some(r.err_eta),
            Metric::ErrNu => Some(r.err_nu),
            Metric::D1 => Some(r.d1),
            Metric::D2 => Some(r.d2),
            Metric::Hellinger => r.hellinger,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    #[default]
    Median,
    Mean,
    /// No aggregation: every trial is a point in the regression.
    Pooled,
}

impl FromStr for Aggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(Aggregate::Median),
            "mean" => Ok(Aggregate::Mean),
            "pooled" => Ok(Aggregate::Pooled),
            other => Err(Error::Input(format!("unknown aggregate {other:?}"))),
        }
    }
}

/// Ordinary least squares of `log10(error)` on `log10(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub stderr_slope: f64,
    /// Points used in the regression.
    pub points: usize,
    /// Points dropped for a non-positive or non-finite error.
    pub excluded: usize,
}

pub fn fit_rate(ns: &[f64], errors: &[f64]) -> Result<RateFit> {
    if ns.len() != errors.len() {
        return Err(Error::Dimension {
            what: "rate errors",
            expected: ns.len(),
            got: errors.len(),
        });
    }
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .zip(errors)
        .filter(|(n, e)| **n > 0.0 && **e > 0.0 && e.is_finite())
        .map(|(n, e)| (n.log10(), e.log10()))
        .collect();
    let excluded = ns.len() - pts.len();
    let k = pts.len();
    if k < 3 {
        return Err(Error::Input(format!(
            "need >= 3 positive points for a rate, got {k}"
        )));
    }
    let kf = k as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / kf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / kf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Input(
            "rate fit needs at least two distinct sample sizes".into(),
        ));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    // a constant response is fitted exactly by a flat line
    let r2 = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let stderr_slope = (ss_res / (kf - 2.0) / sxx).sqrt();
    Ok(RateFit {
        slope,
        intercept,
        r2,
        stderr_slope,
        points: k,
        excluded,
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// `(n, aggregated error)` per grid point, from converged records only.
pub fn aggregate(records: &[SweepRecord], metric: Metric, how: Aggregate) -> Vec<(usize, f64)> {
    let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.converged) {
        if let Some(v) = metric.value(&r.report) {
            by_n.entry(r.n).or_default().push(v);
        }
    }
    let mut out = Vec::new();
    for (n, mut vals) in by_n {
        match how {
            Aggregate::Median => out.push((n, median(&mut vals))),
            Aggregate::Mean => out.push((n, vals.iter().sum::<f64>() / vals.len() as f64)),
            Aggregate::Pooled => out.extend(vals.into_iter().map(|v| (n, v))),
        }
    }
    out
}

pub fn rate_for(records: &[SweepRecord], metric: Metric, how: Aggregate) -> Result<RateFit> {
    let pts = aggregate(records, metric, how);
    let ns: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
    let errs: Vec<f64> = pts.iter().map(|p| p.1).collect();
    fit_rate(&ns, &errs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRates {
    pub median: Option<RateFit>,
    pub mean: Option<RateFit>,
    pub pooled: Option<RateFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatesReport {
    pub scenario: Option<ScenarioTag>,
    pub records: usize,
    /// Fits that hit the EM iteration cap; excluded from every rate.
    pub non_converged: usize,
    pub rates: BTreeMap<String, MetricRates>,
}

/// Rates for `metrics` under every aggregation. Metrics without enough
/// data (for example Hellinger when it was not computed) are left out.
pub fn compute_rates(records: &[SweepRecord], metrics: &[Metric]) -> RatesReport {
    let mut rates = BTreeMap::new();
    for &m in metrics {
        let entry = MetricRates {
            median: rate_for(records, m, Aggregate::Median).ok(),
            mean: rate_for(records, m, Aggregate::Mean).ok(),
            pooled: rate_for(records, m, Aggregate::Pooled).ok(),
        };
        if entry.median.is_some() || entry.mean.is_some() || entry.pooled.is_some() {
            rates.insert(m.as_str().to_string(), entry);
        }
    }
    let scenario = records.first().map(|r| r.scenario);
    RatesReport {
        scenario: scenario.filter(|s| records.iter().all(|r| r.scenario == *s)),
        records: records.len(),
        non_converged: records.iter().filter(|r| !r.converged).count(),
        rates,
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::format(path, e.to_string())
    }
}

pub fn emit_csv(records: &[SweepRecord], path: &Path) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_err(path, e))?;
    for r in records {
        let p = &r.report;
        let row = [
            r.scenario.as_str().to_string(),
            r.n.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.converged.to_string(),
            p.err_exp_tau.to_string(),
            p.err_beta.to_string(),
            p.err_eta.to_string(),
            p.err_nu.to_string(),
            p.d1.to_string(),
            p.d2.to_string(),
            p.drift_norm.to_string(),
            p.hellinger.map(|h| h.to_string()).unwrap_or_default(),
            r.wall_ms.to_string(),
        ];
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRecord>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rd.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::format(path, "unexpected sweep CSV header"));
    }
    let mut out = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |what: &str| Error::format(path, format!("row {}: bad {what}", line + 2));
        fn num<T: FromStr>(s: &str) -> Option<T> {
            s.parse().ok()
        }
        let f = |i: usize| num::<f64>(&rec[i]).ok_or_else(|| bad(CSV_HEADER[i]));
        let hellinger = match &rec[12] {
            "" => None,
            s => Some(num::<f64>(s).ok_or_else(|| bad("hellinger"))?),
        };
        out.push(SweepRecord {
            scenario: rec[0].parse().map_err(|_| bad("scenario"))?,
            n: num(&rec[1]).ok_or_else(|| bad("n"))?,
            trial: num(&rec[2]).ok_or_else(|| bad("trial"))?,
            seed: num(&rec[3]).ok_or_else(|| bad("seed"))?,
            converged: num(&rec[4]).ok_or_else(|| bad("converged"))?,
            report: ErrorReport {
                err_exp_tau: f(5)?,
                err_beta: f(6)?,
                err_eta: f(7)?,
                err_nu: f(8)?,
                d1: f(9)?,
                d2: f(10)?,
                drift_norm: f(11)?,
                hellinger,
            },
            wall_ms: num(&rec[13]).ok_or_else(|| bad("wall_ms"))?,
        });
    }
    Ok(out)
}

pub fn emit_rates(report: &RatesReport, path: &Path) -> Result<()> {
    create_parent(path)?;
    let mut json =
        serde_json::to_string_pretty(report).map_err(|e| Error::format(path, e.to_string()))?;
    json.push('\n');
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Plot-ready rows `metric,kind,log10_n,log10_err`. `kind` is `median` or
/// `mean` for aggregated points and `fit` for the two endpoints of the
/// median regression line.
pub fn emit_plot_data(records: &[SweepRecord], report: &RatesReport, path: &Path) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["metric", "kind", "log10_n", "log10_err"])
        .map_err(|e| csv_err(path, e))?;
    for (name, rates) in &report.rates {
        let metric: Metric = name.parse()?;
        for (kind, how) in [("median", Aggregate::Median), ("mean", Aggregate::Mean)] {
            for (n, e) in aggregate(records, metric, how) {
                if e > 0.0 {
                    let row = [
                        name.clone(),
                        kind.into(),
                        (n as f64).log10().to_string(),
                        e.log10().to_string(),
                    ];
                    w.write_record(&row).map_err(|e| csv_err(path, e))?;
                }
            }
        }
        if let Some(fit) = rates.median {
            let ns: Vec<f64> = aggregate(records, metric, Aggregate::Median)
                .iter()
                .map(|p| (p.0 as f64).log10())
                .collect();
            let lo = ns.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for x in [lo, hi] {
                let row = [
                    name.clone(),
                    "fit".into(),
                    x.to_string(),
                    (fit.intercept + fit.slope * x).to_string(),
                ];
                w.write_record(&row).map_err(|e| csv_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write records, rates and plot data into `dir`.
pub fn emit_all(records: &[SweepRecord], dir: &Path) -> Result<RatesReport> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report = compute_rates(records, &Metric::ALL);
    emit_csv(records, &dir.join(RECORDS_FILE))?;
    emit_rates(&report, &dir.join(RATES_FILE))?;
    emit_plot_data(records, &report, &dir.join(PLOT_FILE))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid12() -> Vec<f64> {
        log_spaced_grid(1_000, 30_000, 12)
            .unwrap()
            .into_iter()
            .map(|n| n as f64)
            .collect()
    }

    #[test]
    fn grid_endpoints_and_order() {
        let g = log_spaced_grid(1_000, 100_000, 20).unwrap();
        assert_eq!(g.len(), 20);
        assert_eq!((g[0], g[19]), (1_000, 100_000));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(log_spaced_grid(10, 12, 10).unwrap(), vec![10, 11, 12]);
        assert!(log_spaced_grid(0, 10, 3).is_err());
    }

    #[test]
    fn exact_power_law() {
        let ns = grid12();
        let errs: Vec<f64> = ns.iter().map(|n| 3.0 * n.powf(-0.5)).collect();
        let r = fit_rate(&ns, &errs).unwrap();
        assert!((r.slope + 0.5).abs() < 1e-12);
        assert!((r.r2 - 1.0).abs() < 1e-12);
        assert!(r.stderr_slope < 1e-10);
    }

    #[test]
    fn constant_errors_are_flat() {
        let ns = grid12();
        let r = fit_rate(&ns, &vec![0.2; ns.len()]).unwrap();
        assert!(r.slope.abs() < 1e-12);
    }

    #[test]
    fn noisy_power_law() {
        let ns = grid12();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let errs: Vec<f64> = ns
            .iter()
            .map(|n| 0.7 * n.powf(-0.375) * (1.0 + 0.05 * rng.gen_range(-1.0..1.0)))
            .collect();
        let r = fit_rate(&ns, &errs).unwrap();
        assert!((r.slope + 0.375).abs() < 0.05, "{r:?}");
    }

    #[test]
    fn nonpositive_errors_are_excluded() {
        let ns = [1e3, 1e4, 1e5, 1e6];
        let r = fit_rate(&ns, &[1e-1, 0.0, 1e-3, 1e-4]).unwrap();
        assert_eq!((r.points, r.excluded), (3, 1));
        assert!(fit_rate(&ns[..2], &[1.0, 2.0]).is_err());
    }

    fn record(n: usize, trial: usize, err: f64, converged: bool) -> SweepRecord {
        SweepRecord {
            scenario: ScenarioTag::DistinguishableLaplace,
            n,
            trial,
            seed: 17 + trial as u64,
            converged,
            report: ErrorReport {
                err_exp_tau: err,
                err_beta: err * 2.0,
                err_eta: err / 3.0,
                err_nu: err * 1e-3,
                d1: 0.1 + err,
                d2: 0.2,
                drift_norm: 2.0,
                hellinger: if trial == 0 { None } else { Some(err / 7.0) },
            },
            wall_ms: 0,
        }
    }

    #[test]
    fn median_mean_and_exclusion() {
        let recs = vec![
            record(100, 0, 1.0, true),
            record(100, 1, 2.0, true),
            record(100, 2, 9.0, true),
            record(100, 3, 1e9, false),
        ];
        assert_eq!(
            aggregate(&recs, Metric::ErrExpTau, Aggregate::Median),
            vec![(100, 2.0)]
        );
        assert_eq!(
            aggregate(&recs, Metric::ErrExpTau, Aggregate::Mean),
            vec![(100, 4.0)]
        );
        assert_eq!(
            aggregate(&recs, Metric::ErrExpTau, Aggregate::Pooled).len(),
            3
        );
    }

    #[test]
    fn csv_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let recs: Vec<SweepRecord> = (0..4)
            .map(|t| record(1000 + t, t, 0.1 / (t as f64 + 1.0) + 1e-17, t != 2))
            .collect();
        emit_csv(&recs, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "scenario,n,trial,seed,converged,err_exp_tau,err_beta,err_eta,err_nu,d1,d2,drift_norm,hellinger,wall_ms"
        );
        assert_eq!(read_csv(&path).unwrap(), recs);
    }

    #[test]
    fn rates_json_has_exact_slope() {
        let recs: Vec<SweepRecord> = grid12()
            .into_iter()
            .map(|n| record(n as usize, 1, n.powf(-0.5), true))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let report = emit_all(&recs, dir.path()).unwrap();
        let slope = report.rates["err_exp_tau"].median.unwrap().slope;
        assert!((slope + 0.5).abs() < 1e-12);
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(RATES_FILE)).unwrap())
                .unwrap();
        let s = json["rates"]["err_exp_tau"]["median"]["slope"]
            .as_f64()
            .unwrap();
        assert!((s + 0.5).abs() < 1e-12);
        let plot = fs::read_to_string(dir.path().join(PLOT_FILE)).unwrap();
        assert!(plot.starts_with("metric,kind,log10_n,log10_err\n"));
        assert_eq!(
            plot.lines()
                .filter(|l| l.starts_with("err_eta,fit,"))
                .count(),
            2
        );
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = emit_csv(&[], &blocker.join("sub").join("r.csv")).unwrap_err();
        assert!(err.is_io(), "{err:?}");
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = SweepConfig::new(Scenario::new(ScenarioTag::DistinguishableLaplace, 2));
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        cfg.trials = 1;
        cfg.n_grid = vec![100, 100];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn small_sweep_shape_and_determinism() {
        let mut cfg = SweepConfig::new(Scenario::new(ScenarioTag::DistinguishableLaplace, 2));
        cfg.n_grid = vec![60, 120];
        cfg.trials = 2;
        cfg.em.max_iter = 30;
        let a = run_sweep(&cfg).unwrap();
        let b = run_sweep(&cfg).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
        let keys: Vec<(usize, usize)> = a.iter().map(|r| (r.n, r.trial)).collect();
        assert_eq!(keys, vec![(60, 0), (60, 1), (120, 0), (120, 1)]);
    }
}
