//! Synthetic data from the contaminated MoE, including the n-dependent
//! ground-truth schedules of the three rate scenarios.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{logistic, ExpertMean, Family, ModelSpec, PretrainedSpec, PromptParams};

/// Ground-truth variance shared by every scenario.
pub const BASE_VARIANCE: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioTag {
    /// (a): Laplace pre-trained expert, prompt `eta* = -e1`.
    #[serde(rename = "a")]
    DistinguishableLaplace,
    /// (b)(i): Gaussian experts, `eta* = e1 (1 + n^-r)`.
    #[serde(rename = "b1")]
    NonDistEtaDrift,
    /// (b)(ii): Gaussian experts, `nu* = nu0 (1 + n^-r)`.
    #[serde(rename = "b2")]
    NonDistNuDrift,
}

impl ScenarioTag {
    pub const ALL: [ScenarioTag; 3] = [
        ScenarioTag::DistinguishableLaplace,
        ScenarioTag::NonDistEtaDrift,
        ScenarioTag::NonDistNuDrift,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioTag::DistinguishableLaplace => "a",
            ScenarioTag::NonDistEtaDrift => "b1",
            ScenarioTag::NonDistNuDrift => "b2",
        }
    }

    fn code(self) -> u8 {
        match self {
            ScenarioTag::DistinguishableLaplace => 1,
            ScenarioTag::NonDistEtaDrift => 2,
            ScenarioTag::NonDistNuDrift => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        ScenarioTag::ALL.into_iter().find(|t| t.code() == c)
    }
}

impl fmt::Display for ScenarioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "distinguishable" => Ok(ScenarioTag::DistinguishableLaplace),
            "b1" | "eta-drift" => Ok(ScenarioTag::NonDistEtaDrift),
            "b2" | "nu-drift" => Ok(ScenarioTag::NonDistNuDrift),
            other => Err(Error::Input(format!("unknown scenario tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub tag: ScenarioTag,
    pub d: usize,
    #[serde(default = "default_drift_exponent")]
    pub drift_exponent: f64,
}

fn default_drift_exponent() -> f64 {
    0.125
}

impl Scenario {
    pub fn new(tag: ScenarioTag, d: usize) -> Self {
        Scenario {
            tag,
            d,
            drift_exponent: default_drift_exponent(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Input("scenario dimension must be >= 1".into()));
        }
        if !(self.drift_exponent > 0.0) {
            return Err(Error::Input(format!(
                "drift exponent must be > 0, got {}",
                self.drift_exponent
            )));
        }
        Ok(())
    }
}

fn unit(d: usize, sign: f64) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[0] = sign;
    v
}

/// Model and true parameters for `scenario` at sample size `n`.
pub fn make_truth(scenario: &Scenario, n: usize) -> Result<(ModelSpec, PromptParams)> {
    scenario.validate()?;
    if n == 0 {
        return Err(Error::Input("sample size must be >= 1".into()));
    }
    let d = scenario.d;
    let drift = (n as f64).powf(-scenario.drift_exponent);
    let family = match scenario.tag {
        ScenarioTag::DistinguishableLaplace => Family::Laplace,
        _ => Family::Gaussian,
    };
    let spec = ModelSpec::new(
        d,
        PretrainedSpec {
            family,
            mean: ExpertMean::TANH,
            eta0: unit(d, 1.0),
            nu0: BASE_VARIANCE,
        },
        ExpertMean::TANH,
    )?;
    let (eta, nu) = match scenario.tag {
        ScenarioTag::DistinguishableLaplace => (unit(d, -1.0), BASE_VARIANCE),
        ScenarioTag::NonDistEtaDrift => (unit(d, 1.0 + drift), BASE_VARIANCE),
        ScenarioTag::NonDistNuDrift => (unit(d, -1.0), BASE_VARIANCE * (1.0 + drift)),
    };
    let beta = vec![1.0 / (d as f64).sqrt(); d];
    let params = PromptParams::new(beta, 1.0, eta, nu)?;
    Ok((spec, params))
}

/// `n` covariate-response pairs, row-major covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    pub seed: u64,
    pub scenario: Option<ScenarioTag>,
    /// Which component generated each response; kept only for verification.
    labels: Option<Vec<bool>>,
}

impl Dataset {
    pub fn new(d: usize, x: Vec<f64>, y: Vec<f64>, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Input("dataset dimension must be >= 1".into()));
        }
        check_dim("covariate matrix", y.len() * d, x.len())?;
        if !x.iter().chain(&y).all(|v| v.is_finite()) {
            return Err(Error::Domain("dataset contains non-finite values".into()));
        }
        Ok(Dataset {
            d,
            x,
            y,
            seed,
            scenario: None,
            labels: None,
        })
    }

    pub fn with_scenario(mut self, tag: ScenarioTag) -> Self {
        self.scenario = Some(tag);
        self
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.x.chunks_exact(self.d).zip(self.y.iter().copied())
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Component labels (`true` = prompt) when the dataset was sampled here.
    pub fn component_labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    /// Fraction of responses drawn from the prompt expert.
    pub fn prompt_fraction(&self) -> Option<f64> {
        self.labels
            .as_ref()
            .map(|l| l.iter().filter(|b| **b).count() as f64 / l.len() as f64)
    }

    /// Rows repeated `k` times each, preserving order.
    pub fn repeat_rows(&self, k: usize) -> Dataset {
        let mut x = Vec::with_capacity(self.x.len() * k);
        let mut y = Vec::with_capacity(self.y.len() * k);
        for (row, yi) in self.rows() {
            for _ in 0..k {
                x.extend_from_slice(row);
                y.push(yi);
            }
        }
        Dataset {
            d: self.d,
            x,
            y,
            seed: self.seed,
            scenario: self.scenario,
            labels: None,
        }
    }
}

/// Draw `n` i.i.d. pairs: `x ~ N(0, I_d)`, gate label `z ~ Bernoulli(lambda(x))`,
/// then `y` from the prompt expert if `z = 1`, else from the pre-trained one.
///
/// One ChaCha stream per dataset, consumed in row order.
pub fn sample(spec: &ModelSpec, params: &PromptParams, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    spec.check_params(params)?;
    if n == 0 {
        return Err(Error::Input("sample size must be >= 1".into()));
    }
    let d = spec.d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let prompt_sd = params.nu.sqrt();
    let laplace_b = (0.5 * spec.pretrained.nu0).sqrt();
    let pre_sd = spec.pretrained.nu0.sqrt();
    for _ in 0..n {
        let start = x.len();
        x.extend((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let row = &x[start..];
        let lambda = logistic(crate::model::dot(&params.beta, row) + params.tau);
        let from_prompt = rng.gen::<f64>() < lambda;
        let yi = if from_prompt {
            let m = spec
                .prompt_mean
                .activation()
                .value(spec.prompt_mean.inner(&params.eta, row));
            m + prompt_sd * rng.sample::<f64, _>(StandardNormal)
        } else {
            let m = spec.pretrained_mean(row);
            match spec.pretrained.family {
                Family::Gaussian => m + pre_sd * rng.sample::<f64, _>(StandardNormal),
                Family::Laplace => {
                    let a: f64 = rng.sample(Exp1);
                    let b: f64 = rng.sample(Exp1);
                    m + laplace_b * (a - b)
                }
            }
        };
        labels.push(from_prompt);
        y.push(yi);
    }
    let mut data = Dataset::new(d, x, y, seed)?;
    data.labels = Some(labels);
    Ok(data)
}

const CSV_TAG: &str = "# cmoe-dataset";
const BIN_MAGIC: &[u8; 8] = b"CMOEDS\x00\x01";

impl Dataset {
    /// CSV with a metadata comment line, then `x_1..x_d,y`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let tag = self.scenario.map_or("none", ScenarioTag::as_str);
        let mut out = format!(
            "{CSV_TAG} d={} n={} seed={} scenario={tag}\n",
            self.d,
            self.n(),
            self.seed
        );
        let cols: Vec<String> = (1..=self.d).map(|j| format!("x_{j}")).collect();
        out.push_str(&cols.join(","));
        out.push_str(",y\n");
        w.write_all(out.as_bytes())
            .map_err(|e| Error::io(path, e))?;
        for (row, yi) in self.rows() {
            let mut line = String::with_capacity(24 * (self.d + 1));
            for v in row {
                line.push_str(&v.to_string());
                line.push(',');
            }
            line.push_str(&yi.to_string());
            line.push('\n');
            w.write_all(line.as_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let mut next = || -> Result<Option<String>> {
            lines.next().transpose().map_err(|e| Error::io(path, e))
        };
        let meta = next()?.ok_or_else(|| Error::format(path, "empty file"))?;
        let rest = meta
            .strip_prefix(CSV_TAG)
            .ok_or_else(|| Error::format(path, "missing dataset metadata line"))?;
        let mut d = None;
        let mut n = None;
        let mut seed = 0u64;
        let mut scenario = None;
        for kv in rest.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::format(path, format!("bad metadata field {kv:?}")))?;
            let bad = |_| Error::format(path, format!("bad value in {kv:?}"));
            match k {
                "d" => d = Some(v.parse::<usize>().map_err(bad)?),
                "n" => n = Some(v.parse::<usize>().map_err(bad)?),
                "seed" => seed = v.parse::<u64>().map_err(bad)?,
                "scenario" if v != "none" => scenario = Some(v.parse::<ScenarioTag>()?),
                _ => {}
            }
        }
        let d = d.ok_or_else(|| Error::format(path, "metadata lacks d"))?;
        let header = next()?.ok_or_else(|| Error::format(path, "missing column header"))?;
        if header.split(',').count() != d + 1 {
            return Err(Error::format(path, "column count does not match d"));
        }
        let mut x = Vec::new();
        let mut y = Vec::new();
        while let Some(line) = next()? {
            if line.trim().is_empty() {
                continue;
            }
            let mut count = 0;
            for (j, field) in line.split(',').enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::format(path, format!("bad number {field:?}")))?;
                if j < d {
                    x.push(v);
                } else {
                    y.push(v);
                }
                count += 1;
            }
            if count != d + 1 {
                return Err(Error::format(path, format!("row has {count} fields")));
            }
        }
        if let Some(n) = n {
            if n != y.len() {
                return Err(Error::format(
                    path,
                    format!("header says n={n}, found {}", y.len()),
                ));
            }
        }
        let mut data = Dataset::new(d, x, y, seed)?;
        data.scenario = scenario;
        Ok(data)
    }

    /// Little-endian binary cache: magic, d (u32), n (u64), seed (u64),
    /// scenario code (u8, 0 = none), then `x` row-major and `y` as f64.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut buf = Vec::with_capacity(29 + 8 * (self.x.len() + self.y.len()));
        buf.extend_from_slice(BIN_MAGIC);
        buf.extend_from_slice(&(self.d as u32).to_le_bytes());
        buf.extend_from_slice(&(self.n() as u64).to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.push(self.scenario.map_or(0, ScenarioTag::code));
        for v in self.x.iter().chain(&self.y) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<Dataset> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 29 || &bytes[..8] != BIN_MAGIC {
            return Err(Error::format(path, "not a cmoe dataset cache"));
        }
        let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let seed = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
        let code = bytes[28];
        let body = &bytes[29..];
        if body.len() != 8 * n * (d + 1) {
            return Err(Error::format(path, "truncated dataset cache"));
        }
        let mut vals = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let x: Vec<f64> = vals.by_ref().take(n * d).collect();
        let y: Vec<f64> = vals.collect();
        let mut data = Dataset::new(d, x, y, seed)?;
        data.scenario = match code {
            0 => None,
            c => Some(
                ScenarioTag::from_code(c)
                    .ok_or_else(|| Error::format(path, format!("unknown scenario code {c}")))?,
            ),
        };
        Ok(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_a_truth() {
        let (spec, p) =
            make_truth(&Scenario::new(ScenarioTag::DistinguishableLaplace, 8), 5000).unwrap();
        assert_eq!(spec.pretrained.family, Family::Laplace);
        assert_eq!(p.eta, unit(8, -1.0));
        assert_eq!(p.nu, 0.001);
        assert_eq!(p.tau, 1.0);
        assert!(p
            .beta
            .iter()
            .all(|b| (b - 8f64.sqrt().recip()).abs() < 1e-15));
    }

    #[test]
    fn eta_drift_at_256() {
        let (_, p) = make_truth(&Scenario::new(ScenarioTag::NonDistEtaDrift, 8), 256).unwrap();
        assert!((p.eta[0] - 1.5).abs() < 1e-15);
        assert_eq!(p.nu, 0.001);
    }

    #[test]
    fn nu_drift_vanishes() {
        let s = Scenario::new(ScenarioTag::NonDistNuDrift, 3);
        let (spec, p) = make_truth(&s, usize::MAX / 2).unwrap();
        assert_eq!(spec.pretrained.family, Family::Gaussian);
        assert!((p.nu - 0.001).abs() < 1e-5);
        assert_eq!(p.eta, unit(3, -1.0));
    }

    #[test]
    fn bad_tags_and_sizes() {
        assert!(matches!("c".parse::<ScenarioTag>(), Err(Error::Input(_))));
        assert!(make_truth(&Scenario::new(ScenarioTag::NonDistEtaDrift, 2), 0).is_err());
        let mut s = Scenario::new(ScenarioTag::NonDistEtaDrift, 2);
        s.drift_exponent = 0.0;
        assert!(make_truth(&s, 10).is_err());
    }

    #[test]
    fn closed_gate_draws_pretrained() {
        let (spec, mut p) =
            make_truth(&Scenario::new(ScenarioTag::NonDistNuDrift, 2), 100).unwrap();
        p.tau = -1e6;
        let n = 4000;
        let data = sample(&spec, &p, n, 3).unwrap();
        assert_eq!(data.prompt_fraction(), Some(0.0));
        // residuals around h0(x, eta0) are centred when every draw comes from f0
        let mean_resid = data
            .rows()
            .map(|(x, y)| y - spec.pretrained_mean(x))
            .sum::<f64>()
            / n as f64;
        let sd = spec.pretrained.nu0.sqrt();
        assert!(
            mean_resid.abs() < 4.0 * sd / (n as f64).sqrt(),
            "{mean_resid}"
        );
    }

    #[test]
    fn same_seed_same_bytes() {
        let (spec, p) =
            make_truth(&Scenario::new(ScenarioTag::DistinguishableLaplace, 4), 50).unwrap();
        let a = sample(&spec, &p, 50, 99).unwrap();
        let b = sample(&spec, &p, 50, 99).unwrap();
        let c = sample(&spec, &p, 50, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.y(), c.y());
    }

    #[test]
    fn csv_and_binary_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let (spec, p) = make_truth(&Scenario::new(ScenarioTag::NonDistEtaDrift, 3), 20).unwrap();
        let data = sample(&spec, &p, 20, 5)
            .unwrap()
            .with_scenario(ScenarioTag::NonDistEtaDrift);
        let csv = dir.path().join("d.csv");
        data.write_csv(&csv).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("# cmoe-dataset d=3 n=20 seed=5 scenario=b1\nx_1,x_2,x_3,y\n"));
        let back = Dataset::read_csv(&csv).unwrap();
        assert_eq!(back.x(), data.x());
        assert_eq!(back.y(), data.y());
        assert_eq!(back.scenario, data.scenario);

        let bin = dir.path().join("d.bin");
        data.write_binary(&bin).unwrap();
        let back = Dataset::read_binary(&bin).unwrap();
        assert_eq!((back.x(), back.y(), back.seed), (data.x(), data.y(), 5));
    }

    #[test]
    fn rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x_1,y\n1,2\n").unwrap();
        assert!(matches!(
            Dataset::read_csv(&path),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            Dataset::read_csv(&dir.path().join("missing.csv")),
            Err(Error::Io { .. })
        ));
    }
}
