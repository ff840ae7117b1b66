use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cmoe::config::RunConfig;
use cmoe::experiments::{self, Metric, RATES_FILE, RECORDS_FILE};
use cmoe::identifiability::{check_expert, IdentVerdict, DEFAULT_THRESHOLD};
use cmoe::{
    em_fit, make_truth, sample, Activation, Dataset, Error, ExpertMean, Result, ScenarioTag,
};

#[derive(Parser)]
#[command(
    name = "cmoe",
    version,
    about = "Softmax-contaminated mixture of experts"
)]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a dataset from a benchmark scenario.
    Simulate {
        #[arg(long)]
        scenario: ScenarioTag,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        d: usize,
        /// Output path; `.bin` selects the binary format, anything else CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a dataset written by `simulate`.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scenario used for the model and start point; defaults to the dataset's tag.
        #[arg(long)]
        scenario: Option<ScenarioTag>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a convergence-rate sweep.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<ScenarioTag>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        base_seed: Option<u64>,
        #[arg(long)]
        compute_hellinger: bool,
    },
    /// Fit log-log rates to sweep records.
    Rates {
        /// Sweep output directory or records CSV.
        #[arg(long = "in")]
        input: PathBuf,
        /// `all` or a comma-separated list of metric names.
        #[arg(long, default_value = "all")]
        metric: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check identifiability of an expert mean function.
    CheckIdent {
        #[arg(long, value_enum)]
        expert: ExpertArg,
        #[arg(long, default_value_t = 8)]
        d: usize,
        #[arg(long, default_value_t = 4000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Exit with status 1 if any condition fails.
        #[arg(long)]
        strict: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExpertArg {
    Tanh,
    Sigmoid,
    Gelu,
    Relu,
    /// `tanh(eta'x + b)`.
    Affine,
}

impl ExpertArg {
    fn kind(self) -> ExpertMean {
        match self {
            ExpertArg::Tanh => ExpertMean::TANH,
            ExpertArg::Sigmoid => ExpertMean::SIGMOID,
            ExpertArg::Gelu => ExpertMean::GELU,
            ExpertArg::Relu => ExpertMean::RELU,
            ExpertArg::Affine => ExpertMean::AffineInner(Activation::Tanh),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    if path.extension().is_some_and(|e| e == "bin") {
        Dataset::read_binary(path)
    } else {
        Dataset::read_csv(path)
    }
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn print_verdicts(verdicts: &[IdentVerdict]) {
    println!(
        "{:<20} {:>12} {:>10}  result",
        "condition", "min_sigma", "threshold"
    );
    for v in verdicts {
        println!(
            "{:<20} {:>12.4e} {:>10.1e}  {}",
            v.condition.name(),
            v.min_singular_value,
            v.threshold,
            if v.pass { "pass" } else { "FAIL" }
        );
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Simulate {
            scenario,
            n,
            seed,
            d,
            out,
        } => {
            let sc = cmoe::Scenario::new(scenario, d);
            let (spec, truth) = make_truth(&sc, n)?;
            let data = sample(&spec, &truth, n, seed)?.with_scenario(scenario);
            if out.extension().is_some_and(|e| e == "bin") {
                data.write_binary(&out)?;
            } else {
                data.write_csv(&out)?;
            }
        }
        Cmd::Fit {
            data,
            config,
            scenario,
            seed,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let ds = read_dataset(&data)?;
            let tag = scenario.or(ds.scenario).unwrap_or(cfg.scenario.tag);
            let mut sc = cfg.scenario();
            sc.tag = tag;
            sc.d = ds.d();
            let (spec, truth) = make_truth(&sc, ds.n())?;
            let fit = em_fit(&spec, &ds, &truth, &cfg.em, seed.unwrap_or(ds.seed))?;
            write_json(&fit, &out)?;
        }
        Cmd::Sweep {
            config,
            out_dir,
            scenario,
            trials,
            base_seed,
            compute_hellinger,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = scenario {
                cfg.scenario.tag = s;
            }
            if let Some(t) = trials {
                cfg.sweep.trials = t;
            }
            if let Some(s) = base_seed {
                cfg.sweep.base_seed = s;
            }
            if let Some(dir) = out_dir {
                cfg.sweep.out_dir = dir;
            }
            cfg.sweep.compute_hellinger |= compute_hellinger;
            let sweep = cfg.sweep_config()?;
            let records = experiments::run_sweep(&sweep)?;
            let report = experiments::emit_all(&records, &sweep.out_dir)?;
            eprintln!(
                "{} records ({} not converged) written to {}",
                report.records,
                report.non_converged,
                sweep.out_dir.display()
            );
        }
        Cmd::Rates { input, metric, out } => {
            let path = if input.is_dir() {
                input.join(RECORDS_FILE)
            } else {
                input
            };
            let records = experiments::read_csv(&path)?;
            let metrics: Vec<Metric> = if metric == "all" {
                Metric::ALL.to_vec()
            } else {
                metric
                    .split(',')
                    .map(|m| m.trim().parse())
                    .collect::<Result<_>>()?
            };
            let report = experiments::compute_rates(&records, &metrics);
            let out = if out.is_dir() {
                out.join(RATES_FILE)
            } else {
                out
            };
            experiments::emit_rates(&report, &out)?;
        }
        Cmd::CheckIdent {
            expert,
            d,
            samples,
            seed,
            threshold,
            strict,
        } => {
            let verdicts = check_expert(expert.kind(), d, samples, seed, threshold)?;
            print_verdicts(&verdicts);
            return Ok(!strict || verdicts.iter().all(|v| v.pass));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| match &cli.cmd {
        Cmd::Sweep {
            config: Some(p), ..
        } => RunConfig::load(p).ok().and_then(|c| c.sweep.threads),
        _ => None,
    });
    if let Some(k) = threads {
        if k == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global();
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 3 } else { 2 })
        }
    }
}
