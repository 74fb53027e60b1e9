//! `dtbench`: command-line front end for the benchmark library.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data or I/O error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dtree_envelope::bench::{self, ExperimentConfig};
use dtree_envelope::data::{load_csv, CsvSchema, Dataset};
use dtree_envelope::envelope::{self, VoteMatrix};
use dtree_envelope::forest::build_forest;
use dtree_envelope::mcmc::{posterior_path_summary, run_restarts, McmcConfig, PosteriorPredictor};
use dtree_envelope::rng::{derive_seed, tag};
use dtree_envelope::{synth, Error};

#[derive(Parser)]
#[command(name = "dtbench", version, about = "Bayesian decision trees vs randomized forests under the uncertainty envelope")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable), e.g. `--set mcmc.restarts=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed for folds, chains and forests.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the full-length chain settings.
    #[arg(long)]
    full_scale: bool,
    /// Output directory.
    #[arg(long, env = "DTBENCH_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Training CSV; the canonical synthetic split is used when omitted.
    #[arg(long, requires = "test")]
    train: Option<PathBuf>,
    /// Test CSV.
    #[arg(long, requires = "train")]
    test: Option<PathBuf>,
    /// Optional schema file for the CSVs.
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the synthetic train/test sets and estimate the Bayes error.
    Synth {
        #[arg(long, default_value_t = synth::CANONICAL_SEED)]
        seed: u64,
        #[arg(long, default_value_t = synth::CANONICAL_TRAIN_SIZE)]
        train_size: usize,
        #[arg(long, default_value_t = synth::CANONICAL_TEST_SIZE)]
        test_size: usize,
        /// Points used for the Monte-Carlo Bayes error.
        #[arg(long, default_value_t = 100_000)]
        error_samples: usize,
        #[arg(long, env = "DTBENCH_OUT")]
        out: Option<PathBuf>,
    },
    /// Sample Bayesian trees on a training set and score a test set.
    Bayes {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Grow a randomized forest on a training set and score a test set.
    Forest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Envelope report for a vote matrix CSV.
    Envelope {
        votes: PathBuf,
        #[arg(long, default_value_t = 0.99)]
        gamma0: f64,
    },
    /// Sweep the threshold from 0.9 to 1.0 over one or more vote matrices.
    Sweep {
        #[arg(required = true)]
        votes: Vec<PathBuf>,
        /// Output CSV; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a full protocol.
    Bench {
        #[command(subcommand)]
        protocol: Protocol,
    },
}

#[derive(Subcommand)]
enum Protocol {
    /// Gaussian-mixture synthetic problem, both techniques, with sweeps.
    Synthetic {
        #[command(flatten)]
        common: Common,
    },
    /// The seven UCI-style datasets read from a directory of CSVs.
    Uci {
        #[command(flatten)]
        common: Common,
        /// Directory holding `<name>.csv` files.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if common.full_scale {
        cfg.set("scale", "full")?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(data: &DataArgs, cfg: &ExperimentConfig) -> Result<(Dataset, Dataset), Error> {
    match (&data.train, &data.test) {
        (Some(tr), Some(te)) => {
            let schema = match &data.schema {
                Some(p) => CsvSchema::from_file(p)?,
                None => CsvSchema::default(),
            };
            let train = load_csv(tr, &schema)?;
            let test = load_csv(te, &schema)?;
            if train.class_count() != test.class_count() || train.m() != test.m() {
                return Err(Error::InvalidDataset(
                    "train and test differ in class or feature count".into(),
                ));
            }
            Ok((train, test))
        }
        _ => Ok(synth::canonical_split_with_seed(cfg.data_seed)),
    }
}

fn write(path: &Path, body: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    }
    fs::write(path, body).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn json<T: serde::Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth { seed, train_size, test_size, error_samples, out } => {
            let spec = synth::canonical_mixture();
            let train = synth::sample(&spec, train_size, derive_seed(seed, 0));
            let test = synth::sample(&spec, test_size, derive_seed(seed, 1));
            let estimate = synth::bayes_error_estimate(&spec, error_samples, derive_seed(seed, 2))?;
            let on_test = synth::bayes_error_on(&spec, &test);
            if let Some(dir) = out {
                write(&dir.join("train.csv"), &synth::to_dataset(&spec, &train)?.to_csv_string())?;
                write(&dir.join("test.csv"), &synth::to_dataset(&spec, &test)?.to_csv_string())?;
            }
            println!(
                "bayes_error {:.4} (se {:.4}, n {}); on test set {:.4}",
                estimate.rate, estimate.std_error, estimate.count, on_test.rate
            );
        }
        Command::Bayes { common, data } => {
            let cfg = load_config(&common)?;
            let (train, test) = load_data(&data, &cfg)?;
            let mcmc = McmcConfig {
                p_min: cfg.p_min.resolve(train.n()),
                seed: derive_seed(cfg.seed, tag::BAYES),
                ..cfg.mcmc.clone()
            };
            let alpha = mcmc.alpha_for(train.class_count());
            let run = run_restarts(&train, &mcmc)?;
            for w in run.warnings() {
                eprintln!("warning: {w}");
            }
            let predictor = PosteriorPredictor::new(&run.samples, &alpha)?;
            let (probs, votes) = predictor.predict_dataset(&test);
            let sizes: Vec<usize> = run.samples.iter().map(|s| s.tree.split_count()).collect();
            let report = envelope::evaluate(&votes, cfg.gamma0)
                .with_tree_sizes(&sizes)
                .with_soft_predictions(&probs, test.labels());
            let paths = posterior_path_summary(&run.samples)?;
            let post_mean = run.post_burn_in_log_lik_mean(mcmc.burn_in);
            let traces: Vec<_> = run.chains.iter().map(|c| (c.run_index, c.trace.clone())).collect();
            let dir = &cfg.output_dir;
            write(&dir.join("bayes_report.json"), &json(&report))?;
            write(&dir.join("bayes_votes.csv"), &votes.to_csv())?;
            write(&dir.join("bayes_paths.csv"), &bench::paths_csv(&paths))?;
            write(&dir.join("bayes_trace.csv"), &bench::trace_csv(&traces))?;
            write(&dir.join("bayes_sizes.csv"), &bench::histogram_csv(sizes.iter().copied()))?;
            let mut samples = String::new();
            for (i, s) in run.samples.iter().enumerate() {
                samples.push_str(&format!("# sample {i} run {} iteration {}\n", s.run_index, s.iteration));
                samples.push_str(&s.tree.to_text());
            }
            write(&dir.join("bayes_samples.txt"), &samples)?;
            println!(
                "accuracy {:.4}  acceptance {:.3}  post-burn-in log-lik {:.2}  mean splits {:.2}  cc {:.4} u {:.4} ci {:.4}",
                report.accuracy.mean,
                run.stats().acceptance_rate(),
                post_mean,
                report.tree_size.map_or(0.0, |s| s.mean),
                report.cc_rate.mean,
                report.u_rate.mean,
                report.ci_rate.mean
            );
        }
        Command::Forest { common, data } => {
            let cfg = load_config(&common)?;
            let (train, test) = load_data(&data, &cfg)?;
            let fc = dtree_envelope::forest::ForestConfig {
                p_min: cfg.p_min.resolve(train.n()),
                seed: derive_seed(cfg.seed, tag::FOREST),
                ..cfg.forest.clone()
            };
            let alpha = cfg.mcmc.alpha_for(train.class_count());
            let (forest, trace) = build_forest(&train, &test, &fc, &alpha)?;
            let (probs, votes) = forest.predict_dataset(&test);
            let sizes = forest.split_counts();
            let report = envelope::evaluate(&votes, cfg.gamma0)
                .with_tree_sizes(&sizes)
                .with_soft_predictions(&probs, test.labels());
            let dir = &cfg.output_dir;
            write(&dir.join("forest_report.json"), &json(&report))?;
            write(&dir.join("forest_votes.csv"), &votes.to_csv())?;
            write(&dir.join("forest_convergence.csv"), &trace.to_csv())?;
            write(&dir.join("forest_sizes.csv"), &bench::histogram_csv(sizes.iter().copied()))?;
            write(&dir.join("forest_trees.txt"), &forest.to_text())?;
            println!(
                "accuracy {:.4}  best single tree {:.4}  mean splits {:.2}  cc {:.4} u {:.4} ci {:.4}",
                report.accuracy.mean,
                trace.best_validation_accuracy,
                report.tree_size.map_or(0.0, |s| s.mean),
                report.cc_rate.mean,
                report.u_rate.mean,
                report.ci_rate.mean
            );
        }
        Command::Envelope { votes, gamma0 } => {
            let vm = read_votes(&votes)?;
            if !(gamma0 > 1.0 / vm.class_count() as f64 && gamma0 <= 1.0) {
                return Err(Error::Config(format!("gamma0 {gamma0} not in (1/C, 1]")));
            }
            print!("{}", json(&envelope::evaluate(&vm, gamma0)));
        }
        Command::Sweep { votes, out } => {
            let vms = votes.iter().map(|p| read_votes(p)).collect::<Result<Vec<_>, _>>()?;
            let csv = envelope::sweep_csv(&envelope::sweep(&vms, &envelope::default_grid())?);
            match out {
                Some(p) => write(&p, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Bench { protocol } => {
            let mut run = match protocol {
                Protocol::Synthetic { common } => bench::run_synthetic_protocol(&load_config(&common)?)?,
                Protocol::Uci { common, data_dir } => {
                    let mut cfg = load_config(&common)?;
                    if let Some(d) = data_dir {
                        cfg.uci_dir = d;
                    }
                    bench::run_uci_protocol(&cfg)?
                }
            };
            for n in &run.manifest.notices {
                eprintln!("notice: {n}");
            }
            let dir = PathBuf::from(&run.manifest.config["output_dir"]);
            bench::emit_report(&mut run, &dir)?;
            for d in &run.datasets {
                print_dataset(d);
            }
            println!("reports written to {}", dir.display());
        }
    }
    Ok(())
}

fn print_dataset(d: &bench::DatasetOutcome) {
    println!("{} (train {}, test {}, p_min {})", d.name, d.train_rows, d.test_rows, d.p_min);
    for (name, rep) in [("bayes", d.bayes_aggregate()), ("forest", d.forest_aggregate())] {
        if let Some(r) = rep {
            println!(
                "  {name:<6} size {:6.2}  acc {:.4}±{:.4}  cc {:.4}±{:.4}  u {:.4}±{:.4}  ci {:.4}±{:.4}",
                r.tree_size.map_or(0.0, |s| s.mean),
                r.accuracy.mean,
                r.accuracy.two_sigma,
                r.cc_rate.mean,
                r.cc_rate.two_sigma,
                r.u_rate.mean,
                r.u_rate.two_sigma,
                r.ci_rate.mean,
                r.ci_rate.two_sigma
            );
        }
    }
    if let Some(r) = d.size_ratio() {
        println!("  size ratio {r:.3}");
    }
}

fn read_votes(path: &Path) -> Result<VoteMatrix, Error> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    VoteMatrix::from_csv(&text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
