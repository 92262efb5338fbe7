//! Command line surface: estimate calibration errors, run calibration
//! tests, generate synthetic datasets, and reproduce the synthetic
//! experiments as CSV tables.
//!
//! Outputs are pure functions of the flags, input files, and seed:
//! repeated runs are byte-identical, including under different `--workers`
//! values. Exit codes: 0 on success, 1 when a test rejects and
//! `--fail-on-reject` is set, 2 on input errors.

mod experiments;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use calibkit::{
    ece_histogram, load_dataset_csv, mmce_squared, skce_biased, skce_linear, skce_unbiased,
    test_consistency_resampling, test_distribution_free, test_linear_asymptotic,
    test_quadratic_bootstrap, theoretical_ece_tv, write_dataset_csv, BinningSpec, GenerativeConfig,
    KernelConfig, LabeledDataset, ModelPreset, NormIndex, SimplexVector, SkceEstimator,
    TestMethod, TestResult,
};

use experiments::{ExperimentSetup, ModelSpec};

const SEED_ENV: &str = "CALIBKIT_SEED";

#[derive(Parser)]
#[command(
    name = "calibkit",
    version,
    about = "Calibration error estimators and calibration tests for multi-class classifiers",
    after_help = "Kernel grammar: exp(nu=<float>|median|meantv)[*identity] or gauss(nu=...).\n\
                  Binning grammar: uniform:<bins per class> or median:<min records per bin>.\n\
                  The seed falls back to the CALIBKIT_SEED environment variable, then to 0."
)]
struct Cli {
    /// Worker threads for parallel sections (0 = all cores). Outputs do
    /// not depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate calibration errors of a dataset CSV (header p1,...,pm,y).
    Estimate(EstimateArgs),
    /// Run a calibration test on a dataset CSV.
    Test(TestArgs),
    /// Sample a synthetic dataset from a generative model.
    Synth(SynthArgs),
    /// Reproduce the synthetic experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Args)]
struct EstimateArgs {
    /// Dataset CSV path.
    dataset: PathBuf,

    /// Biased squared kernel calibration error estimate.
    #[arg(long)]
    skce_b: bool,
    /// Unbiased quadratic-time estimate.
    #[arg(long)]
    skce_uq: bool,
    /// Unbiased linear-time estimate.
    #[arg(long)]
    skce_ul: bool,
    /// Histogram expected calibration error.
    #[arg(long)]
    ece: bool,
    /// Squared maximum mean calibration error (max-confidence lens).
    #[arg(long)]
    mmce: bool,

    /// Kernel configuration.
    #[arg(long, default_value = "exp(nu=median)")]
    kernel: String,
    /// Binning for the expected calibration error.
    #[arg(long, default_value = "uniform:10")]
    bins: String,
    /// Also write the rows to this CSV file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    /// Dataset CSV path.
    dataset: PathBuf,

    /// Test method: D_b, D_uq, D_ul (distribution-free bounds), A_l
    /// (asymptotic linear), A_uq (quadratic bootstrap), or C (consistency
    /// resampling).
    #[arg(long)]
    method: String,

    /// Kernel configuration (ignored by C).
    #[arg(long, default_value = "exp(nu=median)")]
    kernel: String,
    /// Binning (used by C only).
    #[arg(long, default_value = "uniform:10")]
    bins: String,
    /// Significance level for the reject column.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Bootstrap rounds for A_uq and C.
    #[arg(long, default_value_t = 1000)]
    boot: usize,
    /// Seed (falls back to CALIBKIT_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Matrix norm index p of the distribution-free bound.
    #[arg(long, default_value = "2")]
    norm_p: String,
    /// Matrix norm index q of the distribution-free bound.
    #[arg(long, default_value = "2")]
    norm_q: String,
    /// Exit with code 1 when the test rejects at the chosen level.
    #[arg(long)]
    fail_on_reject: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Model: M1, M2, M3, or custom.
    model: String,

    /// Number of records.
    #[arg(long)]
    n: usize,
    /// Seed (falls back to CALIBKIT_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Dirichlet parameter for custom models: comma list, or a single
    /// value broadcast to --m classes.
    #[arg(long)]
    alpha: Option<String>,
    /// Mixture weight π in [0, 1] for custom models.
    #[arg(long)]
    pi: Option<f64>,
    /// Mixture label distribution for custom models: comma list,
    /// "uniform", or "e1".."em" for a one-hot vector.
    #[arg(long)]
    beta: Option<String>,
    /// Class count when --alpha is a single broadcast value.
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Distributions of calibration error estimates over replicates.
    Errors(ErrorsArgs),
    /// P-value distributions and empirical test errors over replicates.
    Pvalues(PvaluesArgs),
}

#[derive(Args)]
struct ErrorsArgs {
    /// Models, comma separated (M1, M2, M3).
    #[arg(long, default_value = "M1,M2,M3")]
    models: String,
    /// Estimators, comma separated: skce_b, skce_uq, skce_ul,
    /// ece_uniform, ece_median.
    #[arg(long, default_value = "skce_b,skce_uq,skce_ul,ece_uniform,ece_median")]
    estimators: String,
    /// Replicates per model.
    #[arg(long, default_value_t = 500)]
    r: usize,
    /// Records per replicate.
    #[arg(long, default_value_t = 250)]
    n: usize,
    /// Kernel configuration.
    #[arg(long, default_value = "exp(nu=median)")]
    kernel: String,
    /// Bins per class for ece_uniform.
    #[arg(long, default_value_t = 10)]
    bins_uniform: usize,
    /// Minimum records per bin for ece_median.
    #[arg(long, default_value_t = 5)]
    bins_min: usize,
    /// Seed (falls back to CALIBKIT_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Per-replicate estimates CSV.
    #[arg(long)]
    out: PathBuf,
    /// Per-cell summary CSV (mean and true value).
    #[arg(long)]
    summary_out: Option<PathBuf>,
}

#[derive(Args)]
struct PvaluesArgs {
    /// Models, comma separated (M1, M2, M3).
    #[arg(long, default_value = "M1,M2,M3")]
    models: String,
    /// Methods, comma separated: D_b, D_uq, D_ul, A_l, A_uq, C.
    #[arg(long, default_value = "D_b,D_uq,D_ul,A_l,A_uq,C")]
    methods: String,
    /// Replicates per model.
    #[arg(long, default_value_t = 500)]
    r: usize,
    /// Records per replicate.
    #[arg(long, default_value_t = 250)]
    n: usize,
    /// Kernel configuration.
    #[arg(long, default_value = "exp(nu=median)")]
    kernel: String,
    /// Binning for the consistency resampling test.
    #[arg(long, default_value = "uniform:10")]
    bins: String,
    /// Bootstrap rounds for A_uq and C.
    #[arg(long, default_value_t = 1000)]
    boot: usize,
    /// Significance grid: "start:end:step" or a comma list, ascending in
    /// (0, 1).
    #[arg(long, default_value = "0.01:0.25:0.01")]
    alphas: String,
    /// Matrix norm index p of the distribution-free bounds.
    #[arg(long, default_value = "2")]
    norm_p: String,
    /// Matrix norm index q of the distribution-free bounds.
    #[arg(long, default_value = "2")]
    norm_q: String,
    /// Seed (falls back to CALIBKIT_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Per-replicate p-values CSV.
    #[arg(long)]
    out: PathBuf,
    /// Empirical test error CSV over the significance grid.
    #[arg(long)]
    test_errors_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
    {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Test(args) => cmd_test(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Experiment(ExperimentCommand::Errors(args)) => cmd_experiment_errors(args),
        Command::Experiment(ExperimentCommand::Pvalues(args)) => cmd_experiment_pvalues(args),
    }
}

fn resolve_seed(flag: Option<u64>) -> anyhow::Result<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(text) => text
            .parse()
            .with_context(|| format!("cannot parse {SEED_ENV}={text:?} as a seed")),
        Err(_) => Ok(0),
    }
}

fn load_dataset(path: &Path) -> anyhow::Result<LabeledDataset> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    load_dataset_csv(BufReader::new(file))
        .with_context(|| format!("cannot load {}", path.display()))
}

fn emit(text: &str, out: Option<&Path>) -> anyhow::Result<()> {
    print!("{text}");
    if let Some(path) = out {
        std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> anyhow::Result<ExitCode> {
    let ds = load_dataset(&args.dataset)?;
    let config = KernelConfig::parse(&args.kernel)?;
    let binning = BinningSpec::parse(&args.bins)?;

    let any_flag = args.skce_b || args.skce_uq || args.skce_ul || args.ece || args.mmce;
    let (skce_b, skce_uq, skce_ul, ece, mmce) = if any_flag {
        (args.skce_b, args.skce_uq, args.skce_ul, args.ece, args.mmce)
    } else {
        // no selection means everything
        (true, true, true, true, true)
    };

    let mut rows = String::from("estimator,value,n,descriptor\n");
    let n = ds.len();

    if skce_b || skce_uq || skce_ul {
        let kernel = config.resolve(&ds, None)?;
        if skce_b {
            let est = skce_biased(&kernel, &ds)?;
            rows.push_str(&format!("skce_b,{},{},{}\n", est.value, n, est.kernel));
        }
        if skce_uq {
            let est = skce_unbiased(&kernel, &ds)?;
            rows.push_str(&format!("skce_uq,{},{},{}\n", est.value, n, est.kernel));
        }
        if skce_ul {
            let est = skce_linear(&kernel, &ds)?;
            rows.push_str(&format!("skce_ul,{},{},{}\n", est.value, n, est.kernel));
        }
    }
    if ece {
        let est = ece_histogram(&ds, binning)?;
        rows.push_str(&format!(
            "ece,{},{},{}\n",
            est.value,
            n,
            est.binning.describe()
        ));
    }
    if mmce {
        // the scalar kernel acts on max-confidence pairs, so bandwidth
        // selection runs on the lens dataset
        let lens = calibkit::max_lens(&ds)?;
        let lens_kernel = config.resolve(&lens, None)?;
        let scalar = lens_kernel.terms()[0].0;
        let value = mmce_squared(scalar, &ds)?;
        rows.push_str(&format!("mmce_sq,{},{},{}\n", value, n, scalar.describe()));
    }

    emit(&rows, args.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn format_params(result: &TestResult) -> String {
    result
        .params
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn cmd_test(args: TestArgs) -> anyhow::Result<ExitCode> {
    if args.alpha.is_nan() || args.alpha <= 0.0 || args.alpha >= 1.0 {
        bail!("--alpha must lie in (0, 1), got {}", args.alpha);
    }
    let ds = load_dataset(&args.dataset)?;
    let method = TestMethod::parse(&args.method)?;
    let seed = resolve_seed(args.seed)?;
    let config = KernelConfig::parse(&args.kernel)?;
    let binning = BinningSpec::parse(&args.bins)?;
    let p = NormIndex::parse(&args.norm_p)?;
    let q = NormIndex::parse(&args.norm_q)?;

    let result = match method {
        TestMethod::DistFreeBiased => {
            test_distribution_free(&config.resolve(&ds, None)?, &ds, SkceEstimator::Biased, p, q)?
        }
        TestMethod::DistFreeUnbiased => test_distribution_free(
            &config.resolve(&ds, None)?,
            &ds,
            SkceEstimator::UnbiasedQuadratic,
            p,
            q,
        )?,
        TestMethod::DistFreeLinear => test_distribution_free(
            &config.resolve(&ds, None)?,
            &ds,
            SkceEstimator::UnbiasedLinear,
            p,
            q,
        )?,
        TestMethod::AsymptoticLinear => {
            test_linear_asymptotic(&config.resolve(&ds, None)?, &ds)?
        }
        TestMethod::AsymptoticQuadraticBootstrap => {
            test_quadratic_bootstrap(&config.resolve(&ds, None)?, &ds, args.boot, seed)?
        }
        TestMethod::ConsistencyResampling => {
            test_consistency_resampling(&ds, binning, args.boot, seed)?
        }
    };

    let reject = result.reject_at(args.alpha);
    let mut text = String::from("method,statistic,pvalue,reject,params\n");
    text.push_str(&format!(
        "{},{},{},{},{}\n",
        result.method.label(),
        result.statistic,
        result.pvalue,
        reject,
        format_params(&result)
    ));
    emit(&text, None)?;

    if reject && args.fail_on_reject {
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_comma_floats(text: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .with_context(|| format!("cannot parse {f:?} as a number"))
        })
        .collect()
}

fn parse_model(name: &str, args: &SynthArgs) -> anyhow::Result<GenerativeConfig> {
    if name != "custom" {
        return Ok(ModelPreset::parse(name)?.config());
    }
    let alpha_text = args
        .alpha
        .as_deref()
        .context("custom models need --alpha")?;
    let alpha = if alpha_text.contains(',') {
        parse_comma_floats(alpha_text)?
    } else {
        let value: f64 = alpha_text
            .parse()
            .with_context(|| format!("cannot parse --alpha {alpha_text:?}"))?;
        let m = args.m.context("a single --alpha value needs --m")?;
        vec![value; m]
    };
    let pi = args.pi.context("custom models need --pi")?;
    let beta_text = args.beta.as_deref().context("custom models need --beta")?;
    let beta = parse_beta(beta_text, alpha.len())?;
    Ok(GenerativeConfig::new(alpha, pi, beta)?)
}

fn parse_beta(text: &str, m: usize) -> anyhow::Result<SimplexVector> {
    if text == "uniform" {
        return Ok(SimplexVector::new(vec![1.0 / m as f64; m])?);
    }
    if let Some(idx) = text.strip_prefix('e') {
        if let Ok(j) = idx.parse::<usize>() {
            if j < 1 || j > m {
                bail!("--beta {text:?} is out of range for {m} classes");
            }
            let mut entries = vec![0.0; m];
            entries[j - 1] = 1.0;
            return Ok(SimplexVector::new(entries)?);
        }
    }
    let entries = parse_comma_floats(text)?;
    if entries.len() != m {
        bail!("--beta has {} entries but the model has {m} classes", entries.len());
    }
    Ok(SimplexVector::new(entries)?)
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<ExitCode> {
    let cfg = parse_model(&args.model, &args)?;
    let seed = resolve_seed(args.seed)?;
    let ds = calibkit::sample_dataset(&cfg, args.n, seed)?;

    eprintln!(
        "theoretical ECE (TV distance): {}",
        theoretical_ece_tv(&cfg)?
    );

    match &args.out {
        Some(path) => {
            let file =
                File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
            let mut writer = BufWriter::new(file);
            write_dataset_csv(&ds, &mut writer)?;
            writer.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut writer = BufWriter::new(stdout.lock());
            write_dataset_csv(&ds, &mut writer)?;
            writer.flush()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_models(text: &str) -> anyhow::Result<Vec<ModelSpec>> {
    let mut models: Vec<ModelSpec> = text
        .split(',')
        .map(|name| Ok(ModelSpec::preset(ModelPreset::parse(name.trim())?)))
        .collect::<anyhow::Result<_>>()?;
    models.sort_by(|a, b| a.name.cmp(&b.name));
    models.dedup_by(|a, b| a.name == b.name);
    Ok(models)
}

fn parse_alpha_grid(text: &str) -> anyhow::Result<Vec<f64>> {
    let grid: Vec<f64> = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            bail!("--alphas range must be start:end:step, got {text:?}");
        }
        let start: f64 = parts[0].parse().context("bad grid start")?;
        let end: f64 = parts[1].parse().context("bad grid end")?;
        let step: f64 = parts[2].parse().context("bad grid step")?;
        if step.is_nan() || step <= 0.0 {
            bail!("--alphas step must be positive");
        }
        let mut grid = Vec::new();
        let mut k = 0usize;
        loop {
            // round accumulated float noise away so the CSV carries clean
            // grid values like 0.03 rather than 0.030000000000000002
            let value = ((start + k as f64 * step) * 1e10).round() / 1e10;
            if value > end + 1e-12 {
                break;
            }
            grid.push(value);
            k += 1;
        }
        grid
    } else {
        parse_comma_floats(text)?
    };
    if grid.is_empty() {
        bail!("--alphas grid is empty");
    }
    if grid.iter().any(|&a| a.is_nan() || a <= 0.0 || a >= 1.0) {
        bail!("--alphas values must lie in (0, 1)");
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        bail!("--alphas values must be strictly ascending");
    }
    Ok(grid)
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_experiment_errors(args: ErrorsArgs) -> anyhow::Result<ExitCode> {
    let models = parse_models(&args.models)?;
    let estimators = experiments::parse_estimators(&args.estimators)?;
    let setup = ExperimentSetup {
        models,
        replicates: args.r,
        samples: args.n,
        kernel: KernelConfig::parse(&args.kernel)?,
        seed: resolve_seed(args.seed)?,
        boot: 0,
        binning: BinningSpec::UniformPerClass {
            bins_per_class: args.bins_uniform,
        },
        norm_p: NormIndex::Two,
        norm_q: NormIndex::Two,
    };
    if setup.replicates == 0 || setup.samples < 2 {
        bail!("need at least 1 replicate and 2 samples per dataset");
    }

    let report = experiments::run_errors(&setup, &estimators, args.bins_uniform, args.bins_min)?;
    write_text(&args.out, &report.rows_csv)?;
    if let Some(path) = &args.summary_out {
        write_text(path, &report.summary_csv)?;
    }
    eprintln!(
        "wrote {} estimates for {} model(s) to {}",
        setup.replicates * estimators.len() * setup.models.len(),
        setup.models.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_experiment_pvalues(args: PvaluesArgs) -> anyhow::Result<ExitCode> {
    let models = parse_models(&args.models)?;
    let mut methods: Vec<TestMethod> = args
        .methods
        .split(',')
        .map(|m| TestMethod::parse(m.trim()).map_err(Into::into))
        .collect::<anyhow::Result<_>>()?;
    methods.sort_by_key(|m| m.label());
    methods.dedup();
    let grid = parse_alpha_grid(&args.alphas)?;

    let setup = ExperimentSetup {
        models,
        replicates: args.r,
        samples: args.n,
        kernel: KernelConfig::parse(&args.kernel)?,
        seed: resolve_seed(args.seed)?,
        boot: args.boot,
        binning: BinningSpec::parse(&args.bins)?,
        norm_p: NormIndex::parse(&args.norm_p)?,
        norm_q: NormIndex::parse(&args.norm_q)?,
    };
    if setup.replicates == 0 || setup.samples < 4 {
        bail!("need at least 1 replicate and 4 samples per dataset");
    }
    if setup.boot == 0 {
        bail!("--boot must be at least 1");
    }

    let report = experiments::run_pvalues(&setup, &methods, &grid)?;
    write_text(&args.out, &report.pvalues_csv)?;
    if let Some(path) = &args.test_errors_out {
        write_text(path, &report.test_errors_csv)?;
    }
    eprintln!(
        "wrote {} p-values to {} (kernel {}, distribution-free norms p={}, q={})",
        setup.replicates * methods.len() * setup.models.len(),
        args.out.display(),
        args.kernel,
        setup.norm_p.label(),
        setup.norm_q.label(),
    );
    Ok(ExitCode::SUCCESS)
}
