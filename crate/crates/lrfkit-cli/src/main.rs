//! `lrfkit` command-line front end: verification suites, attention analysis,
//! streaming-memory benchmarks, dendritic kernel export and toy training.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or I/O error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use lrfkit::analysis::{
    closed_form_entropy_vsa, closed_form_mu, entropy, lrf_mix, model_weights, normalize,
    receptive_radius_seq, uniform_local_weights, DistanceModel, MuKind, WeightKind,
};
use lrfkit::dendrite::dyn_kernel;
use lrfkit::membench::{compare, Mode, SweepPoint};
use lrfkit::neuron::SurrogateSpec;
use lrfkit::synth::random_stable_dendritic;
use lrfkit::train::{
    evaluate, load_checkpoint, save_checkpoint, train_toy, write_log_csv, EpochStats, ModelKind,
    ToyModel, ToyTask, TrainConfig,
};
use lrfkit::verify::{scan_fft_duality_check, suite, CheckResult, Scope};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "lrfkit", version, about = "Spiking attention verification toolkit")]
struct Cli {
    /// JSON config file; explicit flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the named invariant suites and emit a JSON report
    Verify(VerifyArgs),
    /// Emit a distance histogram and summary row for one attention mechanism
    Analyze(AnalyzeArgs),
    /// Profile streaming auxiliary-memory footprints across a sweep
    BenchMem(BenchMemArgs),
    /// Train a toy classifier and write the loss log and checkpoint
    Train(TrainArgs),
    /// Export the dendritic impulse-response kernel as CSV (m, channel, tap_value)
    ExportKernel(ExportKernelArgs),
}

#[derive(Args)]
struct VerifyArgs {
    /// One of: all, attention, dyn, analysis, membench
    #[arg(long)]
    scope: Option<String>,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Test fixture: perturb one FFT kernel tap by this amount so that
    /// scan_fft_duality fails
    #[arg(long, hide = true)]
    inject_kernel_fault: Option<f64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// One of: vsa, ssa, lrf-ssa
    #[arg(long)]
    mechanism: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Number of distance buckets (token count along the distance axis)
    #[arg(long)]
    n: Option<usize>,
    /// Local mixing weight (lrf-ssa only)
    #[arg(long)]
    lambda: Option<f64>,
    /// Uniform local radius (lrf-ssa only)
    #[arg(long)]
    radius: Option<usize>,
    /// Output directory for histogram.csv and summary.csv
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchMemArgs {
    /// Comma-separated modes: ssa_v1, ssa_v2, lrf_ssa_causal, lrf_dyn
    #[arg(long)]
    modes: Option<String>,
    /// Comma-separated token counts
    #[arg(long)]
    n: Option<String>,
    /// Comma-separated channel counts
    #[arg(long)]
    d: Option<String>,
    /// Comma-separated dendrite counts
    #[arg(long)]
    k: Option<String>,
    /// Comma-separated local dilations
    #[arg(long)]
    dilations: Option<String>,
    /// csv or json
    #[arg(long)]
    format: Option<String>,
    /// Write here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// One of: ssa, lrf_ssa, lrf_dyn
    #[arg(long)]
    model: Option<String>,
    /// RNG seed (required; no entropy-sourced defaults)
    #[arg(long)]
    seed: Option<u64>,
    /// 0 writes the untrained chance-level row only
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    timesteps: Option<usize>,
    /// Training log CSV path
    #[arg(long)]
    out_log: Option<PathBuf>,
    /// Checkpoint path (omit to skip saving)
    #[arg(long)]
    out_checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct ExportKernelArgs {
    /// Export the kernel of a trained lrf_dyn checkpoint
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// RNG seed for a synthetic stable parameterization (required without --checkpoint)
    #[arg(long)]
    seed: Option<u64>,
    /// Dendrites per channel (synthetic mode)
    #[arg(long)]
    k: Option<usize>,
    /// Channel count (synthetic mode)
    #[arg(long)]
    d: Option<usize>,
    /// Number of kernel taps
    #[arg(long)]
    len: Option<usize>,
    /// Output CSV path
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Optional JSON config file: one section per subcommand, every field
/// optional. Precedence is flags > file > built-in defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    verify: VerifyFile,
    #[serde(default)]
    analyze: AnalyzeFile,
    #[serde(default)]
    bench_mem: BenchMemFile,
    #[serde(default)]
    train: TrainFile,
    #[serde(default)]
    export_kernel: ExportKernelFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyFile {
    scope: Option<String>,
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalyzeFile {
    mechanism: Option<String>,
    alpha: Option<f64>,
    beta: Option<f64>,
    n: Option<usize>,
    lambda: Option<f64>,
    radius: Option<usize>,
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchMemFile {
    modes: Option<String>,
    n: Option<String>,
    d: Option<String>,
    k: Option<String>,
    dilations: Option<String>,
    format: Option<String>,
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    model: Option<String>,
    seed: Option<u64>,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    timesteps: Option<usize>,
    out_log: Option<PathBuf>,
    out_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportKernelFile {
    checkpoint: Option<PathBuf>,
    seed: Option<u64>,
    k: Option<usize>,
    d: Option<usize>,
    len: Option<usize>,
    out: Option<PathBuf>,
}

/// Command outcome: `Check` means "ran, but a verification check failed"
/// (exit 1); errors map to exit 2.
enum Outcome {
    Ok,
    CheckFailed(String),
}

#[derive(Debug)]
struct CliError(String);

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<lrfkit::Error> for CliError {
    fn from(e: lrfkit::Error) -> Self {
        CliError(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError(e.to_string())
    }
}

type CliResult = Result<Outcome, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let file_cfg = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Verify(args) => cmd_verify(args, file_cfg.verify),
        Command::Analyze(args) => cmd_analyze(args, file_cfg.analyze),
        Command::BenchMem(args) => cmd_bench_mem(args, file_cfg.bench_mem),
        Command::Train(args) => cmd_train(args, file_cfg.train),
        Command::ExportKernel(args) => cmd_export_kernel(args, file_cfg.export_kernel),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError(format!("invalid config {}: {e}", p.display())))
        }
    }
}

/// Writes via a temp file in the target directory plus rename, so failed
/// runs never leave partial output behind.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    fs::write(tmp.path(), contents)?;
    tmp.persist(path).map_err(|e| CliError(e.to_string()))?;
    Ok(())
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|item| {
            item.trim()
                .parse::<T>()
                .map_err(|e| CliError(format!("invalid {what} '{item}': {e}")))
        })
        .collect()
}

#[derive(Serialize)]
struct VerifyReport {
    schema_version: u32,
    scope: String,
    passed: bool,
    checks: Vec<CheckResult>,
}

fn cmd_verify(args: VerifyArgs, file: VerifyFile) -> CliResult {
    let scope_str = args.scope.or(file.scope).unwrap_or_else(|| "all".to_string());
    let scope = Scope::from_str(&scope_str)?;
    let mut checks = suite(scope);
    if let Some(eps) = args.inject_kernel_fault {
        let faulted = scan_fft_duality_check(Some(eps));
        match checks.iter_mut().find(|c| c.name == "scan_fft_duality") {
            Some(slot) => *slot = faulted,
            None => checks.push(faulted),
        }
    }
    let passed = checks.iter().all(|c| c.passed);
    let report = VerifyReport {
        schema_version: SCHEMA_VERSION,
        scope: scope_str,
        passed,
        checks,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match args.out.or(file.out) {
        Some(path) => write_atomic(&path, json.as_bytes())?,
        None => println!("{json}"),
    }
    if passed {
        Ok(Outcome::Ok)
    } else {
        let failing: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        Ok(Outcome::CheckFailed(failing.join(", ")))
    }
}

fn cmd_analyze(args: AnalyzeArgs, file: AnalyzeFile) -> CliResult {
    let mechanism = args
        .mechanism
        .or(file.mechanism)
        .ok_or_else(|| CliError("--mechanism is required (vsa, ssa, lrf-ssa)".into()))?;
    let alpha = args.alpha.or(file.alpha).unwrap_or(1.0);
    let beta = args
        .beta
        .or(file.beta)
        .ok_or_else(|| CliError("--beta is required".into()))?;
    let n = args.n.or(file.n).unwrap_or(64);
    let lambda = args.lambda.or(file.lambda).unwrap_or(0.5);
    let radius = args.radius.or(file.radius).unwrap_or(1);
    let out_dir = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("."));

    let model = DistanceModel::new(alpha, beta, n)?;
    let weights = match mechanism.as_str() {
        "vsa" => normalize(&model_weights(&model, WeightKind::Vsa))?,
        "ssa" => normalize(&model_weights(&model, WeightKind::Ssa))?,
        "lrf-ssa" | "lrf_ssa" => {
            let ssa = normalize(&model_weights(&model, WeightKind::Ssa))?;
            let local = uniform_local_weights(radius, n);
            lrf_mix(&ssa, &local, lambda)?
        }
        other => return Err(CliError(format!("unknown mechanism '{other}'"))),
    };
    let mu = receptive_radius_seq(&weights)?;
    let h = entropy(&weights)?;

    let mut hist = String::from("distance,weight\n");
    for (delta, w) in weights.iter().enumerate() {
        hist.push_str(&format!("{delta},{w:.12}\n"));
    }
    let summary = format!("mechanism,mu,entropy\n{mechanism},{mu:.12},{h:.12}\n");
    write_atomic(&out_dir.join("histogram.csv"), hist.as_bytes())?;
    write_atomic(&out_dir.join("summary.csv"), summary.as_bytes())?;

    // comparison against the infinite-lattice closed forms, for the console
    let closed = match mechanism.as_str() {
        "vsa" => closed_form_mu(&model, MuKind::VsaInf).ok(),
        "ssa" => closed_form_mu(&model, MuKind::SsaInf).ok(),
        _ => None,
    };
    match closed {
        Some(c) => println!("{mechanism}: mu {mu:.6} (closed form {c:.6}), entropy {h:.6} nats"),
        None => println!("{mechanism}: mu {mu:.6}, entropy {h:.6} nats"),
    }
    if mechanism == "vsa" {
        let h_closed = closed_form_entropy_vsa(&model, false)?;
        println!("vsa closed-form entropy: {h_closed:.6} nats");
    }
    Ok(Outcome::Ok)
}

fn cmd_bench_mem(args: BenchMemArgs, file: BenchMemFile) -> CliResult {
    let modes_str = args
        .modes
        .or(file.modes)
        .unwrap_or_else(|| "ssa_v1,ssa_v2,lrf_ssa_causal,lrf_dyn".to_string());
    let modes: Vec<Mode> = modes_str
        .split(',')
        .map(|m| Mode::from_str(m.trim()).map_err(CliError::from))
        .collect::<Result<_, _>>()?;
    let ns: Vec<usize> = parse_list(&args.n.or(file.n).unwrap_or_else(|| "16,64,256".into()), "n")?;
    let ds: Vec<usize> = parse_list(&args.d.or(file.d).unwrap_or_else(|| "64,256,512".into()), "d")?;
    let ks: Vec<usize> = parse_list(&args.k.or(file.k).unwrap_or_else(|| "8".into()), "k")?;
    let dilations: Vec<usize> =
        parse_list(&args.dilations.or(file.dilations).unwrap_or_else(|| "3,5".into()), "dilation")?;
    let format = args.format.or(file.format).unwrap_or_else(|| "csv".to_string());

    let mut sweep = Vec::new();
    for &n in &ns {
        for &d in &ds {
            for &k in &ks {
                sweep.push(SweepPoint { n, d, k });
            }
        }
    }
    let rows = compare(&modes, &sweep, &dilations)?;
    let rendered = match format.as_str() {
        "csv" => {
            let mut s = String::from("mode,n,d,k,peak_state_values,local_buffer_values,total\n");
            for r in &rows {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.mode, r.n, r.d, r.k, r.peak_state_values, r.local_buffer_values, r.total
                ));
            }
            s
        }
        "json" => {
            #[derive(Serialize)]
            struct Report<'a> {
                schema_version: u32,
                rows: &'a [lrfkit::membench::MemProfile],
            }
            serde_json::to_string_pretty(&Report { schema_version: SCHEMA_VERSION, rows: &rows })
                .expect("profiles serialize")
        }
        other => return Err(CliError(format!("unknown format '{other}' (csv or json)"))),
    };
    match args.out.or(file.out) {
        Some(path) => write_atomic(&path, rendered.as_bytes())?,
        None => print!("{rendered}"),
    }
    Ok(Outcome::Ok)
}

fn cmd_train(args: TrainArgs, file: TrainFile) -> CliResult {
    let model_str = args
        .model
        .or(file.model)
        .ok_or_else(|| CliError("--model is required (ssa, lrf_ssa, lrf_dyn)".into()))?;
    let kind = ModelKind::from_str(&model_str)?;
    let seed = args
        .seed
        .or(file.seed)
        .ok_or_else(|| CliError("--seed is required (randomized command)".into()))?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: args.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        learning_rate: args
            .learning_rate
            .or(file.learning_rate)
            .unwrap_or(defaults.learning_rate),
        batch_size: args.batch_size.or(file.batch_size).unwrap_or(defaults.batch_size),
        timesteps: args.timesteps.or(file.timesteps).unwrap_or(defaults.timesteps),
        seed,
        ..defaults
    };
    let out_log = args.out_log.or(file.out_log).unwrap_or_else(|| PathBuf::from("train_log.csv"));
    let out_ckpt = args.out_checkpoint.or(file.out_checkpoint);
    let task = ToyTask::default();

    let (log, model) = if cfg.epochs == 0 {
        // untrained model: a single chance-level row
        let model = ToyModel::new(kind, &task, cfg.timesteps, SurrogateSpec::default(), cfg.seed)?;
        let train_set = task.dataset(0, task.train_samples);
        let test_set = task.dataset(task.train_samples, task.test_samples);
        let (train_loss, train_acc) = evaluate(&model, &train_set);
        let (_, test_acc) = evaluate(&model, &test_set);
        (vec![EpochStats { epoch: 0, train_loss, train_acc, test_acc }], model)
    } else {
        let outcome = train_toy(&task, kind, &cfg)?;
        (outcome.log, outcome.model)
    };

    let mut csv = Vec::new();
    write_log_csv(&log, &mut csv)?;
    write_atomic(&out_log, &csv)?;
    if let Some(path) = out_ckpt {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir)?;
        let tmp = tempfile::NamedTempFile::new_in(dir)?;
        save_checkpoint(&model, tmp.path())?;
        tmp.persist(&path).map_err(|e| CliError(e.to_string()))?;
    }
    let last = log.last().expect("log has at least one row");
    println!(
        "{model_str} seed {seed}: {} epochs, final test_acc {:.4}, log {}",
        log.len(),
        last.test_acc,
        out_log.display()
    );
    Ok(Outcome::Ok)
}

fn cmd_export_kernel(args: ExportKernelArgs, file: ExportKernelFile) -> CliResult {
    let len = args.len.or(file.len).unwrap_or(64);
    let checkpoint = args.checkpoint.or(file.checkpoint);
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("kernel.csv"));
    let (params, gain) = match checkpoint {
        Some(path) => {
            let model = load_checkpoint(&path)?;
            let params = model.dendrite.clone().ok_or_else(|| {
                CliError(format!("checkpoint {} holds no dendritic parameters", path.display()))
            })?;
            (params, Some(model.dyn_gain))
        }
        None => {
            let seed = args
                .seed
                .or(file.seed)
                .ok_or_else(|| CliError("--seed is required without --checkpoint".into()))?;
            let k = args.k.or(file.k).unwrap_or(8);
            let d = args.d.or(file.d).unwrap_or(16);
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            (random_stable_dendritic(&mut rng, k, d, 0.95), None)
        }
    };
    let kernel = dyn_kernel(&params, len)?;
    let d = kernel.d;
    let mut csv = String::from("m,channel,tap_value\n");
    for m in 0..kernel.len {
        for c in 0..d {
            let mut tap = kernel.taps[m * d + c];
            if let Some(g) = &gain {
                tap *= g[c];
            }
            csv.push_str(&format!("{m},{c},{tap:.12e}\n"));
        }
    }
    write_atomic(&out, csv.as_bytes())?;
    println!("wrote {} taps x {} channels to {}", kernel.len, d, out.display());
    Ok(Outcome::Ok)
}
