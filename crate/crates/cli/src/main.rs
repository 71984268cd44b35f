use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use d3fuse::data::{BenchmarkConfig, DefectMix};
use d3fuse::pipeline::{
    cmd_ablate, cmd_benchmark, cmd_eval, cmd_fit, cmd_ps_solve, cmd_synth, valid_mask_path, BackendKind, ModalitySet,
    RunConfig, SynthSummary, METRICS_FILE,
};
use d3fuse::Error;

#[derive(Parser)]
#[command(
    name = "d3fuse",
    version,
    about = "Multimodal anomaly detection with photometric stereo and point clouds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic samples into a dataset tree.
    Synth(SynthArgs),
    /// Recover a normal map from a stack of single-light images.
    PsSolve(PsSolveArgs),
    /// Fit a model bundle on the training split of every category.
    Fit(RunArgs),
    /// Score the test split with a fitted bundle and write metrics and heatmaps.
    Eval(EvalArgs),
    /// Run the modality, downsampling and interpolation ablations.
    Ablate(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset root.
    #[arg(long)]
    out: PathBuf,
    /// Scene spec (JSON). Renders `--count` scenes into one category.
    #[arg(long, conflicts_with_all = ["benchmark", "benchmark_config"], required_unless_present_any = ["benchmark", "benchmark_config"])]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value = "synthetic")]
    category: String,
    /// Put defect-free scenes in test/good instead of train/good.
    #[arg(long)]
    test: bool,
    /// Generate the full multi-category benchmark instead of a single spec.
    #[arg(long)]
    benchmark: bool,
    /// Benchmark settings (JSON); implies `--benchmark`.
    #[arg(long)]
    benchmark_config: Option<PathBuf>,
    /// Benchmark defect mix: mixed or small-geometric.
    #[arg(long)]
    defects: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "D3FUSE_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct PsSolveArgs {
    /// Directory of grayscale images, one per light, in file-name order.
    #[arg(long)]
    lights: PathBuf,
    /// Lighting rig: one light direction (x y z) per line.
    #[arg(long)]
    rig: PathBuf,
    /// Output normal map PNG; the validity mask is written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.02)]
    shadow_threshold: f64,
}

#[derive(Args, Default)]
struct RunArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    root: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of rgb, ps, 3d.
    #[arg(long)]
    modalities: Option<ModalitySet>,
    /// handcrafted or imported.
    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    channel_frac: Option<f64>,
    #[arg(long)]
    coreset: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "D3FUSE_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Model bundle directory; defaults to the output directory.
    #[arg(long)]
    model: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> d3fuse::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                })*
            };
        }
        set!(
            modalities,
            backend,
            patch_size,
            alpha,
            blocks,
            channel_frac,
            coreset,
            nu,
            epochs,
            lr,
            seed,
            threads
        );
        if let Some(root) = &self.root {
            cfg.root = Some(root.clone());
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_summary(rows: &[SynthSummary]) {
    let w = rows.iter().map(|r| r.category.len()).max().unwrap_or(0).max(8);
    let k = rows.iter().map(|r| r.kind.len()).max().unwrap_or(0).max(4);
    println!("{:<w$}  {:<5}  {:<k$}  {:>5}", "category", "split", "kind", "count");
    for r in rows {
        println!("{:<w$}  {:<5}  {:<k$}  {:>5}", r.category, r.split, r.kind, r.count);
    }
    println!("total {}", rows.iter().map(|r| r.count).sum::<usize>());
}

fn synth(args: &SynthArgs) -> d3fuse::Result<()> {
    let threads = args.threads.unwrap_or(0);
    let rows = if let Some(spec) = &args.spec {
        let seed = args.seed.unwrap_or(0);
        d3fuse::pipeline::with_threads(threads, || {
            cmd_synth(spec, args.count, &args.out, &args.category, args.test, seed)
        })?
    } else {
        let mut cfg = match &args.benchmark_config {
            Some(path) => read_benchmark_config(path)?,
            None => BenchmarkConfig::default(),
        };
        if let Some(mix) = &args.defects {
            cfg.defects = match mix.as_str() {
                "mixed" => DefectMix::Mixed,
                "small-geometric" => DefectMix::SmallGeometric,
                other => return Err(Error::Argument(format!("unknown defect mix `{other}`"))),
            };
        }
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        d3fuse::pipeline::with_threads(threads, || cmd_benchmark(&cfg, &args.out))?
    };
    print_summary(&rows);
    Ok(())
}

fn read_benchmark_config(path: &Path) -> d3fuse::Result<BenchmarkConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> d3fuse::Result<()> {
    match cli.command {
        Command::Synth(args) => synth(&args),
        Command::PsSolve(args) => {
            let nmap = cmd_ps_solve(&args.lights, &args.rig, &args.out, args.shadow_threshold)?;
            let valid = nmap.valid().iter().filter(|v| **v).count();
            println!(
                "wrote {} and {} ({valid}/{} pixels valid)",
                args.out.display(),
                valid_mask_path(&args.out).display(),
                nmap.valid().len()
            );
            Ok(())
        }
        Command::Fit(args) => {
            let cfg = args.resolve()?;
            let bundle = cmd_fit(&cfg)?;
            for m in &bundle.categories {
                let streams: Vec<&str> = m.streams.iter().map(|s| s.as_str()).collect();
                println!(
                    "{}: {} training samples, streams {}",
                    m.name,
                    m.train_samples,
                    streams.join(",")
                );
            }
            println!("model written to {}", cfg.out.display());
            Ok(())
        }
        Command::Eval(args) => {
            let cfg = args.run.resolve()?;
            let model = args.model.clone().unwrap_or_else(|| cfg.out.clone());
            let evals = cmd_eval(&cfg, &model)?;
            println!("{:<16}  {:>8}  {:>8}", "category", "I-AUROC", "P-AUROC");
            for e in &evals {
                println!("{:<16}  {:>8.4}  {:>8.4}", e.name, e.i_auroc, e.p_auroc);
            }
            println!("metrics written to {}", cfg.out.join(METRICS_FILE).display());
            Ok(())
        }
        Command::Ablate(args) => {
            let cfg = args.resolve()?;
            let rows = cmd_ablate(&cfg)?;
            println!("{:<26}  {:<12}  {:>8}  {:>8}", "arm", "category", "I-AUROC", "P-AUROC");
            for r in &rows {
                println!(
                    "{:<26}  {:<12}  {:>8.4}  {:>8.4}",
                    r.arm, r.category, r.i_auroc, r.p_auroc
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_contract_violation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
