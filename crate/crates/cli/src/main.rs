use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcgaec::forest::Forest;
use mcgaec::manifest::Manifest;
use mcgaec::pipeline::ablate::write_ablation;
use mcgaec::pipeline::run::{evaluate_manifest, extract_manifest, write_report, write_roc_files};
use mcgaec::pipeline::synth::generate_dataset;
use mcgaec::pipeline::{open_extractor, resolve_cache_dir, run_ablation, run_pipeline, RunConfig, ABLATIONS};
use mcgaec::Error;

#[derive(Parser)]
#[command(name = "mcgaec", version, about = "Multimodal fundus/OCT AMD classification pipeline")]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Backbone `MCGW` weight file (overrides the config).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Overrides the config seed and the forest seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(w) = &self.weights {
            cfg.weights = Some(w.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.forest.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic three-class dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Grow every class to `--per-class` pairs with random geometric/contrast edits.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute backbone features and fill the cache.
    Extract(RunArgs),
    /// Cross-validate on the training split, then fit and score the final forest.
    Train(RunArgs),
    /// Score a manifest with a trained forest.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Trained forest; defaults to `<out>/forest.bin`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run named configurations under a shared split and tabulate them.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated configuration names; all sixteen when omitted.
        #[arg(long, value_delimiter = ',')]
        configs: Option<Vec<String>>,
    },
    /// Write per-class ROC CSVs for a manifest scored by a trained forest.
    ExportRoc {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn print_json(value: serde_json::Value) {
    println!("{}", serde_json::to_string(&value).expect("json"));
}

fn load_model(model: &Option<PathBuf>, out: &Path) -> Result<Forest, Error> {
    let path = model.clone().unwrap_or_else(|| out.join("forest.bin"));
    if !path.exists() {
        return Err(Error::FileNotFound(path));
    }
    Forest::load(path)
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Synth { out, per_class, seed } => {
            let m = generate_dataset(&out, per_class, seed)?;
            print_json(serde_json::json!({ "manifest": out.join("manifest.csv"), "samples": m.len() }));
        }
        Command::Augment { manifest, per_class, seed, out } => {
            let m = Manifest::load(&manifest)?;
            let grown = mcgaec::augment::augment_dataset(&m, per_class, seed, &out)?;
            let path = out.join("manifest.csv");
            grown.save(&path)?;
            print_json(serde_json::json!({ "manifest": path, "samples": grown.len() }));
        }
        Command::Extract(run) => {
            let cfg = run.config()?;
            let m = Manifest::load(&run.manifest)?;
            let ex = open_extractor(&cfg, &resolve_cache_dir(None, &run.out))?;
            let n = extract_manifest(&m, &cfg, &ex)?;
            let (hits, misses) = ex.cache_stats();
            print_json(serde_json::json!({ "samples": n, "cache": ex.cache_path(), "hits": hits, "computed": misses }));
        }
        Command::Train(run) => {
            let cfg = run.config()?;
            let m = Manifest::load(&run.manifest)?;
            let ex = open_extractor(&cfg, &resolve_cache_dir(None, &run.out))?;
            let out = run_pipeline(&m, &cfg, &ex)?;
            out.write(&run.out)?;
            print_json(serde_json::json!({
                "config": cfg.name,
                "feature_dim": out.metrics.feature_dim,
                "cv_mean": out.metrics.cv.mean,
                "test": out.metrics.test.as_ref().map(|t| t.summary),
                "out": run.out,
            }));
        }
        Command::Evaluate { run, model } => {
            let cfg = run.config()?;
            let m = Manifest::load(&run.manifest)?;
            let forest = load_model(&model, &run.out)?;
            let ex = open_extractor(&cfg, &resolve_cache_dir(None, &run.out))?;
            let report = evaluate_manifest(&m, &cfg, &ex, &forest)?;
            write_report(&report, &run.out)?;
            print_json(serde_json::json!({ "summary": report.summary, "overall_accuracy": report.overall_accuracy }));
        }
        Command::Ablate { run, configs } => {
            let cfg = run.config()?;
            let m = Manifest::load(&run.manifest)?;
            let names: Vec<String> = configs.unwrap_or_else(|| ABLATIONS.iter().map(|a| a.name.to_string()).collect());
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let ex = open_extractor(&cfg, &resolve_cache_dir(None, &run.out))?;
            let rows = run_ablation(&m, &cfg, &refs, &ex, Some(&run.out))?;
            write_ablation(&rows, &run.out)?;
            print_json(serde_json::json!({ "rows": rows.len(), "out": run.out }));
        }
        Command::ExportRoc { run, model } => {
            let cfg = run.config()?;
            let m = Manifest::load(&run.manifest)?;
            let forest = load_model(&model, &run.out)?;
            let ex = open_extractor(&cfg, &resolve_cache_dir(None, &run.out))?;
            let report = evaluate_manifest(&m, &cfg, &ex, &forest)?;
            std::fs::create_dir_all(&run.out).map_err(|e| Error::Io { path: run.out.clone(), source: e })?;
            let files = write_roc_files(&report, &run.out)?;
            print_json(serde_json::json!({ "files": files }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| execute(cli.command)),
            Err(e) => Err(Error::Config(format!("cannot build thread pool: {e}"))),
        },
        None => execute(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e.kind(), "message": e.to_string(), "sample_id": e.sample_id() });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
