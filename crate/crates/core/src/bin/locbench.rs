use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use locbench::bench::{
    correlate_run, detect_challenges, rank_by_name, read_id_list, read_results, run_benchmark, run_pipeline, run_synthetic, write_results,
    write_subset_files, BenchmarkConfig, Method, Paradigm, RankingSource, SourceKind,
};
use locbench::data_io::{load_dataset, read_ranking, write_ranking};
use locbench::gt_ranking::{build_gt_ranking, GtMethod};
use locbench::ids::ImageId;
use locbench::metrics::{localized_percentage, mean_average_precision, mean_precision_at_k, recall_at_k};
use locbench::pose_approx::Scheme;
use locbench::synth::{write_synth_dataset, HarnessConfig, Layout};
use locbench::{Error, Result};

#[derive(Parser)]
#[command(name = "locbench", version, about = "Retrieval-for-localization benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Rank database images for every query.
    GtRank(GtRankArgs),
    /// Localize all queries from one ranking with one method and k.
    Localize(LocalizeArgs),
    /// Retrieval metrics of a ranking, and localized percentages of a results file.
    Metrics(MetricsArgs),
    /// Recompute correlation reports from a finished run directory.
    Correlate(CorrelateArgs),
    /// Score queries for blur and dynamic content.
    Challenge(ChallengeArgs),
    /// Full pipeline: rankings, all paradigms, reports and manifest.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Harness configuration (JSON); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    layout: Option<Layout>,
    #[arg(long)]
    n_db: Option<usize>,
    #[arg(long)]
    n_query: Option<usize>,
    #[arg(long)]
    n_points: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Flags mirroring the benchmark configuration.
#[derive(Args, Clone)]
struct BenchFlags {
    /// Benchmark configuration (JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    paradigm: Option<Vec<Paradigm>>,
    #[arg(long, value_delimiter = ',')]
    scheme: Option<Vec<Scheme>>,
    #[arg(long, value_delimiter = ',')]
    gt: Option<Vec<GtMethod>>,
    #[arg(long)]
    relevance: Option<GtMethod>,
    #[arg(long, value_delimiter = ',')]
    feature: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
}

impl BenchFlags {
    fn config(&self) -> Result<BenchmarkConfig> {
        let mut cfg: BenchmarkConfig = match &self.config {
            Some(p) => read_json(p)?,
            None => BenchmarkConfig::default(),
        };
        if let Some(v) = &self.k_grid {
            cfg.k_grid = v.clone();
        }
        if let Some(v) = &self.paradigm {
            cfg.paradigms = v.clone();
        }
        if let Some(v) = &self.scheme {
            cfg.schemes = v.clone();
        }
        if let Some(v) = &self.gt {
            cfg.gt_methods = v.clone();
        }
        if let Some(v) = self.relevance {
            cfg.relevance = v;
        }
        if let Some(v) = &self.feature {
            cfg.features = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GtRankArgs {
    #[arg(long)]
    data: PathBuf,
    /// `rcp`, `frustum`, `coobs`, or `desc:<feature>` for a descriptor ranking.
    #[arg(long)]
    method: String,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    bench: BenchFlags,
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ranking: PathBuf,
    /// `approx-ewb`, `approx-bdi`, `approx-csi`, `local-sfm` or `global`.
    #[arg(long)]
    method: Method,
    #[arg(long)]
    k: usize,
    /// Descriptor feature of the ranking; required for BDI and CSI weights.
    #[arg(long = "with-feature")]
    with_feature: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    bench: BenchFlags,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ranking: Option<PathBuf>,
    /// Results file from `localize` or `run`.
    #[arg(long)]
    results: Option<PathBuf>,
    /// Restrict to the queries listed in this file.
    #[arg(long)]
    subset: Option<PathBuf>,
    #[command(flatten)]
    bench: BenchFlags,
}

#[derive(Args)]
struct CorrelateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ChallengeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    bench: BenchFlags,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    out: PathBuf,
    /// Dataset to evaluate; without it a synthetic dataset is written to `<out>/dataset`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Harness configuration for the synthetic dataset (JSON).
    #[arg(long)]
    harness: Option<PathBuf>,
    #[command(flatten)]
    bench: BenchFlags,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn synth(args: SynthArgs) -> Result<ExitCode> {
    let mut cfg: HarnessConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => HarnessConfig::default(),
    };
    if let Some(v) = args.layout {
        cfg.scene.layout = v;
    }
    if let Some(v) = args.n_db {
        cfg.scene.n_db = v;
    }
    if let Some(v) = args.n_query {
        cfg.scene.n_query = v;
    }
    if let Some(v) = args.n_points {
        cfg.scene.n_points = v;
    }
    if let Some(v) = args.seed {
        cfg.scene.seed = v;
    }
    let ds = write_synth_dataset(&cfg, &args.out)?;
    println!(
        "wrote {} database and {} query images, {} points to {}",
        ds.database().len(),
        ds.queries().len(),
        ds.points.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn gt_rank(args: GtRankArgs) -> Result<ExitCode> {
    let cfg = args.bench.config()?;
    let ranking = rank_by_name(&load_dataset(&args.data)?, &args.method, &cfg.gt)?;
    write_ranking(&args.out, &ranking)?;
    Ok(ExitCode::SUCCESS)
}

fn localize(args: LocalizeArgs) -> Result<ExitCode> {
    let mut cfg = args.bench.config()?;
    cfg.k_grid = vec![args.k];
    cfg.paradigms = vec![args.method.paradigm()];
    if let Method::Approx(s) = args.method {
        cfg.schemes = vec![s];
    }
    cfg.validate()?;
    let ds = load_dataset(&args.data)?;
    let ranking = read_ranking(&args.ranking)?;
    let source = match &args.with_feature {
        Some(f) => RankingSource { name: f.clone(), kind: SourceKind::Descriptor, ranking },
        None => RankingSource { name: "external".into(), kind: SourceKind::External, ranking },
    };
    let bundle = run_benchmark(&ds, &[source], &Default::default(), &cfg)?;
    write_results(&args.out, &bundle.cells)?;
    let mut ok = true;
    for cell in &bundle.cells {
        match &cell.outcome {
            Ok(results) => {
                for &(m, d) in cfg.thresholds.pairs() {
                    println!("{} k={} ({m}m, {d}deg): {:.2}%", cell.method, args.k, localized_percentage(&results[&args.k], m, d)?);
                }
            }
            Err(e) => {
                eprintln!("{} failed: {e}", cell.method);
                ok = false;
            }
        }
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn metrics(args: MetricsArgs) -> Result<ExitCode> {
    let cfg = args.bench.config()?;
    let subset: Option<BTreeSet<ImageId>> = args.subset.as_deref().map(read_id_list).transpose()?;
    let keep = |q: &ImageId| subset.as_ref().is_none_or(|s| s.contains(q));
    let ds = load_dataset(&args.data)?;
    if let Some(path) = &args.ranking {
        let ranking = read_ranking(path)?;
        let queries: std::collections::BTreeMap<_, _> = ds.queries().into_iter().filter(|(q, _)| keep(q)).collect();
        let joint = if cfg.relevance == GtMethod::Coobs { Some(ds.joint_map()?) } else { None };
        let relevant = build_gt_ranking(cfg.relevance, &queries, &ds.database(), joint.as_ref(), &cfg.gt)?.relevant;
        println!("metric,k,value");
        for &k in &cfg.k_grid {
            println!("precision,{k},{}", mean_precision_at_k(&ranking, &relevant, k)?);
            println!("recall,{k},{}", recall_at_k(&ranking, &relevant, k)?);
        }
        println!("map,all,{}", mean_average_precision(&ranking, &relevant)?);
    }
    if let Some(path) = &args.results {
        println!("source,method,k,meters,degrees,localized_pct");
        for cell in read_results(path)? {
            let Ok(results) = &cell.outcome else { continue };
            for (k, rs) in results {
                let rs: Vec<_> = rs.iter().filter(|r| keep(&r.query)).cloned().collect();
                if rs.is_empty() {
                    continue;
                }
                for &(m, d) in cfg.thresholds.pairs() {
                    println!("{},{},{k},{m},{d},{}", cell.source, cell.method, localized_percentage(&rs, m, d)?);
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn challenge(args: ChallengeArgs) -> Result<ExitCode> {
    let cfg = args.bench.config()?;
    let ds = load_dataset(&args.data)?;
    let subsets = detect_challenges(&args.data, &ds, &cfg)?;
    write_subset_files(&args.out, &subsets)?;
    println!("{} blurry, {} dynamic of {} queries", subsets.blurry.len(), subsets.dynamic.len(), ds.queries().len());
    Ok(ExitCode::SUCCESS)
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let cfg = args.bench.config()?;
    let (bundle, hash) = match &args.data {
        Some(d) => run_pipeline(d, &cfg, &args.out)?,
        None => {
            let mut harness: HarnessConfig = match &args.harness {
                Some(p) => read_json(p)?,
                None => HarnessConfig::default(),
            };
            if let Some(seed) = args.bench.seed {
                harness.scene.seed = seed;
            }
            run_synthetic(&harness, &cfg, &args.out)?
        }
    };
    let failed: Vec<_> = bundle.failed_cells().collect();
    for c in &failed {
        eprintln!("failed cell {}/{}: {}", c.source, c.method, c.outcome.as_ref().err().map(String::as_str).unwrap_or(""));
    }
    println!("manifest {hash}");
    Ok(if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(a) => synth(a),
        Command::GtRank(a) => gt_rank(a),
        Command::Localize(a) => localize(a),
        Command::Metrics(a) => metrics(a),
        Command::Correlate(a) => correlate_run(&a.run, &a.out).map(|c| {
            println!("{} correlation reports", c.len());
            ExitCode::SUCCESS
        }),
        Command::Challenge(a) => challenge(a),
        Command::Run(a) => run(a),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
