//! Command-line entry point: data generation, collision statistics,
//! cross-validation experiments, verification suites, and gradient audits.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or configuration error.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use cpa_gnn::aggregators::AggregatorKind;
use cpa_gnn::graph::{
    degree_relabel, load_tu_dataset, save_tu_dataset, triangle_node_dataset, Dataset, TaskKind,
    TriangleNodeParams,
};
use cpa_gnn::models::{gradcheck_gc_model, gradcheck_node_model};
use cpa_gnn::propcheck::{run_all, run_corollaries_suite, run_theorem1_suite, Verdict};
use cpa_gnn::training::{run_cv, summarize, RunResult, TrainConfig};
use cpa_gnn::wl::{compute_p_statistic, Scope};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "cpa-gnn",
    version,
    about = "Attention-based GNN toolkit with cardinality-preserving aggregation"
)]
struct Cli {
    /// Worker threads for parallel folds (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic triangle-membership benchmark in TU format.
    GenData {
        /// Output directory for the dataset files.
        #[arg(long)]
        out: PathBuf,
        /// Dataset file prefix.
        #[arg(long, default_value = "TRIANGLE-NODE")]
        name: String,
        /// Generator seed (falls back to $CPA_GNN_SEED, then 0).
        #[arg(long)]
        seed: Option<u64>,
        /// Nodes carrying feature 0.
        #[arg(long, default_value_t = 4000)]
        nodes_f0: usize,
        /// Nodes carrying feature 1.
        #[arg(long, default_value_t = 400)]
        nodes_f1: usize,
        /// Nodes carrying feature 2.
        #[arg(long, default_value_t = 400)]
        nodes_f2: usize,
        /// Total edge budget.
        #[arg(long, default_value_t = 32_400)]
        edges: usize,
        /// Target fraction of triangle-member nodes.
        #[arg(long, default_value_t = 0.4058)]
        fraction: f64,
    },
    /// Collision analysis: P statistic and group report for a dataset.
    Stats {
        /// Directory holding the TU files.
        #[arg(long)]
        data: PathBuf,
        /// Dataset file prefix.
        #[arg(long)]
        name: String,
        /// within | across (default: chosen by the dataset's task).
        #[arg(long)]
        scope: Option<String>,
        /// Write the full collision report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace node features by node degrees first.
        #[arg(long, default_value_t = false)]
        degree_relabel: bool,
    },
    /// Run a cross-validation experiment described by a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the verification suites.
    Check {
        /// theorem1 | corollaries | all.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the verdict as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient audit of every layer variant and model.
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn env_seed() -> Option<u64> {
    std::env::var("CPA_GNN_SEED").ok().and_then(|s| s.parse().ok())
}

fn seed_or_default(cli: Option<u64>) -> u64 {
    cli.or_else(env_seed).unwrap_or(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: cannot configure {jobs} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenData {
            out,
            name,
            seed,
            nodes_f0,
            nodes_f1,
            nodes_f2,
            edges,
            fraction,
        } => cmd_gen_data(
            &out,
            &name,
            seed_or_default(seed),
            TriangleNodeParams {
                n_feature0: nodes_f0,
                n_feature1: nodes_f1,
                n_feature2: nodes_f2,
                target_edges: edges,
                target_triangle_fraction: fraction,
            },
        ),
        Command::Stats {
            data,
            name,
            scope,
            out,
            degree_relabel,
        } => cmd_stats(&data, &name, scope.as_deref(), out.as_deref(), degree_relabel),
        Command::Train { config } => cmd_train(&config),
        Command::Check { suite, seed, out } => {
            cmd_check(&suite, seed_or_default(seed), out.as_deref())
        }
        Command::Gradcheck { seed } => cmd_gradcheck(seed_or_default(seed)),
    }
}

fn cmd_gen_data(out: &Path, name: &str, seed: u64, params: TriangleNodeParams) -> Result<ExitCode> {
    let dataset = triangle_node_dataset(seed, &params).context("generator")?;
    save_tu_dataset(&dataset, out, name).context("writing TU files")?;
    let graph = &dataset.graphs[0];
    let members: usize = graph.node_labels.as_ref().map(|l| l.iter().sum()).unwrap_or(0);
    let mut category_counts = vec![0usize; dataset.num_feature_categories];
    for &f in &graph.node_feature_ids {
        category_counts[f] += 1;
    }
    println!("dataset: {}", name);
    println!("seed: {seed}");
    println!("nodes: {}", graph.num_nodes);
    println!("edges: {}", graph.num_edges());
    println!(
        "triangle members: {members} ({:.2}%)",
        100.0 * members as f64 / graph.num_nodes as f64
    );
    println!("feature category counts: {category_counts:?}");
    println!("files written under {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn load_dataset(dir: &Path, name: &str, relabel: bool) -> Result<Dataset> {
    let (dataset, audit) = load_tu_dataset(dir, name)
        .with_context(|| format!("loading {name} from {}", dir.display()))?;
    if audit.dropped_self_loops > 0 || audit.merged_duplicate_edges > 0 {
        eprintln!(
            "note: canonicalised away {} self-loops and {} duplicate edges",
            audit.dropped_self_loops, audit.merged_duplicate_edges
        );
    }
    Ok(if relabel {
        degree_relabel(&dataset)
    } else {
        dataset
    })
}

fn cmd_stats(
    data: &Path,
    name: &str,
    scope: Option<&str>,
    out: Option<&Path>,
    relabel: bool,
) -> Result<ExitCode> {
    let dataset = load_dataset(data, name, relabel)?;
    let scope = match scope {
        Some("within") => Scope::WithinGraph,
        Some("across") => Scope::AcrossDataset,
        Some(other) => return Err(anyhow!("unknown scope '{other}' (expected within|across)")),
        None => match dataset.task {
            TaskKind::NodeLevel => Scope::WithinGraph,
            TaskKind::GraphLevel => Scope::AcrossDataset,
        },
    };
    let (p, report) = compute_p_statistic(&dataset, scope)?;
    println!("dataset: {name}");
    println!("graphs: {}", dataset.num_graphs());
    println!("scope: {scope:?}");
    println!(
        "P = {:.2}% ({} of {} multisets in multi-cardinality collision groups, {} groups)",
        100.0 * p,
        report.colliding_multisets,
        report.total_multisets,
        report.groups.len()
    );
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&report)?;
        std::fs::write(path, json)
            .with_context(|| format!("writing {}", path.display()))?;
        println!("report written to {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn write_curves_csv(path: &Path, result: &RunResult) -> Result<()> {
    let mut csv = String::from("repeat,fold,epoch,train_accuracy,val_accuracy\n");
    for fold in &result.folds {
        for (epoch, (train, val)) in fold
            .train_curve
            .iter()
            .zip(&fold.val_curve)
            .enumerate()
        {
            let _ = writeln!(csv, "{},{},{},{},{}", fold.repeat, fold.fold, epoch, train, val);
        }
    }
    std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_train(config_path: &Path) -> Result<ExitCode> {
    let experiment = ExperimentConfig::load(config_path).map_err(|e| anyhow!(e))?;
    let (train_config, task) = experiment
        .resolve(env_seed())
        .map_err(|errors| anyhow!("invalid config:\n  {}", errors.join("\n  ")))?;
    let dataset = load_dataset(
        &experiment.dataset_dir,
        &experiment.dataset_name,
        experiment.degree_relabel,
    )?;
    if dataset.task != task {
        return Err(anyhow!(
            "dataset task {:?} does not match configured task {:?}",
            dataset.task,
            task
        ));
    }
    std::fs::create_dir_all(&experiment.output_dir)
        .with_context(|| format!("creating {}", experiment.output_dir.display()))?;

    let mut results: Vec<(AggregatorKind, RunResult)> = Vec::new();
    println!(
        "training {} on {} ({} folds x {} repeats, {} epochs, seed {})",
        train_config.variant,
        experiment.dataset_name,
        train_config.folds,
        train_config.repeats,
        train_config.epochs,
        train_config.seed
    );
    let main_result = run_cv(&dataset, &train_config)?;
    println!(
        "{}: mean accuracy {:.4} +/- {:.4}",
        train_config.variant, main_result.mean, main_result.std
    );
    results.push((train_config.variant, main_result));

    if experiment.compare_baseline && train_config.variant != AggregatorKind::Original {
        let baseline_config = TrainConfig {
            variant: AggregatorKind::Original,
            ..train_config.clone()
        };
        println!("training original baseline on identical folds");
        let baseline = run_cv(&dataset, &baseline_config)?;
        println!(
            "original: mean accuracy {:.4} +/- {:.4}",
            baseline.mean, baseline.std
        );
        results.push((AggregatorKind::Original, baseline));
    }

    let mut outputs = Vec::new();
    for (variant, result) in &results {
        let result_path = experiment.output_dir.join(format!("result_{variant}.json"));
        std::fs::write(&result_path, serde_json::to_string_pretty(result)?)
            .with_context(|| format!("writing {}", result_path.display()))?;
        outputs.push(result_path);
        let curves_path = experiment.output_dir.join(format!("curves_{variant}.csv"));
        write_curves_csv(&curves_path, result)?;
        outputs.push(curves_path);
    }
    if results.len() > 1 {
        let summary = summarize(&results)?;
        let summary_json = experiment.output_dir.join("summary.json");
        std::fs::write(&summary_json, serde_json::to_string_pretty(&summary)?)?;
        let summary_txt = experiment.output_dir.join("summary.txt");
        std::fs::write(&summary_txt, summary.to_table())?;
        outputs.push(summary_json);
        outputs.push(summary_txt);
        print!("{}", summary.to_table());
    }

    let manifest = serde_json::json!({
        "config": &experiment,
        "resolved": &train_config,
        "dataset": {
            "graphs": dataset.num_graphs(),
            "classes": dataset.num_classes,
            "feature_categories": dataset.num_feature_categories,
            "task": dataset.task,
        },
        "outputs": outputs
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().to_string())
            .collect::<Vec<_>>(),
    });
    let manifest_path = experiment.output_dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    println!("outputs written under {}", experiment.output_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn print_verdict(verdict: &Verdict) {
    for check in &verdict.checks {
        println!(
            "[{}] {}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name
        );
        if !check.passed {
            for detail in check.details.iter().take(5) {
                println!("       {detail}");
            }
        }
    }
    println!(
        "suite '{}': {}",
        verdict.suite,
        if verdict.passed { "PASS" } else { "FAIL" }
    );
}

fn cmd_check(suite: &str, seed: u64, out: Option<&Path>) -> Result<ExitCode> {
    let verdict = match suite {
        "theorem1" => run_theorem1_suite(seed),
        "corollaries" => run_corollaries_suite(seed),
        "all" => run_all(seed),
        other => {
            return Err(anyhow!(
                "unknown suite '{other}' (expected theorem1|corollaries|all)"
            ))
        }
    };
    print_verdict(&verdict);
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(&verdict)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if verdict.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_gradcheck(seed: u64) -> Result<ExitCode> {
    println!("finite-difference audit (step 1e-5, relative tolerance 1e-4)");
    let mut all_passed = true;
    let mut worst: f64 = 0.0;
    for variant in AggregatorKind::ALL {
        let node = gradcheck_node_model(seed, variant, 6, 1e-5, 1e-4)?;
        let gc = gradcheck_gc_model(seed, variant, 6, 1e-5, 1e-4)?;
        for (model, report) in [("node", &node), ("graph", &gc)] {
            println!(
                "[{}] {variant:<10} {model:<6} max rel deviation {:.3e}",
                if report.passed { "PASS" } else { "FAIL" },
                report.max_rel_deviation
            );
            all_passed &= report.passed;
            worst = worst.max(report.max_rel_deviation);
        }
    }
    println!("max deviation across all checks: {worst:.3e}");
    Ok(if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
