//! The `conf` command-line interface: synth, train, eval-retrieval,
//! select-sweep, rescore and bench, all driven by one declarative JSON
//! config plus a few flag overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use conf_core::forest::Forest;
use conf_core::metrics::PropertyKind;

use crate::dataset_io::{save_dataset, save_truth, TruthSidecar};
use crate::detections_io::save_detections;
use crate::forest_io::{load_forest, save_forest};
use crate::harness::{
    bench, eval_retrieval, prepare_data, rescore_experiment, select_sweep, train_all_kinds,
    ExperimentConfig, ForestSet,
};
use crate::report::{write_csv, write_json};

#[derive(Parser, Debug)]
#[command(
    name = "conf",
    version,
    about = "Context-forest retrieval experiments: synthetic data, forest training, retrieval quality, component selection, rescoring and cost benchmarks"
)]
pub struct Cli {
    /// Experiment config (JSON). Defaults to the built-in standard
    /// benchmark.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the experiment seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for training (0 = rayon default).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic dataset and write train/val/test files plus
    /// the generator-truth sidecar.
    Synth,
    /// Train one forest per property kind and save them.
    Train,
    /// Evaluate retrieval-set quality for all-train, kNN and the forests.
    EvalRetrieval,
    /// Sweep the component-selection threshold gamma against the mock
    /// detector, with kNN and random baselines.
    SelectSweep,
    /// Rescore full-model detections with location/scale models.
    Rescore,
    /// Query-cost and memory benchmark.
    Bench,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::standard_benchmark(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output directory {}", cli.out.display()))?;

    match cli.command {
        Command::Synth => cmd_synth(&cfg, &cli.out),
        Command::Train => cmd_train(&cfg, &cli.out),
        Command::EvalRetrieval => cmd_eval_retrieval(&cfg, &cli.out),
        Command::SelectSweep => cmd_select_sweep(&cfg, &cli.out),
        Command::Rescore => cmd_rescore(&cfg, &cli.out),
        Command::Bench => cmd_bench(&cfg, &cli.out),
    }
}

fn forest_path(out: &Path, kind: PropertyKind) -> PathBuf {
    out.join(format!("forest-{kind}.conf"))
}

fn load_forest_or_hint(out: &Path, kind: PropertyKind) -> anyhow::Result<Forest> {
    let path = forest_path(out, kind);
    load_forest(&path).with_context(|| {
        format!(
            "loading {} failed; run `conf train --out {}` first",
            path.display(),
            out.display()
        )
    })
}

fn load_forest_set(out: &Path) -> anyhow::Result<ForestSet> {
    Ok(ForestSet {
        appearance: load_forest_or_hint(out, PropertyKind::Appearance)?,
        position: load_forest_or_hint(out, PropertyKind::Position)?,
        scale: load_forest_or_hint(out, PropertyKind::Scale)?,
    })
}

fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let data = prepare_data(cfg)?;
    let Some(truth) = data.truth.clone() else {
        bail!("synth requires a synthetic data config (data.source = \"synth\")");
    };
    save_dataset(&data.train, out.join("train.jsonl"))?;
    save_dataset(&data.test, out.join("test.jsonl"))?;
    if let Some(val) = &data.val {
        save_dataset(val, out.join("val.jsonl"))?;
    }
    save_truth(
        &TruthSidecar {
            config_hash: cfg.config_hash(),
            truth,
        },
        out.join("truth.json"),
    )?;
    println!(
        "synth: wrote {} train / {} val / {} test images to {}",
        data.train.images.len(),
        data.val.as_ref().map_or(0, |v| v.images.len()),
        data.test.images.len(),
        out.display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct KindStats {
    kind: PropertyKind,
    sigma: f64,
    sigma_degenerate: bool,
    depth_min: usize,
    depth_max: usize,
    depth_mean: f64,
    internal_nodes: u64,
    mean_internal_per_tree: f64,
    footprint_bytes: u64,
}

#[derive(serde::Serialize)]
struct TrainStats {
    config_hash: String,
    n_train: usize,
    kinds: Vec<KindStats>,
}

fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let data = prepare_data(cfg)?;
    let forests = train_all_kinds(&data.train, cfg)?;
    let mut kinds = Vec::new();
    for kind in PropertyKind::ALL {
        let forest = forests.get(kind);
        save_forest(forest, forest_path(out, kind))?;
        let depths: Vec<usize> = forest.trees.iter().map(|t| t.depth()).collect();
        let footprint = forest.memory_footprint();
        let stats = KindStats {
            kind,
            sigma: forest.sigma.sigma,
            sigma_degenerate: forest.sigma.degenerate,
            depth_min: depths.iter().copied().min().unwrap_or(0),
            depth_max: depths.iter().copied().max().unwrap_or(0),
            depth_mean: depths.iter().sum::<usize>() as f64 / depths.len().max(1) as f64,
            internal_nodes: footprint.internal_nodes,
            mean_internal_per_tree: footprint.mean_internal_per_tree(),
            footprint_bytes: footprint.total_bytes,
        };
        println!(
            "train[{kind}]: sigma={:.6}{} depth {}..{} (mean {:.1}), {:.0} internal nodes/tree, footprint {} bytes",
            stats.sigma,
            if stats.sigma_degenerate { " (degenerate)" } else { "" },
            stats.depth_min,
            stats.depth_max,
            stats.depth_mean,
            stats.mean_internal_per_tree,
            stats.footprint_bytes,
        );
        kinds.push(stats);
    }
    write_json(
        out.join("train_stats.json"),
        &TrainStats {
            config_hash: cfg.config_hash(),
            n_train: data.train.images.len(),
            kinds,
        },
    )?;
    println!("train: forests written to {}", out.display());
    Ok(())
}

fn cmd_eval_retrieval(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let data = prepare_data(cfg)?;
    let forests = load_forest_set(out)?;
    let report = eval_retrieval(&data.train, &data.test, &forests, &[1, cfg.k_retrieval])?;
    let hash = cfg.config_hash();
    write_csv(
        out.join("retrieval_quality.csv"),
        &hash,
        "kind,method,k,mean_quality,images",
        report.rows.iter().map(|r| {
            format!(
                "{},{},{},{},{}",
                r.kind, r.method, r.k, r.mean_quality, r.images
            )
        }),
    )?;
    write_csv(
        out.join("retrieval_quality_per_image.csv"),
        &hash,
        "kind,method,k,image_id,quality",
        report.per_image.iter().map(|r| {
            format!("{},{},{},{},{}", r.kind, r.method, r.k, r.image_id, r.quality)
        }),
    )?;
    for row in &report.rows {
        println!(
            "eval-retrieval[{}] {:>9} k={:<5} mean quality {:.6} over {} images",
            row.kind, row.method, row.k, row.mean_quality, row.images
        );
    }
    Ok(())
}

fn cmd_select_sweep(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let data = prepare_data(cfg)?;
    let appearance = load_forest_or_hint(out, PropertyKind::Appearance)?;
    let report = select_sweep(&data, &appearance, cfg)?;
    let hash = cfg.config_hash();
    let mut rows = Vec::new();
    rows.push(format!(
        "full,,1,{},{},1",
        report.full_cost, report.full_ap
    ));
    for (method, table) in [
        ("conf", &report.conf),
        ("knn", &report.knn),
        ("random", &report.random),
    ] {
        for r in table {
            rows.push(format!(
                "{method},{},{},{},{},{}",
                r.gamma, r.mean_component_fraction, r.total_cost, r.ap, r.ap_ratio_vs_full
            ));
        }
    }
    write_csv(
        out.join("select_sweep.csv"),
        &hash,
        "method,gamma,mean_component_fraction,total_cost,ap,ap_ratio_vs_full",
        rows,
    )?;
    write_csv(
        out.join("select_sweep_selections.csv"),
        &hash,
        "method,gamma,image_id,n_active,selected",
        report.per_image.iter().map(|s| {
            let joined: Vec<String> = s.selected.iter().map(u32::to_string).collect();
            format!(
                "{},{},{},{},{}",
                s.method,
                s.gamma,
                s.image_id,
                s.selected.len(),
                joined.join(";")
            )
        }),
    )?;
    println!(
        "select-sweep: full model AP {:.4} at cost {:.0}",
        report.full_ap, report.full_cost
    );
    for r in &report.conf {
        println!(
            "select-sweep[conf] gamma={:<5} fraction {:.3} AP {:.4} ({:.3} of full)",
            r.gamma, r.mean_component_fraction, r.ap, r.ap_ratio_vs_full
        );
    }
    Ok(())
}

fn cmd_rescore(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let data = prepare_data(cfg)?;
    let position = load_forest_or_hint(out, PropertyKind::Position)?;
    let scale = load_forest_or_hint(out, PropertyKind::Scale)?;
    let report = rescore_experiment(&data, &position, &scale, cfg)?;
    write_csv(
        out.join("rescore.csv"),
        &cfg.config_hash(),
        "method,alpha_pos,alpha_scale,ap",
        report
            .rows
            .iter()
            .map(|r| format!("{},{},{},{}", r.method, r.alpha_pos, r.alpha_scale, r.ap)),
    )?;
    for (method, dets) in &report.detections {
        save_detections(dets, out.join(format!("detections-{method}.jsonl")))?;
    }
    for r in &report.rows {
        println!(
            "rescore[{:>4}] alpha_pos={:<5} alpha_scale={:<5} AP {:.4}",
            r.method, r.alpha_pos, r.alpha_scale, r.ap
        );
    }
    Ok(())
}

fn cmd_bench(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let data = prepare_data(cfg)?;
    let forests = load_forest_set(out)?;
    let report = bench(&data, &forests, cfg)?;
    write_json(out.join("bench.json"), &report)?;
    println!(
        "bench: kNN {} distance evals/probe, forest {:.1} node visits/probe (bound {}), {} box distances during queries",
        report.knn_distance_evals_per_probe,
        report.conf_node_visits_mean,
        report.conf_node_visit_bound,
        report.conf_box_distance_evals_during_queries,
    );
    println!(
        "bench: kNN matrix {} bytes vs forest {} bytes ({:.1}x); paper-scale ratio >= {:.1}x",
        report.knn_memory_bytes,
        report.forests[0].footprint.total_bytes,
        report.memory_ratio_knn_over_conf_appearance,
        report.paper_scale.ratio_lower_bound,
    );
    Ok(())
}
