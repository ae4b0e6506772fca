//! Parallel forest training. Trees are independent given their derived
//! seeds, so a worker pool maps over the seed list and collects the trees
//! in order; the result is bitwise identical to sequential training.

use anyhow::Context;
use rayon::prelude::*;

use conf_core::dataset::{Dataset, ObjectBox};
use conf_core::forest::{tree_seeds, Forest, TrainConfig, TrainContext, DEFAULT_K_RETRIEVAL};
use conf_core::metrics::{estimate_sigma, PropertyKind};

/// Train a forest on `threads` workers (0 = rayon's default).
pub fn train_forest_parallel(
    train: &Dataset,
    kind: PropertyKind,
    cfg: &TrainConfig,
    threads: usize,
) -> anyhow::Result<Forest> {
    cfg.validate()?;
    let boxes: Vec<&ObjectBox> = train.boxes().collect();
    let sigma = estimate_sigma(&boxes, kind, cfg.sigma_k_nn)
        .context("bandwidth estimation over the training boxes failed")?;
    let ctx = TrainContext::new(train, kind, sigma)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building the worker pool failed")?;
    let seeds = tree_seeds(cfg);
    let trees = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| ctx.train_tree(cfg, seed))
            .collect()
    });
    Ok(Forest {
        trees,
        kind,
        sigma,
        d_glob: train.d_glob,
        k_retrieval: DEFAULT_K_RETRIEVAL,
        config: cfg.clone(),
    })
}
