use conf_core::baseline::KnnIndex;
use conf_core::dataset::{split, synth_generate_with_truth, SynthConfig};
use conf_core::forest::TrainConfig;
use conf_core::metrics::{retrieval_quality, PropertyKind};
use conf_tools::parallel::train_forest_parallel;

fn main() -> anyhow::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let (n_trees, cands) = (args[0], args[1]);
    for seed in [5u64, 17, 1001] {
        let synth = SynthConfig {
            num_scene_types: 8,
            num_components: 16,
            images_per_scene: 275,
            boxes_per_image: (1, 1),
            d_glob: 3,
            d_app: 4,
            noise_global: 0.2,
            noise_app: 0.08,
            noise_pos: 0.015,
            seed,
        };
        let (full, _truth) = synth_generate_with_truth(&synth)?;
        let (train, test) = split(&full, 1.0 / 11.0, 5)?;
        let knn = KnnIndex::build(&train);
        let boxes_by_id: std::collections::BTreeMap<u64, &[conf_core::dataset::ObjectBox]> =
            train.images.iter().map(|i| (i.id, i.boxes.as_slice())).collect();
        let kind = PropertyKind::Appearance;
        let cfg = TrainConfig {
            num_trees: n_trees,
            candidate_splits_per_node: cands,
            min_images_per_leaf: 2,
            max_depth: 120,
            sigma_k_nn: 1200,
            seed: 3,
        };
        let t0 = std::time::Instant::now();
        let forest = train_forest_parallel(&train, kind, &cfg, 0)?;
        let dt = t0.elapsed().as_secs_f64();
        let (mut cq, mut kq, mut n) = (0.0, 0.0, 0.0);
        for img in &test.images {
            if img.boxes.is_empty() { continue; }
            n += 1.0;
            let rs = forest.retrieval_set_k(&img.global_features, 10)?;
            let rb: Vec<_> = rs.entries.iter().flat_map(|e| boxes_by_id[&e.image_id].iter()).collect();
            if !rb.is_empty() { cq += retrieval_quality(&img.boxes, &rb, kind, &forest.sigma)?; }
            let rk = knn.retrieve(&img.global_features, 10)?;
            let rb: Vec<_> = rk.entries.iter().flat_map(|e| boxes_by_id[&e.image_id].iter()).collect();
            kq += retrieval_quality(&img.boxes, &rb, kind, &forest.sigma)?;
        }
        println!("trees={n_trees} cands={cands} seed={seed}: conf/knn {:.3} (train {dt:.0}s)", cq / kq);
    }
    Ok(())
}
