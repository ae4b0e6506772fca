//! Experiment configuration and the benchmark pipelines behind every CLI
//! command: data preparation, per-kind forest training, retrieval-quality
//! tables, the gamma component-selection sweep, detection rescoring and the
//! cost/memory benchmark.
//!
//! All randomness flows from `ExperimentConfig::seed` through named
//! sub-seeds ([`subseed`]), so each stage is reproducible independently of
//! the others.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use conf_core::baseline::{all_train_retrieval, feature_matrix_bytes, KnnIndex};
use conf_core::dataset::{split, synth_generate_with_truth, Dataset, ObjectBox, SynthConfig, SynthTruth};
use conf_core::forest::{
    footprint_upper_bound, Forest, MemoryFootprint, RetrievalSet, TrainConfig,
};
use conf_core::metrics::{distance_eval_count, retrieval_quality, PropertyKind};
use conf_core::mockdet::{evaluate_ap, speedup_report, DetectorParams, MockDetector, SpeedupRow, SweepRun};
use conf_core::rescore::{
    combine, fit_weights, location_scores_split, nms, CombineWeights, Detection, GeometryScores,
};
use conf_core::selection::{posterior, select_components};
use conf_core::Error as CoreError;

use crate::parallel::train_forest_parallel;

/// Stable mixing of a root seed with a stage tag (splitmix64 finalizer).
pub fn subseed(root: u64, tag: u64) -> u64 {
    let mut z = root ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stage tags for [`subseed`].
pub mod seed_tags {
    pub const SYNTH: u64 = 1;
    pub const TEST_SPLIT: u64 = 2;
    pub const VAL_SPLIT: u64 = 3;
    pub const FOREST_APPEARANCE: u64 = 4;
    pub const FOREST_POSITION: u64 = 5;
    pub const FOREST_SCALE: u64 = 6;
    pub const DETECTOR: u64 = 7;
    pub const RANDOM_SELECT: u64 = 8;
}

pub fn forest_seed_tag(kind: PropertyKind) -> u64 {
    match kind {
        PropertyKind::Appearance => seed_tags::FOREST_APPEARANCE,
        PropertyKind::Position => seed_tags::FOREST_POSITION,
        PropertyKind::Scale => seed_tags::FOREST_SCALE,
    }
}

/// Where the experiment data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    /// Generate synthetically, then split. `synth.seed` is ignored; the
    /// effective generator seed derives from the experiment seed.
    Synth {
        synth: SynthConfig,
        test_fraction: f64,
        /// Fraction of the *training* images carved out for weight
        /// fitting; 0 disables the validation split.
        val_fraction: f64,
    },
    /// Load JSON-lines files.
    Files {
        train: PathBuf,
        test: PathBuf,
        val: Option<PathBuf>,
        num_components: usize,
    },
}

/// One declarative experiment: data, training, and evaluation settings.
/// `train.seed` is derived per property kind from `seed` and the value in
/// the file is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub k_retrieval: usize,
    pub gamma_sweep: Vec<f64>,
    pub weight_axis: Vec<f64>,
    pub detector: DetectorParams,
    pub iou_threshold: f64,
    /// Rescoring: reuse the position forest's retrieval set for the scale
    /// score instead of querying the scale forest.
    pub shared_retrieval: bool,
    /// Worker threads for tree training (0 = rayon default).
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::standard_benchmark()
    }
}

impl ExperimentConfig {
    /// The pinned synthetic benchmark: 8 scenes, 16 components, 2200
    /// images split 2000 train / 200 test, 200-tree forests.
    pub fn standard_benchmark() -> Self {
        ExperimentConfig {
            seed: 7,
            data: DataConfig::Synth {
                synth: SynthConfig {
                    num_scene_types: 8,
                    num_components: 16,
                    images_per_scene: 275,
                    boxes_per_image: (1, 1),
                    d_glob: 8,
                    d_app: 4,
                    noise_global: 0.3,
                    noise_app: 0.08,
                    noise_pos: 0.015,
                    seed: 0,
                },
                test_fraction: 1.0 / 11.0,
                val_fraction: 0.1,
            },
            train: TrainConfig {
                num_trees: 200,
                candidate_splits_per_node: 256,
                min_images_per_leaf: 4,
                max_depth: 20,
                sigma_k_nn: 1200,
                seed: 0,
            },
            k_retrieval: 10,
            gamma_sweep: vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0],
            weight_axis: vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0],
            detector: DetectorParams {
                score_noise: 0.25,
                cost_per_component: 1.0,
                distractor_rate: 10,
                distractor_app_noise: 0.3,
            },
            iou_threshold: 0.5,
            shared_retrieval: false,
            threads: 0,
        }
    }

    /// Benchmark variant with tightly coupled scene and object position,
    /// used for the location-rescoring experiment.
    pub fn rescore_benchmark() -> Self {
        let mut cfg = ExperimentConfig::standard_benchmark();
        cfg.seed = 8;
        if let DataConfig::Synth { synth, .. } = &mut cfg.data {
                        synth.boxes_per_image = (1, 3);
        }
        cfg.detector.score_noise = 0.4;
        cfg
    }

    /// A tiny configuration for smoke tests and quick CLI runs.
    pub fn smoke() -> Self {
        let mut cfg = ExperimentConfig::standard_benchmark();
        cfg.seed = 11;
        cfg.data = DataConfig::Synth {
            synth: SynthConfig {
                num_scene_types: 3,
                num_components: 6,
                images_per_scene: 22,
                boxes_per_image: (0, 2),
                d_glob: 12,
                d_app: 8,
                noise_global: 0.25,
                noise_app: 0.1,
                noise_pos: 0.05,
                seed: 0,
            },
            test_fraction: 0.15,
            val_fraction: 0.15,
        };
        cfg.train = TrainConfig {
            num_trees: 24,
            candidate_splits_per_node: 64,
            min_images_per_leaf: 3,
            max_depth: 10,
            sigma_k_nn: 40,
            seed: 0,
        };
        cfg.gamma_sweep = vec![0.2, 0.5, 0.9, 1.0];
        cfg
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.train.validate()?;
        self.detector.validate()?;
        if self.k_retrieval == 0 {
            bail!("k_retrieval must be >= 1");
        }
        if self.gamma_sweep.is_empty() {
            bail!("gamma_sweep must not be empty");
        }
        if self.weight_axis.is_empty() {
            bail!("weight_axis must not be empty");
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            bail!("iou_threshold must lie strictly between 0 and 1");
        }
        if let DataConfig::Synth { synth, test_fraction, val_fraction } = &self.data {
            synth.validate()?;
            if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                bail!("test_fraction must lie strictly between 0 and 1");
            }
            if !(*val_fraction >= 0.0 && *val_fraction < 1.0) {
                bail!("val_fraction must lie in [0, 1)");
            }
        }
        Ok(())
    }

    /// Hex digest identifying this configuration; embedded in every
    /// artifact the experiment writes.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        hex::encode(&digest[..8])
    }

    /// Weight grid: the cartesian square of `weight_axis`.
    pub fn weight_grid(&self) -> Vec<CombineWeights> {
        let mut grid = Vec::with_capacity(self.weight_axis.len() * self.weight_axis.len());
        for &alpha_pos in &self.weight_axis {
            for &alpha_scale in &self.weight_axis {
                grid.push(CombineWeights {
                    alpha_pos,
                    alpha_scale,
                });
            }
        }
        grid
    }
}

/// Materialized experiment data.
pub struct PreparedData {
    pub train: Dataset,
    pub val: Option<Dataset>,
    pub test: Dataset,
    pub truth: Option<SynthTruth>,
    pub num_components: usize,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> anyhow::Result<PreparedData> {
    match &cfg.data {
        DataConfig::Synth {
            synth,
            test_fraction,
            val_fraction,
        } => {
            let mut synth_cfg = synth.clone();
            synth_cfg.seed = subseed(cfg.seed, seed_tags::SYNTH);
            let (full, truth) = synth_generate_with_truth(&synth_cfg)?;
            let (rest, test) = split(&full, *test_fraction, subseed(cfg.seed, seed_tags::TEST_SPLIT))?;
            let (train, val) = if *val_fraction > 0.0 {
                let (train, val) =
                    split(&rest, *val_fraction, subseed(cfg.seed, seed_tags::VAL_SPLIT))?;
                (train, Some(val))
            } else {
                (rest, None)
            };
            Ok(PreparedData {
                train,
                val,
                test,
                truth: Some(truth),
                num_components: synth.num_components,
            })
        }
        DataConfig::Files {
            train,
            test,
            val,
            num_components,
        } => {
            let train_ds = crate::dataset_io::load_dataset(train)
                .with_context(|| format!("loading {}", train.display()))?;
            let test_ds = crate::dataset_io::load_dataset(test)
                .with_context(|| format!("loading {}", test.display()))?;
            let val_ds = val
                .as_ref()
                .map(|p| {
                    crate::dataset_io::load_dataset(p)
                        .with_context(|| format!("loading {}", p.display()))
                })
                .transpose()?;
            Ok(PreparedData {
                train: train_ds,
                val: val_ds,
                test: test_ds,
                truth: None,
                num_components: *num_components,
            })
        }
    }
}

/// One forest per property kind, trained on the same training set.
pub struct ForestSet {
    pub appearance: Forest,
    pub position: Forest,
    pub scale: Forest,
}

impl ForestSet {
    pub fn get(&self, kind: PropertyKind) -> &Forest {
        match kind {
            PropertyKind::Appearance => &self.appearance,
            PropertyKind::Position => &self.position,
            PropertyKind::Scale => &self.scale,
        }
    }
}

pub fn train_kind(
    train: &Dataset,
    kind: PropertyKind,
    cfg: &ExperimentConfig,
) -> anyhow::Result<Forest> {
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = subseed(cfg.seed, forest_seed_tag(kind));
    train_forest_parallel(train, kind, &train_cfg, cfg.threads)
        .with_context(|| format!("training the {kind} forest"))
}

pub fn train_all_kinds(train: &Dataset, cfg: &ExperimentConfig) -> anyhow::Result<ForestSet> {
    Ok(ForestSet {
        appearance: train_kind(train, PropertyKind::Appearance, cfg)?,
        position: train_kind(train, PropertyKind::Position, cfg)?,
        scale: train_kind(train, PropertyKind::Scale, cfg)?,
    })
}

fn boxes_of_retrieval<'a>(retr: &RetrievalSet, by_id: &BTreeMap<u64, &'a [ObjectBox]>) -> Vec<&'a ObjectBox> {
    retr.entries
        .iter()
        .flat_map(|e| by_id.get(&e.image_id).copied().unwrap_or(&[]).iter())
        .collect()
}

fn train_box_map(train: &Dataset) -> BTreeMap<u64, &[ObjectBox]> {
    train
        .images
        .iter()
        .map(|img| (img.id, img.boxes.as_slice()))
        .collect()
}

/// One row of the retrieval-quality table.
#[derive(Debug, Clone, Serialize)]
pub struct QualityRow {
    pub kind: PropertyKind,
    pub method: String,
    pub k: usize,
    pub mean_quality: f64,
    pub images: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerImageQuality {
    pub kind: PropertyKind,
    pub method: String,
    pub k: usize,
    pub image_id: u64,
    pub quality: f64,
}

pub struct RetrievalQualityReport {
    pub rows: Vec<QualityRow>,
    pub per_image: Vec<PerImageQuality>,
}

/// Mean retrieval-set quality over test images with at least one box, per
/// property kind, for the all-train prior, kNN and the forests.
pub fn eval_retrieval(
    train: &Dataset,
    test: &Dataset,
    forests: &ForestSet,
    ks: &[usize],
) -> anyhow::Result<RetrievalQualityReport> {
    let by_id = train_box_map(train);
    let knn = KnnIndex::build(train);
    let all_train = all_train_retrieval(train);
    let mut rows = Vec::new();
    let mut per_image = Vec::new();

    for kind in PropertyKind::ALL {
        let sigma = forests.get(kind).sigma;
        let all_train_boxes = boxes_of_retrieval(&all_train, &by_id);
        let mut jobs: Vec<(String, usize, Box<dyn Fn(&[f64]) -> anyhow::Result<RetrievalSet>>)> =
            vec![(
                "all_train".into(),
                train.images.len(),
                Box::new(|_phi| Ok(all_train.clone())),
            )];
        for &k in ks {
            let knn_ref = &knn;
            jobs.push((
                "knn".into(),
                k,
                Box::new(move |phi| Ok(knn_ref.retrieve(phi, k)?)),
            ));
            let forest = forests.get(kind);
            jobs.push((
                "conf".into(),
                k,
                Box::new(move |phi| Ok(forest.retrieval_set_k(phi, k)?)),
            ));
        }

        for (method, k, retrieve) in jobs {
            let mut total = 0.0;
            let mut count = 0usize;
            for img in &test.images {
                if img.boxes.is_empty() {
                    continue;
                }
                let retr = retrieve(&img.global_features)?;
                let retr_boxes = boxes_of_retrieval(&retr, &by_id);
                let quality = if method == "all_train" {
                    // Same box set for every probe; reuse the collected one.
                    retrieval_quality(&img.boxes, &all_train_boxes, kind, &sigma)?
                } else if retr_boxes.is_empty() {
                    0.0
                } else {
                    retrieval_quality(&img.boxes, &retr_boxes, kind, &sigma)?
                };
                per_image.push(PerImageQuality {
                    kind,
                    method: method.clone(),
                    k,
                    image_id: img.id,
                    quality,
                });
                total += quality;
                count += 1;
            }
            rows.push(QualityRow {
                kind,
                method,
                k,
                mean_quality: if count > 0 { total / count as f64 } else { 0.0 },
                images: count,
            });
        }
    }
    Ok(RetrievalQualityReport { rows, per_image })
}

/// Per-image component choices recorded during a sweep, for replay checks.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionDump {
    pub method: String,
    pub gamma: f64,
    pub image_id: u64,
    pub selected: Vec<u32>,
}

pub struct SelectSweepReport {
    pub full_ap: f64,
    pub full_cost: f64,
    pub conf: Vec<SpeedupRow>,
    pub knn: Vec<SpeedupRow>,
    /// Random selection matched to the conf rows' mean fractions; the
    /// gamma column carries the matched row's gamma.
    pub random: Vec<SpeedupRow>,
    pub per_image: Vec<SelectionDump>,
}

/// Run the gamma sweep with forest selection, kNN selection and the
/// fraction-matched random baseline.
pub fn select_sweep(
    data: &PreparedData,
    appearance: &Forest,
    cfg: &ExperimentConfig,
) -> anyhow::Result<SelectSweepReport> {
    let c = data.num_components;
    if c == 0 {
        bail!("component selection needs labelled components");
    }
    let detector = MockDetector::from_dataset(&data.train, c, cfg.detector)?;
    let knn = KnnIndex::build(&data.train);
    let det_root = subseed(cfg.seed, seed_tags::DETECTOR);
    let all_components: Vec<u32> = (0..c as u32).collect();
    let mut per_image = Vec::new();

    // Full model reference.
    let mut full_dets = Vec::new();
    let before = detector.components_run();
    for img in &data.test.images {
        full_dets.extend(detector.run(img, &all_components, subseed(det_root, img.id))?);
    }
    let full_cost =
        (detector.components_run() - before) as f64 * cfg.detector.cost_per_component;
    let full_ap = evaluate_ap(&nms(&full_dets, cfg.iou_threshold), &data.test, cfg.iou_threshold)?.ap;

    let run_method = |method: &str,
                          retrieve: &dyn Fn(&[f64]) -> anyhow::Result<RetrievalSet>,
                          per_image: &mut Vec<SelectionDump>|
     -> anyhow::Result<Vec<SweepRun>> {
        let mut runs = Vec::new();
        for &gamma in &cfg.gamma_sweep {
            let mut dets = Vec::new();
            let mut active_counts = Vec::with_capacity(data.test.images.len());
            let before = detector.components_run();
            for img in &data.test.images {
                let retr = retrieve(&img.global_features)?;
                let active: Vec<u32> = match posterior(&retr, &data.train, c) {
                    Ok(post) => select_components(&post, gamma)?.selected,
                    // No component evidence in the retrieval set: the
                    // procedure degenerates to running everything.
                    Err(CoreError::NoLabeledBoxes) | Err(CoreError::EmptyRetrievalSet) => {
                        all_components.clone()
                    }
                    Err(e) => return Err(e.into()),
                };
                dets.extend(detector.run(img, &active, subseed(det_root, img.id))?);
                active_counts.push(active.len());
                per_image.push(SelectionDump {
                    method: method.into(),
                    gamma,
                    image_id: img.id,
                    selected: active,
                });
            }
            let total_cost =
                (detector.components_run() - before) as f64 * cfg.detector.cost_per_component;
            let ap = evaluate_ap(&nms(&dets, cfg.iou_threshold), &data.test, cfg.iou_threshold)?.ap;
            runs.push(SweepRun {
                gamma,
                active_counts,
                total_cost,
                ap,
            });
        }
        Ok(runs)
    };

    let conf_runs = run_method(
        "conf",
        &|phi| Ok(appearance.retrieval_set_k(phi, cfg.k_retrieval)?),
        &mut per_image,
    )?;
    let knn_runs = run_method(
        "knn",
        &|phi| Ok(knn.retrieve(phi, cfg.k_retrieval)?),
        &mut per_image,
    )?;

    // Random baseline matched to the conf rows' mean component fractions:
    // ceil(fraction * C) components per image, chosen uniformly.
    let conf_rows = speedup_report(&conf_runs, c, full_ap);
    let rnd_root = subseed(cfg.seed, seed_tags::RANDOM_SELECT);
    let mut random_runs = Vec::new();
    for (gi, row) in conf_rows.iter().enumerate() {
        let m = ((row.mean_component_fraction * c as f64).ceil() as usize).clamp(1, c);
        let mut dets = Vec::new();
        let mut active_counts = Vec::with_capacity(data.test.images.len());
        let before = detector.components_run();
        for img in &data.test.images {
            let mut rng = ChaCha8Rng::seed_from_u64(subseed(subseed(rnd_root, gi as u64), img.id));
            let active: Vec<u32> = rand::seq::index::sample(&mut rng, c, m)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            dets.extend(detector.run(img, &active, subseed(det_root, img.id))?);
            active_counts.push(active.len());
            per_image.push(SelectionDump {
                method: "random".into(),
                gamma: row.gamma,
                image_id: img.id,
                selected: active,
            });
        }
        let total_cost =
            (detector.components_run() - before) as f64 * cfg.detector.cost_per_component;
        let ap = evaluate_ap(&nms(&dets, cfg.iou_threshold), &data.test, cfg.iou_threshold)?.ap;
        random_runs.push(SweepRun {
            gamma: row.gamma,
            active_counts,
            total_cost,
            ap,
        });
    }

    Ok(SelectSweepReport {
        full_ap,
        full_cost,
        conf: conf_rows,
        knn: speedup_report(&knn_runs, c, full_ap),
        random: speedup_report(&random_runs, c, full_ap),
        per_image,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RescoreRow {
    pub method: String,
    pub alpha_pos: f64,
    pub alpha_scale: f64,
    pub ap: f64,
}

pub struct RescoreReport {
    pub rows: Vec<RescoreRow>,
    /// Post-suppression test detections per method.
    pub detections: BTreeMap<String, Vec<Detection>>,
}

fn geometry_scores_for(
    dets: &[Detection],
    images: &Dataset,
    by_id: &BTreeMap<u64, &[ObjectBox]>,
    position: &Forest,
    scale: Option<&Forest>,
    knn: Option<&KnnIndex>,
    k: usize,
) -> anyhow::Result<Vec<(Detection, GeometryScores)>> {
    // Group detections per image so each image queries the forests once.
    let mut per_image: BTreeMap<u64, Vec<&Detection>> = BTreeMap::new();
    for d in dets {
        per_image.entry(d.image_id).or_default().push(d);
    }
    let mut scored = Vec::with_capacity(dets.len());
    for (image_id, image_dets) in per_image {
        let img = images
            .image_by_id(image_id)
            .ok_or_else(|| anyhow::anyhow!("detection references unknown image {image_id}"))?;
        let phi = &img.global_features;
        let owned: Vec<Detection> = image_dets.iter().map(|d| (*d).clone()).collect();
        let (pos_retr, scale_retr) = match knn {
            Some(index) => {
                let shared = index.retrieve(phi, k)?;
                (shared.clone(), shared)
            }
            None => {
                let pos_retr = position.retrieval_set_k(phi, k)?;
                match scale {
                    Some(scale_forest) => (pos_retr, scale_forest.retrieval_set_k(phi, k)?),
                    None => (pos_retr.clone(), pos_retr),
                }
            }
        };
        let pos_boxes = boxes_of_retrieval(&pos_retr, by_id);
        let scale_boxes = boxes_of_retrieval(&scale_retr, by_id);
        let sigma_scale = scale.map_or(position.sigma, |f| f.sigma);
        let geo = if pos_boxes.is_empty() || scale_boxes.is_empty() {
            // No geometry evidence retrieved: fall back to zero
            // augmentation for this image.
            vec![GeometryScores::default(); owned.len()]
        } else {
            location_scores_split(
                &owned,
                &pos_boxes,
                &position.sigma,
                &scale_boxes,
                &sigma_scale,
            )?
        };
        scored.extend(owned.into_iter().zip(geo));
    }
    Ok(scored)
}

/// Rescore full-model detections with forest- and kNN-derived location and
/// scale models; weights are fitted on the validation split.
pub fn rescore_experiment(
    data: &PreparedData,
    position: &Forest,
    scale: &Forest,
    cfg: &ExperimentConfig,
) -> anyhow::Result<RescoreReport> {
    let val = data
        .val
        .as_ref()
        .context("rescoring needs a validation split (val_fraction > 0 or a val file)")?;
    let c = data.num_components;
    let detector = MockDetector::from_dataset(&data.train, c, cfg.detector)?;
    let det_root = subseed(cfg.seed, seed_tags::DETECTOR);
    let all_components: Vec<u32> = (0..c as u32).collect();
    let by_id = train_box_map(&data.train);

    let run_full = |images: &Dataset| -> anyhow::Result<Vec<Detection>> {
        let mut dets = Vec::new();
        for img in &images.images {
            dets.extend(detector.run(img, &all_components, subseed(det_root, img.id))?);
        }
        Ok(dets)
    };
    let val_dets = run_full(val)?;
    let test_dets = run_full(&data.test)?;

    let scale_forest = if cfg.shared_retrieval { None } else { Some(scale) };
    let knn = KnnIndex::build(&data.train);
    let grid = cfg.weight_grid();

    let mut rows = Vec::new();
    let mut detections = BTreeMap::new();

    // Baseline: no augmentation.
    let base_survivors = nms(&test_dets, cfg.iou_threshold);
    let base_ap = evaluate_ap(&base_survivors, &data.test, cfg.iou_threshold)?.ap;
    rows.push(RescoreRow {
        method: "none".into(),
        alpha_pos: 0.0,
        alpha_scale: 0.0,
        ap: base_ap,
    });
    detections.insert("none".into(), base_survivors);

    for (method, use_knn) in [("conf", false), ("knn", true)] {
        let knn_ref = use_knn.then_some(&knn);
        let val_scored = geometry_scores_for(
            &val_dets,
            val,
            &by_id,
            position,
            scale_forest,
            knn_ref,
            cfg.k_retrieval,
        )?;
        let weights = fit_weights(val, &val_scored, &grid, cfg.iou_threshold)?;
        let test_scored = geometry_scores_for(
            &test_dets,
            &data.test,
            &by_id,
            position,
            scale_forest,
            knn_ref,
            cfg.k_retrieval,
        )?;
        let rescored: Vec<Detection> = test_scored
            .iter()
            .map(|(det, geo)| Detection {
                score: combine(det, geo, &weights),
                ..det.clone()
            })
            .collect();
        let survivors = nms(&rescored, cfg.iou_threshold);
        let ap = evaluate_ap(&survivors, &data.test, cfg.iou_threshold)?.ap;
        rows.push(RescoreRow {
            method: method.into(),
            alpha_pos: weights.alpha_pos,
            alpha_scale: weights.alpha_scale,
            ap,
        });
        detections.insert(method.into(), survivors);
    }

    Ok(RescoreReport { rows, detections })
}

#[derive(Debug, Clone, Serialize)]
pub struct KindFootprint {
    pub kind: PropertyKind,
    pub footprint: MemoryFootprint,
    pub mean_internal_per_tree: f64,
}

/// Cost and memory benchmark over the test probes.
#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub config_hash: String,
    pub n_train: usize,
    pub n_probes: usize,
    pub knn_distance_evals_per_probe: u64,
    pub knn_memory_bytes: u64,
    pub conf_node_visits_mean: f64,
    pub conf_node_visits_max: usize,
    pub conf_node_visit_bound: usize,
    pub conf_box_distance_evals_during_queries: u64,
    pub forests: Vec<KindFootprint>,
    pub memory_ratio_knn_over_conf_appearance: f64,
    pub paper_scale: PaperScaleBlock,
}

/// Analytic byte accounting at the scale reported for the real system:
/// ~14k training images, 16000-dim features, 750 trees. The forest side
/// uses the worst-case internal-node count permitted by the stopping
/// rules, so the true ratio is at least `ratio_lower_bound`.
#[derive(Debug, Clone, Serialize)]
pub struct PaperScaleBlock {
    pub n_train: usize,
    pub d_glob: usize,
    pub num_trees: usize,
    pub knn_bytes: u64,
    pub conf_bytes_upper_bound: u64,
    pub ratio_lower_bound: f64,
}

pub const PAPER_SCALE_N_TRAIN: usize = 14125;
pub const PAPER_SCALE_D_GLOB: usize = 16000;
pub const PAPER_SCALE_TREES: usize = 750;

pub fn paper_scale_block(min_images_per_leaf: usize, max_depth: usize) -> PaperScaleBlock {
    let cfg = TrainConfig {
        num_trees: PAPER_SCALE_TREES,
        min_images_per_leaf,
        max_depth,
        ..TrainConfig::default()
    };
    let bound = footprint_upper_bound(PAPER_SCALE_N_TRAIN, &cfg);
    let knn_bytes = feature_matrix_bytes(PAPER_SCALE_N_TRAIN, PAPER_SCALE_D_GLOB);
    PaperScaleBlock {
        n_train: PAPER_SCALE_N_TRAIN,
        d_glob: PAPER_SCALE_D_GLOB,
        num_trees: PAPER_SCALE_TREES,
        knn_bytes,
        conf_bytes_upper_bound: bound.total_bytes,
        ratio_lower_bound: knn_bytes as f64 / bound.total_bytes as f64,
    }
}

pub fn bench(
    data: &PreparedData,
    forests: &ForestSet,
    cfg: &ExperimentConfig,
) -> anyhow::Result<BenchReport> {
    let knn = KnnIndex::build(&data.train);
    let n_train = data.train.images.len();
    let mut knn_per_probe = None;
    let mut visits = Vec::new();
    let mut box_distance_evals = 0u64;
    for img in &data.test.images {
        let before_knn = knn.distance_evals();
        knn.retrieve(&img.global_features, cfg.k_retrieval)?;
        let delta = knn.distance_evals() - before_knn;
        match knn_per_probe {
            None => knn_per_probe = Some(delta),
            Some(prev) if prev == delta => {}
            Some(prev) => bail!("knn distance count varied across probes: {prev} vs {delta}"),
        }

        let before_dist = distance_eval_count();
        let result = forests.appearance.query(&img.global_features)?;
        box_distance_evals += distance_eval_count() - before_dist;
        visits.push(result.node_visits);
    }
    let n_probes = visits.len();
    let bound = cfg.train.num_trees * cfg.train.max_depth;
    let forest_footprints: Vec<KindFootprint> = PropertyKind::ALL
        .iter()
        .map(|&kind| {
            let footprint = forests.get(kind).memory_footprint();
            KindFootprint {
                kind,
                footprint,
                mean_internal_per_tree: footprint.mean_internal_per_tree(),
            }
        })
        .collect();
    let conf_bytes = forest_footprints[0].footprint.total_bytes;

    Ok(BenchReport {
        config_hash: cfg.config_hash(),
        n_train,
        n_probes,
        knn_distance_evals_per_probe: knn_per_probe.unwrap_or(0),
        knn_memory_bytes: knn.memory_bytes(),
        conf_node_visits_mean: if n_probes > 0 {
            visits.iter().sum::<usize>() as f64 / n_probes as f64
        } else {
            0.0
        },
        conf_node_visits_max: visits.iter().copied().max().unwrap_or(0),
        conf_node_visit_bound: bound,
        conf_box_distance_evals_during_queries: box_distance_evals,
        forests: forest_footprints,
        memory_ratio_knn_over_conf_appearance: knn.memory_bytes() as f64 / conf_bytes as f64,
        paper_scale: paper_scale_block(cfg.train.min_images_per_leaf, cfg.train.max_depth),
    })
}
