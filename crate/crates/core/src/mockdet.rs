//! A synthetic multi-component detector and PASCAL-style AP evaluation.
//!
//! The detector stands in for a real mixture-model detector at desk scale:
//! one appearance template per component, candidate windows formed by the
//! ground-truth boxes plus randomly placed distractors, and an abstract
//! per-component runtime cost. Distractor appearance is drawn around a
//! random component's template, so running a component also surfaces its
//! false positives; selecting the right components per image is then
//! visible in AP, not just in cost.

use core::sync::atomic::{AtomicU64, Ordering};

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{Dataset, ImageRecord};
use crate::error::{Error, Result};
use crate::rescore::{iou, Detection};

/// Tunables of the mock detector, separate from the learned templates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct DetectorParams {
    /// Std of the Gaussian jitter added to each (candidate, component)
    /// score.
    pub score_noise: f64,
    /// Abstract time units one component costs per image.
    pub cost_per_component: f64,
    /// Candidate windows per image beyond the ground truth.
    pub distractor_rate: usize,
    /// Std of the appearance noise around the seeding component's template
    /// for distractor windows.
    pub distractor_app_noise: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            score_noise: 0.1,
            cost_per_component: 1.0,
            distractor_rate: 10,
            distractor_app_noise: 0.3,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.score_noise.is_finite() && self.score_noise >= 0.0) {
            return Err(Error::InvalidConfig(String::from("score_noise must be >= 0")));
        }
        if !(self.cost_per_component.is_finite() && self.cost_per_component > 0.0) {
            return Err(Error::InvalidConfig(String::from(
                "cost_per_component must be > 0",
            )));
        }
        if !(self.distractor_app_noise.is_finite() && self.distractor_app_noise >= 0.0) {
            return Err(Error::InvalidConfig(String::from(
                "distractor_app_noise must be >= 0",
            )));
        }
        Ok(())
    }
}

/// Mock multi-component detector.
#[derive(Debug)]
pub struct MockDetector {
    templates: Vec<Vec<f64>>,
    params: DetectorParams,
    components_run: AtomicU64,
}

impl MockDetector {
    pub fn new(templates: Vec<Vec<f64>>, params: DetectorParams) -> Result<MockDetector> {
        params.validate()?;
        if templates.is_empty() {
            return Err(Error::InvalidConfig(String::from(
                "detector needs at least one component template",
            )));
        }
        let d_app = templates[0].len();
        if templates.iter().any(|t| t.len() != d_app) {
            return Err(Error::InvalidConfig(String::from(
                "component templates must share one dimension",
            )));
        }
        Ok(MockDetector {
            templates,
            params,
            components_run: AtomicU64::new(0),
        })
    }

    /// Build templates as the per-component mean appearance over the
    /// training boxes. A component with no training instances gets a zero
    /// template.
    pub fn from_dataset(
        train: &Dataset,
        num_components: usize,
        params: DetectorParams,
    ) -> Result<MockDetector> {
        if num_components == 0 {
            return Err(Error::InvalidConfig(String::from(
                "num_components must be >= 1",
            )));
        }
        let mut sums = vec![vec![0.0f64; train.d_app]; num_components];
        let mut counts = vec![0usize; num_components];
        for b in train.boxes() {
            let Some(id) = b.component_id else {
                return Err(Error::MissingComponentId { image_id: 0 });
            };
            if id as usize >= num_components {
                return Err(Error::UnknownComponent {
                    id,
                    num_components: num_components as u32,
                });
            }
            let c = id as usize;
            for (s, a) in sums[c].iter_mut().zip(b.appearance.iter()) {
                *s += a;
            }
            counts[c] += 1;
        }
        for (sum, &count) in sums.iter_mut().zip(counts.iter()) {
            if count > 0 {
                for s in sum.iter_mut() {
                    *s /= count as f64;
                }
            }
        }
        MockDetector::new(sums, params)
    }

    pub fn num_components(&self) -> usize {
        self.templates.len()
    }

    pub fn params(&self) -> &DetectorParams {
        &self.params
    }

    pub fn templates(&self) -> &[Vec<f64>] {
        &self.templates
    }

    /// Component evaluations performed so far (each costs
    /// `cost_per_component` abstract units).
    pub fn components_run(&self) -> u64 {
        self.components_run.load(Ordering::Relaxed)
    }

    /// Abstract cost accumulated so far.
    pub fn total_cost(&self) -> f64 {
        self.components_run() as f64 * self.params.cost_per_component
    }

    /// Run the active components on one image. Candidates are the image's
    /// ground-truth boxes plus `distractor_rate` random windows; every
    /// candidate emits one detection from its best-scoring active
    /// component. An empty active set detects nothing and costs nothing.
    pub fn run(&self, img: &ImageRecord, active: &[u32], seed: u64) -> Result<Vec<Detection>> {
        let c = self.templates.len();
        let mut active_sorted = BTreeSet::new();
        for &id in active {
            if id as usize >= c {
                return Err(Error::UnknownComponent {
                    id,
                    num_components: c as u32,
                });
            }
            active_sorted.insert(id);
        }
        if active_sorted.is_empty() {
            return Ok(Vec::new());
        }
        let d_app = self.templates[0].len();
        for b in &img.boxes {
            if b.appearance.len() != d_app {
                return Err(Error::DimensionMismatch {
                    expected: d_app,
                    got: b.appearance.len(),
                });
            }
        }
        self.components_run
            .fetch_add(active_sorted.len() as u64, Ordering::Relaxed);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        struct Candidate {
            cx: f64,
            cy: f64,
            w: f64,
            h: f64,
            appearance: Vec<f64>,
        }
        let mut candidates: Vec<Candidate> = img
            .boxes
            .iter()
            .map(|b| Candidate {
                cx: b.cx,
                cy: b.cy,
                w: b.w,
                h: b.h,
                appearance: b.appearance.clone(),
            })
            .collect();
        for _ in 0..self.params.distractor_rate {
            let cx: f64 = rng.random();
            let cy: f64 = rng.random();
            let scale = rng.random_range(0.05..0.5);
            let aspect_sqrt = libm::sqrt(rng.random_range(0.6..1.6));
            let seed_component = rng.random_range(0..c);
            let appearance = self.templates[seed_component]
                .iter()
                .map(|t| t + self.params.distractor_app_noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            candidates.push(Candidate {
                cx,
                cy,
                w: (scale * aspect_sqrt).clamp(1e-3, 1.0),
                h: (scale / aspect_sqrt).clamp(1e-3, 1.0),
                appearance,
            });
        }

        let mut detections = Vec::with_capacity(candidates.len());
        for cand in &candidates {
            let mut best: Option<(f64, u32)> = None;
            for &comp in &active_sorted {
                let template = &self.templates[comp as usize];
                let mut dist2 = 0.0;
                for (a, t) in cand.appearance.iter().zip(template.iter()) {
                    let d = a - t;
                    dist2 += d * d;
                }
                let score = -libm::sqrt(dist2)
                    + self.params.score_noise * rng.sample::<f64, _>(StandardNormal);
                if best.is_none_or(|(b, _)| score > b) {
                    best = Some((score, comp));
                }
            }
            let (score, component) = best.expect("active set checked non-empty");
            detections.push(Detection {
                image_id: img.id,
                cx: cand.cx,
                cy: cand.cy,
                w: cand.w,
                h: cand.h,
                score,
                component: Some(component),
            });
        }
        Ok(detections)
    }
}

/// One point of a precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Average precision with its supporting curve and match counts.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ApResult {
    pub ap: f64,
    pub curve: Vec<PrPoint>,
    pub true_positives: u32,
    pub false_positives: u32,
}

/// Evaluate average precision at one IoU threshold.
///
/// Detections are ranked by the canonical detection order, matched greedily
/// to the highest-IoU *unmatched* ground-truth box of their image, and
/// counted as true positives at IoU >= threshold; duplicates are false
/// positives. AP is the area under the precision envelope of the resulting
/// curve (continuous interpolation over all points).
pub fn evaluate_ap(dets: &[Detection], gt: &Dataset, iou_threshold: f64) -> Result<ApResult> {
    let mut matched: alloc::collections::BTreeMap<u64, (usize, Vec<bool>)> =
        alloc::collections::BTreeMap::new();
    for (idx, img) in gt.images.iter().enumerate() {
        matched.insert(img.id, (idx, vec![false; img.boxes.len()]));
    }
    let npos: usize = gt.total_boxes();

    let mut sorted: Vec<&Detection> = dets.iter().collect();
    sorted.sort_by(|a, b| a.canonical_cmp(b));

    let mut tp = 0u32;
    let mut fp = 0u32;
    let mut curve = Vec::with_capacity(sorted.len());
    for det in sorted {
        let Some((img_idx, flags)) = matched.get_mut(&det.image_id) else {
            return Err(Error::ImageNotFound(det.image_id));
        };
        let boxes = &gt.images[*img_idx].boxes;
        let mut best: Option<(f64, usize)> = None;
        for (i, b) in boxes.iter().enumerate() {
            if flags[i] {
                continue;
            }
            let overlap = iou(det.geometry(), b.geometry());
            if best.is_none_or(|(bo, _)| overlap > bo) {
                best = Some((overlap, i));
            }
        }
        match best {
            Some((overlap, i)) if overlap >= iou_threshold => {
                flags[i] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
        curve.push(PrPoint {
            recall: if npos > 0 { tp as f64 / npos as f64 } else { 0.0 },
            precision: tp as f64 / (tp + fp) as f64,
        });
    }

    Ok(ApResult {
        ap: area_under_pr(&curve),
        curve,
        true_positives: tp,
        false_positives: fp,
    })
}

/// Area under a cumulative PR curve using the precision envelope
/// (`p_env(r) = max precision at recall >= r`).
pub fn area_under_pr(curve: &[PrPoint]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    let mut envelope = vec![0.0f64; curve.len()];
    let mut running = 0.0f64;
    for (i, p) in curve.iter().enumerate().rev() {
        running = running.max(p.precision);
        envelope[i] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, &env) in curve.iter().zip(envelope.iter()) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    ap
}

/// One gamma setting of a component-selection sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub gamma: f64,
    /// Number of components run on each test image.
    pub active_counts: Vec<usize>,
    pub total_cost: f64,
    pub ap: f64,
}

/// One row of the speed-up table.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpeedupRow {
    pub gamma: f64,
    pub mean_component_fraction: f64,
    pub total_cost: f64,
    pub ap: f64,
    pub ap_ratio_vs_full: f64,
}

/// Summarize sweep runs against the full-model AP, ordered by gamma.
pub fn speedup_report(
    runs: &[SweepRun],
    num_components: usize,
    full_ap: f64,
) -> Vec<SpeedupRow> {
    let mut rows: Vec<SpeedupRow> = runs
        .iter()
        .map(|run| {
            let mean_active = if run.active_counts.is_empty() {
                0.0
            } else {
                run.active_counts.iter().sum::<usize>() as f64 / run.active_counts.len() as f64
            };
            SpeedupRow {
                gamma: run.gamma,
                mean_component_fraction: mean_active / num_components as f64,
                total_cost: run.total_cost,
                ap: run.ap,
                ap_ratio_vs_full: if full_ap > 0.0 { run.ap / full_ap } else { 0.0 },
            }
        })
        .collect();
    rows.sort_by(|a, b| a.gamma.total_cmp(&b.gamma));
    rows
}
