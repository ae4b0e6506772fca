//! Extremely randomized context forest: training with the joint-compactness
//! split objective, vote-based querying and retrieval-set construction.
//!
//! Trees split on single dimensions of the global feature vector. A split
//! candidate is scored by the sum of the two children's compactness over
//! the object boxes of the images they receive; the argmax over a few
//! thousand random (feature, threshold) candidates wins.
//!
//! Scoring every candidate by a literal double loop over boxes would make
//! training quadratic in boxes *per candidate*. [`TrainContext`] instead
//! precomputes, once per forest, the pairwise kernel mass between every two
//! training images. At a node, images are sorted along the candidate
//! feature and prefix/suffix kernel masses are accumulated incrementally,
//! which answers every threshold on that feature in one sweep. The scores
//! are the same compactness values up to floating-point summation order
//! (see the `split_scores_match_direct_compactness` test).

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, ObjectBox};
use crate::error::{Error, Result};
use crate::metrics::{self, kernel, kernel_norm, PropertyKind, SigmaParams};

/// Default retrieval-set size.
pub const DEFAULT_K_RETRIEVAL: usize = 10;

/// Parameters of one axis-aligned split.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitParams {
    pub feature_index: usize,
    pub threshold: f64,
}

/// Evaluate a split: `true` (route right) iff `phi[feature] > threshold`.
pub fn eval_split(split: &SplitParams, phi: &[f64]) -> Result<bool> {
    let Some(&v) = phi.get(split.feature_index) else {
        return Err(Error::FeatureIndexOutOfRange {
            index: split.feature_index,
            dim: phi.len(),
        });
    };
    Ok(v > split.threshold)
}

/// A trained tree node. Leaves store the ids of the training images that
/// reached them, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Internal {
        split: SplitParams,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        image_ids: Vec<u64>,
    },
}

impl TreeNode {
    pub fn internal_count(&self) -> u64 {
        match self {
            TreeNode::Internal { left, right, .. } => {
                1 + left.internal_count() + right.internal_count()
            }
            TreeNode::Leaf { .. } => 0,
        }
    }

    pub fn leaf_count(&self) -> u64 {
        match self {
            TreeNode::Internal { left, right, .. } => left.leaf_count() + right.leaf_count(),
            TreeNode::Leaf { .. } => 1,
        }
    }

    pub fn stored_image_ids(&self) -> u64 {
        match self {
            TreeNode::Internal { left, right, .. } => {
                left.stored_image_ids() + right.stored_image_ids()
            }
            TreeNode::Leaf { image_ids } => image_ids.len() as u64,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
            TreeNode::Leaf { .. } => 0,
        }
    }

    /// Visit every leaf's image-id list.
    pub fn for_each_leaf(&self, f: &mut impl FnMut(&[u64])) {
        match self {
            TreeNode::Internal { left, right, .. } => {
                left.for_each_leaf(f);
                right.for_each_leaf(f);
            }
            TreeNode::Leaf { image_ids } => f(image_ids),
        }
    }
}

/// Forest training parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub num_trees: usize,
    /// Random (feature, threshold) candidates scored at each node.
    pub candidate_splits_per_node: usize,
    /// A chosen split may not create a child with fewer images than this;
    /// nodes below twice this size become leaves outright.
    pub min_images_per_leaf: usize,
    pub max_depth: usize,
    /// Neighbourhood size for bandwidth estimation.
    pub sigma_k_nn: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            num_trees: 750,
            candidate_splits_per_node: 2000,
            min_images_per_leaf: 4,
            max_depth: 20,
            sigma_k_nn: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.num_trees, "num_trees"),
            (self.candidate_splits_per_node, "candidate_splits_per_node"),
            (self.min_images_per_leaf, "min_images_per_leaf"),
            (self.max_depth, "max_depth"),
            (self.sigma_k_nn, "sigma_k_nn"),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// One entry of a retrieval set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetrievalEntry {
    pub image_id: u64,
    /// Vote count (trees that selected the image), or a rank surrogate for
    /// non-forest retrieval methods.
    pub votes: u32,
}

/// Ordered retrieval set: descending votes, ties broken by ascending image
/// id, zero-vote images excluded.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RetrievalSet {
    pub entries: Vec<RetrievalEntry>,
}

impl RetrievalSet {
    /// Rank votes and keep the top `k`.
    pub fn from_votes(votes: &BTreeMap<u64, u32>, k: usize) -> RetrievalSet {
        let mut entries: Vec<RetrievalEntry> = votes
            .iter()
            .filter(|(_, &v)| v > 0)
            .map(|(&image_id, &votes)| RetrievalEntry { image_id, votes })
            .collect();
        // BTreeMap iteration is id-ascending; a stable sort on votes keeps
        // that order among ties.
        entries.sort_by(|a, b| b.votes.cmp(&a.votes));
        entries.truncate(k);
        RetrievalSet { entries }
    }

    pub fn image_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|e| e.image_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Votes and traversal statistics for one probe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryResult {
    /// Vote count per training-image id (ids that received no vote are
    /// absent).
    pub votes: BTreeMap<u64, u32>,
    /// Internal nodes visited across all trees; bounded by
    /// `num_trees * max_depth`.
    pub node_visits: usize,
}

/// A trained context forest.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<TreeNode>,
    pub kind: PropertyKind,
    pub sigma: SigmaParams,
    pub d_glob: usize,
    pub k_retrieval: usize,
    pub config: TrainConfig,
}

impl Forest {
    /// Route `phi` down every tree and accumulate leaf votes.
    pub fn query(&self, phi: &[f64]) -> Result<QueryResult> {
        if phi.len() != self.d_glob {
            return Err(Error::DimensionMismatch {
                expected: self.d_glob,
                got: phi.len(),
            });
        }
        let mut votes: BTreeMap<u64, u32> = BTreeMap::new();
        let mut node_visits = 0usize;
        for tree in &self.trees {
            let mut node = tree;
            loop {
                match node {
                    TreeNode::Internal { split, left, right } => {
                        node_visits += 1;
                        node = if eval_split(split, phi)? { right } else { left };
                    }
                    TreeNode::Leaf { image_ids } => {
                        for &id in image_ids {
                            *votes.entry(id).or_insert(0) += 1;
                        }
                        break;
                    }
                }
            }
        }
        Ok(QueryResult { votes, node_visits })
    }

    /// Top `k_retrieval` most-voted training images.
    pub fn retrieval_set(&self, phi: &[f64]) -> Result<RetrievalSet> {
        self.retrieval_set_k(phi, self.k_retrieval)
    }

    /// Top `k` most-voted training images.
    pub fn retrieval_set_k(&self, phi: &[f64], k: usize) -> Result<RetrievalSet> {
        if k == 0 {
            return Err(Error::InvalidConfig(String::from(
                "retrieval size k must be >= 1",
            )));
        }
        Ok(RetrievalSet::from_votes(&self.query(phi)?.votes, k))
    }

    /// Storage accounting: 16 bytes per internal node (threshold, feature
    /// id, two child ids) and 2 bytes per training-image index stored in a
    /// leaf.
    pub fn memory_footprint(&self) -> MemoryFootprint {
        let mut internal_nodes = 0u64;
        let mut stored_image_ids = 0u64;
        for tree in &self.trees {
            internal_nodes += tree.internal_count();
            stored_image_ids += tree.stored_image_ids();
        }
        MemoryFootprint::from_counts(internal_nodes, stored_image_ids, self.trees.len())
    }
}

/// Byte accounting for a forest under the compact storage scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MemoryFootprint {
    pub internal_nodes: u64,
    pub stored_image_ids: u64,
    pub internal_bytes: u64,
    pub leaf_bytes: u64,
    pub total_bytes: u64,
    pub num_trees: usize,
}

impl MemoryFootprint {
    pub fn from_counts(internal_nodes: u64, stored_image_ids: u64, num_trees: usize) -> Self {
        let internal_bytes = internal_nodes * 16;
        let leaf_bytes = stored_image_ids * 2;
        MemoryFootprint {
            internal_nodes,
            stored_image_ids,
            internal_bytes,
            leaf_bytes,
            total_bytes: internal_bytes + leaf_bytes,
            num_trees,
        }
    }

    pub fn mean_internal_per_tree(&self) -> f64 {
        if self.num_trees == 0 {
            0.0
        } else {
            self.internal_nodes as f64 / self.num_trees as f64
        }
    }
}

/// Worst-case footprint of a not-yet-trained forest: every leaf holds the
/// minimum image count allowed by the stopping rules, capped by tree depth.
/// The true footprint of any forest trained with `cfg` is at most this.
pub fn footprint_upper_bound(n_train: usize, cfg: &TrainConfig) -> MemoryFootprint {
    let by_leaf_size = (n_train / cfg.min_images_per_leaf.max(1)).max(1) as u64;
    let by_depth = 1u64 << cfg.max_depth.min(63);
    let leaves = by_leaf_size.min(by_depth);
    let internal_per_tree = leaves.saturating_sub(1);
    MemoryFootprint::from_counts(
        internal_per_tree * cfg.num_trees as u64,
        (n_train * cfg.num_trees) as u64,
        cfg.num_trees,
    )
}

/// Score of one sampled split candidate, for objective-sanity inspection.
/// `score` is `None` when the candidate was discarded (constant feature at
/// the node, so one side would be empty).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateScore {
    pub feature_index: usize,
    pub threshold: f64,
    pub score: Option<f64>,
}

/// Per-tree seeds, derived deterministically from the config seed.
pub fn tree_seeds(cfg: &TrainConfig) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.num_trees).map(|_| rng.next_u64()).collect()
}

/// Train a forest sequentially. Sigma is estimated once from all training
/// boxes before any tree is grown.
pub fn train_forest(train: &Dataset, kind: PropertyKind, cfg: &TrainConfig) -> Result<Forest> {
    cfg.validate()?;
    let boxes: Vec<&ObjectBox> = train.boxes().collect();
    let sigma = metrics::estimate_sigma(&boxes, kind, cfg.sigma_k_nn)?;
    let ctx = TrainContext::new(train, kind, sigma)?;
    let trees = tree_seeds(cfg)
        .into_iter()
        .map(|seed| ctx.train_tree(cfg, seed))
        .collect();
    Ok(Forest {
        trees,
        kind,
        sigma,
        d_glob: train.d_glob,
        k_retrieval: DEFAULT_K_RETRIEVAL,
        config: cfg.clone(),
    })
}

/// Train a single tree against its own freshly built context. Prefer
/// [`TrainContext::train_tree`] when growing many trees on one training
/// set.
pub fn train_tree(
    train: &Dataset,
    kind: PropertyKind,
    sigma: &SigmaParams,
    cfg: &TrainConfig,
    tree_seed: u64,
) -> Result<TreeNode> {
    let ctx = TrainContext::new(train, kind, *sigma)?;
    Ok(ctx.train_tree(cfg, tree_seed))
}

/// Shared read-only state for growing trees on one training set: the
/// per-image-pair kernel mass matrix and per-image box counts. Immutable
/// once built, so trees may be grown concurrently against one context.
pub struct TrainContext<'a> {
    train: &'a Dataset,
    pub kind: PropertyKind,
    pub sigma: SigmaParams,
    /// Symmetric n x n matrix; entry (a, b) is the summed kernel mass
    /// between the boxes of images a and b (ordered pairs, diagonal
    /// excludes same-box pairs).
    pair_kernel: Vec<f64>,
    box_counts: Vec<usize>,
    n: usize,
}

struct Scratch {
    /// Node-local gather of `pair_kernel`.
    node_w: Vec<f64>,
    /// Per-image sums of `node_w` rows.
    row_sums: Vec<f64>,
    /// Kernel mass of the whole node (sum of all `node_w` entries).
    total_mass: f64,
    total_boxes: usize,
    /// Running column sums of the rows added so far during a sweep.
    acc: Vec<f64>,
    prefix_mass: Vec<f64>,
    prefix_row_sum: Vec<f64>,
    prefix_boxes: Vec<usize>,
    order: Vec<usize>,
    sorted_values: Vec<f64>,
}

impl Scratch {
    fn new() -> Self {
        Scratch {
            node_w: Vec::new(),
            row_sums: Vec::new(),
            total_mass: 0.0,
            total_boxes: 0,
            acc: Vec::new(),
            prefix_mass: Vec::new(),
            prefix_row_sum: Vec::new(),
            prefix_boxes: Vec::new(),
            order: Vec::new(),
            sorted_values: Vec::new(),
        }
    }
}

impl<'a> TrainContext<'a> {
    pub fn new(train: &'a Dataset, kind: PropertyKind, sigma: SigmaParams) -> Result<Self> {
        let n = train.images.len();
        if n == 0 {
            return Err(Error::EmptyTrainingSet);
        }
        let box_counts: Vec<usize> = train.images.iter().map(|img| img.boxes.len()).collect();
        let mut pair_kernel = vec![0.0; n * n];
        for a in 0..n {
            let boxes_a = &train.images[a].boxes;
            // Diagonal: ordered same-image pairs, i != j.
            let mut mass = 0.0;
            for i in 0..boxes_a.len() {
                for j in (i + 1)..boxes_a.len() {
                    let d = metrics::distance(kind, &boxes_a[i], &boxes_a[j])?;
                    mass += 2.0 * kernel(d, sigma.sigma);
                }
            }
            pair_kernel[a * n + a] = mass;
            for b in (a + 1)..n {
                let boxes_b = &train.images[b].boxes;
                let mut mass = 0.0;
                for bi in boxes_a {
                    for bj in boxes_b {
                        let d = metrics::distance(kind, bi, bj)?;
                        mass += kernel(d, sigma.sigma);
                    }
                }
                pair_kernel[a * n + b] = mass;
                pair_kernel[b * n + a] = mass;
            }
        }
        Ok(TrainContext {
            train,
            kind,
            sigma,
            pair_kernel,
            box_counts,
            n,
        })
    }

    pub fn train(&self) -> &Dataset {
        self.train
    }

    /// Grow one tree. Deterministic for a given seed regardless of how many
    /// trees are being grown elsewhere.
    pub fn train_tree(&self, cfg: &TrainConfig, tree_seed: u64) -> TreeNode {
        let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
        let mut scratch = Scratch::new();
        let node: Vec<usize> = (0..self.n).collect();
        self.build_node(node, 0, cfg, &mut rng, &mut scratch)
    }

    fn build_node(
        &self,
        node: Vec<usize>,
        depth: usize,
        cfg: &TrainConfig,
        rng: &mut ChaCha8Rng,
        scratch: &mut Scratch,
    ) -> TreeNode {
        if node.len() < 2 * cfg.min_images_per_leaf || depth >= cfg.max_depth {
            return self.leaf(&node);
        }
        let Some(split) = self.best_split_impl(&node, cfg, rng, scratch, None) else {
            return self.leaf(&node);
        };
        let (right, left): (Vec<usize>, Vec<usize>) = node.iter().partition(|&&i| {
            self.train.images[i].global_features[split.feature_index] > split.threshold
        });
        if left.len() < cfg.min_images_per_leaf || right.len() < cfg.min_images_per_leaf {
            return self.leaf(&node);
        }
        TreeNode::Internal {
            split,
            left: Box::new(self.build_node(left, depth + 1, cfg, rng, scratch)),
            right: Box::new(self.build_node(right, depth + 1, cfg, rng, scratch)),
        }
    }

    fn leaf(&self, node: &[usize]) -> TreeNode {
        let mut image_ids: Vec<u64> = node.iter().map(|&i| self.train.images[i].id).collect();
        image_ids.sort_unstable();
        TreeNode::Leaf { image_ids }
    }

    /// Sample `cfg.candidate_splits_per_node` random candidates and return
    /// the one maximizing the children's joint compactness, or `None` when
    /// no candidate yields two non-empty sides. Ties break toward the
    /// lowest feature index, then the lowest threshold.
    pub fn best_split(
        &self,
        node: &[usize],
        cfg: &TrainConfig,
        rng: &mut impl Rng,
    ) -> Option<SplitParams> {
        self.best_split_impl(node, cfg, rng, &mut Scratch::new(), None)
    }

    /// As [`Self::best_split`] but also returns the score of every sampled
    /// candidate, for objective-sanity checks.
    pub fn best_split_debug(
        &self,
        node: &[usize],
        cfg: &TrainConfig,
        rng: &mut impl Rng,
    ) -> (Option<SplitParams>, Vec<CandidateScore>) {
        let mut scores = Vec::new();
        let best = self.best_split_impl(node, cfg, rng, &mut Scratch::new(), Some(&mut scores));
        (best, scores)
    }

    fn best_split_impl(
        &self,
        node: &[usize],
        cfg: &TrainConfig,
        rng: &mut impl Rng,
        scratch: &mut Scratch,
        mut sink: Option<&mut Vec<CandidateScore>>,
    ) -> Option<SplitParams> {
        let n = node.len();
        if n < 2 {
            return None;
        }
        let d_glob = self.train.d_glob;

        // Sample all candidates first so the random stream is independent
        // of the evaluation order.
        let mut feature_range: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        let mut candidates: Vec<(usize, f64, bool)> =
            Vec::with_capacity(cfg.candidate_splits_per_node);
        let mut by_feature: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for _ in 0..cfg.candidate_splits_per_node {
            let f = rng.random_range(0..d_glob);
            let (lo, hi) = *feature_range.entry(f).or_insert_with(|| {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for &i in node {
                    let v = self.train.images[i].global_features[f];
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                (lo, hi)
            });
            if lo < hi {
                // Any threshold in [lo, hi) leaves both sides non-empty.
                let t = rng.random_range(lo..hi);
                by_feature.entry(f).or_default().push(candidates.len());
                candidates.push((f, t, true));
            } else {
                candidates.push((f, lo, false));
            }
        }
        if let Some(sink) = sink.as_deref_mut() {
            sink.extend(candidates.iter().map(|&(f, t, _)| CandidateScore {
                feature_index: f,
                threshold: t,
                score: None,
            }));
        }
        if by_feature.is_empty() {
            return None;
        }

        self.gather_node(node, scratch);
        let norm = kernel_norm(self.sigma.sigma);
        let side_score = |mass: f64, boxes: usize| -> f64 {
            if boxes <= 1 {
                0.0
            } else {
                mass * norm / (boxes as f64 * boxes as f64)
            }
        };

        let mut best: Option<(f64, usize, f64)> = None;
        for (&feature, cand_ids) in &by_feature {
            self.sweep_feature(node, feature, scratch);
            for &ci in cand_ids {
                let t = candidates[ci].1;
                let m = scratch.sorted_values.partition_point(|&v| v <= t);
                debug_assert!(m >= 1 && m < n);
                // Right-side mass via inclusion-exclusion over the node
                // totals: S_rr = S_total + S_ll - 2 * prefix row sums.
                let left_mass = scratch.prefix_mass[m];
                let right_mass =
                    (scratch.total_mass + left_mass - 2.0 * scratch.prefix_row_sum[m]).max(0.0);
                let score = side_score(left_mass, scratch.prefix_boxes[m])
                    + side_score(right_mass, scratch.total_boxes - scratch.prefix_boxes[m]);
                if let Some(sink) = sink.as_deref_mut() {
                    sink[ci].score = Some(score);
                }
                let better = match best {
                    None => true,
                    Some((bs, bf, bt)) => {
                        score > bs
                            || (score == bs && (feature < bf || (feature == bf && t < bt)))
                    }
                };
                if better {
                    best = Some((score, feature, t));
                }
            }
        }
        best.map(|(_, feature_index, threshold)| SplitParams {
            feature_index,
            threshold,
        })
    }

    /// Copy the node-restricted kernel matrix into scratch storage and
    /// precompute its row sums, total mass and total box count.
    fn gather_node(&self, node: &[usize], scratch: &mut Scratch) {
        let n = node.len();
        scratch.node_w.clear();
        scratch.node_w.resize(n * n, 0.0);
        scratch.row_sums.clear();
        scratch.row_sums.resize(n, 0.0);
        let mut total = 0.0;
        for (i, &a) in node.iter().enumerate() {
            let src = &self.pair_kernel[a * self.n..(a + 1) * self.n];
            let dst = &mut scratch.node_w[i * n..(i + 1) * n];
            let mut row_sum = 0.0;
            for (j, &b) in node.iter().enumerate() {
                dst[j] = src[b];
                row_sum += src[b];
            }
            scratch.row_sums[i] = row_sum;
            total += row_sum;
        }
        scratch.total_mass = total;
        scratch.total_boxes = node.iter().map(|&i| self.box_counts[i]).sum();
        scratch.acc.clear();
        scratch.acc.resize(n, 0.0);
        scratch.prefix_mass.resize(n + 1, 0.0);
        scratch.prefix_row_sum.resize(n + 1, 0.0);
        scratch.prefix_boxes.resize(n + 1, 0);
    }

    /// Sort the node along `feature` and accumulate, for every prefix of
    /// the sorted order, the within-prefix kernel mass, the prefix row
    /// sums and the prefix box count.
    fn sweep_feature(&self, node: &[usize], feature: usize, scratch: &mut Scratch) {
        let n = node.len();
        scratch.order.clear();
        scratch.order.extend(0..n);
        let value = |local: usize| self.train.images[node[local]].global_features[feature];
        scratch.order.sort_unstable_by(|&a, &b| {
            value(a)
                .total_cmp(&value(b))
                .then_with(|| self.train.images[node[a]].id.cmp(&self.train.images[node[b]].id))
        });
        scratch.sorted_values.clear();
        scratch.sorted_values.extend(scratch.order.iter().map(|&i| value(i)));

        let w = &scratch.node_w;
        scratch.acc.iter_mut().for_each(|v| *v = 0.0);
        let mut mass = 0.0;
        let mut row_sum = 0.0;
        let mut boxes = 0usize;
        scratch.prefix_mass[0] = 0.0;
        scratch.prefix_row_sum[0] = 0.0;
        scratch.prefix_boxes[0] = 0;
        for (m, &x) in scratch.order.iter().enumerate() {
            mass += w[x * n + x] + 2.0 * scratch.acc[x];
            row_sum += scratch.row_sums[x];
            boxes += self.box_counts[node[x]];
            scratch.prefix_mass[m + 1] = mass;
            scratch.prefix_row_sum[m + 1] = row_sum;
            scratch.prefix_boxes[m + 1] = boxes;
            let row = &w[x * n..(x + 1) * n];
            for (a, r) in scratch.acc.iter_mut().zip(row.iter()) {
                *a += r;
            }
        }
    }
}
