//! Distances between object boxes, bandwidth estimation and the Gaussian
//! KDE scores used everywhere else: split compactness, window likelihood
//! and retrieval-set quality.
//!
//! All three KDE quantities share the kernel `exp(-D(a,b)^2 / (2 sigma^2))`
//! and the normalization `1 / (sigma^2 sqrt(2 pi))`; they differ only in
//! which pairs are summed and how the sum is averaged. Sums are accumulated
//! with Neumaier compensation so they can be checked against naive
//! double-loop references at 1e-12 relative tolerance.

use core::borrow::Borrow;
use core::fmt;
use core::sync::atomic::{AtomicU64, Ordering};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::ObjectBox;
use crate::error::{Error, Result};

/// Which object property a distance (and everything built on it) compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PropertyKind {
    /// L2 distance between appearance descriptors.
    Appearance,
    /// L2 distance between box centers, in normalized image coordinates.
    Position,
    /// Size-ratio product `max(Ha/Hb, Hb/Ha) * max(Wa/Wb, Wb/Wa)`.
    ///
    /// Note `D(a, a) = 1`, not 0; the Gaussian kernel is applied to this
    /// distance verbatim, which only shifts scores by a constant factor and
    /// leaves every downstream ordering unchanged.
    Scale,
}

impl PropertyKind {
    pub const ALL: [PropertyKind; 3] = [
        PropertyKind::Appearance,
        PropertyKind::Position,
        PropertyKind::Scale,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PropertyKind::Appearance => "appearance",
            PropertyKind::Position => "position",
            PropertyKind::Scale => "scale",
        }
    }
}

impl fmt::Display for PropertyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for PropertyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "appearance" => Ok(PropertyKind::Appearance),
            "position" => Ok(PropertyKind::Position),
            "scale" => Ok(PropertyKind::Scale),
            other => Err(Error::InvalidConfig(format!(
                "unknown property kind '{other}' (expected appearance, position or scale)"
            ))),
        }
    }
}

/// Gaussian kernel bandwidth for one property kind.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SigmaParams {
    pub sigma: f64,
    pub kind: PropertyKind,
    /// Neighbourhood size used during estimation.
    pub k_nn: usize,
    /// Set when the raw estimate was exactly zero (duplicate boxes) and the
    /// epsilon floor was substituted.
    pub degenerate: bool,
}

/// Epsilon substituted for a degenerate (zero) bandwidth estimate.
pub const SIGMA_EPSILON: f64 = 1e-6;

static DISTANCE_EVALS: AtomicU64 = AtomicU64::new(0);

/// Global count of box-distance evaluations since process start.
///
/// Take a snapshot before and after an operation to count its distance
/// computations; forest queries must contribute zero.
pub fn distance_eval_count() -> u64 {
    DISTANCE_EVALS.load(Ordering::Relaxed)
}

/// Distance between the `kind` properties of two object boxes.
pub fn distance(kind: PropertyKind, a: &ObjectBox, b: &ObjectBox) -> Result<f64> {
    DISTANCE_EVALS.fetch_add(1, Ordering::Relaxed);
    match kind {
        PropertyKind::Appearance => {
            if a.appearance.len() != b.appearance.len() {
                return Err(Error::DimensionMismatch {
                    expected: a.appearance.len(),
                    got: b.appearance.len(),
                });
            }
            let mut sum = 0.0;
            for (x, y) in a.appearance.iter().zip(b.appearance.iter()) {
                let d = x - y;
                sum += d * d;
            }
            Ok(libm::sqrt(sum))
        }
        PropertyKind::Position => {
            let dx = a.cx - b.cx;
            let dy = a.cy - b.cy;
            Ok(libm::sqrt(dx * dx + dy * dy))
        }
        PropertyKind::Scale => {
            let hr = (a.h / b.h).max(b.h / a.h);
            let wr = (a.w / b.w).max(b.w / a.w);
            Ok(hr * wr)
        }
    }
}

/// Estimate the kernel bandwidth from a set of boxes.
///
/// For every box, the standard deviation of its `k_nn` smallest distances
/// to the other boxes is computed; the returned sigma is the median of
/// those per-box standard deviations (mean of the two middle values for an
/// even count). A zero result is replaced by [`SIGMA_EPSILON`] and flagged.
pub fn estimate_sigma<B: Borrow<ObjectBox>>(
    boxes: &[B],
    kind: PropertyKind,
    k_nn: usize,
) -> Result<SigmaParams> {
    if k_nn == 0 {
        return Err(Error::InvalidConfig(String::from("k_nn must be >= 1")));
    }
    let n = boxes.len();
    if n < k_nn + 1 {
        return Err(Error::TooFewBoxes {
            needed: k_nn + 1,
            got: n,
        });
    }

    let mut stds = Vec::with_capacity(n);
    let mut row = Vec::with_capacity(n - 1);
    for i in 0..n {
        row.clear();
        for j in 0..n {
            if i != j {
                row.push(distance(kind, boxes[i].borrow(), boxes[j].borrow())?);
            }
        }
        row.sort_unstable_by(f64::total_cmp);
        let neigh = &row[..k_nn];
        let mean = neigh.iter().sum::<f64>() / k_nn as f64;
        let var = neigh.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / k_nn as f64;
        stds.push(libm::sqrt(var));
    }

    stds.sort_unstable_by(f64::total_cmp);
    let sigma = if n % 2 == 1 {
        stds[n / 2]
    } else {
        0.5 * (stds[n / 2 - 1] + stds[n / 2])
    };

    if sigma > 0.0 {
        Ok(SigmaParams {
            sigma,
            kind,
            k_nn,
            degenerate: false,
        })
    } else {
        Ok(SigmaParams {
            sigma: SIGMA_EPSILON,
            kind,
            k_nn,
            degenerate: true,
        })
    }
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(self) -> f64 {
        self.sum + self.comp
    }
}

/// `1 / (sigma^2 sqrt(2 pi))`, the normalization shared by all KDE scores.
pub(crate) fn kernel_norm(sigma: f64) -> f64 {
    1.0 / (sigma * sigma * libm::sqrt(2.0 * core::f64::consts::PI))
}

pub(crate) fn kernel(d: f64, sigma: f64) -> f64 {
    libm::exp(-0.5 * (d * d) / (sigma * sigma))
}

/// Compactness of a box set: the mean pairwise kernel density, normalized
/// by `1 / (N^2 sigma^2 sqrt(2 pi))`. Returns 0 for fewer than two boxes.
pub fn compactness<B: Borrow<ObjectBox>>(
    boxes: &[B],
    kind: PropertyKind,
    sigma: &SigmaParams,
) -> Result<f64> {
    let n = boxes.len();
    if n <= 1 {
        return Ok(0.0);
    }
    let mut acc = CompensatedSum::default();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = distance(kind, boxes[i].borrow(), boxes[j].borrow())?;
            acc.add(2.0 * kernel(d, sigma.sigma));
        }
    }
    Ok(acc.value() * kernel_norm(sigma.sigma) / (n as f64 * n as f64))
}

/// Likelihood-style score of a single window against a set of reference
/// boxes: the mean kernel value times the shared normalization.
pub fn kde_window_score<B: Borrow<ObjectBox>>(
    window: &ObjectBox,
    ref_boxes: &[B],
    kind: PropertyKind,
    sigma: &SigmaParams,
) -> Result<f64> {
    if ref_boxes.is_empty() {
        return Err(Error::EmptyBoxes);
    }
    let mut acc = CompensatedSum::default();
    for b in ref_boxes {
        let d = distance(kind, window, b.borrow())?;
        acc.add(kernel(d, sigma.sigma));
    }
    Ok(acc.value() * kernel_norm(sigma.sigma) / ref_boxes.len() as f64)
}

/// Quality of a retrieval set for one test image: the mean kernel value
/// over all (test box, retrieved box) pairs, times the shared
/// normalization.
pub fn retrieval_quality<A: Borrow<ObjectBox>, B: Borrow<ObjectBox>>(
    test_boxes: &[A],
    retrieved_boxes: &[B],
    kind: PropertyKind,
    sigma: &SigmaParams,
) -> Result<f64> {
    if test_boxes.is_empty() || retrieved_boxes.is_empty() {
        return Err(Error::EmptyBoxes);
    }
    let mut acc = CompensatedSum::default();
    for t in test_boxes {
        for r in retrieved_boxes {
            let d = distance(kind, t.borrow(), r.borrow())?;
            acc.add(kernel(d, sigma.sigma));
        }
    }
    let z = (test_boxes.len() * retrieved_boxes.len()) as f64;
    Ok(acc.value() * kernel_norm(sigma.sigma) / z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plain_box(cx: f64, cy: f64, w: f64, h: f64) -> ObjectBox {
        ObjectBox {
            cx,
            cy,
            w,
            h,
            appearance: vec![],
            component_id: None,
        }
    }

    fn app_box(app: &[f64]) -> ObjectBox {
        ObjectBox {
            cx: 0.5,
            cy: 0.5,
            w: 0.1,
            h: 0.1,
            appearance: app.to_vec(),
            component_id: None,
        }
    }

    fn random_boxes(rng: &mut ChaCha8Rng, n: usize, d_app: usize) -> Vec<ObjectBox> {
        (0..n)
            .map(|_| ObjectBox {
                cx: rng.random(),
                cy: rng.random(),
                w: rng.random_range(0.01..1.0),
                h: rng.random_range(0.01..1.0),
                appearance: (0..d_app).map(|_| rng.random_range(-1.0..1.0)).collect(),
                component_id: None,
            })
            .collect()
    }

    fn sigma(kind: PropertyKind, s: f64) -> SigmaParams {
        SigmaParams {
            sigma: s,
            kind,
            k_nn: 10,
            degenerate: false,
        }
    }

    // Naive references, kept deliberately close to the defining formulas.

    fn naive_compactness(boxes: &[ObjectBox], kind: PropertyKind, s: f64) -> f64 {
        let n = boxes.len();
        if n <= 1 {
            return 0.0;
        }
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let d = distance(kind, &boxes[i], &boxes[j]).unwrap();
                    sum += (-0.5 * d * d / (s * s)).exp();
                }
            }
        }
        sum / (n as f64 * n as f64) / (s * s * (2.0 * core::f64::consts::PI).sqrt())
    }

    fn naive_window_score(w: &ObjectBox, refs: &[ObjectBox], kind: PropertyKind, s: f64) -> f64 {
        let mut sum = 0.0;
        for r in refs {
            let d = distance(kind, w, r).unwrap();
            sum += (-0.5 * d * d / (s * s)).exp();
        }
        sum / refs.len() as f64 / (s * s * (2.0 * core::f64::consts::PI).sqrt())
    }

    fn naive_quality(ts: &[ObjectBox], rs: &[ObjectBox], kind: PropertyKind, s: f64) -> f64 {
        let mut sum = 0.0;
        for t in ts {
            for r in rs {
                let d = distance(kind, t, r).unwrap();
                sum += (-0.5 * d * d / (s * s)).exp();
            }
        }
        sum / (ts.len() * rs.len()) as f64 / (s * s * (2.0 * core::f64::consts::PI).sqrt())
    }

    #[test]
    fn scale_distance_of_identical_boxes_is_one() {
        let a = plain_box(0.2, 0.3, 0.4, 0.5);
        assert_eq!(distance(PropertyKind::Scale, &a, &a).unwrap(), 1.0);
    }

    #[test]
    fn position_distance_ignores_size() {
        let a = plain_box(0.5, 0.5, 0.1, 0.1);
        let b = plain_box(0.5, 0.5, 0.9, 0.4);
        assert_eq!(distance(PropertyKind::Position, &a, &b).unwrap(), 0.0);
    }

    #[test]
    fn scale_distance_hand_value() {
        // (w,h) = (0.2, 0.1) vs (0.1, 0.2): both ratios are 2, product 4.
        let a = plain_box(0.5, 0.5, 0.2, 0.1);
        let b = plain_box(0.5, 0.5, 0.1, 0.2);
        assert_relative_eq!(distance(PropertyKind::Scale, &a, &b).unwrap(), 4.0);
        assert_relative_eq!(distance(PropertyKind::Scale, &b, &a).unwrap(), 4.0);
    }

    #[test]
    fn appearance_distance_checks_dims() {
        let a = app_box(&[1.0, 0.0]);
        let b = app_box(&[1.0]);
        assert!(matches!(
            distance(PropertyKind::Appearance, &a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn distances_are_symmetric_and_identity_behaves() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let boxes = random_boxes(&mut rng, 20, 4);
        for kind in PropertyKind::ALL {
            for a in &boxes {
                let daa = distance(kind, a, a).unwrap();
                match kind {
                    PropertyKind::Scale => assert_eq!(daa, 1.0),
                    _ => assert_eq!(daa, 0.0),
                }
                for b in &boxes {
                    let dab = distance(kind, a, b).unwrap();
                    let dba = distance(kind, b, a).unwrap();
                    assert_eq!(dab, dba);
                    assert!(dab >= 0.0);
                }
            }
        }
    }

    #[test]
    fn sigma_on_three_collinear_points() {
        // Centers at x = 0, 0.25, 0.5, spacing 0.25. With k = 2 the
        // neighbour distances are {0.25, 0.5} for the outer points
        // (population std 0.125) and {0.25, 0.25} for the middle one
        // (std 0). Median of {0.125, 0, 0.125} is 0.125.
        let boxes = vec![
            plain_box(0.0, 0.5, 0.1, 0.1),
            plain_box(0.25, 0.5, 0.1, 0.1),
            plain_box(0.5, 0.5, 0.1, 0.1),
        ];
        let sp = estimate_sigma(&boxes, PropertyKind::Position, 2).unwrap();
        assert_relative_eq!(sp.sigma, 0.125, max_relative = 1e-12);
        assert!(!sp.degenerate);
    }

    #[test]
    fn sigma_degenerate_duplicates_flagged() {
        let boxes = vec![plain_box(0.5, 0.5, 0.1, 0.1); 5];
        let sp = estimate_sigma(&boxes, PropertyKind::Position, 2).unwrap();
        assert!(sp.degenerate);
        assert_eq!(sp.sigma, SIGMA_EPSILON);
    }

    #[test]
    fn sigma_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut boxes = random_boxes(&mut rng, 30, 3);
        let a = estimate_sigma(&boxes, PropertyKind::Appearance, 5).unwrap();
        boxes.reverse();
        boxes.swap(0, 13);
        let b = estimate_sigma(&boxes, PropertyKind::Appearance, 5).unwrap();
        assert_eq!(a.sigma, b.sigma);
    }

    #[test]
    fn sigma_rejects_too_few_boxes() {
        let boxes = vec![plain_box(0.1, 0.1, 0.1, 0.1); 3];
        assert!(matches!(
            estimate_sigma(&boxes, PropertyKind::Position, 3),
            Err(Error::TooFewBoxes { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn compactness_of_singleton_is_zero() {
        let boxes = vec![plain_box(0.5, 0.5, 0.1, 0.1)];
        let s = sigma(PropertyKind::Position, 1.0);
        assert_eq!(compactness(&boxes, PropertyKind::Position, &s).unwrap(), 0.0);
        let empty: Vec<ObjectBox> = vec![];
        assert_eq!(compactness(&empty, PropertyKind::Position, &s).unwrap(), 0.0);
    }

    #[test]
    fn compactness_two_identical_boxes_hand_value() {
        // N = 2, both kernel terms are exp(0) = 1:
        // (1/4) * (1/sqrt(2 pi)) * 2 = 1 / (2 sqrt(2 pi)).
        let boxes = vec![plain_box(0.3, 0.3, 0.2, 0.2); 2];
        let s = sigma(PropertyKind::Position, 1.0);
        let expected = 1.0 / (2.0 * (2.0 * core::f64::consts::PI).sqrt());
        assert_relative_eq!(
            compactness(&boxes, PropertyKind::Position, &s).unwrap(),
            expected,
            max_relative = 1e-15
        );
    }

    #[test]
    fn kde_window_score_identical_reference() {
        let w = plain_box(0.4, 0.6, 0.2, 0.3);
        let refs = vec![w.clone()];
        let s = sigma(PropertyKind::Position, 1.0);
        let expected = 1.0 / (2.0 * core::f64::consts::PI).sqrt();
        assert_relative_eq!(
            kde_window_score(&w, &refs, PropertyKind::Position, &s).unwrap(),
            expected,
            max_relative = 1e-15
        );
    }

    #[test]
    fn kde_window_score_decays_monotonically_with_distance() {
        let refs = vec![plain_box(0.0, 0.0, 0.1, 0.1)];
        let s = sigma(PropertyKind::Position, 0.1);
        let mut prev = f64::INFINITY;
        for step in 1..=20 {
            let w = plain_box(step as f64 * 0.1, 0.0, 0.1, 0.1);
            let v = kde_window_score(&w, &refs, PropertyKind::Position, &s).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-12);
    }

    #[test]
    fn kde_window_score_rejects_empty_refs() {
        let w = plain_box(0.4, 0.6, 0.2, 0.3);
        let refs: Vec<ObjectBox> = vec![];
        let s = sigma(PropertyKind::Position, 1.0);
        assert!(matches!(
            kde_window_score(&w, &refs, PropertyKind::Position, &s),
            Err(Error::EmptyBoxes)
        ));
    }

    #[test]
    fn retrieval_quality_single_identical_pair() {
        let b = plain_box(0.4, 0.6, 0.2, 0.3);
        let s = sigma(PropertyKind::Position, 1.0);
        let expected = 1.0 / (2.0 * core::f64::consts::PI).sqrt();
        assert_relative_eq!(
            retrieval_quality(&[b.clone()], &[b.clone()], PropertyKind::Position, &s).unwrap(),
            expected,
            max_relative = 1e-15
        );
    }

    #[test]
    fn retrieval_quality_normalization_is_count_free() {
        // m identical boxes on both sides: Z scales with m^2 and so does
        // the kernel sum, leaving the value unchanged.
        let b = plain_box(0.4, 0.6, 0.2, 0.3);
        let s = sigma(PropertyKind::Position, 0.7);
        let one = retrieval_quality(&[b.clone()], &[b.clone()], PropertyKind::Position, &s).unwrap();
        let many = retrieval_quality(
            &vec![b.clone(); 4],
            &vec![b.clone(); 7],
            PropertyKind::Position,
            &s,
        )
        .unwrap();
        assert_relative_eq!(one, many, max_relative = 1e-12);
    }

    #[test]
    fn kde_quantities_match_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for round in 0..60 {
            let n = rng.random_range(2..60);
            let boxes = random_boxes(&mut rng, n, 6);
            let probe = random_boxes(&mut rng, 1, 6).pop().unwrap();
            let m = rng.random_range(1..20);
            let others = random_boxes(&mut rng, m, 6);
            for kind in PropertyKind::ALL {
                let s = sigma(kind, rng.random_range(0.05..2.0));
                let c = compactness(&boxes, kind, &s).unwrap();
                assert_relative_eq!(
                    c,
                    naive_compactness(&boxes, kind, s.sigma),
                    max_relative = 1e-12
                );
                let k = kde_window_score(&probe, &boxes, kind, &s).unwrap();
                assert_relative_eq!(
                    k,
                    naive_window_score(&probe, &boxes, kind, s.sigma),
                    max_relative = 1e-12
                );
                let q = retrieval_quality(&others, &boxes, kind, &s).unwrap();
                assert_relative_eq!(
                    q,
                    naive_quality(&others, &boxes, kind, s.sigma),
                    max_relative = 1e-12,
                );
            }
            let _ = round;
        }
    }

    #[test]
    fn kde_quantities_are_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let boxes = random_boxes(&mut rng, 25, 4);
        let mut shuffled = boxes.clone();
        shuffled.reverse();
        shuffled.swap(2, 17);
        let s = sigma(PropertyKind::Appearance, 0.5);
        let a = compactness(&boxes, PropertyKind::Appearance, &s).unwrap();
        let b = compactness(&shuffled, PropertyKind::Appearance, &s).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-13);
    }

    #[test]
    fn compactness_peaks_when_boxes_coincide() {
        let s = sigma(PropertyKind::Position, 0.3);
        let tight = vec![plain_box(0.5, 0.5, 0.1, 0.1); 6];
        let base = compactness(&tight, PropertyKind::Position, &s).unwrap();
        for perturbation in [0.01, 0.05, 0.2] {
            let mut spread = tight.clone();
            for (i, b) in spread.iter_mut().enumerate() {
                b.cx += perturbation * (i as f64 + 1.0) / 6.0;
            }
            let c = compactness(&spread, PropertyKind::Position, &s).unwrap();
            assert!(c < base, "perturbation {perturbation} did not decrease compactness");
        }
    }

    #[test]
    fn distance_counter_increments() {
        let a = plain_box(0.1, 0.2, 0.3, 0.4);
        let b = plain_box(0.5, 0.6, 0.7, 0.8);
        let before = distance_eval_count();
        distance(PropertyKind::Position, &a, &b).unwrap();
        distance(PropertyKind::Scale, &a, &b).unwrap();
        assert_eq!(distance_eval_count() - before, 2);
    }
}
