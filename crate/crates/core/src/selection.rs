//! Detector-component selection: turn a retrieval set into a posterior over
//! components and pick the smallest prefix whose mass exceeds gamma.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{Dataset, ImageRecord};
use crate::error::{Error, Result};
use crate::forest::RetrievalSet;

/// A categorical distribution over component ids `0..C-1`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComponentDistribution {
    pub probs: Vec<f64>,
}

impl ComponentDistribution {
    pub fn num_components(&self) -> usize {
        self.probs.len()
    }

    /// Entries must be nonnegative and sum to 1 within 1e-9.
    pub fn validate(&self) -> Result<()> {
        if self.probs.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
            return Err(Error::InvalidConfig(alloc::string::String::from(
                "component probabilities must be finite and nonnegative",
            )));
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(alloc::format!(
                "component probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Per-image component frequencies: `probs[c] = #boxes labelled c / #boxes`.
/// Returns `None` for images without boxes, which carry no component
/// evidence.
pub fn image_component_distribution(
    img: &ImageRecord,
    num_components: usize,
) -> Result<Option<ComponentDistribution>> {
    if img.boxes.is_empty() {
        return Ok(None);
    }
    let mut counts = vec![0usize; num_components];
    for b in &img.boxes {
        let Some(id) = b.component_id else {
            return Err(Error::MissingComponentId { image_id: img.id });
        };
        if id as usize >= num_components {
            return Err(Error::UnknownComponent {
                id,
                num_components: num_components as u32,
            });
        }
        counts[id as usize] += 1;
    }
    let total = img.boxes.len() as f64;
    Ok(Some(ComponentDistribution {
        probs: counts.iter().map(|&c| c as f64 / total).collect(),
    }))
}

/// Posterior over components for a probe image: the unweighted mean of the
/// retrieval-set members' distributions. Boxless members are skipped and
/// the mean renormalizes over the rest; an all-boxless retrieval set is an
/// error the caller must decide on (the usual fallback is running every
/// component).
pub fn posterior(
    retr: &RetrievalSet,
    train: &Dataset,
    num_components: usize,
) -> Result<ComponentDistribution> {
    if retr.is_empty() {
        return Err(Error::EmptyRetrievalSet);
    }
    let mut sums = vec![0.0f64; num_components];
    let mut counted = 0usize;
    for entry in &retr.entries {
        let img = train
            .image_by_id(entry.image_id)
            .ok_or(Error::ImageNotFound(entry.image_id))?;
        if let Some(dist) = image_component_distribution(img, num_components)? {
            for (s, p) in sums.iter_mut().zip(dist.probs.iter()) {
                *s += p;
            }
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::NoLabeledBoxes);
    }
    for s in &mut sums {
        *s /= counted as f64;
    }
    Ok(ComponentDistribution { probs: sums })
}

/// Outcome of the greedy mass-threshold selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Selected component ids in pick order (descending probability, ties
    /// toward the lower id).
    pub selected: Vec<u32>,
    /// Posterior mass covered when the selection stopped.
    pub cumulative_mass: f64,
    /// The posterior the selection was made from.
    pub posterior: ComponentDistribution,
}

/// Rank components by posterior probability and pick them until the
/// accumulated mass strictly exceeds `gamma`. `gamma = 0` selects exactly
/// the top component; `gamma = 1` selects every positive-mass component.
/// Zero-mass components are never selected, so even `gamma = 1` is not
/// guaranteed to reproduce the full model.
pub fn select_components(
    post: &ComponentDistribution,
    gamma: f64,
) -> Result<SelectionResult> {
    if !(gamma.is_finite() && (0.0..=1.0).contains(&gamma)) {
        return Err(Error::InvalidGamma(gamma));
    }
    let mut order: Vec<u32> = (0..post.probs.len() as u32).collect();
    order.sort_by(|&a, &b| {
        post.probs[b as usize]
            .total_cmp(&post.probs[a as usize])
            .then(a.cmp(&b))
    });
    let mut selected = Vec::new();
    let mut cumulative_mass = 0.0;
    for c in order {
        let p = post.probs[c as usize];
        if p <= 0.0 {
            break;
        }
        selected.push(c);
        cumulative_mass += p;
        // At gamma = 1 accumulated rounding could stop one component
        // early, so the greedy cut applies only below 1.
        if gamma < 1.0 && cumulative_mass > gamma {
            break;
        }
    }
    Ok(SelectionResult {
        selected,
        cumulative_mass,
        posterior: post.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, ObjectBox, SynthConfig};
    use crate::forest::RetrievalEntry;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn labelled_image(id: u64, components: &[u32]) -> ImageRecord {
        ImageRecord {
            id,
            global_features: vec![0.0; 4],
            boxes: components
                .iter()
                .map(|&c| ObjectBox {
                    cx: 0.5,
                    cy: 0.5,
                    w: 0.2,
                    h: 0.2,
                    appearance: vec![0.0; 2],
                    component_id: Some(c),
                })
                .collect(),
        }
    }

    fn toy_train(images: Vec<ImageRecord>) -> Dataset {
        Dataset {
            images,
            d_glob: 4,
            d_app: 2,
        }
    }

    fn retrieval(ids: &[u64]) -> RetrievalSet {
        RetrievalSet {
            entries: ids
                .iter()
                .map(|&image_id| RetrievalEntry {
                    image_id,
                    votes: 1,
                })
                .collect(),
        }
    }

    #[test]
    fn image_distribution_counts_boxes() {
        let img = labelled_image(0, &[2, 2, 5]);
        let dist = image_component_distribution(&img, 8).unwrap().unwrap();
        assert_relative_eq!(dist.probs[2], 2.0 / 3.0);
        assert_relative_eq!(dist.probs[5], 1.0 / 3.0);
        assert_eq!(dist.probs.iter().filter(|&&p| p > 0.0).count(), 2);
        dist.validate().unwrap();
    }

    #[test]
    fn single_box_is_one_hot_and_boxless_is_empty() {
        let img = labelled_image(0, &[3]);
        let dist = image_component_distribution(&img, 4).unwrap().unwrap();
        assert_eq!(dist.probs, vec![0.0, 0.0, 0.0, 1.0]);
        let negative = labelled_image(1, &[]);
        assert!(image_component_distribution(&negative, 4).unwrap().is_none());
    }

    #[test]
    fn unlabelled_box_is_an_error() {
        let mut img = labelled_image(0, &[1]);
        img.boxes[0].component_id = None;
        assert!(matches!(
            image_component_distribution(&img, 4),
            Err(Error::MissingComponentId { image_id: 0 })
        ));
    }

    #[test]
    fn posterior_averages_member_distributions() {
        let train = toy_train(vec![labelled_image(0, &[0]), labelled_image(1, &[1])]);
        let post = posterior(&retrieval(&[0, 1]), &train, 3).unwrap();
        assert_relative_eq!(post.probs[0], 0.5);
        assert_relative_eq!(post.probs[1], 0.5);
        assert_eq!(post.probs[2], 0.0);

        let single = posterior(&retrieval(&[0]), &train, 3).unwrap();
        assert_eq!(single.probs[0], 1.0);
    }

    #[test]
    fn posterior_skips_boxless_members_and_renormalizes() {
        let train = toy_train(vec![
            labelled_image(0, &[0, 1]),
            labelled_image(1, &[]),
            labelled_image(2, &[1]),
        ]);
        let post = posterior(&retrieval(&[0, 1, 2]), &train, 2).unwrap();
        assert_relative_eq!(post.probs[0], 0.25);
        assert_relative_eq!(post.probs[1], 0.75);
        post.validate().unwrap();

        assert!(matches!(
            posterior(&retrieval(&[1]), &train, 2),
            Err(Error::NoLabeledBoxes)
        ));
    }

    #[test]
    fn posterior_matches_hand_loop_on_synthetic_members() {
        let ds = synth_generate(&SynthConfig {
            num_scene_types: 2,
            num_components: 6,
            images_per_scene: 10,
            boxes_per_image: (1, 4),
            d_glob: 4,
            d_app: 3,
            noise_global: 0.2,
            noise_app: 0.1,
            noise_pos: 0.1,
            seed: 8,
        })
        .unwrap();
        let ids: Vec<u64> = ds.images.iter().take(10).map(|i| i.id).collect();
        let post = posterior(&retrieval(&ids), &ds, 6).unwrap();
        let mut expected = vec![0.0f64; 6];
        for &id in &ids {
            let img = ds.image_by_id(id).unwrap();
            for b in &img.boxes {
                expected[b.component_id.unwrap() as usize] += 1.0 / img.boxes.len() as f64;
            }
        }
        for e in &mut expected {
            *e /= ids.len() as f64;
        }
        for (got, want) in post.probs.iter().zip(expected.iter()) {
            assert_relative_eq!(got, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn greedy_selection_hand_trace() {
        let post = ComponentDistribution {
            probs: vec![0.5, 0.3, 0.2],
        };
        let result = select_components(&post, 0.7).unwrap();
        assert_eq!(result.selected, vec![0, 1]);
        assert_relative_eq!(result.cumulative_mass, 0.8);
    }

    #[test]
    fn gamma_zero_selects_top_one() {
        let post = ComponentDistribution {
            probs: vec![0.2, 0.5, 0.3],
        };
        let result = select_components(&post, 0.0).unwrap();
        assert_eq!(result.selected, vec![1]);
    }

    #[test]
    fn one_hot_posterior_selects_single_component() {
        let post = ComponentDistribution {
            probs: vec![0.0, 0.0, 1.0, 0.0],
        };
        for gamma in [0.0, 0.3, 0.9] {
            let result = select_components(&post, gamma).unwrap();
            assert_eq!(result.selected, vec![2]);
        }
    }

    #[test]
    fn gamma_one_selects_all_positive_mass() {
        let post = ComponentDistribution {
            probs: vec![0.4, 0.0, 0.35, 0.25],
        };
        let result = select_components(&post, 1.0).unwrap();
        assert_eq!(result.selected, vec![0, 2, 3]);
        assert_relative_eq!(result.cumulative_mass, 1.0);
    }

    #[test]
    fn ties_break_toward_lower_component_id() {
        let post = ComponentDistribution {
            probs: vec![0.25, 0.25, 0.25, 0.25],
        };
        let result = select_components(&post, 0.5).unwrap();
        assert_eq!(result.selected, vec![0, 1, 2]);
    }

    #[test]
    fn invalid_gamma_is_rejected() {
        let post = ComponentDistribution { probs: vec![1.0] };
        assert!(matches!(
            select_components(&post, 1.5),
            Err(Error::InvalidGamma(_))
        ));
        assert!(matches!(
            select_components(&post, f64::NAN),
            Err(Error::InvalidGamma(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn selection_is_monotone_in_gamma(
            raw in proptest::collection::vec(0.0f64..1.0, 1..12),
            g1 in 0.0f64..=1.0,
            g2 in 0.0f64..=1.0,
        ) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 0.0);
            let post = ComponentDistribution {
                probs: raw.iter().map(|p| p / total).collect(),
            };
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            let a = select_components(&post, lo).unwrap();
            let b = select_components(&post, hi).unwrap();
            prop_assert!(a.selected.len() <= b.selected.len());
            prop_assert_eq!(&b.selected[..a.selected.len()], &a.selected[..]);
            let positive = post.probs.iter().filter(|&&p| p > 0.0).count();
            prop_assert!(b.selected.len() <= positive);
        }
    }
}
