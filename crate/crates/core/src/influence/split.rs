//! Held-out-anchor validation splits.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::profiles::{FloatProfile, ProfileSet};
use crate::rng::{Domain, StreamKey};

/// Default number of held-out anchors.
pub const DEFAULT_HOLDOUT: usize = 20;

/// A validation split: `k` anchors re-labeled as floats, appended after
/// the original floats so their truth locations stay addressable.
#[derive(Debug, Clone)]
pub struct ValidationSplit {
    /// The transformed profile set (anchors minus K, floats plus K).
    pub data: ProfileSet,
    /// Ids of the held-out anchors, in their float-set order.
    pub held_out_ids: Vec<String>,
    /// True locations of held-out anchors, same order.
    pub true_locations: Vec<(f64, f64)>,
    /// Float indices (into `data.floats`) of the held-out anchors.
    pub held_out_float_indices: Vec<usize>,
}

/// Uniformly sample `k` anchors without replacement and re-label them as
/// floats. Deterministic per seed.
pub fn make_validation_split(data: &ProfileSet, k: usize, seed: u64) -> Result<ValidationSplit> {
    let n = data.n_anchors();
    if k == 0 {
        return Err(Error::invalid("hold out at least one anchor"));
    }
    if k >= n {
        return Err(Error::invalid(format!(
            "cannot hold out {k} of {n} anchors; at least one must remain"
        )));
    }
    let mut rng = StreamKey::new(seed, Domain::Split, 0).rng();
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let mut held: Vec<usize> = indices[..k].to_vec();
    held.sort_unstable();

    let mut anchors = Vec::with_capacity(n - k);
    let mut new_floats = Vec::with_capacity(k);
    let mut held_out_ids = Vec::with_capacity(k);
    let mut true_locations = Vec::with_capacity(k);
    for (i, a) in data.anchors.iter().enumerate() {
        if held.binary_search(&i).is_ok() {
            held_out_ids.push(a.id.clone());
            true_locations.push((a.x, a.y));
            new_floats.push(FloatProfile {
                id: a.id.clone(),
                indicators: a.indicators.clone(),
            });
        } else {
            anchors.push(a.clone());
        }
    }
    let mut floats = data.floats.clone();
    let first_new = floats.len();
    floats.extend(new_floats);
    let held_out_float_indices = (first_new..first_new + k).collect();
    Ok(ValidationSplit {
        data: ProfileSet {
            region: data.region,
            anchors,
            floats,
        },
        held_out_ids,
        true_locations,
        held_out_float_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::profiles::{AnchorProfile, Region};

    fn data(n: usize, m: usize) -> ProfileSet {
        ProfileSet {
            region: Region::default(),
            anchors: (0..n)
                .map(|i| AnchorProfile {
                    id: format!("a{i}"),
                    x: 0.1 + 0.01 * i as f64,
                    y: 0.2,
                    indicators: vec![0, 1],
                })
                .collect(),
            floats: (0..m)
                .map(|i| FloatProfile {
                    id: format!("f{i}"),
                    indicators: vec![1, 0],
                })
                .collect(),
        }
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let d = data(30, 5);
        let s1 = make_validation_split(&d, 10, 7).unwrap();
        let s2 = make_validation_split(&d, 10, 7).unwrap();
        assert_eq!(s1.held_out_ids, s2.held_out_ids);
        assert_eq!(s1.data.n_anchors(), 20);
        assert_eq!(s1.data.n_floats(), 15);
        // no id in both groups
        for a in &s1.data.anchors {
            assert!(!s1.held_out_ids.contains(&a.id));
        }
        // held-out floats carry the anchor indicators
        for (k, &fi) in s1.held_out_float_indices.iter().enumerate() {
            assert_eq!(s1.data.floats[fi].id, s1.held_out_ids[k]);
        }
        // different seeds give different splits (with 30 choose 10 room)
        let s3 = make_validation_split(&d, 10, 8).unwrap();
        assert_ne!(s1.held_out_ids, s3.held_out_ids);
    }

    #[test]
    fn boundary_cases() {
        let d = data(5, 0);
        let s = make_validation_split(&d, 4, 1).unwrap();
        assert_eq!(s.data.n_anchors(), 1);
        assert!(make_validation_split(&d, 5, 1).is_err());
        assert!(make_validation_split(&d, 0, 1).is_err());
    }
}
