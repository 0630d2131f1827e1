use std::collections::BTreeMap;

use super::Video;

/// Instance threshold below which a triplet category counts as rare.
pub const RARE_THRESHOLD: usize = 25;

/// Label counts of a split.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStatistics {
    /// Occurrences of each predicate over all labelled pairs and frames.
    pub predicate_counts: Vec<usize>,
    /// Occurrences of each `(object class, predicate)` category.
    pub triplet_counts: BTreeMap<(usize, usize), usize>,
}

impl ClassStatistics {
    pub fn rare(&self, threshold: usize) -> Vec<(usize, usize)> {
        self.triplet_counts
            .iter()
            .filter(|(_, &n)| n < threshold)
            .map(|(k, _)| *k)
            .collect()
    }

    pub fn nonrare(&self, threshold: usize) -> Vec<(usize, usize)> {
        self.triplet_counts
            .iter()
            .filter(|(_, &n)| n >= threshold)
            .map(|(k, _)| *k)
            .collect()
    }
}

pub fn class_statistics(videos: &[Video], n_predicates: usize) -> ClassStatistics {
    let mut predicate_counts = vec![0; n_predicates];
    let mut triplet_counts = BTreeMap::new();
    for v in videos {
        for f in v.frames() {
            for l in &f.hoi_labels {
                let class = v.class_of(l.object);
                for &p in &l.predicates {
                    predicate_counts[p] += 1;
                    *triplet_counts.entry((class, p)).or_insert(0) += 1;
                }
            }
        }
    }
    ClassStatistics {
        predicate_counts,
        triplet_counts,
    }
}
