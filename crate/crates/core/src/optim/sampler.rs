use rand::seq::index;
use rand::Rng;

/// Draws class-balanced batches: `C` classes uniformly without replacement,
/// then `batch_size / C` samples of each, also without replacement. Classes
/// with fewer samples contribute all of them.
#[derive(Clone, Debug)]
pub struct ClassBalancedSampler {
    by_class: Vec<Vec<usize>>,
    classes_per_batch: usize,
    per_class: usize,
}

impl ClassBalancedSampler {
    pub fn new(labels: &[usize], num_classes: usize, batch_size: usize, classes_per_batch: usize) -> Self {
        let mut by_class = vec![Vec::new(); num_classes];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l].push(i);
        }
        let classes_per_batch = classes_per_batch.clamp(1, num_classes.max(1));
        Self {
            by_class,
            classes_per_batch,
            per_class: (batch_size / classes_per_batch).max(1),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        let populated: Vec<usize> = (0..self.by_class.len())
            .filter(|&c| !self.by_class[c].is_empty())
            .collect();
        let take = self.classes_per_batch.min(populated.len());
        let mut classes: Vec<usize> = index::sample(rng, populated.len(), take)
            .into_iter()
            .map(|i| populated[i])
            .collect();
        classes.sort_unstable();
        let mut batch = Vec::with_capacity(take * self.per_class);
        for c in classes {
            let members = &self.by_class[c];
            let k = self.per_class.min(members.len());
            let mut picked: Vec<usize> = index::sample(rng, members.len(), k)
                .into_iter()
                .map(|i| members[i])
                .collect();
            picked.sort_unstable();
            batch.extend(picked);
        }
        batch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedTree;

    #[test]
    fn batches_are_balanced_and_distinct() {
        let labels: Vec<usize> = (0..100).map(|i| i % 5).collect();
        let sampler = ClassBalancedSampler::new(&labels, 5, 12, 3);
        let mut rng = SeedTree::new(0).stream("b", 0);
        for _ in 0..50 {
            let batch = sampler.sample(&mut rng);
            assert_eq!(batch.len(), 12);
            let mut counts = [0; 5];
            for &i in &batch {
                counts[labels[i]] += 1;
            }
            assert_eq!(counts.iter().filter(|c| **c == 4).count(), 3);
            let mut sorted = batch.clone();
            sorted.dedup();
            assert_eq!(sorted.len(), 12);
        }
    }

    #[test]
    fn small_classes_give_everything() {
        let labels = vec![0, 0, 1];
        let sampler = ClassBalancedSampler::new(&labels, 3, 10, 5);
        let mut rng = SeedTree::new(0).stream("b", 0);
        assert_eq!(sampler.sample(&mut rng), vec![0, 1, 2]);
    }
}
