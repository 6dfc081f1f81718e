use std::collections::HashMap;

/// Visit counts over raw observation tuples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VisitCounter {
    alpha: f64,
    counts: HashMap<Vec<u64>, u64>,
}

impl VisitCounter {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            counts: HashMap::new(),
        }
    }

    /// Observations are already discrete, so their exact bit patterns form the key.
    fn key(obs: &[f64]) -> Vec<u64> {
        obs.iter().map(|x| x.to_bits()).collect()
    }

    pub fn count(&self, obs: &[f64]) -> u64 {
        self.counts.get(&Self::key(obs)).copied().unwrap_or(0)
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Record a visit and return `α / n_o` with the post-increment count.
    pub fn bonus(&mut self, obs: &[f64]) -> f64 {
        let n = self.counts.entry(Self::key(obs)).or_insert(0);
        *n += 1;
        self.alpha / *n as f64
    }
}
