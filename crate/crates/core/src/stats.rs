//! Per-episode counters over a fixed per-game vocabulary.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Returns and event counts of one finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    names: Arc<[String]>,
    pub returns: Vec<f64>,
    pub events: Vec<f64>,
    pub length: usize,
}

impl EpisodeStats {
    pub fn new(names: Arc<[String]>, n_agents: usize) -> Self {
        let events = vec![0.0; names.len()];
        Self {
            names,
            returns: vec![0.0; n_agents],
            events,
            length: 0,
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn index(names: &[String], name: &str) -> Result<usize> {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownEvent(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        Ok(self.events[Self::index(&self.names, name)?])
    }

    pub fn add(&mut self, name: &str, amount: f64) -> Result<()> {
        let i = Self::index(&self.names, name)?;
        self.events[i] += amount;
        Ok(())
    }

    /// Accumulate one step.
    pub fn record(&mut self, rewards: &[f64], events: &[f64]) {
        for (r, x) in self.returns.iter_mut().zip(rewards) {
            *r += x;
        }
        for (e, x) in self.events.iter_mut().zip(events) {
            *e += x;
        }
        self.length += 1;
    }
}

/// Mean and standard deviation over a set of episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub episodes: usize,
    pub event_names: Vec<String>,
    pub mean_returns: Vec<f64>,
    pub std_returns: Vec<f64>,
    pub mean_events: Vec<f64>,
    pub std_events: Vec<f64>,
    pub mean_length: f64,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

impl StatsSummary {
    pub fn from_episodes(names: &[String], n_agents: usize, eps: &[EpisodeStats]) -> Self {
        let (mean_returns, std_returns) = (0..n_agents)
            .map(|i| mean_std(eps.iter().map(move |e| e.returns[i])))
            .unzip();
        let (mean_events, std_events) = (0..names.len())
            .map(|k| mean_std(eps.iter().map(move |e| e.events[k])))
            .unzip();
        Self {
            episodes: eps.len(),
            event_names: names.to_vec(),
            mean_returns,
            std_returns,
            mean_events,
            std_events,
            mean_length: mean_std(eps.iter().map(|e| e.length as f64)).0,
        }
    }

    pub fn event(&self, name: &str) -> Result<f64> {
        Ok(self.mean_events[EpisodeStats::index(&self.event_names, name)?])
    }

    pub fn event_std(&self, name: &str) -> Result<f64> {
        Ok(self.std_events[EpisodeStats::index(&self.event_names, name)?])
    }
}
