//! Per-update metrics CSV.
//!
//! Columns, in order:
//! `update_index, env_steps, mean_episode_return_agent{i}` for each agent,
//! one column per event counter (mean per finished episode),
//! `policy_loss, value_loss, entropy, lr, aggregate_env_steps, schema_version`.
//!
//! `env_steps` counts this run's joint steps; `aggregate_env_steps` adds the
//! steps already spent by earlier phases or sibling population members.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::trainer::UpdateReport;
use crate::error::Result;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub update_index: u64,
    pub env_steps: u64,
    pub mean_returns: Vec<f64>,
    pub mean_events: Vec<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub lr: f64,
    pub aggregate_env_steps: u64,
}

impl MetricsRow {
    pub fn from_report(r: &UpdateReport, n_agents: usize, n_events: usize, step_offset: u64) -> Self {
        let n = r.episodes.len() as f64;
        let mean = |f: &dyn Fn(&crate::stats::EpisodeStats) -> f64| {
            if r.episodes.is_empty() {
                f64::NAN
            } else {
                r.episodes.iter().map(f).sum::<f64>() / n
            }
        };
        let l = r.losses.len().max(1) as f64;
        Self {
            update_index: r.update_index,
            env_steps: r.env_steps,
            mean_returns: (0..n_agents).map(|i| mean(&|e| e.returns[i])).collect(),
            mean_events: (0..n_events).map(|k| mean(&|e| e.events[k])).collect(),
            policy_loss: r.losses.iter().map(|s| s.policy_loss).sum::<f64>() / l,
            value_loss: r.losses.iter().map(|s| s.value_loss).sum::<f64>() / l,
            entropy: r.losses.iter().map(|s| s.entropy).sum::<f64>() / l,
            lr: r.lr,
            aggregate_env_steps: step_offset + r.env_steps,
        }
    }
}

pub struct MetricsWriter {
    out: BufWriter<File>,
    columns: usize,
}

impl MetricsWriter {
    pub fn header(n_agents: usize, event_names: &[String]) -> Vec<String> {
        let mut h = vec!["update_index".to_string(), "env_steps".to_string()];
        h.extend((0..n_agents).map(|i| format!("mean_episode_return_agent{i}")));
        h.extend(event_names.iter().cloned());
        h.extend(
            [
                "policy_loss",
                "value_loss",
                "entropy",
                "lr",
                "aggregate_env_steps",
                "schema_version",
            ]
            .map(String::from),
        );
        h
    }

    pub fn create(path: &Path, n_agents: usize, event_names: &[String]) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let header = Self::header(n_agents, event_names);
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", header.join(","))?;
        Ok(Self {
            out,
            columns: header.len(),
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        let mut cells = vec![row.update_index.to_string(), row.env_steps.to_string()];
        cells.extend(row.mean_returns.iter().map(f64::to_string));
        cells.extend(row.mean_events.iter().map(f64::to_string));
        cells.extend([row.policy_loss, row.value_loss, row.entropy, row.lr].map(|x| x.to_string()));
        cells.push(row.aggregate_env_steps.to_string());
        cells.push(METRICS_SCHEMA_VERSION.to_string());
        debug_assert_eq!(cells.len(), self.columns);
        writeln!(self.out, "{}", cells.join(","))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_row_widths_agree() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let names = vec!["coop_hunt".to_string(), "apple".to_string()];
        let mut w = MetricsWriter::create(&path, 2, &names).unwrap();
        w.write(&MetricsRow {
            update_index: 1,
            env_steps: 100,
            mean_returns: vec![1.5, 2.0],
            mean_events: vec![0.0, 3.0],
            policy_loss: 0.1,
            value_loss: 0.2,
            entropy: 1.3,
            lr: 1e-3,
            aggregate_env_steps: 300,
        })
        .unwrap();
        w.flush().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "update_index,env_steps,mean_episode_return_agent0,mean_episode_return_agent1,coop_hunt,apple,policy_loss,value_loss,entropy,lr,aggregate_env_steps,schema_version"
        );
        assert_eq!(lines[1], "1,100,1.5,2,0,3,0.1,0.2,1.3,0.001,300,1");
    }
}
