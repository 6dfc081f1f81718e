//! Small fixed-architecture networks with hand-written reverse mode.
//!
//! Parameters live in flat [`ParamVector`]s; a [`Network`] only describes how
//! to read them. Forward passes over sequences return a [`Trace`] which
//! [`Network::backward_seq`] consumes.

mod checkpoint;
mod network;
mod optim;
mod params;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, NetRecord, CHECKPOINT_VERSION};
pub use network::{Activation, NetSpec, Network, Trace};
pub use optim::{Adam, AdamState};
pub use params::{digest_f64, LayoutBuilder, ParamSlice, ParamVector};

pub const HIDDEN_UNITS: usize = 64;

/// Recurrent state carried between policy steps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RecurrentState {
    pub hidden: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(n: usize) -> Self {
        Self { hidden: vec![0.0; n] }
    }

    pub fn reset(&mut self) {
        self.hidden.iter_mut().for_each(|h| *h = 0.0);
    }

    fn as_option(&self) -> Option<&[f64]> {
        (!self.hidden.is_empty()).then_some(self.hidden.as_slice())
    }
}

/// Categorical distribution held as log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    log_probs: Vec<f64>,
}

impl Categorical {
    pub fn from_logits(logits: &[f64]) -> Self {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        Self {
            log_probs: logits.iter().map(|l| l - lse).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.log_probs.len()
    }

    pub fn log_prob(&self, a: usize) -> f64 {
        self.log_probs[a]
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn entropy(&self) -> f64 {
        -self.log_probs.iter().map(|l| l.exp() * l).sum::<f64>()
    }

    /// Inverse-CDF sampling from one uniform draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, l) in self.log_probs.iter().enumerate() {
            acc += l.exp();
            if u < acc {
                return i;
            }
        }
        self.log_probs.len() - 1
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &l) in self.log_probs.iter().enumerate() {
            if l > self.log_probs[best] {
                best = i;
            }
        }
        best
    }

    /// ∂ log p(a) / ∂ logits.
    pub fn grad_log_prob(&self, a: usize) -> Vec<f64> {
        self.log_probs
            .iter()
            .enumerate()
            .map(|(i, l)| f64::from(u8::from(i == a)) - l.exp())
            .collect()
    }

    /// ∂ H / ∂ logits.
    pub fn grad_entropy(&self) -> Vec<f64> {
        let h = self.entropy();
        self.log_probs.iter().map(|l| -l.exp() * (l + h)).collect()
    }
}

/// Categorical policy: MLP torso, optional GRU, logits head.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub net: Network,
}

impl PolicyNet {
    pub fn new(obs_dim: usize, n_actions: usize, hidden: &[usize], activation: Activation, gru: Option<usize>) -> Self {
        Self {
            net: Network::new(NetSpec {
                input: obs_dim,
                hidden: hidden.to_vec(),
                activation,
                gru,
                outputs: n_actions,
                output_gain: 0.01,
            }),
        }
    }

    pub fn from_spec(spec: NetSpec) -> Self {
        Self {
            net: Network::new(spec),
        }
    }

    pub fn initial_state(&self) -> RecurrentState {
        RecurrentState::zeros(self.net.hidden_size())
    }

    pub fn forward_policy(
        &self,
        params: &[f64],
        obs: &[f64],
        state: &RecurrentState,
    ) -> Result<(Categorical, RecurrentState)> {
        let (logits, h) = self.net.forward(params, obs, state.as_option())?;
        Ok((
            Categorical::from_logits(&logits),
            RecurrentState {
                hidden: h.unwrap_or_default(),
            },
        ))
    }
}

/// Value function with one scalar output per head.
#[derive(Debug, Clone)]
pub struct ValueNet {
    pub net: Network,
}

impl ValueNet {
    pub fn new(input_dim: usize, heads: usize, hidden: &[usize], activation: Activation) -> Self {
        Self {
            net: Network::new(NetSpec {
                input: input_dim,
                hidden: hidden.to_vec(),
                activation,
                gru: None,
                outputs: heads,
                output_gain: 1.0,
            }),
        }
    }

    pub fn from_spec(spec: NetSpec) -> Self {
        Self {
            net: Network::new(spec),
        }
    }

    pub fn heads(&self) -> usize {
        self.net.spec().outputs
    }

    pub fn check_head(&self, head: usize) -> Result<()> {
        if head >= self.heads() {
            return Err(Error::InvalidHead {
                head,
                heads: self.heads(),
            });
        }
        Ok(())
    }

    pub fn forward_value(&self, params: &[f64], joint_obs: &[f64], head: usize) -> Result<f64> {
        self.check_head(head)?;
        let (out, _) = self.net.forward(params, joint_obs, None)?;
        Ok(out[head])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_uniform_policy() {
        let pi = PolicyNet::new(4, 5, &[8, 8], Activation::Tanh, Some(6));
        let p = pi.net.zero_params();
        let (dist, _) = pi
            .forward_policy(&p.data, &[1.0, -2.0, 3.0, 0.5], &pi.initial_state())
            .unwrap();
        for q in dist.probs() {
            assert!((q - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_weights_give_zero_value() {
        let v = ValueNet::new(3, 2, &[8], Activation::Tanh);
        let p = v.net.zero_params();
        assert_eq!(v.forward_value(&p.data, &[1.0, 2.0, 3.0], 1).unwrap(), 0.0);
        assert!(matches!(
            v.forward_value(&p.data, &[1.0, 2.0, 3.0], 2),
            Err(Error::InvalidHead { head: 2, heads: 2 })
        ));
    }

    #[test]
    fn heads_are_isolated() {
        let v = ValueNet::new(3, 3, &[8, 8], Activation::Tanh);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = v.net.init_params(&mut rng);
        let x = [0.3, -0.1, 0.7];
        let before: Vec<f64> = (0..3).map(|k| v.forward_value(&p.data, &x, k).unwrap()).collect();
        let (row, bias) = v.net.output_row(1);
        for i in row {
            p.data[i] += 0.5;
        }
        p.data[bias] -= 1.0;
        for k in [0, 2] {
            assert_eq!(v.forward_value(&p.data, &x, k).unwrap(), before[k]);
        }
        assert_ne!(v.forward_value(&p.data, &x, 1).unwrap(), before[1]);
    }

    #[test]
    fn policy_is_deterministic() {
        let pi = PolicyNet::new(2, 3, &[8], Activation::Relu, Some(4));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = pi.net.init_params(&mut rng);
        let s = RecurrentState {
            hidden: vec![0.1, -0.2, 0.3, 0.0],
        };
        let a = pi.forward_policy(&p.data, &[0.5, 0.5], &s).unwrap();
        let b = pi.forward_policy(&p.data, &[0.5, 0.5], &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn categorical_gradients_match_differences() {
        let logits = [0.3, -1.2, 0.8, 0.05];
        let d = Categorical::from_logits(&logits);
        let h = 1e-6;
        let ga = d.grad_log_prob(2);
        let ge = d.grad_entropy();
        for i in 0..4 {
            let mut up = logits;
            let mut dn = logits;
            up[i] += h;
            dn[i] -= h;
            let (u, l) = (Categorical::from_logits(&up), Categorical::from_logits(&dn));
            let fd_lp = (u.log_prob(2) - l.log_prob(2)) / (2.0 * h);
            let fd_h = (u.entropy() - l.entropy()) / (2.0 * h);
            assert!((fd_lp - ga[i]).abs() < 1e-8);
            assert!((fd_h - ge[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn sampling_follows_probabilities() {
        let d = Categorical::from_logits(&[0.0, (3.0f64).ln()]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ones = (0..20_000).filter(|_| d.sample(&mut rng) == 1).count();
        assert!((ones as f64 / 20_000.0 - 0.75).abs() < 0.015);
    }
}
