use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::Exp1;

use super::PpoConfig;
use crate::error::Result;
use crate::nn::{Adam, Checkpoint, NetRecord, ParamVector, PolicyNet, RecurrentState, ValueNet};

/// One trainable agent: policy, multi-head critic and their optimizers.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub policy: PolicyNet,
    pub value: ValueNet,
    pub pi: ParamVector,
    pub v: ParamVector,
    pub pi_opt: Adam,
    pub v_opt: Adam,
}

impl ActorCritic {
    pub fn new(
        obs_dim: usize,
        n_actions: usize,
        value_dim: usize,
        heads: usize,
        cfg: &PpoConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let policy = PolicyNet::new(obs_dim, n_actions, &cfg.hidden, cfg.activation, cfg.recurrent);
        let value = ValueNet::new(value_dim, heads, &cfg.hidden, cfg.activation);
        let mut pi = policy.net.init_params(rng);
        let v = value.net.init_params(rng);
        if cfg.random_initial_policy {
            // Uniform point on the simplex via normalized exponentials.
            let e: Vec<f64> = (0..n_actions).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let total: f64 = e.iter().sum();
            for (b, x) in pi.data[policy.net.output_bias_range()].iter_mut().zip(&e) {
                *b = (x / total).max(1e-12).ln();
            }
        }
        let pi_opt = Adam::new(pi.len(), cfg.adam_epsilon);
        let v_opt = Adam::new(v.len(), cfg.adam_epsilon);
        Self {
            policy,
            value,
            pi,
            v,
            pi_opt,
            v_opt,
        }
    }

    pub fn initial_state(&self) -> RecurrentState {
        self.policy.initial_state()
    }

    /// Sample an action; returns it with its log-probability and the next state.
    pub fn act(&self, obs: &[f64], state: &RecurrentState, rng: &mut impl Rng) -> Result<(usize, f64, RecurrentState)> {
        let (dist, next) = self.policy.forward_policy(&self.pi.data, obs, state)?;
        let a = dist.sample(rng);
        Ok((a, dist.log_prob(a), next))
    }

    pub fn value_of(&self, value_input: &[f64], head: usize) -> Result<f64> {
        self.value.forward_value(&self.v.data, value_input, head)
    }

    pub fn policy_digest(&self) -> String {
        self.pi.digest()
    }

    pub fn value_digest(&self) -> String {
        self.v.digest()
    }

    pub fn to_checkpoint(&self, meta: BTreeMap<String, String>) -> Checkpoint {
        let mut ck = Checkpoint {
            meta,
            ..Checkpoint::default()
        };
        ck.nets.insert(
            "policy".into(),
            NetRecord::new(
                self.policy.net.spec().clone(),
                &self.pi,
                Some(self.pi_opt.state.clone()),
            ),
        );
        ck.nets.insert(
            "value".into(),
            NetRecord::new(self.value.net.spec().clone(), &self.v, Some(self.v_opt.state.clone())),
        );
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, adam_epsilon: f64) -> Result<Self> {
        let p = ck.net("policy")?;
        let v = ck.net("value")?;
        let policy = PolicyNet::from_spec(p.spec.clone());
        let value = ValueNet::from_spec(v.spec.clone());
        let pi = ParamVector::pack(policy.net.layout().to_vec(), &p.params)?;
        let vp = ParamVector::pack(value.net.layout().to_vec(), &v.params)?;
        let mut pi_opt = Adam::new(pi.len(), adam_epsilon);
        let mut v_opt = Adam::new(vp.len(), adam_epsilon);
        if let Some(s) = &p.optimizer {
            pi_opt.state = s.clone();
        }
        if let Some(s) = &v.optimizer {
            v_opt.state = s.clone();
        }
        Ok(Self {
            policy,
            value,
            pi,
            v: vp,
            pi_opt,
            v_opt,
        })
    }
}

/// Critic input: the agent's own observation, then the other agents' in
/// index order, then an optional one-hot identity tag.
pub fn value_input(observations: &[Vec<f64>], agent: usize, tag: Option<(usize, usize)>) -> Vec<f64> {
    let mut x = observations[agent].clone();
    for (j, o) in observations.iter().enumerate() {
        if j != agent {
            x.extend_from_slice(o);
        }
    }
    if let Some((k, n)) = tag {
        x.extend((0..n).map(|i| f64::from(u8::from(i == k))));
    }
    x
}
