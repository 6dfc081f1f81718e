use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::NetSpec;
use super::optim::AdamState;
use super::params::ParamVector;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// One network inside a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub spec: NetSpec,
    pub params: BTreeMap<String, Vec<f64>>,
    pub optimizer: Option<AdamState>,
}

impl NetRecord {
    pub fn new(spec: NetSpec, params: &ParamVector, optimizer: Option<AdamState>) -> Self {
        Self {
            spec,
            params: params.unpack(),
            optimizer,
        }
    }
}

/// JSON checkpoint: named networks, optimizer moments, RNG state and
/// free-form metadata. Floats round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub nets: BTreeMap<String, NetRecord>,
    pub rng: Option<ChaCha8Rng>,
    pub meta: BTreeMap<String, String>,
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            nets: BTreeMap::new(),
            rng: None,
            meta: BTreeMap::new(),
        }
    }
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                reason: format!("checkpoint version {} (expected {CHECKPOINT_VERSION})", ck.version),
            });
        }
        Ok(ck)
    }

    pub fn net(&self, name: &str) -> Result<&NetRecord> {
        self.nets
            .get(name)
            .ok_or_else(|| Error::Mismatch(format!("checkpoint has no network `{name}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Network};
    use rand::{RngCore, SeedableRng};

    #[test]
    fn save_load_is_exact() {
        let spec = NetSpec {
            input: 3,
            hidden: vec![4],
            activation: Activation::Tanh,
            gru: Some(2),
            outputs: 2,
            output_gain: 0.01,
        };
        let net = Network::new(spec.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = net.init_params(&mut rng);
        let mut ck = Checkpoint::default();
        ck.nets.insert("policy".into(), NetRecord::new(spec, &p, None));
        rng.next_u64();
        ck.rng = Some(rng.clone());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let q = ParamVector::pack(net.layout().to_vec(), &back.net("policy").unwrap().params).unwrap();
        assert_eq!(q.digest(), p.digest());
        assert_eq!(back.rng.unwrap().next_u64(), rng.next_u64());
    }
}
