//! Checkpoint directory: `net.json` plus `params/<name>.m2mt` per weight.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MiniFusionNet, NetConfig};
use crate::error::{config_err, Result};

pub const DESCRIPTOR_FILE: &str = "net.json";
pub const PARAMS_DIR: &str = "params";
pub const NET_KIND: &str = "net";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetDescriptor {
    pub kind: String,
    pub config: NetConfig,
    pub params: Vec<ParamEntry>,
}

impl MiniFusionNet {
    pub fn descriptor(&self) -> NetDescriptor {
        NetDescriptor {
            kind: NET_KIND.to_string(),
            config: self.config.clone(),
            params: self
                .store
                .iter()
                .map(|p| ParamEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.store.save_dir(dir.join(PARAMS_DIR))?;
        fs::write(dir.join(DESCRIPTOR_FILE), serde_json::to_string_pretty(&self.descriptor())?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let desc: NetDescriptor = serde_json::from_slice(&fs::read(dir.join(DESCRIPTOR_FILE))?)?;
        if desc.kind != NET_KIND {
            return config_err(format!("checkpoint kind {:?} is not a network", desc.kind));
        }
        let mut net = MiniFusionNet::build(desc.config.clone(), 0)?;
        if net.descriptor().params != desc.params {
            return config_err("checkpoint parameter list does not match its configuration");
        }
        net.store.load_dir(dir.join(PARAMS_DIR))?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{M2mrfHyper, Variant};

    #[test]
    fn round_trip() {
        let cfg = NetConfig {
            stem_channels: 4,
            m2mrf: M2mrfHyper {
                patch_h: 4,
                patch_w: 4,
                reduction: 2,
                alpha: 2,
            },
            ..Variant::B.net_config()
        };
        let net = MiniFusionNet::build(cfg, 9).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        net.save(tmp.path()).unwrap();
        let back = MiniFusionNet::load(tmp.path()).unwrap();
        assert_eq!(back.store(), net.store());
        assert_eq!(back.config(), net.config());
    }
}
