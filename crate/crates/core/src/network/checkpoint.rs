//! Binary checkpoint: `NNCK`, u32 version, u32-length-prefixed JSON
//! metadata, then one record per parameter tensor:
//! `u32 layer, u8 role, u8 rank, u32 dims[rank], f32 payload`, all
//! little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Network, NetworkError, Result, ScaleConfig};
use crate::tensor::{LayerParams, ParamRole, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    scale: ScaleConfig,
    class_names: Vec<String>,
    mean_rgb: Vec<f32>,
    weighted_layers: usize,
    tensors: usize,
}

impl Network {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let meta = Metadata {
            scale: self.scale.clone(),
            class_names: self.class_names.clone(),
            mean_rgb: self.mean_rgb.clone(),
            weighted_layers: self.weighted_layers(),
            tensors: 2 * self.weighted_layers(),
        };
        let json = serde_json::to_vec(&meta).expect("metadata serializes");
        let mut out = Vec::with_capacity(4 * self.parameter_count() + json.len() + 64);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (i, p) in self.params.iter().enumerate() {
            for role in [ParamRole::Weight, ParamRole::Bias] {
                let t = p.get(role);
                out.extend_from_slice(&((i + 1) as u32).to_le_bytes());
                out.push(role.tag());
                out.push(t.rank() as u8);
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for &x in t.data() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Network> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(NetworkError::Format("bad magic, not a checkpoint".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(NetworkError::Version(version));
        }
        let len = r.u32()? as usize;
        let meta: Metadata = serde_json::from_slice(r.take(len)?)
            .map_err(|e| NetworkError::Format(format!("metadata: {e}")))?;
        meta.scale.validate()?;
        let kinds = meta.scale.layout(meta.class_names.len());
        if meta.weighted_layers != kinds.len() || meta.tensors != 2 * kinds.len() {
            return Err(NetworkError::Format(format!(
                "header claims {} layers / {} tensors, scale implies {}",
                meta.weighted_layers,
                meta.tensors,
                kinds.len()
            )));
        }
        let mut params = Vec::with_capacity(kinds.len());
        for (i, kind) in kinds.iter().enumerate() {
            let mut pair = [None, None];
            for (slot, role) in [ParamRole::Weight, ParamRole::Bias].into_iter().enumerate() {
                let layer = r.u32()? as usize;
                let tag = r.u8()?;
                if layer != i + 1 || ParamRole::from_tag(tag) != Some(role) {
                    return Err(NetworkError::Format(format!(
                        "expected layer {} role {role:?}, found layer {layer} tag {tag}",
                        i + 1
                    )));
                }
                let rank = r.u8()? as usize;
                let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                let expected = match role {
                    ParamRole::Weight => kind.weight_shape(),
                    ParamRole::Bias => vec![kind.bias_len()],
                };
                if dims != expected {
                    return Err(NetworkError::Format(format!(
                        "layer {} {role:?}: dims {dims:?}, expected {expected:?}",
                        i + 1
                    )));
                }
                let n: usize = dims.iter().product();
                let raw = r.take(4 * n)?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                pair[slot] = Some(Tensor::new(dims, data)?);
            }
            let [w, b] = pair;
            params.push(LayerParams {
                weight: w.expect("read"),
                bias: b.expect("read"),
            });
        }
        if r.pos != bytes.len() {
            return Err(NetworkError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Network {
            scale: meta.scale,
            class_names: meta.class_names,
            mean_rgb: meta.mean_rgb,
            kinds,
            params,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            NetworkError::Format(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    let io = |source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, net.to_checkpoint_bytes()).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let bytes = std::fs::read(path).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Network::from_checkpoint_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build_network;

    fn net() -> Network {
        let classes: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let mut n = build_network(&ScaleConfig::default(), &classes, 3).unwrap();
        n.mean_rgb = vec![0.1, 0.2, 0.30000001];
        n
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let n = net();
        let p1 = dir.path().join("a.nnck");
        let p2 = dir.path().join("b.nnck");
        save_checkpoint(&n, &p1).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded, n);
        save_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn header_reports_nineteen_layers() {
        let bytes = net().to_checkpoint_bytes();
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let meta: serde_json::Value = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
        assert_eq!(meta["weighted_layers"], 19);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let good = net().to_checkpoint_bytes();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(Network::from_checkpoint_bytes(&bad_magic), Err(NetworkError::Format(_))));

        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(matches!(Network::from_checkpoint_bytes(&bad_version), Err(NetworkError::Version(2))));

        for cut in [3, 10, 200, good.len() - 1] {
            assert!(matches!(
                Network::from_checkpoint_bytes(&good[..cut]),
                Err(NetworkError::Format(_))
            ));
        }
        let mut trailing = good.clone();
        trailing.push(0);
        assert!(Network::from_checkpoint_bytes(&trailing).is_err());

        // flip the rank byte of the first tensor record
        let len = u32::from_le_bytes(good[8..12].try_into().unwrap()) as usize;
        let mut bad_rank = good;
        bad_rank[12 + len + 5] = 3;
        assert!(matches!(Network::from_checkpoint_bytes(&bad_rank), Err(NetworkError::Format(_))));
    }
}
