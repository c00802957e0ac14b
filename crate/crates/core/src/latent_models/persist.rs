//! Opaque model payload: `ECGM`, u16 version, u32 header length, JSON
//! header, then every tensor as little-endian f64 in header order.

use serde::{Deserialize, Serialize};

use super::pca::{PcaMeta, PcaModel};
use super::vae::VaeModel;
use super::variant::VariantConfig;
use super::{LatentError, LatentModel};
use crate::preprocess::ScalingParams;

const MAGIC: &[u8; 4] = b"ECGM";
const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Header {
    Vae { config: VariantConfig, scaling: ScalingParams, tensors: Vec<TensorMeta> },
    Pca { pca: PcaMeta, scaling: ScalingParams, tensors: Vec<TensorMeta> },
}

type Tensors = Vec<(String, Vec<usize>, Vec<f64>)>;

fn vae_tensors(model: &VaeModel) -> Tensors {
    model.store().iter().map(|(_, p)| (p.name.clone(), p.value.shape().to_vec(), p.value.data().to_vec())).collect()
}

pub fn model_to_bytes(model: &LatentModel, scaling: &ScalingParams) -> Vec<u8> {
    let (tensors, header) = match model {
        LatentModel::Vae(m) => {
            let t = vae_tensors(m);
            let metas = t.iter().map(|(n, s, _)| TensorMeta { name: n.clone(), shape: s.clone() }).collect();
            (t, Header::Vae { config: m.config().clone(), scaling: *scaling, tensors: metas })
        }
        LatentModel::Pca(m) => {
            let t = m.tensors();
            let metas = t.iter().map(|(n, s, _)| TensorMeta { name: n.clone(), shape: s.clone() }).collect();
            (t, Header::Pca { pca: m.meta(), scaling: *scaling, tensors: metas })
        }
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(10 + json.len() + 8 * tensors.iter().map(|t| t.2.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, data) in &tensors {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<(LatentModel, ScalingParams), LatentError> {
    let bad = |m: String| LatentError::Format(m);
    if bytes.len() < 10 || &bytes[..4] != MAGIC {
        return Err(bad("not a model payload (bad magic)".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(bad(format!("unsupported model version {version}")));
    }
    let len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let body = bytes.get(10..10 + len).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
    let mut cursor = 10 + len;
    let mut read = |metas: Vec<TensorMeta>| -> Result<Tensors, LatentError> {
        metas
            .into_iter()
            .map(|m| {
                let n: usize = m.shape.iter().product();
                let end = cursor + 8 * n;
                let raw = bytes.get(cursor..end).ok_or_else(|| bad(format!("truncated tensor {}", m.name)))?;
                cursor = end;
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                Ok((m.name, m.shape, data))
            })
            .collect()
    };
    let (model, scaling) = match header {
        Header::Vae { config, scaling, tensors } => {
            let t = read(tensors)?;
            (LatentModel::Vae(VaeModel::from_tensors(&config, t)?), scaling)
        }
        Header::Pca { pca, scaling, tensors } => {
            let t = read(tensors)?;
            (LatentModel::Pca(PcaModel::from_parts(pca, t)?), scaling)
        }
    };
    if cursor != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - cursor)));
    }
    Ok((model, scaling))
}
