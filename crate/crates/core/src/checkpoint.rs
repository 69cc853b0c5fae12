//! Parameter and optimizer checkpoints in the safetensors format.
//!
//! Parameter files carry the model configuration as JSON in the header
//! metadata, so a checkpoint alone is enough to rebuild the network.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, UroadNet};
use crate::nn::{Module, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{Adam, Plateau};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

pub const FORMAT_VERSION: &str = "1";

fn ck(e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(e.to_string())
}

fn to_bytes<T: Scalar>(t: &Tensor<T>) -> (Dtype, Vec<u8>) {
    if std::mem::size_of::<T>() == 4 {
        let b = t.data().iter().flat_map(|v| (v.as_f64() as f32).to_le_bytes()).collect();
        (Dtype::F32, b)
    } else {
        let b = t.data().iter().flat_map(|v| v.as_f64().to_le_bytes()).collect();
        (Dtype::F64, b)
    }
}

fn from_view<T: Scalar>(name: &str, v: &TensorView<'_>) -> Result<Tensor<T>> {
    let data: Vec<T> = match v.dtype() {
        Dtype::F32 => v
            .data()
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect(),
        Dtype::F64 => v
            .data()
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        d => return Err(ck(format!("tensor `{name}` has unsupported dtype {d:?}"))),
    };
    Ok(Tensor::new(v.shape().to_vec(), data))
}

fn write<'a, T: Scalar + 'a>(
    path: &Path,
    tensors: impl IntoIterator<Item = (String, &'a Tensor<T>)>,
    meta: HashMap<String, String>,
) -> Result<()> {
    let owned: Vec<(String, Vec<usize>, Dtype, Vec<u8>)> = tensors
        .into_iter()
        .map(|(n, t)| {
            let (d, b) = to_bytes(t);
            (n, t.shape().to_vec(), d, b)
        })
        .collect();
    let views = owned
        .iter()
        .map(|(n, s, d, b)| Ok((n.clone(), TensorView::new(*d, s.clone(), b).map_err(ck)?)))
        .collect::<Result<Vec<_>>>()?;
    let bytes = safetensors::serialize(views, &Some(meta)).map_err(ck)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn header(bytes: &[u8]) -> Result<HashMap<String, String>> {
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(ck)?;
    let m = meta.metadata().clone().unwrap_or_default();
    match m.get("format_version").map(String::as_str) {
        Some(FORMAT_VERSION) => Ok(m),
        Some(v) => Err(ck(format!("unsupported checkpoint format version {v}"))),
        None => Err(ck("missing format_version in checkpoint header")),
    }
}

pub fn save_params<T: Scalar>(path: &Path, config: &ModelConfig, params: &ParamStore<T>) -> Result<()> {
    let meta = HashMap::from([
        ("format_version".to_string(), FORMAT_VERSION.to_string()),
        ("model_config".to_string(), serde_json::to_string(config).map_err(ck)?),
    ]);
    write(path, params.iter().map(|(n, t)| (n.clone(), t)), meta)
}

/// Reads a parameter checkpoint without checking it against any model.
pub fn load_params<T: Scalar>(path: &Path) -> Result<(ModelConfig, ParamStore<T>)> {
    let bytes = read(path)?;
    let meta = header(&bytes)?;
    let config: ModelConfig = serde_json::from_str(
        meta.get("model_config")
            .ok_or_else(|| ck("missing model_config in checkpoint header"))?,
    )
    .map_err(ck)?;
    let st = SafeTensors::deserialize(&bytes).map_err(ck)?;
    let mut store = ParamStore::new();
    for (name, view) in st.tensors() {
        store.insert(name.clone(), from_view(&name, &view)?);
    }
    Ok((config, store))
}

/// Reads a checkpoint and checks every parameter against `net`.
pub fn load_for_model<T: Scalar>(path: &Path, net: &UroadNet) -> Result<ParamStore<T>> {
    let (_, store) = load_params(path)?;
    store.validate(&net.specs())?;
    Ok(store)
}

/// Adam moments and schedule state alongside the step counters.
pub fn save_optimizer<T: Scalar>(
    path: &Path,
    adam: &Adam<T>,
    schedule: &Plateau,
    epoch: usize,
    steps: usize,
) -> Result<()> {
    let meta = HashMap::from([
        ("format_version".to_string(), FORMAT_VERSION.to_string()),
        ("adam_step".to_string(), adam.step.to_string()),
        ("schedule".to_string(), serde_json::to_string(schedule).map_err(ck)?),
        ("epoch".to_string(), epoch.to_string()),
        ("steps".to_string(), steps.to_string()),
    ]);
    let tensors = adam
        .m
        .iter()
        .map(|(n, t)| (format!("m.{n}"), t))
        .chain(adam.v.iter().map(|(n, t)| (format!("v.{n}"), t)));
    write(path, tensors, meta)
}

pub struct OptimizerState<T> {
    pub adam: Adam<T>,
    pub schedule: Plateau,
    pub epoch: usize,
    pub steps: usize,
}

pub fn load_optimizer<T: Scalar>(path: &Path) -> Result<OptimizerState<T>> {
    let bytes = read(path)?;
    let meta = header(&bytes)?;
    let field = |k: &str| meta.get(k).ok_or_else(|| ck(format!("missing {k} in optimizer header")));
    let num = |k: &str| -> Result<u64> { field(k)?.parse().map_err(ck) };
    let st = SafeTensors::deserialize(&bytes).map_err(ck)?;
    let (mut m, mut v) = (BTreeMap::new(), BTreeMap::new());
    for (name, view) in st.tensors() {
        let t = from_view(&name, &view)?;
        match name.split_once('.') {
            Some(("m", rest)) => m.insert(rest.to_string(), t),
            Some(("v", rest)) => v.insert(rest.to_string(), t),
            _ => return Err(ck(format!("unexpected optimizer tensor `{name}`"))),
        };
    }
    Ok(OptimizerState {
        adam: Adam {
            step: num("adam_step")?,
            m,
            v,
            ..Adam::default()
        },
        schedule: serde_json::from_str(field("schedule")?).map_err(ck)?,
        epoch: num("epoch")? as usize,
        steps: num("steps")? as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::dual_sa::{DualSaConfig, Variant};

    fn tiny(base: usize) -> ModelConfig {
        ModelConfig {
            variant: Variant::DualSa,
            backbone: BackboneConfig {
                in_channels: 3,
                base_channels: base,
                groups: 2,
            },
            dualsa: DualSaConfig {
                stages: 1,
                heads: 2,
                mlp_ratio: 2,
                ..Default::default()
            },
        }
    }

    #[test]
    fn params_round_trip_and_cast() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.safetensors");
        let cfg = tiny(4);
        let net = UroadNet::new(&cfg).unwrap();
        let p = net.init_params::<f32>(1);
        save_params(&path, &cfg, &p).unwrap();
        let (c2, p2) = load_params::<f32>(&path).unwrap();
        assert_eq!((c2, &p2), (cfg, &p));
        let p64 = load_for_model::<f64>(&path, &net).unwrap();
        assert_eq!(p64.cast::<f32>(), p);
    }

    #[test]
    fn wrong_width_names_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.safetensors");
        let cfg = tiny(4);
        let p = UroadNet::new(&cfg).unwrap().init_params::<f32>(1);
        save_params(&path, &cfg, &p).unwrap();
        let other = UroadNet::new(&tiny(8)).unwrap();
        match load_for_model::<f32>(&path, &other) {
            Err(Error::ParamShape { name, .. }) => assert!(!name.is_empty()),
            r => panic!("expected a shape error, got {:?}", r.err()),
        }
    }

    #[test]
    fn optimizer_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.safetensors");
        let mut adam = Adam::<f64>::default();
        adam.step = 7;
        adam.m.insert("a.w".into(), Tensor::new([2], vec![0.5, -1.0]));
        adam.v.insert("a.w".into(), Tensor::new([2], vec![0.25, 1.0]));
        let mut sched = Plateau::new(1e-4, 3, 0.5);
        sched.observe(1.0);
        save_optimizer(&path, &adam, &sched, 4, 40).unwrap();
        let back = load_optimizer::<f64>(&path).unwrap();
        assert_eq!(back.adam, adam);
        assert_eq!(back.schedule, sched);
        assert_eq!((back.epoch, back.steps), (4, 40));
    }
}
