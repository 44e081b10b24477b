//! On-disk checkpoints: `manifest.json` plus one little-endian `f64` blob
//! per parameter under `params/`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, Params, Student, StudentConfig, Teacher, TeacherConfig};
use crate::error::{Error, Result};
use crate::tensorgrad::Tensor;

const FORMAT: &str = "spikedistill-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "snake_case")]
pub enum NetworkSpec {
    Student(StudentConfig),
    Teacher(TeacherConfig),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Network {
    Student(Student),
    Teacher(Teacher),
}

impl Network {
    pub fn spec(&self) -> NetworkSpec {
        match self {
            Network::Student(s) => NetworkSpec::Student(s.config().clone()),
            Network::Teacher(t) => NetworkSpec::Teacher(t.config().clone()),
        }
    }

    pub fn params(&self) -> &Params {
        match self {
            Network::Student(s) => s.params(),
            Network::Teacher(t) => t.params(),
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        match self {
            Network::Student(s) => s.layers(),
            Network::Teacher(t) => t.layers(),
        }
    }

    pub fn timesteps(&self) -> usize {
        match self {
            Network::Student(s) => s.config().timesteps,
            Network::Teacher(t) => t.config().timesteps,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Network::Student(s) => s.config().num_classes,
            Network::Teacher(t) => t.config().num_classes,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Network::Student(_) => "student",
            Network::Teacher(_) => "teacher",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: Option<usize>,
    pub war: Option<f64>,
    pub uar: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    network: NetworkSpec,
    meta: CheckpointMeta,
    params: Vec<ParamEntry>,
}

pub fn save_checkpoint(dir: &Path, network: &Network, meta: &CheckpointMeta) -> Result<()> {
    let pdir = dir.join("params");
    fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
    let mut entries = Vec::new();
    for (name, t) in network.params().iter() {
        let file = format!("params/{name}.bin");
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(ParamEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            file,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        network: network.spec(),
        meta: meta.clone(),
        params: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format("checkpoint manifest", &path, e))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::format(
            "checkpoint manifest",
            &path,
            format!(
                "unsupported format {} v{}",
                manifest.format, manifest.version
            ),
        ));
    }
    let mut params = Params::new();
    for entry in &manifest.params {
        let p = dir.join(&entry.file);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::format(
                "parameter blob",
                &p,
                "length is not a multiple of 8",
            ));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(entry.shape.clone(), data)
            .map_err(|e| Error::format("parameter blob", &p, e))?;
        params.insert(entry.name.clone(), t);
    }
    let network = match manifest.network {
        NetworkSpec::Student(cfg) => Network::Student(Student::from_params(cfg, params)?),
        NetworkSpec::Teacher(cfg) => Network::Teacher(Teacher::from_params(cfg, params)?),
    };
    Ok(Checkpoint {
        network,
        meta: manifest.meta,
    })
}
