//! Human-diffable JSON checkpoints for models and curves. Numbers are
//! serialized at round-trip precision, so load(save(c)) == c bit-exactly.

use crate::curve::CurveParams;
use crate::error::{Error, Result};
use crate::model::{ArchSpec, ModelParams};
use crate::numcore::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub stage_id: Option<usize>,
    pub epochs_trained: usize,
    pub command_line: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointPayload {
    Model(ModelParams),
    Curve(CurveParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub payload: CheckpointPayload,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    kind: String,
    arch: ArchSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    start: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    control: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    end: Option<Vec<f64>>,
    meta: CheckpointMeta,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let file = match &ckpt.payload {
        CheckpointPayload::Model(m) => CheckpointFile {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: "model".into(),
            arch: m.arch().clone(),
            params: Some(m.flat().data().to_vec()),
            start: None,
            control: None,
            end: None,
            meta: ckpt.meta.clone(),
        },
        CheckpointPayload::Curve(c) => CheckpointFile {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: "curve".into(),
            arch: c.start().arch().clone(),
            params: None,
            start: Some(c.start().flat().data().to_vec()),
            control: Some(c.control().flat().data().to_vec()),
            end: Some(c.end().flat().data().to_vec()),
            meta: ckpt.meta.clone(),
        },
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::format(format!("checkpoint encode: {e}")))?;
    if let Some(parent) = path.as_ref().parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| {
        Error::format(format!(
            "{}:{}:{}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    if file.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint format_version {} (expected {CHECKPOINT_FORMAT_VERSION})",
            file.format_version
        )));
    }
    let wrap = |e: Error| Error::format(format!("{}: {e}", path.display()));
    let payload = match file.kind.as_str() {
        "model" => {
            let params = file
                .params
                .ok_or_else(|| Error::format(format!("{}: missing params", path.display())))?;
            let flat = Tensor::from_vec(params).map_err(wrap)?;
            CheckpointPayload::Model(ModelParams::new(file.arch, flat).map_err(wrap)?)
        }
        "curve" => {
            let take = |field: Option<Vec<f64>>, name: &str| {
                field.ok_or_else(|| Error::format(format!("{}: missing {name}", path.display())))
            };
            let mk = |v: Vec<f64>| -> Result<ModelParams> {
                ModelParams::new(file.arch.clone(), Tensor::from_vec(v)?)
            };
            let start = mk(take(file.start, "start")?).map_err(wrap)?;
            let control = mk(take(file.control, "control")?).map_err(wrap)?;
            let end = mk(take(file.end, "end")?).map_err(wrap)?;
            CheckpointPayload::Curve(CurveParams::new(start, control, end).map_err(wrap)?)
        }
        other => {
            return Err(Error::format(format!(
                "{}: unknown checkpoint kind '{other}'",
                path.display()
            )))
        }
    };
    Ok(Checkpoint {
        payload,
        meta: file.meta,
    })
}

/// Load a checkpoint that must contain a model.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    match load_checkpoint(&path)?.payload {
        CheckpointPayload::Model(m) => Ok(m),
        CheckpointPayload::Curve(_) => Err(Error::usage(format!(
            "{} holds a curve checkpoint, expected a model",
            path.as_ref().display()
        ))),
    }
}

/// Load a checkpoint that must contain a curve.
pub fn load_curve(path: impl AsRef<Path>) -> Result<CurveParams> {
    match load_checkpoint(&path)?.payload {
        CheckpointPayload::Curve(c) => Ok(c),
        CheckpointPayload::Model(_) => Err(Error::usage(format!(
            "{} holds a model checkpoint, expected a curve",
            path.as_ref().display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::RngStream;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            seed: 42,
            stage_id: Some(3),
            epochs_trained: 10,
            command_line: "test".into(),
        }
    }

    #[test]
    fn model_checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let arch = ArchSpec::mlp(&[3, 5, 2]).unwrap();
        let m = ModelParams::random_init(arch, &mut RngStream::new(1)).unwrap();
        let ckpt = Checkpoint {
            payload: CheckpointPayload::Model(m),
            meta: meta(),
        };
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt, back);
    }

    #[test]
    fn curve_checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let arch = ArchSpec::mlp(&[2, 4, 2]).unwrap();
        let mut s = RngStream::new(2);
        let a = ModelParams::random_init(arch.clone(), &mut s).unwrap();
        let b = ModelParams::random_init(arch, &mut s).unwrap();
        let curve = CurveParams::from_endpoints(a, b).unwrap();
        let ckpt = Checkpoint {
            payload: CheckpointPayload::Curve(curve),
            meta: meta(),
        };
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt, back);
        assert!(load_curve(&path).is_ok());
        assert!(load_model(&path).is_err());
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let arch = ArchSpec::mlp(&[2, 2]).unwrap();
        let m = ModelParams::zeros(arch).unwrap();
        save_checkpoint(
            &Checkpoint {
                payload: CheckpointPayload::Model(m),
                meta: meta(),
            },
            &path,
        )
        .unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 7");
        std::fs::write(&path, text).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains('7')),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
