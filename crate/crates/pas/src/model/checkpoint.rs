//! Model persistence in the `PASC` container: the JSON header carries the
//! architecture plus the tensor manifest, the blobs carry the parameters.

use super::{skeleton, ArchitectureSpec, ModelGraph};
use crate::container::{Container, ContainerHeader, TensorEntry};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub name: String,
    pub arch: ArchitectureSpec,
    pub tensors: Vec<TensorEntry>,
}

pub const CHECKPOINT_KIND: &str = "model-checkpoint";

impl ContainerHeader for CheckpointHeader {
    fn manifest(&self) -> &[TensorEntry] {
        &self.tensors
    }
    fn set_manifest(&mut self, manifest: Vec<TensorEntry>) {
        self.tensors = manifest;
    }
}

pub fn save_checkpoint(model: &ModelGraph<f32>, path: &Path) -> Result<()> {
    let tensors = model
        .param_entries()
        .into_iter()
        .map(|(name, t)| (name, t.clone()))
        .collect();
    let mut container = Container::new(
        CheckpointHeader {
            kind: CHECKPOINT_KIND.to_string(),
            name: model.name.clone(),
            arch: model.arch().clone(),
            tensors: vec![],
        },
        tensors,
    );
    container.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelGraph<f32>> {
    let container = Container::<CheckpointHeader>::load(path)?;
    if container.header.kind != CHECKPOINT_KIND {
        return Err(Error::format(
            12,
            format!(
                "container kind `{}` is not a {CHECKPOINT_KIND}",
                container.header.kind
            ),
        ));
    }
    let mut model = skeleton(&container.header.arch)?;
    model.name = container.header.name.clone();
    for (name, param) in model.param_entries_mut() {
        let stored = container.tensor(&name).map_err(|_| {
            Error::format(12, format!("checkpoint is missing parameter `{name}`"))
        })?;
        if stored.shape() != param.shape() {
            return Err(Error::format(
                12,
                format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    stored.shape(),
                    param.shape()
                ),
            ));
        }
        param.data_mut().copy_from_slice(stored.data());
    }
    Ok(model)
}

/// Loads a checkpoint and rejects it when its architecture differs from the
/// declared one.
pub fn load_checkpoint_expecting(path: &Path, expected: &ArchitectureSpec) -> Result<ModelGraph<f32>> {
    let model = load_checkpoint(path)?;
    if model.arch() != expected {
        return Err(Error::Configuration(format!(
            "architecture mismatch: checkpoint `{}` holds {} {:?}, expected {} {:?}",
            path.display(),
            model.arch().name.as_str(),
            model.arch().stage_widths,
            expected.name.as_str(),
            expected.stage_widths,
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;
    use tempfile::tempdir;

    fn spec() -> ArchitectureSpec {
        ArchitectureSpec::mini_resnet((1, 12, 12), 4, &[4, 8], 1)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempdir().unwrap();
        let model = build_model(&spec(), 20).unwrap();
        let p1 = dir.path().join("a.pasc");
        let p2 = dir.path().join("b.pasc");
        save_checkpoint(&model, &p1).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        save_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(loaded.sites(), model.sites());
        assert_eq!(loaded.name, model.name);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let model = build_model(&spec(), 21).unwrap();
        let path = dir.path().join("m.pasc");
        save_checkpoint(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[1] = b'!';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let dir = tempdir().unwrap();
        let plain = ArchitectureSpec::plain_cnn((1, 12, 12), 4, &[4, 8]);
        let model = build_model(&plain, 22).unwrap();
        let path = dir.path().join("plain.pasc");
        save_checkpoint(&model, &path).unwrap();
        let err = load_checkpoint_expecting(&path, &spec()).unwrap_err();
        assert!(matches!(err, Error::Configuration(_)));
        assert!(err.to_string().contains("architecture mismatch"));
    }
}
