use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, ArchitectureSpec, ModelError, SurrogateModel};
use crate::data::{FeatureSchema, Normalizer};
use crate::nn::Tensor;

pub const CHECKPOINT_FORMAT: &str = "stagecast-checkpoint/1";

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    seed: u64,
    spec: ArchitectureSpec,
    schema: Option<FeatureSchema>,
    normalizer: Option<Normalizer>,
    parameters: Vec<StoredParameter>,
}

#[derive(Serialize, Deserialize)]
struct StoredParameter {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Serializes `model` as JSON. The output depends only on the model, so saving
/// the same model twice yields identical bytes.
pub fn write_checkpoint<W: Write>(model: &SurrogateModel, writer: W) -> Result<(), ModelError> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        seed: model.seed(),
        spec: model.spec().clone(),
        schema: model.schema().cloned(),
        normalizer: model.normalizer().cloned(),
        parameters: model
            .params()
            .iter()
            .map(|p| StoredParameter {
                name: p.name.clone(),
                shape: p.value().shape().to_vec(),
                data: p.value().data().to_vec(),
            })
            .collect(),
    };
    if let Some(p) = file.parameters.iter().find(|p| p.data.iter().any(|v| !v.is_finite())) {
        return Err(ModelError::Checkpoint(format!("parameter {} holds non-finite values", p.name)));
    }
    serde_json::to_writer(writer, &file).map_err(|e| ModelError::Checkpoint(e.to_string()))
}

/// Rebuilds the architecture from the stored spec and seed, then overwrites
/// every parameter with its stored value.
pub fn read_checkpoint<R: Read>(reader: R) -> Result<SurrogateModel, ModelError> {
    let file: CheckpointFile =
        serde_json::from_reader(reader).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(ModelError::Checkpoint(format!(
            "unsupported format {:?}, expected {CHECKPOINT_FORMAT:?}",
            file.format
        )));
    }
    let mut model = build_model(file.spec, file.seed)?;
    let params = model.params_internal();
    if params.len() != file.parameters.len() {
        return Err(ModelError::Checkpoint(format!(
            "{} stored parameters, architecture has {}",
            file.parameters.len(),
            params.len()
        )));
    }
    for (slot, stored) in params.iter_mut().zip(file.parameters) {
        if slot.name != stored.name {
            return Err(ModelError::Checkpoint(format!(
                "parameter {} found where {} was expected",
                stored.name, slot.name
            )));
        }
        let value = Tensor::new(stored.shape, stored.data)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", slot.name)))?;
        slot.set_value(value)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", slot.name)))?;
    }
    model.set_normalizer(file.normalizer, file.schema);
    Ok(model)
}

pub fn save_checkpoint(model: &SurrogateModel, path: &Path) -> Result<(), ModelError> {
    let io = |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write_checkpoint(model, &mut w)?;
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<SurrogateModel, ModelError> {
    let file = File::open(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_checkpoint(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Geometry, ModelKind};

    #[test]
    fn round_trip_is_bit_identical() {
        let schema = FeatureSchema::miami_river();
        let g = Geometry::from_schema(&schema, 12, 4);
        for kind in ModelKind::ALL {
            let model = build_model(ArchitectureSpec::default_for(kind, g.clone()), 17).unwrap();
            let mut a = Vec::new();
            write_checkpoint(&model, &mut a).unwrap();
            let back = read_checkpoint(a.as_slice()).unwrap();
            assert_eq!(back.params().checksum(), model.params().checksum());
            let mut b = Vec::new();
            write_checkpoint(&back, &mut b).unwrap();
            assert_eq!(a, b, "{kind}");
        }
    }

    #[test]
    fn wrong_format_tag_rejected() {
        let schema = FeatureSchema::miami_river();
        let model = build_model(
            ArchitectureSpec::default_for(ModelKind::Mlp, Geometry::from_schema(&schema, 2, 1)),
            0,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace(CHECKPOINT_FORMAT, "other/9");
        assert!(matches!(read_checkpoint(text.as_bytes()), Err(ModelError::Checkpoint(_))));
    }
}
