//! Named-tensor files in the safetensors layout.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A tensor read from or destined for an archive.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveTensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

fn decode<T: Scalar>(name: &str, view: &TensorView<'_>) -> Result<Vec<T>> {
    let bytes = view.data();
    let convert = |v: f64| T::lit(v);
    match view.dtype() {
        Dtype::F32 => {
            Ok(bytes.chunks_exact(4).map(|c| convert(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect())
        }
        Dtype::F64 => Ok(bytes
            .chunks_exact(8)
            .map(|c| convert(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect()),
        other => Err(Error::TensorLoad {
            tensor: name.to_string(),
            reason: format!("unsupported dtype {other:?}, expected F32 or F64"),
        }),
    }
}

/// Named tensors and the free-form metadata of an archive.
pub(crate) type ParsedArchive<T> = (HashMap<String, ArchiveTensor<T>>, HashMap<String, String>);

/// Parses an in-memory archive.
pub(crate) fn parse_archive<T: Scalar>(bytes: &[u8]) -> std::result::Result<ParsedArchive<T>, Error> {
    let parsed = SafeTensors::deserialize(bytes)
        .map_err(|e| Error::TensorLoad { tensor: "<header>".into(), reason: e.to_string() })?;
    let (_, meta) = SafeTensors::read_metadata(bytes)
        .map_err(|e| Error::TensorLoad { tensor: "<header>".into(), reason: e.to_string() })?;
    let mut out = HashMap::new();
    for (name, view) in parsed.tensors() {
        let data = decode::<T>(&name, &view)?;
        out.insert(name, ArchiveTensor { shape: view.shape().to_vec(), data });
    }
    Ok((out, meta.metadata().clone().unwrap_or_default()))
}

/// Reads every tensor of a weights archive, converting to `T`.
pub fn read_archive<T: Scalar>(path: &Path) -> Result<HashMap<String, ArchiveTensor<T>>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (tensors, _) = parse_archive(&bytes).map_err(|e| match e {
        Error::TensorLoad { tensor, reason } => {
            Error::TensorLoad { tensor, reason: format!("{reason} (in {})", path.display()) }
        }
        other => other,
    })?;
    Ok(tensors)
}

/// Serializes tensors in `T`'s native dtype. Output bytes depend only on the
/// tensor contents and the metadata, never on insertion order.
pub(crate) fn encode_archive<T: Scalar>(
    tensors: &[(String, ArchiveTensor<T>)],
    metadata: Option<HashMap<String, String>>,
) -> Result<Vec<u8>> {
    let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(name, t)| {
            let mut buf = Vec::with_capacity(t.data.len() * T::BYTES);
            for &v in &t.data {
                v.write_le(&mut buf);
            }
            (name.clone(), t.shape.clone(), buf)
        })
        .collect();
    let views = buffers
        .iter()
        .map(|(name, shape, buf)| {
            TensorView::new(T::DTYPE, shape.clone(), buf)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::TensorLoad { tensor: name.clone(), reason: e.to_string() })
        })
        .collect::<Result<Vec<_>>>()?;
    safetensors::serialize(views, &metadata)
        .map_err(|e| Error::TensorLoad { tensor: "<archive>".into(), reason: e.to_string() })
}

/// Writes a weights archive (for example an exported encoder).
pub fn write_archive<T: Scalar>(path: &Path, tensors: &[(String, ArchiveTensor<T>)]) -> Result<()> {
    let bytes = encode_archive(tensors, None)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
