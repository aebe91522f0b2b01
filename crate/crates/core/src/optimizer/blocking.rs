use super::OptimizeError;
use crate::fusion::TensorFormat;
use crate::tensor::{LevelKind, SparseTensor};
use std::collections::BTreeMap;

/// Collapses a block directive to one factor shared by every mode. Mixed
/// factors would need per-var block labels on every stream, so they are rejected.
pub fn uniform_block(shape: &[usize]) -> Result<Option<usize>, OptimizeError> {
    let Some(&b) = shape.first() else { return Ok(None) };
    if shape.iter().any(|&x| x != b) {
        return Err(OptimizeError::IncompatibleBlocks(format!("{shape:?} is not uniform")));
    }
    if b == 0 {
        return Err(OptimizeError::IncompatibleBlocks("zero block extent".into()));
    }
    Ok((b > 1).then_some(b))
}

/// Var extents in block units.
pub fn block_extents(extents: &BTreeMap<String, usize>, b: usize) -> Result<BTreeMap<String, usize>, OptimizeError> {
    extents
        .iter()
        .map(|(v, &n)| {
            if n % b != 0 {
                return Err(OptimizeError::IndivisibleExtent { var: v.clone(), extent: n, block: b });
            }
            Ok((v.clone(), n / b))
        })
        .collect()
}

pub fn block_formats(formats: &BTreeMap<String, TensorFormat>, b: usize) -> BTreeMap<String, TensorFormat> {
    formats
        .iter()
        .map(|(k, f)| {
            let mut f = f.clone();
            f.block = Some(vec![b; f.shape.len()]);
            f.kinds = vec![LevelKind::Compressed; f.shape.len()];
            (k.clone(), f)
        })
        .collect()
}

pub fn block_inputs(inputs: &BTreeMap<String, SparseTensor>, b: usize) -> Result<BTreeMap<String, SparseTensor>, OptimizeError> {
    inputs
        .iter()
        .map(|(k, t)| {
            let blocked = match t.block_shape() {
                Some(_) => t.clone(),
                None => t.block(&vec![b; t.order()])?,
            };
            Ok((k.clone(), blocked))
        })
        .collect()
}
