//! Fibertree tensor storage, format conversion and COO text I/O.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("duplicate coordinate {0:?}")]
    DuplicateCoordinate(Vec<u32>),
    #[error("coordinate {coords:?} out of bounds for shape {shape:?}")]
    CoordinateOutOfBounds { coords: Vec<u32>, shape: Vec<usize> },
    #[error("illegal format combination: {0}")]
    IllegalFormatCombination(String),
    #[error("extent {extent} of mode {mode} is not divisible by block extent {block}")]
    IndivisibleExtent { mode: usize, extent: usize, block: usize },
    #[error("parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("io error: {0}")]
    IoError(String),
}

/// Storage kind of one level, without its arrays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LevelKind {
    Dense,
    Compressed,
    /// Singleton level: exactly one coordinate per parent position.
    Coordinate,
}

impl LevelKind {
    pub fn keyword(self) -> &'static str {
        match self {
            LevelKind::Dense => "dense",
            LevelKind::Compressed => "compressed",
            LevelKind::Coordinate => "coordinate",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        match s {
            "dense" => Some(LevelKind::Dense),
            "compressed" => Some(LevelKind::Compressed),
            "coordinate" | "singleton" => Some(LevelKind::Coordinate),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LevelFormat {
    Dense { size: usize },
    Compressed { segments: Vec<u32>, coordinates: Vec<u32> },
    Coordinate { coordinates: Vec<u32> },
    /// Dense payload covering every mode; `block_shape` is in logical mode order.
    DenseBlockLeaf { block_shape: Vec<usize> },
}

impl LevelFormat {
    pub fn kind(&self) -> Option<LevelKind> {
        match self {
            LevelFormat::Dense { .. } => Some(LevelKind::Dense),
            LevelFormat::Compressed { .. } => Some(LevelKind::Compressed),
            LevelFormat::Coordinate { .. } => Some(LevelKind::Coordinate),
            LevelFormat::DenseBlockLeaf { .. } => None,
        }
    }

    /// Number of positions this level exposes given the parent's position count.
    fn positions(&self, parent: usize) -> usize {
        match self {
            LevelFormat::Dense { size } => parent * size,
            LevelFormat::Compressed { coordinates, .. } => coordinates.len(),
            LevelFormat::Coordinate { .. } => parent,
            LevelFormat::DenseBlockLeaf { .. } => parent,
        }
    }

    /// The (coordinate, child position) pairs of the fiber under `parent`.
    pub fn fiber(&self, parent: usize) -> Vec<(u32, usize)> {
        match self {
            LevelFormat::Dense { size } => (0..*size).map(|c| (c as u32, parent * size + c)).collect(),
            LevelFormat::Compressed { segments, coordinates } => {
                let lo = segments[parent] as usize;
                let hi = segments[parent + 1] as usize;
                (lo..hi).map(|p| (coordinates[p], p)).collect()
            }
            LevelFormat::Coordinate { coordinates } => vec![(coordinates[parent], parent)],
            LevelFormat::DenseBlockLeaf { .. } => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        DenseTensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        DenseTensor { shape: vec![rows.len(), cols], data: rows.iter().flat_map(|r| r.iter().copied()).collect() }
    }

    pub fn vector(data: &[f64]) -> Self {
        DenseTensor { shape: vec![data.len()], data: data.to_vec() }
    }

    pub fn offset(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.shape).fold(0, |acc, (c, n)| acc * n + c)
    }

    pub fn get(&self, coords: &[usize]) -> f64 {
        self.data[self.offset(coords)]
    }

    pub fn set(&mut self, coords: &[usize], v: f64) {
        let o = self.offset(coords);
        self.data[o] = v;
    }

    /// Relative comparison used by every oracle check.
    pub fn approx_eq(&self, other: &DenseTensor, rel_tol: f64) -> bool {
        self.shape == other.shape
            && self.data.iter().zip(&other.data).all(|(a, b)| {
                let scale = a.abs().max(b.abs()).max(1.0);
                (a - b).abs() <= rel_tol * scale
            })
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Row-major iteration over every coordinate of `shape`.
pub fn for_each_coord(shape: &[usize], mut f: impl FnMut(&[usize])) {
    if shape.contains(&0) {
        return;
    }
    let mut c = vec![0usize; shape.len()];
    loop {
        f(&c);
        let mut k = shape.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            c[k] += 1;
            if c[k] < shape[k] {
                break;
            }
            c[k] = 0;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseTensor {
    pub name: String,
    pub shape: Vec<usize>,
    /// Level `k` stores logical mode `mode_order[k]`.
    pub mode_order: Vec<usize>,
    pub levels: Vec<LevelFormat>,
    pub values: Vec<f64>,
    pub fill: f64,
}

/// A key ordered for storage: coordinates permuted into mode order.
type Keyed = (Vec<u32>, usize);

/// Levels, the leaf position of every key, and the leaf count.
type BuiltLevels = (Vec<LevelFormat>, Vec<Option<usize>>, usize);

/// Parsed COO text: shape and entries.
pub type CooEntries = (Vec<usize>, Vec<(Vec<u32>, f64)>);

/// Builds per-level arrays over keys already sorted in storage order.
/// Returns the levels and, for every key, its leaf position.
fn build_levels(
    keys: &[Keyed],
    kinds: &[LevelKind],
    extents: &[usize],
) -> Result<BuiltLevels, TensorError> {
    // Each group is (parent position, range of keys).
    let mut groups: Vec<(usize, std::ops::Range<usize>)> = vec![(0, 0..keys.len())];
    let mut parent_positions = 1usize;
    let mut levels = Vec::with_capacity(kinds.len());
    for (lvl, (&kind, &extent)) in kinds.iter().zip(extents).enumerate() {
        let mut next = Vec::new();
        match kind {
            LevelKind::Dense => {
                for (p, range) in &groups {
                    let mut start = range.start;
                    for c in 0..extent {
                        let mut end = start;
                        while end < range.end && keys[end].0[lvl] as usize == c {
                            end += 1;
                        }
                        next.push((p * extent + c, start..end));
                        start = end;
                    }
                }
                levels.push(LevelFormat::Dense { size: extent });
                parent_positions *= extent;
            }
            LevelKind::Compressed => {
                let mut segments = vec![0u32; parent_positions + 1];
                let mut coordinates = Vec::new();
                let mut by_parent: Vec<Vec<(u32, std::ops::Range<usize>)>> = vec![Vec::new(); parent_positions];
                for (p, range) in &groups {
                    let mut start = range.start;
                    while start < range.end {
                        let c = keys[start].0[lvl];
                        let mut end = start;
                        while end < range.end && keys[end].0[lvl] == c {
                            end += 1;
                        }
                        by_parent[*p].push((c, start..end));
                        start = end;
                    }
                }
                for (p, children) in by_parent.into_iter().enumerate() {
                    for (c, range) in children {
                        next.push((coordinates.len(), range));
                        coordinates.push(c);
                    }
                    segments[p + 1] = coordinates.len() as u32;
                }
                parent_positions = coordinates.len();
                levels.push(LevelFormat::Compressed { segments, coordinates });
            }
            LevelKind::Coordinate => {
                let mut coordinates = vec![0u32; parent_positions];
                let mut seen = vec![false; parent_positions];
                for (p, range) in &groups {
                    if range.is_empty() {
                        return Err(TensorError::IllegalFormatCombination(format!(
                            "coordinate level {lvl} needs exactly one child per parent position, position {p} has none"
                        )));
                    }
                    let c = keys[range.start].0[lvl];
                    if keys[range.clone()].iter().any(|k| k.0[lvl] != c) {
                        return Err(TensorError::IllegalFormatCombination(format!(
                            "coordinate level {lvl} needs exactly one child per parent position, position {p} has several"
                        )));
                    }
                    coordinates[*p] = c;
                    seen[*p] = true;
                    next.push((*p, range.clone()));
                }
                if let Some(p) = seen.iter().position(|s| !s) {
                    return Err(TensorError::IllegalFormatCombination(format!(
                        "coordinate level {lvl} needs exactly one child per parent position, position {p} has none"
                    )));
                }
                levels.push(LevelFormat::Coordinate { coordinates });
            }
        }
        groups = next;
    }
    let mut leaf_of = vec![None; keys.len()];
    for (p, range) in &groups {
        for k in range.clone() {
            leaf_of[k] = Some(*p);
        }
    }
    Ok((levels, leaf_of, parent_positions))
}

fn check_permutation(order: &[usize], n: usize) -> Result<(), TensorError> {
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(TensorError::IllegalFormatCombination(format!("mode order {order:?} has wrong length for {n} modes")));
    }
    for &m in order {
        if m >= n || seen[m] {
            return Err(TensorError::IllegalFormatCombination(format!("mode order {order:?} is not a permutation")));
        }
        seen[m] = true;
    }
    Ok(())
}

/// Sorts entries into storage order after validating them.
fn keyed_entries(
    entries: &[(Vec<u32>, f64)],
    shape: &[usize],
    mode_order: &[usize],
) -> Result<Vec<Keyed>, TensorError> {
    let mut keys = Vec::with_capacity(entries.len());
    for (i, (coords, _)) in entries.iter().enumerate() {
        if coords.len() != shape.len() || coords.iter().zip(shape).any(|(&c, &n)| c as usize >= n) {
            return Err(TensorError::CoordinateOutOfBounds { coords: coords.clone(), shape: shape.to_vec() });
        }
        keys.push((mode_order.iter().map(|&m| coords[m]).collect::<Vec<_>>(), i));
    }
    keys.sort();
    for w in keys.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(TensorError::DuplicateCoordinate(entries[w[1].1].0.clone()));
        }
    }
    Ok(keys)
}

impl SparseTensor {
    /// Builds a tensor from coordinate entries. `kinds[k]` is the format of storage level `k`.
    pub fn from_coo(
        name: &str,
        entries: &[(Vec<u32>, f64)],
        shape: &[usize],
        kinds: &[LevelKind],
        mode_order: &[usize],
    ) -> Result<SparseTensor, TensorError> {
        check_permutation(mode_order, shape.len())?;
        if kinds.len() != shape.len() {
            return Err(TensorError::IllegalFormatCombination(format!(
                "{} level formats for {} modes",
                kinds.len(),
                shape.len()
            )));
        }
        if kinds.first() == Some(&LevelKind::Coordinate) {
            return Err(TensorError::IllegalFormatCombination("a coordinate level cannot be the outermost level".into()));
        }
        let keys = keyed_entries(entries, shape, mode_order)?;
        let extents: Vec<usize> = mode_order.iter().map(|&m| shape[m]).collect();
        let (levels, leaf_of, leaves) = build_levels(&keys, kinds, &extents)?;
        let mut values = vec![0.0; leaves];
        for (k, (_, idx)) in keys.iter().enumerate() {
            if let Some(p) = leaf_of[k] {
                values[p] = entries[*idx].1;
            }
        }
        Ok(SparseTensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            mode_order: mode_order.to_vec(),
            levels,
            values,
            fill: 0.0,
        })
    }

    /// Stores every nonzero of `dense`.
    pub fn from_dense(name: &str, dense: &DenseTensor, kinds: &[LevelKind], mode_order: &[usize]) -> Result<Self, TensorError> {
        let mut entries = Vec::new();
        for_each_coord(&dense.shape, |c| {
            let v = dense.get(c);
            if v != 0.0 {
                entries.push((c.iter().map(|&x| x as u32).collect(), v));
            }
        });
        Self::from_coo(name, &entries, &dense.shape, kinds, mode_order)
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn block_shape(&self) -> Option<&[usize]> {
        match self.levels.last() {
            Some(LevelFormat::DenseBlockLeaf { block_shape }) => Some(block_shape),
            _ => None,
        }
    }

    pub fn block_volume(&self) -> usize {
        self.block_shape().map_or(1, |b| b.iter().product())
    }

    /// Level kinds of the coordinate levels, in storage order.
    pub fn kinds(&self) -> Vec<LevelKind> {
        self.levels.iter().filter_map(|l| l.kind()).collect()
    }

    /// True when every coordinate level is dense, so any traversal order is concordant.
    pub fn is_all_dense(&self) -> bool {
        self.block_shape().is_none() && self.levels.iter().all(|l| matches!(l, LevelFormat::Dense { .. }))
    }

    /// Extent of storage level `k` in coordinate units (block units when blocked).
    pub fn level_extent(&self, k: usize) -> usize {
        let m = self.mode_order[k];
        match self.block_shape() {
            Some(b) => self.shape[m] / b[m],
            None => self.shape[m],
        }
    }

    /// Number of stored leaf positions.
    pub fn leaf_positions(&self) -> usize {
        self.values.len() / self.block_volume()
    }

    /// Stored entries with logical coordinates, in storage order. Blocked tensors
    /// report every element of every stored block.
    pub fn entries(&self) -> Vec<(Vec<u32>, f64)> {
        let mut out = Vec::new();
        let coord_levels: Vec<&LevelFormat> = self.levels.iter().filter(|l| l.kind().is_some()).collect();
        let mut path = vec![0u32; coord_levels.len()];
        self.walk(&coord_levels, 0, 0, &mut path, &mut |path, pos| {
            let mut logical = vec![0u32; path.len()];
            for (k, &m) in self.mode_order.iter().enumerate() {
                logical[m] = path[k];
            }
            match self.block_shape() {
                None => out.push((logical, self.values[pos])),
                Some(bs) => {
                    let vol = self.block_volume();
                    let storage_bs: Vec<usize> = self.mode_order.iter().map(|&m| bs[m]).collect();
                    let payload = &self.values[pos * vol..(pos + 1) * vol];
                    let mut i = 0;
                    for_each_coord(&storage_bs, |local| {
                        let mut c = vec![0u32; logical.len()];
                        for (k, &m) in self.mode_order.iter().enumerate() {
                            c[m] = logical[m] * bs[m] as u32 + local[k] as u32;
                        }
                        out.push((c, payload[i]));
                        i += 1;
                    });
                }
            }
        });
        out
    }

    fn walk(
        &self,
        levels: &[&LevelFormat],
        depth: usize,
        pos: usize,
        path: &mut Vec<u32>,
        f: &mut dyn FnMut(&[u32], usize),
    ) {
        if depth == levels.len() {
            f(path, pos);
            return;
        }
        for (c, child) in levels[depth].fiber(pos) {
            path[depth] = c;
            self.walk(levels, depth + 1, child, path, f);
        }
    }

    pub fn nnz(&self) -> usize {
        self.entries().iter().filter(|(_, v)| *v != 0.0).count()
    }

    pub fn to_dense(&self) -> DenseTensor {
        let mut d = DenseTensor::zeros(&self.shape);
        if self.fill != 0.0 {
            d.data.iter_mut().for_each(|x| *x = self.fill);
        }
        for (c, v) in self.entries() {
            let c: Vec<usize> = c.iter().map(|&x| x as usize).collect();
            d.set(&c, v);
        }
        d
    }

    /// Logically equal tensor stored in `new_order`, keeping level kinds by position.
    pub fn permute_modes(&self, new_order: &[usize]) -> Result<SparseTensor, TensorError> {
        if self.block_shape().is_some() {
            return Err(TensorError::IllegalFormatCombination("cannot permute a blocked tensor".into()));
        }
        let mut t = Self::from_coo(&self.name, &self.entries(), &self.shape, &self.kinds(), new_order)?;
        t.fill = self.fill;
        Ok(t)
    }

    /// Blocks every mode by `block_shape`; outer levels are compressed over nonzero blocks.
    pub fn block(&self, block_shape: &[usize]) -> Result<SparseTensor, TensorError> {
        if block_shape.len() != self.order() {
            return Err(TensorError::IllegalFormatCombination("block shape rank differs from tensor order".into()));
        }
        for (m, (&n, &b)) in self.shape.iter().zip(block_shape).enumerate() {
            if b == 0 || n % b != 0 {
                return Err(TensorError::IndivisibleExtent { mode: m, extent: n, block: b });
            }
        }
        let dense = self.to_dense();
        let grid: Vec<usize> = self.shape.iter().zip(block_shape).map(|(n, b)| n / b).collect();
        let storage_bs: Vec<usize> = self.mode_order.iter().map(|&m| block_shape[m]).collect();
        let mut blocks: Vec<(Vec<u32>, Vec<f64>)> = Vec::new();
        for_each_coord(&grid, |bc| {
            let mut payload = Vec::with_capacity(storage_bs.iter().product());
            for_each_coord(&storage_bs, |local| {
                let mut c = vec![0usize; bc.len()];
                for (k, &m) in self.mode_order.iter().enumerate() {
                    c[m] = bc[m] * block_shape[m] + local[k];
                }
                payload.push(dense.get(&c));
            });
            if payload.iter().any(|&v| v != 0.0) {
                blocks.push((bc.iter().map(|&x| x as u32).collect(), payload));
            }
        });
        let fake: Vec<(Vec<u32>, f64)> = blocks.iter().map(|(c, _)| (c.clone(), 0.0)).collect();
        let keys = keyed_entries(&fake, &grid, &self.mode_order)?;
        let kinds = vec![LevelKind::Compressed; self.order()];
        let extents: Vec<usize> = self.mode_order.iter().map(|&m| grid[m]).collect();
        let (mut levels, leaf_of, leaves) = build_levels(&keys, &kinds, &extents)?;
        let vol: usize = block_shape.iter().product();
        let mut values = vec![0.0; leaves * vol];
        for (k, (_, idx)) in keys.iter().enumerate() {
            let p = leaf_of[k].expect("compressed levels always place a key");
            values[p * vol..(p + 1) * vol].copy_from_slice(&blocks[*idx].1);
        }
        levels.push(LevelFormat::DenseBlockLeaf { block_shape: block_shape.to_vec() });
        Ok(SparseTensor {
            name: self.name.clone(),
            shape: self.shape.clone(),
            mode_order: self.mode_order.clone(),
            levels,
            values,
            fill: self.fill,
        })
    }

    /// Expands a blocked tensor back to element granularity with the given level kinds.
    pub fn unblock(&self, kinds: &[LevelKind]) -> Result<SparseTensor, TensorError> {
        let entries: Vec<(Vec<u32>, f64)> = self.entries().into_iter().filter(|(_, v)| *v != 0.0).collect();
        Self::from_coo(&self.name, &entries, &self.shape, kinds, &self.mode_order)
    }

    /// Checks the structural invariants of every level.
    pub fn check(&self) -> Result<(), TensorError> {
        let mut parent = 1usize;
        for (k, level) in self.levels.iter().enumerate() {
            match level {
                LevelFormat::Compressed { segments, coordinates } => {
                    if segments.len() != parent + 1 || segments[0] != 0 {
                        return Err(TensorError::IllegalFormatCombination(format!("level {k}: bad segment array")));
                    }
                    if segments.windows(2).any(|w| w[0] > w[1]) || *segments.last().unwrap() as usize != coordinates.len() {
                        return Err(TensorError::IllegalFormatCombination(format!("level {k}: segments not monotone")));
                    }
                    let extent = self.level_extent(k);
                    for p in 0..parent {
                        let fib = &coordinates[segments[p] as usize..segments[p + 1] as usize];
                        if fib.windows(2).any(|w| w[0] >= w[1]) || fib.iter().any(|&c| c as usize >= extent) {
                            return Err(TensorError::IllegalFormatCombination(format!("level {k}: fiber {p} unsorted or out of range")));
                        }
                    }
                }
                LevelFormat::Dense { size } if *size == 0 => {
                    return Err(TensorError::IllegalFormatCombination(format!("level {k}: dense size 0")));
                }
                LevelFormat::DenseBlockLeaf { .. } if k + 1 != self.levels.len() => {
                    return Err(TensorError::IllegalFormatCombination("blocked leaf must be innermost".into()));
                }
                _ => {}
            }
            parent = level.positions(parent);
        }
        if parent * self.block_volume() != self.values.len() {
            return Err(TensorError::IllegalFormatCombination("leaf positions differ from value count".into()));
        }
        Ok(())
    }

    /// COO text: extents line followed by `c0 .. ck value` lines in logical order.
    pub fn to_coo_text(&self) -> String {
        let mut s = String::new();
        let dims: Vec<String> = self.shape.iter().map(|n| n.to_string()).collect();
        s.push_str(&dims.join(" "));
        s.push('\n');
        let mut entries = self.entries();
        if self.block_shape().is_some() {
            entries.retain(|(_, v)| *v != 0.0);
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for (c, v) in entries {
            for x in c {
                let _ = write!(s, "{x} ");
            }
            let _ = writeln!(s, "{v:?}");
        }
        s
    }
}

/// Parses COO text into entries and a shape.
pub fn parse_coo_text(text: &str) -> Result<CooEntries, TensorError> {
    let mut shape: Option<Vec<usize>> = None;
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match &shape {
            None => {
                let dims = fields
                    .iter()
                    .map(|f| f.parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| TensorError::ParseError { line: line_no, msg: format!("bad extent: {e}") })?;
                shape = Some(dims);
            }
            Some(dims) => {
                if fields.len() != dims.len() + 1 {
                    return Err(TensorError::ParseError {
                        line: line_no,
                        msg: format!("expected {} coordinates and a value", dims.len()),
                    });
                }
                let coords = fields[..dims.len()]
                    .iter()
                    .map(|f| f.parse::<u32>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| TensorError::ParseError { line: line_no, msg: format!("bad coordinate: {e}") })?;
                let v = fields[dims.len()]
                    .parse::<f64>()
                    .map_err(|e| TensorError::ParseError { line: line_no, msg: format!("bad value: {e}") })?;
                entries.push((coords, v));
            }
        }
    }
    let shape = shape.ok_or(TensorError::ParseError { line: 1, msg: "missing extents line".into() })?;
    Ok((shape, entries))
}

pub fn load_tensor(path: &Path, name: &str, kinds: &[LevelKind], mode_order: &[usize]) -> Result<SparseTensor, TensorError> {
    let text = std::fs::read_to_string(path).map_err(|e| TensorError::IoError(format!("{}: {e}", path.display())))?;
    let (shape, entries) = parse_coo_text(&text)?;
    SparseTensor::from_coo(name, &entries, &shape, kinds, mode_order)
}

pub fn store_tensor(t: &SparseTensor, path: &Path) -> Result<(), TensorError> {
    std::fs::write(path, t.to_coo_text()).map_err(|e| TensorError::IoError(format!("{}: {e}", path.display())))
}

/// CSR-style kinds: dense outermost, compressed below.
pub fn csr_kinds(order: usize) -> Vec<LevelKind> {
    (0..order).map(|k| if k == 0 { LevelKind::Dense } else { LevelKind::Compressed }).collect()
}

pub fn identity_order(order: usize) -> Vec<usize> {
    (0..order).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use LevelKind::*;

    fn sample() -> Vec<(Vec<u32>, f64)> {
        vec![(vec![0, 0], 2.0), (vec![0, 2], 3.0), (vec![1, 1], 4.0)]
    }

    #[test]
    fn csr_layout() {
        let t = SparseTensor::from_coo("B", &sample(), &[2, 3], &[Dense, Compressed], &[0, 1]).unwrap();
        assert_eq!(t.levels[1], LevelFormat::Compressed { segments: vec![0, 2, 3], coordinates: vec![0, 2, 1] });
        assert_eq!(t.values, vec![2.0, 3.0, 4.0]);
        assert_eq!(t.to_dense(), DenseTensor::from_rows(&[&[2.0, 0.0, 3.0], &[0.0, 4.0, 0.0]]));
    }

    #[test]
    fn csc_layout() {
        let t = SparseTensor::from_coo("B", &sample(), &[2, 3], &[Dense, Compressed], &[1, 0]).unwrap();
        assert_eq!(t.levels[1], LevelFormat::Compressed { segments: vec![0, 1, 2, 3], coordinates: vec![0, 1, 0] });
        assert_eq!(t.values, vec![2.0, 4.0, 3.0]);
    }

    #[test]
    fn empty_csr() {
        let t = SparseTensor::from_coo("E", &[], &[2, 3], &[Dense, Compressed], &[0, 1]).unwrap();
        assert_eq!(t.levels[1], LevelFormat::Compressed { segments: vec![0, 0, 0], coordinates: vec![] });
        assert_eq!(SparseTensor::from_coo("E", &[], &[2, 2], &[Dense, Compressed], &[0, 1]).unwrap().to_dense().data, vec![0.0; 4]);
    }

    #[test]
    fn construction_errors() {
        let dup = vec![(vec![0, 0], 1.0), (vec![0, 0], 2.0)];
        assert!(matches!(
            SparseTensor::from_coo("A", &dup, &[2, 2], &[Dense, Compressed], &[0, 1]),
            Err(TensorError::DuplicateCoordinate(_))
        ));
        let oob = vec![(vec![0, 5], 1.0)];
        assert!(matches!(
            SparseTensor::from_coo("A", &oob, &[2, 2], &[Dense, Compressed], &[0, 1]),
            Err(TensorError::CoordinateOutOfBounds { .. })
        ));
        assert!(matches!(
            SparseTensor::from_coo("A", &[], &[2, 2], &[Coordinate, Compressed], &[0, 1]),
            Err(TensorError::IllegalFormatCombination(_))
        ));
    }

    #[test]
    fn explicit_zero_is_stored() {
        let t = SparseTensor::from_coo("A", &[(vec![1], 0.0)], &[3], &[Compressed], &[0]).unwrap();
        assert_eq!(t.values, vec![0.0]);
        assert_eq!(t.entries().len(), 1);
    }

    #[test]
    fn singleton_level() {
        let e = vec![(vec![0, 2], 1.0), (vec![2, 1], 5.0)];
        let t = SparseTensor::from_coo("P", &e, &[3, 3], &[Compressed, Coordinate], &[0, 1]).unwrap();
        assert_eq!(t.levels[1], LevelFormat::Coordinate { coordinates: vec![2, 1] });
        assert_eq!(t.entries(), e);
        let two = vec![(vec![0, 1], 1.0), (vec![0, 2], 1.0)];
        assert!(SparseTensor::from_coo("P", &two, &[3, 3], &[Compressed, Coordinate], &[0, 1]).is_err());
    }

    #[test]
    fn permute_preserves_dense() {
        let t = SparseTensor::from_coo("B", &sample(), &[2, 3], &[Dense, Compressed], &[0, 1]).unwrap();
        let p = t.permute_modes(&[1, 0]).unwrap();
        assert_eq!(p.to_dense(), t.to_dense());
        assert_eq!(t.permute_modes(&[0, 1]).unwrap(), t);
    }

    #[test]
    fn blocking() {
        let d = DenseTensor::from_rows(&[&[1.0, 2.0, 0.0, 0.0], &[3.0, 4.0, 0.0, 0.0], &[0.0; 4], &[0.0; 4]]);
        let t = SparseTensor::from_dense("T", &d, &[Dense, Compressed], &[0, 1]).unwrap();
        let b = t.block(&[2, 2]).unwrap();
        assert_eq!(b.leaf_positions(), 1);
        assert_eq!(b.values, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(b.to_dense(), d);
        b.check().unwrap();

        let mut diag = DenseTensor::zeros(&[4, 4]);
        for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1), (2, 2), (2, 3), (3, 2), (3, 3)] {
            diag.set(&[r, c], 1.0 + r as f64);
        }
        let bd = SparseTensor::from_dense("D", &diag, &[Dense, Compressed], &[0, 1]).unwrap().block(&[2, 2]).unwrap();
        assert_eq!(bd.leaf_positions(), 2);
        assert_eq!(bd.unblock(&[Dense, Compressed]).unwrap().to_dense(), diag);

        let zero = SparseTensor::from_coo("Z", &[], &[4, 4], &[Dense, Compressed], &[0, 1]).unwrap().block(&[2, 2]).unwrap();
        assert_eq!(zero.leaf_positions(), 0);
        assert!(matches!(t.block(&[3, 2]), Err(TensorError::IndivisibleExtent { .. })));
    }

    #[test]
    fn coo_text() {
        let (shape, entries) = parse_coo_text("2 3\n0 0 2\n0 2 3\n1 1 4\n").unwrap();
        let t = SparseTensor::from_coo("B", &entries, &shape, &[Dense, Compressed], &[0, 1]).unwrap();
        assert_eq!(t.values, vec![2.0, 3.0, 4.0]);
        let (s2, e2) = parse_coo_text(&t.to_coo_text()).unwrap();
        assert_eq!((s2, e2), (shape, entries));
        assert_eq!(parse_coo_text("2 3\n0 x 1\n"), Err(TensorError::ParseError { line: 2, msg: "bad coordinate: invalid digit found in string".into() }));
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("sparsefuse-tensor-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("b.coo");
        let t = SparseTensor::from_coo("B", &sample(), &[2, 3], &[Dense, Compressed], &[0, 1]).unwrap();
        store_tensor(&t, &path).unwrap();
        assert_eq!(load_tensor(&path, "B", &[Dense, Compressed], &[0, 1]).unwrap(), t);
        assert!(matches!(load_tensor(&dir.join("missing.coo"), "B", &[Dense], &[0]), Err(TensorError::IoError(_))));
        std::fs::remove_dir_all(&dir).ok();
    }
}
