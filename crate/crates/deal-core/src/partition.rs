//! Grid layout and data placement.
//!
//! A `P x M` grid assigns machine `(p, m)` the id `p * M + m`. Row group `p`
//! owns a contiguous range of nodes (graph rows) and replica `m` inside the
//! group owns a contiguous slice of the feature dimension, so machine
//! `(p, m)` holds the dense tile `rows node_range(p) x cols feature_range(m)`
//! plus a replica of row group `p`'s sparse block.

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Half-open range of node ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRange {
    pub start: usize,
    pub end: usize,
}

impl NodeRange {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, id: usize) -> bool {
        id >= self.start && id < self.end
    }
}

/// Split `[0, total)` into `parts` contiguous ranges whose sizes differ by at
/// most one, larger ranges first.
fn ceil_split(total: usize, parts: usize, i: usize) -> NodeRange {
    let q = total / parts;
    let rem = total % parts;
    let start = i * q + i.min(rem);
    let len = q + usize::from(i < rem);
    NodeRange { start, end: start + len }
}

/// The machine grid: `p` row groups of `m` feature replicas over a graph
/// with `node_count` nodes and `feat_dim` feature dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridConfig {
    p: usize,
    m: usize,
    node_count: usize,
    feat_dim: usize,
}

impl GridConfig {
    pub fn new(p: usize, m: usize, node_count: usize, feat_dim: usize) -> Result<Self> {
        if p == 0 || m == 0 {
            return Err(Error::Config(format!("grid must be at least 1x1, got {p}x{m}")));
        }
        Ok(GridConfig { p, m, node_count, feat_dim })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn machines(&self) -> usize {
        self.p * self.m
    }

    pub fn machine_id(&self, p: usize, m: usize) -> usize {
        debug_assert!(p < self.p && m < self.m);
        p * self.m + m
    }

    pub fn row_group(&self, machine: usize) -> usize {
        machine / self.m
    }

    pub fn replica(&self, machine: usize) -> usize {
        machine % self.m
    }

    /// Node rows owned by row group `p`. Empty when there are more row
    /// groups than nodes.
    pub fn node_range(&self, p: usize) -> NodeRange {
        assert!(p < self.p);
        ceil_split(self.node_count, self.p, p)
    }

    /// Feature columns owned by replica `m`.
    pub fn feature_range(&self, m: usize) -> NodeRange {
        assert!(m < self.m);
        ceil_split(self.feat_dim, self.m, m)
    }

    /// Feature columns of replica `m` for an arbitrary width (used for
    /// per-layer output dimensions).
    pub fn feature_range_of(&self, width: usize, m: usize) -> NodeRange {
        assert!(m < self.m);
        ceil_split(width, self.m, m)
    }

    /// Sub-range `j` of `range` when a row group's rows are further split
    /// `m` ways (the row-chunk layout used inside distributed GEMM).
    pub fn row_chunk(&self, range: NodeRange, j: usize) -> NodeRange {
        let inner = ceil_split(range.len(), self.m, j);
        NodeRange { start: range.start + inner.start, end: range.start + inner.end }
    }

    /// Row group that owns node `id`.
    pub fn owner_of(&self, id: usize) -> usize {
        debug_assert!(id < self.node_count);
        let q = self.node_count / self.p;
        let rem = self.node_count % self.p;
        let fat = rem * (q + 1);
        if id < fat {
            id / (q + 1)
        } else {
            rem + (id - fat) / q
        }
    }
}

// ---------------------------------------------------------------------------
// Tiles
// ---------------------------------------------------------------------------

/// One machine's dense tile: `rows` of the node space by `cols` of the
/// feature space, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorTile<T> {
    pub rows: NodeRange,
    pub cols: NodeRange,
    pub data: DenseMatrix<T>,
}

impl<T: Scalar> TensorTile<T> {
    pub fn zeros(rows: NodeRange, cols: NodeRange) -> Self {
        TensorTile { rows, cols, data: DenseMatrix::zeros(rows.len(), cols.len()) }
    }

    /// Row of global node `id` within this tile.
    pub fn node_row(&self, id: usize) -> &[T] {
        debug_assert!(self.rows.contains(id));
        self.data.row(id - self.rows.start)
    }
}

/// Split a full `node_count x feat_dim` matrix into the canonical tiles.
pub fn scatter_tiles<T: Scalar>(matrix: &DenseMatrix<T>, grid: &GridConfig) -> Result<Vec<TensorTile<T>>> {
    if matrix.rows() != grid.node_count() || matrix.cols() != grid.feat_dim() {
        return Err(Error::Shape(format!(
            "matrix {}x{} does not match grid {}x{}",
            matrix.rows(),
            matrix.cols(),
            grid.node_count(),
            grid.feat_dim()
        )));
    }
    let mut tiles = Vec::with_capacity(grid.machines());
    for p in 0..grid.p() {
        let rows = grid.node_range(p);
        for m in 0..grid.m() {
            let cols = grid.feature_range(m);
            let mut tile = TensorTile::zeros(rows, cols);
            for (i, r) in (rows.start..rows.end).enumerate() {
                tile.data.row_mut(i).copy_from_slice(&matrix.row(r)[cols.start..cols.end]);
            }
            tiles.push(tile);
        }
    }
    Ok(tiles)
}

/// Reassemble tiles produced by [`scatter_tiles`] (or by a primitive that
/// preserves the canonical layout) into one matrix. Bit-exact round trip.
pub fn gather_tiles<T: Scalar>(tiles: &[TensorTile<T>], grid: &GridConfig) -> Result<DenseMatrix<T>> {
    if tiles.len() != grid.machines() {
        return Err(Error::Shape(format!(
            "expected {} tiles, got {}",
            grid.machines(),
            tiles.len()
        )));
    }
    let width: usize = (0..grid.m()).map(|m| tiles[m].cols.len()).sum();
    let mut out = DenseMatrix::zeros(grid.node_count(), width);
    for p in 0..grid.p() {
        for m in 0..grid.m() {
            let tile = &tiles[grid.machine_id(p, m)];
            if tile.rows != grid.node_range(p) {
                return Err(Error::Shape(format!(
                    "tile ({p}, {m}) covers rows {:?}, expected {:?}",
                    tile.rows,
                    grid.node_range(p)
                )));
            }
            for (i, r) in (tile.rows.start..tile.rows.end).enumerate() {
                out.row_mut(r)[tile.cols.start..tile.cols.end].copy_from_slice(tile.data.row(i));
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Edge values
// ---------------------------------------------------------------------------

/// Per-non-zero values aligned with a sparse block's CSR order. `width` is
/// either 1 (a scalar weight broadcast over all feature columns, as in GCN
/// mean aggregation) or the machine's local feature-slice width (so
/// three-tensor SPMM never ships edge values).
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeValues<T> {
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> EdgeValues<T> {
    pub fn scalar(values: Vec<T>) -> Self {
        EdgeValues { width: 1, values }
    }

    pub fn sliced(width: usize, values: Vec<T>) -> Result<Self> {
        if width == 0 || values.len() % width != 0 {
            return Err(Error::Shape(format!(
                "{} edge values do not tile width {width}",
                values.len()
            )));
        }
        Ok(EdgeValues { width, values })
    }

    /// All edges weighted 1.0 (plain adjacency).
    pub fn ones(nnz: usize) -> Self {
        EdgeValues { width: 1, values: vec![T::one(); nnz] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn value(&self, e: usize) -> &[T] {
        &self.values[e * self.width..(e + 1) * self.width]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Weight applied to feature column `local_col` by edge `e`. Scalar
    /// values broadcast across all columns.
    #[inline]
    pub fn weight(&self, e: usize, local_col: usize) -> T {
        if self.width == 1 {
            self.values[e]
        } else {
            debug_assert!(local_col < self.width);
            self.values[e * self.width + local_col]
        }
    }
}

// ---------------------------------------------------------------------------
// Feature location table
// ---------------------------------------------------------------------------

/// Where each node's raw feature record lives before redistribution: the
/// machine that loaded it and the record index within that machine's shard.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLocationTable {
    entries: Vec<(usize, usize)>,
}

impl FeatureLocationTable {
    /// Build from each loader's list of node ids, in shard record order.
    /// Every node must appear exactly once across all shards.
    pub fn from_shard_ids(node_count: usize, shard_ids: &[Vec<usize>]) -> Result<Self> {
        let mut entries = vec![(usize::MAX, usize::MAX); node_count];
        for (loader, ids) in shard_ids.iter().enumerate() {
            for (offset, &id) in ids.iter().enumerate() {
                if id >= node_count {
                    return Err(Error::NodeOutOfBounds {
                        id: id as u64,
                        node_count: node_count as u64,
                    });
                }
                if entries[id].0 != usize::MAX {
                    return Err(Error::Config(format!(
                        "node {id} appears in shards {} and {loader}",
                        entries[id].0
                    )));
                }
                entries[id] = (loader, offset);
            }
        }
        if let Some(missing) = entries.iter().position(|&(l, _)| l == usize::MAX) {
            return Err(Error::Config(format!("node {missing} missing from all feature shards")));
        }
        Ok(FeatureLocationTable { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(loader machine, record offset)` for a node.
    pub fn locate(&self, node: usize) -> (usize, usize) {
        self.entries[node]
    }
}

/// Full-width feature rows as loaded on one machine, in arbitrary row order.
/// `ids[i]` names the node whose features sit in `data` row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureShard<T> {
    pub ids: Vec<usize>,
    pub data: DenseMatrix<T>,
}

impl<T: Scalar> FeatureShard<T> {
    pub fn new(ids: Vec<usize>, data: DenseMatrix<T>) -> Result<Self> {
        if ids.len() != data.rows() {
            return Err(Error::Shape(format!(
                "{} shard ids for {} feature rows",
                ids.len(),
                data.rows()
            )));
        }
        Ok(FeatureShard { ids, data })
    }
}

/// Deal the rows of a full feature matrix into `parts` contiguous shards of
/// `order` (a permutation of node ids), mimicking how loaders end up with
/// arbitrary slices of the input files.
pub fn shard_features<T: Scalar>(
    matrix: &DenseMatrix<T>,
    order: &[usize],
    parts: usize,
) -> Result<Vec<FeatureShard<T>>> {
    if order.len() != matrix.rows() {
        return Err(Error::Shape(format!(
            "order of {} ids over {} rows",
            order.len(),
            matrix.rows()
        )));
    }
    let mut shards = Vec::with_capacity(parts);
    for part in 0..parts {
        let range = ceil_split(order.len(), parts, part);
        let ids: Vec<usize> = order[range.start..range.end].to_vec();
        let mut data = DenseMatrix::zeros(ids.len(), matrix.cols());
        for (i, &id) in ids.iter().enumerate() {
            data.row_mut(i).copy_from_slice(matrix.row(id));
        }
        shards.push(FeatureShard { ids, data });
    }
    Ok(shards)
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

/// JSON description of a grid layout, written by the CLI `partition`
/// subcommand and stable across runs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct PartitionManifest {
    pub p: usize,
    pub m: usize,
    pub node_count: usize,
    pub feat_dim: usize,
    pub node_ranges: Vec<NodeRange>,
    pub feature_ranges: Vec<NodeRange>,
    pub machines: Vec<MachineEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct MachineEntry {
    pub id: usize,
    pub row_group: usize,
    pub replica: usize,
}

impl PartitionManifest {
    pub fn from_grid(grid: &GridConfig) -> Self {
        PartitionManifest {
            p: grid.p(),
            m: grid.m(),
            node_count: grid.node_count(),
            feat_dim: grid.feat_dim(),
            node_ranges: (0..grid.p()).map(|p| grid.node_range(p)).collect(),
            feature_ranges: (0..grid.m()).map(|m| grid.feature_range(m)).collect(),
            machines: (0..grid.machines())
                .map(|id| MachineEntry {
                    id,
                    row_group: id / grid.m(),
                    replica: id % grid.m(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("bad manifest: {e}")))
    }
}
