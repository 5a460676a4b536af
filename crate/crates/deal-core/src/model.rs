//! Layer-by-layer inference drivers composed from the distributed
//! primitives, plus their single-machine serial references.
//!
//! Both models follow the same per-layer shape: a dense projection of the
//! previous layer's embeddings, then a sparse aggregation over that layer's
//! one-hop graph. The mean-aggregation model weights every in-neighbor
//! (self included) equally; the attention model scores each edge per head
//! with a dot product of the projected endpoint rows, normalizes scores
//! with an edge softmax, and averages the heads after the last layer.
//! Layers end on a global barrier, so layer `l+1` starts nowhere before
//! every machine finished layer `l`.

use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::CsrGraph;
use crate::partition::{
    gather_tiles, EdgeValues, FeatureLocationTable, FeatureShard, GridConfig, NodeRange,
    TensorTile,
};
use crate::primitives::{
    dist_gemm, dist_gemm_fused, dist_sddmm_split, dist_spmm, local_gemm, local_sddmm, local_spmm,
    redistribute_features, SpmmOptions,
};
use crate::sampler::{full_graph_layers, sample_layers, LayerGraphs};
use crate::scalar::Scalar;
use crate::transport::WorkerCtx;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gcn,
    Gat,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(ModelKind::Gcn),
            "gat" => Ok(ModelKind::Gat),
            other => Err(Error::Config(format!("unknown model '{other}'"))),
        }
    }
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Gcn => "gcn",
            ModelKind::Gat => "gat",
        }
    }
}

/// Mean-aggregation model: per layer, project then average in-neighbors.
/// `weights[l]` maps the layer's input width to its output width.
#[derive(Debug, Clone)]
pub struct GcnParams<T> {
    pub weights: Vec<DenseMatrix<T>>,
}

/// Attention model: `weights[l]` packs the per-head projections side by
/// side, head `h` owning the contiguous column span `h*dh..(h+1)*dh` of the
/// layer's `heads * dh` output. Intermediate layers keep heads concatenated;
/// the last layer averages them down to `dh` columns.
#[derive(Debug, Clone)]
pub struct GatParams<T> {
    pub weights: Vec<DenseMatrix<T>>,
    pub heads: usize,
    pub leaky_slope: f64,
}

#[derive(Debug, Clone)]
pub enum ModelParams<T> {
    Gcn(GcnParams<T>),
    Gat(GatParams<T>),
}

fn check_chain<T: Scalar>(weights: &[DenseMatrix<T>], input_dim: usize) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::Config("a model needs at least one layer".into()));
    }
    let mut dim = input_dim;
    for (l, w) in weights.iter().enumerate() {
        if w.rows() != dim {
            return Err(Error::Shape(format!(
                "layer {l} expects {} input columns, previous layer produces {dim}",
                w.rows()
            )));
        }
        dim = w.cols();
    }
    Ok(())
}

impl<T: Scalar> ModelParams<T> {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Gcn(_) => ModelKind::Gcn,
            ModelParams::Gat(_) => ModelKind::Gat,
        }
    }

    pub fn layer_count(&self) -> usize {
        match self {
            ModelParams::Gcn(p) => p.weights.len(),
            ModelParams::Gat(p) => p.weights.len(),
        }
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        match self {
            ModelParams::Gcn(p) => check_chain(&p.weights, input_dim),
            ModelParams::Gat(p) => {
                check_chain(&p.weights, input_dim)?;
                if p.heads == 0 {
                    return Err(Error::Config("at least one head is required".into()));
                }
                for (l, w) in p.weights.iter().enumerate() {
                    if w.cols() % p.heads != 0 {
                        return Err(Error::Shape(format!(
                            "layer {l} width {} is not divisible into {} heads",
                            w.cols(),
                            p.heads
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Layer pieces
// ---------------------------------------------------------------------------

/// Mean-aggregation edge weights: every non-zero of row `r` gets
/// `1 / |row r|`, so each row's weights sum to 1. Rows are never empty
/// because sampled layers always carry self-loops.
pub fn normalize_adjacency<T: Scalar>(block: &CsrGraph) -> Result<EdgeValues<T>> {
    let mut vals = Vec::with_capacity(block.nnz());
    for r in 0..block.row_count() {
        let row = block.local_row(r);
        if row.is_empty() {
            return Err(Error::Integrity(format!(
                "row {} has no in-neighbors, not even a self-loop",
                block.row_start() + r
            )));
        }
        let w = <T as Scalar>::from_f64(1.0 / row.len() as f64);
        vals.extend(std::iter::repeat(w).take(row.len()));
    }
    Ok(EdgeValues::scalar(vals))
}

/// Per destination row and head, softmax over the row's non-zero scores
/// with the row maximum subtracted first so large scores cannot overflow.
/// Scores live in the block's CSR order, so the whole pass is local.
pub fn edge_softmax<T: Scalar>(block: &CsrGraph, scores: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if scores.rows() != block.nnz() {
        return Err(Error::Shape(format!(
            "{} score rows for {} non-zeros",
            scores.rows(),
            block.nnz()
        )));
    }
    let heads = scores.cols();
    let offsets = block.row_offsets();
    let mut out = DenseMatrix::zeros(scores.rows(), heads);
    for r in 0..block.row_count() {
        let span = offsets[r]..offsets[r + 1];
        for h in 0..heads {
            let mut max = T::neg_infinity();
            for e in span.clone() {
                max = max.max(scores.get(e, h));
            }
            let mut sum = T::zero();
            for e in span.clone() {
                let v = (scores.get(e, h) - max).exp();
                out.set(e, h, v);
                sum = sum + v;
            }
            for e in span.clone() {
                let v = out.get(e, h) / sum;
                out.set(e, h, v);
            }
        }
    }
    Ok(out)
}

pub fn relu_inplace<T: Scalar>(m: &mut DenseMatrix<T>) {
    for v in m.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

pub fn leaky_relu_inplace<T: Scalar>(m: &mut DenseMatrix<T>, slope: f64) {
    let slope = <T as Scalar>::from_f64(slope);
    for v in m.data_mut() {
        if *v < T::zero() {
            *v = *v * slope;
        }
    }
}

/// Expand per-head attention to per-feature-column edge values for the
/// feature columns `cols` of a `d_total`-wide tile: column `j` uses the
/// weight of the head owning span `j`.
pub fn attention_edge_values<T: Scalar>(
    alpha: &DenseMatrix<T>,
    d_total: usize,
    cols: NodeRange,
) -> Result<EdgeValues<T>> {
    let heads = alpha.cols();
    if heads == 0 || d_total % heads != 0 {
        return Err(Error::Shape(format!("{heads} heads do not divide width {d_total}")));
    }
    if cols.is_empty() {
        return Ok(EdgeValues::ones(alpha.rows()));
    }
    let dh = d_total / heads;
    let mut vals = Vec::with_capacity(alpha.rows() * cols.len());
    for e in 0..alpha.rows() {
        for j in cols.start..cols.end {
            vals.push(alpha.get(e, j / dh));
        }
    }
    EdgeValues::sliced(cols.len(), vals)
}

/// `heads*dh x dh` matrix averaging the per-head column spans.
pub fn head_average_matrix<T: Scalar>(heads: usize, dh: usize) -> DenseMatrix<T> {
    let mut a = DenseMatrix::zeros(heads * dh, dh);
    let w = <T as Scalar>::from_f64(1.0 / heads as f64);
    for h in 0..heads {
        for j in 0..dh {
            a.set(h * dh + j, j, w);
        }
    }
    a
}

// ---------------------------------------------------------------------------
// Distributed drivers
// ---------------------------------------------------------------------------

/// How a worker receives its share of H^(0).
pub enum ModelInput<'a, T> {
    /// The canonical tile for this machine.
    Tile(&'a TensorTile<T>),
    /// An arbitrary-order loader shard. The fused path serves the first
    /// projection straight from the shards; otherwise the driver first
    /// redistributes the rows into canonical tiles.
    Shard {
        shard: &'a FeatureShard<T>,
        table: &'a FeatureLocationTable,
        fuse_first_layer: bool,
    },
}

fn first_projection<T: Scalar>(
    ctx: &WorkerCtx,
    input: &ModelInput<'_, T>,
    w: &DenseMatrix<T>,
) -> Result<TensorTile<T>> {
    match input {
        ModelInput::Tile(tile) => dist_gemm(ctx, tile, w),
        ModelInput::Shard { shard, table, fuse_first_layer: true } => {
            dist_gemm_fused(ctx, shard, table, w)
        }
        ModelInput::Shard { shard, fuse_first_layer: false, .. } => {
            let tile = redistribute_features(ctx, shard)?;
            dist_gemm(ctx, &tile, w)
        }
    }
}

/// This worker's per-layer one-hop graphs for its own row block: sampled
/// with `fanout`, or the full block when `fanout` is `None`. Sampling is
/// keyed by (seed, node id), so blocks of the same graph always agree
/// regardless of the grid.
pub fn worker_layers(
    ctx: &WorkerCtx,
    full: &CsrGraph,
    k: usize,
    fanout: Option<usize>,
    seed: u64,
) -> Result<LayerGraphs> {
    let grid = ctx.grid();
    let range = grid.node_range(grid.row_group(ctx.machine()));
    let block = full.slice_rows(range.start, range.end);
    match fanout {
        Some(f) => sample_layers(&block, k, f, seed),
        None => full_graph_layers(&Arc::new(block), k),
    }
}

fn expect_layer_blocks(ctx: &WorkerCtx, layers: &LayerGraphs, k: usize) -> Result<()> {
    if layers.layer_count() != k {
        return Err(Error::Shape(format!(
            "{} layer graphs for {k} weight layers",
            layers.layer_count()
        )));
    }
    let grid = ctx.grid();
    let range = grid.node_range(grid.row_group(ctx.machine()));
    for g in &layers.layers {
        if g.row_start() != range.start || g.row_count() != range.len() {
            return Err(Error::Shape(format!(
                "layer block covers rows {}..{}, machine owns {}..{}",
                g.row_start(),
                g.row_start() + g.row_count(),
                range.start,
                range.end
            )));
        }
    }
    Ok(())
}

/// Mean-aggregation inference for this worker: per layer, distributed
/// projection, then distributed aggregation with `1/|row|` weights, with a
/// rectifier between layers and none after the last. Returns the machine's
/// canonical output tile.
pub fn gcn_infer<T: Scalar>(
    ctx: &WorkerCtx,
    layers: &LayerGraphs,
    input: &ModelInput<'_, T>,
    params: &GcnParams<T>,
    opts: &SpmmOptions,
) -> Result<TensorTile<T>> {
    let k = params.weights.len();
    expect_layer_blocks(ctx, layers, k)?;
    let mut h: Option<TensorTile<T>> = None;
    for (l, w) in params.weights.iter().enumerate() {
        let projected = match &h {
            None => first_projection(ctx, input, w)?,
            Some(tile) => dist_gemm(ctx, tile, w)?,
        };
        let block = layers.layers[l].as_ref();
        let mean = normalize_adjacency(block)?;
        let mut agg = dist_spmm(ctx, block, &mean, &projected, opts)?;
        if l + 1 < k {
            relu_inplace(&mut agg.data);
        }
        ctx.barrier()?;
        h = Some(agg);
    }
    let out = h.expect("checked non-empty");
    if out.data.has_non_finite() {
        return Err(Error::Integrity("non-finite value in output embeddings".into()));
    }
    Ok(out)
}

/// Attention inference for this worker: per layer, distributed projection,
/// per-edge multi-head scores, leaky rectifier, edge softmax, then
/// attention-weighted aggregation. Intermediate layers rectify and keep
/// heads concatenated; the last layer averages heads instead.
pub fn gat_infer<T: Scalar>(
    ctx: &WorkerCtx,
    layers: &LayerGraphs,
    input: &ModelInput<'_, T>,
    params: &GatParams<T>,
    opts: &SpmmOptions,
) -> Result<TensorTile<T>> {
    let k = params.weights.len();
    expect_layer_blocks(ctx, layers, k)?;
    if params.heads == 0 {
        return Err(Error::Config("at least one head is required".into()));
    }
    let mut h: Option<TensorTile<T>> = None;
    for (l, w) in params.weights.iter().enumerate() {
        let d_total = w.cols();
        if d_total % params.heads != 0 {
            return Err(Error::Shape(format!(
                "layer {l} width {d_total} is not divisible into {} heads",
                params.heads
            )));
        }
        let projected = match &h {
            None => first_projection(ctx, input, w)?,
            Some(tile) => dist_gemm(ctx, tile, w)?,
        };
        let block = layers.layers[l].as_ref();
        let mut scores = dist_sddmm_split(ctx, block, &projected, d_total, params.heads)?;
        leaky_relu_inplace(&mut scores, params.leaky_slope);
        let alpha = edge_softmax(block, &scores)?;
        let attn = attention_edge_values(&alpha, d_total, projected.cols)?;
        let mut agg = dist_spmm(ctx, block, &attn, &projected, opts)?;
        if l + 1 < k {
            relu_inplace(&mut agg.data);
        } else {
            let average = head_average_matrix(params.heads, d_total / params.heads);
            agg = dist_gemm(ctx, &agg, &average)?;
        }
        ctx.barrier()?;
        h = Some(agg);
    }
    let out = h.expect("checked non-empty");
    if out.data.has_non_finite() {
        return Err(Error::Integrity("non-finite value in output embeddings".into()));
    }
    Ok(out)
}

pub fn infer<T: Scalar>(
    ctx: &WorkerCtx,
    layers: &LayerGraphs,
    input: &ModelInput<'_, T>,
    params: &ModelParams<T>,
    opts: &SpmmOptions,
) -> Result<TensorTile<T>> {
    match params {
        ModelParams::Gcn(p) => gcn_infer(ctx, layers, input, p, opts),
        ModelParams::Gat(p) => gat_infer(ctx, layers, input, p, opts),
    }
}

/// Reassemble per-machine output tiles and reject non-finite values.
pub fn collect_embeddings<T: Scalar>(
    tiles: &[TensorTile<T>],
    grid: &GridConfig,
) -> Result<DenseMatrix<T>> {
    let out = gather_tiles(tiles, grid)?;
    if out.has_non_finite() {
        return Err(Error::Integrity("non-finite value in output embeddings".into()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Serial references
// ---------------------------------------------------------------------------

/// Single-machine reference for the mean-aggregation model over the same
/// layer graphs (full blocks). The distributed driver must match this
/// within floating-point reassociation noise.
pub fn serial_gcn<T: Scalar>(
    layers: &LayerGraphs,
    features: &DenseMatrix<T>,
    params: &GcnParams<T>,
) -> Result<DenseMatrix<T>> {
    let k = params.weights.len();
    if layers.layer_count() != k {
        return Err(Error::Shape(format!("{} layer graphs for {k} layers", layers.layer_count())));
    }
    let mut h = features.clone();
    for (l, w) in params.weights.iter().enumerate() {
        let projected = local_gemm(&h, w);
        let block = layers.layers[l].as_ref();
        let mean = normalize_adjacency(block)?;
        let mut agg = local_spmm(block, &mean, &projected);
        if l + 1 < k {
            relu_inplace(&mut agg);
        }
        h = agg;
    }
    Ok(h)
}

/// Single-machine reference for the attention model.
pub fn serial_gat<T: Scalar>(
    layers: &LayerGraphs,
    features: &DenseMatrix<T>,
    params: &GatParams<T>,
) -> Result<DenseMatrix<T>> {
    let k = params.weights.len();
    if layers.layer_count() != k {
        return Err(Error::Shape(format!("{} layer graphs for {k} layers", layers.layer_count())));
    }
    let mut h = features.clone();
    for (l, w) in params.weights.iter().enumerate() {
        let d_total = w.cols();
        let projected = local_gemm(&h, w);
        let block = layers.layers[l].as_ref();
        let mut scores = local_sddmm(block, &projected, params.heads)?;
        leaky_relu_inplace(&mut scores, params.leaky_slope);
        let alpha = edge_softmax(block, &scores)?;
        let attn = attention_edge_values(&alpha, d_total, NodeRange { start: 0, end: d_total })?;
        let mut agg = local_spmm(block, &attn, &projected);
        if l + 1 < k {
            relu_inplace(&mut agg);
        } else {
            agg = local_gemm(&agg, &head_average_matrix(params.heads, d_total / params.heads));
        }
        h = agg;
    }
    Ok(h)
}

pub fn serial_infer<T: Scalar>(
    layers: &LayerGraphs,
    features: &DenseMatrix<T>,
    params: &ModelParams<T>,
) -> Result<DenseMatrix<T>> {
    match params {
        ModelParams::Gcn(p) => serial_gcn(layers, features, p),
        ModelParams::Gat(p) => serial_gat(layers, features, p),
    }
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

/// Deterministic uniform[-0.1, 0.1] weight chain: `dims[l] x dims[l+1]` per
/// layer, drawn in layer order from one seeded stream.
pub fn seeded_weights<T: Scalar>(dims: &[usize], seed: u64) -> Result<Vec<DenseMatrix<T>>> {
    if dims.len() < 2 {
        return Err(Error::Config("a weight chain needs at least two dims".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dims.windows(2)
        .map(|pair| {
            let vals: Vec<T> = (0..pair[0] * pair[1])
                .map(|_| <T as Scalar>::from_f64(rng.gen_range(-0.1..0.1)))
                .collect();
            DenseMatrix::from_vec(pair[0], pair[1], vals)
        })
        .collect()
}

/// Default width chain: every hidden layer as wide as the input.
pub fn uniform_dims(input_dim: usize, layers: usize) -> Vec<usize> {
    vec![input_dim; layers + 1]
}

pub fn build_params<T: Scalar>(
    kind: ModelKind,
    weights: Vec<DenseMatrix<T>>,
    heads: usize,
) -> ModelParams<T> {
    match kind {
        ModelKind::Gcn => ModelParams::Gcn(GcnParams { weights }),
        ModelKind::Gat => {
            ModelParams::Gat(GatParams { weights, heads, leaky_slope: LEAKY_SLOPE })
        }
    }
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

const FEATURE_MAGIC: &[u8; 8] = b"DEALFEAT";
const PARAM_MAGIC: &[u8; 8] = b"DEALPARM";

/// Feature rows in shard order: magic, u64 row count, u32 width, then one
/// `(u64 node id, width x f32)` record per row. Record order is whatever
/// the shard holds; readers must not assume sorted ids.
pub fn write_features(path: &Path, shard: &FeatureShard<f32>) -> Result<()> {
    let n = shard.ids.len();
    let d = shard.data.cols();
    let mut buf = Vec::with_capacity(8 + 12 + n * (8 + d * 4));
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for (i, &id) in shard.ids.iter().enumerate() {
        buf.extend_from_slice(&(id as u64).to_le_bytes());
        for &v in shard.data.row(i) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_features(path: &Path) -> Result<FeatureShard<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() < 20 || &bytes[..8] != FEATURE_MAGIC {
        return Err(Error::Integrity(format!("{} is not a feature file", path.display())));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("sized")) as usize;
    let d = u32::from_le_bytes(bytes[16..20].try_into().expect("sized")) as usize;
    let record = 8 + d * 4;
    if bytes.len() != 20 + n * record {
        return Err(Error::Integrity(format!(
            "feature file holds {} bytes, header promises {}",
            bytes.len(),
            20 + n * record
        )));
    }
    let mut ids = Vec::with_capacity(n);
    let mut vals = Vec::with_capacity(n * d);
    for r in 0..n {
        let at = 20 + r * record;
        ids.push(u64::from_le_bytes(bytes[at..at + 8].try_into().expect("sized")) as usize);
        for j in 0..d {
            let at = at + 8 + j * 4;
            vals.push(f32::from_le_bytes(bytes[at..at + 4].try_into().expect("sized")));
        }
    }
    FeatureShard::new(ids, DenseMatrix::from_vec(n, d, vals)?)
}

/// JSON descriptor at the head of a parameter file. `dims` chains the layer
/// widths (`layers + 1` entries); for the attention model each hidden width
/// is the concatenation of all heads.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ParamHeader {
    pub model: String,
    pub layers: usize,
    pub dims: Vec<usize>,
    pub heads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ParamHeader {
    pub fn validate(&self) -> Result<()> {
        self.model.parse::<ModelKind>()?;
        if self.dims.len() != self.layers + 1 {
            return Err(Error::Config(format!(
                "{} dims for {} layers",
                self.dims.len(),
                self.layers
            )));
        }
        if self.layers == 0 {
            return Err(Error::Config("a model needs at least one layer".into()));
        }
        Ok(())
    }
}

/// Parameter file: magic, u32 JSON header length, the header, then the raw
/// f32 weight tensors row-major in layer order.
pub fn write_params(path: &Path, header: &ParamHeader, weights: &[DenseMatrix<f32>]) -> Result<()> {
    header.validate()?;
    if weights.len() != header.layers {
        return Err(Error::Shape(format!(
            "{} weight tensors for {} layers",
            weights.len(),
            header.layers
        )));
    }
    for (l, w) in weights.iter().enumerate() {
        if w.rows() != header.dims[l] || w.cols() != header.dims[l + 1] {
            return Err(Error::Shape(format!(
                "layer {l} tensor is {}x{}, dims demand {}x{}",
                w.rows(),
                w.cols(),
                header.dims[l],
                header.dims[l + 1]
            )));
        }
    }
    let json = serde_json::to_vec(header).map_err(|e| Error::Config(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(PARAM_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for w in weights {
        for &v in w.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_params(path: &Path) -> Result<(ParamHeader, Vec<DenseMatrix<f32>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() < 12 || &bytes[..8] != PARAM_MAGIC {
        return Err(Error::Integrity(format!("{} is not a parameter file", path.display())));
    }
    let jl = u32::from_le_bytes(bytes[8..12].try_into().expect("sized")) as usize;
    if bytes.len() < 12 + jl {
        return Err(Error::Integrity("parameter header truncated".into()));
    }
    let header: ParamHeader = serde_json::from_slice(&bytes[12..12 + jl])
        .map_err(|e| Error::Integrity(format!("parameter header: {e}")))?;
    header.validate()?;
    let mut at = 12 + jl;
    let mut weights = Vec::with_capacity(header.layers);
    for l in 0..header.layers {
        let (rows, cols) = (header.dims[l], header.dims[l + 1]);
        let need = rows * cols * 4;
        if bytes.len() < at + need {
            return Err(Error::Integrity(format!("layer {l} tensor truncated")));
        }
        let vals: Vec<f32> = bytes[at..at + need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("sized")))
            .collect();
        weights.push(DenseMatrix::from_vec(rows, cols, vals)?);
        at += need;
    }
    if at != bytes.len() {
        return Err(Error::Integrity("trailing bytes after parameter tensors".into()));
    }
    Ok((header, weights))
}
