//! Dense and sparse matrix primitives over the P x M machine grid.
//!
//! Every distributed routine here runs inside a worker closure, takes this
//! machine's slice of the inputs, and returns this machine's slice of the
//! output. Accumulation orders are fixed (ascending inner index, ascending
//! peer) so repeated runs and both transports produce identical bits.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::CsrGraph;
use crate::partition::{EdgeValues, FeatureLocationTable, FeatureShard, NodeRange, TensorTile};
use crate::pipeline::{partition_nonzeros, run_schedule, RowAccumulator, ScheduleKind};
use crate::scalar::Scalar;
use crate::transport::{
    decode_ids, decode_scalars, encode_ids, encode_scalars, id_width, Payload, Tag, WorkerCtx,
};

// ---------------------------------------------------------------------------
// Local kernels
// ---------------------------------------------------------------------------

/// `out += a * b`, accumulating each output element over ascending `k`.
pub fn gemm_accumulate<T: Scalar>(out: &mut DenseMatrix<T>, a: &DenseMatrix<T>, b: &DenseMatrix<T>) {
    assert_eq!(a.cols(), b.rows(), "inner dimensions differ");
    assert_eq!(out.rows(), a.rows(), "output rows differ");
    assert_eq!(out.cols(), b.cols(), "output cols differ");
    for i in 0..a.rows() {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (k, &aik) in arow.iter().enumerate() {
            let brow = b.row(k);
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o = *o + aik * bkj;
            }
        }
    }
}

pub fn local_gemm<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> DenseMatrix<T> {
    let mut out = DenseMatrix::zeros(a.rows(), b.cols());
    gemm_accumulate(&mut out, a, b);
    out
}

/// Sparse-times-dense for one row block against a full-height right-hand
/// side: `out[r] = sum_c w[e] * h[col(e)]` over the block's non-zeros in
/// CSR order. The reference the distributed paths are checked against.
pub fn local_spmm<T: Scalar>(
    block: &CsrGraph,
    weights: &EdgeValues<T>,
    h: &DenseMatrix<T>,
) -> DenseMatrix<T> {
    let d = h.cols();
    assert!(weights.width() == 1 || weights.width() == d, "edge value width mismatch");
    assert_eq!(weights.len(), block.nnz(), "one edge value per non-zero");
    let offsets = block.row_offsets();
    let cols = block.col_ids();
    let mut out = DenseMatrix::zeros(block.row_count(), d);
    for r in 0..block.row_count() {
        let orow = out.row_mut(r);
        for e in offsets[r]..offsets[r + 1] {
            let feat = h.row(cols[e]);
            for j in 0..d {
                orow[j] = orow[j] + weights.weight(e, j) * feat[j];
            }
        }
    }
    out
}

/// Per-edge multi-head dot products: for non-zero `e = (r, c)` and head `h`,
/// the dot of rows `r` and `c` over that head's contiguous column span.
/// Output is nnz x heads in the block's CSR order.
pub fn local_sddmm<T: Scalar>(
    block: &CsrGraph,
    h: &DenseMatrix<T>,
    heads: usize,
) -> Result<DenseMatrix<T>> {
    let d = h.cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("{heads} heads do not divide width {d}")));
    }
    let dh = d / heads;
    let offsets = block.row_offsets();
    let cols = block.col_ids();
    let mut out = DenseMatrix::zeros(block.nnz(), heads);
    for r in 0..block.row_count() {
        let dst = h.row(block.row_start() + r);
        for e in offsets[r]..offsets[r + 1] {
            let src = h.row(cols[e]);
            let orow = out.row_mut(e);
            for head in 0..heads {
                let mut acc = T::zero();
                for j in head * dh..(head + 1) * dh {
                    acc = acc + dst[j] * src[j];
                }
                orow[head] = acc;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Distributed GEMM
// ---------------------------------------------------------------------------

fn expect_tile_shape<T: Scalar>(
    ctx: &WorkerCtx,
    h: &TensorTile<T>,
    width: usize,
) -> Result<(usize, usize)> {
    let grid = ctx.grid();
    let p = grid.row_group(ctx.machine());
    let m = grid.replica(ctx.machine());
    let rows = grid.node_range(p);
    let cols = grid.feature_range_of(width, m);
    if h.rows != rows || h.cols != cols {
        return Err(Error::Shape(format!(
            "machine {} expects tile rows {}..{} cols {}..{}, got rows {}..{} cols {}..{}",
            ctx.machine(),
            rows.start,
            rows.end,
            cols.start,
            cols.end,
            h.rows.start,
            h.rows.end,
            h.cols.start,
            h.cols.end,
        )));
    }
    Ok((p, m))
}

/// Stage shared by the ring and fused GEMM paths: multiply this machine's
/// assembled full-width row chunk by `w`, then ring the output column
/// slices back so every replica ends with its slice of the whole row block.
fn gemm_scatter_result<T: Scalar>(
    ctx: &WorkerCtx,
    chunk: &DenseMatrix<T>,
    w: &DenseMatrix<T>,
) -> Result<TensorTile<T>> {
    let grid = ctx.grid();
    let p = grid.row_group(ctx.machine());
    let m = grid.replica(ctx.machine());
    let row_range = grid.node_range(p);
    let my_rows = grid.row_chunk(row_range, m);
    debug_assert_eq!(chunk.rows(), my_rows.len());
    let d_out = w.cols();
    let prod = local_gemm(chunk, w);

    let group: Vec<usize> = (0..grid.m()).map(|j| grid.machine_id(p, j)).collect();
    let mut blocks: Vec<Option<Payload>> = Vec::with_capacity(grid.m());
    for j in 0..grid.m() {
        if j == m {
            blocks.push(None);
            continue;
        }
        let cols_j = grid.feature_range_of(d_out, j);
        let mut vals = Vec::with_capacity(prod.rows() * cols_j.len());
        for i in 0..prod.rows() {
            vals.extend_from_slice(&prod.row(i)[cols_j.start..cols_j.end]);
        }
        blocks.push(Some(encode_scalars(&vals)));
    }
    let responses = ctx.ring_exchange(&group, Tag::PartialResult, blocks)?;

    let out_cols = grid.feature_range_of(d_out, m);
    let mut out = TensorTile::zeros(row_range, out_cols);
    for (i, r) in (my_rows.start..my_rows.end).enumerate() {
        out.data
            .row_mut(r - row_range.start)
            .copy_from_slice(&prod.row(i)[out_cols.start..out_cols.end]);
    }
    for j in 0..grid.m() {
        if j == m {
            continue;
        }
        let msg = responses[j].as_ref().expect("ring delivers one block per member");
        let vals: Vec<T> = decode_scalars(&msg.bytes);
        let rows_j = grid.row_chunk(row_range, j);
        let w_out = out_cols.len();
        if vals.len() != rows_j.len() * w_out {
            return Err(Error::Protocol {
                machine: ctx.machine(),
                msg: format!(
                    "result slice from replica {j} has {} values, expected {}",
                    vals.len(),
                    rows_j.len() * w_out
                ),
            });
        }
        for (i, r) in (rows_j.start..rows_j.end).enumerate() {
            out.data.row_mut(r - row_range.start).copy_from_slice(&vals[i * w_out..(i + 1) * w_out]);
        }
    }
    Ok(out)
}

/// Dense projection `H * W` with the feature dimension already split across
/// replicas. Replicas first ring full-width row chunks to each other
/// (receiving `(M-1) * N*D / (P*M^2)` values), multiply once, then ring the
/// output column slices back, for total traffic `2 * (M-1) * N*D / (P*M^2)`
/// per machine when the splits divide evenly. No partial sums ever travel,
/// so the result matches a serial multiply bit for bit.
pub fn dist_gemm<T: Scalar>(
    ctx: &WorkerCtx,
    h: &TensorTile<T>,
    w: &DenseMatrix<T>,
) -> Result<TensorTile<T>> {
    let grid = ctx.grid();
    let (p, m) = expect_tile_shape(ctx, h, w.rows())?;
    let row_range = grid.node_range(p);
    let my_rows = grid.row_chunk(row_range, m);
    let d_in = w.rows();

    // Ring each replica its full-width row chunk.
    let group: Vec<usize> = (0..grid.m()).map(|j| grid.machine_id(p, j)).collect();
    let mut blocks: Vec<Option<Payload>> = Vec::with_capacity(grid.m());
    for j in 0..grid.m() {
        if j == m {
            blocks.push(None);
            continue;
        }
        let rows_j = grid.row_chunk(row_range, j);
        let mut vals = Vec::with_capacity(rows_j.len() * h.cols.len());
        for r in rows_j.start..rows_j.end {
            vals.extend_from_slice(h.node_row(r));
        }
        blocks.push(Some(encode_scalars(&vals)));
    }
    let responses = ctx.ring_exchange(&group, Tag::FeatureBlock, blocks)?;

    let mut chunk = DenseMatrix::zeros(my_rows.len(), d_in);
    for (i, r) in (my_rows.start..my_rows.end).enumerate() {
        chunk.row_mut(i)[h.cols.start..h.cols.end].copy_from_slice(h.node_row(r));
    }
    for j in 0..grid.m() {
        if j == m {
            continue;
        }
        let msg = responses[j].as_ref().expect("ring delivers one block per member");
        let vals: Vec<T> = decode_scalars(&msg.bytes);
        let cols_j = grid.feature_range_of(d_in, j);
        if vals.len() != my_rows.len() * cols_j.len() {
            return Err(Error::Protocol {
                machine: ctx.machine(),
                msg: format!(
                    "feature slice from replica {j} has {} values, expected {}",
                    vals.len(),
                    my_rows.len() * cols_j.len()
                ),
            });
        }
        for i in 0..my_rows.len() {
            chunk.row_mut(i)[cols_j.start..cols_j.end]
                .copy_from_slice(&vals[i * cols_j.len()..(i + 1) * cols_j.len()]);
        }
    }

    gemm_scatter_result(ctx, &chunk, w)
}

/// Baseline projection: every replica multiplies its feature slice by the
/// matching slice of `W` rows, producing a full-width partial result that is
/// reduced onto the replica owning each output slice. Each machine receives
/// `(M-1) * N*D_out / (P*M)` values, `M/2` times the ring path. Partials are
/// summed in ascending replica order.
pub fn dist_gemm_allreduce<T: Scalar>(
    ctx: &WorkerCtx,
    h: &TensorTile<T>,
    w: &DenseMatrix<T>,
) -> Result<TensorTile<T>> {
    let grid = ctx.grid();
    let (p, m) = expect_tile_shape(ctx, h, w.rows())?;
    let d_out = w.cols();
    let w_slice = w.row_slice(h.cols.start, h.cols.end);
    let partial = local_gemm(&h.data, &w_slice);

    for j in 0..grid.m() {
        if j == m {
            continue;
        }
        let cols_j = grid.feature_range_of(d_out, j);
        let mut vals = Vec::with_capacity(partial.rows() * cols_j.len());
        for i in 0..partial.rows() {
            vals.extend_from_slice(&partial.row(i)[cols_j.start..cols_j.end]);
        }
        ctx.send(grid.machine_id(p, j), Tag::PartialResult, encode_scalars(&vals))?;
    }

    let out_cols = grid.feature_range_of(d_out, m);
    let mut out = TensorTile::zeros(grid.node_range(p), out_cols);
    for src in 0..grid.m() {
        if src == m {
            for i in 0..partial.rows() {
                let orow = out.data.row_mut(i);
                let prow = &partial.row(i)[out_cols.start..out_cols.end];
                for (o, &v) in orow.iter_mut().zip(prow) {
                    *o = *o + v;
                }
            }
            continue;
        }
        let msg = ctx.recv(grid.machine_id(p, src), Tag::PartialResult)?;
        let vals: Vec<T> = decode_scalars(&msg.bytes);
        if vals.len() != out.data.rows() * out_cols.len() {
            return Err(Error::Protocol {
                machine: ctx.machine(),
                msg: format!(
                    "partial from replica {src} has {} values, expected {}",
                    vals.len(),
                    out.data.rows() * out_cols.len()
                ),
            });
        }
        for i in 0..out.data.rows() {
            let orow = out.data.row_mut(i);
            for (o, &v) in orow.iter_mut().zip(&vals[i * out_cols.len()..(i + 1) * out_cols.len()])
            {
                *o = *o + v;
            }
        }
    }
    Ok(out)
}

fn tile_row_responder<T: Scalar>(data: &DenseMatrix<T>, row_start: usize, idw: usize) -> Arc<dyn Fn(usize, &[u8]) -> Payload + Send + Sync> {
    let data = Arc::new(data.clone());
    Arc::new(move |_src, bytes| {
        let ids = decode_ids(bytes, idw);
        let mut vals = Vec::with_capacity(ids.len() * data.cols());
        for id in ids {
            assert!(
                id >= row_start && id - row_start < data.rows(),
                "row {id} requested from the wrong owner"
            );
            vals.extend_from_slice(data.row(id - row_start));
        }
        encode_scalars(&vals)
    })
}

/// Projection fused with feature loading: instead of redistributing raw
/// features into canonical tiles and then ringing row chunks, each machine
/// pulls exactly its full-width row chunk straight from the loader shards,
/// then finishes like [`dist_gemm`]. Same bits out; the feature-block
/// traffic drops by the whole redistribution pass.
pub fn dist_gemm_fused<T: Scalar>(
    ctx: &WorkerCtx,
    shard: &FeatureShard<T>,
    table: &FeatureLocationTable,
    w: &DenseMatrix<T>,
) -> Result<TensorTile<T>> {
    let grid = ctx.grid();
    let machine = ctx.machine();
    let p = grid.row_group(machine);
    let m = grid.replica(machine);
    let d_in = w.rows();
    if shard.data.cols() != d_in {
        return Err(Error::Shape(format!(
            "shard rows are {} wide, weight expects {}",
            shard.data.cols(),
            d_in
        )));
    }
    if table.len() != grid.node_count() {
        return Err(Error::Shape(format!(
            "location table covers {} nodes, grid has {}",
            table.len(),
            grid.node_count()
        )));
    }
    let idw = id_width(grid.node_count());

    // Serve this machine's shard rows by node id.
    let offsets: HashMap<usize, usize> =
        shard.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let shard_data = Arc::new(shard.data.clone());
    ctx.register_responder(Tag::IdRequest, {
        let offsets = offsets.clone();
        let shard_data = Arc::clone(&shard_data);
        Arc::new(move |_src, bytes: &[u8]| {
            let ids = decode_ids(bytes, idw);
            let mut vals = Vec::with_capacity(ids.len() * shard_data.cols());
            for id in ids {
                let &offset = offsets.get(&id).expect("feature row requested from the wrong loader");
                vals.extend_from_slice(shard_data.row(offset));
            }
            encode_scalars(&vals)
        })
    });
    ctx.barrier()?;

    let my_rows = grid.row_chunk(grid.node_range(p), m);
    let mut by_loader: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for r in my_rows.start..my_rows.end {
        let (loader, _) = table.locate(r);
        by_loader.entry(loader).or_default().push(r);
    }
    let mut chunk = DenseMatrix::zeros(my_rows.len(), d_in);
    let mut fetches = Vec::new();
    for (&loader, ids) in &by_loader {
        if loader == machine {
            continue;
        }
        let pending =
            ctx.fetch_start(loader, Tag::IdRequest, Tag::FeatureBlock, encode_ids(ids, idw))?;
        fetches.push((loader, pending));
    }
    if let Some(ids) = by_loader.get(&machine) {
        for &r in ids {
            let offset = offsets[&r];
            chunk.row_mut(r - my_rows.start).copy_from_slice(shard.data.row(offset));
        }
    }
    for (loader, pending) in fetches {
        let msg = ctx.fetch_wait(pending)?;
        let vals: Vec<T> = decode_scalars(&msg.bytes);
        let ids = &by_loader[&loader];
        if vals.len() != ids.len() * d_in {
            return Err(Error::Protocol {
                machine,
                msg: format!(
                    "loader {loader} returned {} values for {} rows",
                    vals.len(),
                    ids.len()
                ),
            });
        }
        for (i, &r) in ids.iter().enumerate() {
            chunk.row_mut(r - my_rows.start).copy_from_slice(&vals[i * d_in..(i + 1) * d_in]);
        }
    }

    let out = gemm_scatter_result(ctx, &chunk, w)?;
    ctx.barrier()?;
    ctx.unregister_responder(Tag::IdRequest);
    Ok(out)
}

/// Push loader shards into canonical tiles: every shard row is sliced by
/// feature range and sent to each replica of its owner row group. Ids travel
/// separately from values; empty messages are still sent so receivers can
/// expect one pair from every peer.
pub fn redistribute_features<T: Scalar>(
    ctx: &WorkerCtx,
    shard: &FeatureShard<T>,
) -> Result<TensorTile<T>> {
    let grid = ctx.grid();
    let machine = ctx.machine();
    let p = grid.row_group(machine);
    let m = grid.replica(machine);
    if shard.data.cols() != grid.feat_dim() {
        return Err(Error::Shape(format!(
            "shard rows are {} wide, grid features are {}",
            shard.data.cols(),
            grid.feat_dim()
        )));
    }
    let idw = id_width(grid.node_count());

    let mut outgoing: Vec<(Vec<usize>, Vec<T>)> =
        (0..grid.machines()).map(|_| (Vec::new(), Vec::new())).collect();
    for (i, &id) in shard.ids.iter().enumerate() {
        let owner = grid.owner_of(id);
        let row = shard.data.row(i);
        for j in 0..grid.m() {
            let cols = grid.feature_range(j);
            let dst = grid.machine_id(owner, j);
            outgoing[dst].0.push(id);
            outgoing[dst].1.extend_from_slice(&row[cols.start..cols.end]);
        }
    }

    let rows = grid.node_range(p);
    let cols = grid.feature_range(m);
    let mut out = TensorTile::zeros(rows, cols);
    let mut filled = vec![false; rows.len()];
    let mut place = |out: &mut TensorTile<T>, ids: &[usize], vals: &[T]| -> Result<()> {
        for (i, &id) in ids.iter().enumerate() {
            let r = id - rows.start;
            if filled[r] {
                return Err(Error::Protocol {
                    machine,
                    msg: format!("feature row {id} delivered twice"),
                });
            }
            filled[r] = true;
            out.data.row_mut(r).copy_from_slice(&vals[i * cols.len()..(i + 1) * cols.len()]);
        }
        Ok(())
    };

    for dst in 0..grid.machines() {
        if dst == machine {
            continue;
        }
        let (ids, vals) = &outgoing[dst];
        ctx.send(dst, Tag::IdRequest, encode_ids(ids, idw))?;
        ctx.send(dst, Tag::FeatureBlock, encode_scalars(vals))?;
    }
    {
        let (ids, vals) = &outgoing[machine];
        place(&mut out, ids, vals)?;
    }
    for src in 0..grid.machines() {
        if src == machine {
            continue;
        }
        let ids_msg = ctx.recv(src, Tag::IdRequest)?;
        let vals_msg = ctx.recv(src, Tag::FeatureBlock)?;
        let ids = decode_ids(&ids_msg.bytes, idw);
        let vals: Vec<T> = decode_scalars(&vals_msg.bytes);
        place(&mut out, &ids, &vals)?;
    }
    if let Some(r) = filled.iter().position(|&f| !f) {
        return Err(Error::Protocol {
            machine,
            msg: format!("feature row {} never arrived", rows.start + r),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Distributed SPMM
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SpmmOptions {
    /// Cap on non-zeros per communication group.
    pub target_entries: usize,
    pub schedule: ScheduleKind,
    /// Simulated seconds of compute per non-zero, used to model overlap.
    pub compute_per_nonzero: f64,
}

impl Default for SpmmOptions {
    fn default() -> Self {
        SpmmOptions {
            target_entries: 65_536,
            schedule: ScheduleKind::Naive,
            compute_per_nonzero: 0.0,
        }
    }
}

fn expect_block_shape(ctx: &WorkerCtx, block: &CsrGraph, rows: NodeRange) -> Result<()> {
    if block.row_start() != rows.start || block.row_count() != rows.len() {
        return Err(Error::Shape(format!(
            "machine {} expects block rows {}..{}, got {}..{}",
            ctx.machine(),
            rows.start,
            rows.end,
            block.row_start(),
            block.row_start() + block.row_count(),
        )));
    }
    Ok(())
}

/// Sparse-times-dense with the dense side tiled over the grid. Non-zeros
/// are split into column groups; each remote group costs one deduplicated
/// id request to the owning row group's same-replica machine and one
/// feature response of `unique columns x slice width`. Requests and compute
/// are interleaved per `opts.schedule`, and per-non-zero contributions are
/// replayed into the output in a fixed group order at the end, so every
/// schedule, group size, and transport produces identical bits.
pub fn dist_spmm<T: Scalar>(
    ctx: &WorkerCtx,
    block: &CsrGraph,
    weights: &EdgeValues<T>,
    h: &TensorTile<T>,
    opts: &SpmmOptions,
) -> Result<TensorTile<T>> {
    let grid = ctx.grid();
    let machine = ctx.machine();
    let p = grid.row_group(machine);
    let m = grid.replica(machine);
    expect_block_shape(ctx, block, grid.node_range(p))?;
    if h.rows != grid.node_range(p) {
        return Err(Error::Shape(format!(
            "tile rows {}..{} do not match block rows",
            h.rows.start, h.rows.end
        )));
    }
    let d = h.cols.len();
    if weights.width() != 1 && weights.width() != d {
        return Err(Error::Shape(format!(
            "edge value width {} is neither 1 nor the slice width {d}",
            weights.width()
        )));
    }
    if weights.len() != block.nnz() {
        return Err(Error::Shape(format!(
            "{} edge values for {} non-zeros",
            weights.len(),
            block.nnz()
        )));
    }
    let idw = id_width(grid.node_count());
    let tile_start = h.rows.start;

    ctx.register_responder(Tag::IdRequest, tile_row_responder(&h.data, tile_start, idw));
    ctx.barrier()?;

    let groups = partition_nonzeros(block, grid, p, opts.target_entries)?;
    let mut buffers: Vec<Vec<T>> = groups.iter().map(|g| Vec::with_capacity(g.nnz() * d)).collect();
    run_schedule(
        ctx,
        &groups,
        opts.schedule,
        |ctx, g| match g.owner {
            Some(q) => {
                let owner = grid.machine_id(q, m);
                let req = encode_ids(&g.unique_cols, idw);
                Ok(vec![ctx.fetch_start(owner, Tag::IdRequest, Tag::FeatureBlock, req)?])
            }
            None => Ok(vec![]),
        },
        |ctx, g, msgs| {
            let buf = &mut buffers[g.id];
            match g.owner {
                None => {
                    for &(_, c, e) in &g.nonzeros {
                        let feat = h.data.row(c - tile_start);
                        for j in 0..d {
                            buf.push(weights.weight(e, j) * feat[j]);
                        }
                    }
                }
                Some(_) => {
                    let vals: Vec<T> = decode_scalars(&msgs[0].bytes);
                    if vals.len() != g.unique_cols.len() * d {
                        return Err(Error::Protocol {
                            machine,
                            msg: format!(
                                "group {} response has {} values for {} columns",
                                g.id,
                                vals.len(),
                                g.unique_cols.len()
                            ),
                        });
                    }
                    for &(_, c, e) in &g.nonzeros {
                        let pos = g.unique_cols.binary_search(&c).expect("column in its own group");
                        let feat = &vals[pos * d..(pos + 1) * d];
                        for j in 0..d {
                            buf.push(weights.weight(e, j) * feat[j]);
                        }
                    }
                }
            }
            if opts.compute_per_nonzero > 0.0 {
                ctx.advance(opts.compute_per_nonzero * g.nnz() as f64)?;
            }
            Ok(())
        },
    )?;

    // Replay contributions in ascending group id; see the pipeline module.
    let mut acc = RowAccumulator::new(block.row_count(), d);
    for g in &groups {
        let buf = &buffers[g.id];
        for (i, &(r, _, _)) in g.nonzeros.iter().enumerate() {
            acc.add_row(r, &buf[i * d..(i + 1) * d]);
        }
    }
    ctx.barrier()?;
    ctx.unregister_responder(Tag::IdRequest);
    Ok(TensorTile { rows: h.rows, cols: h.cols, data: acc.into_matrix() })
}

fn encode_subblock<T: Scalar>(
    nzs: &[(usize, usize, usize)],
    weights: &EdgeValues<T>,
    idw: usize,
) -> Payload {
    let vw = weights.width();
    let mut bytes = Vec::with_capacity(16 + nzs.len() * (2 * idw + vw * T::WIDTH));
    bytes.extend_from_slice(&(nzs.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&(vw as u64).to_le_bytes());
    let rows: Vec<usize> = nzs.iter().map(|&(r, _, _)| r).collect();
    let cols: Vec<usize> = nzs.iter().map(|&(_, c, _)| c).collect();
    bytes.extend_from_slice(&encode_ids(&rows, idw).bytes);
    bytes.extend_from_slice(&encode_ids(&cols, idw).bytes);
    let mut vals = Vec::with_capacity(nzs.len() * vw);
    for &(_, _, e) in nzs {
        vals.extend_from_slice(weights.value(e));
    }
    bytes.extend_from_slice(&encode_scalars(&vals).bytes);
    Payload { bytes, entries: (nzs.len() * (2 + vw)) as u64 }
}

fn decode_subblock<T: Scalar>(bytes: &[u8], idw: usize) -> (Vec<usize>, Vec<usize>, Vec<T>, usize) {
    let nnz = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let vw = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let rows_end = 16 + nnz * idw;
    let cols_end = rows_end + nnz * idw;
    let rows = decode_ids(&bytes[16..rows_end], idw);
    let cols = decode_ids(&bytes[rows_end..cols_end], idw);
    let vals = decode_scalars(&bytes[cols_end..]);
    (rows, cols, vals, vw)
}

/// Sparse-times-dense that ships the sparse side instead of fetching the
/// dense side: remote sub-blocks (row ids, column ids, edge values) go to
/// the machines owning their columns, which multiply against their own
/// feature slice and return per-row partial sums for the occupied rows.
/// Partials are applied after the local contribution, in ascending peer
/// order.
pub fn dist_spmm_graph_exchange<T: Scalar>(
    ctx: &WorkerCtx,
    block: &CsrGraph,
    weights: &EdgeValues<T>,
    h: &TensorTile<T>,
) -> Result<TensorTile<T>> {
    let grid = ctx.grid();
    let machine = ctx.machine();
    let p = grid.row_group(machine);
    let m = grid.replica(machine);
    expect_block_shape(ctx, block, grid.node_range(p))?;
    if h.rows != grid.node_range(p) {
        return Err(Error::Shape(format!(
            "tile rows {}..{} do not match block rows",
            h.rows.start, h.rows.end
        )));
    }
    let d = h.cols.len();
    if weights.width() != 1 && weights.width() != d {
        return Err(Error::Shape(format!(
            "edge value width {} is neither 1 nor the slice width {d}",
            weights.width()
        )));
    }
    if weights.len() != block.nnz() {
        return Err(Error::Shape(format!(
            "{} edge values for {} non-zeros",
            weights.len(),
            block.nnz()
        )));
    }
    let idw = id_width(grid.node_count());
    let tile_start = h.rows.start;

    // Split non-zeros by column owner, keeping CSR order.
    let offsets = block.row_offsets();
    let cols = block.col_ids();
    let mut local: Vec<(usize, usize, usize)> = Vec::new();
    let mut remote: BTreeMap<usize, Vec<(usize, usize, usize)>> = BTreeMap::new();
    for r in 0..block.row_count() {
        for e in offsets[r]..offsets[r + 1] {
            let c = cols[e];
            let q = grid.owner_of(c);
            if q == p {
                local.push((r, c, e));
            } else {
                remote.entry(q).or_default().push((r, c, e));
            }
        }
    }

    // Ship every remote sub-block before blocking on anything.
    for q in 0..grid.p() {
        if q == p {
            continue;
        }
        let nzs = remote.get(&q).map(Vec::as_slice).unwrap_or(&[]);
        ctx.send(grid.machine_id(q, m), Tag::EdgeShuffle, encode_subblock(nzs, weights, idw))?;
    }

    // Local contribution first.
    let mut acc = RowAccumulator::new(block.row_count(), d);
    let mut contrib = vec![T::zero(); d];
    for &(r, c, e) in &local {
        let feat = h.data.row(c - tile_start);
        for j in 0..d {
            contrib[j] = weights.weight(e, j) * feat[j];
        }
        acc.add_row(r, &contrib);
    }

    // Compute partials for every peer's sub-block against our slice.
    for q in 0..grid.p() {
        if q == p {
            continue;
        }
        let msg = ctx.recv(grid.machine_id(q, m), Tag::EdgeShuffle)?;
        let (rows, sub_cols, vals, vw) = decode_subblock::<T>(&msg.bytes, idw);
        let their_rows = grid.node_range(q).len();
        let mut partial = DenseMatrix::<T>::zeros(their_rows, d);
        let mut occupied = vec![false; their_rows];
        for (i, (&r, &c)) in rows.iter().zip(&sub_cols).enumerate() {
            let feat = h.data.row(c - tile_start);
            let prow = partial.row_mut(r);
            occupied[r] = true;
            for j in 0..d {
                let w = if vw == 1 { vals[i] } else { vals[i * vw + j] };
                prow[j] = prow[j] + w * feat[j];
            }
        }
        let occ_rows: Vec<usize> = (0..their_rows).filter(|&r| occupied[r]).collect();
        let mut bytes = Vec::with_capacity(8 + occ_rows.len() * (idw + d * T::WIDTH));
        bytes.extend_from_slice(&(occ_rows.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&encode_ids(&occ_rows, idw).bytes);
        let mut pvals = Vec::with_capacity(occ_rows.len() * d);
        for &r in &occ_rows {
            pvals.extend_from_slice(partial.row(r));
        }
        bytes.extend_from_slice(&encode_scalars(&pvals).bytes);
        let entries = (occ_rows.len() * (1 + d)) as u64;
        ctx.send(grid.machine_id(q, m), Tag::PartialResult, Payload { bytes, entries })?;
    }

    // Fold in returned partials, ascending peer.
    for q in 0..grid.p() {
        if q == p {
            continue;
        }
        let msg = ctx.recv(grid.machine_id(q, m), Tag::PartialResult)?;
        let bytes = &msg.bytes;
        let count = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
        let ids_end = 8 + count * idw;
        let rows = decode_ids(&bytes[8..ids_end], idw);
        let vals: Vec<T> = decode_scalars(&bytes[ids_end..]);
        for (i, &r) in rows.iter().enumerate() {
            acc.add_row(r, &vals[i * d..(i + 1) * d]);
        }
    }
    Ok(TensorTile { rows: h.rows, cols: h.cols, data: acc.into_matrix() })
}

// ---------------------------------------------------------------------------
// Distributed SDDMM
// ---------------------------------------------------------------------------

/// Row boundaries splitting a block into `parts` contiguous row shares of
/// roughly equal non-zero count: cut `j` is the first row boundary whose
/// non-zero prefix reaches `j/parts` of the total.
fn nnz_row_cuts(block: &CsrGraph, parts: usize) -> Vec<usize> {
    let offsets = block.row_offsets();
    let total = block.nnz();
    let mut cuts = Vec::with_capacity(parts + 1);
    cuts.push(0);
    for j in 1..parts {
        cuts.push(offsets.partition_point(|&o| o * parts < j * total).min(block.row_count()));
    }
    cuts.push(block.row_count());
    cuts
}

struct ShareNeeds {
    /// Global ids in this row group whose full-width rows the share needs:
    /// occupied destination rows plus locally owned source columns. Sorted.
    local_ids: Vec<usize>,
    /// Per remote row group, the sorted unique source columns. Non-empty
    /// lists only.
    remote: Vec<(usize, Vec<usize>)>,
}

fn share_needs(block: &CsrGraph, grid: &crate::partition::GridConfig, p: usize, rows: (usize, usize)) -> ShareNeeds {
    let offsets = block.row_offsets();
    let cols = block.col_ids();
    let mut local_ids = Vec::new();
    let mut remote: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for r in rows.0..rows.1 {
        if offsets[r + 1] == offsets[r] {
            continue;
        }
        local_ids.push(block.row_start() + r);
        for e in offsets[r]..offsets[r + 1] {
            let c = cols[e];
            let q = grid.owner_of(c);
            if q == p {
                local_ids.push(c);
            } else {
                remote.entry(q).or_default().push(c);
            }
        }
    }
    local_ids.sort_unstable();
    local_ids.dedup();
    let remote = remote
        .into_iter()
        .map(|(q, mut v)| {
            v.sort_unstable();
            v.dedup();
            (q, v)
        })
        .collect();
    ShareNeeds { local_ids, remote }
}

fn dist_sddmm_impl<T: Scalar>(
    ctx: &WorkerCtx,
    block: &CsrGraph,
    h: &TensorTile<T>,
    d_total: usize,
    heads: usize,
    split: bool,
) -> Result<DenseMatrix<T>> {
    let grid = ctx.grid();
    let machine = ctx.machine();
    let big_m = grid.m();
    let (p, m) = expect_tile_shape(ctx, h, d_total)?;
    expect_block_shape(ctx, block, grid.node_range(p))?;
    if heads == 0 || d_total % heads != 0 {
        return Err(Error::Config(format!("{heads} heads do not divide width {d_total}")));
    }
    let dh = d_total / heads;
    let idw = id_width(grid.node_count());
    let offsets = block.row_offsets();
    let cols = block.col_ids();
    let my_start = h.rows.start;

    ctx.register_responder(Tag::IdRequest, tile_row_responder(&h.data, my_start, idw));
    ctx.barrier()?;

    // Share j's row span. Splitting assigns each replica one share; the
    // duplicated variant gives every replica the whole block.
    let cuts = nnz_row_cuts(block, big_m);
    let share_rows = |j: usize| -> (usize, usize) {
        if split {
            (cuts[j], cuts[j + 1])
        } else {
            (0, block.row_count())
        }
    };
    let needs: Vec<ShareNeeds> =
        (0..big_m).map(|j| share_needs(block, grid, p, share_rows(j))).collect();

    // Push our slice of whatever each peer's share needs from this row
    // group. Peers derive the same row lists from the same block, so no ids
    // travel. Empty slices are still sent.
    for j in 0..big_m {
        if j == m {
            continue;
        }
        let mut vals = Vec::with_capacity(needs[j].local_ids.len() * h.cols.len());
        for &id in &needs[j].local_ids {
            vals.extend_from_slice(h.node_row(id));
        }
        ctx.send(grid.machine_id(p, j), Tag::AttnBlock, encode_scalars(&vals))?;
    }

    // Remote source rows: ask every replica of the owning row group for its
    // slice of the share's unique columns.
    let mine = &needs[m];
    let mut fetches = Vec::new();
    for (q, ids) in &mine.remote {
        let req = encode_ids(ids, idw);
        for j in 0..big_m {
            let pending = ctx.fetch_start(
                grid.machine_id(*q, j),
                Tag::IdRequest,
                Tag::AttnBlock,
                Payload { bytes: req.bytes.clone(), entries: req.entries },
            )?;
            fetches.push((ids, j, pending));
        }
    }

    // Assemble the full-width rows this share touches.
    let mut all_ids: Vec<usize> = mine.local_ids.clone();
    for (_, ids) in &mine.remote {
        all_ids.extend_from_slice(ids);
    }
    all_ids.sort_unstable();
    let row_of = |id: usize| all_ids.binary_search(&id).expect("id in the assembled set");
    let mut full = DenseMatrix::zeros(all_ids.len(), d_total);
    for &id in &mine.local_ids {
        full.row_mut(row_of(id))[h.cols.start..h.cols.end].copy_from_slice(h.node_row(id));
    }
    for src in 0..big_m {
        if src == m {
            continue;
        }
        let msg = ctx.recv(grid.machine_id(p, src), Tag::AttnBlock)?;
        let vals: Vec<T> = decode_scalars(&msg.bytes);
        let cols_src = grid.feature_range_of(d_total, src);
        if vals.len() != mine.local_ids.len() * cols_src.len() {
            return Err(Error::Protocol {
                machine,
                msg: format!(
                    "replica {src} pushed {} values for {} rows",
                    vals.len(),
                    mine.local_ids.len()
                ),
            });
        }
        for (i, &id) in mine.local_ids.iter().enumerate() {
            full.row_mut(row_of(id))[cols_src.start..cols_src.end]
                .copy_from_slice(&vals[i * cols_src.len()..(i + 1) * cols_src.len()]);
        }
    }
    for (ids, j, pending) in fetches {
        let msg = ctx.fetch_wait(pending)?;
        let vals: Vec<T> = decode_scalars(&msg.bytes);
        let cols_j = grid.feature_range_of(d_total, j);
        if vals.len() != ids.len() * cols_j.len() {
            return Err(Error::Protocol {
                machine,
                msg: format!("replica {j} returned {} values for {} rows", vals.len(), ids.len()),
            });
        }
        for (i, &id) in ids.iter().enumerate() {
            full.row_mut(row_of(id))[cols_j.start..cols_j.end]
                .copy_from_slice(&vals[i * cols_j.len()..(i + 1) * cols_j.len()]);
        }
    }

    // Head-wise dot products for this share, in CSR non-zero order.
    let mut scores = DenseMatrix::zeros(block.nnz(), heads);
    let (r0, r1) = share_rows(m);
    for r in r0..r1 {
        if offsets[r + 1] == offsets[r] {
            continue;
        }
        let dst = full.row(row_of(my_start + r));
        for e in offsets[r]..offsets[r + 1] {
            let src = full.row(row_of(cols[e]));
            let orow = scores.row_mut(e);
            for head in 0..heads {
                let mut acc = T::zero();
                for j in head * dh..(head + 1) * dh {
                    acc = acc + dst[j] * src[j];
                }
                orow[head] = acc;
            }
        }
    }

    // Splitting leaves each replica one share of the scores; swap shares so
    // every replica holds the whole block's scores, in block order.
    if split {
        let my_span = (offsets[r0] * heads, offsets[r1] * heads);
        let share_vals = scores.data()[my_span.0..my_span.1].to_vec();
        for j in 0..big_m {
            if j == m {
                continue;
            }
            ctx.send(grid.machine_id(p, j), Tag::PartialResult, encode_scalars(&share_vals))?;
        }
        for src in 0..big_m {
            if src == m {
                continue;
            }
            let msg = ctx.recv(grid.machine_id(p, src), Tag::PartialResult)?;
            let vals: Vec<T> = decode_scalars(&msg.bytes);
            let (s0, s1) = share_rows(src);
            let span = (offsets[s0] * heads, offsets[s1] * heads);
            if vals.len() != span.1 - span.0 {
                return Err(Error::Protocol {
                    machine,
                    msg: format!(
                        "share from replica {src} has {} scores, expected {}",
                        vals.len(),
                        span.1 - span.0
                    ),
                });
            }
            scores.data_mut()[span.0..span.1].copy_from_slice(&vals);
        }
    }

    ctx.barrier()?;
    ctx.unregister_responder(Tag::IdRequest);
    Ok(scores)
}

/// Per-edge multi-head dot products with each replica computing one
/// non-zero-balanced share of the block's rows, then swapping score shares
/// so all replicas end with the whole block. Gathers only the full-width
/// rows its share touches.
pub fn dist_sddmm_split<T: Scalar>(
    ctx: &WorkerCtx,
    block: &CsrGraph,
    h: &TensorTile<T>,
    d_total: usize,
    heads: usize,
) -> Result<DenseMatrix<T>> {
    dist_sddmm_impl(ctx, block, h, d_total, heads, true)
}

/// Per-edge multi-head dot products with every replica gathering the rows
/// for the whole block and computing all scores itself. More gather traffic
/// than the split variant, no score exchange. Same bits as the split
/// variant.
pub fn dist_sddmm_duplicate<T: Scalar>(
    ctx: &WorkerCtx,
    block: &CsrGraph,
    h: &TensorTile<T>,
    d_total: usize,
    heads: usize,
) -> Result<DenseMatrix<T>> {
    dist_sddmm_impl(ctx, block, h, d_total, heads, false)
}
