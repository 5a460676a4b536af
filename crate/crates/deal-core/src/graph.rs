//! Graph ingestion and construction.
//!
//! Graphs are stored as CSR over *in*-neighbors: row `r` holds the sorted,
//! deduplicated source ids of edges that point at node `r`. A [`CsrGraph`]
//! can describe either the whole graph or one contiguous row block of it;
//! column ids are always global.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::partition::GridConfig;
use crate::transport::{
    decode_ids, encode_ids, id_width, RunStats, SimParams, Tag, TransportMode, WorkerCtx,
};

// ---------------------------------------------------------------------------
// Edge lists
// ---------------------------------------------------------------------------

/// A plain directed edge list: `(src, dst)` pairs plus the node count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeList {
    pub node_count: usize,
    pub edges: Vec<(usize, usize)>,
}

/// Parse the text edge-list format: `#` starts a comment, an optional
/// `N <count>` header declares the node count, every other non-empty line is
/// `src dst`. Without a header the node count is `max id + 1`.
pub fn parse_edge_list(text: &str) -> Result<EdgeList> {
    let mut declared: Option<usize> = None;
    let mut edges = Vec::new();
    let mut max_id: usize = 0;
    let mut saw_id = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }

        let mut parts = line.split_whitespace();
        let first = parts.next().unwrap();
        if first == "N" {
            if declared.is_some() || !edges.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "N header must appear once, before any edge".into(),
                });
            }
            let count = parts
                .next()
                .ok_or_else(|| Error::Parse { line: line_no, msg: "N header missing count".into() })?;
            if parts.next().is_some() {
                return Err(Error::Parse { line: line_no, msg: "trailing tokens after N header".into() });
            }
            let count: usize = count.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad node count `{count}`"),
            })?;
            declared = Some(count);
            continue;
        }

        let second = parts
            .next()
            .ok_or_else(|| Error::Parse { line: line_no, msg: "expected `src dst`".into() })?;
        if parts.next().is_some() {
            return Err(Error::Parse { line: line_no, msg: "trailing tokens after edge".into() });
        }
        let src: usize = first.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad node id `{first}`"),
        })?;
        let dst: usize = second.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad node id `{second}`"),
        })?;
        if let Some(n) = declared {
            if src >= n || dst >= n {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("node id {} >= declared count {n}", src.max(dst)),
                });
            }
        }
        max_id = max_id.max(src).max(dst);
        saw_id = true;
        edges.push((src, dst));
    }

    let node_count = declared.unwrap_or(if saw_id { max_id + 1 } else { 0 });
    Ok(EdgeList { node_count, edges })
}

/// Write the text edge-list format produced by [`parse_edge_list`].
pub fn write_edge_list(path: &Path, el: &EdgeList) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("N {}\n", el.node_count));
    for &(s, d) in &el.edges {
        out.push_str(&format!("{s} {d}\n"));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// CSR
// ---------------------------------------------------------------------------

/// CSR over in-neighbors, covering rows `[row_start, row_start + rows)` of a
/// graph with `node_count` nodes. Column ids are global, sorted, and unique
/// within a row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrGraph {
    node_count: usize,
    row_start: usize,
    row_offsets: Vec<usize>,
    col_ids: Vec<usize>,
}

impl CsrGraph {
    pub fn new_block(
        node_count: usize,
        row_start: usize,
        row_offsets: Vec<usize>,
        col_ids: Vec<usize>,
    ) -> Result<Self> {
        let g = CsrGraph { node_count, row_start, row_offsets, col_ids };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.row_offsets.is_empty() || self.row_offsets[0] != 0 {
            return Err(Error::Shape("row_offsets must start with 0".into()));
        }
        if *self.row_offsets.last().unwrap() != self.col_ids.len() {
            return Err(Error::Shape("last row offset must equal nnz".into()));
        }
        if self.row_start + self.row_count() > self.node_count {
            return Err(Error::Shape(format!(
                "rows [{}, {}) exceed node count {}",
                self.row_start,
                self.row_start + self.row_count(),
                self.node_count
            )));
        }
        for w in self.row_offsets.windows(2) {
            if w[1] < w[0] {
                return Err(Error::Shape("row offsets must be non-decreasing".into()));
            }
        }
        for r in 0..self.row_count() {
            let row = &self.col_ids[self.row_offsets[r]..self.row_offsets[r + 1]];
            for pair in row.windows(2) {
                if pair[1] <= pair[0] {
                    return Err(Error::Shape(format!(
                        "row {} column ids must be strictly ascending",
                        self.row_start + r
                    )));
                }
            }
            if let Some(&last) = row.last() {
                if last >= self.node_count {
                    return Err(Error::NodeOutOfBounds {
                        id: last as u64,
                        node_count: self.node_count as u64,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn row_start(&self) -> usize {
        self.row_start
    }

    pub fn row_count(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn is_full(&self) -> bool {
        self.row_start == 0 && self.row_count() == self.node_count
    }

    pub fn nnz(&self) -> usize {
        self.col_ids.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_ids(&self) -> &[usize] {
        &self.col_ids
    }

    /// Average non-zeros per node of the full graph this CSR describes.
    /// Meaningful on full graphs, where it equals `nnz / node_count`.
    pub fn avg_nnz_per_node(&self) -> f64 {
        if self.node_count == 0 {
            0.0
        } else {
            self.nnz() as f64 / self.node_count as f64
        }
    }

    /// In-neighbors of global row `r`, which must lie inside this block.
    pub fn row(&self, r: usize) -> &[usize] {
        assert!(
            r >= self.row_start && r < self.row_start + self.row_count(),
            "row {r} outside block [{}, {})",
            self.row_start,
            self.row_start + self.row_count()
        );
        let i = r - self.row_start;
        &self.col_ids[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    /// In-neighbors by block-local row index.
    pub fn local_row(&self, i: usize) -> &[usize] {
        &self.col_ids[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    /// Extract the row block `[start, end)` (global ids) as its own CSR.
    pub fn slice_rows(&self, start: usize, end: usize) -> CsrGraph {
        assert!(
            start >= self.row_start && end <= self.row_start + self.row_count() && start <= end
        );
        let lo = start - self.row_start;
        let hi = end - self.row_start;
        let base = self.row_offsets[lo];
        let row_offsets: Vec<usize> =
            self.row_offsets[lo..=hi].iter().map(|&o| o - base).collect();
        let col_ids = self.col_ids[base..self.row_offsets[hi]].to_vec();
        CsrGraph { node_count: self.node_count, row_start: start, row_offsets, col_ids }
    }

    /// Concatenate contiguous row blocks back into one CSR. Blocks must be
    /// ordered and tile the row space exactly.
    pub fn concat_blocks(blocks: &[CsrGraph]) -> Result<CsrGraph> {
        if blocks.is_empty() {
            return Err(Error::Shape("no blocks to concatenate".into()));
        }
        let node_count = blocks[0].node_count;
        let row_start = blocks[0].row_start;
        let mut row_offsets = vec![0usize];
        let mut col_ids = Vec::new();
        let mut next_row = row_start;
        for b in blocks {
            if b.node_count != node_count {
                return Err(Error::Shape("blocks disagree on node count".into()));
            }
            if b.row_start != next_row {
                return Err(Error::Shape(format!(
                    "blocks not contiguous: expected row {next_row}, got {}",
                    b.row_start
                )));
            }
            let base = col_ids.len();
            for w in b.row_offsets.windows(2) {
                row_offsets.push(base + w[1]);
            }
            col_ids.extend_from_slice(&b.col_ids);
            next_row += b.row_count();
        }
        CsrGraph::new_block(node_count, row_start, row_offsets, col_ids)
    }

    /// A copy with `r` inserted into row `r` wherever it is missing.
    /// Idempotent; preserves sortedness.
    pub fn with_self_loops(&self) -> CsrGraph {
        let mut row_offsets = Vec::with_capacity(self.row_offsets.len());
        let mut col_ids = Vec::with_capacity(self.col_ids.len() + self.row_count());
        row_offsets.push(0);
        for i in 0..self.row_count() {
            let r = self.row_start + i;
            let row = self.local_row(i);
            match row.binary_search(&r) {
                Ok(_) => col_ids.extend_from_slice(row),
                Err(pos) => {
                    col_ids.extend_from_slice(&row[..pos]);
                    col_ids.push(r);
                    col_ids.extend_from_slice(&row[pos..]);
                }
            }
            row_offsets.push(col_ids.len());
        }
        CsrGraph { node_count: self.node_count, row_start: self.row_start, row_offsets, col_ids }
    }
}

/// Build the full CSR from an edge list: group by destination, sort each
/// row's sources, and collapse duplicate edges. Self-loops are kept.
pub fn build_csr(el: &EdgeList) -> Result<CsrGraph> {
    let n = el.node_count;
    for &(s, d) in &el.edges {
        if s >= n || d >= n {
            return Err(Error::NodeOutOfBounds { id: s.max(d) as u64, node_count: n as u64 });
        }
    }

    let mut counts = vec![0usize; n + 1];
    for &(_, d) in &el.edges {
        counts[d + 1] += 1;
    }
    for i in 0..n {
        counts[i + 1] += counts[i];
    }
    let mut cols = vec![0usize; el.edges.len()];
    let mut cursor = counts.clone();
    for &(s, d) in &el.edges {
        cols[cursor[d]] = s;
        cursor[d] += 1;
    }

    // Sort and dedup per row, then repack.
    let mut row_offsets = vec![0usize; n + 1];
    let mut packed = Vec::with_capacity(cols.len());
    for r in 0..n {
        let row = &mut cols[counts[r]..counts[r + 1]];
        row.sort_unstable();
        let mut prev: Option<usize> = None;
        for &c in row.iter() {
            if prev != Some(c) {
                packed.push(c);
                prev = Some(c);
            }
        }
        row_offsets[r + 1] = packed.len();
    }
    CsrGraph::new_block(n, 0, row_offsets, packed)
}

// ---------------------------------------------------------------------------
// Distributed construction
// ---------------------------------------------------------------------------

/// Sort, dedup, and pack `(src, dst)` pairs whose destinations all lie in
/// `[row_start, row_end)` into a CSR row block.
fn pack_block(
    node_count: usize,
    row_start: usize,
    row_end: usize,
    mut pairs: Vec<(usize, usize)>,
) -> CsrGraph {
    pairs.sort_unstable_by_key(|&(s, d)| (d, s));
    pairs.dedup();
    let rows = row_end - row_start;
    let mut row_offsets = vec![0usize; rows + 1];
    let mut col_ids = Vec::with_capacity(pairs.len());
    for (s, d) in pairs {
        debug_assert!(d >= row_start && d < row_end);
        col_ids.push(s);
        row_offsets[d - row_start + 1] = col_ids.len();
    }
    for i in 0..rows {
        if row_offsets[i + 1] < row_offsets[i] {
            row_offsets[i + 1] = row_offsets[i];
        }
    }
    CsrGraph { node_count, row_start, row_offsets, col_ids }
}

/// Distributed CSR construction. Each machine ingests one arbitrary shard of
/// the edge list, shuffles every edge to all `M` replicas of the row group
/// that owns its destination, and packs what it receives into its own row
/// block. Concatenating the blocks of any one replica column reproduces
/// [`build_csr`] bit for bit.
pub fn build_csr_distributed(
    shards: &[Vec<(usize, usize)>],
    node_count: usize,
    grid: &GridConfig,
    mode: TransportMode,
    sim: SimParams,
) -> Result<(Vec<CsrGraph>, RunStats)> {
    if shards.len() != grid.machines() {
        return Err(Error::Config(format!(
            "need {} shards for a {}x{} grid, got {}",
            grid.machines(),
            grid.p(),
            grid.m(),
            shards.len()
        )));
    }
    let shards: Arc<Vec<Vec<(usize, usize)>>> = Arc::new(shards.to_vec());
    let grid_owned = grid.clone();
    let width = id_width(node_count);

    let run = crate::transport::run_workers(grid, mode, sim, move |ctx: &WorkerCtx| {
        let grid = &grid_owned;
        let me = ctx.machine();
        let my_p = grid.row_group(me);
        let my_range = grid.node_range(my_p);

        // Bucket my shard by destination row group.
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); grid.p()];
        for &(s, d) in &shards[me] {
            if s >= node_count || d >= node_count {
                return Err(Error::Protocol {
                    machine: me,
                    msg: format!("shard edge ({s}, {d}) out of bounds for {node_count} nodes"),
                });
            }
            let owner = grid.owner_of(d);
            buckets[owner].push(s);
            buckets[owner].push(d);
        }

        // Every machine of row group p' gets a replica of bucket p'.
        for target in 0..grid.machines() {
            if target == me {
                continue;
            }
            let tp = grid.row_group(target);
            ctx.send(target, Tag::EdgeShuffle, encode_ids(&buckets[tp], width))?;
        }

        let mut mine: Vec<(usize, usize)> = buckets[my_p]
            .chunks_exact(2)
            .map(|pair| (pair[0], pair[1]))
            .collect();
        for source in 0..grid.machines() {
            if source == me {
                continue;
            }
            let msg = ctx.recv(source, Tag::EdgeShuffle)?;
            let ids = decode_ids(&msg.bytes, width);
            if ids.len() % 2 != 0 {
                return Err(Error::Protocol {
                    machine: me,
                    msg: "edge shuffle payload is not (src, dst) pairs".into(),
                });
            }
            for pair in ids.chunks_exact(2) {
                let (s, d) = (pair[0], pair[1]);
                if d < my_range.start || d >= my_range.end {
                    return Err(Error::Protocol {
                        machine: me,
                        msg: format!("received edge ({s}, {d}) outside rows {my_range:?}"),
                    });
                }
                mine.push((s, d));
            }
        }

        Ok(pack_block(node_count, my_range.start, my_range.end, mine))
    })?;

    Ok((run.outputs, run.stats))
}

// ---------------------------------------------------------------------------
// R-MAT synthesis
// ---------------------------------------------------------------------------

/// R-MAT generator parameters. `scale` is log2 of the node count; the edge
/// count is `node_count * avg_degree` before duplicate collapse.
#[derive(Debug, Clone)]
pub struct RmatParams {
    pub scale: u32,
    pub avg_degree: usize,
    /// Quadrant probabilities `[a, b, c, d]` for
    /// (src low, dst low), (src low, dst high), (src high, dst low),
    /// (src high, dst high). Must sum to 1 within 1e-9.
    pub probs: [f64; 4],
    pub seed: u64,
}

impl Default for RmatParams {
    fn default() -> Self {
        RmatParams { scale: 10, avg_degree: 20, probs: [0.57, 0.19, 0.19, 0.05], seed: 1 }
    }
}

/// Generate a recursive-matrix random graph. Deterministic in the seed:
/// edges are drawn in a fixed order from a counter-based stream.
pub fn generate_rmat(params: &RmatParams) -> Result<EdgeList> {
    if params.scale > 32 {
        return Err(Error::Config(format!("rmat scale {} > 32 is unsupported", params.scale)));
    }
    let sum: f64 = params.probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("rmat probabilities sum to {sum}, expected 1")));
    }
    if params.probs.iter().any(|&p| p < 0.0) {
        return Err(Error::Config("rmat probabilities must be non-negative".into()));
    }

    let n: usize = 1usize << params.scale;
    let edge_count = n * params.avg_degree;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let [a, b, c, _] = params.probs;

    let mut edges = Vec::with_capacity(edge_count);
    for _ in 0..edge_count {
        let mut src = 0usize;
        let mut dst = 0usize;
        for _ in 0..params.scale {
            src <<= 1;
            dst <<= 1;
            let r: f64 = rng.gen();
            if r < a {
                // low, low
            } else if r < a + b {
                dst |= 1;
            } else if r < a + b + c {
                src |= 1;
            } else {
                src |= 1;
                dst |= 1;
            }
        }
        edges.push((src, dst));
    }
    Ok(EdgeList { node_count: n, edges })
}

/// Uniform random graph: `node_count * avg_degree` independent (src, dst)
/// draws. Deterministic in the seed.
pub fn generate_uniform(node_count: usize, avg_degree: usize, seed: u64) -> EdgeList {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edge_count = node_count * avg_degree;
    let mut edges = Vec::with_capacity(edge_count);
    for _ in 0..edge_count {
        let src = rng.gen_range(0..node_count);
        let dst = rng.gen_range(0..node_count);
        edges.push((src, dst));
    }
    EdgeList { node_count, edges }
}

// ---------------------------------------------------------------------------
// Binary CSR cache
// ---------------------------------------------------------------------------

const CSR_MAGIC: &[u8; 8] = b"DEALCSR1";

/// Write a full-graph CSR to the binary cache format: magic, then node
/// count, nnz, row offsets, and column ids, all little-endian u64.
pub fn write_csr_cache(path: &Path, g: &CsrGraph) -> Result<()> {
    if !g.is_full() {
        return Err(Error::Config("csr cache stores full graphs, not row blocks".into()));
    }
    let mut buf = Vec::with_capacity(8 + 16 + 8 * (g.row_offsets.len() + g.col_ids.len()));
    buf.extend_from_slice(CSR_MAGIC);
    buf.extend_from_slice(&(g.node_count as u64).to_le_bytes());
    buf.extend_from_slice(&(g.nnz() as u64).to_le_bytes());
    for &o in &g.row_offsets {
        buf.extend_from_slice(&(o as u64).to_le_bytes());
    }
    for &c in &g.col_ids {
        buf.extend_from_slice(&(c as u64).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read the binary CSR cache format written by [`write_csr_cache`].
pub fn read_csr_cache(path: &Path) -> Result<CsrGraph> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let p = path.display().to_string();
    if bytes.len() < 24 {
        return Err(Error::corrupt(p, "file shorter than header"));
    }
    if &bytes[..8] != CSR_MAGIC {
        return Err(Error::corrupt(p, "bad magic"));
    }
    let read_u64 =
        |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize;
    let node_count = read_u64(8);
    let nnz = read_u64(16);
    let need = 24 + 8 * (node_count + 1) + 8 * nnz;
    if bytes.len() != need {
        return Err(Error::corrupt(p, format!("expected {need} bytes, found {}", bytes.len())));
    }
    let mut row_offsets = Vec::with_capacity(node_count + 1);
    for i in 0..=node_count {
        row_offsets.push(read_u64(24 + 8 * i));
    }
    let base = 24 + 8 * (node_count + 1);
    let mut col_ids = Vec::with_capacity(nnz);
    for i in 0..nnz {
        col_ids.push(read_u64(base + 8 * i));
    }
    CsrGraph::new_block(node_count, 0, row_offsets, col_ids)
        .map_err(|e| Error::corrupt(path.display().to_string(), e.to_string()))
}

/// Load a graph from either the text edge-list format or the binary CSR
/// cache, deciding by the magic bytes.
pub fn load_graph(path: &Path) -> Result<CsrGraph> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() >= 8 && &bytes[..8] == CSR_MAGIC {
        return read_csr_cache(path);
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::corrupt(path.display().to_string(), "not utf-8 and not a csr cache"))?;
    build_csr(&parse_edge_list(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::GridConfig;

    fn el(n: usize, edges: &[(usize, usize)]) -> EdgeList {
        EdgeList { node_count: n, edges: edges.to_vec() }
    }

    #[test]
    fn parses_comments_header_and_edges() {
        let g = parse_edge_list("# a comment\nN 4\n0 2 # inline\n1 2\n\n").unwrap();
        assert_eq!(g.node_count, 4);
        assert_eq!(g.edges, vec![(0, 2), (1, 2)]);
    }

    #[test]
    fn infers_node_count_without_header() {
        let g = parse_edge_list("0 5\n2 1\n").unwrap();
        assert_eq!(g.node_count, 6);
    }

    #[test]
    fn reports_line_numbers_on_bad_input() {
        let err = parse_edge_list("N 4\n0 2\nfoo 1\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other}"),
        }
        let err = parse_edge_list("N 2\n0 2\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn builds_in_neighbor_csr() {
        let g = build_csr(&el(3, &[(0, 2), (1, 2)])).unwrap();
        assert_eq!(g.row_offsets(), &[0, 0, 0, 2]);
        assert_eq!(g.col_ids(), &[0, 1]);
        assert_eq!(g.row(2), &[0, 1]);
    }

    #[test]
    fn collapses_duplicate_edges_and_keeps_self_loops() {
        let g = build_csr(&el(4, &[(0, 1), (0, 1), (3, 3), (2, 1), (0, 1)])).unwrap();
        assert_eq!(g.nnz(), 3);
        assert_eq!(g.row(1), &[0, 2]);
        assert_eq!(g.row(3), &[3]);
    }

    #[test]
    fn rejects_out_of_bounds_edges() {
        let err = build_csr(&el(2, &[(0, 2)])).unwrap_err();
        assert!(matches!(err, Error::NodeOutOfBounds { id: 2, node_count: 2 }));
    }

    #[test]
    fn self_loop_insertion_is_idempotent() {
        let g = build_csr(&el(3, &[(0, 2), (2, 2)])).unwrap();
        let with = g.with_self_loops();
        assert_eq!(with.row(0), &[0]);
        assert_eq!(with.row(1), &[1]);
        assert_eq!(with.row(2), &[0, 2]);
        assert_eq!(with.with_self_loops(), with);
    }

    #[test]
    fn row_blocks_concatenate_back() {
        let g = build_csr(&el(7, &[(0, 2), (1, 2), (6, 0), (3, 5), (4, 6)])).unwrap();
        let a = g.slice_rows(0, 4);
        let b = g.slice_rows(4, 7);
        assert_eq!(a.row(2), &[0, 1]);
        assert_eq!(b.row(6), &[4]);
        assert_eq!(CsrGraph::concat_blocks(&[a, b]).unwrap(), g);
    }

    #[test]
    fn rmat_is_deterministic_per_seed() {
        let p = RmatParams { scale: 6, ..Default::default() };
        let g1 = generate_rmat(&p).unwrap();
        let g2 = generate_rmat(&p).unwrap();
        assert_eq!(g1, g2);
        let g3 = generate_rmat(&RmatParams { seed: 2, ..p }).unwrap();
        assert_ne!(g1, g3);
    }

    #[test]
    fn rmat_scale_zero_yields_self_loops() {
        let g = generate_rmat(&RmatParams { scale: 0, avg_degree: 5, ..Default::default() })
            .unwrap();
        assert_eq!(g.node_count, 1);
        assert_eq!(g.edges, vec![(0, 0); 5]);
    }

    #[test]
    fn rmat_validates_params() {
        assert!(generate_rmat(&RmatParams { scale: 33, ..Default::default() }).is_err());
        assert!(generate_rmat(&RmatParams {
            probs: [0.5, 0.5, 0.5, -0.5],
            ..Default::default()
        })
        .is_err());
        assert!(
            generate_rmat(&RmatParams { probs: [0.3, 0.3, 0.3, 0.3], ..Default::default() })
                .is_err()
        );
    }

    #[test]
    fn rmat_default_density_lands_in_expected_band() {
        // Duplicate collapse removes some of the n * avg_degree draws; the
        // skewed default quadrant probabilities concentrate edges, so a
        // sizable minority collide, but most survive.
        let g = build_csr(&generate_rmat(&RmatParams::default()).unwrap()).unwrap();
        let drawn = 1024 * 20;
        assert!(g.nnz() <= drawn);
        assert!(
            g.nnz() as f64 >= 0.5 * drawn as f64,
            "nnz {} below half of {drawn} draws",
            g.nnz()
        );
    }

    #[test]
    fn rmat_uniform_probs_spread_quadrants_evenly() {
        let g = generate_rmat(&RmatParams {
            scale: 10,
            avg_degree: 20,
            probs: [0.25; 4],
            seed: 7,
        })
        .unwrap();
        let half = g.node_count / 2;
        let mut counts = [0usize; 4];
        for &(s, d) in &g.edges {
            let q = (s >= half) as usize * 2 + (d >= half) as usize;
            counts[q] += 1;
        }
        let total = g.edges.len() as f64;
        for &c in &counts {
            let frac = c as f64 / total;
            assert!((frac - 0.25).abs() < 0.05 * 0.25 + 0.01, "quadrant fraction {frac}");
        }
    }

    #[test]
    fn csr_cache_round_trips_and_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csr");
        let g = build_csr(&el(5, &[(0, 2), (1, 2), (4, 0), (3, 3)])).unwrap();
        write_csr_cache(&path, &g).unwrap();
        assert_eq!(read_csr_cache(&path).unwrap(), g);
        assert_eq!(load_graph(&path).unwrap(), g);

        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_csr_cache(&path).unwrap_err(), Error::Corrupt { .. }));

        let mut truncated = fs::read(&path).unwrap();
        truncated[0] = b'D';
        truncated.pop();
        fs::write(&path, &truncated).unwrap();
        assert!(matches!(read_csr_cache(&path).unwrap_err(), Error::Corrupt { .. }));
    }

    #[test]
    fn distributed_build_matches_serial_on_a_hand_shuffle() {
        let edges = vec![(0, 2), (1, 2), (2, 0), (0, 1), (2, 2)];
        let serial = build_csr(&el(3, &edges)).unwrap();
        let grid = GridConfig::new(2, 1, 3, 4).unwrap();
        // Shard oblivious to ownership: machine 0 gets the first three
        // edges, machine 1 the rest.
        let shards = vec![edges[..3].to_vec(), edges[3..].to_vec()];
        let (blocks, _) = build_csr_distributed(
            &shards,
            3,
            &grid,
            TransportMode::Simulated,
            SimParams::default(),
        )
        .unwrap();
        assert_eq!(blocks[0].row(0), &[2]);
        assert_eq!(blocks[0].row(1), &[0]);
        assert_eq!(blocks[1].row(2), &[0, 1, 2]);
        let merged = CsrGraph::concat_blocks(&blocks).unwrap();
        assert_eq!(merged, serial);
    }
}
