//! Layer-wise neighbor sampling.
//!
//! Inference over k layers needs k one-hop graphs. Each node draws up to
//! `fanout` in-neighbors per layer, without replacement, from an RNG stream
//! keyed by (seed, node id). All k draws for a node come consecutively from
//! that one stream, over one reusable copy of the node's neighbor list, so
//! the result depends only on (graph, k, fanout, seed) and not on how rows
//! are split across machines or threads.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::CsrGraph;

/// The per-layer one-hop graphs for one row block. Layers produced by
/// [`full_graph_layers`] all point at the same block.
#[derive(Debug, Clone)]
pub struct LayerGraphs {
    pub layers: Vec<Arc<CsrGraph>>,
}

impl LayerGraphs {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }
}

/// One node's reusable sampling state: its neighbor list (shuffled in place
/// a little more by every draw) and its RNG stream.
struct SamplerState {
    neighbors: Vec<usize>,
    rng: ChaCha8Rng,
}

impl SamplerState {
    fn new(neighbors: &[usize], seed: u64, node: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(node as u64);
        SamplerState { neighbors: neighbors.to_vec(), rng }
    }

    /// Draw `min(fanout, degree)` distinct neighbors by partial shuffle,
    /// returning them sorted.
    fn draw(&mut self, fanout: usize) -> Vec<usize> {
        let len = self.neighbors.len();
        let take = fanout.min(len);
        for i in 0..take {
            let j = self.rng.gen_range(i..len);
            self.neighbors.swap(i, j);
        }
        let mut out = self.neighbors[..take].to_vec();
        out.sort_unstable();
        out
    }
}

/// Sample `k` one-hop layer graphs for a row block. Every sampled row gets
/// a self-loop (inserted in sorted position when absent) so zero-in-degree
/// nodes still produce defined embeddings.
pub fn sample_layers(block: &CsrGraph, k: usize, fanout: usize, seed: u64) -> Result<LayerGraphs> {
    if k == 0 {
        return Err(Error::Config("at least one layer is required".into()));
    }
    if fanout == 0 {
        return Err(Error::Config("fanout must be at least 1".into()));
    }
    let rows = block.row_count();
    let mut states: Vec<SamplerState> = (0..rows)
        .map(|i| SamplerState::new(block.local_row(i), seed, block.row_start() + i))
        .collect();

    let mut layers = Vec::with_capacity(k);
    for _ in 0..k {
        let mut row_offsets = Vec::with_capacity(rows + 1);
        let mut col_ids = Vec::new();
        row_offsets.push(0);
        for (i, state) in states.iter_mut().enumerate() {
            let node = block.row_start() + i;
            let mut row = state.draw(fanout);
            if let Err(pos) = row.binary_search(&node) {
                row.insert(pos, node);
            }
            col_ids.extend_from_slice(&row);
            row_offsets.push(col_ids.len());
        }
        layers.push(Arc::new(CsrGraph::new_block(
            block.node_count(),
            block.row_start(),
            row_offsets,
            col_ids,
        )?));
    }
    Ok(LayerGraphs { layers })
}

/// Use the complete block as every layer. The block is shared, not copied.
pub fn full_graph_layers(block: &Arc<CsrGraph>, k: usize) -> Result<LayerGraphs> {
    if k == 0 {
        return Err(Error::Config("at least one layer is required".into()));
    }
    let with_loops = Arc::new(block.with_self_loops());
    Ok(LayerGraphs { layers: (0..k).map(|_| Arc::clone(&with_loops)).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_csr, generate_uniform, EdgeList};

    fn graph(n: usize, edges: &[(usize, usize)]) -> CsrGraph {
        build_csr(&EdgeList { node_count: n, edges: edges.to_vec() }).unwrap()
    }

    #[test]
    fn rows_are_sorted_distinct_subsets_of_the_full_row() {
        let full = build_csr(&generate_uniform(64, 6, 5)).unwrap();
        let layers = sample_layers(&full, 3, 4, 9).unwrap();
        for layer in &layers.layers {
            for r in 0..full.row_count() {
                let row = layer.local_row(r);
                assert!(row.windows(2).all(|w| w[0] < w[1]), "sorted and distinct");
                let full_row = full.local_row(r);
                for &c in row {
                    assert!(c == r || full_row.binary_search(&c).is_ok(), "subset plus self");
                }
                // min(fanout, degree) neighbors, plus the self-loop when the
                // draw did not already contain it.
                let deg = full_row.len();
                let expect = 4.min(deg);
                assert!(row.len() == expect || row.len() == expect + 1);
                assert!(row.binary_search(&r).is_ok(), "self-loop present");
            }
        }
    }

    #[test]
    fn zero_in_degree_rows_keep_only_the_self_loop() {
        let g = graph(4, &[(0, 1), (2, 1)]);
        let layers = sample_layers(&g, 2, 3, 1).unwrap();
        for layer in &layers.layers {
            assert_eq!(layer.local_row(3), &[3]);
            assert_eq!(layer.local_row(0), &[0]);
        }
    }

    #[test]
    fn saturating_fanout_reproduces_the_block_with_self_loops() {
        let full = build_csr(&generate_uniform(32, 3, 7)).unwrap();
        let max_deg = (0..32).map(|r| full.local_row(r).len()).max().unwrap();
        let layers = sample_layers(&full, 2, max_deg, 3).unwrap();
        let want = full.with_self_loops();
        for layer in &layers.layers {
            assert_eq!(layer.col_ids(), want.col_ids());
            assert_eq!(layer.row_offsets(), want.row_offsets());
        }
    }

    #[test]
    fn draws_depend_only_on_seed_and_node_not_on_the_split() {
        let full = build_csr(&generate_uniform(40, 8, 11)).unwrap();
        let whole = sample_layers(&full, 3, 5, 21).unwrap();
        let mut split_layers: Vec<Vec<CsrGraph>> = vec![Vec::new(); 3];
        for (start, end) in [(0, 13), (13, 26), (26, 40)] {
            let block = full.slice_rows(start, end);
            let sampled = sample_layers(&block, 3, 5, 21).unwrap();
            for (l, layer) in sampled.layers.iter().enumerate() {
                split_layers[l].push((**layer).clone());
            }
        }
        for (l, parts) in split_layers.iter().enumerate() {
            let joined = CsrGraph::concat_blocks(parts).unwrap();
            assert_eq!(joined.col_ids(), whole.layers[l].col_ids());
            assert_eq!(joined.row_offsets(), whole.layers[l].row_offsets());
        }
    }

    #[test]
    fn layers_reuse_one_stream_and_differ() {
        let full = build_csr(&generate_uniform(64, 10, 13)).unwrap();
        let layers = sample_layers(&full, 2, 3, 17).unwrap();
        assert_ne!(layers.layers[0].col_ids(), layers.layers[1].col_ids());
        // Re-running is reproducible.
        let again = sample_layers(&full, 2, 3, 17).unwrap();
        for l in 0..2 {
            assert_eq!(layers.layers[l].col_ids(), again.layers[l].col_ids());
        }
        // A different seed draws differently.
        let other = sample_layers(&full, 2, 3, 18).unwrap();
        assert_ne!(layers.layers[0].col_ids(), other.layers[0].col_ids());
    }

    #[test]
    fn full_layers_share_one_graph() {
        let full = Arc::new(build_csr(&generate_uniform(16, 2, 3)).unwrap());
        let layers = full_graph_layers(&full, 3).unwrap();
        assert_eq!(layers.layer_count(), 3);
        assert!(Arc::ptr_eq(&layers.layers[0], &layers.layers[1]));
        assert!(Arc::ptr_eq(&layers.layers[1], &layers.layers[2]));
        for r in 0..16 {
            assert!(layers.layers[0].local_row(r).binary_search(&r).is_ok());
        }
    }
}
