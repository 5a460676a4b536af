//! Redundant-computation analysis for batched ego-network inference.
//!
//! Computing one node's embedding with `k` layers touches a k-hop ego
//! network: the node itself at depth 0, its sampled in-neighbors at depth 1,
//! theirs at depth 2, and so on. Across a batch those ego networks overlap,
//! and an engine that recognizes the overlap computes each (node, depth)
//! pair once instead of once per appearance. [`sharing_ratio`] quantifies
//! that: `1 - computed / independent`, where `independent` counts every
//! appearance and `computed` counts what a given reuse scheme still has to
//! evaluate.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::CsrGraph;
use crate::sampler::{full_graph_layers, sample_layers, LayerGraphs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SharingScheme {
    /// Each batch computes every distinct (node, depth) pair once.
    BatchDedup,
    /// Only the deepest hop is deduplicated across the batch; shallower
    /// depths are computed per target.
    OutermostHopDedup,
    /// An LRU cache of (node, depth) results persists across batches; a hit
    /// counts as shared, a miss is computed and inserted.
    CacheDedup { capacity: usize },
}

impl SharingScheme {
    pub fn name(&self) -> &'static str {
        match self {
            SharingScheme::BatchDedup => "batch-dedup",
            SharingScheme::OutermostHopDedup => "outermost-hop",
            SharingScheme::CacheDedup { .. } => "cache",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SharingModel {
    pub scheme: SharingScheme,
    pub batch_size: usize,
    pub layers: usize,
    /// `None` keeps full neighbor lists.
    pub fanout: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharingOutcome {
    /// (node, depth) appearances summed over every target's ego network.
    pub independent: u64,
    /// Pairs actually evaluated under the scheme.
    pub computed: u64,
    /// `1 - computed / independent`, in [0, 1].
    pub ratio: f64,
}

/// Oldest-first eviction keyed by a monotone use counter.
struct LruCache {
    capacity: usize,
    clock: u64,
    last_use: HashMap<(usize, usize), u64>,
    by_age: BTreeMap<u64, (usize, usize)>,
}

impl LruCache {
    fn new(capacity: usize) -> Self {
        LruCache { capacity, clock: 0, last_use: HashMap::new(), by_age: BTreeMap::new() }
    }

    /// Returns whether `key` was already cached, and refreshes or inserts it.
    fn touch(&mut self, key: (usize, usize)) -> bool {
        if self.capacity == 0 {
            return false;
        }
        self.clock += 1;
        let hit = match self.last_use.insert(key, self.clock) {
            Some(old) => {
                self.by_age.remove(&old);
                true
            }
            None => false,
        };
        self.by_age.insert(self.clock, key);
        if self.last_use.len() > self.capacity {
            let (_, oldest) = self.by_age.pop_first().expect("cache is non-empty");
            self.last_use.remove(&oldest);
        }
        hit
    }
}

/// The ego network of `target`: for each depth `j` in `0..=k`, the sorted
/// set of nodes whose depth-`j` values the target's computation reads.
/// Depth `j` expands through the layer graph `k - j`, so the deepest hop
/// crosses the first layer.
fn ego_hops(layers: &LayerGraphs, target: usize) -> Vec<Vec<usize>> {
    let k = layers.layer_count();
    let mut hops = Vec::with_capacity(k + 1);
    hops.push(vec![target]);
    for j in 1..=k {
        let graph = &layers.layers[k - j];
        let mut next: Vec<usize> = hops[j - 1].iter().flat_map(|&w| graph.row(w)).copied().collect();
        next.sort_unstable();
        next.dedup();
        hops.push(next);
    }
    hops
}

/// Fraction of ego-network computation a reuse scheme avoids, over all
/// nodes of `graph` processed in id order in batches of `model.batch_size`.
pub fn sharing_ratio(graph: &CsrGraph, model: &SharingModel, seed: u64) -> Result<SharingOutcome> {
    if !graph.is_full() {
        return Err(Error::Config("sharing analysis needs the full graph".into()));
    }
    let n = graph.node_count();
    if n == 0 {
        return Err(Error::Config("sharing analysis needs at least one node".into()));
    }
    if model.batch_size == 0 || model.batch_size > n {
        return Err(Error::Config(format!(
            "batch size {} outside (0, {n}]",
            model.batch_size
        )));
    }
    if model.layers == 0 {
        return Err(Error::Config("at least one layer is required".into()));
    }
    let layers = match model.fanout {
        Some(f) => sample_layers(graph, model.layers, f, seed)?,
        None => full_graph_layers(&Arc::new(graph.clone()), model.layers)?,
    };

    let mut independent = 0u64;
    let mut computed = 0u64;
    let mut cache = match model.scheme {
        SharingScheme::CacheDedup { capacity } => Some(LruCache::new(capacity)),
        _ => None,
    };
    let k = model.layers;

    for batch_start in (0..n).step_by(model.batch_size) {
        let batch = batch_start..(batch_start + model.batch_size).min(n);
        let mut batch_seen: HashSet<(usize, usize)> = HashSet::new();
        let mut deepest_seen: HashSet<usize> = HashSet::new();
        for target in batch {
            let hops = ego_hops(&layers, target);
            for (depth, nodes) in hops.iter().enumerate() {
                independent += nodes.len() as u64;
                match model.scheme {
                    SharingScheme::BatchDedup => {
                        for &u in nodes {
                            if batch_seen.insert((u, depth)) {
                                computed += 1;
                            }
                        }
                    }
                    SharingScheme::OutermostHopDedup => {
                        if depth == k {
                            for &u in nodes {
                                if deepest_seen.insert(u) {
                                    computed += 1;
                                }
                            }
                        } else {
                            computed += nodes.len() as u64;
                        }
                    }
                    SharingScheme::CacheDedup { .. } => {
                        let cache = cache.as_mut().expect("cache scheme has a cache");
                        for &u in nodes {
                            if !cache.touch((u, depth)) {
                                computed += 1;
                            }
                        }
                    }
                }
            }
        }
    }

    Ok(SharingOutcome {
        independent,
        computed,
        ratio: 1.0 - computed as f64 / independent as f64,
    })
}
