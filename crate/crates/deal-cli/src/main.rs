//! Command-line driver: synthesize graphs, lay out machine grids, run
//! end-to-end inference, benchmark individual primitives, check measured
//! traffic against the closed-form models, and analyze computation sharing.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deal_core::costmodel::{
    gemm_cost, sddmm_cost, spmm_cost, CostParams, CostReport, GemmVariant, SddmmVariant,
    SpmmVariant,
};
use deal_core::dense::DenseMatrix;
use deal_core::graph::{
    generate_rmat, generate_uniform, build_csr, load_graph, write_csr_cache, write_edge_list,
    CsrGraph, RmatParams,
};
use deal_core::model::{
    build_params, collect_embeddings, infer, read_features, read_params, seeded_weights,
    uniform_dims, worker_layers, write_features, ModelInput, ModelKind, ModelParams,
};
use deal_core::partition::{
    scatter_tiles, shard_features, EdgeValues, FeatureLocationTable, FeatureShard, GridConfig,
    PartitionManifest, TensorTile,
};
use deal_core::primitives::{
    dist_gemm, dist_gemm_allreduce, dist_gemm_fused, dist_sddmm_duplicate, dist_sddmm_split,
    dist_spmm, dist_spmm_graph_exchange, SpmmOptions,
};
use deal_core::sharing::{sharing_ratio, SharingModel, SharingScheme};
use deal_core::transport::{run_workers, RunStats, SimParams, Tag, TransportMode};

#[derive(Parser)]
#[command(name = "deal", version, about = "Distributed all-node GNN inference engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a graph (and optionally a feature file).
    Generate(GenerateArgs),
    /// Write a grid layout manifest for a graph.
    Partition(PartitionArgs),
    /// Run end-to-end inference over a machine grid.
    Infer(InferArgs),
    /// Run one distributed primitive and report its traffic.
    BenchPrimitive(BenchArgs),
    /// Compare measured primitive traffic against the closed-form models.
    CostModel(CostModelArgs),
    /// Quantify computation sharing across batched ego networks.
    Sharing(SharingArgs),
}

fn parse_machines(s: &str) -> std::result::Result<(usize, usize), String> {
    let (p, m) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("'{s}' is not of the form PxM"))?;
    let p: usize = p.trim().parse().map_err(|_| format!("bad row group count '{p}'"))?;
    let m: usize = m.trim().parse().map_err(|_| format!("bad replica count '{m}'"))?;
    if p == 0 || m == 0 {
        return Err("grid sides must be positive".into());
    }
    Ok((p, m))
}

fn parse_on_off(s: &str) -> Result<bool> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        other => bail!("expected on or off, got '{other}'"),
    }
}

fn write_or_print(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => {
            fs::write(p, content).with_context(|| format!("writing {}", p.display()))?;
            println!("wrote {}", p.display());
            Ok(())
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn seeded_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("sized by construction")
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct GenerateArgs {
    /// Output path for the binary CSR cache.
    #[arg(long)]
    output: PathBuf,
    /// log2 of the node count.
    #[arg(long, default_value_t = 10)]
    scale: u32,
    #[arg(long, default_value_t = 20)]
    avg_degree: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Draw endpoints uniformly instead of skewed recursive quadrants.
    #[arg(long)]
    uniform: bool,
    /// Also write the edge list as text.
    #[arg(long)]
    edge_list_out: Option<PathBuf>,
    /// Also write an arbitrary-order feature file with this many columns.
    #[arg(long)]
    feat_dim: Option<usize>,
    #[arg(long)]
    features_out: Option<PathBuf>,
}

fn run_generate(a: GenerateArgs) -> Result<()> {
    let el = if a.uniform {
        generate_uniform(1usize << a.scale, a.avg_degree, a.seed)
    } else {
        generate_rmat(&RmatParams {
            scale: a.scale,
            avg_degree: a.avg_degree,
            seed: a.seed,
            ..RmatParams::default()
        })?
    };
    let g = build_csr(&el)?;
    write_csr_cache(&a.output, &g)?;
    println!("wrote {} nodes, {} edges to {}", g.node_count(), g.nnz(), a.output.display());
    if let Some(path) = &a.edge_list_out {
        write_edge_list(path, &el)?;
        println!("wrote edge list to {}", path.display());
    }
    if let Some(path) = &a.features_out {
        let d = a.feat_dim.context("--features-out needs --feat-dim")?;
        let n = g.node_count();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(a.seed ^ 0x5eed));
        let matrix = seeded_matrix(n, d, a.seed.wrapping_add(1));
        let mut data = DenseMatrix::zeros(n, d);
        for (i, &id) in order.iter().enumerate() {
            data.row_mut(i).copy_from_slice(matrix.row(id));
        }
        write_features(path, &FeatureShard::new(order, data)?)?;
        println!("wrote {n} feature rows ({d} wide, unsorted) to {}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// partition
// ---------------------------------------------------------------------------

#[derive(Args)]
struct PartitionArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_parser = parse_machines)]
    machines: (usize, usize),
    #[arg(long, default_value_t = 16)]
    feat_dim: usize,
    /// Manifest path; prints to stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn run_partition(a: PartitionArgs) -> Result<()> {
    let g = load_graph(&a.graph)?;
    let (p, m) = a.machines;
    let grid = GridConfig::new(p, m, g.node_count(), a.feat_dim)?;
    let manifest = PartitionManifest::from_grid(&grid);
    write_or_print(a.output.as_deref(), &(manifest.to_json() + "\n"))
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    graph: PathBuf,
    /// gcn or gat (a parameter file's header takes precedence).
    #[arg(long, default_value = "gcn")]
    model: String,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 50)]
    fanout: usize,
    /// Use full neighbor lists instead of sampling.
    #[arg(long)]
    full_neighbor: bool,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, value_parser = parse_machines, default_value = "1x1")]
    machines: (usize, usize),
    /// sim or threads.
    #[arg(long, default_value = "sim")]
    transport: String,
    /// on|off: serve the first projection straight from loader shards
    /// instead of redistributing features first.
    #[arg(long, default_value = "off")]
    fuse_first_layer: String,
    /// Feature file; absent means seeded synthetic features.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Parameter file; absent means seeded weights.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Feature width when synthesizing features.
    #[arg(long, default_value_t = 16)]
    feat_dim: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Cap on non-zeros per communication group.
    #[arg(long, default_value_t = 65_536)]
    group_entries: usize,
    /// naive, prefetch, or local-first.
    #[arg(long, default_value = "naive")]
    schedule: String,
    /// Run summary as JSON.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// Final embeddings, same record format as the feature file.
    #[arg(long)]
    embeddings_out: Option<PathBuf>,
}

/// Feature rows in load order plus the same rows in node order.
fn load_or_synthesize_features(
    a: &InferArgs,
    n: usize,
) -> Result<(Vec<usize>, DenseMatrix<f32>)> {
    match &a.features {
        Some(path) => {
            let shard = read_features(path)?;
            if shard.ids.len() != n {
                bail!("feature file holds {} rows, graph has {n} nodes", shard.ids.len());
            }
            let mut sorted = shard.ids.clone();
            sorted.sort_unstable();
            if sorted.iter().enumerate().any(|(i, &id)| i != id) {
                bail!("feature file ids are not a permutation of 0..{n}");
            }
            let mut canonical = DenseMatrix::zeros(n, shard.data.cols());
            for (i, &id) in shard.ids.iter().enumerate() {
                canonical.row_mut(id).copy_from_slice(shard.data.row(i));
            }
            Ok((shard.ids, canonical))
        }
        None => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(a.seed ^ 0x5eed));
            Ok((order, seeded_matrix(n, a.feat_dim, a.seed.wrapping_add(1))))
        }
    }
}

fn load_or_seed_params(a: &InferArgs, d: usize) -> Result<ModelParams<f32>> {
    let params = match &a.params {
        Some(path) => {
            let (header, weights) = read_params(path)?;
            if header.dims[0] != d {
                bail!("parameter file expects {} feature columns, input has {d}", header.dims[0]);
            }
            build_params(header.model.parse()?, weights, header.heads)
        }
        None => {
            let kind: ModelKind = a.model.parse()?;
            if a.layers == 0 {
                bail!("a model needs at least one layer");
            }
            if kind == ModelKind::Gat && d % a.heads != 0 {
                bail!("{} heads do not divide feature width {d}", a.heads);
            }
            build_params(kind, seeded_weights(&uniform_dims(d, a.layers), a.seed)?, a.heads)
        }
    };
    params.validate(d).map_err(anyhow::Error::from)?;
    Ok(params)
}

fn run_infer(a: InferArgs) -> Result<()> {
    let g = load_graph(&a.graph)?;
    let n = g.node_count();
    let (order, canonical) = load_or_synthesize_features(&a, n)?;
    let d = canonical.cols();
    let params = load_or_seed_params(&a, d)?;
    let k = params.layer_count();

    let (p, m) = a.machines;
    let grid = GridConfig::new(p, m, n, d)?;
    let mode: TransportMode = a.transport.parse()?;
    let fuse = parse_on_off(&a.fuse_first_layer)?;
    let fanout = if a.full_neighbor { None } else { Some(a.fanout) };
    let opts = SpmmOptions {
        target_entries: a.group_entries,
        schedule: a.schedule.parse()?,
        compute_per_nonzero: 0.0,
    };

    let shards = shard_features(&canonical, &order, grid.machines())?;
    let shard_ids: Vec<Vec<usize>> = shards.iter().map(|s| s.ids.clone()).collect();
    let table = FeatureLocationTable::from_shard_ids(n, &shard_ids)?;

    let run = run_workers(&grid, mode, SimParams::default(), |ctx| {
        let layers = worker_layers(ctx, &g, k, fanout, a.seed)?;
        let input = ModelInput::Shard {
            shard: &shards[ctx.machine()],
            table: &table,
            fuse_first_layer: fuse,
        };
        infer(ctx, &layers, &input, &params, &opts)
    })?;
    if !run.stats.traffic.conservation_ok() {
        bail!("traffic conservation violated");
    }
    let embeddings = collect_embeddings(&run.outputs, &grid)?;

    println!(
        "{} x{} layers over {n} nodes ({} edges) on {p}x{m} [{}]: \
         {} entries / {} bytes sent, makespan {:.6}",
        params.kind().name(),
        k,
        g.nnz(),
        a.transport,
        run.stats.traffic.total_sent_entries(),
        run.stats.traffic.total_sent_bytes(),
        run.stats.makespan,
    );

    if let Some(path) = &a.metrics_out {
        fs::write(path, run.stats.traffic.summary_json(run.stats.makespan) + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        println!("wrote metrics to {}", path.display());
    }
    if let Some(path) = &a.embeddings_out {
        let ids: Vec<usize> = (0..n).collect();
        write_features(path, &FeatureShard::new(ids, embeddings)?)?;
        println!("wrote embeddings to {}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// bench-primitive and cost-model
// ---------------------------------------------------------------------------

#[derive(Args)]
struct BenchArgs {
    /// Graph file; synthesized when absent (spmm/sddmm need real rows).
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Node count when no graph is given.
    #[arg(long, default_value_t = 1024)]
    nodes: usize,
    /// gemm, spmm, or sddmm.
    #[arg(long)]
    primitive: String,
    /// gemm: ring|allreduce|fused; spmm: fetch|exchange; sddmm: duplicate|split.
    #[arg(long)]
    variant: String,
    #[arg(long, value_parser = parse_machines, default_value = "2x2")]
    machines: (usize, usize),
    #[arg(long, default_value_t = 16)]
    feat_dim: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 65_536)]
    group_entries: usize,
    #[arg(long, default_value = "naive")]
    schedule: String,
    #[arg(long, default_value = "sim")]
    transport: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV path; prints to stdout when absent.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

struct BenchSetup {
    graph: CsrGraph,
    grid: GridConfig,
    tiles: Vec<TensorTile<f32>>,
    features: DenseMatrix<f32>,
}

fn bench_setup(
    graph: Option<&Path>,
    nodes: usize,
    machines: (usize, usize),
    feat_dim: usize,
    seed: u64,
) -> Result<BenchSetup> {
    let graph = match graph {
        Some(path) => load_graph(path)?,
        None => build_csr(&generate_uniform(nodes, 8, seed))?,
    };
    // The engine aggregates over self-looped layer graphs, so the benches
    // run under the same occupancy.
    let graph = graph.with_self_loops();
    let n = graph.node_count();
    let grid = GridConfig::new(machines.0, machines.1, n, feat_dim)?;
    let features = seeded_matrix(n, feat_dim, seed.wrapping_add(1));
    let tiles = scatter_tiles(&features, &grid)?;
    Ok(BenchSetup { graph, grid, tiles, features })
}

fn block_of(setup: &BenchSetup, machine: usize) -> CsrGraph {
    let r = setup.grid.node_range(setup.grid.row_group(machine));
    setup.graph.slice_rows(r.start, r.end)
}

/// Width-`slice` all-ones edge values for a machine's block, matching how
/// three-tensor aggregation keeps a value per feature column.
fn sliced_ones(setup: &BenchSetup, machine: usize) -> EdgeValues<f32> {
    let block = block_of(setup, machine);
    let w = setup.grid.feature_range(setup.grid.replica(machine)).len();
    if w == 0 {
        EdgeValues::ones(block.nnz())
    } else {
        EdgeValues::sliced(w, vec![1.0; block.nnz() * w]).expect("tiles width")
    }
}

fn run_primitive(
    setup: &BenchSetup,
    primitive: &str,
    variant: &str,
    heads: usize,
    opts: &SpmmOptions,
    mode: TransportMode,
    seed: u64,
) -> Result<RunStats> {
    let grid = &setup.grid;
    let d = grid.feat_dim();
    let w = seeded_matrix(d, d, seed.wrapping_add(2));
    let run = match (primitive, variant) {
        ("gemm", "ring") => {
            run_workers(grid, mode, SimParams::default(), |ctx| {
                dist_gemm(ctx, &setup.tiles[ctx.machine()], &w).map(|_| ())
            })?
        }
        ("gemm", "allreduce") => {
            run_workers(grid, mode, SimParams::default(), |ctx| {
                dist_gemm_allreduce(ctx, &setup.tiles[ctx.machine()], &w).map(|_| ())
            })?
        }
        ("gemm", "fused") => {
            let mut order: Vec<usize> = (0..grid.node_count()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xf00d));
            let shards = shard_features(&setup.features, &order, grid.machines())?;
            let ids: Vec<Vec<usize>> = shards.iter().map(|s| s.ids.clone()).collect();
            let table = FeatureLocationTable::from_shard_ids(grid.node_count(), &ids)?;
            run_workers(grid, mode, SimParams::default(), |ctx| {
                dist_gemm_fused(ctx, &shards[ctx.machine()], &table, &w).map(|_| ())
            })?
        }
        ("spmm", "fetch") => run_workers(grid, mode, SimParams::default(), |ctx| {
            let block = block_of(setup, ctx.machine());
            let ones = EdgeValues::ones(block.nnz());
            dist_spmm(ctx, &block, &ones, &setup.tiles[ctx.machine()], opts).map(|_| ())
        })?,
        ("spmm", "exchange") => run_workers(grid, mode, SimParams::default(), |ctx| {
            let block = block_of(setup, ctx.machine());
            let vals = sliced_ones(setup, ctx.machine());
            dist_spmm_graph_exchange(ctx, &block, &vals, &setup.tiles[ctx.machine()]).map(|_| ())
        })?,
        ("sddmm", "duplicate") => run_workers(grid, mode, SimParams::default(), |ctx| {
            let block = block_of(setup, ctx.machine());
            dist_sddmm_duplicate(ctx, &block, &setup.tiles[ctx.machine()], d, heads).map(|_| ())
        })?,
        ("sddmm", "split") => run_workers(grid, mode, SimParams::default(), |ctx| {
            let block = block_of(setup, ctx.machine());
            dist_sddmm_split(ctx, &block, &setup.tiles[ctx.machine()], d, heads).map(|_| ())
        })?,
        (p, v) => bail!("unknown primitive/variant {p}/{v}"),
    };
    if !run.stats.traffic.conservation_ok() {
        bail!("traffic conservation violated");
    }
    Ok(run.stats)
}

fn run_bench(a: BenchArgs) -> Result<()> {
    if a.primitive == "sddmm" && a.feat_dim % a.heads != 0 {
        bail!("{} heads do not divide feature width {}", a.heads, a.feat_dim);
    }
    let setup = bench_setup(a.graph.as_deref(), a.nodes, a.machines, a.feat_dim, a.seed)?;
    let opts = SpmmOptions {
        target_entries: a.group_entries,
        schedule: a.schedule.parse()?,
        compute_per_nonzero: 0.0,
    };
    let mode: TransportMode = a.transport.parse()?;
    let stats = run_primitive(&setup, &a.primitive, &a.variant, a.heads, &opts, mode, a.seed)?;
    let peak =
        stats.traffic.machines.iter().map(|m| m.peak_inflight_recv_entries).max().unwrap_or(0);
    let mut csv = String::from(
        "primitive,variant,p,m,n,d,nnz,entries_sent,bytes_sent,makespan,peak_inflight_entries\n",
    );
    csv.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{:.6},{}\n",
        a.primitive,
        a.variant,
        setup.grid.p(),
        setup.grid.m(),
        setup.grid.node_count(),
        setup.grid.feat_dim(),
        setup.graph.nnz(),
        stats.traffic.total_sent_entries(),
        stats.traffic.total_sent_bytes(),
        stats.makespan,
        peak,
    ));
    write_or_print(a.metrics_out.as_deref(), &csv)
}

#[derive(Args)]
struct CostModelArgs {
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, default_value_t = 1024)]
    nodes: usize,
    #[arg(long, value_parser = parse_machines, default_value = "2x2")]
    machines: (usize, usize),
    #[arg(long, default_value_t = 16)]
    feat_dim: usize,
    /// Heads for the score primitives; 1 matches the per-head models.
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value_t = 0.10)]
    tolerance: f64,
    #[arg(long, default_value = "sim")]
    transport: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV path; prints to stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Received entries per machine, averaged, over the tags a variant uses.
fn measured_recv(stats: &RunStats, tags: &[Tag], machines: usize) -> f64 {
    let total: u64 = tags.iter().map(|&t| stats.traffic.tag_totals(t).recv_entries).sum();
    total as f64 / machines as f64
}

fn run_cost_model(a: CostModelArgs) -> Result<()> {
    let setup = bench_setup(a.graph.as_deref(), a.nodes, a.machines, a.feat_dim, a.seed)?;
    let grid = &setup.grid;
    let params = CostParams::for_graph(
        grid.node_count(),
        setup.graph.nnz(),
        grid.feat_dim(),
        grid.p(),
        grid.m(),
    )?;
    let mode: TransportMode = a.transport.parse()?;
    let opts = SpmmOptions::default();
    let machines = grid.machines();
    let mut report = CostReport::new(a.tolerance);

    let cases: [(&str, &str, f64, &[Tag]); 6] = [
        (
            "gemm",
            "ring",
            gemm_cost(&params, GemmVariant::Ring).comm_entries,
            &[Tag::FeatureBlock, Tag::PartialResult],
        ),
        (
            "gemm",
            "allreduce",
            gemm_cost(&params, GemmVariant::AllReduce).comm_entries,
            &[Tag::PartialResult],
        ),
        (
            "spmm",
            "fetch",
            spmm_cost(&params, SpmmVariant::FeatureFetch).comm_entries,
            &[Tag::IdRequest, Tag::FeatureBlock],
        ),
        (
            "spmm",
            "exchange",
            spmm_cost(&params, SpmmVariant::GraphExchange).comm_entries,
            &[Tag::EdgeShuffle, Tag::PartialResult],
        ),
        (
            "sddmm",
            "duplicate",
            sddmm_cost(&params, SddmmVariant::Duplicate).comm_entries,
            &[Tag::AttnBlock, Tag::IdRequest],
        ),
        (
            "sddmm",
            "split",
            sddmm_cost(&params, SddmmVariant::Split).comm_entries,
            &[Tag::AttnBlock, Tag::IdRequest, Tag::PartialResult],
        ),
    ];
    for (primitive, variant, modeled, tags) in cases {
        let stats = run_primitive(&setup, primitive, variant, a.heads, &opts, mode, a.seed)?;
        report.add_measured(primitive, variant, params, modeled, measured_recv(&stats, tags, machines));
    }
    report.add_modeled("spmm", "two-d", params, spmm_cost(&params, SpmmVariant::TwoD).comm_entries);
    write_or_print(a.output.as_deref(), &report.to_csv())
}

// ---------------------------------------------------------------------------
// sharing
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SharingArgs {
    #[arg(long)]
    graph: PathBuf,
    /// batch-dedup, outermost-hop, or cache.
    #[arg(long, default_value = "batch-dedup")]
    scheme: String,
    #[arg(long, default_value_t = 1024)]
    cache_capacity: usize,
    /// Defaults to min(512, node count).
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 50)]
    fanout: usize,
    /// Use full neighbor lists instead of sampling.
    #[arg(long)]
    full_neighbor: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV path; prints to stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn run_sharing(a: SharingArgs) -> Result<()> {
    let g = load_graph(&a.graph)?;
    let scheme = match a.scheme.as_str() {
        "batch-dedup" => SharingScheme::BatchDedup,
        "outermost-hop" => SharingScheme::OutermostHopDedup,
        "cache" => SharingScheme::CacheDedup { capacity: a.cache_capacity },
        other => bail!("unknown scheme '{other}'"),
    };
    let batch_size = a.batch_size.unwrap_or_else(|| 512.min(g.node_count()));
    let model = SharingModel {
        scheme,
        batch_size,
        layers: a.layers,
        fanout: if a.full_neighbor { None } else { Some(a.fanout) },
    };
    let out = sharing_ratio(&g, &model, a.seed)?;
    let fanout = model.fanout.map(|f| f.to_string()).unwrap_or_else(|| "full".into());
    let csv = format!(
        "scheme,batch_size,k,fanout,ratio\n{},{},{},{},{:.6}\n",
        scheme.name(),
        batch_size,
        a.layers,
        fanout,
        out.ratio,
    );
    write_or_print(a.output.as_deref(), &csv)
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Generate(a) => run_generate(a),
        Cmd::Partition(a) => run_partition(a),
        Cmd::Infer(a) => run_infer(a),
        Cmd::BenchPrimitive(a) => run_bench(a),
        Cmd::CostModel(a) => run_cost_model(a),
        Cmd::Sharing(a) => run_sharing(a),
    }
}
