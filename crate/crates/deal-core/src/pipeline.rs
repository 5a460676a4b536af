//! Grouped communication and pipelined schedules for the sparse primitives.
//!
//! A machine's non-zeros are split into groups: one group of non-zeros whose
//! columns are locally owned, plus per remote row-group a run of groups over
//! sorted column ids, each holding at most `target_entries` non-zeros. Each
//! remote group turns into one id-request / feature-response exchange, so
//! the group size caps the receive buffer a single response can occupy, and
//! a schedule can overlap one group's compute with the next group's
//! transfer.
//!
//! Ordering discipline: remote groups are numbered first (ascending owner,
//! then ascending column range) and the local group last. Compute results
//! are buffered per group and flushed into the row accumulator in ascending
//! group id, one non-zero contribution at a time, so the output is
//! bit-identical for every schedule, every `target_entries`, and both
//! transports. The flush is the price of that invariance: it replays one
//! add per non-zero per column, a small constant factor over the multiply
//! work itself.

use std::collections::BTreeMap;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::CsrGraph;
use crate::partition::GridConfig;
use crate::scalar::Scalar;
use crate::transport::{Message, PendingFetch, WorkerCtx};

/// One communication/compute unit of a machine's sparse workload.
#[derive(Debug, Clone)]
pub struct NzGroup {
    pub id: usize,
    /// Remote row group that owns this group's columns; `None` marks the
    /// local group.
    pub owner: Option<usize>,
    /// Inclusive global column id span.
    pub col_range: (usize, usize),
    /// (local row, global column, non-zero index in the block), sorted by
    /// (column, row) for remote groups, CSR row-major for the local group.
    pub nonzeros: Vec<(usize, usize, usize)>,
    /// Sorted distinct columns; the ids one request ships.
    pub unique_cols: Vec<usize>,
}

impl NzGroup {
    pub fn nnz(&self) -> usize {
        self.nonzeros.len()
    }

    pub fn is_local(&self) -> bool {
        self.owner.is_none()
    }
}

/// Split a block's non-zeros into communication groups. Remote groups hold
/// at most `target_entries` non-zeros except when a single column's run is
/// larger (a column is never split across groups, so an id is requested at
/// most once per remote row group). Empty groups are elided.
pub fn partition_nonzeros(
    block: &CsrGraph,
    grid: &GridConfig,
    my_group: usize,
    target_entries: usize,
) -> Result<Vec<NzGroup>> {
    if target_entries == 0 {
        return Err(Error::Config("group size must be at least 1 non-zero".into()));
    }
    let mut local: Vec<(usize, usize, usize)> = Vec::new();
    let mut remote: BTreeMap<usize, Vec<(usize, usize, usize)>> = BTreeMap::new();
    let offsets = block.row_offsets();
    let cols = block.col_ids();
    for r in 0..block.row_count() {
        for idx in offsets[r]..offsets[r + 1] {
            let c = cols[idx];
            let owner = grid.owner_of(c);
            if owner == my_group {
                local.push((r, c, idx));
            } else {
                remote.entry(owner).or_default().push((r, c, idx));
            }
        }
    }

    let mut groups = Vec::new();
    for (owner, mut nzs) in remote {
        nzs.sort_unstable_by_key(|&(r, c, _)| (c, r));
        let mut start = 0;
        while start < nzs.len() {
            // Extend over whole column runs until the target is reached.
            let mut end = start;
            while end < nzs.len() {
                let mut run_end = end + 1;
                while run_end < nzs.len() && nzs[run_end].1 == nzs[end].1 {
                    run_end += 1;
                }
                if end > start && run_end - start > target_entries {
                    break;
                }
                end = run_end;
            }
            let chunk = nzs[start..end].to_vec();
            let mut unique_cols: Vec<usize> = chunk.iter().map(|&(_, c, _)| c).collect();
            unique_cols.dedup();
            groups.push(NzGroup {
                id: groups.len(),
                owner: Some(owner),
                col_range: (chunk[0].1, chunk[chunk.len() - 1].1),
                nonzeros: chunk,
                unique_cols,
            });
            start = end;
        }
    }
    if !local.is_empty() {
        let mut unique_cols: Vec<usize> = local.iter().map(|&(_, c, _)| c).collect();
        unique_cols.sort_unstable();
        unique_cols.dedup();
        let lo = *unique_cols.first().unwrap();
        let hi = *unique_cols.last().unwrap();
        groups.push(NzGroup {
            id: groups.len(),
            owner: None,
            col_range: (lo, hi),
            nonzeros: local,
            unique_cols,
        });
    }
    Ok(groups)
}

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Request, wait, compute, one group after another.
    Naive,
    /// Keep two id requests in flight ahead of the group being computed.
    PrefetchIds,
    /// Prefetch, plus the local group's compute is hoisted to the front to
    /// cover the pipeline fill time.
    LocalFirst,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(ScheduleKind::Naive),
            "prefetch" | "prefetch-ids" => Ok(ScheduleKind::PrefetchIds),
            "local-first" => Ok(ScheduleKind::LocalFirst),
            other => Err(Error::Config(format!("unknown schedule `{other}`"))),
        }
    }
}

/// One step of a group schedule. `IdComm` posts the group's id request,
/// `FeatComm` blocks for the feature response, `Compute` does the local
/// multiply work. All three exist for every group; the local group's comm
/// steps are no-ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    IdComm(usize),
    FeatComm(usize),
    Compute(usize),
}

#[derive(Debug, Clone)]
pub struct GroupSchedule {
    pub tasks: Vec<Task>,
}

const PREFETCH_DEPTH: usize = 2;

pub fn build_schedule(groups: &[NzGroup], kind: ScheduleKind) -> GroupSchedule {
    let n = groups.len();
    let mut tasks = Vec::with_capacity(3 * n);
    match kind {
        ScheduleKind::Naive => {
            for g in 0..n {
                tasks.push(Task::IdComm(g));
                tasks.push(Task::FeatComm(g));
                tasks.push(Task::Compute(g));
            }
        }
        ScheduleKind::PrefetchIds => {
            for g in 0..n.min(PREFETCH_DEPTH) {
                tasks.push(Task::IdComm(g));
            }
            for g in 0..n {
                tasks.push(Task::FeatComm(g));
                tasks.push(Task::Compute(g));
                if g + PREFETCH_DEPTH < n {
                    tasks.push(Task::IdComm(g + PREFETCH_DEPTH));
                }
            }
        }
        ScheduleKind::LocalFirst => {
            let local = groups.iter().position(|g| g.is_local());
            match local {
                None => return build_schedule(groups, ScheduleKind::PrefetchIds),
                Some(l) => {
                    // Comm steps for the local group are no-ops; running its
                    // compute while the first requests travel fills the
                    // pipeline.
                    let remote: Vec<usize> = (0..n).filter(|&g| g != l).collect();
                    for &g in remote.iter().take(PREFETCH_DEPTH) {
                        tasks.push(Task::IdComm(g));
                    }
                    tasks.push(Task::IdComm(l));
                    tasks.push(Task::FeatComm(l));
                    tasks.push(Task::Compute(l));
                    for (i, &g) in remote.iter().enumerate() {
                        tasks.push(Task::FeatComm(g));
                        tasks.push(Task::Compute(g));
                        if i + PREFETCH_DEPTH < remote.len() {
                            tasks.push(Task::IdComm(remote[i + PREFETCH_DEPTH]));
                        }
                    }
                }
            }
        }
    }
    GroupSchedule { tasks }
}

impl GroupSchedule {
    /// Every group appears once per phase and no phase precedes its
    /// dependency.
    pub fn validate(&self, group_count: usize) -> Result<()> {
        let mut seen_id = vec![false; group_count];
        let mut seen_feat = vec![false; group_count];
        let mut seen_comp = vec![false; group_count];
        for task in &self.tasks {
            match *task {
                Task::IdComm(g) => {
                    if seen_id[g] {
                        return Err(Error::Config(format!("group {g} requested twice")));
                    }
                    seen_id[g] = true;
                }
                Task::FeatComm(g) => {
                    if !seen_id[g] || seen_feat[g] {
                        return Err(Error::Config(format!("group {g} feature wait out of order")));
                    }
                    seen_feat[g] = true;
                }
                Task::Compute(g) => {
                    if !seen_feat[g] || seen_comp[g] {
                        return Err(Error::Config(format!("group {g} compute out of order")));
                    }
                    seen_comp[g] = true;
                }
            }
        }
        if seen_comp.iter().all(|&c| c) {
            Ok(())
        } else {
            Err(Error::Config("schedule does not cover every group".into()))
        }
    }
}

// ---------------------------------------------------------------------------
// Row accumulator
// ---------------------------------------------------------------------------

/// Per-output-row partial sums, written once per non-zero contribution at
/// flush time.
pub struct RowAccumulator<T> {
    data: DenseMatrix<T>,
    dirty: Vec<bool>,
}

impl<T: Scalar> RowAccumulator<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        RowAccumulator { data: DenseMatrix::zeros(rows, cols), dirty: vec![false; rows] }
    }

    #[inline]
    pub fn add_row(&mut self, r: usize, vals: &[T]) {
        let row = self.data.row_mut(r);
        for (dst, &v) in row.iter_mut().zip(vals) {
            *dst = *dst + v;
        }
        self.dirty[r] = true;
    }

    pub fn touched_rows(&self) -> usize {
        self.dirty.iter().filter(|&&d| d).count()
    }

    pub fn into_matrix(self) -> DenseMatrix<T> {
        self.data
    }
}

// ---------------------------------------------------------------------------
// Schedule runner
// ---------------------------------------------------------------------------

/// Drive a schedule over its groups. `start` posts a group's requests (an
/// empty vec for the local group), `compute` consumes the responses and
/// does the group's work. Responses are handed over in the order `start`
/// returned the pending fetches.
pub fn run_schedule<FStart, FCompute>(
    ctx: &WorkerCtx,
    groups: &[NzGroup],
    kind: ScheduleKind,
    mut start: FStart,
    mut compute: FCompute,
) -> Result<()>
where
    FStart: FnMut(&WorkerCtx, &NzGroup) -> Result<Vec<PendingFetch>>,
    FCompute: FnMut(&WorkerCtx, &NzGroup, Vec<Message>) -> Result<()>,
{
    let schedule = build_schedule(groups, kind);
    debug_assert!(schedule.validate(groups.len()).is_ok());
    let mut pending: Vec<Option<Vec<PendingFetch>>> = (0..groups.len()).map(|_| None).collect();
    let mut arrived: Vec<Option<Vec<Message>>> = (0..groups.len()).map(|_| None).collect();
    for task in schedule.tasks {
        match task {
            Task::IdComm(g) => {
                pending[g] = Some(start(ctx, &groups[g])?);
            }
            Task::FeatComm(g) => {
                let fetches = pending[g].take().expect("id request precedes feature wait");
                let mut msgs = Vec::with_capacity(fetches.len());
                for f in fetches {
                    msgs.push(ctx.fetch_wait(f)?);
                }
                arrived[g] = Some(msgs);
            }
            Task::Compute(g) => {
                let msgs = arrived[g].take().expect("feature wait precedes compute");
                compute(ctx, &groups[g], msgs)?;
            }
        }
    }
    Ok(())
}
