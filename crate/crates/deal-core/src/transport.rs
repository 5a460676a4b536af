//! Message passing between logical machines, with exact traffic accounting.
//!
//! Worker programs are ordinary blocking closures run by [`run_workers`],
//! one per machine. All cross-worker communication goes through the
//! [`WorkerCtx`] handle; messages are matched by `(src, dst, tag)` and each
//! such channel delivers in FIFO order, so a program's outputs depend only
//! on its own structure, never on thread timing.
//!
//! Two interchangeable implementations sit behind one core:
//!
//! * **Concurrent**: every machine is an OS thread running freely; blocking
//!   receives wait on a condition variable. Makespan is wall-clock time.
//! * **Simulated**: the same worker threads are cooperatively scheduled so
//!   that exactly one runs at a time, which makes event order fully
//!   deterministic. Time is a per-machine logical clock: a message of `b`
//!   payload bytes occupies its directed `(src, dst)` link for
//!   `latency + b / bandwidth` time units, links are independent, and a
//!   receive advances the receiver's clock to the delivery time. Makespan is
//!   the largest final clock. Quiescence with a pending receive raises a
//!   deadlock error naming the stuck machines.
//!
//! Both modes run identical protocol code and produce identical outputs and
//! identical traffic entry counts.
//!
//! Request/response traffic (ship ids, get feature rows back) uses
//! registered *responders*: the owner registers a pure function over its
//! immutable local data, [`WorkerCtx::fetch_start`] ships the request and
//! makes the response available with no server CPU involvement, modeling a
//! progress engine that serves reads while the owner computes. Responses
//! travel the normal link model and are matched FIFO per `(owner, tag)`.

use std::collections::HashMap;
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex, PoisonError};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::partition::GridConfig;
use crate::scalar::Scalar;

/// How long a concurrent-mode receive waits before giving up. The simulated
/// mode detects deadlocks exactly; this is only a backstop against hangs.
const CONCURRENT_RECV_TIMEOUT: Duration = Duration::from_secs(60);

// ---------------------------------------------------------------------------
// Messages and payloads
// ---------------------------------------------------------------------------

/// Message kinds. Accounting is broken down per tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    IdRequest,
    FeatureBlock,
    PartialResult,
    AttnBlock,
    EdgeShuffle,
    Control,
}

impl Tag {
    pub const ALL: [Tag; 6] = [
        Tag::IdRequest,
        Tag::FeatureBlock,
        Tag::PartialResult,
        Tag::AttnBlock,
        Tag::EdgeShuffle,
        Tag::Control,
    ];

    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        match self {
            Tag::IdRequest => 0,
            Tag::FeatureBlock => 1,
            Tag::PartialResult => 2,
            Tag::AttnBlock => 3,
            Tag::EdgeShuffle => 4,
            Tag::Control => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tag::IdRequest => "IdRequest",
            Tag::FeatureBlock => "FeatureBlock",
            Tag::PartialResult => "PartialResult",
            Tag::AttnBlock => "AttnBlock",
            Tag::EdgeShuffle => "EdgeShuffle",
            Tag::Control => "Control",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A payload plus its logical entry count (ids or scalars). Entry counts,
/// not bytes, are what the analytic cost formulas predict; bytes follow from
/// the element width. Framing (tags, lengths) is never counted.
#[derive(Debug, Clone, Default)]
pub struct Payload {
    pub bytes: Vec<u8>,
    pub entries: u64,
}

impl Payload {
    pub fn empty() -> Self {
        Payload::default()
    }
}

/// A received message.
#[derive(Debug, Clone)]
pub struct Message {
    pub src: usize,
    pub tag: Tag,
    pub bytes: Vec<u8>,
    pub entries: u64,
}

/// Wire width for node ids in a graph of `node_count` nodes.
pub fn id_width(node_count: usize) -> usize {
    if (node_count as u128) <= (1u128 << 32) {
        4
    } else {
        8
    }
}

pub fn encode_ids(ids: &[usize], width: usize) -> Payload {
    debug_assert!(width == 4 || width == 8);
    let mut bytes = Vec::with_capacity(ids.len() * width);
    for &id in ids {
        if width == 4 {
            bytes.extend_from_slice(&(id as u32).to_le_bytes());
        } else {
            bytes.extend_from_slice(&(id as u64).to_le_bytes());
        }
    }
    Payload { bytes, entries: ids.len() as u64 }
}

pub fn decode_ids(bytes: &[u8], width: usize) -> Vec<usize> {
    debug_assert!(width == 4 || width == 8);
    debug_assert_eq!(bytes.len() % width, 0);
    bytes
        .chunks_exact(width)
        .map(|c| {
            if width == 4 {
                u32::from_le_bytes(c.try_into().unwrap()) as usize
            } else {
                u64::from_le_bytes(c.try_into().unwrap()) as usize
            }
        })
        .collect()
}

pub fn encode_scalars<T: Scalar>(vals: &[T]) -> Payload {
    let mut bytes = Vec::with_capacity(vals.len() * T::WIDTH);
    for &v in vals {
        v.write_le(&mut bytes);
    }
    Payload { bytes, entries: vals.len() as u64 }
}

pub fn decode_scalars<T: Scalar>(bytes: &[u8]) -> Vec<T> {
    debug_assert_eq!(bytes.len() % T::WIDTH, 0);
    bytes.chunks_exact(T::WIDTH).map(T::read_le).collect()
}

// ---------------------------------------------------------------------------
// Traffic accounting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TagStats {
    pub sent_bytes: u64,
    pub recv_bytes: u64,
    pub sent_entries: u64,
    pub recv_entries: u64,
}

#[derive(Debug, Clone, Default)]
pub struct MachineStats {
    pub by_tag: [TagStats; Tag::COUNT],
    /// Largest number of payload entries addressed to this machine that were
    /// simultaneously sent-but-not-yet-consumed (receive-side buffering).
    pub peak_inflight_recv_entries: u64,
}

impl MachineStats {
    pub fn tag(&self, tag: Tag) -> &TagStats {
        &self.by_tag[tag.index()]
    }

    pub fn sent_entries(&self) -> u64 {
        self.by_tag.iter().map(|t| t.sent_entries).sum()
    }

    pub fn recv_entries(&self) -> u64 {
        self.by_tag.iter().map(|t| t.recv_entries).sum()
    }

    pub fn sent_bytes(&self) -> u64 {
        self.by_tag.iter().map(|t| t.sent_bytes).sum()
    }

    pub fn recv_bytes(&self) -> u64 {
        self.by_tag.iter().map(|t| t.recv_bytes).sum()
    }
}

/// Per-machine, per-tag traffic for one [`run_workers`] session.
#[derive(Debug, Clone, Default)]
pub struct TrafficStats {
    pub machines: Vec<MachineStats>,
    /// Messages still sitting in channels when the run ended. A clean
    /// protocol consumes everything it sends.
    pub undelivered_messages: u64,
}

impl TrafficStats {
    pub fn total_sent_entries(&self) -> u64 {
        self.machines.iter().map(|m| m.sent_entries()).sum()
    }

    pub fn total_recv_entries(&self) -> u64 {
        self.machines.iter().map(|m| m.recv_entries()).sum()
    }

    pub fn total_sent_bytes(&self) -> u64 {
        self.machines.iter().map(|m| m.sent_bytes()).sum()
    }

    pub fn total_recv_bytes(&self) -> u64 {
        self.machines.iter().map(|m| m.recv_bytes()).sum()
    }

    pub fn tag_totals(&self, tag: Tag) -> TagStats {
        let mut out = TagStats::default();
        for m in &self.machines {
            let t = m.tag(tag);
            out.sent_bytes += t.sent_bytes;
            out.recv_bytes += t.recv_bytes;
            out.sent_entries += t.sent_entries;
            out.recv_entries += t.recv_entries;
        }
        out
    }

    /// Every sent byte/entry was received, per tag, and no message was left
    /// undelivered.
    pub fn conservation_ok(&self) -> bool {
        if self.undelivered_messages != 0 {
            return false;
        }
        Tag::ALL.iter().all(|&tag| {
            let t = self.tag_totals(tag);
            t.sent_bytes == t.recv_bytes && t.sent_entries == t.recv_entries
        })
    }

    /// CSV with header `machine,tag,sent_bytes,recv_bytes,sent_entries,recv_entries`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("machine,tag,sent_bytes,recv_bytes,sent_entries,recv_entries\n");
        for (id, m) in self.machines.iter().enumerate() {
            for tag in Tag::ALL {
                let t = m.tag(tag);
                out.push_str(&format!(
                    "{id},{},{},{},{},{}\n",
                    tag.name(),
                    t.sent_bytes,
                    t.recv_bytes,
                    t.sent_entries,
                    t.recv_entries
                ));
            }
        }
        out
    }

    /// JSON run summary including the makespan.
    pub fn summary_json(&self, makespan: f64) -> String {
        let peak: u64 =
            self.machines.iter().map(|m| m.peak_inflight_recv_entries).max().unwrap_or(0);
        serde_json::json!({
            "machines": self.machines.len(),
            "makespan": makespan,
            "total_sent_bytes": self.total_sent_bytes(),
            "total_recv_bytes": self.total_recv_bytes(),
            "total_sent_entries": self.total_sent_entries(),
            "total_recv_entries": self.total_recv_entries(),
            "peak_inflight_recv_entries": peak,
            "undelivered_messages": self.undelivered_messages,
        })
        .to_string()
    }
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportMode {
    Concurrent,
    Simulated,
}

impl std::str::FromStr for TransportMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threads" | "concurrent" => Ok(TransportMode::Concurrent),
            "sim" | "simulated" => Ok(TransportMode::Simulated),
            other => Err(Error::Config(format!("unknown transport `{other}`"))),
        }
    }
}

/// Link model for the simulated transport. Time units are abstract;
/// `bandwidth` is payload bytes per time unit.
#[derive(Debug, Clone, Copy)]
pub struct SimParams {
    pub latency: f64,
    pub bandwidth: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams { latency: 1.0, bandwidth: 1024.0 }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.latency >= 0.0) || !self.latency.is_finite() {
            return Err(Error::Config(format!("latency must be finite and >= 0, got {}", self.latency)));
        }
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return Err(Error::Config(format!("bandwidth must be finite and > 0, got {}", self.bandwidth)));
        }
        Ok(())
    }
}

/// Traffic and timing for one completed run.
#[derive(Debug, Clone)]
pub struct RunStats {
    pub traffic: TrafficStats,
    pub makespan: f64,
}

/// Outputs (indexed by machine id) plus run statistics.
#[derive(Debug)]
pub struct WorkerRun<T> {
    pub outputs: Vec<T>,
    pub stats: RunStats,
}

// ---------------------------------------------------------------------------
// Core
// ---------------------------------------------------------------------------

type Responder = dyn Fn(usize, &[u8]) -> Payload + Send + Sync;

#[derive(Debug, Clone, PartialEq)]
enum Status {
    /// Holds the baton (simulated mode only ever has one).
    Running,
    /// Can run as soon as the baton is free.
    Ready,
    /// Waiting for a message on `(src, tag)`.
    BlockedRecv(usize, Tag),
    /// Waiting inside a barrier.
    BlockedBarrier,
    Done,
}

struct ChannelEntry {
    bytes: Vec<u8>,
    entries: u64,
    delivery_time: f64,
    event: usize,
}

struct MsgEvent {
    dst: usize,
    entries: u64,
    post: f64,
    consume: f64,
}

struct CoreState {
    channels: HashMap<(usize, usize, Tag), std::collections::VecDeque<ChannelEntry>>,
    responders: HashMap<(usize, Tag), Arc<Responder>>,
    stats: Vec<MachineStats>,
    clocks: Vec<f64>,
    link_free: HashMap<(usize, usize), f64>,
    status: Vec<Status>,
    live: usize,
    abort: Option<String>,
    barrier_gen: u64,
    barrier_count: usize,
    barrier_clock_max: f64,
    // Concurrent-mode running in-flight counters; simulated mode computes
    // peaks from the event log instead.
    inflight: Vec<u64>,
    peak_inflight: Vec<u64>,
    events: Vec<MsgEvent>,
}

struct Core {
    n: usize,
    mode: TransportMode,
    sim: SimParams,
    state: Mutex<CoreState>,
    cv: Condvar,
}

fn unpoison<T>(r: std::result::Result<T, PoisonError<T>>) -> T {
    r.unwrap_or_else(PoisonError::into_inner)
}

impl Core {
    fn new(n: usize, mode: TransportMode, sim: SimParams) -> Core {
        let mut status = vec![Status::Ready; n];
        if n > 0 {
            status[0] = Status::Running;
        }
        Core {
            n,
            mode,
            sim,
            state: Mutex::new(CoreState {
                channels: HashMap::new(),
                responders: HashMap::new(),
                stats: vec![MachineStats::default(); n],
                clocks: vec![0.0; n],
                link_free: HashMap::new(),
                status,
                live: n,
                abort: None,
                barrier_gen: 0,
                barrier_count: 0,
                barrier_clock_max: 0.0,
                inflight: vec![0; n],
                peak_inflight: vec![0; n],
                events: Vec::new(),
            }),
            cv: Condvar::new(),
        }
    }

    /// Pick the next runnable worker (simulated mode). Called whenever the
    /// current holder leaves `Running`. Smallest (clock, id) wins, so the
    /// schedule is a pure function of the program.
    fn schedule_next(&self, st: &mut CoreState) {
        debug_assert!(!st.status.iter().any(|s| *s == Status::Running));
        let mut best: Option<usize> = None;
        for (i, s) in st.status.iter().enumerate() {
            if *s == Status::Ready {
                best = match best {
                    None => Some(i),
                    Some(b) if st.clocks[i] < st.clocks[b] => Some(i),
                    other => other,
                };
            }
        }
        match best {
            Some(i) => st.status[i] = Status::Running,
            None => {
                if st.live > 0 && st.abort.is_none() {
                    let mut stuck = Vec::new();
                    for (i, s) in st.status.iter().enumerate() {
                        match s {
                            Status::BlockedRecv(src, tag) => {
                                stuck.push(format!("machine {i} waiting on {tag} from {src}"))
                            }
                            Status::BlockedBarrier => {
                                stuck.push(format!("machine {i} waiting at barrier"))
                            }
                            _ => {}
                        }
                    }
                    st.abort =
                        Some(format!("quiescent with pending receives: {}", stuck.join("; ")));
                }
            }
        }
    }

    fn worker_begin(&self, w: usize) {
        if self.mode != TransportMode::Simulated {
            return;
        }
        let mut st = unpoison(self.state.lock());
        while st.status[w] != Status::Running && st.abort.is_none() {
            st = unpoison(self.cv.wait(st));
        }
    }

    fn worker_end(&self, w: usize, failed: Option<String>) {
        let mut st = unpoison(self.state.lock());
        st.status[w] = Status::Done;
        st.live -= 1;
        if let Some(msg) = failed {
            if st.abort.is_none() {
                st.abort = Some(msg);
            }
        }
        if self.mode == TransportMode::Simulated {
            self.schedule_next(&mut st);
        }
        self.cv.notify_all();
    }

    /// Time the link `(src, dst)` finishes carrying `bytes` posted at
    /// `post_time`, updating the link's busy horizon.
    fn link_delivery(&self, st: &mut CoreState, src: usize, dst: usize, bytes: usize, post_time: f64) -> f64 {
        let free = st.link_free.get(&(src, dst)).copied().unwrap_or(0.0);
        let start = post_time.max(free);
        let done = start + self.sim.latency + bytes as f64 / self.sim.bandwidth;
        st.link_free.insert((src, dst), done);
        done
    }

    fn account_sent(st: &mut CoreState, machine: usize, tag: Tag, bytes: usize, entries: u64) {
        let t = &mut st.stats[machine].by_tag[tag.index()];
        t.sent_bytes += bytes as u64;
        t.sent_entries += entries;
    }

    fn account_recv(st: &mut CoreState, machine: usize, tag: Tag, bytes: usize, entries: u64) {
        let t = &mut st.stats[machine].by_tag[tag.index()];
        t.recv_bytes += bytes as u64;
        t.recv_entries += entries;
    }

    fn inflight_add(st: &mut CoreState, dst: usize, entries: u64) {
        st.inflight[dst] += entries;
        if st.inflight[dst] > st.peak_inflight[dst] {
            st.peak_inflight[dst] = st.inflight[dst];
        }
    }

    fn inflight_sub(st: &mut CoreState, dst: usize, entries: u64) {
        st.inflight[dst] -= entries;
    }
}

// ---------------------------------------------------------------------------
// Worker context
// ---------------------------------------------------------------------------

/// Receipt for an in-flight fetch; redeem with [`WorkerCtx::fetch_wait`].
#[must_use]
#[derive(Debug)]
pub struct PendingFetch {
    owner: usize,
    tag: Tag,
}

/// A worker's handle to the transport. One per machine per run.
pub struct WorkerCtx<'a> {
    machine: usize,
    grid: &'a GridConfig,
    core: &'a Core,
}

impl<'a> WorkerCtx<'a> {
    pub fn machine(&self) -> usize {
        self.machine
    }

    pub fn machines(&self) -> usize {
        self.core.n
    }

    pub fn grid(&self) -> &GridConfig {
        self.grid
    }

    fn check_peer(&self, peer: usize) -> Result<()> {
        if peer >= self.core.n {
            return Err(Error::Protocol {
                machine: self.machine,
                msg: format!("machine {peer} does not exist in a grid of {}", self.core.n),
            });
        }
        if peer == self.machine {
            return Err(Error::Protocol {
                machine: self.machine,
                msg: "self-send is not allowed".into(),
            });
        }
        Ok(())
    }

    fn check_abort(&self, st: &CoreState) -> Result<()> {
        match &st.abort {
            Some(msg) if msg.starts_with("quiescent") => Err(Error::Deadlock(msg.clone())),
            Some(msg) => Err(Error::Aborted(msg.clone())),
            None => Ok(()),
        }
    }

    /// Non-blocking buffered send.
    pub fn send(&self, dst: usize, tag: Tag, payload: Payload) -> Result<()> {
        self.check_peer(dst)?;
        let mut st = unpoison(self.core.state.lock());
        self.check_abort(&st)?;
        let bytes_len = payload.bytes.len();
        Core::account_sent(&mut st, self.machine, tag, bytes_len, payload.entries);
        let (delivery, event) = if self.core.mode == TransportMode::Simulated {
            let post = st.clocks[self.machine];
            let d = self.core.link_delivery(&mut st, self.machine, dst, bytes_len, post);
            st.events.push(MsgEvent { dst, entries: payload.entries, post, consume: f64::INFINITY });
            (d, st.events.len() - 1)
        } else {
            Core::inflight_add(&mut st, dst, payload.entries);
            (0.0, usize::MAX)
        };
        st.channels
            .entry((self.machine, dst, tag))
            .or_default()
            .push_back(ChannelEntry { bytes: payload.bytes, entries: payload.entries, delivery_time: delivery, event });
        if self.core.mode == TransportMode::Simulated {
            if st.status[dst] == Status::BlockedRecv(self.machine, tag) {
                st.status[dst] = Status::Ready;
            }
        } else {
            self.core.cv.notify_all();
        }
        Ok(())
    }

    /// Blocking receive of the next message from `src` with `tag`.
    pub fn recv(&self, src: usize, tag: Tag) -> Result<Message> {
        self.check_peer(src)?;
        let key = (src, self.machine, tag);
        let mut st = unpoison(self.core.state.lock());
        let deadline = Instant::now() + CONCURRENT_RECV_TIMEOUT;
        loop {
            self.check_abort(&st)?;
            if let Some(entry) = st.channels.get_mut(&key).and_then(|q| q.pop_front()) {
                if self.core.mode == TransportMode::Simulated {
                    let t = st.clocks[self.machine].max(entry.delivery_time);
                    st.clocks[self.machine] = t;
                    st.events[entry.event].consume = t;
                } else {
                    Core::inflight_sub(&mut st, self.machine, entry.entries);
                }
                Core::account_recv(&mut st, self.machine, tag, entry.bytes.len(), entry.entries);
                return Ok(Message { src, tag, bytes: entry.bytes, entries: entry.entries });
            }
            if self.core.mode == TransportMode::Simulated {
                st.status[self.machine] = Status::BlockedRecv(src, tag);
                self.core.schedule_next(&mut st);
                self.core.cv.notify_all();
                while st.status[self.machine] != Status::Running && st.abort.is_none() {
                    st = unpoison(self.core.cv.wait(st));
                }
            } else {
                let now = Instant::now();
                if now >= deadline {
                    return Err(Error::Aborted(format!(
                        "machine {} timed out waiting on {tag} from {src}",
                        self.machine
                    )));
                }
                let (guard, _) = unpoison(self.core.cv.wait_timeout(st, deadline - now));
                st = guard;
            }
        }
    }

    /// Register a responder for `tag` on this machine. The closure must be a
    /// pure function over data that stays immutable until it is
    /// unregistered; synchronize registration with a [`WorkerCtx::barrier`]
    /// before peers may fetch.
    pub fn register_responder(
        &self,
        tag: Tag,
        f: Arc<dyn Fn(usize, &[u8]) -> Payload + Send + Sync>,
    ) {
        let mut st = unpoison(self.core.state.lock());
        st.responders.insert((self.machine, tag), f);
    }

    pub fn unregister_responder(&self, tag: Tag) {
        let mut st = unpoison(self.core.state.lock());
        st.responders.remove(&(self.machine, tag));
    }

    /// Ship `request` to `owner`'s responder for `request_tag`; the response
    /// travels back under `response_tag` with normal link timing and
    /// accounting, but without occupying the owner's compute timeline.
    /// Responses from one owner are matched FIFO per tag, so wait in the
    /// order you started.
    pub fn fetch_start(
        &self,
        owner: usize,
        request_tag: Tag,
        response_tag: Tag,
        request: Payload,
    ) -> Result<PendingFetch> {
        self.check_peer(owner)?;
        let (responder, request_arrival) = {
            let mut st = unpoison(self.core.state.lock());
            self.check_abort(&st)?;
            let responder = st.responders.get(&(owner, request_tag)).cloned().ok_or_else(|| {
                Error::Protocol {
                    machine: self.machine,
                    msg: format!("machine {owner} has no responder for {request_tag}"),
                }
            })?;
            // Request leg: sent by me, consumed by the responder on arrival.
            let req_len = request.bytes.len();
            Core::account_sent(&mut st, self.machine, request_tag, req_len, request.entries);
            Core::account_recv(&mut st, owner, request_tag, req_len, request.entries);
            let arrival = if self.core.mode == TransportMode::Simulated {
                let post = st.clocks[self.machine];
                let d1 = self.core.link_delivery(&mut st, self.machine, owner, req_len, post);
                st.events.push(MsgEvent { dst: owner, entries: request.entries, post, consume: d1 });
                d1
            } else {
                Core::inflight_add(&mut st, owner, request.entries);
                Core::inflight_sub(&mut st, owner, request.entries);
                0.0
            };
            (responder, arrival)
        };

        // Run the responder outside the lock; it only reads its captured data.
        let response = responder(self.machine, &request.bytes);

        let mut st = unpoison(self.core.state.lock());
        self.check_abort(&st)?;
        let resp_len = response.bytes.len();
        Core::account_sent(&mut st, owner, response_tag, resp_len, response.entries);
        let (delivery, event) = if self.core.mode == TransportMode::Simulated {
            let post = request_arrival;
            let d2 = self.core.link_delivery(&mut st, owner, self.machine, resp_len, post);
            st.events.push(MsgEvent {
                dst: self.machine,
                entries: response.entries,
                post,
                consume: f64::INFINITY,
            });
            (d2, st.events.len() - 1)
        } else {
            Core::inflight_add(&mut st, self.machine, response.entries);
            (0.0, usize::MAX)
        };
        st.channels
            .entry((owner, self.machine, response_tag))
            .or_default()
            .push_back(ChannelEntry {
                bytes: response.bytes,
                entries: response.entries,
                delivery_time: delivery,
                event,
            });
        Ok(PendingFetch { owner, tag: response_tag })
    }

    /// Block until a fetch's response arrives.
    pub fn fetch_wait(&self, pending: PendingFetch) -> Result<Message> {
        self.recv(pending.owner, pending.tag)
    }

    /// Pairwise ring exchange inside `group` (machine ids, each holding one
    /// block per member, indexed by group position). Stage `s` sends the
    /// block for the member `s` positions ahead and receives from the member
    /// `s` positions behind; after `len - 1` stages every member has every
    /// block addressed to it. A group of two degenerates to one ping-pong
    /// exchange. `on_block` sees each received block as it lands, enabling
    /// overlap of the next stage with computation on the current one.
    pub fn ring_exchange_with(
        &self,
        group: &[usize],
        tag: Tag,
        mut blocks: Vec<Option<Payload>>,
        mut on_block: impl FnMut(usize, Message) -> Result<()>,
    ) -> Result<()> {
        let k = group.len();
        if blocks.len() != k {
            return Err(Error::Shape(format!(
                "ring exchange over {k} members got {} blocks",
                blocks.len()
            )));
        }
        let me_pos = group.iter().position(|&g| g == self.machine).ok_or_else(|| {
            Error::Protocol {
                machine: self.machine,
                msg: "ring exchange group does not contain this machine".into(),
            }
        })?;
        for s in 1..k {
            let to_pos = (me_pos + s) % k;
            let from_pos = (me_pos + k - s) % k;
            let payload = blocks[to_pos].take().ok_or_else(|| Error::Shape(format!(
                "ring exchange missing block for group position {to_pos}"
            )))?;
            self.send(group[to_pos], tag, payload)?;
            let msg = self.recv(group[from_pos], tag)?;
            on_block(from_pos, msg)?;
        }
        Ok(())
    }

    /// [`WorkerCtx::ring_exchange_with`], collecting the received blocks by
    /// group position (`None` at this machine's own slot).
    pub fn ring_exchange(
        &self,
        group: &[usize],
        tag: Tag,
        blocks: Vec<Option<Payload>>,
    ) -> Result<Vec<Option<Message>>> {
        let mut out: Vec<Option<Message>> = (0..group.len()).map(|_| None).collect();
        self.ring_exchange_with(group, tag, blocks, |pos, msg| {
            out[pos] = Some(msg);
            Ok(())
        })?;
        Ok(out)
    }

    /// Global barrier over all machines. In simulated mode every clock is
    /// advanced to the maximum at release.
    pub fn barrier(&self) -> Result<()> {
        let mut st = unpoison(self.core.state.lock());
        self.check_abort(&st)?;
        let gen = st.barrier_gen;
        st.barrier_count += 1;
        st.barrier_clock_max = st.barrier_clock_max.max(st.clocks[self.machine]);
        if st.barrier_count == self.core.n {
            let t = st.barrier_clock_max;
            for c in st.clocks.iter_mut() {
                *c = c.max(t);
            }
            st.barrier_count = 0;
            st.barrier_clock_max = 0.0;
            st.barrier_gen += 1;
            if self.core.mode == TransportMode::Simulated {
                for s in st.status.iter_mut() {
                    if *s == Status::BlockedBarrier {
                        *s = Status::Ready;
                    }
                }
            }
            self.core.cv.notify_all();
            return Ok(());
        }
        if self.core.mode == TransportMode::Simulated {
            st.status[self.machine] = Status::BlockedBarrier;
            self.core.schedule_next(&mut st);
            self.core.cv.notify_all();
            while !(st.barrier_gen > gen && st.status[self.machine] == Status::Running)
                && st.abort.is_none()
            {
                st = unpoison(self.core.cv.wait(st));
            }
            self.check_abort(&st)?;
        } else {
            while st.barrier_gen == gen && st.abort.is_none() {
                st = unpoison(self.core.cv.wait(st));
            }
            self.check_abort(&st)?;
        }
        Ok(())
    }

    /// Account `dt` time units of local compute on this machine's logical
    /// clock (simulated mode; a no-op cost model elsewhere).
    pub fn advance(&self, dt: f64) -> Result<()> {
        if !(dt >= 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("advance needs a finite dt >= 0, got {dt}")));
        }
        let mut st = unpoison(self.core.state.lock());
        st.clocks[self.machine] += dt;
        Ok(())
    }

    /// This machine's logical clock.
    pub fn now(&self) -> f64 {
        let st = unpoison(self.core.state.lock());
        st.clocks[self.machine]
    }
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic of unknown type".into()
    }
}

/// Run one worker closure per machine of `grid` and collect outputs by
/// machine id. Concurrent and simulated runs of the same program produce
/// identical outputs and identical traffic entry counts; the simulated run
/// additionally has a deterministic event order and logical makespan.
pub fn run_workers<T, F>(
    grid: &GridConfig,
    mode: TransportMode,
    sim: SimParams,
    f: F,
) -> Result<WorkerRun<T>>
where
    T: Send,
    F: Fn(&WorkerCtx) -> Result<T> + Send + Sync,
{
    sim.validate()?;
    let n = grid.machines();
    let core = Core::new(n, mode, sim);
    let started = Instant::now();

    let mut slots: Vec<Option<std::result::Result<Result<T>, String>>> =
        (0..n).map(|_| None).collect();

    std::thread::scope(|scope| {
        let core = &core;
        let f = &f;
        let handles: Vec<_> = (0..n)
            .map(|w| {
                scope.spawn(move || {
                    core.worker_begin(w);
                    let ctx = WorkerCtx { machine: w, grid, core };
                    let out = catch_unwind(AssertUnwindSafe(|| f(&ctx)));
                    let (failure, slot) = match out {
                        Ok(Ok(v)) => (None, Ok(Ok(v))),
                        Ok(Err(e)) => (Some(format!("machine {w} failed: {e}")), Ok(Err(e))),
                        Err(p) => {
                            let msg = panic_message(p);
                            (Some(format!("machine {w} panicked: {msg}")), Err(msg))
                        }
                    };
                    core.worker_end(w, failure);
                    (w, slot)
                })
            })
            .collect();
        for h in handles {
            let (w, slot) = h.join().expect("worker thread itself must not die");
            slots[w] = Some(slot);
        }
    });

    // First panic wins, then the first worker error by machine id, then any
    // teardown abort.
    let mut first_err: Option<Error> = None;
    for (w, slot) in slots.iter().enumerate() {
        match slot.as_ref().expect("every worker reports") {
            Err(msg) => {
                first_err = Some(Error::WorkerPanic { machine: w, msg: msg.clone() });
                break;
            }
            Ok(Err(e)) if first_err.is_none() && !matches!(e, Error::Aborted(_)) => {
                first_err = Some(clone_error(e));
            }
            _ => {}
        }
    }
    if first_err.is_none() {
        for slot in &slots {
            if let Some(Ok(Err(e))) = slot {
                first_err = Some(clone_error(e));
                break;
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }

    let outputs: Vec<T> = slots
        .into_iter()
        .map(|s| match s {
            Some(Ok(Ok(v))) => v,
            _ => unreachable!("errors handled above"),
        })
        .collect();

    let st = unpoison(core.state.into_inner());
    let undelivered: u64 = st.channels.values().map(|q| q.len() as u64).sum();
    let mut machines = st.stats;
    match mode {
        TransportMode::Simulated => {
            // Peak in-flight from the message interval log: +entries at post,
            // -entries at consume, removals first on ties.
            let mut per_dst: Vec<Vec<(f64, i64)>> = vec![Vec::new(); n];
            for ev in &st.events {
                per_dst[ev.dst].push((ev.post, ev.entries as i64));
                if ev.consume.is_finite() {
                    per_dst[ev.dst].push((ev.consume, -(ev.entries as i64)));
                }
            }
            for (dst, mut evs) in per_dst.into_iter().enumerate() {
                evs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let mut cur = 0i64;
                let mut peak = 0i64;
                for (_, d) in evs {
                    cur += d;
                    peak = peak.max(cur);
                }
                machines[dst].peak_inflight_recv_entries = peak as u64;
            }
        }
        TransportMode::Concurrent => {
            for (dst, m) in machines.iter_mut().enumerate() {
                m.peak_inflight_recv_entries = st.peak_inflight[dst];
            }
        }
    }
    let makespan = match mode {
        TransportMode::Simulated => st.clocks.iter().copied().fold(0.0f64, f64::max),
        TransportMode::Concurrent => started.elapsed().as_secs_f64(),
    };

    Ok(WorkerRun {
        outputs,
        stats: RunStats { traffic: TrafficStats { machines, undelivered_messages: undelivered }, makespan },
    })
}

fn clone_error(e: &Error) -> Error {
    // Errors cross the aggregation boundary as text; enough for callers.
    match e {
        Error::Deadlock(m) => Error::Deadlock(m.clone()),
        Error::WorkerPanic { machine, msg } => {
            Error::WorkerPanic { machine: *machine, msg: msg.clone() }
        }
        other => Error::Aborted(other.to_string()),
    }
}
