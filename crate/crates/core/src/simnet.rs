//! Deterministic discrete-event network simulator.
//!
//! Nodes are [`Actor`]s reacting to messages and timers through an
//! [`Outbox`]. Events fire in `(time, sequence)` order, so a run is a pure
//! function of its inputs. Link delays follow a partially synchronous
//! [`DelayModel`]: before GST a message may take up to `pre_gst_max` (or be
//! dropped, if enabled); from GST on every delivery lands within `delta`.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt::Debug;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{StallError, StallReason};
use crate::model::NodeId;
use crate::rng::{stream, stream_rng};

pub type Time = u64;

/// Messages that can cross the simulated network.
pub trait Wire: Clone + Debug {
    /// Exact serialized size.
    fn wire_bytes(&self) -> usize;
    /// Short label for traces.
    fn label(&self) -> &'static str;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    /// Post-GST delay bound Δ, in ticks (≥ 1).
    pub delta: Time,
    pub gst: Time,
    /// Pre-GST delay bound.
    pub pre_gst_max: Time,
    /// Probability of dropping a message sent before GST.
    #[serde(default)]
    pub drop_before_gst: f64,
    /// Draw delays uniformly from `[1, bound]` instead of using the bound.
    #[serde(default = "yes")]
    pub jitter: bool,
}

fn yes() -> bool {
    true
}

impl Default for DelayModel {
    fn default() -> Self {
        Self {
            delta: 10,
            gst: 0,
            pre_gst_max: 10,
            drop_before_gst: 0.0,
            jitter: true,
        }
    }
}

impl DelayModel {
    /// Fixed delay `delta` on every link.
    pub fn synchronous(delta: Time) -> Self {
        Self {
            delta,
            gst: 0,
            pre_gst_max: delta,
            drop_before_gst: 0.0,
            jitter: false,
        }
    }

    /// Delivery time for a message sent at `now`, or `None` if dropped.
    fn draw(&self, now: Time, rng: &mut ChaCha8Rng) -> Option<Time> {
        let delta = self.delta.max(1);
        if now >= self.gst {
            let d = if self.jitter { rng.random_range(1..=delta) } else { delta };
            return Some(now + d);
        }
        if self.drop_before_gst > 0.0 && rng.random::<f64>() < self.drop_before_gst {
            return None;
        }
        let bound = self.pre_gst_max.max(1);
        let d = if self.jitter { rng.random_range(1..=bound) } else { bound };
        // Anything still in flight at GST arrives within Δ of it.
        Some((now + d).min(self.gst + delta))
    }
}

/// Side effects requested by an actor while handling one event.
#[derive(Debug)]
pub struct Outbox<M, T> {
    now: Time,
    sends: Vec<(NodeId, M)>,
    timers: Vec<(Time, T)>,
}

impl<M, T> Outbox<M, T> {
    fn new(now: Time) -> Self {
        Self {
            now,
            sends: Vec::new(),
            timers: Vec::new(),
        }
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn send(&mut self, to: NodeId, msg: M) {
        self.sends.push((to, msg));
    }

    /// Fires `timer` at `now + after`.
    pub fn set_timer(&mut self, after: Time, timer: T) {
        self.timers.push((self.now + after, timer));
    }
}

pub trait Actor {
    type Msg: Wire;
    type Timer: Clone + Debug;

    fn on_start(&mut self, out: &mut Outbox<Self::Msg, Self::Timer>);
    fn on_message(&mut self, from: NodeId, msg: Self::Msg, out: &mut Outbox<Self::Msg, Self::Timer>);
    fn on_timer(&mut self, timer: Self::Timer, out: &mut Outbox<Self::Msg, Self::Timer>);
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteCounters {
    pub sent: u64,
    pub received: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimReport {
    pub now: Time,
    pub events: u64,
    pub bytes: Vec<ByteCounters>,
    pub dropped_bytes: u64,
    pub in_flight_bytes: u64,
    /// Largest observed post-GST delivery delay.
    pub max_post_gst_delay: Time,
}

impl SimReport {
    pub fn total_sent(&self) -> u64 {
        self.bytes.iter().map(|b| b.sent).sum()
    }

    pub fn total_received(&self) -> u64 {
        self.bytes.iter().map(|b| b.received).sum()
    }
}

enum Payload<M, T> {
    Message { from: NodeId, msg: M, sent_at: Time, bytes: u64 },
    Timer(T),
}

struct Event<M, T> {
    time: Time,
    seq: u64,
    target: NodeId,
    payload: Payload<M, T>,
}

impl<M, T> PartialEq for Event<M, T> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl<M, T> Eq for Event<M, T> {}

impl<M, T> PartialOrd for Event<M, T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<M, T> Ord for Event<M, T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

const TRACE_LEN: usize = 32;

pub struct Simulator<A: Actor> {
    nodes: Vec<A>,
    delay: DelayModel,
    seed: u64,
    queue: BinaryHeap<Reverse<Event<A::Msg, A::Timer>>>,
    seq: u64,
    now: Time,
    events: u64,
    links: Vec<Option<ChaCha8Rng>>,
    bytes: Vec<ByteCounters>,
    dropped_bytes: u64,
    in_flight_bytes: u64,
    max_post_gst_delay: Time,
    trace: VecDeque<String>,
    started: bool,
}

impl<A: Actor> Simulator<A> {
    pub fn new(nodes: Vec<A>, delay: DelayModel, seed: u64) -> Self {
        let n = nodes.len();
        Self {
            nodes,
            delay,
            seed,
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0,
            events: 0,
            links: (0..n * n).map(|_| None).collect(),
            bytes: vec![ByteCounters::default(); n],
            dropped_bytes: 0,
            in_flight_bytes: 0,
            max_post_gst_delay: 0,
            trace: VecDeque::with_capacity(TRACE_LEN),
            started: false,
        }
    }

    pub fn nodes(&self) -> &[A] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [A] {
        &mut self.nodes
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn report(&self) -> SimReport {
        SimReport {
            now: self.now,
            events: self.events,
            bytes: self.bytes.clone(),
            dropped_bytes: self.dropped_bytes,
            in_flight_bytes: self.in_flight_bytes,
            max_post_gst_delay: self.max_post_gst_delay,
        }
    }

    fn push(&mut self, time: Time, target: NodeId, payload: Payload<A::Msg, A::Timer>) {
        self.seq += 1;
        self.queue.push(Reverse(Event {
            time,
            seq: self.seq,
            target,
            payload,
        }));
    }

    fn link_rng(&mut self, from: NodeId, to: NodeId) -> &mut ChaCha8Rng {
        let n = self.nodes.len();
        let idx = from.index() * n + to.index();
        let seed = self.seed;
        self.links[idx].get_or_insert_with(|| stream_rng(seed, stream::LINK_BASE + idx as u64))
    }

    /// Schedules a message. Self-sends are delivered at once and carry no bytes.
    pub fn send(&mut self, from: NodeId, to: NodeId, msg: A::Msg) {
        let now = self.now;
        if from == to {
            self.push(now, to, Payload::Message { from, msg, sent_at: now, bytes: 0 });
            return;
        }
        let bytes = msg.wire_bytes() as u64;
        self.bytes[from.index()].sent += bytes;
        let delay = self.delay;
        match delay.draw(now, self.link_rng(from, to)) {
            Some(at) => {
                self.in_flight_bytes += bytes;
                self.push(at, to, Payload::Message { from, msg, sent_at: now, bytes });
            }
            None => self.dropped_bytes += bytes,
        }
    }

    fn flush(&mut self, from: NodeId, out: Outbox<A::Msg, A::Timer>) {
        for (to, msg) in out.sends {
            self.send(from, to, msg);
        }
        for (at, t) in out.timers {
            self.push(at, from, Payload::Timer(t));
        }
    }

    fn start(&mut self) {
        if self.started {
            return;
        }
        self.started = true;
        for i in 0..self.nodes.len() {
            let mut out = Outbox::new(self.now);
            self.nodes[i].on_start(&mut out);
            self.flush(NodeId(i as u32), out);
        }
    }

    fn note(&mut self, line: String) {
        if self.trace.len() == TRACE_LEN {
            self.trace.pop_front();
        }
        self.trace.push_back(line);
    }

    /// Processes one event. Returns false if the queue is empty.
    pub fn step(&mut self) -> bool {
        self.start();
        let Some(Reverse(ev)) = self.queue.pop() else {
            return false;
        };
        self.now = ev.time;
        self.events += 1;
        let target = ev.target;
        let mut out = Outbox::new(self.now);
        match ev.payload {
            Payload::Message { from, msg, sent_at, bytes } => {
                if bytes > 0 {
                    self.in_flight_bytes -= bytes;
                    self.bytes[target.index()].received += bytes;
                    if sent_at >= self.delay.gst {
                        let d = ev.time - sent_at;
                        assert!(
                            d <= self.delay.delta.max(1),
                            "post-GST delivery took {d} > delta {}",
                            self.delay.delta
                        );
                        self.max_post_gst_delay = self.max_post_gst_delay.max(d);
                    }
                }
                self.note(format!("t={} {}->{} {}", ev.time, from, target, msg.label()));
                self.nodes[target.index()].on_message(from, msg, &mut out);
            }
            Payload::Timer(t) => {
                self.note(format!("t={} timer@{} {:?}", ev.time, target, t));
                self.nodes[target.index()].on_timer(t, &mut out);
            }
        }
        self.flush(target, out);
        true
    }

    /// Runs until `done` holds, checked before every event.
    pub fn run_until(
        &mut self,
        mut done: impl FnMut(&[A], Time) -> bool,
        time_limit: Time,
    ) -> Result<SimReport, StallError> {
        self.start();
        loop {
            if done(&self.nodes, self.now) {
                return Ok(self.report());
            }
            match self.queue.peek() {
                None => return Err(self.stall(StallReason::QueueExhausted)),
                Some(Reverse(ev)) if ev.time > time_limit => {
                    return Err(self.stall(StallReason::TimeLimit(time_limit)))
                }
                Some(_) => {}
            }
            self.step();
        }
    }

    /// Runs until the queue is empty or `time_limit` is reached.
    pub fn run_to_quiescence(&mut self, time_limit: Time) -> SimReport {
        self.start();
        while let Some(Reverse(ev)) = self.queue.peek() {
            if ev.time > time_limit {
                break;
            }
            self.step();
        }
        self.report()
    }

    fn stall(&self, reason: StallReason) -> StallError {
        StallError {
            at: self.now,
            reason,
            trace: self.trace.iter().cloned().collect(),
        }
    }
}
