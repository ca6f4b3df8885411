//! Virtual clock, event queue and seeded random streams.
//!
//! Time is kept as integer nanoseconds so that ordering and arithmetic are
//! exact and identical on every platform. Events at the same instant fire in
//! the order they were scheduled.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A point on the simulation clock, with nanosecond resolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(nanos: u64) -> Self {
        SimTime(nanos)
    }

    pub const fn from_micros(micros: u64) -> Self {
        SimTime(micros * 1_000)
    }

    /// Rounds to the nearest nanosecond.
    ///
    /// Panics on negative or non-finite input.
    pub fn from_secs_f64(secs: f64) -> Self {
        assert!(
            secs.is_finite() && secs >= 0.0,
            "simulation time must be finite and non-negative, got {secs}"
        );
        SimTime((secs * 1e9).round() as u64)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    /// Elapsed time since `earlier`, zero if `earlier` is in the future.
    pub fn since(self, earlier: SimTime) -> Duration {
        Duration::from_nanos(self.0.saturating_sub(earlier.0))
    }
}

impl Add<Duration> for SimTime {
    type Output = SimTime;

    fn add(self, rhs: Duration) -> SimTime {
        let nanos = u64::try_from(rhs.as_nanos()).unwrap_or(u64::MAX);
        SimTime(self.0.saturating_add(nanos))
    }
}

impl Sub for SimTime {
    type Output = Duration;

    fn sub(self, rhs: SimTime) -> Duration {
        assert!(self >= rhs, "negative simulation interval: {self} - {rhs}");
        Duration::from_nanos(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:09}", self.0 / 1_000_000_000, self.0 % 1_000_000_000)
    }
}

/// Identifies a scheduled event for cancellation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn sequence(self) -> u64 {
        self.0
    }
}

/// A scheduled event as stored in the queue.
#[derive(Debug)]
pub struct Event<E> {
    pub fire_time: SimTime,
    pub sequence: u64,
    pub payload: E,
}

impl<E> PartialEq for Event<E> {
    fn eq(&self, other: &Self) -> bool {
        self.sequence == other.sequence
    }
}

impl<E> Eq for Event<E> {}

impl<E> PartialOrd for Event<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Event<E> {
    // Reversed so the max-heap yields the earliest (time, sequence) first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_time, other.sequence).cmp(&(self.fire_time, self.sequence))
    }
}

/// Future event set ordered by `(fire_time, sequence)`.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Event<E>>,
    live: HashSet<u64>,
    now: SimTime,
    next_sequence: u64,
    processed: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            live: HashSet::new(),
            now: SimTime::ZERO,
            next_sequence: 0,
            processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of events still pending (cancelled ones excluded).
    pub fn pending(&self) -> usize {
        self.live.len()
    }

    /// Number of events delivered so far.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Schedules `payload` to fire at `at`.
    ///
    /// Panics if `at` lies before the current time.
    pub fn schedule(&mut self, at: SimTime, payload: E) -> EventHandle {
        assert!(
            at >= self.now,
            "event scheduled in the past: at {at}, now {}",
            self.now
        );
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.live.insert(sequence);
        self.heap.push(Event {
            fire_time: at,
            sequence,
            payload,
        });
        EventHandle(sequence)
    }

    pub fn schedule_in(&mut self, delay: Duration, payload: E) -> EventHandle {
        let at = self.now + delay;
        self.schedule(at, payload)
    }

    /// Returns `true` if the event was pending and will now never fire.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.live.remove(&handle.0)
    }

    /// Pops the next live event with `fire_time <= t_end`, advancing the clock.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<Event<E>> {
        loop {
            match self.heap.peek() {
                Some(top) if top.fire_time <= t_end => {}
                _ => return None,
            }
            let event = self.heap.pop().expect("peeked");
            if !self.live.remove(&event.sequence) {
                continue;
            }
            self.now = event.fire_time;
            self.processed += 1;
            return Some(event);
        }
    }

    /// Moves the clock forward without firing anything.
    pub fn advance_to(&mut self, t: SimTime) {
        assert!(t >= self.now, "clock cannot run backwards: {t} < {}", self.now);
        self.now = t;
    }

    /// Fires every event up to and including `t_end`, then sets the clock to
    /// `t_end`. Returns the number of events fired.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, Event<E>),
    {
        assert!(t_end >= self.now, "run_until target {t_end} is in the past");
        let mut count = 0;
        while let Some(event) = self.pop_until(t_end) {
            handler(self, event);
            count += 1;
        }
        self.now = t_end;
        count
    }
}

/// Purpose label of a random stream. Each label gets an independent ChaCha
/// stream under the same master seed, so adding a node never shifts the
/// draws of another.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamId {
    Placement,
    Traffic,
    Mobility(u32),
    Mac(u32),
    Routing(u32),
}

impl StreamId {
    fn code(self) -> u64 {
        match self {
            StreamId::Placement => 1 << 32,
            StreamId::Traffic => 2 << 32,
            StreamId::Mobility(n) => (3 << 32) | u64::from(n),
            StreamId::Mac(n) => (4 << 32) | u64::from(n),
            StreamId::Routing(n) => (5 << 32) | u64::from(n),
        }
    }
}

pub type RngStream = ChaCha8Rng;

pub fn rng_stream(seed: u64, id: StreamId) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id.code());
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn drain(q: &mut EventQueue<&'static str>, until: SimTime) -> Vec<&'static str> {
        let mut seen = Vec::new();
        q.run_until(until, |_, ev| seen.push(ev.payload));
        seen
    }

    #[test]
    fn earlier_time_fires_first() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_nanos(1), "later");
        q.schedule(SimTime::ZERO, "now");
        assert_eq!(drain(&mut q, SimTime::from_nanos(5)), ["now", "later"]);
    }

    #[test]
    fn equal_times_fire_in_scheduling_order() {
        let mut q = EventQueue::new();
        let t = SimTime::from_micros(3);
        q.schedule(t, "a");
        q.schedule(t, "b");
        q.schedule(t, "c");
        assert_eq!(drain(&mut q, t), ["a", "b", "c"]);
    }

    #[test]
    fn cancelled_event_never_fires() {
        let mut q = EventQueue::new();
        let h = q.schedule(SimTime::from_micros(1), "x");
        q.schedule(SimTime::from_micros(2), "y");
        assert!(q.cancel(h));
        assert!(!q.cancel(h));
        assert_eq!(drain(&mut q, SimTime::from_micros(10)), ["y"]);
    }

    #[test]
    fn cancel_after_fire_is_false() {
        let mut q = EventQueue::new();
        let h = q.schedule(SimTime::ZERO, "x");
        drain(&mut q, SimTime::ZERO);
        assert!(!q.cancel(h));
    }

    #[test]
    fn empty_run_moves_clock() {
        let mut q: EventQueue<()> = EventQueue::new();
        let end = SimTime::from_secs_f64(300.0);
        assert_eq!(q.run_until(end, |_, _| {}), 0);
        assert_eq!(q.now(), end);
    }

    #[test]
    fn events_at_one_one_two() {
        let mut q = EventQueue::new();
        let s = |x| SimTime::from_secs_f64(x);
        q.schedule(s(2.0), "third");
        q.schedule(s(1.0), "first");
        q.schedule(s(1.0), "second");
        assert_eq!(drain(&mut q, s(2.0)), ["first", "second", "third"]);
        assert_eq!(q.now(), s(2.0));
    }

    #[test]
    fn handler_can_schedule_at_now() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_micros(1), 0u32);
        let mut order = Vec::new();
        q.run_until(SimTime::from_micros(1), |q, ev| {
            order.push(ev.payload);
            if ev.payload == 0 {
                let now = q.now();
                q.schedule(now, 1);
            }
        });
        assert_eq!(order, [0, 1]);
    }

    #[test]
    #[should_panic(expected = "scheduled in the past")]
    fn scheduling_in_past_panics() {
        let mut q = EventQueue::new();
        q.advance_to(SimTime::from_micros(5));
        q.schedule(SimTime::from_micros(4), ());
    }

    #[test]
    fn time_display_is_fixed_point() {
        assert_eq!(SimTime::from_nanos(12_000_345_000).to_string(), "12.000345000");
        assert_eq!(SimTime::from_secs_f64(0.25).to_string(), "0.250000000");
    }

    #[test]
    fn streams_are_reproducible_and_independent() {
        fn draws(seed: u64, id: StreamId) -> Vec<u64> {
            let mut rng = rng_stream(seed, id);
            (0..4).map(|_| rng.gen()).collect()
        }
        assert_eq!(draws(7, StreamId::Mac(1)), draws(7, StreamId::Mac(1)));
        assert_ne!(draws(7, StreamId::Mac(1)), draws(7, StreamId::Mac(2)));
        assert_ne!(draws(7, StreamId::Mac(1)), draws(8, StreamId::Mac(1)));
    }
}
