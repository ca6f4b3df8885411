//! Window-based reliable transport with timeout-driven recovery.
//!
//! Slow start and congestion avoidance with a hard window cap, cumulative
//! ACKs, an exponentially weighted RTT estimator (Karn's rule for samples)
//! and go-back-N retransmission on timeout with the RTO doubled each time.
//! There is no fast retransmit and no delayed ACK.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use crate::routing::WireSize;
use crate::sim::SimTime;
use crate::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnId(pub u32);

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Segment {
    Data {
        conn: ConnId,
        seq: u64,
        /// Time the sequence number was first sent, kept across retransmissions.
        first_sent: SimTime,
        bytes: u32,
    },
    /// Highest sequence number received in order.
    Ack { conn: ConnId, ack: u64, bytes: u32 },
}

impl Segment {
    pub fn conn(&self) -> ConnId {
        match self {
            Segment::Data { conn, .. } | Segment::Ack { conn, .. } => *conn,
        }
    }
}

impl WireSize for Segment {
    fn wire_bytes(&self) -> u32 {
        match self {
            Segment::Data { bytes, .. } | Segment::Ack { bytes, .. } => *bytes,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransportParams {
    /// Maximum packets in flight.
    pub window: u32,
    pub data_bytes: u32,
    pub ack_bytes: u32,
    pub rto_initial: Duration,
    pub rto_min: Duration,
    pub rto_max: Duration,
}

impl Default for TransportParams {
    fn default() -> Self {
        TransportParams {
            window: 32,
            data_bytes: 512,
            ack_bytes: 40,
            rto_initial: Duration::from_secs(3),
            rto_min: Duration::from_secs(1),
            rto_max: Duration::from_secs(64),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TransportAction {
    /// Originate `segment` at `from` towards `to`.
    Send { from: NodeId, to: NodeId, segment: Segment },
    /// Fire [`Connection::on_rto`] with `generation` at `at`.
    ArmRto { conn: ConnId, generation: u64, at: SimTime },
}

/// Sender side of one connection.
#[derive(Debug)]
pub struct Connection {
    id: ConnId,
    source: NodeId,
    sink: NodeId,
    params: TransportParams,
    /// Lowest unacknowledged sequence number.
    snd_una: u64,
    /// Next sequence number to (re)send.
    next_seq: u64,
    max_sent: u64,
    cwnd: f64,
    ssthresh: f64,
    srtt: Option<f64>,
    rttvar: f64,
    rto: Duration,
    backoff_count: u32,
    last_sent: BTreeMap<u64, SimTime>,
    first_sent: BTreeMap<u64, SimTime>,
    retransmitted: BTreeSet<u64>,
    rto_generation: u64,
    rto_armed: bool,
    sent_total: u64,
    retransmissions: u64,
    timeouts: u64,
}

impl Connection {
    pub fn new(id: ConnId, source: NodeId, sink: NodeId, params: TransportParams) -> Self {
        Connection {
            id,
            source,
            sink,
            params,
            snd_una: 1,
            next_seq: 1,
            max_sent: 0,
            cwnd: 1.0,
            ssthresh: f64::from(params.window),
            srtt: None,
            rttvar: 0.0,
            rto: params.rto_initial.clamp(params.rto_min, params.rto_max),
            backoff_count: 0,
            last_sent: BTreeMap::new(),
            first_sent: BTreeMap::new(),
            retransmitted: BTreeSet::new(),
            rto_generation: 0,
            rto_armed: false,
            sent_total: 0,
            retransmissions: 0,
            timeouts: 0,
        }
    }

    pub fn id(&self) -> ConnId {
        self.id
    }

    pub fn source(&self) -> NodeId {
        self.source
    }

    pub fn sink(&self) -> NodeId {
        self.sink
    }

    pub fn in_flight(&self) -> u64 {
        self.next_seq - self.snd_una
    }

    pub fn cwnd(&self) -> f64 {
        self.cwnd
    }

    pub fn ssthresh(&self) -> f64 {
        self.ssthresh
    }

    pub fn rto(&self) -> Duration {
        self.rto
    }

    pub fn srtt(&self) -> Option<f64> {
        self.srtt
    }

    pub fn rttvar(&self) -> f64 {
        self.rttvar
    }

    pub fn backoff_count(&self) -> u32 {
        self.backoff_count
    }

    /// Highest sequence number ever sent.
    pub fn max_sent(&self) -> u64 {
        self.max_sent
    }

    pub fn sent_total(&self) -> u64 {
        self.sent_total
    }

    pub fn retransmissions(&self) -> u64 {
        self.retransmissions
    }

    pub fn timeouts(&self) -> u64 {
        self.timeouts
    }

    fn usable_window(&self) -> u64 {
        (self.cwnd.floor() as u64).min(u64::from(self.params.window)).max(1)
    }

    /// Sends as much as the window allows.
    pub fn pump(&mut self, now: SimTime, out: &mut Vec<TransportAction>) {
        while self.in_flight() < self.usable_window() {
            let seq = self.next_seq;
            let first_sent = *self.first_sent.entry(seq).or_insert(now);
            if seq <= self.max_sent {
                self.retransmitted.insert(seq);
                self.retransmissions += 1;
            }
            self.last_sent.insert(seq, now);
            self.max_sent = self.max_sent.max(seq);
            self.next_seq += 1;
            self.sent_total += 1;
            out.push(TransportAction::Send {
                from: self.source,
                to: self.sink,
                segment: Segment::Data {
                    conn: self.id,
                    seq,
                    first_sent,
                    bytes: self.params.data_bytes,
                },
            });
        }
        if !self.rto_armed && self.in_flight() > 0 {
            self.arm_rto(now, out);
        }
    }

    fn arm_rto(&mut self, now: SimTime, out: &mut Vec<TransportAction>) {
        self.rto_generation += 1;
        self.rto_armed = true;
        out.push(TransportAction::ArmRto {
            conn: self.id,
            generation: self.rto_generation,
            at: now + self.rto,
        });
    }

    fn disarm_rto(&mut self) {
        self.rto_generation += 1;
        self.rto_armed = false;
    }

    fn estimator_rto(&self) -> Option<Duration> {
        let srtt = self.srtt?;
        let secs = srtt + 4.0 * self.rttvar;
        Some(Duration::from_secs_f64(secs).clamp(self.params.rto_min, self.params.rto_max))
    }

    /// Cumulative acknowledgement of everything up to and including `ack`.
    pub fn on_ack(&mut self, ack: u64, now: SimTime, out: &mut Vec<TransportAction>) {
        if ack < self.snd_una || ack > self.max_sent {
            return;
        }
        if !self.retransmitted.contains(&ack) {
            if let Some(&sent) = self.last_sent.get(&ack) {
                let sample = now.since(sent).as_secs_f64();
                match self.srtt {
                    None => {
                        self.srtt = Some(sample);
                        self.rttvar = sample / 2.0;
                    }
                    Some(srtt) => {
                        self.rttvar = 0.75 * self.rttvar + 0.25 * (srtt - sample).abs();
                        self.srtt = Some(0.875 * srtt + 0.125 * sample);
                    }
                }
            }
        }
        self.rto = self.estimator_rto().unwrap_or(self.params.rto_initial.clamp(self.params.rto_min, self.params.rto_max));
        self.backoff_count = 0;

        let keep_from = ack + 1;
        self.last_sent = self.last_sent.split_off(&keep_from);
        self.first_sent = self.first_sent.split_off(&keep_from);
        self.retransmitted = self.retransmitted.split_off(&keep_from);
        self.snd_una = keep_from;
        self.next_seq = self.next_seq.max(self.snd_una);

        if self.cwnd < self.ssthresh {
            self.cwnd += 1.0;
        } else {
            self.cwnd += 1.0 / self.cwnd;
        }

        self.disarm_rto();
        self.pump(now, out);
    }

    /// Retransmission timer expiry. Stale generations are ignored.
    pub fn on_rto(&mut self, generation: u64, now: SimTime, out: &mut Vec<TransportAction>) {
        if generation != self.rto_generation || !self.rto_armed {
            return;
        }
        self.rto_armed = false;
        let outstanding = self.max_sent + 1 - self.snd_una;
        if outstanding == 0 {
            return;
        }
        self.timeouts += 1;
        self.backoff_count += 1;
        self.rto = (self.rto * 2).min(self.params.rto_max);
        self.ssthresh = (self.in_flight() as f64 / 2.0).max(2.0);
        self.cwnd = 1.0;
        self.next_seq = self.snd_una;
        self.pump(now, out);
    }
}

/// First-time arrival of a data segment at the sink.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arrival {
    pub seq: u64,
    pub delay: Duration,
}

/// Receiver side of one connection.
#[derive(Debug)]
pub struct Sink {
    conn: ConnId,
    node: NodeId,
    source: NodeId,
    ack_bytes: u32,
    expected: u64,
    out_of_order: BTreeSet<u64>,
    unique: u64,
}

impl Sink {
    pub fn new(conn: ConnId, node: NodeId, source: NodeId, ack_bytes: u32) -> Self {
        Sink {
            conn,
            node,
            source,
            ack_bytes,
            expected: 1,
            out_of_order: BTreeSet::new(),
            unique: 0,
        }
    }

    pub fn delivered(&self) -> u64 {
        self.unique
    }

    /// Handles a data segment; returns its first-arrival record, if new.
    /// An ACK is emitted for every segment, duplicates included.
    pub fn on_data(&mut self, seq: u64, first_sent: SimTime, now: SimTime, out: &mut Vec<TransportAction>) -> Option<Arrival> {
        let fresh = seq >= self.expected && !self.out_of_order.contains(&seq);
        if fresh {
            self.unique += 1;
            if seq == self.expected {
                self.expected += 1;
                while self.out_of_order.remove(&self.expected) {
                    self.expected += 1;
                }
            } else {
                self.out_of_order.insert(seq);
            }
        }
        out.push(TransportAction::Send {
            from: self.node,
            to: self.source,
            segment: Segment::Ack {
                conn: self.conn,
                ack: self.expected - 1,
                bytes: self.ack_bytes,
            },
        });
        fresh.then(|| Arrival {
            seq,
            delay: now.since(first_sent),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn secs(s: f64) -> SimTime {
        SimTime::from_secs_f64(s)
    }

    fn conn() -> Connection {
        Connection::new(ConnId(0), NodeId(0), NodeId(1), TransportParams::default())
    }

    fn sent_seqs(out: &[TransportAction]) -> Vec<u64> {
        out.iter()
            .filter_map(|a| match a {
                TransportAction::Send {
                    segment: Segment::Data { seq, .. },
                    ..
                } => Some(*seq),
                _ => None,
            })
            .collect()
    }

    fn last_rto(out: &[TransportAction]) -> (u64, SimTime) {
        out.iter()
            .rev()
            .find_map(|a| match a {
                TransportAction::ArmRto { generation, at, .. } => Some((*generation, *at)),
                _ => None,
            })
            .expect("rto armed")
    }

    #[test]
    fn fresh_connection_sends_one() {
        let mut c = conn();
        let mut out = Vec::new();
        c.pump(SimTime::ZERO, &mut out);
        assert_eq!(sent_seqs(&out), [1]);
        assert_eq!(c.in_flight(), 1);
    }

    #[test]
    fn window_caps_in_flight() {
        let mut c = conn();
        c.cwnd = 40.0;
        let mut out = Vec::new();
        c.pump(SimTime::ZERO, &mut out);
        assert_eq!(c.in_flight(), 32);
    }

    #[test]
    fn first_sample_initialises_estimator() {
        let mut c = conn();
        let mut out = Vec::new();
        c.pump(SimTime::ZERO, &mut out);
        c.on_ack(1, secs(0.2), &mut out);
        assert!((c.srtt().unwrap() - 0.2).abs() < 1e-12);
        assert!((c.rttvar() - 0.1).abs() < 1e-12);
        assert_eq!(c.rto(), Duration::from_secs(1));
    }

    #[test]
    fn slow_start_doubles_per_round() {
        let mut c = conn();
        let mut out = Vec::new();
        c.pump(SimTime::ZERO, &mut out);
        c.on_ack(1, secs(0.1), &mut out);
        assert_eq!(c.cwnd(), 2.0);
        c.on_ack(2, secs(0.2), &mut out);
        c.on_ack(3, secs(0.2), &mut out);
        assert_eq!(c.cwnd(), 4.0);
        assert_eq!(c.in_flight(), 4);
    }

    #[test]
    fn consecutive_timeouts_double_rto_up_to_cap() {
        let mut c = Connection::new(
            ConnId(0),
            NodeId(0),
            NodeId(1),
            TransportParams {
                rto_initial: Duration::from_secs(1),
                ..TransportParams::default()
            },
        );
        let mut out = Vec::new();
        c.pump(SimTime::ZERO, &mut out);
        let mut rtos = vec![c.rto().as_secs()];
        let mut now = SimTime::ZERO;
        for _ in 0..9 {
            let (generation, at) = last_rto(&out);
            now = at;
            c.on_rto(generation, now, &mut out);
            rtos.push(c.rto().as_secs());
        }
        assert_eq!(rtos, [1, 2, 4, 8, 16, 32, 64, 64, 64, 64]);
        assert_eq!(c.backoff_count(), 9);
        // Retransmitted packets give no RTT sample; the ACK still resets backoff.
        c.on_ack(1, now + Duration::from_millis(100), &mut out);
        assert_eq!(c.backoff_count(), 0);
        assert_eq!(c.srtt(), None);
        assert_eq!(c.rto(), Duration::from_secs(1));
    }

    #[test]
    fn timeout_goes_back_to_earliest_unacked() {
        let mut c = conn();
        c.cwnd = 4.0;
        let mut out = Vec::new();
        c.pump(SimTime::ZERO, &mut out);
        let (generation, at) = last_rto(&out);
        out.clear();
        c.on_rto(generation, at, &mut out);
        assert_eq!(sent_seqs(&out), [1]);
        assert_eq!(c.cwnd(), 1.0);
        assert_eq!(c.ssthresh(), 2.0);

        // ACK of 2 slides the window past the retransmitted head.
        c.on_ack(2, at + Duration::from_millis(50), &mut out);
        out.clear();
        let (generation, at) = {
            let mut tmp = Vec::new();
            c.disarm_rto();
            c.arm_rto(at, &mut tmp);
            last_rto(&tmp)
        };
        c.on_rto(generation, at, &mut out);
        assert_eq!(sent_seqs(&out), [3]);
    }

    #[test]
    fn stale_rto_is_noop() {
        let mut c = conn();
        let mut out = Vec::new();
        c.pump(SimTime::ZERO, &mut out);
        let (generation, _) = last_rto(&out);
        c.on_ack(1, secs(0.1), &mut out);
        out.clear();
        c.on_rto(generation, secs(3.0), &mut out);
        assert!(out.is_empty());
    }

    #[test]
    fn sink_acks_cumulatively() {
        let mut s = Sink::new(ConnId(0), NodeId(1), NodeId(0), 40);
        let mut out = Vec::new();
        let acks = |out: &[TransportAction]| -> Vec<u64> {
            out.iter()
                .filter_map(|a| match a {
                    TransportAction::Send {
                        segment: Segment::Ack { ack, .. },
                        ..
                    } => Some(*ack),
                    _ => None,
                })
                .collect()
        };
        for seq in 1..=5 {
            assert!(s.on_data(seq, SimTime::ZERO, secs(1.0), &mut out).is_some());
        }
        assert!(s.on_data(3, SimTime::ZERO, secs(1.0), &mut out).is_none());
        assert!(s.on_data(7, SimTime::ZERO, secs(1.0), &mut out).is_some());
        assert_eq!(acks(&out), [1, 2, 3, 4, 5, 5, 5]);
        let arrival = s.on_data(6, secs(0.5), secs(1.25), &mut out).unwrap();
        assert_eq!(arrival.delay, Duration::from_millis(750));
        assert_eq!(*acks(&out).last().unwrap(), 7);
        assert_eq!(s.delivered(), 7);
    }
}
