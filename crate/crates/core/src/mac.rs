//! Simplified IEEE 802.11 DCF.
//!
//! One head-of-line transaction per node. Unicast frames go through
//! RTS/CTS/DATA/ACK; broadcasts are sent after DIFS plus backoff with no
//! handshake. On a missing CTS the short retry counter (`ssrc`) is bumped,
//! on a missing ACK the long one (`slrc`). The limits they are compared
//! against come from a [`RetryPolicy`] queried afresh at every timeout, so a
//! policy backed by live neighbour information can change its answer
//! mid-transaction.
//!
//! The MAC never touches the event queue or channel directly; it talks to
//! the outside world through a [`MacContext`].

use std::collections::{HashMap, VecDeque};
use std::time::Duration;

use crate::phys::PhyTiming;
use crate::sim::{EventHandle, SimTime};
use crate::NodeId;

/// Short and long retry limits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RetryLimits {
    pub srl: u32,
    pub lrl: u32,
}

impl RetryLimits {
    pub const fn new(srl: u32, lrl: u32) -> Self {
        RetryLimits { srl, lrl }
    }
}

/// 802.11 default limits.
pub const DEFAULT_LIMITS: RetryLimits = RetryLimits::new(7, 4);

/// Source of retry limits for transmissions to a given next hop.
pub trait RetryPolicy {
    fn retry_limits(&self, dest: NodeId) -> RetryLimits;
}

/// Fixed limits regardless of destination.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StaticPolicy(pub RetryLimits);

impl Default for StaticPolicy {
    fn default() -> Self {
        StaticPolicy(DEFAULT_LIMITS)
    }
}

impl RetryPolicy for StaticPolicy {
    fn retry_limits(&self, _dest: NodeId) -> RetryLimits {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacTimings {
    pub sifs: Duration,
    pub difs: Duration,
    pub slot: Duration,
    /// Wait after the end of an RTS before giving up on the CTS.
    pub cts_timeout: Duration,
    /// Wait after the end of a DATA frame before giving up on the ACK.
    pub ack_timeout: Duration,
    pub cw_min: u32,
    pub cw_max: u32,
}

/// Frame sizes in bytes. `header` is added to every DATA payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameSizes {
    pub rts: u32,
    pub cts: u32,
    pub ack: u32,
    pub header: u32,
}

impl Default for FrameSizes {
    fn default() -> Self {
        FrameSizes {
            rts: 44,
            cts: 38,
            ack: 38,
            header: 34,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacConfig {
    pub timings: MacTimings,
    pub sizes: FrameSizes,
    pub phy: PhyTiming,
    /// Interface queue bound, counting the head-of-line packet.
    pub queue_limit: usize,
}

impl MacConfig {
    /// Timeouts derived from frame airtimes: SIFS + response airtime + one slot.
    pub fn with_defaults(phy: PhyTiming, sizes: FrameSizes) -> Self {
        let sifs = Duration::from_micros(10);
        let slot = Duration::from_micros(20);
        MacConfig {
            timings: MacTimings {
                sifs,
                difs: Duration::from_micros(50),
                slot,
                cts_timeout: sifs + phy.airtime(sizes.cts) + slot,
                ack_timeout: sifs + phy.airtime(sizes.ack) + slot,
                cw_min: 32,
                cw_max: 1024,
            },
            sizes,
            phy,
            queue_limit: 50,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let t = &self.timings;
        if t.sifs >= t.difs {
            return Err(format!("SIFS {:?} must be shorter than DIFS {:?}", t.sifs, t.difs));
        }
        if t.cw_min == 0 || t.cw_min > t.cw_max {
            return Err(format!("need 0 < cw_min <= cw_max, got {} and {}", t.cw_min, t.cw_max));
        }
        if t.slot.is_zero() {
            return Err("slot time must be positive".into());
        }
        if t.cts_timeout <= t.sifs + self.phy.airtime(self.sizes.cts) {
            return Err("CTS timeout shorter than SIFS plus CTS airtime".into());
        }
        if t.ack_timeout <= t.sifs + self.phy.airtime(self.sizes.ack) {
            return Err("ACK timeout shorter than SIFS plus ACK airtime".into());
        }
        if self.queue_limit == 0 {
            return Err("interface queue must hold at least one packet".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Addr {
    Unicast(NodeId),
    Broadcast,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Rts,
    Cts,
    Data,
    Ack,
}

impl FrameKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameKind::Rts => "RTS",
            FrameKind::Cts => "CTS",
            FrameKind::Data => "DATA",
            FrameKind::Ack => "ACK",
        }
    }
}

#[derive(Clone, Debug)]
pub struct MacFrame<P> {
    pub kind: FrameKind,
    pub src: NodeId,
    pub dst: Addr,
    pub bytes: u32,
    /// Remaining exchange time announced to overhearing nodes.
    pub nav: Duration,
    /// Per-sender DATA sequence number, for duplicate suppression.
    pub seq: u64,
    pub payload: Option<P>,
}

/// A packet handed down for transmission.
#[derive(Clone, Debug)]
pub struct Sdu<P> {
    pub next_hop: Addr,
    pub bytes: u32,
    pub packet: P,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RetryCounters {
    pub ssrc: u32,
    pub slrc: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MacPhase {
    Idle,
    /// Waiting for the medium to go idle.
    Deferring,
    /// Counting down DIFS and backoff on an idle medium.
    Backoff,
    AwaitCts,
    /// CTS received, DATA goes out after SIFS.
    SendData,
    AwaitAck,
    Broadcasting,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MacTimer {
    Contend,
    CtsTimeout,
    AckTimeout,
    Respond,
    NavExpire,
}

#[derive(Debug)]
pub enum MacEvent<P> {
    /// A frame from `from` was decoded, whoever it was addressed to.
    Overheard { from: NodeId, rss: f64 },
    /// A DATA payload addressed to this node (or broadcast) arrived.
    Delivered { from: NodeId, packet: P },
    /// A timeout fired and the exchange will be retried.
    Retry {
        next_hop: NodeId,
        kind: FrameKind,
        counters: RetryCounters,
        limits: RetryLimits,
    },
    /// The retry limit was reached; the packet is dropped.
    LinkFailure {
        next_hop: NodeId,
        packet: P,
        counters: RetryCounters,
        limits: RetryLimits,
    },
}

/// Everything the MAC needs from its surroundings.
pub trait MacContext<P> {
    fn now(&self) -> SimTime;
    fn schedule(&mut self, at: SimTime, timer: MacTimer) -> EventHandle;
    fn cancel(&mut self, handle: EventHandle);
    /// Uniform backoff in `0..cw` slots.
    fn draw_backoff(&mut self, cw: u32) -> u32;
    fn retry_limits(&mut self, dest: NodeId) -> RetryLimits;
    /// Start sending `frame` now.
    fn transmit(&mut self, frame: MacFrame<P>);
    fn notify(&mut self, event: MacEvent<P>);
}

/// Returned by [`Mac::enqueue`] when the interface queue is full.
#[derive(Debug)]
pub struct QueueFull<P>(pub Sdu<P>);

#[derive(Debug)]
struct Transaction<P> {
    sdu: Sdu<P>,
    counters: RetryCounters,
    phase: MacPhase,
    seq: u64,
}

impl<P> Transaction<P> {
    fn unicast_dest(&self) -> Option<NodeId> {
        match self.sdu.next_hop {
            Addr::Unicast(n) => Some(n),
            Addr::Broadcast => None,
        }
    }
}

/// Per-node DCF state machine.
#[derive(Debug)]
pub struct Mac<P> {
    id: NodeId,
    cfg: MacConfig,
    queue: VecDeque<Sdu<P>>,
    txn: Option<Transaction<P>>,
    cw: u32,
    backoff_slots: u32,
    countdown_from: SimTime,
    contend_timer: Option<EventHandle>,
    timeout_timer: Option<EventHandle>,
    phy_busy: bool,
    transmitting: bool,
    nav_until: SimTime,
    nav_timer: Option<EventHandle>,
    sifs_frame: Option<(MacFrame<P>, EventHandle)>,
    last_seq_from: HashMap<NodeId, u64>,
    next_seq: u64,
}

impl<P: Clone> Mac<P> {
    pub fn new(id: NodeId, cfg: MacConfig) -> Self {
        Mac {
            id,
            cfg,
            queue: VecDeque::new(),
            txn: None,
            cw: cfg.timings.cw_min,
            backoff_slots: 0,
            countdown_from: SimTime::ZERO,
            contend_timer: None,
            timeout_timer: None,
            phy_busy: false,
            transmitting: false,
            nav_until: SimTime::ZERO,
            nav_timer: None,
            sifs_frame: None,
            last_seq_from: HashMap::new(),
            next_seq: 1,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn config(&self) -> &MacConfig {
        &self.cfg
    }

    pub fn phase(&self) -> MacPhase {
        match &self.txn {
            None => MacPhase::Idle,
            Some(t) if t.phase == MacPhase::Deferring && self.contend_timer.is_some() => MacPhase::Backoff,
            Some(t) => t.phase,
        }
    }

    pub fn counters(&self) -> Option<RetryCounters> {
        self.txn.as_ref().map(|t| t.counters)
    }

    pub fn cw(&self) -> u32 {
        self.cw
    }

    pub fn backoff_slots(&self) -> u32 {
        self.backoff_slots
    }

    pub fn nav_until(&self) -> SimTime {
        self.nav_until
    }

    /// Packets held, including the head-of-line one.
    pub fn queue_len(&self) -> usize {
        self.queue.len() + usize::from(self.txn.is_some())
    }

    fn medium_idle(&self, now: SimTime) -> bool {
        !self.phy_busy && !self.transmitting && self.nav_until <= now
    }

    pub fn enqueue(&mut self, sdu: Sdu<P>, ctx: &mut impl MacContext<P>) -> Result<(), QueueFull<P>> {
        if self.queue_len() >= self.cfg.queue_limit {
            return Err(QueueFull(sdu));
        }
        self.queue.push_back(sdu);
        self.start_next(ctx);
        Ok(())
    }

    /// Removes every packet waiting for `next_hop`, including the head of
    /// line if its exchange has not started yet.
    pub fn purge_next_hop(&mut self, next_hop: NodeId, ctx: &mut impl MacContext<P>) -> Vec<Sdu<P>> {
        let target = Addr::Unicast(next_hop);
        let mut removed = Vec::new();
        let head_waiting = matches!(&self.txn, Some(t) if t.sdu.next_hop == target && t.phase == MacPhase::Deferring);
        if head_waiting {
            if let Some(h) = self.contend_timer.take() {
                ctx.cancel(h);
            }
            removed.push(self.txn.take().expect("checked").sdu);
            self.cw = self.cfg.timings.cw_min;
        }
        let (drop, keep): (VecDeque<_>, VecDeque<_>) = self.queue.drain(..).partition(|s| s.next_hop == target);
        self.queue = keep;
        removed.extend(drop);
        self.start_next(ctx);
        removed
    }

    /// Carrier-sense input from the channel.
    pub fn set_phy_busy(&mut self, busy: bool, ctx: &mut impl MacContext<P>) {
        self.phy_busy = busy;
        if busy {
            self.freeze(ctx);
        } else {
            self.resume(ctx);
        }
    }

    /// Our own transmission has left the air.
    pub fn on_tx_end(&mut self, ctx: &mut impl MacContext<P>) {
        self.transmitting = false;
        if matches!(&self.txn, Some(t) if t.phase == MacPhase::Broadcasting) {
            self.txn = None;
            self.cw = self.cfg.timings.cw_min;
            self.start_next(ctx);
        }
        self.resume(ctx);
    }

    pub fn on_timer(&mut self, timer: MacTimer, ctx: &mut impl MacContext<P>) {
        match timer {
            MacTimer::Contend => {
                self.contend_timer = None;
                self.backoff_slots = 0;
                self.transmit_head(ctx);
            }
            MacTimer::CtsTimeout => {
                self.timeout_timer = None;
                self.on_cts_timeout(ctx);
            }
            MacTimer::AckTimeout => {
                self.timeout_timer = None;
                self.on_ack_timeout(ctx);
            }
            MacTimer::Respond => {
                if let Some((frame, _)) = self.sifs_frame.take() {
                    self.send_after_sifs(frame, ctx);
                }
            }
            MacTimer::NavExpire => {
                self.nav_timer = None;
                if self.nav_until <= ctx.now() {
                    self.resume(ctx);
                }
            }
        }
    }

    /// A frame decoded from the channel, with its received power.
    pub fn on_receive(&mut self, frame: MacFrame<P>, rss: f64, ctx: &mut impl MacContext<P>) {
        let now = ctx.now();
        ctx.notify(MacEvent::Overheard { from: frame.src, rss });
        let for_me = frame.dst == Addr::Unicast(self.id);
        if !for_me {
            if frame.dst == Addr::Broadcast && frame.kind == FrameKind::Data {
                if let Some(packet) = frame.payload {
                    ctx.notify(MacEvent::Delivered { from: frame.src, packet });
                }
            } else {
                self.update_nav(now + frame.nav, ctx);
            }
            return;
        }
        match frame.kind {
            FrameKind::Rts => {
                let busy_initiator = matches!(
                    self.txn.as_ref().map(|t| t.phase),
                    Some(MacPhase::AwaitCts | MacPhase::SendData | MacPhase::AwaitAck)
                );
                if busy_initiator || self.transmitting || self.sifs_frame.is_some() || self.nav_until > now {
                    return;
                }
                let t = &self.cfg.timings;
                let cts_air = self.cfg.phy.airtime(self.cfg.sizes.cts);
                let nav = frame.nav.saturating_sub(t.sifs + cts_air);
                let cts = self.control_frame(FrameKind::Cts, frame.src, self.cfg.sizes.cts, nav);
                self.arm_sifs(cts, ctx);
            }
            FrameKind::Cts => {
                let Some(txn) = self.txn.as_mut() else { return };
                if txn.phase != MacPhase::AwaitCts || txn.unicast_dest() != Some(frame.src) {
                    return;
                }
                if let Some(h) = self.timeout_timer.take() {
                    ctx.cancel(h);
                }
                txn.counters.ssrc = 0;
                txn.phase = MacPhase::SendData;
                let t = self.cfg.timings;
                let data = MacFrame {
                    kind: FrameKind::Data,
                    src: self.id,
                    dst: txn.sdu.next_hop,
                    bytes: txn.sdu.bytes + self.cfg.sizes.header,
                    nav: t.sifs + self.cfg.phy.airtime(self.cfg.sizes.ack),
                    seq: txn.seq,
                    payload: Some(txn.sdu.packet.clone()),
                };
                self.arm_sifs(data, ctx);
            }
            FrameKind::Data => {
                if !self.transmitting && self.sifs_frame.is_none() {
                    let ack = self.control_frame(FrameKind::Ack, frame.src, self.cfg.sizes.ack, Duration::ZERO);
                    self.arm_sifs(ack, ctx);
                }
                let duplicate = self.last_seq_from.get(&frame.src) == Some(&frame.seq);
                if !duplicate {
                    self.last_seq_from.insert(frame.src, frame.seq);
                    if let Some(packet) = frame.payload {
                        ctx.notify(MacEvent::Delivered { from: frame.src, packet });
                    }
                }
            }
            FrameKind::Ack => {
                let Some(txn) = self.txn.as_ref() else { return };
                if txn.phase != MacPhase::AwaitAck || txn.unicast_dest() != Some(frame.src) {
                    return;
                }
                if let Some(h) = self.timeout_timer.take() {
                    ctx.cancel(h);
                }
                self.txn = None;
                self.cw = self.cfg.timings.cw_min;
                self.start_next(ctx);
            }
        }
    }

    fn control_frame(&self, kind: FrameKind, to: NodeId, bytes: u32, nav: Duration) -> MacFrame<P> {
        MacFrame {
            kind,
            src: self.id,
            dst: Addr::Unicast(to),
            bytes,
            nav,
            seq: 0,
            payload: None,
        }
    }

    fn arm_sifs(&mut self, frame: MacFrame<P>, ctx: &mut impl MacContext<P>) {
        let at = ctx.now() + self.cfg.timings.sifs;
        let handle = ctx.schedule(at, MacTimer::Respond);
        self.sifs_frame = Some((frame, handle));
    }

    fn send_after_sifs(&mut self, frame: MacFrame<P>, ctx: &mut impl MacContext<P>) {
        if self.transmitting {
            return;
        }
        if frame.kind == FrameKind::Data {
            // The exchange may have been abandoned in the meantime.
            if !matches!(&self.txn, Some(t) if t.phase == MacPhase::SendData) {
                return;
            }
            let air = self.cfg.phy.airtime(frame.bytes);
            let at = ctx.now() + air + self.cfg.timings.ack_timeout;
            self.timeout_timer = Some(ctx.schedule(at, MacTimer::AckTimeout));
            if let Some(t) = self.txn.as_mut() {
                t.phase = MacPhase::AwaitAck;
            }
        }
        self.put_on_air(frame, ctx);
    }

    fn put_on_air(&mut self, frame: MacFrame<P>, ctx: &mut impl MacContext<P>) {
        self.transmitting = true;
        self.freeze(ctx);
        ctx.transmit(frame);
    }

    fn start_next(&mut self, ctx: &mut impl MacContext<P>) {
        if self.txn.is_some() {
            return;
        }
        let Some(sdu) = self.queue.pop_front() else { return };
        let seq = self.next_seq;
        self.next_seq += 1;
        self.txn = Some(Transaction {
            sdu,
            counters: RetryCounters::default(),
            phase: MacPhase::Deferring,
            seq,
        });
        self.backoff_slots = ctx.draw_backoff(self.cw);
        self.resume(ctx);
    }

    /// Starts (or restarts) the DIFS + backoff countdown if the medium is idle.
    fn resume(&mut self, ctx: &mut impl MacContext<P>) {
        let now = ctx.now();
        let contending = matches!(&self.txn, Some(t) if t.phase == MacPhase::Deferring);
        if !contending || self.contend_timer.is_some() || !self.medium_idle(now) {
            return;
        }
        let t = &self.cfg.timings;
        self.countdown_from = now;
        let at = now + t.difs + t.slot * self.backoff_slots;
        self.contend_timer = Some(ctx.schedule(at, MacTimer::Contend));
    }

    /// Stops the countdown, keeping the backoff slots not yet consumed.
    fn freeze(&mut self, ctx: &mut impl MacContext<P>) {
        let Some(handle) = self.contend_timer.take() else { return };
        ctx.cancel(handle);
        let t = &self.cfg.timings;
        let slots_from = self.countdown_from + t.difs;
        let now = ctx.now();
        if now > slots_from {
            let consumed = (now - slots_from).as_nanos() / t.slot.as_nanos();
            let consumed = u32::try_from(consumed).unwrap_or(u32::MAX);
            self.backoff_slots -= consumed.min(self.backoff_slots);
        }
    }

    fn update_nav(&mut self, until: SimTime, ctx: &mut impl MacContext<P>) {
        if until <= self.nav_until || until <= ctx.now() {
            return;
        }
        self.nav_until = until;
        if let Some(h) = self.nav_timer.take() {
            ctx.cancel(h);
        }
        self.nav_timer = Some(ctx.schedule(until, MacTimer::NavExpire));
        self.freeze(ctx);
    }

    fn transmit_head(&mut self, ctx: &mut impl MacContext<P>) {
        let Some(txn) = self.txn.as_mut() else { return };
        let frame = match txn.sdu.next_hop {
            Addr::Broadcast => {
                txn.phase = MacPhase::Broadcasting;
                MacFrame {
                    kind: FrameKind::Data,
                    src: self.id,
                    dst: Addr::Broadcast,
                    bytes: txn.sdu.bytes + self.cfg.sizes.header,
                    nav: Duration::ZERO,
                    seq: txn.seq,
                    payload: Some(txn.sdu.packet.clone()),
                }
            }
            Addr::Unicast(dest) => {
                txn.phase = MacPhase::AwaitCts;
                let t = &self.cfg.timings;
                let phy = &self.cfg.phy;
                let sizes = &self.cfg.sizes;
                let data_bytes = txn.sdu.bytes + sizes.header;
                let nav = t.sifs * 3 + phy.airtime(sizes.cts) + phy.airtime(data_bytes) + phy.airtime(sizes.ack);
                let rts_air = phy.airtime(sizes.rts);
                let at = ctx.now() + rts_air + t.cts_timeout;
                self.timeout_timer = Some(ctx.schedule(at, MacTimer::CtsTimeout));
                self.control_frame(FrameKind::Rts, dest, sizes.rts, nav)
            }
        };
        self.put_on_air(frame, ctx);
    }

    fn on_cts_timeout(&mut self, ctx: &mut impl MacContext<P>) {
        let Some(txn) = self.txn.as_mut() else { return };
        if txn.phase != MacPhase::AwaitCts {
            return;
        }
        txn.counters.ssrc += 1;
        let dest = txn.unicast_dest().expect("RTS only for unicast");
        let limits = ctx.retry_limits(dest);
        if txn.counters.ssrc >= limits.srl {
            self.fail(dest, limits, ctx);
        } else {
            self.retry(dest, FrameKind::Rts, limits, ctx);
        }
    }

    fn on_ack_timeout(&mut self, ctx: &mut impl MacContext<P>) {
        let Some(txn) = self.txn.as_mut() else { return };
        if txn.phase != MacPhase::AwaitAck {
            return;
        }
        txn.counters.slrc += 1;
        let dest = txn.unicast_dest().expect("DATA retries only for unicast");
        let limits = ctx.retry_limits(dest);
        if txn.counters.slrc >= limits.lrl {
            self.fail(dest, limits, ctx);
        } else {
            self.retry(dest, FrameKind::Data, limits, ctx);
        }
    }

    fn retry(&mut self, dest: NodeId, kind: FrameKind, limits: RetryLimits, ctx: &mut impl MacContext<P>) {
        let txn = self.txn.as_mut().expect("retrying without a transaction");
        txn.phase = MacPhase::Deferring;
        let counters = txn.counters;
        self.cw = (self.cw * 2).min(self.cfg.timings.cw_max);
        self.backoff_slots = ctx.draw_backoff(self.cw);
        ctx.notify(MacEvent::Retry {
            next_hop: dest,
            kind,
            counters,
            limits,
        });
        self.resume(ctx);
    }

    fn fail(&mut self, dest: NodeId, limits: RetryLimits, ctx: &mut impl MacContext<P>) {
        let txn = self.txn.take().expect("failing without a transaction");
        self.cw = self.cfg.timings.cw_min;
        ctx.notify(MacEvent::LinkFailure {
            next_hop: dest,
            packet: txn.sdu.packet,
            counters: txn.counters,
            limits,
        });
        self.start_next(ctx);
    }
}
