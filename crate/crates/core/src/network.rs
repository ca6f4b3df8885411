//! One simulated network: every layer of every node on a shared channel.

use std::collections::VecDeque;
use std::time::Duration;

use rand::Rng;

use crate::arl::{AdaptivePolicy, ArlParams, NeighborTable};
use crate::config::{ConfigError, MacPolicy, ScenarioConfig};
use crate::mac::{Addr, Mac, MacConfig, MacContext, MacEvent, MacFrame, MacTimer, RetryLimits, RetryPolicy, Sdu};
use crate::metrics::MetricsLedger;
use crate::mobility::Waypoint;
use crate::phys::{AirFrame, Channel, PhyTiming, Position, RxOutcome, TxId};
use crate::routing::{Packet, RouteRequest, RoutingAction, RoutingAgent, RoutingConfig};
use crate::sim::{rng_stream, EventHandle, EventQueue, RngStream, SimTime, StreamId};
use crate::trace::{Layer, Tracer};
use crate::trace_event;
use crate::transport::{ConnId, Connection, Segment, Sink, TransportAction};
use crate::NodeId;

type Pkt = Packet<Segment>;

#[derive(Debug)]
enum NetEvent {
    TxEnd(TxId),
    /// Carrier sense reported after any other event due at the same instant,
    /// so nodes whose countdown ends in the same slot still collide.
    PhyBusy(NodeId),
    Mac(NodeId, MacTimer),
    Rebroadcast(NodeId, RouteRequest),
    DiscoveryTimeout { node: NodeId, dest: NodeId, request_id: u32 },
    ConnStart(ConnId),
    Rto { conn: ConnId, generation: u64 },
}

#[derive(Debug)]
enum MacOutput {
    Transmit(MacFrame<Pkt>),
    Event(MacEvent<Pkt>),
}

#[derive(Debug)]
enum Work {
    Mac(NodeId, MacOutput),
    Routing(NodeId, RoutingAction<Segment>),
    Transport(TransportAction),
}

#[derive(Debug)]
struct Node {
    mac: Mac<Pkt>,
    routing: RoutingAgent<Segment>,
    neighbors: NeighborTable,
    mobility: Waypoint,
    mac_rng: RngStream,
    routing_rng: RngStream,
}

enum Limits<'a> {
    Static(RetryLimits),
    Adaptive {
        table: &'a NeighborTable,
        mobility: &'a mut Waypoint,
        params: &'a ArlParams,
    },
}

struct MacCtx<'a> {
    now: SimTime,
    node: NodeId,
    queue: &'a mut EventQueue<NetEvent>,
    rng: &'a mut RngStream,
    limits: Limits<'a>,
    out: &'a mut Vec<MacOutput>,
}

impl MacContext<Pkt> for MacCtx<'_> {
    fn now(&self) -> SimTime {
        self.now
    }

    fn schedule(&mut self, at: SimTime, timer: MacTimer) -> EventHandle {
        self.queue.schedule(at, NetEvent::Mac(self.node, timer))
    }

    fn cancel(&mut self, handle: EventHandle) {
        self.queue.cancel(handle);
    }

    fn draw_backoff(&mut self, cw: u32) -> u32 {
        self.rng.gen_range(0..cw)
    }

    fn retry_limits(&mut self, dest: NodeId) -> RetryLimits {
        match &mut self.limits {
            Limits::Static(l) => *l,
            Limits::Adaptive { table, mobility, params } => AdaptivePolicy {
                table,
                now: self.now,
                own_speed: mobility.current_speed(self.now),
                params,
            }
            .retry_limits(dest),
        }
    }

    fn transmit(&mut self, frame: MacFrame<Pkt>) {
        self.out.push(MacOutput::Transmit(frame));
    }

    fn notify(&mut self, event: MacEvent<Pkt>) {
        self.out.push(MacOutput::Event(event));
    }
}

/// Result of one run.
#[derive(Debug)]
pub struct RunSummary {
    pub ledger: MetricsLedger,
    pub flows: Vec<(NodeId, NodeId)>,
    pub events: u64,
    pub trace_lines: u64,
}

/// Draws `n` distinct ordered (source, sink) pairs of distinct nodes.
pub fn random_flows(n_nodes: u32, n: u32, rng: &mut impl Rng) -> Vec<(NodeId, NodeId)> {
    let mut flows = Vec::with_capacity(n as usize);
    while flows.len() < n as usize {
        let a = rng.gen_range(0..n_nodes);
        let b = rng.gen_range(0..n_nodes);
        let pair = (NodeId(a), NodeId(b));
        if a != b && !flows.contains(&pair) {
            flows.push(pair);
        }
    }
    flows
}

#[derive(Debug)]
pub struct Network {
    queue: EventQueue<NetEvent>,
    channel: Channel<MacFrame<Pkt>>,
    nodes: Vec<Node>,
    positions: Vec<Position>,
    positions_at: Option<SimTime>,
    is_static: bool,
    conns: Vec<Connection>,
    sinks: Vec<Sink>,
    flows: Vec<(NodeId, NodeId)>,
    policy: MacPolicy,
    default_limits: RetryLimits,
    arl: ArlParams,
    phy: PhyTiming,
    routing_cfg: RoutingConfig,
    ledger: MetricsLedger,
    tracer: Tracer,
    work: VecDeque<Work>,
    mac_out: Vec<MacOutput>,
    duration: Duration,
}

impl Network {
    pub fn new(cfg: &ScenarioConfig, tracer: Tracer) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let radio = cfg.radio().map_err(ConfigError::Invalid)?;
        let mac_cfg: MacConfig = cfg.mac_config();
        let routing_cfg = cfg.routing_config();
        let mobility = cfg.mobility_params();
        let n = cfg.n_nodes;

        let initial: Vec<Position> = match &cfg.positions {
            Some(list) => list.0.clone(),
            None => {
                let mut rng = rng_stream(cfg.seed, StreamId::Placement);
                (0..n)
                    .map(|_| Position::new(rng.gen_range(0.0..=cfg.width), rng.gen_range(0.0..=cfg.height)))
                    .collect()
            }
        };
        let nodes = (0..n)
            .map(|i| Node {
                mac: Mac::new(NodeId(i), mac_cfg),
                routing: RoutingAgent::new(NodeId(i), routing_cfg),
                neighbors: NeighborTable::new(),
                mobility: Waypoint::new(mobility, initial[i as usize], rng_stream(cfg.seed, StreamId::Mobility(i))),
                mac_rng: rng_stream(cfg.seed, StreamId::Mac(i)),
                routing_rng: rng_stream(cfg.seed, StreamId::Routing(i)),
            })
            .collect();

        let mut traffic = rng_stream(cfg.seed, StreamId::Traffic);
        let flows = match &cfg.flows {
            Some(list) => list.0.clone(),
            None => random_flows(n, cfg.n_connections, &mut traffic),
        };
        let tp = cfg.transport_params();
        let mut queue = EventQueue::new();
        let mut conns = Vec::new();
        let mut sinks = Vec::new();
        for (i, &(src, dst)) in flows.iter().enumerate() {
            let id = ConnId(i as u32);
            conns.push(Connection::new(id, src, dst, tp));
            sinks.push(Sink::new(id, dst, src, tp.ack_bytes));
            let start = cfg.flow_start_s + traffic.gen::<f64>() * cfg.flow_stagger_s;
            queue.schedule(SimTime::from_secs_f64(start), NetEvent::ConnStart(id));
        }

        Ok(Network {
            queue,
            channel: Channel::new(radio, n as usize),
            nodes,
            positions: initial,
            positions_at: None,
            is_static: mobility.is_static(),
            conns,
            sinks,
            flows,
            policy: cfg.mac_policy,
            default_limits: cfg.default_limits(),
            arl: cfg.arl_params(radio.rx_thresh),
            phy: cfg.phy_timing(),
            routing_cfg,
            ledger: MetricsLedger::new(cfg.duration()),
            tracer,
            work: VecDeque::new(),
            mac_out: Vec::new(),
            duration: cfg.duration(),
        })
    }

    pub fn flows(&self) -> &[(NodeId, NodeId)] {
        &self.flows
    }

    pub fn ledger(&self) -> &MetricsLedger {
        &self.ledger
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn connection(&self, id: ConnId) -> &Connection {
        &self.conns[id.0 as usize]
    }

    pub fn neighbors(&self, node: NodeId) -> &NeighborTable {
        &self.nodes[node.index()].neighbors
    }

    /// Runs to the configured duration.
    pub fn run(mut self) -> std::io::Result<RunSummary> {
        let end = SimTime::ZERO + self.duration;
        while let Some(ev) = self.queue.pop_until(end) {
            self.handle(ev.payload);
        }
        self.queue.advance_to(end);
        let events = self.queue.processed();
        let trace_lines = self.tracer.finish()?;
        Ok(RunSummary {
            ledger: self.ledger,
            flows: self.flows,
            events,
            trace_lines,
        })
    }

    fn handle(&mut self, ev: NetEvent) {
        match ev {
            NetEvent::TxEnd(id) => self.on_tx_end(id),
            NetEvent::PhyBusy(node) => {
                if self.channel.senses_energy(node) {
                    self.mac_call(node, |mac, ctx| mac.set_phy_busy(true, ctx));
                }
            }
            NetEvent::Mac(node, timer) => self.mac_call(node, |mac, ctx| mac.on_timer(timer, ctx)),
            NetEvent::Rebroadcast(node, request) => self.broadcast(node, request),
            NetEvent::DiscoveryTimeout { node, dest, request_id } => {
                let mut out = Vec::new();
                self.nodes[node.index()].routing.on_discovery_timeout(dest, request_id, &mut out);
                self.push_routing(node, out);
            }
            NetEvent::ConnStart(conn) => {
                let mut out = Vec::new();
                let now = self.now();
                self.conns[conn.0 as usize].pump(now, &mut out);
                self.push_transport(out);
            }
            NetEvent::Rto { conn, generation } => {
                let now = self.now();
                let c = &mut self.conns[conn.0 as usize];
                let before = c.timeouts();
                let mut out = Vec::new();
                c.on_rto(generation, now, &mut out);
                if c.timeouts() > before {
                    trace_event!(
                        self.tracer,
                        now,
                        c.source(),
                        Layer::Tpt,
                        "rto",
                        "conn={} backoff={} rto_ns={}",
                        conn.0,
                        c.backoff_count(),
                        c.rto().as_nanos()
                    );
                }
                self.push_transport(out);
            }
        }
        self.drain();
    }

    fn refresh_positions(&mut self, now: SimTime) {
        if self.positions_at == Some(now) || (self.is_static && self.positions_at.is_some()) {
            return;
        }
        for (p, node) in self.positions.iter_mut().zip(&mut self.nodes) {
            *p = node.mobility.position_at(now);
        }
        self.positions_at = Some(now);
    }

    fn mac_call(&mut self, node: NodeId, f: impl FnOnce(&mut Mac<Pkt>, &mut MacCtx<'_>)) {
        let now = self.queue.now();
        let Node {
            mac,
            neighbors,
            mobility,
            mac_rng,
            ..
        } = &mut self.nodes[node.index()];
        let limits = match self.policy {
            MacPolicy::Baseline => Limits::Static(self.default_limits),
            MacPolicy::Adaptive => Limits::Adaptive {
                table: neighbors,
                mobility,
                params: &self.arl,
            },
        };
        let mut ctx = MacCtx {
            now,
            node,
            queue: &mut self.queue,
            rng: mac_rng,
            limits,
            out: &mut self.mac_out,
        };
        f(mac, &mut ctx);
        self.work.extend(self.mac_out.drain(..).map(|o| Work::Mac(node, o)));
    }

    fn push_routing(&mut self, node: NodeId, actions: Vec<RoutingAction<Segment>>) {
        self.work.extend(actions.into_iter().map(|a| Work::Routing(node, a)));
    }

    fn push_transport(&mut self, actions: Vec<TransportAction>) {
        self.work.extend(actions.into_iter().map(Work::Transport));
    }

    fn drain(&mut self) {
        while let Some(w) = self.work.pop_front() {
            match w {
                Work::Mac(node, MacOutput::Transmit(frame)) => self.start_tx(node, frame),
                Work::Mac(node, MacOutput::Event(ev)) => self.on_mac_event(node, ev),
                Work::Routing(node, action) => self.on_routing_action(node, action),
                Work::Transport(action) => self.on_transport_action(action),
            }
        }
    }

    fn start_tx(&mut self, node: NodeId, frame: MacFrame<Pkt>) {
        let now = self.now();
        self.refresh_positions(now);
        let end = now + self.phy.airtime(frame.bytes);
        trace_event!(
            self.tracer,
            now,
            node,
            Layer::Phy,
            "tx",
            "frame={} dst={} bytes={} end={}",
            frame.kind.as_str(),
            match frame.dst {
                Addr::Unicast(n) => n.to_string(),
                Addr::Broadcast => "*".to_string(),
            },
            frame.bytes,
            end
        );
        let started = self.channel.begin(
            AirFrame {
                src: node,
                start: now,
                end,
                origin: self.positions[node.index()],
                body: frame,
            },
            &self.positions,
        );
        self.queue.schedule(started.end, NetEvent::TxEnd(started.id));
        for n in started.became_busy {
            self.queue.schedule(now, NetEvent::PhyBusy(n));
        }
    }

    fn on_tx_end(&mut self, id: TxId) {
        let finished = self.channel.finish(id);
        let src = finished.frame.src;
        self.mac_call(src, |mac, ctx| mac.on_tx_end(ctx));
        let body = &finished.frame.body;
        for &(node, outcome) in &finished.outcomes {
            let RxOutcome::Decoded { rss } = outcome else { continue };
            let addressed = body.dst == Addr::Broadcast || body.dst == Addr::Unicast(node);
            let frame = MacFrame {
                kind: body.kind,
                src: body.src,
                dst: body.dst,
                bytes: body.bytes,
                nav: body.nav,
                seq: body.seq,
                payload: if addressed { body.payload.clone() } else { None },
            };
            self.mac_call(node, |mac, ctx| mac.on_receive(frame, rss, ctx));
        }
        for node in finished.became_idle {
            self.mac_call(node, |mac, ctx| mac.set_phy_busy(false, ctx));
        }
    }

    fn on_mac_event(&mut self, node: NodeId, ev: MacEvent<Pkt>) {
        let now = self.now();
        match ev {
            MacEvent::Overheard { from, rss } => self.nodes[node.index()].neighbors.on_overhear(from, rss, now),
            MacEvent::Delivered { packet, .. } => {
                let mut out = Vec::new();
                let n = &mut self.nodes[node.index()];
                n.routing.on_packet(packet, &mut n.routing_rng, &mut out);
                self.push_routing(node, out);
            }
            MacEvent::Retry {
                next_hop,
                kind,
                counters,
                limits,
            } => {
                trace_event!(
                    self.tracer,
                    now,
                    node,
                    Layer::Mac,
                    "retry",
                    "next_hop={} frame={} ssrc={} slrc={} srl={} lrl={}",
                    next_hop,
                    kind.as_str(),
                    counters.ssrc,
                    counters.slrc,
                    limits.srl,
                    limits.lrl
                );
            }
            MacEvent::LinkFailure {
                next_hop,
                packet,
                counters,
                limits,
            } => {
                self.ledger.record_link_failure();
                trace_event!(
                    self.tracer,
                    now,
                    node,
                    Layer::Mac,
                    "link_failure",
                    "next_hop={} pkt={} ssrc={} slrc={} srl={} lrl={}",
                    next_hop,
                    packet.kind().as_str(),
                    counters.ssrc,
                    counters.slrc,
                    limits.srl,
                    limits.lrl
                );
                let mut flushed = Vec::new();
                self.mac_call(node, |mac, ctx| flushed = mac.purge_next_hop(next_hop, ctx));
                let mut out = Vec::new();
                self.nodes[node.index()].routing.on_link_failure(
                    next_hop,
                    packet,
                    flushed.into_iter().map(|s| s.packet).collect(),
                    &mut out,
                );
                self.push_routing(node, out);
            }
        }
    }

    fn enqueue(&mut self, node: NodeId, next_hop: Addr, packet: Pkt) -> bool {
        let kind = packet.kind();
        let bytes = self.routing_cfg.packet_bytes(&packet);
        let sdu = Sdu { next_hop, bytes, packet };
        let mut result = Ok(());
        self.mac_call(node, |mac, ctx| result = mac.enqueue(sdu, ctx));
        let now = self.now();
        if result.is_err() {
            trace_event!(self.tracer, now, node, Layer::Mac, "ifq_drop", "pkt={}", kind.as_str());
            return false;
        }
        self.ledger.record_routing_tx(kind);
        trace_event!(
            self.tracer,
            now,
            node,
            Layer::Rtg,
            "tx",
            "pkt={} next_hop={} bytes={}",
            kind.as_str(),
            match next_hop {
                Addr::Unicast(n) => n.to_string(),
                Addr::Broadcast => "*".to_string(),
            },
            bytes
        );
        true
    }

    fn broadcast(&mut self, node: NodeId, request: RouteRequest) {
        self.enqueue(node, Addr::Broadcast, Packet::Request(request));
    }

    fn on_routing_action(&mut self, node: NodeId, action: RoutingAction<Segment>) {
        let now = self.now();
        match action {
            RoutingAction::Unicast { next_hop, packet } => {
                self.enqueue(node, Addr::Unicast(next_hop), Packet::Unicast(packet));
            }
            RoutingAction::Broadcast { delay, request } => {
                if delay.is_zero() {
                    self.broadcast(node, request);
                } else {
                    self.queue.schedule(now + delay, NetEvent::Rebroadcast(node, request));
                }
            }
            RoutingAction::ArmDiscoveryTimer { dest, request_id, delay } => {
                self.queue
                    .schedule(now + delay, NetEvent::DiscoveryTimeout { node, dest, request_id });
            }
            RoutingAction::Drop { reason, kind } => {
                trace_event!(self.tracer, now, node, Layer::Rtg, "drop", "pkt={} reason={}", kind.as_str(), reason.as_str());
            }
            RoutingAction::Deliver { payload, .. } => self.on_segment(node, payload),
        }
    }

    fn on_segment(&mut self, node: NodeId, segment: Segment) {
        let now = self.now();
        let mut out = Vec::new();
        match segment {
            Segment::Data {
                conn,
                seq,
                first_sent,
                bytes,
            } => {
                let sink = &mut self.sinks[conn.0 as usize];
                debug_assert_eq!(self.flows[conn.0 as usize].1, node);
                if let Some(arrival) = sink.on_data(seq, first_sent, now, &mut out) {
                    self.ledger.record_delivery(arrival.delay, bytes);
                    trace_event!(
                        self.tracer,
                        now,
                        node,
                        Layer::Tpt,
                        "deliver",
                        "conn={} seq={} delay_ns={} bytes={}",
                        conn.0,
                        seq,
                        arrival.delay.as_nanos(),
                        bytes
                    );
                }
            }
            Segment::Ack { conn, ack, .. } => {
                trace_event!(self.tracer, now, node, Layer::Tpt, "ack", "conn={} ack={}", conn.0, ack);
                self.conns[conn.0 as usize].on_ack(ack, now, &mut out);
            }
        }
        self.push_transport(out);
    }

    fn on_transport_action(&mut self, action: TransportAction) {
        let now = self.now();
        match action {
            TransportAction::Send { from, to, segment } => {
                if let Segment::Data { conn, seq, .. } = &segment {
                    self.ledger.record_data_sent();
                    trace_event!(self.tracer, now, from, Layer::Tpt, "send", "conn={} seq={}", conn.0, seq);
                }
                let mut out = Vec::new();
                self.nodes[from.index()].routing.originate(to, segment, &mut out);
                self.push_routing(from, out);
            }
            TransportAction::ArmRto { conn, generation, at } => {
                self.queue.schedule(at, NetEvent::Rto { conn, generation });
            }
        }
    }
}
