//! Minimal reactive source routing.
//!
//! Routes are discovered on demand by flooding a route request; the target
//! answers with the accumulated path, sent back along its reverse. Packets
//! carry their full route. When the MAC gives up on a next hop, the packets
//! queued for it are dropped, routes over the link are purged and a route
//! error travels back to each affected source, purging the link from every
//! cache it passes.
//!
//! No salvaging, no multipath, no cached replies: the agent is a pure state
//! machine that turns inputs into [`RoutingAction`]s.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::time::Duration;

use rand::Rng;

use crate::NodeId;

/// Size of a packet on the wire, before routing and MAC headers.
pub trait WireSize {
    fn wire_bytes(&self) -> u32;
}

/// Ordered hop list from source to destination.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceRoute(Vec<NodeId>);

impl SourceRoute {
    /// Fails if the route has fewer than two hops or repeats a node.
    pub fn new(hops: Vec<NodeId>) -> Result<Self, String> {
        if hops.len() < 2 {
            return Err(format!("route needs at least two nodes, got {hops:?}"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = hops.iter().find(|n| !seen.insert(**n)) {
            return Err(format!("route repeats node {dup}: {hops:?}"));
        }
        Ok(SourceRoute(hops))
    }

    pub fn hops(&self) -> &[NodeId] {
        &self.0
    }

    pub fn source(&self) -> NodeId {
        self.0[0]
    }

    pub fn destination(&self) -> NodeId {
        *self.0.last().expect("non-empty")
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn position(&self, node: NodeId) -> Option<usize> {
        self.0.iter().position(|&n| n == node)
    }

    /// Whether `a` and `b` are adjacent in either order.
    pub fn uses_link(&self, a: NodeId, b: NodeId) -> bool {
        self.0.windows(2).any(|w| (w[0] == a && w[1] == b) || (w[0] == b && w[1] == a))
    }

    pub fn reversed(&self) -> SourceRoute {
        SourceRoute(self.0.iter().rev().copied().collect())
    }
}

/// Destination -> best known route from the owning node.
#[derive(Clone, Debug, Default)]
pub struct RouteCache {
    routes: BTreeMap<NodeId, SourceRoute>,
}

impl RouteCache {
    /// Keeps the shorter route; on equal length the newer one wins.
    pub fn insert(&mut self, route: SourceRoute) {
        let dest = route.destination();
        match self.routes.get(&dest) {
            Some(existing) if existing.len() < route.len() => {}
            _ => {
                self.routes.insert(dest, route);
            }
        }
    }

    pub fn get(&self, dest: NodeId) -> Option<&SourceRoute> {
        self.routes.get(&dest)
    }

    /// Drops every route over the link `a`-`b`. Returns how many went.
    pub fn purge_link(&mut self, a: NodeId, b: NodeId) -> usize {
        let before = self.routes.len();
        self.routes.retain(|_, r| !r.uses_link(a, b));
        before - self.routes.len()
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }

    pub fn routes(&self) -> impl Iterator<Item = &SourceRoute> {
        self.routes.values()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RouteRequest {
    pub origin: NodeId,
    pub target: NodeId,
    pub request_id: u32,
    /// Nodes traversed so far, starting with the origin.
    pub path: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RouteReply {
    /// Discovered route, origin to target.
    pub route: SourceRoute,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RouteError {
    pub broken: (NodeId, NodeId),
    /// Source of the packet that could not be forwarded.
    pub origin: NodeId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Body<T> {
    Data(T),
    Reply(RouteReply),
    Error(RouteError),
}

/// A source-routed packet. `hop` is the index in `route` of the node that
/// currently holds it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Routed<T> {
    pub route: SourceRoute,
    pub hop: usize,
    pub body: Body<T>,
}

impl<T> Routed<T> {
    pub fn next_hop(&self) -> Option<NodeId> {
        self.route.hops().get(self.hop + 1).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Packet<T> {
    Request(RouteRequest),
    Unicast(Routed<T>),
}

impl<T> Packet<T> {
    pub fn kind(&self) -> PacketKind {
        match self {
            Packet::Request(_) => PacketKind::Rreq,
            Packet::Unicast(r) => match r.body {
                Body::Data(_) => PacketKind::Data,
                Body::Reply(_) => PacketKind::Rrep,
                Body::Error(_) => PacketKind::Rerr,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PacketKind {
    Data,
    Rreq,
    Rrep,
    Rerr,
}

impl PacketKind {
    pub fn is_control(self) -> bool {
        self != PacketKind::Data
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PacketKind::Data => "DATA",
            PacketKind::Rreq => "RREQ",
            PacketKind::Rrep => "RREP",
            PacketKind::Rerr => "RERR",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DropReason {
    /// The packet whose transmission failed at the MAC.
    LinkFailure,
    /// Queued behind a failed link and flushed with it.
    LinkFlushed,
    /// Discovery gave up.
    NoRoute,
    /// Send buffer overflow while waiting for a route.
    BufferOverflow,
    /// Arrived at a node that is not its next hop.
    Misrouted,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::LinkFailure => "link_failure",
            DropReason::LinkFlushed => "link_flushed",
            DropReason::NoRoute => "no_route",
            DropReason::BufferOverflow => "buffer_overflow",
            DropReason::Misrouted => "misrouted",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RoutingAction<T> {
    /// Hand to the MAC for `next_hop`.
    Unicast { next_hop: NodeId, packet: Routed<T> },
    /// Broadcast after `delay`.
    Broadcast { delay: Duration, request: RouteRequest },
    /// Data for this node's transport layer.
    Deliver { source: NodeId, payload: T },
    /// Call [`RoutingAgent::on_discovery_timeout`] after `delay`.
    ArmDiscoveryTimer { dest: NodeId, request_id: u32, delay: Duration },
    Drop { reason: DropReason, kind: PacketKind },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoutingConfig {
    pub send_buffer: usize,
    /// First discovery timeout; doubles with each attempt.
    pub rreq_timeout: Duration,
    pub rreq_attempts: u32,
    pub rreq_jitter: Duration,
    /// Fixed header bytes plus per-hop address bytes.
    pub header_base: u32,
    pub header_per_hop: u32,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            send_buffer: 64,
            rreq_timeout: Duration::from_millis(500),
            rreq_attempts: 3,
            rreq_jitter: Duration::from_millis(10),
            header_base: 4,
            header_per_hop: 4,
        }
    }
}

impl RoutingConfig {
    pub fn packet_bytes<T: WireSize>(&self, packet: &Packet<T>) -> u32 {
        let (hops, inner) = match packet {
            Packet::Request(r) => (r.path.len(), 8),
            Packet::Unicast(r) => (
                r.route.len(),
                match &r.body {
                    Body::Data(t) => t.wire_bytes(),
                    Body::Reply(_) => 8,
                    Body::Error(_) => 12,
                },
            ),
        };
        self.header_base + self.header_per_hop * hops as u32 + inner
    }
}

#[derive(Clone, Copy, Debug)]
struct Discovery {
    attempt: u32,
    request_id: u32,
}

/// Routing state of one node.
#[derive(Debug)]
pub struct RoutingAgent<T> {
    id: NodeId,
    cfg: RoutingConfig,
    cache: RouteCache,
    next_request_id: u32,
    seen: HashSet<(NodeId, u32)>,
    pending: BTreeMap<NodeId, Discovery>,
    buffer: VecDeque<(NodeId, T)>,
}

impl<T> RoutingAgent<T> {
    pub fn new(id: NodeId, cfg: RoutingConfig) -> Self {
        RoutingAgent {
            id,
            cfg,
            cache: RouteCache::default(),
            next_request_id: 0,
            seen: HashSet::new(),
            pending: BTreeMap::new(),
            buffer: VecDeque::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn cache(&self) -> &RouteCache {
        &self.cache
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn discovery_pending(&self, dest: NodeId) -> bool {
        self.pending.contains_key(&dest)
    }

    /// Sends `payload` to `dest`, discovering a route first if needed.
    pub fn originate(&mut self, dest: NodeId, payload: T, out: &mut Vec<RoutingAction<T>>) {
        if let Some(route) = self.cache.get(dest) {
            let packet = Routed {
                route: route.clone(),
                hop: 0,
                body: Body::Data(payload),
            };
            out.push(RoutingAction::Unicast {
                next_hop: route.hops()[1],
                packet,
            });
            return;
        }
        if self.buffer.len() >= self.cfg.send_buffer {
            self.buffer.pop_front();
            out.push(RoutingAction::Drop {
                reason: DropReason::BufferOverflow,
                kind: PacketKind::Data,
            });
        }
        self.buffer.push_back((dest, payload));
        if !self.pending.contains_key(&dest) {
            self.start_discovery(dest, 0, out);
        }
    }

    fn start_discovery(&mut self, dest: NodeId, attempt: u32, out: &mut Vec<RoutingAction<T>>) {
        let request_id = self.next_request_id;
        self.next_request_id += 1;
        self.seen.insert((self.id, request_id));
        self.pending.insert(dest, Discovery { attempt, request_id });
        out.push(RoutingAction::Broadcast {
            delay: Duration::ZERO,
            request: RouteRequest {
                origin: self.id,
                target: dest,
                request_id,
                path: vec![self.id],
            },
        });
        out.push(RoutingAction::ArmDiscoveryTimer {
            dest,
            request_id,
            delay: self.cfg.rreq_timeout * 2u32.pow(attempt),
        });
    }

    pub fn on_discovery_timeout(&mut self, dest: NodeId, request_id: u32, out: &mut Vec<RoutingAction<T>>) {
        let Some(d) = self.pending.get(&dest).copied() else { return };
        if d.request_id != request_id {
            return;
        }
        if d.attempt + 1 < self.cfg.rreq_attempts {
            self.start_discovery(dest, d.attempt + 1, out);
            return;
        }
        self.pending.remove(&dest);
        let before = self.buffer.len();
        self.buffer.retain(|(d, _)| *d != dest);
        for _ in self.buffer.len()..before {
            out.push(RoutingAction::Drop {
                reason: DropReason::NoRoute,
                kind: PacketKind::Data,
            });
        }
    }

    /// A packet decoded by the MAC from neighbour `from`.
    pub fn on_packet(&mut self, packet: Packet<T>, rng: &mut impl Rng, out: &mut Vec<RoutingAction<T>>) {
        match packet {
            Packet::Request(rreq) => self.on_request(rreq, rng, out),
            Packet::Unicast(routed) => self.on_unicast(routed, out),
        }
    }

    fn on_request(&mut self, mut rreq: RouteRequest, rng: &mut impl Rng, out: &mut Vec<RoutingAction<T>>) {
        if !self.seen.insert((rreq.origin, rreq.request_id)) || rreq.path.contains(&self.id) {
            return;
        }
        rreq.path.push(self.id);
        if rreq.target == self.id {
            let Ok(forward) = SourceRoute::new(rreq.path) else { return };
            let back = forward.reversed();
            self.cache.insert(back.clone());
            let next_hop = back.hops()[1];
            out.push(RoutingAction::Unicast {
                next_hop,
                packet: Routed {
                    route: back,
                    hop: 0,
                    body: Body::Reply(RouteReply { route: forward }),
                },
            });
            return;
        }
        let jitter_ns = self.cfg.rreq_jitter.as_nanos() as u64;
        let delay = Duration::from_nanos(rng.gen_range(0..=jitter_ns));
        out.push(RoutingAction::Broadcast { delay, request: rreq });
    }

    fn on_unicast(&mut self, mut routed: Routed<T>, out: &mut Vec<RoutingAction<T>>) {
        if routed.next_hop() != Some(self.id) {
            out.push(RoutingAction::Drop {
                reason: DropReason::Misrouted,
                kind: Packet::Unicast(routed).kind(),
            });
            return;
        }
        routed.hop += 1;
        if let Body::Error(err) = &routed.body {
            let (a, b) = err.broken;
            self.cache.purge_link(a, b);
        }
        if let Some(next_hop) = routed.next_hop() {
            out.push(RoutingAction::Unicast { next_hop, packet: routed });
            return;
        }
        let source = routed.route.source();
        match routed.body {
            Body::Data(payload) => out.push(RoutingAction::Deliver { source, payload }),
            Body::Reply(reply) => {
                let target = reply.route.destination();
                self.cache.insert(reply.route);
                self.pending.remove(&target);
                self.flush_buffer(target, out);
            }
            Body::Error(_) => {}
        }
    }

    fn flush_buffer(&mut self, dest: NodeId, out: &mut Vec<RoutingAction<T>>) {
        let Some(route) = self.cache.get(dest).cloned() else { return };
        let (ready, waiting): (VecDeque<_>, VecDeque<_>) = self.buffer.drain(..).partition(|(d, _)| *d == dest);
        self.buffer = waiting;
        for (_, payload) in ready {
            out.push(RoutingAction::Unicast {
                next_hop: route.hops()[1],
                packet: Routed {
                    route: route.clone(),
                    hop: 0,
                    body: Body::Data(payload),
                },
            });
        }
    }

    /// The MAC gave up on `next_hop` while sending `failed`; `flushed` are
    /// the other packets that were queued for the same hop.
    pub fn on_link_failure(
        &mut self,
        next_hop: NodeId,
        failed: Packet<T>,
        flushed: Vec<Packet<T>>,
        out: &mut Vec<RoutingAction<T>>,
    ) {
        self.cache.purge_link(self.id, next_hop);
        let mut notified = HashSet::new();
        let dropped = std::iter::once((DropReason::LinkFailure, failed))
            .chain(flushed.into_iter().map(|p| (DropReason::LinkFlushed, p)));
        for (reason, packet) in dropped {
            let kind = packet.kind();
            out.push(RoutingAction::Drop { reason, kind });
            let Packet::Unicast(routed) = packet else { continue };
            if kind == PacketKind::Rerr {
                continue;
            }
            let origin = routed.route.source();
            if origin == self.id || !notified.insert(origin) {
                continue;
            }
            let Some(here) = routed.route.position(self.id) else { continue };
            let Ok(back) = SourceRoute::new(routed.route.hops()[..=here].iter().rev().copied().collect()) else {
                continue;
            };
            out.push(RoutingAction::Unicast {
                next_hop: back.hops()[1],
                packet: Routed {
                    route: back,
                    hop: 0,
                    body: Body::Error(RouteError {
                        broken: (self.id, next_hop),
                        origin,
                    }),
                },
            });
        }
    }
}
