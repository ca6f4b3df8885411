//! Two-ray ground propagation, reception thresholds and the shared channel.
//!
//! The channel has no capture effect: a decodable frame is lost at a
//! receiver whenever any other frame sensed there (power at or above the
//! carrier-sense threshold) overlaps it in time, or when the receiver itself
//! transmits during the reception.

use std::time::Duration;

use crate::sim::SimTime;
use crate::NodeId;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Antenna, power and threshold parameters shared by all nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadioParams {
    /// Transmit power, watts.
    pub pt: f64,
    pub gt: f64,
    pub gr: f64,
    /// Antenna heights, meters.
    pub ht: f64,
    pub hr: f64,
    /// System loss, >= 1.
    pub loss: f64,
    /// Minimum power for a frame to be decoded, watts.
    pub rx_thresh: f64,
    /// Minimum power for a frame to be sensed, watts.
    pub cs_thresh: f64,
}

impl RadioParams {
    /// Builds parameters whose thresholds put the decode range at `tx_range`
    /// and the carrier-sense range at `cs_range` meters.
    #[allow(clippy::too_many_arguments)]
    pub fn calibrated(
        pt: f64,
        gt: f64,
        gr: f64,
        ht: f64,
        hr: f64,
        loss: f64,
        tx_range: f64,
        cs_range: f64,
    ) -> Result<Self, String> {
        if !(tx_range > 0.0 && cs_range >= tx_range) {
            return Err(format!(
                "need 0 < tx_range <= cs_range, got {tx_range} and {cs_range}"
            ));
        }
        let mut params = RadioParams {
            pt,
            gt,
            gr,
            ht,
            hr,
            loss,
            rx_thresh: 1.0,
            cs_thresh: 1.0,
        };
        params.rx_thresh = received_power(&params, tx_range);
        params.cs_thresh = received_power(&params, cs_range);
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("pt", self.pt),
            ("gt", self.gt),
            ("gr", self.gr),
            ("ht", self.ht),
            ("hr", self.hr),
            ("cs_thresh", self.cs_thresh),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(format!("{name} must be positive and finite, got {value}"));
            }
        }
        if !(self.loss >= 1.0) {
            return Err(format!("system loss must be >= 1, got {}", self.loss));
        }
        if !(self.cs_thresh <= self.rx_thresh) {
            return Err(format!(
                "carrier-sense threshold {} exceeds receive threshold {}",
                self.cs_thresh, self.rx_thresh
            ));
        }
        Ok(())
    }
}

/// Two-ray ground received power at distance `d`.
///
/// At `d == 0` the transmit power itself is returned instead of infinity.
pub fn received_power(params: &RadioParams, d: f64) -> f64 {
    if d <= 0.0 {
        return params.pt;
    }
    let numerator = params.pt * params.gt * params.gr * params.ht.powi(2) * params.hr.powi(2);
    numerator / (d.powi(4) * params.loss)
}

/// Distance at which [`received_power`] equals `thresh`.
pub fn range_from_threshold(params: &RadioParams, thresh: f64) -> f64 {
    let numerator = params.pt * params.gt * params.gr * params.ht.powi(2) * params.hr.powi(2);
    (numerator / (thresh * params.loss)).powf(0.25)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reception {
    Decodable,
    SenseOnly,
    Invisible,
}

pub fn classify_reception(power: f64, params: &RadioParams) -> Reception {
    if power >= params.rx_thresh {
        Reception::Decodable
    } else if power >= params.cs_thresh {
        Reception::SenseOnly
    } else {
        Reception::Invisible
    }
}

/// Bitrate and fixed per-frame overhead used to turn byte counts into airtime.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhyTiming {
    pub bitrate: f64,
    pub preamble: Duration,
}

impl PhyTiming {
    pub fn airtime(&self, bytes: u32) -> Duration {
        let payload = Duration::from_nanos((f64::from(bytes) * 8.0 / self.bitrate * 1e9).round() as u64);
        self.preamble + payload
    }
}

impl Default for PhyTiming {
    fn default() -> Self {
        PhyTiming {
            bitrate: 2e6,
            preamble: Duration::from_micros(192),
        }
    }
}

/// A frame on the air.
#[derive(Clone, Debug)]
pub struct AirFrame<F> {
    pub src: NodeId,
    pub start: SimTime,
    pub end: SimTime,
    /// Transmitter position when the transmission began.
    pub origin: Position,
    pub body: F,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxId(u64);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RxOutcome {
    Decoded { rss: f64 },
    Corrupted,
    SenseOnly,
}

#[derive(Debug)]
pub struct TxStarted {
    pub id: TxId,
    pub end: SimTime,
    /// Receivers whose medium went from idle to busy.
    pub became_busy: Vec<NodeId>,
}

#[derive(Debug)]
pub struct TxFinished<F> {
    pub frame: AirFrame<F>,
    pub outcomes: Vec<(NodeId, RxOutcome)>,
    /// Receivers whose medium went from busy to idle.
    pub became_idle: Vec<NodeId>,
}

#[derive(Debug)]
struct Arrival {
    tx: TxId,
    decodable: bool,
    corrupted: bool,
    power: f64,
}

#[derive(Debug, Default)]
struct Radio {
    arrivals: Vec<Arrival>,
    transmitting: Option<TxId>,
}

#[derive(Debug)]
struct InFlight<F> {
    id: TxId,
    frame: AirFrame<F>,
    heard_by: Vec<NodeId>,
}

/// The shared wireless medium.
#[derive(Debug)]
pub struct Channel<F> {
    params: RadioParams,
    radios: Vec<Radio>,
    in_flight: Vec<InFlight<F>>,
    next_id: u64,
}

impl<F> Channel<F> {
    pub fn new(params: RadioParams, nodes: usize) -> Self {
        Channel {
            params,
            radios: (0..nodes).map(|_| Radio::default()).collect(),
            in_flight: Vec::new(),
            next_id: 0,
        }
    }

    pub fn params(&self) -> &RadioParams {
        &self.params
    }

    /// Whether `node` currently senses energy from other transmitters.
    pub fn senses_energy(&self, node: NodeId) -> bool {
        !self.radios[node.index()].arrivals.is_empty()
    }

    pub fn is_transmitting(&self, node: NodeId) -> bool {
        self.radios[node.index()].transmitting.is_some()
    }

    /// Puts `frame` on the air. `positions` holds every node's position at
    /// the frame's start time, indexed by node id.
    pub fn begin(&mut self, frame: AirFrame<F>, positions: &[Position]) -> TxStarted {
        assert!(frame.end > frame.start, "frame must have positive airtime");
        let id = TxId(self.next_id);
        self.next_id += 1;
        let src = frame.src.index();

        let sender = &mut self.radios[src];
        assert!(
            sender.transmitting.is_none(),
            "node {} is already transmitting",
            frame.src
        );
        sender.transmitting = Some(id);
        // Half duplex: whatever the sender was receiving is lost.
        for arrival in &mut sender.arrivals {
            arrival.corrupted = true;
        }

        let mut heard_by = Vec::new();
        let mut became_busy = Vec::new();
        for (idx, radio) in self.radios.iter_mut().enumerate() {
            if idx == src {
                continue;
            }
            let power = received_power(&self.params, frame.origin.distance(&positions[idx]));
            let class = classify_reception(power, &self.params);
            if class == Reception::Invisible {
                continue;
            }
            let overlapping = !radio.arrivals.is_empty();
            if overlapping {
                for arrival in &mut radio.arrivals {
                    arrival.corrupted = true;
                }
            } else {
                became_busy.push(NodeId(idx as u32));
            }
            radio.arrivals.push(Arrival {
                tx: id,
                decodable: class == Reception::Decodable,
                corrupted: overlapping || radio.transmitting.is_some(),
                power,
            });
            heard_by.push(NodeId(idx as u32));
        }

        let end = frame.end;
        self.in_flight.push(InFlight {
            id,
            frame,
            heard_by,
        });
        TxStarted {
            id,
            end,
            became_busy,
        }
    }

    /// Takes a finished frame off the air and reports what each receiver got.
    pub fn finish(&mut self, id: TxId) -> TxFinished<F> {
        let pos = self
            .in_flight
            .iter()
            .position(|f| f.id == id)
            .expect("finishing an unknown transmission");
        let InFlight {
            frame, heard_by, ..
        } = self.in_flight.swap_remove(pos);
        self.radios[frame.src.index()].transmitting = None;

        let mut outcomes = Vec::with_capacity(heard_by.len());
        let mut became_idle = Vec::new();
        for node in heard_by {
            let radio = &mut self.radios[node.index()];
            let at = radio
                .arrivals
                .iter()
                .position(|a| a.tx == id)
                .expect("arrival recorded at begin");
            let arrival = radio.arrivals.swap_remove(at);
            let outcome = if !arrival.decodable {
                RxOutcome::SenseOnly
            } else if arrival.corrupted {
                RxOutcome::Corrupted
            } else {
                RxOutcome::Decoded { rss: arrival.power }
            };
            outcomes.push((node, outcome));
            if radio.arrivals.is_empty() {
                became_idle.push(node);
            }
        }
        TxFinished {
            frame,
            outcomes,
            became_idle,
        }
    }
}
