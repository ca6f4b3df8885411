//! Random-waypoint motion.
//!
//! Every node starts paused at its initial position, then alternates between
//! travelling in a straight line to a uniformly drawn destination and pausing
//! there. Positions are interpolated in closed form at query time.

use std::time::Duration;

use rand::Rng;

use crate::phys::Position;
use crate::sim::{RngStream, SimTime};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MobilityParams {
    pub width: f64,
    pub height: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub pause: Duration,
}

impl MobilityParams {
    pub fn is_static(&self) -> bool {
        self.v_max <= 0.0
    }
}

/// One leg of motion followed by its pause.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaypointState {
    pub origin: Position,
    pub destination: Position,
    /// Sampled travel speed, m/s.
    pub speed: f64,
    pub leg_start: SimTime,
    pub arrival: SimTime,
    pub pause_until: SimTime,
}

impl WaypointState {
    /// A pause at `at` lasting until `until`.
    pub fn parked(at: Position, from: SimTime, until: SimTime) -> Self {
        WaypointState {
            origin: at,
            destination: at,
            speed: 0.0,
            leg_start: from,
            arrival: from,
            pause_until: until,
        }
    }

    pub fn position_at(&self, t: SimTime) -> Position {
        if t >= self.arrival {
            return self.destination;
        }
        if t <= self.leg_start {
            return self.origin;
        }
        let frac = (t - self.leg_start).as_secs_f64() / (self.arrival - self.leg_start).as_secs_f64();
        Position::new(
            self.origin.x + (self.destination.x - self.origin.x) * frac,
            self.origin.y + (self.destination.y - self.origin.y) * frac,
        )
    }

    pub fn speed_at(&self, t: SimTime) -> f64 {
        if t >= self.leg_start && t < self.arrival {
            self.speed
        } else {
            0.0
        }
    }
}

/// Draws the leg that starts at `start` from `from`.
pub fn next_leg(params: &MobilityParams, from: Position, start: SimTime, rng: &mut RngStream) -> WaypointState {
    let destination = Position::new(rng.gen_range(0.0..=params.width), rng.gen_range(0.0..=params.height));
    let v_min = params.v_min.min(params.v_max);
    // Uniform on (v_min, v_max].
    let u: f64 = rng.gen();
    let speed = params.v_max - u * (params.v_max - v_min);
    let travel = from.distance(&destination) / speed;
    let arrival = start + Duration::from_secs_f64(travel);
    WaypointState {
        origin: from,
        destination,
        speed,
        leg_start: start,
        arrival,
        pause_until: arrival + params.pause,
    }
}

/// Trajectory of one node.
#[derive(Debug)]
pub struct Waypoint {
    params: MobilityParams,
    state: WaypointState,
    rng: RngStream,
}

impl Waypoint {
    pub fn new(params: MobilityParams, initial: Position, rng: RngStream) -> Self {
        let until = if params.is_static() {
            SimTime::MAX
        } else {
            SimTime::ZERO + params.pause
        };
        Waypoint {
            params,
            state: WaypointState::parked(initial, SimTime::ZERO, until),
            rng,
        }
    }

    pub fn state(&self) -> &WaypointState {
        &self.state
    }

    /// Draws new legs until the current one covers `t`. Time must not go
    /// backwards across calls.
    pub fn advance(&mut self, t: SimTime) {
        assert!(t >= self.state.leg_start, "mobility queried in the past");
        while t >= self.state.pause_until && self.state.pause_until != SimTime::MAX {
            let start = self.state.pause_until;
            self.state = next_leg(&self.params, self.state.destination, start, &mut self.rng);
        }
    }

    pub fn position_at(&mut self, t: SimTime) -> Position {
        self.advance(t);
        self.state.position_at(t)
    }

    pub fn current_speed(&mut self, t: SimTime) -> f64 {
        self.advance(t);
        self.state.speed_at(t)
    }
}
