//! Scenario configuration in a flat `key = value` text format.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, unknown
//! keys are rejected, and serializing then parsing yields the same config.
//!
//! ```text
//! # light load, adaptive limits
//! mac_policy = adaptive
//! v_max = 12
//! n_connections = 2
//! flows = 0-5,3-7
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::arl::ArlParams;
use crate::mac::{FrameSizes, MacConfig, RetryLimits};
use crate::mobility::MobilityParams;
use crate::phys::{PhyTiming, Position, RadioParams};
use crate::routing::RoutingConfig;
use crate::transport::TransportParams;
use crate::NodeId;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given more than once")]
    DuplicateKey { line: usize, key: String },
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MacPolicy {
    Baseline,
    Adaptive,
}

impl MacPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            MacPolicy::Baseline => "baseline",
            MacPolicy::Adaptive => "adaptive",
        }
    }
}

impl fmt::Display for MacPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MacPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(MacPolicy::Baseline),
            "adaptive" => Ok(MacPolicy::Adaptive),
            other => Err(format!("expected `baseline` or `adaptive`, got `{other}`")),
        }
    }
}

/// Source and sink of each connection, written `0-5,3-7`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowList(pub Vec<(NodeId, NodeId)>);

impl fmt::Display for FlowList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (a, b)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}-{b}")?;
        }
        Ok(())
    }
}

impl FromStr for FlowList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|pair| {
                let (a, b) = pair
                    .trim()
                    .split_once('-')
                    .ok_or_else(|| format!("flow `{pair}` is not `src-dst`"))?;
                let node = |t: &str| t.trim().parse::<u32>().map(NodeId).map_err(|e| format!("flow `{pair}`: {e}"));
                Ok((node(a)?, node(b)?))
            })
            .collect::<Result<_, _>>()
            .map(FlowList)
    }
}

/// Initial node positions, written `x:y,x:y,...`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionList(pub Vec<Position>);

impl fmt::Display for PositionList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}", p.x, p.y)?;
        }
        Ok(())
    }
}

impl FromStr for PositionList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|xy| {
                let (x, y) = xy.trim().split_once(':').ok_or_else(|| format!("position `{xy}` is not `x:y`"))?;
                let coord = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("position `{xy}`: {e}"));
                Ok(Position::new(coord(x)?, coord(y)?))
            })
            .collect::<Result<_, _>>()
            .map(PositionList)
    }
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    /// `None` leaves the key out of the serialized form.
    fn render(&self) -> Option<String>;
}

macro_rules! plain_value {
    ($($ty:ty),*) => {$(
        impl ConfigValue for $ty {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse::<$ty>().map_err(|e| e.to_string())
            }
            fn render(&self) -> Option<String> {
                Some(self.to_string())
            }
        }
    )*};
}

plain_value!(u32, u64, f64, MacPolicy, FlowList, PositionList);

impl<T: ConfigValue> ConfigValue for Option<T> {
    fn parse_value(s: &str) -> Result<Self, String> {
        T::parse_value(s).map(Some)
    }
    fn render(&self) -> Option<String> {
        self.as_ref().and_then(T::render)
    }
}

macro_rules! scenario_fields {
    ($($(#[$doc:meta])* $name:ident : $ty:ty = $default:expr;)*) => {
        /// Every tunable of one simulation run.
        #[derive(Clone, Debug, PartialEq)]
        pub struct ScenarioConfig {
            $($(#[$doc])* pub $name: $ty,)*
        }

        impl Default for ScenarioConfig {
            fn default() -> Self {
                ScenarioConfig { $($name: $default,)* }
            }
        }

        impl ScenarioConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($name)),*];

            fn assign(&mut self, key: &str, value: &str) -> Option<Result<(), String>> {
                match key {
                    $(stringify!($name) => Some(ConfigValue::parse_value(value).map(|v| self.$name = v)),)*
                    _ => None,
                }
            }

            /// Keys and rendered values in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                let mut out = Vec::new();
                $(if let Some(v) = ConfigValue::render(&self.$name) {
                    out.push((stringify!($name), v));
                })*
                out
            }
        }
    };
}

scenario_fields! {
    seed: u64 = 1;
    mac_policy: MacPolicy = MacPolicy::Baseline;
    n_nodes: u32 = 20;
    /// Arena size, meters.
    width: f64 = 1000.0;
    height: f64 = 1000.0;
    duration_s: f64 = 300.0;
    pause_s: f64 = 5.0;
    /// Speeds in m/s; `v_max = 0` keeps every node still.
    v_min: f64 = 0.1;
    v_max: f64 = 4.0;
    n_connections: u32 = 2;
    /// Explicit endpoints; drawn at random from the seed when absent.
    flows: Option<FlowList> = None;
    /// Explicit initial positions; uniform in the arena when absent.
    positions: Option<PositionList> = None;
    /// Connections start uniformly within `[flow_start_s, flow_start_s + flow_stagger_s)`.
    flow_start_s: f64 = 1.0;
    flow_stagger_s: f64 = 1.0;
    tx_range: f64 = 250.0;
    interference_range: f64 = 550.0;
    pt: f64 = 0.28183815;
    gt: f64 = 1.0;
    gr: f64 = 1.0;
    ht: f64 = 1.5;
    hr: f64 = 1.5;
    system_loss: f64 = 1.0;
    bitrate_bps: f64 = 2e6;
    preamble_us: u64 = 192;
    sifs_us: u64 = 10;
    difs_us: u64 = 50;
    slot_us: u64 = 20;
    cw_min: u32 = 32;
    cw_max: u32 = 1024;
    rts_bytes: u32 = 44;
    cts_bytes: u32 = 38;
    mac_ack_bytes: u32 = 38;
    mac_header_bytes: u32 = 34;
    ifq_limit: u32 = 50;
    default_srl: u32 = 7;
    default_lrl: u32 = 4;
    arl_max_srl: u32 = 16;
    arl_max_lrl: u32 = 8;
    arl_medium_srl: u32 = 12;
    arl_medium_lrl: u32 = 6;
    arl_min_srl: u32 = 4;
    arl_min_lrl: u32 = 2;
    /// Signal threshold as a multiple of the receive threshold.
    signal_factor: f64 = ArlParams::SIGNAL_FACTOR;
    time_threshold_cap_s: f64 = 1e6;
    min_speed_floor: f64 = 0.1;
    send_buffer: u32 = 64;
    rreq_timeout_ms: u64 = 500;
    rreq_attempts: u32 = 3;
    rreq_jitter_ms: u64 = 10;
    route_header_base: u32 = 4;
    route_header_per_hop: u32 = 4;
    packet_size: u32 = 512;
    tcp_ack_size: u32 = 40;
    window: u32 = 32;
    rto_initial_s: f64 = 3.0;
    rto_min_s: f64 = 1.0;
    rto_max_s: f64 = 64.0;
}

fn secs(s: f64) -> Duration {
    Duration::from_secs_f64(s)
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: raw.trim().to_string(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !Self::KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.to_string(),
                });
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |reason: String| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason,
        };
        match self.assign(key, value) {
            Some(r) => r.map_err(bad),
            None => Err(ConfigError::UnknownKey {
                line: 0,
                key: key.to_string(),
            }),
        }
    }

    pub fn serialize(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn duration(&self) -> Duration {
        secs(self.duration_s)
    }

    pub fn radio(&self) -> Result<RadioParams, String> {
        RadioParams::calibrated(
            self.pt,
            self.gt,
            self.gr,
            self.ht,
            self.hr,
            self.system_loss,
            self.tx_range,
            self.interference_range,
        )
    }

    pub fn phy_timing(&self) -> PhyTiming {
        PhyTiming {
            bitrate: self.bitrate_bps,
            preamble: Duration::from_micros(self.preamble_us),
        }
    }

    pub fn mac_config(&self) -> MacConfig {
        let phy = self.phy_timing();
        let sizes = FrameSizes {
            rts: self.rts_bytes,
            cts: self.cts_bytes,
            ack: self.mac_ack_bytes,
            header: self.mac_header_bytes,
        };
        let mut cfg = MacConfig::with_defaults(phy, sizes);
        let t = &mut cfg.timings;
        t.sifs = Duration::from_micros(self.sifs_us);
        t.difs = Duration::from_micros(self.difs_us);
        t.slot = Duration::from_micros(self.slot_us);
        t.cts_timeout = t.sifs + phy.airtime(sizes.cts) + t.slot;
        t.ack_timeout = t.sifs + phy.airtime(sizes.ack) + t.slot;
        t.cw_min = self.cw_min;
        t.cw_max = self.cw_max;
        cfg.queue_limit = self.ifq_limit as usize;
        cfg
    }

    pub fn default_limits(&self) -> RetryLimits {
        RetryLimits::new(self.default_srl, self.default_lrl)
    }

    pub fn arl_params(&self, rx_thresh: f64) -> ArlParams {
        ArlParams {
            signal_threshold: self.signal_factor * rx_thresh,
            tx_range: self.tx_range,
            maximum: RetryLimits::new(self.arl_max_srl, self.arl_max_lrl),
            medium: RetryLimits::new(self.arl_medium_srl, self.arl_medium_lrl),
            minimum: RetryLimits::new(self.arl_min_srl, self.arl_min_lrl),
            default_limits: self.default_limits(),
            time_threshold_cap: self.time_threshold_cap_s,
            min_speed_floor: self.min_speed_floor,
        }
    }

    pub fn routing_config(&self) -> RoutingConfig {
        RoutingConfig {
            send_buffer: self.send_buffer as usize,
            rreq_timeout: Duration::from_millis(self.rreq_timeout_ms),
            rreq_attempts: self.rreq_attempts,
            rreq_jitter: Duration::from_millis(self.rreq_jitter_ms),
            header_base: self.route_header_base,
            header_per_hop: self.route_header_per_hop,
        }
    }

    pub fn transport_params(&self) -> TransportParams {
        TransportParams {
            window: self.window,
            data_bytes: self.packet_size,
            ack_bytes: self.tcp_ack_size,
            rto_initial: secs(self.rto_initial_s),
            rto_min: secs(self.rto_min_s),
            rto_max: secs(self.rto_max_s),
        }
    }

    pub fn mobility_params(&self) -> MobilityParams {
        MobilityParams {
            width: self.width,
            height: self.height,
            v_min: self.v_min,
            v_max: self.v_max,
            pause: secs(self.pause_s),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        let positive = [
            ("width", self.width),
            ("height", self.height),
            ("duration_s", self.duration_s),
            ("v_min", self.v_min),
            ("tx_range", self.tx_range),
            ("interference_range", self.interference_range),
            ("bitrate_bps", self.bitrate_bps),
            ("signal_factor", self.signal_factor),
            ("rto_initial_s", self.rto_initial_s),
            ("rto_min_s", self.rto_min_s),
            ("rto_max_s", self.rto_max_s),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return invalid(format!("{key} must be positive and finite, got {v}"));
            }
        }
        let non_negative = [
            ("pause_s", self.pause_s),
            ("v_max", self.v_max),
            ("flow_start_s", self.flow_start_s),
            ("flow_stagger_s", self.flow_stagger_s),
        ];
        for (key, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return invalid(format!("{key} must be non-negative and finite, got {v}"));
            }
        }
        let counts = [
            ("n_nodes", self.n_nodes),
            ("n_connections", self.n_connections),
            ("packet_size", self.packet_size),
            ("tcp_ack_size", self.tcp_ack_size),
            ("window", self.window),
            ("send_buffer", self.send_buffer),
            ("rreq_attempts", self.rreq_attempts),
        ];
        for (key, v) in counts {
            if v == 0 {
                return invalid(format!("{key} must be at least 1"));
            }
        }
        if self.n_nodes < 2 {
            return invalid("need at least two nodes".into());
        }
        if self.v_max > 0.0 && self.v_min > self.v_max {
            return invalid(format!("v_min {} exceeds v_max {}", self.v_min, self.v_max));
        }
        if self.rto_min_s > self.rto_max_s {
            return invalid("rto_min_s exceeds rto_max_s".into());
        }
        if self.rreq_timeout_ms == 0 {
            return invalid("rreq_timeout_ms must be positive".into());
        }
        let n = u64::from(self.n_nodes);
        if u64::from(self.n_connections) > n * (n - 1) {
            return invalid(format!("{} connections need more than {} nodes", self.n_connections, n));
        }
        if let Some(FlowList(flows)) = &self.flows {
            if flows.len() != self.n_connections as usize {
                return invalid(format!("{} flows listed for n_connections = {}", flows.len(), self.n_connections));
            }
            for &(a, b) in flows {
                if a == b {
                    return invalid(format!("flow {a}-{b} has identical endpoints"));
                }
                if a.0 >= self.n_nodes || b.0 >= self.n_nodes {
                    return invalid(format!("flow {a}-{b} names a node outside 0..{}", self.n_nodes));
                }
            }
        }
        if let Some(PositionList(ps)) = &self.positions {
            if ps.len() != self.n_nodes as usize {
                return invalid(format!("{} positions listed for {} nodes", ps.len(), self.n_nodes));
            }
            if let Some(p) = ps.iter().find(|p| !(0.0..=self.width).contains(&p.x) || !(0.0..=self.height).contains(&p.y)) {
                return invalid(format!("position {}:{} lies outside the arena", p.x, p.y));
            }
        }
        let radio = self.radio().map_err(ConfigError::Invalid)?;
        self.mac_config().validate().map_err(ConfigError::Invalid)?;
        if self.default_srl == 0 || self.default_lrl == 0 {
            return invalid("default retry limits must be at least 1".into());
        }
        self.arl_params(radio.rx_thresh)
            .validate(radio.rx_thresh)
            .map_err(ConfigError::Invalid)?;
        Ok(())
    }
}
