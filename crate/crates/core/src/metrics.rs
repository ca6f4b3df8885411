//! Per-run counters and the four reported metrics.

use std::fmt;
use std::time::Duration;

use crate::routing::PacketKind;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MetricsLedger {
    /// MAC drops after the retry limit was reached.
    pub link_failures: u64,
    pub rreq_tx: u64,
    pub rrep_tx: u64,
    pub rerr_tx: u64,
    /// Data packets originated by transport sources, retransmissions included.
    pub data_sent: u64,
    /// Unique sequence numbers delivered at sinks.
    pub data_delivered: u64,
    /// Sum of end-to-end delays in nanoseconds.
    pub delay_sum_ns: u128,
    pub bytes_delivered: u64,
    pub duration: Duration,
}

impl MetricsLedger {
    pub fn new(duration: Duration) -> Self {
        MetricsLedger {
            duration,
            ..Self::default()
        }
    }

    pub fn routing_control_tx(&self) -> u64 {
        self.rreq_tx + self.rrep_tx + self.rerr_tx
    }

    pub fn record_link_failure(&mut self) {
        self.link_failures += 1;
    }

    /// Counts one routing-layer transmission of `kind`. Data is ignored.
    pub fn record_routing_tx(&mut self, kind: PacketKind) {
        match kind {
            PacketKind::Rreq => self.rreq_tx += 1,
            PacketKind::Rrep => self.rrep_tx += 1,
            PacketKind::Rerr => self.rerr_tx += 1,
            PacketKind::Data => {}
        }
    }

    pub fn record_data_sent(&mut self) {
        self.data_sent += 1;
    }

    pub fn record_delivery(&mut self, delay: Duration, bytes: u32) {
        self.data_delivered += 1;
        self.delay_sum_ns += delay.as_nanos();
        self.bytes_delivered += u64::from(bytes);
    }

    /// Control transmissions per delivered data packet; infinite when nothing arrived.
    pub fn normalized_routing_load(&self) -> f64 {
        if self.data_delivered == 0 {
            return f64::INFINITY;
        }
        self.routing_control_tx() as f64 / self.data_delivered as f64
    }

    pub fn throughput_pps(&self) -> f64 {
        let secs = self.duration.as_secs_f64();
        if secs <= 0.0 {
            return 0.0;
        }
        self.data_delivered as f64 / secs
    }

    pub fn throughput_kbps(&self) -> f64 {
        let secs = self.duration.as_secs_f64();
        if secs <= 0.0 {
            return 0.0;
        }
        self.bytes_delivered as f64 * 8.0 / 1000.0 / secs
    }

    /// Mean delay in seconds; NaN when nothing arrived.
    pub fn avg_delay(&self) -> f64 {
        if self.data_delivered == 0 {
            return f64::NAN;
        }
        (self.delay_sum_ns as f64 / self.data_delivered as f64) / 1e9
    }
}

pub const CSV_HEADER: &str = "run_id,mac_policy,v_max,n_connections,seed,link_failures,nrl,throughput_pps,avg_delay_s";

/// One line of the per-run CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub run_id: String,
    pub mac_policy: String,
    pub v_max: f64,
    pub n_connections: u32,
    pub seed: u64,
    pub link_failures: u64,
    pub nrl: f64,
    pub throughput_pps: f64,
    pub avg_delay_s: f64,
}

/// Formats a float for CSV: `inf` and `nan` are spelled out, others use
/// the shortest round-tripping representation.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

pub fn parse_f64(s: &str) -> Result<f64, std::num::ParseFloatError> {
    match s.trim() {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        other => other.parse(),
    }
}

impl fmt::Display for RunRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.mac_policy,
            fmt_f64(self.v_max),
            self.n_connections,
            self.seed,
            self.link_failures,
            fmt_f64(self.nrl),
            fmt_f64(self.throughput_pps),
            fmt_f64(self.avg_delay_s)
        )
    }
}

impl RunRow {
    pub fn parse(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 9 {
            return Err(format!("expected 9 fields, got {}: {line}", f.len()));
        }
        let num = |i: usize| parse_f64(f[i]).map_err(|e| format!("field {i} ({}): {e}", f[i]));
        let int = |i: usize| f[i].trim().parse::<u64>().map_err(|e| format!("field {i} ({}): {e}", f[i]));
        Ok(RunRow {
            run_id: f[0].to_string(),
            mac_policy: f[1].to_string(),
            v_max: num(2)?,
            n_connections: int(3)? as u32,
            seed: int(4)?,
            link_failures: int(5)?,
            nrl: num(6)?,
            throughput_pps: num(7)?,
            avg_delay_s: num(8)?,
        })
    }
}
