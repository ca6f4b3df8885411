//! Line-oriented event trace and the independent recount used to check it.
//!
//! Each line reads `time node LAYER kind key=value ...`, for example
//! `12.000340000 4 MAC link_failure next_hop=7 srl=7 lrl=4 ssrc=7 slrc=0`.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::time::Duration;

use crate::metrics::MetricsLedger;
use crate::sim::SimTime;
use crate::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Phy,
    Mac,
    Rtg,
    Tpt,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Phy => "PHY",
            Layer::Mac => "MAC",
            Layer::Rtg => "RTG",
            Layer::Tpt => "TPT",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Optional trace sink. Disabled tracers skip all formatting.
pub struct Tracer {
    out: Option<Box<dyn Write + Send>>,
    error: Option<io::Error>,
    lines: u64,
}

impl fmt::Debug for Tracer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tracer")
            .field("enabled", &self.out.is_some())
            .field("lines", &self.lines)
            .finish()
    }
}

impl Tracer {
    pub fn disabled() -> Self {
        Tracer {
            out: None,
            error: None,
            lines: 0,
        }
    }

    pub fn new(out: Box<dyn Write + Send>) -> Self {
        Tracer {
            out: Some(out),
            error: None,
            lines: 0,
        }
    }

    pub fn enabled(&self) -> bool {
        self.out.is_some()
    }

    pub fn lines(&self) -> u64 {
        self.lines
    }

    pub fn emit(&mut self, t: SimTime, node: NodeId, layer: Layer, kind: &str, details: fmt::Arguments<'_>) {
        let Some(out) = self.out.as_mut() else {
            return;
        };
        if self.error.is_some() {
            return;
        }
        let res = writeln!(out, "{t} {node} {layer} {kind} {details}");
        match res {
            Ok(()) => self.lines += 1,
            Err(e) => self.error = Some(e),
        }
    }

    /// Flushes the sink and reports the first write error, if any.
    pub fn finish(mut self) -> io::Result<u64> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        if let Some(out) = self.out.as_mut() {
            out.flush()?;
        }
        Ok(self.lines)
    }
}

/// Writes a trace line when the tracer is enabled.
#[macro_export]
macro_rules! trace_event {
    ($tracer:expr, $t:expr, $node:expr, $layer:expr, $kind:expr, $($arg:tt)*) => {
        if $tracer.enabled() {
            $tracer.emit($t, $node, $layer, $kind, format_args!($($arg)*));
        }
    };
}

/// One parsed trace line.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub time: String,
    pub node: u32,
    pub layer: String,
    pub kind: String,
    pub fields: Vec<(String, String)>,
}

impl TraceRecord {
    pub fn parse(line: &str) -> Result<Self, String> {
        let mut parts = line.split_whitespace();
        let mut next = |what: &str| parts.next().ok_or_else(|| format!("missing {what} in trace line: {line}"));
        let time = next("time")?.to_string();
        let node = next("node")?
            .parse()
            .map_err(|e| format!("bad node in trace line {line}: {e}"))?;
        let layer = next("layer")?.to_string();
        let kind = next("kind")?.to_string();
        let fields = parts
            .map(|kv| {
                kv.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| format!("bad field {kv} in trace line: {line}"))
            })
            .collect::<Result<_, _>>()?;
        Ok(TraceRecord {
            time,
            node,
            layer,
            kind,
            fields,
        })
    }

    pub fn field(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn numeric<T: std::str::FromStr>(&self, key: &str) -> Result<T, String> {
        self.field(key)
            .ok_or_else(|| format!("{} {} line lacks {key}", self.layer, self.kind))?
            .parse()
            .map_err(|_| format!("{} {} line has malformed {key}", self.layer, self.kind))
    }
}

/// Rebuilds the ledger counters from trace lines alone.
pub fn recount<R: BufRead>(reader: R, duration: Duration) -> Result<MetricsLedger, String> {
    let mut ledger = MetricsLedger::new(duration);
    for line in reader.lines() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = TraceRecord::parse(&line)?;
        match (rec.layer.as_str(), rec.kind.as_str()) {
            ("MAC", "link_failure") => ledger.link_failures += 1,
            ("RTG", "tx") => match rec.field("pkt") {
                Some("RREQ") => ledger.rreq_tx += 1,
                Some("RREP") => ledger.rrep_tx += 1,
                Some("RERR") => ledger.rerr_tx += 1,
                _ => {}
            },
            ("TPT", "send") => ledger.data_sent += 1,
            ("TPT", "deliver") => {
                ledger.data_delivered += 1;
                ledger.delay_sum_ns += rec.numeric::<u128>("delay_ns")?;
                ledger.bytes_delivered += rec.numeric::<u64>("bytes")?;
            }
            _ => {}
        }
    }
    Ok(ledger)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Mutex};

    #[derive(Clone, Default)]
    struct Shared(Arc<Mutex<Vec<u8>>>);

    impl Write for Shared {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            self.0.lock().unwrap().extend_from_slice(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn lines_parse_back() {
        let buf = Shared::default();
        let mut tr = Tracer::new(Box::new(buf.clone()));
        let t = SimTime::from_micros(1_500);
        trace_event!(tr, t, NodeId(4), Layer::Mac, "link_failure", "next_hop={} srl={}", 7, 7);
        trace_event!(tr, t, NodeId(2), Layer::Rtg, "tx", "pkt=RREQ id={}", 3);
        trace_event!(tr, t, NodeId(1), Layer::Tpt, "deliver", "conn=0 seq=1 delay_ns={} bytes=512", 250_000_000);
        trace_event!(tr, t, NodeId(0), Layer::Tpt, "send", "conn=0 seq=1");
        assert_eq!(tr.finish().unwrap(), 4);
        let text = String::from_utf8(buf.0.lock().unwrap().clone()).unwrap();
        assert!(text.starts_with("0.001500000 4 MAC link_failure next_hop=7 srl=7\n"));
        let rec = TraceRecord::parse(text.lines().nth(1).unwrap()).unwrap();
        assert_eq!(rec.node, 2);
        assert_eq!(rec.field("id"), Some("3"));

        let l = recount(text.as_bytes(), Duration::from_secs(1)).unwrap();
        assert_eq!((l.link_failures, l.rreq_tx, l.data_sent, l.data_delivered), (1, 1, 1, 1));
        assert_eq!(l.delay_sum_ns, 250_000_000);
    }

    #[test]
    fn disabled_tracer_is_silent() {
        let mut tr = Tracer::disabled();
        trace_event!(tr, SimTime::ZERO, NodeId(0), Layer::Phy, "tx", "x=1");
        assert_eq!(tr.finish().unwrap(), 0);
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(TraceRecord::parse("0.1 x MAC foo").is_err());
        assert!(TraceRecord::parse("0.1 3 MAC foo novalue").is_err());
        assert!(recount("0.1 3 TPT deliver bytes=1\n".as_bytes(), Duration::ZERO).is_err());
    }
}
