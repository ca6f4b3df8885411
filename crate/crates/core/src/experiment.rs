//! Single runs, parameter sweeps, aggregation and trend comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, MacPolicy, ScenarioConfig};
use crate::metrics::{fmt_f64, parse_f64, MetricsLedger, RunRow, CSV_HEADER};
use crate::network::{Network, RunSummary};
use crate::trace::Tracer;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run {run_id} failed: {reason}")]
    Run { run_id: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub fn run_id(cfg: &ScenarioConfig) -> String {
    format!("{}-v{}-c{}-s{}", cfg.mac_policy, cfg.v_max, cfg.n_connections, cfg.seed)
}

/// Runs one scenario, optionally writing a trace file.
pub fn run_scenario(cfg: &ScenarioConfig, trace: Option<&Path>) -> Result<RunSummary, RunError> {
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| RunError::Io { path, source }
    };
    let tracer = match trace {
        Some(path) => Tracer::new(Box::new(BufWriter::new(File::create(path).map_err(io_err(path))?))),
        None => Tracer::disabled(),
    };
    let net = Network::new(cfg, tracer)?;
    let id = run_id(cfg);
    // A panic inside one run becomes an error naming that run.
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| net.run()));
    match outcome {
        Ok(Ok(summary)) => Ok(summary),
        Ok(Err(e)) => Err(RunError::Io {
            path: trace.map(|p| p.display().to_string()).unwrap_or_default(),
            source: e,
        }),
        Err(panic) => {
            let reason = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(RunError::Run { run_id: id, reason })
        }
    }
}

pub fn row_for(cfg: &ScenarioConfig, ledger: &MetricsLedger) -> RunRow {
    RunRow {
        run_id: run_id(cfg),
        mac_policy: cfg.mac_policy.to_string(),
        v_max: cfg.v_max,
        n_connections: cfg.n_connections,
        seed: cfg.seed,
        link_failures: ledger.link_failures,
        nrl: ledger.normalized_routing_load(),
        throughput_pps: ledger.throughput_pps(),
        avg_delay_s: ledger.avg_delay(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub speeds: Vec<f64>,
    pub loads: Vec<u32>,
    pub policies: Vec<MacPolicy>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    /// The full evaluation grid with seeds `1..=n_seeds`.
    pub fn evaluation(n_seeds: u64) -> Self {
        SweepSpec {
            speeds: vec![4.0, 8.0, 12.0, 16.0, 20.0, 24.0],
            loads: vec![2, 8],
            policies: vec![MacPolicy::Baseline, MacPolicy::Adaptive],
            seeds: (1..=n_seeds).collect(),
        }
    }

    /// Every run config in output order: load, speed, policy, seed.
    pub fn configs(&self, base: &ScenarioConfig) -> Vec<ScenarioConfig> {
        let mut out = Vec::new();
        for &load in &self.loads {
            for &speed in &self.speeds {
                for &policy in &self.policies {
                    for &seed in &self.seeds {
                        out.push(ScenarioConfig {
                            n_connections: load,
                            v_max: speed,
                            mac_policy: policy,
                            seed,
                            flows: None,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

/// Runs every config of the sweep on `workers` threads. Rows come back in
/// config order whatever the scheduling.
pub fn sweep(base: &ScenarioConfig, spec: &SweepSpec, workers: usize) -> Result<Vec<RunRow>, RunError> {
    let configs = spec.configs(base);
    if configs.is_empty() {
        return Err(RunError::Config(ConfigError::Invalid("sweep has an empty axis".into())));
    }
    for cfg in &configs {
        cfg.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| RunError::Run {
            run_id: "sweep".into(),
            reason: e.to_string(),
        })?;
    pool.install(|| {
        configs
            .par_iter()
            .map(|cfg| run_scenario(cfg, None).map(|s| row_for(cfg, &s.ledger)))
            .collect()
    })
}

pub fn rows_csv(rows: &[RunRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{r}");
    }
    s
}

pub fn parse_rows_csv(text: &str) -> Result<Vec<RunRow>, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(format!("expected header `{CSV_HEADER}`")),
    }
    lines.map(RunRow::parse).collect()
}

/// Mean and sample standard deviation over the finite values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Stat {
        let all: Vec<f64> = values.into_iter().collect();
        if all.contains(&f64::INFINITY) {
            return Stat {
                mean: f64::INFINITY,
                std: f64::NAN,
            };
        }
        let v: Vec<f64> = all.into_iter().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Stat {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub mac_policy: String,
    pub v_max: f64,
    pub n_connections: u32,
    pub runs: usize,
    pub link_failures: Stat,
    pub nrl: Stat,
    pub throughput_pps: Stat,
    pub avg_delay_s: Stat,
}

pub const AGGREGATE_HEADER: &str = "mac_policy,v_max,n_connections,runs,link_failures_mean,link_failures_std,nrl_mean,nrl_std,throughput_pps_mean,throughput_pps_std,avg_delay_s_mean,avg_delay_s_std";

/// Groups rows by (load, speed, policy) cell.
pub fn aggregate(rows: &[RunRow]) -> Vec<AggregateRow> {
    let mut cells: BTreeMap<(u32, u64, String), Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.n_connections, r.v_max.to_bits(), r.mac_policy.clone()))
            .or_default()
            .push(r);
    }
    let mut out: Vec<AggregateRow> = cells
        .into_values()
        .map(|group| AggregateRow {
            mac_policy: group[0].mac_policy.clone(),
            v_max: group[0].v_max,
            n_connections: group[0].n_connections,
            runs: group.len(),
            link_failures: Stat::of(group.iter().map(|r| r.link_failures as f64)),
            nrl: Stat::of(group.iter().map(|r| r.nrl)),
            throughput_pps: Stat::of(group.iter().map(|r| r.throughput_pps)),
            avg_delay_s: Stat::of(group.iter().map(|r| r.avg_delay_s)),
        })
        .collect();
    out.sort_by(|a, b| {
        (a.n_connections, &a.mac_policy)
            .cmp(&(b.n_connections, &b.mac_policy))
            .then(a.v_max.total_cmp(&b.v_max))
    });
    out
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from(AGGREGATE_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.mac_policy,
            fmt_f64(r.v_max),
            r.n_connections,
            r.runs,
            fmt_f64(r.link_failures.mean),
            fmt_f64(r.link_failures.std),
            fmt_f64(r.nrl.mean),
            fmt_f64(r.nrl.std),
            fmt_f64(r.throughput_pps.mean),
            fmt_f64(r.throughput_pps.std),
            fmt_f64(r.avg_delay_s.mean),
            fmt_f64(r.avg_delay_s.std)
        );
    }
    s
}

pub fn parse_aggregate_csv(text: &str) -> Result<Vec<AggregateRow>, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == AGGREGATE_HEADER => {}
        _ => return Err(format!("expected header `{AGGREGATE_HEADER}`")),
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 12 {
                return Err(format!("expected 12 fields: {line}"));
            }
            let num = |i: usize| parse_f64(f[i]).map_err(|e| format!("{line}: field {i}: {e}"));
            let stat = |i: usize| -> Result<Stat, String> {
                Ok(Stat {
                    mean: num(i)?,
                    std: num(i + 1)?,
                })
            };
            Ok(AggregateRow {
                mac_policy: f[0].to_string(),
                v_max: num(1)?,
                n_connections: f[2].parse().map_err(|e| format!("{line}: {e}"))?,
                runs: f[3].parse().map_err(|e| format!("{line}: {e}"))?,
                link_failures: stat(4)?,
                nrl: stat(6)?,
                throughput_pps: stat(8)?,
                avg_delay_s: stat(10)?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    LinkFailures,
    Nrl,
    Throughput,
    Delay,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::LinkFailures, Metric::Nrl, Metric::Throughput, Metric::Delay];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::LinkFailures => "link_failures",
            Metric::Nrl => "nrl",
            Metric::Throughput => "throughput_pps",
            Metric::Delay => "avg_delay_s",
        }
    }

    fn of(self, row: &AggregateRow) -> f64 {
        match self {
            Metric::LinkFailures => row.link_failures.mean,
            Metric::Nrl => row.nrl.mean,
            Metric::Throughput => row.throughput_pps.mean,
            Metric::Delay => row.avg_delay_s.mean,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Exempt,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Exempt => "EXEMPT",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrendCell {
    pub metric: Metric,
    pub n_connections: u32,
    pub v_max: f64,
    pub baseline: f64,
    pub adaptive: f64,
    /// adaptive / baseline.
    pub ratio: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompareRules {
    /// Minimum relative drop in mean link failures.
    pub min_failure_reduction: f64,
    /// Loads up to this many connections count as light.
    pub light_load_max: u32,
}

impl Default for CompareRules {
    fn default() -> Self {
        CompareRules {
            min_failure_reduction: 0.2,
            light_load_max: 2,
        }
    }
}

type PolicyPair<'a> = (Option<&'a AggregateRow>, Option<&'a AggregateRow>);

/// Checks every (metric, load, speed) cell against its expected direction.
/// Equal values fail; heavy-load delay is reported but exempt.
pub fn compare(rows: &[AggregateRow], rules: &CompareRules) -> Result<Vec<TrendCell>, String> {
    let mut by_policy: BTreeMap<(u32, u64), PolicyPair> = BTreeMap::new();
    for r in rows {
        let slot = by_policy.entry((r.n_connections, r.v_max.to_bits())).or_default();
        match r.mac_policy.parse::<MacPolicy>()? {
            MacPolicy::Baseline => slot.0 = Some(r),
            MacPolicy::Adaptive => slot.1 = Some(r),
        }
    }
    let mut cells = Vec::new();
    for metric in Metric::ALL {
        let mut keyed: Vec<_> = by_policy.iter().collect();
        keyed.sort_by(|a, b| a.0 .0.cmp(&b.0 .0).then(f64::from_bits(a.0 .1).total_cmp(&f64::from_bits(b.0 .1))));
        for (&(load, speed_bits), &(base, adapt)) in keyed {
            let v_max = f64::from_bits(speed_bits);
            let (Some(base), Some(adapt)) = (base, adapt) else {
                return Err(format!("cell load={load} v_max={v_max} lacks a baseline or adaptive row"));
            };
            let (b, a) = (metric.of(base), metric.of(adapt));
            let verdict = match metric {
                Metric::LinkFailures => a < b && (b - a) >= rules.min_failure_reduction * b,
                Metric::Nrl | Metric::Delay => a < b,
                Metric::Throughput => a > b,
            };
            let verdict = if metric == Metric::Delay && load > rules.light_load_max {
                Verdict::Exempt
            } else if verdict {
                Verdict::Pass
            } else {
                Verdict::Fail
            };
            cells.push(TrendCell {
                metric,
                n_connections: load,
                v_max,
                baseline: b,
                adaptive: a,
                ratio: a / b,
                verdict,
            });
        }
    }
    if cells.is_empty() {
        return Err("aggregate holds no cells".into());
    }
    Ok(cells)
}

pub const TREND_HEADER: &str = "metric,n_connections,v_max,baseline,adaptive,ratio,verdict";

pub fn trend_csv(cells: &[TrendCell]) -> String {
    let mut s = String::from(TREND_HEADER);
    s.push('\n');
    for c in cells {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            c.metric.as_str(),
            c.n_connections,
            fmt_f64(c.v_max),
            fmt_f64(c.baseline),
            fmt_f64(c.adaptive),
            fmt_f64(c.ratio),
            c.verdict.as_str()
        );
    }
    s
}
