//! Scenario runner: sweeps, seeded repetitions and CSV output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::client::Strategy;
use crate::sim::{run, ConfigError, MetricsReport, SimConfig};

pub const RAW_HEADER: &str = "scenario,strategy,dynamics,k,seed,index,metric,value";
pub const SUMMARY_HEADER: &str = "scenario,strategy,dynamics,k,index,metric,n,mean,std";

pub const SWEEP_K: [u32; 5] = [100, 200, 300, 400, 500];
/// Load scenario length; samples are taken every hundredth of the run.
pub const LOAD_CYCLES: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scenario {
    Overhead,
    Delay,
    Load,
    Custom,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Overhead => "overhead",
            Scenario::Delay => "delay",
            Scenario::Load => "load",
            Scenario::Custom => "custom",
        }
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "overhead" => Ok(Scenario::Overhead),
            "delay" => Ok(Scenario::Delay),
            "load" => Ok(Scenario::Load),
            "custom" => Ok(Scenario::Custom),
            other => Err(format!("unknown scenario `{other}` (expected overhead, delay, load or custom)")),
        }
    }
}

/// Overrides applied on top of the base config.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub objects: Option<u32>,
    pub cycles: Option<u64>,
    pub seed: u64,
    pub reps: u32,
    pub dynamics: Option<bool>,
    pub strategy: Option<Strategy>,
}

/// One simulation run of a sweep.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub scenario: Scenario,
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: Scenario,
    pub strategy: Strategy,
    pub dynamics: bool,
    pub k: u32,
    pub seed: u64,
    pub index: u64,
    pub metric: &'static str,
    pub value: f64,
}

/// Expands a scenario into its runs, in (sweep point, seed) order.
pub fn plan(scenario: Scenario, base: &SimConfig, opts: &Options) -> Result<Vec<RunSpec>, String> {
    if opts.reps < 1 {
        return Err("repetitions must be at least 1".into());
    }
    if opts.objects == Some(0) {
        return Err("objects must be positive".into());
    }
    let mut base = base.clone();
    if let Some(c) = opts.cycles {
        if c == 0 {
            return Err("cycles must be positive".into());
        }
        base.cycles = c;
    }
    let dynamics: Vec<bool> = match opts.dynamics {
        Some(d) => vec![d],
        None if scenario == Scenario::Custom => vec![base.dynamics],
        None => vec![false, true],
    };
    let strategies: Vec<Strategy> = match (scenario, opts.strategy) {
        (_, Some(s)) => vec![s],
        (Scenario::Overhead, None) => vec![Strategy::Proximity, Strategy::Basic],
        (Scenario::Delay, None) => Strategy::ALL.to_vec(),
        (Scenario::Load, None) => vec![Strategy::Proximity],
        (Scenario::Custom, None) => vec![base.strategy],
    };
    let ks: Vec<u32> = match (scenario, opts.objects) {
        (_, Some(k)) => vec![k],
        (Scenario::Overhead | Scenario::Delay, None) => SWEEP_K.to_vec(),
        (Scenario::Load | Scenario::Custom, None) => vec![base.objects],
    };
    if scenario == Scenario::Load {
        if opts.cycles.is_none() {
            base.cycles = LOAD_CYCLES;
        }
        base.load_window = Some((base.cycles / 100).max(1));
    }
    let mut out = Vec::new();
    for &d in &dynamics {
        for &s in &strategies {
            for &k in &ks {
                for rep in 0..opts.reps {
                    let config = SimConfig { dynamics: d, strategy: s, objects: k, seed: opts.seed + rep as u64, ..base.clone() };
                    config.validate().map_err(|e| e.to_string())?;
                    out.push(RunSpec { scenario, config });
                }
            }
        }
    }
    Ok(out)
}

/// Result rows of one finished run.
pub fn rows(spec: &RunSpec, report: &MetricsReport) -> Vec<ResultRow> {
    let c = &spec.config;
    let row = |index: u64, metric: &'static str, value: f64| ResultRow {
        scenario: spec.scenario,
        strategy: c.strategy,
        dynamics: c.dynamics,
        k: c.objects,
        seed: c.seed,
        index,
        metric,
        value,
    };
    let mut out = Vec::new();
    let overhead = matches!(spec.scenario, Scenario::Overhead | Scenario::Custom);
    let delay = matches!(spec.scenario, Scenario::Delay | Scenario::Custom);
    for (i, m) in report.retrievals.iter().enumerate() {
        let i = i as u64;
        if overhead {
            out.push(row(i, "hops_total", m.hops.total() as f64));
            out.push(row(i, "hops_ring", m.hops.ring_routing as f64));
            out.push(row(i, "hops_region", m.hops.region_routing as f64));
            out.push(row(i, "hops_direct", m.hops.direct as f64));
            out.push(row(i, "transfers", m.hops.transfers as f64));
        }
        if delay {
            out.push(row(i, "perceived_delay", m.perceived_delay as f64));
            out.push(row(i, "total_delay", m.total_delay as f64));
        }
    }
    if matches!(spec.scenario, Scenario::Load | Scenario::Custom) {
        for (i, s) in report.load_samples.iter().enumerate() {
            out.push(row(i as u64, "load_mean", s.mean()));
            out.push(row(i as u64, "load_max", s.max() as f64));
        }
    }
    out
}

/// Runs every spec, spreading whole runs over threads; rows come back in
/// spec order.
pub fn execute(specs: &[RunSpec], threads: usize) -> Result<Vec<ResultRow>, ConfigError> {
    let threads = threads.clamp(1, specs.len().max(1));
    let mut results: Vec<Option<Result<Vec<ResultRow>, ConfigError>>> = vec![None; specs.len()];
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                scope.spawn(move || {
                    specs
                        .iter()
                        .enumerate()
                        .skip(t)
                        .step_by(threads)
                        .map(|(i, spec)| (i, run(&spec.config).map(|r| rows(spec, &r))))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    let mut out = Vec::new();
    for r in results {
        out.extend(r.expect("every spec ran")?);
    }
    Ok(out)
}

fn fmt_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.6}")
    }
}

pub fn raw_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(RAW_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.scenario.name(),
            r.strategy,
            if r.dynamics { "on" } else { "off" },
            r.k,
            r.seed,
            r.index,
            r.metric,
            fmt_value(r.value)
        );
    }
    out
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per sweep point and metric. Load series keep their sample index;
/// per-retrieval metrics pool all cycles of all seeds (index `all`).
pub fn summary_csv(rows: &[ResultRow]) -> String {
    type Key = (Scenario, Strategy, bool, u32, Option<u64>, &'static str);
    let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for r in rows {
        let index = r.metric.starts_with("load_").then_some(r.index);
        groups.entry((r.scenario, r.strategy, r.dynamics, r.k, index, r.metric)).or_default().push(r.value);
    }
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for ((scenario, strategy, dynamics, k, index, metric), values) in groups {
        let (mean, std) = mean_std(&values);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{:.6},{:.6}",
            scenario.name(),
            strategy,
            if dynamics { "on" } else { "off" },
            k,
            index.map_or("all".to_string(), |i| i.to_string()),
            metric,
            values.len(),
            mean,
            std
        );
    }
    out
}

/// Resolved config plus its violations, as printed by `validate-config`.
pub fn validate_config(text: &str) -> Result<(SimConfig, Vec<String>), ConfigError> {
    let config = SimConfig::from_json(text)?;
    let violations = config.violations();
    Ok((config, violations))
}
