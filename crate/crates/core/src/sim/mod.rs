//! Cycle-driven simulator hosting both overlays, the logical computers, one
//! moving client, churn and metric sampling.

mod config;
mod world;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::can::RefreshStats;
use crate::client::{Client, CycleReport, HopTally, Strategy};
use crate::model::{Coord, Geometry, NodeAddress};

pub use config::{ConfigError, SimConfig};
pub use world::{ChurnEvents, World};

/// Version tag carried by every trace record.
pub const TRACE_VERSION: u32 = 1;

/// Metrics of one retrieval cycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleMetrics {
    pub cycle: u64,
    pub hops: HopTally,
    pub total_delay: u64,
    pub perceived_delay: u64,
    pub crc_objects: usize,
    pub loaded: usize,
    pub deferred: usize,
    pub grids_visited: usize,
}

impl CycleMetrics {
    fn from_report(cycle: u64, r: &CycleReport) -> Self {
        Self {
            cycle,
            hops: r.hops,
            total_delay: r.total_delay,
            perceived_delay: r.perceived_delay,
            crc_objects: r.crc.objects.len(),
            loaded: r.loaded.len(),
            deferred: r.deferred.len(),
            grids_visited: r.grids_visited,
        }
    }
}

/// Region-bot load over one sampling window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadSample {
    /// Last cycle of the window.
    pub cycle: u64,
    /// Handled plus forwarded messages per live bot.
    pub per_bot: Vec<(NodeAddress, u64)>,
    /// Load of bots that left during the window.
    pub departed: u64,
}

impl LoadSample {
    pub fn total(&self) -> u64 {
        self.per_bot.iter().map(|(_, v)| v).sum::<u64>() + self.departed
    }

    pub fn mean(&self) -> f64 {
        if self.per_bot.is_empty() {
            0.0
        } else {
            self.total() as f64 / self.per_bot.len() as f64
        }
    }

    pub fn max(&self) -> u64 {
        self.per_bot.iter().map(|(_, v)| *v).max().unwrap_or(0)
    }
}

/// One line of the optional event trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub v: u32,
    pub cycle: u64,
    pub actor: String,
    pub kind: String,
    pub hops: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub retrievals: Vec<CycleMetrics>,
    pub load_samples: Vec<LoadSample>,
    pub churn: ChurnEvents,
    /// Messages spent by region bots refreshing cached addressing bots.
    pub refresh: RefreshTotals,
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RefreshTotals {
    pub lookups: u64,
    pub hops: u64,
    pub rewrites: u64,
    pub failures: u64,
}

impl RefreshTotals {
    fn add(&mut self, s: &RefreshStats) {
        self.lookups += s.lookups as u64;
        self.hops += s.hops as u64;
        self.rewrites += s.rewrites as u64;
        self.failures += s.failures as u64;
    }
}

impl MetricsReport {
    /// All messages attributed to retrieval cycles.
    pub fn retrieval_hops(&self) -> HopTally {
        let mut t = HopTally::default();
        for c in &self.retrievals {
            t.add(&c.hops);
        }
        t
    }

    /// JSON-lines rendering of the trace.
    pub fn trace_lines(&self) -> String {
        self.trace.iter().map(|r| serde_json::to_string(r).expect("plain record") + "\n").collect()
    }
}

/// Moves `p` by `v` along a uniformly random heading, reflecting off the
/// map edges.
pub fn random_walk_step<R: Rng>(p: Coord, v: f64, geometry: &Geometry, rng: &mut R) -> Coord {
    let heading = rng.gen_range(0.0..std::f64::consts::TAU);
    let reflect = |x: f64, size: f64| {
        let period = 2.0 * size;
        let mut r = x.rem_euclid(period);
        if r >= size {
            r = period - r;
        }
        // Keep the half-open upper bound.
        if r >= size {
            r = size * (1.0 - f64::EPSILON);
        }
        r
    };
    Coord::new(reflect(p.x + v * heading.cos(), geometry.width), reflect(p.y + v * heading.sin(), geometry.height))
}

/// Independent seeded streams, so churn draws never shift the walk.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub struct Simulation {
    pub world: World,
    pub client: Client,
    pub report: MetricsReport,
    pub cycle: u64,
    strategy: Strategy,
    walk_rng: ChaCha8Rng,
    churn_rng: ChaCha8Rng,
    trace: bool,
}

impl Simulation {
    pub fn new(config: &SimConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut world_rng = stream(config.seed, 0);
        let mut world = World::build(config, &mut world_rng);
        world.can.take_load_window();
        let geometry = world.geometry;
        let start = Coord::new(world_rng.gen_range(0.0..geometry.width), world_rng.gen_range(0.0..geometry.height));
        let mut client = Client::new(start, config.velocity, config.client_config());
        let can: Vec<NodeAddress> = world.can.addresses().collect();
        let ring: Vec<NodeAddress> = world.ring.bots().map(|b| b.address).collect();
        client.set_entries(
            Some(can[world_rng.gen_range(0..can.len())]),
            Some(ring[world_rng.gen_range(0..ring.len())]),
        );
        Ok(Self {
            world,
            client,
            report: MetricsReport::default(),
            cycle: 0,
            strategy: config.strategy,
            walk_rng: stream(config.seed, 1),
            churn_rng: stream(config.seed, 2),
            trace: false,
        })
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = true;
        self
    }

    fn log(&mut self, actor: String, kind: &str, hops: u64) {
        if self.trace {
            self.report.trace.push(TraceRecord { v: TRACE_VERSION, cycle: self.cycle, actor, kind: kind.into(), hops });
        }
    }

    /// Runs one retrieval cycle now, outside the schedule.
    pub fn retrieve(&mut self) -> CycleReport {
        let mut net = self.world.network();
        let report = self.client.run_cycle(&mut net, self.strategy);
        let metrics = CycleMetrics::from_report(self.cycle, &report);
        // Bound on engine work per cycle.
        assert!(report.grids_visited <= self.world.geometry.grid_count());
        self.log("client".into(), "retrieval", metrics.hops.total());
        self.report.retrievals.push(metrics);
        report
    }

    /// Advances one cycle: churn, ring maintenance, movement, retrieval,
    /// cache refresh, load sampling.
    pub fn step(&mut self) {
        let config = self.world.config.clone();
        let c = self.cycle;
        if config.dynamics && c % config.dynamics_period == 0 {
            let ev = self.world.churn_step(&mut self.churn_rng);
            self.report.churn.add(&ev);
            if ev != ChurnEvents::default() {
                let n = (ev.ring_joins + ev.ring_leaves + ev.region_joins + ev.region_leaves + ev.replica_changes) as u64;
                self.log("engine".into(), "churn", n);
            }
        }
        self.world.ring.stabilize_step();
        if c > 0 {
            self.client.position = random_walk_step(self.client.position, config.velocity, &self.world.geometry, &mut self.walk_rng);
        }
        if c % config.retrieval_period() == 0 {
            self.retrieve();
        }
        if c > 0 && c % config.cache_refresh_period == 0 {
            let bots: Vec<NodeAddress> = self.world.can.addresses().collect();
            for bot in bots {
                let entry = self.world.refresh_entry(bot);
                let stats = self.world.can.cache_refresh(bot, &mut self.world.ring, entry).expect("live bot");
                self.report.refresh.add(&stats);
                if stats.lookups > 0 {
                    self.log(bot.to_string(), "cache_refresh", stats.hops as u64);
                }
            }
        }
        if let Some(window) = config.load_window {
            if (c + 1) % window == 0 {
                self.sample_load();
            }
        }
        self.cycle += 1;
    }

    /// Records every region bot's window load and zeroes the windows.
    pub fn sample_load(&mut self) -> &LoadSample {
        let per_bot = self.world.can.take_load_window();
        let departed = std::mem::take(&mut self.world.departed_load);
        self.report.load_samples.push(LoadSample { cycle: self.cycle, per_bot, departed });
        self.report.load_samples.last().expect("just pushed")
    }

    pub fn run_to_end(mut self) -> MetricsReport {
        while self.cycle < self.world.config.cycles {
            self.step();
        }
        self.report
    }
}

/// Builds the world from `config` and runs it for `config.cycles` cycles.
pub fn run(config: &SimConfig) -> Result<MetricsReport, ConfigError> {
    Ok(Simulation::new(config)?.run_to_end())
}
