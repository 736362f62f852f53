//! Team and load-balancing configuration.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Largest worker count whose ID fits the 24-bit thief field of a request.
pub const MAX_WORKERS: usize = 1 << 24;

/// Dynamic load-balancing strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Static round-robin placement only (SLB).
    Static,
    /// NUMA-aware redirect push (NA-RP).
    RedirectPush,
    /// NUMA-aware work stealing (NA-WS).
    WorkStealing,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::Static,
        Strategy::RedirectPush,
        Strategy::WorkStealing,
    ];

    /// Short CLI name: `none`, `rp` or `ws`.
    pub fn cli_name(self) -> &'static str {
        match self {
            Strategy::Static => "none",
            Strategy::RedirectPush => "rp",
            Strategy::WorkStealing => "ws",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Static => "SLB",
            Strategy::RedirectPush => "NA-RP",
            Strategy::WorkStealing => "NA-WS",
        })
    }
}

impl FromStr for Strategy {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "slb" | "static" => Ok(Strategy::Static),
            "rp" | "na-rp" | "redirect" => Ok(Strategy::RedirectPush),
            "ws" | "na-ws" | "steal" => Ok(Strategy::WorkStealing),
            _ => Err(ConfigError::UnknownStrategy(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DlbConfig {
    pub strategy: Strategy,
    /// Victims asked per request round.
    pub n_victim: usize,
    /// Maximum tasks moved per handled request.
    pub n_steal: usize,
    /// Idle scheduling-point passes between request rounds.
    pub t_interval: u64,
    /// Probability of picking a victim in the thief's own zone.
    pub p_local: f64,
}

impl Default for DlbConfig {
    fn default() -> Self {
        DlbConfig {
            strategy: Strategy::WorkStealing,
            n_victim: 8,
            n_steal: 32,
            t_interval: 10_000,
            p_local: 1.0,
        }
    }
}

impl DlbConfig {
    pub fn with_strategy(strategy: Strategy) -> Self {
        DlbConfig {
            strategy,
            ..DlbConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_victim == 0 {
            return Err(ConfigError::ZeroParameter("n_victim"));
        }
        if self.n_steal == 0 {
            return Err(ConfigError::ZeroParameter("n_steal"));
        }
        if self.t_interval == 0 {
            return Err(ConfigError::ZeroParameter("t_interval"));
        }
        if !(0.0..=1.0).contains(&self.p_local) {
            return Err(ConfigError::Probability(self.p_local));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeamConfig {
    pub n_workers: usize,
    /// Slots per ring; a power of two, at least 2.
    pub queue_capacity: usize,
    /// Logical NUMA zones, laid out as contiguous worker-ID blocks.
    pub zones: usize,
    pub dlb: DlbConfig,
    /// Record timestamped events (counters are always kept).
    pub profiling: bool,
    /// Seed for victim selection.
    pub seed: u64,
}

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;

impl Default for TeamConfig {
    fn default() -> Self {
        TeamConfig {
            n_workers: 1,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            zones: 1,
            dlb: DlbConfig::default(),
            profiling: false,
            seed: 0,
        }
    }
}

impl TeamConfig {
    pub fn new(n_workers: usize) -> Self {
        TeamConfig {
            n_workers,
            ..TeamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_workers == 0 {
            return Err(ConfigError::NoWorkers);
        }
        if self.n_workers >= MAX_WORKERS {
            return Err(ConfigError::TooManyWorkers(self.n_workers));
        }
        if self.queue_capacity < 2 || !self.queue_capacity.is_power_of_two() {
            return Err(ConfigError::QueueCapacity(self.queue_capacity));
        }
        if self.zones == 0 || self.zones > self.n_workers {
            return Err(ConfigError::Zones {
                zones: self.zones,
                n_workers: self.n_workers,
            });
        }
        self.dlb.validate()
    }

    pub fn zone_map(&self) -> ZoneMap {
        ZoneMap::new(self.n_workers, self.zones)
    }
}

/// Contiguous-block partition of worker IDs into zones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZoneMap {
    n_workers: usize,
    zones: usize,
}

impl ZoneMap {
    pub fn new(n_workers: usize, zones: usize) -> Self {
        assert!(zones >= 1 && zones <= n_workers.max(1));
        ZoneMap { n_workers, zones }
    }

    pub fn n_workers(&self) -> usize {
        self.n_workers
    }

    pub fn zones(&self) -> usize {
        self.zones
    }

    #[inline]
    pub fn zone_of(&self, worker: usize) -> usize {
        worker * self.zones / self.n_workers
    }

    /// Half-open worker range `[start, end)` of `zone`.
    pub fn members(&self, zone: usize) -> std::ops::Range<usize> {
        let start = (zone * self.n_workers).div_ceil(self.zones);
        let end = ((zone + 1) * self.n_workers).div_ceil(self.zones);
        start..end
    }
}

/// Number of NUMA nodes the OS reports, if it exposes them.
pub fn detect_numa_zones() -> Option<usize> {
    let entries = std::fs::read_dir("/sys/devices/system/node").ok()?;
    let count = entries
        .filter_map(Result::ok)
        .filter(|e| {
            let name = e.file_name();
            let name = name.to_string_lossy();
            name.strip_prefix("node")
                .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
        })
        .count();
    (count > 0).then_some(count)
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("team needs at least one worker")]
    NoWorkers,
    #[error("{0} workers do not fit the 24-bit worker ID field")]
    TooManyWorkers(usize),
    #[error("queue capacity must be a power of two >= 2, got {0}")]
    QueueCapacity(usize),
    #[error("zones must be in 1..={n_workers}, got {zones}")]
    Zones { zones: usize, n_workers: usize },
    #[error("{0} must be at least 1")]
    ZeroParameter(&'static str),
    #[error("p_local must be in [0, 1], got {0}")]
    Probability(f64),
    #[error("unknown DLB strategy {0:?} (expected none, rp or ws)")]
    UnknownStrategy(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zone_blocks_are_contiguous() {
        let z = ZoneMap::new(192, 8);
        assert_eq!(z.zone_of(30), 1);
        assert_eq!(z.members(1), 24..48);
        for zone in 0..8 {
            for w in z.members(zone) {
                assert_eq!(z.zone_of(w), zone);
            }
        }
        // Uneven partition still covers every worker exactly once.
        let z = ZoneMap::new(7, 3);
        let covered: Vec<_> = (0..3).flat_map(|zone| z.members(zone)).collect();
        assert_eq!(covered, (0..7).collect::<Vec<_>>());
        assert!((0..7).all(|w| z.members(z.zone_of(w)).contains(&w)));
    }

    #[test]
    fn validation_rejects_bad_configs() {
        assert_eq!(TeamConfig::new(0).validate(), Err(ConfigError::NoWorkers));
        let mut c = TeamConfig::new(4);
        c.queue_capacity = 48;
        assert_eq!(c.validate(), Err(ConfigError::QueueCapacity(48)));
        c.queue_capacity = 64;
        c.zones = 5;
        assert!(matches!(c.validate(), Err(ConfigError::Zones { .. })));
        c.zones = 2;
        c.dlb.p_local = 1.5;
        assert_eq!(c.validate(), Err(ConfigError::Probability(1.5)));
        c.dlb.p_local = 0.5;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.cli_name().parse::<Strategy>().unwrap(), s);
        }
        assert!("bogus".parse::<Strategy>().is_err());
    }
}
