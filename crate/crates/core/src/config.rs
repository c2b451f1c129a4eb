//! Experiment configuration: TOML ingestion with unit suffixes, defaults,
//! and validation.
//!
//! Quantity fields accept either a bare number in SI base units or a string
//! with a unit suffix ("2 GHz", "3 Mb", "100 ms"). Transmit-power fields are
//! the exception: a bare number there is read as dBm, matching how radio
//! budgets are quoted; strings take "W", "mW", or "dBm". An empty file
//! resolves to the reference scenario: 20 devices, one base station, two
//! UAVs, 500 slots of 100 ms grouped ten to an epoch.

use std::fmt;
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::bargain::BargainConfig;
use crate::channel::{ChannelParams, GainMode};
use crate::sim::StrategyKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawQty {
    Num(f64),
    Text(String),
}

fn split_unit(text: &str) -> Result<(f64, &str), String> {
    let trimmed = text.trim();
    let split = trimmed
        .find(|c: char| c.is_ascii_alphabetic())
        .ok_or_else(|| format!("missing unit in {trimmed:?}"))?;
    let (num, unit) = trimmed.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("bad number in {trimmed:?}"))?;
    Ok((value, unit.trim()))
}

macro_rules! si_quantity {
    ($name:ident, $($unit:literal => $mult:expr),+) => {
        #[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
        pub struct $name(pub f64);

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                match RawQty::deserialize(d)? {
                    RawQty::Num(v) => Ok($name(v)),
                    RawQty::Text(t) => {
                        let (v, unit) = split_unit(&t).map_err(D::Error::custom)?;
                        match unit {
                            $($unit => Ok($name(v * $mult)),)+
                            other => Err(D::Error::custom(format!(
                                "unknown unit {other:?} for {}", stringify!($name)
                            ))),
                        }
                    }
                }
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_f64(self.0)
            }
        }
    };
}

si_quantity!(Seconds, "s" => 1.0, "ms" => 1e-3, "us" => 1e-6);
si_quantity!(Meters, "m" => 1.0, "km" => 1e3);
si_quantity!(Hertz, "Hz" => 1.0, "kHz" => 1e3, "MHz" => 1e6, "GHz" => 1e9);
si_quantity!(Bits, "b" => 1.0, "bit" => 1.0, "kb" => 1e3, "Mb" => 1e6, "Gb" => 1e9);
si_quantity!(Joules, "J" => 1.0, "mJ" => 1e-3, "kJ" => 1e3);

/// Transmit power in watts. Bare numbers deserialize as dBm.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Power(pub f64);

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

impl<'de> Deserialize<'de> for Power {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match RawQty::deserialize(d)? {
            RawQty::Num(dbm) => Ok(Power(dbm_to_watts(dbm))),
            RawQty::Text(t) => {
                let (v, unit) = split_unit(&t).map_err(D::Error::custom)?;
                match unit {
                    "W" => Ok(Power(v)),
                    "mW" => Ok(Power(v * 1e-3)),
                    "dBm" => Ok(Power(dbm_to_watts(v))),
                    other => Err(D::Error::custom(format!("unknown power unit {other:?}"))),
                }
            }
        }
    }
}

impl Serialize for Power {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{} W", self.0))
    }
}

/// Closed interval used for per-entity uniform draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range<T> {
    pub min: T,
    pub max: T,
}

impl<T: Copy> Range<T> {
    pub fn new(min: T, max: T) -> Self {
        Range { min, max }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeInt {
    pub min: u32,
    pub max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClockConfig {
    pub slot_duration: Seconds,
    pub slots: u32,
    pub slots_per_epoch: u32,
}

impl Default for ClockConfig {
    fn default() -> Self {
        ClockConfig {
            slot_duration: Seconds(0.1),
            slots: 500,
            slots_per_epoch: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArenaConfig {
    pub width: Meters,
    pub height: Meters,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        ArenaConfig {
            width: Meters(500.0),
            height: Meters(500.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilityConfig {
    pub memory: f64,
    /// Asymptotic speed range, m/s; headings are uniform per device.
    pub speed: Range<f64>,
    pub sigma: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        MobilityConfig {
            memory: 0.8,
            speed: Range::new(0.5, 1.5),
            sigma: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MdConfig {
    pub count: u32,
    pub cpu: Range<Hertz>,
    pub transmit_power: Range<Power>,
    pub weight: f64,
    pub energy_cap: Joules,
    pub budget: f64,
    pub capacitance: f64,
    pub arrival_prob: f64,
    pub mobility: MobilityConfig,
}

impl Default for MdConfig {
    fn default() -> Self {
        MdConfig {
            count: 20,
            cpu: Range::new(Hertz(0.5e9), Hertz(1e9)),
            transmit_power: Range::new(Power(dbm_to_watts(10.0)), Power(dbm_to_watts(30.0))),
            weight: 0.5,
            energy_cap: Joules(10.0),
            budget: 5.0,
            capacitance: 1e-28,
            arrival_prob: 0.05,
            mobility: MobilityConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub size: Range<Bits>,
    pub cycles_per_bit: Range<f64>,
    pub deadline: Range<Seconds>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            size: Range::new(Bits(1e6), Bits(5e6)),
            cycles_per_bit: Range::new(500.0, 1500.0),
            deadline: Range::new(Seconds(0.5), Seconds(5.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MbsConfig {
    pub position: [f64; 2],
    pub cores: RangeInt,
    pub core_capacity: Range<Hertz>,
    pub energy_cap: Joules,
    pub price_cap: f64,
    pub weight: f64,
    pub capacitance: f64,
}

impl Default for MbsConfig {
    fn default() -> Self {
        MbsConfig {
            position: [250.0, 250.0],
            cores: RangeInt { min: 4, max: 8 },
            core_capacity: Range::new(Hertz(20e9), Hertz(40e9)),
            energy_cap: Joules(1000.0),
            price_cap: 1.0,
            weight: 0.5,
            capacitance: 1e-28,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteConfig {
    pub start: [f64; 2],
    pub finish: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UavConfig {
    pub count: u32,
    pub altitude: Meters,
    /// Maximum horizontal speed, m/s.
    pub max_speed: f64,
    pub cores: RangeInt,
    pub core_capacity: Range<Hertz>,
    pub energy_cap: Joules,
    pub price_cap: f64,
    pub weight: f64,
    pub capacitance: f64,
    pub routes: Vec<RouteConfig>,
}

impl Default for UavConfig {
    fn default() -> Self {
        UavConfig {
            count: 2,
            altitude: Meters(100.0),
            max_speed: 25.0,
            cores: RangeInt { min: 2, max: 4 },
            core_capacity: Range::new(Hertz(10e9), Hertz(20e9)),
            energy_cap: Joules(500.0),
            price_cap: 1.0,
            weight: 0.5,
            capacitance: 1e-28,
            routes: vec![
                RouteConfig {
                    start: [0.0, 0.0],
                    finish: [500.0, 0.0],
                },
                RouteConfig {
                    start: [500.0, 0.0],
                    finish: [0.0, 0.0],
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub bandwidth: Hertz,
    pub noise_dbm_per_hz: f64,
    pub reference_gain_db: f64,
    pub pathloss_los: f64,
    pub pathloss_nlos: f64,
    pub terrestrial_d1: Meters,
    pub terrestrial_d2: Meters,
    pub aerial_c1: f64,
    pub aerial_c2: f64,
    pub nakagami_m_los: f64,
    pub nakagami_m_nlos: f64,
    pub shadow_sigma_los_db: f64,
    pub shadow_sigma_nlos_db: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            bandwidth: Hertz(1e6),
            noise_dbm_per_hz: -174.0,
            reference_gain_db: -40.0,
            pathloss_los: 2.2,
            pathloss_nlos: 3.5,
            terrestrial_d1: Meters(18.0),
            terrestrial_d2: Meters(36.0),
            aerial_c1: 10.0,
            aerial_c2: 0.6,
            nakagami_m_los: 3.0,
            nakagami_m_nlos: 1.0,
            shadow_sigma_los_db: 4.0,
            shadow_sigma_nlos_db: 8.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    pub epsilon: f64,
    pub max_iterations: u32,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            epsilon: 1e-3,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropulsionConfig {
    pub blade: f64,
    pub induced: f64,
    pub induced_speed4: f64,
    pub parasite: f64,
    pub tip_speed: f64,
}

impl Default for PropulsionConfig {
    fn default() -> Self {
        PropulsionConfig {
            blade: 79.86,
            induced: 88.63,
            induced_speed4: 263.7,
            parasite: 0.00925,
            tip_speed: 120.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub strategies: Vec<StrategyKind>,
    pub mode: GainMode,
    pub audit: bool,
    pub output_dir: String,
    pub clock: ClockConfig,
    pub arena: ArenaConfig,
    pub mds: MdConfig,
    pub tasks: TaskConfig,
    pub mbs: MbsConfig,
    pub uavs: UavConfig,
    pub channel: ChannelConfig,
    pub bargaining: BargainConfig,
    pub trajectory: TrajectoryConfig,
    pub propulsion: PropulsionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: vec![1, 2, 3, 4, 5],
            strategies: vec![StrategyKind::Tjcct],
            mode: GainMode::Expected,
            audit: true,
            output_dir: "results".to_string(),
            clock: ClockConfig::default(),
            arena: ArenaConfig::default(),
            mds: MdConfig::default(),
            tasks: TaskConfig::default(),
            mbs: MbsConfig::default(),
            uavs: UavConfig::default(),
            channel: ChannelConfig::default(),
            bargaining: BargainConfig::default(),
            trajectory: TrajectoryConfig::default(),
            propulsion: PropulsionConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config file; an empty file yields the reference scenario.
    pub fn parse(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serialized echo of the resolved config (SI base units throughout).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(cond: bool, msg: &str) -> Result<(), ConfigError> {
            if cond {
                Ok(())
            } else {
                Err(ConfigError::Invalid(msg.to_string()))
            }
        }
        check(!self.seeds.is_empty(), "seed list must be non-empty")?;
        check(!self.strategies.is_empty(), "strategy list must be non-empty")?;
        check(self.clock.slot_duration.0 > 0.0, "slot_duration must be positive")?;
        check(self.clock.slots_per_epoch >= 1, "slots_per_epoch must be >= 1")?;
        check(
            self.clock.slots % self.clock.slots_per_epoch == 0,
            "slots must be a multiple of slots_per_epoch",
        )?;
        check(self.arena.width.0 > 0.0 && self.arena.height.0 > 0.0, "arena must be positive")?;
        check(self.mds.count >= 1, "md count must be >= 1")?;
        check(self.mds.cpu.min.0 <= self.mds.cpu.max.0, "md cpu range: min > max")?;
        check(
            self.mds.transmit_power.min.0 <= self.mds.transmit_power.max.0,
            "md transmit_power range: min > max",
        )?;
        check((0.0..=1.0).contains(&self.mds.weight), "md weight must be in [0, 1]")?;
        check(
            (0.0..=1.0).contains(&self.mds.arrival_prob),
            "arrival_prob must be in [0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.mds.mobility.memory),
            "mobility memory must be in [0, 1]",
        )?;
        check(
            self.mds.mobility.speed.min <= self.mds.mobility.speed.max,
            "mobility speed range: min > max",
        )?;
        check(self.mds.mobility.sigma >= 0.0, "mobility sigma must be >= 0")?;
        check(self.tasks.size.min.0 <= self.tasks.size.max.0, "task size range: min > max")?;
        check(self.tasks.size.min.0 > 0.0, "task size must be positive")?;
        check(
            self.tasks.cycles_per_bit.min <= self.tasks.cycles_per_bit.max,
            "cycles_per_bit range: min > max",
        )?;
        check(
            self.tasks.deadline.min.0 <= self.tasks.deadline.max.0,
            "deadline range: min > max",
        )?;
        check(self.tasks.deadline.min.0 > 0.0, "deadline must be positive")?;
        check(self.mbs.cores.min <= self.mbs.cores.max, "mbs cores range: min > max")?;
        check(self.mbs.cores.min >= 1, "mbs needs at least one core")?;
        check(
            self.mbs.core_capacity.min.0 <= self.mbs.core_capacity.max.0,
            "mbs core_capacity range: min > max",
        )?;
        check((0.0..=1.0).contains(&self.mbs.weight), "mbs weight must be in [0, 1]")?;
        check(self.uavs.cores.min <= self.uavs.cores.max, "uav cores range: min > max")?;
        check(
            self.uavs.core_capacity.min.0 <= self.uavs.core_capacity.max.0,
            "uav core_capacity range: min > max",
        )?;
        check((0.0..=1.0).contains(&self.uavs.weight), "uav weight must be in [0, 1]")?;
        check(
            self.uavs.routes.len() == self.uavs.count as usize,
            "uav routes must match uav count",
        )?;
        check(self.uavs.max_speed > 0.0, "uav max_speed must be positive")?;
        if self.clock.slots > 0 {
            let epochs = self.clock.slots / self.clock.slots_per_epoch;
            let reach = self.uavs.max_speed
                * self.clock.slot_duration.0
                * f64::from(self.clock.slots_per_epoch)
                * f64::from(epochs.saturating_sub(1));
            for (i, route) in self.uavs.routes.iter().enumerate() {
                let dx = route.finish[0] - route.start[0];
                let dy = route.finish[1] - route.start[1];
                let dist = (dx * dx + dy * dy).sqrt();
                check(
                    dist <= reach + 1e-9,
                    &format!("uav route {i} spans {dist:.1} m but only {reach:.1} m is reachable over the horizon"),
                )?;
            }
        }
        check(self.channel.bandwidth.0 > 0.0, "bandwidth must be positive")?;
        check(
            self.channel.pathloss_los <= self.channel.pathloss_nlos,
            "LoS path loss must not exceed NLoS",
        )?;
        check(
            self.channel.nakagami_m_los >= 0.5 && self.channel.nakagami_m_nlos >= 0.5,
            "nakagami m must be >= 0.5",
        )?;
        check(self.bargaining.horizon >= 1, "bargaining horizon must be >= 1")?;
        check(self.bargaining.max_iterations >= 1, "bargaining max_iterations must be >= 1")?;
        check(self.trajectory.epsilon > 0.0, "trajectory epsilon must be positive")?;
        check(self.trajectory.max_iterations >= 1, "trajectory max_iterations must be >= 1")?;
        Ok(())
    }

    /// Channel parameters resolved to linear units under the given mode.
    pub fn channel_params(&self, mode: GainMode) -> ChannelParams {
        let c = &self.channel;
        ChannelParams {
            bandwidth: c.bandwidth.0,
            noise_power: dbm_to_watts(c.noise_dbm_per_hz) * c.bandwidth.0,
            terrestrial_d1: c.terrestrial_d1.0,
            terrestrial_d2: c.terrestrial_d2.0,
            aerial_c1: c.aerial_c1,
            aerial_c2: c.aerial_c2,
            pathloss_los: c.pathloss_los,
            pathloss_nlos: c.pathloss_nlos,
            reference_gain: 10f64.powf(c.reference_gain_db / 10.0),
            nakagami_m_los: c.nakagami_m_los,
            nakagami_m_nlos: c.nakagami_m_nlos,
            shadow_sigma_los_db: c.shadow_sigma_los_db,
            shadow_sigma_nlos_db: c.shadow_sigma_nlos_db,
            mode,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
