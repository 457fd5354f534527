//! Synthetic tank process with PLC hysteresis logic and scripted attacks.
//!
//! Tank 1 is filled through valve `valve1`. With two tanks, pump `pump1`
//! transfers water into tank 2 whenever tank 2's inlet valve `valve2` asks
//! for it, and the demand pump of the last tank drains it on a fixed
//! schedule. Every tank records `level`, `flow` (inflow), `valve` and
//! `pump`. Attacks are applied during the simulation, so spoofed sensors
//! drive the PLC and have real physical consequences.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMeta, TimeSeriesDataset};
use crate::error::{Error, Result};

const SIGNALS: [&str; 4] = ["level", "flow", "valve", "pump"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TankConfig {
    pub capacity: f64,
    /// Inlet valve opens at or below this level.
    pub low: f64,
    /// Inlet valve closes at or above this level.
    pub high: f64,
    /// The tank's outlet pump stops at or below this level.
    pub min_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessConfig {
    pub dt: f64,
    pub train_steps: usize,
    pub test_steps: usize,
    /// One or two tanks in series.
    pub tanks: Vec<TankConfig>,
    /// Level rate through `valve1`.
    pub inflow_rate: f64,
    /// Level rate through `pump1` when it feeds tank 2.
    pub transfer_rate: f64,
    /// Level rate of the last tank's demand pump.
    pub demand_rate: f64,
    /// The demand pump runs for the first `demand_on` steps of every
    /// `demand_period`.
    pub demand_period: usize,
    pub demand_on: usize,
    pub level_noise: f64,
    pub flow_noise: f64,
    pub seed: u64,
}

impl Default for ProcessConfig {
    fn default() -> Self {
        let tank = TankConfig {
            capacity: 1000.0,
            low: 300.0,
            high: 700.0,
            min_level: 100.0,
        };
        Self {
            dt: 1.0,
            train_steps: 20_000,
            test_steps: 5_000,
            tanks: vec![tank.clone(), tank],
            inflow_rate: 3.0,
            transfer_rate: 2.0,
            demand_rate: 1.0,
            demand_period: 1000,
            demand_on: 800,
            level_noise: 0.1,
            flow_noise: 0.001,
            seed: 7,
        }
    }
}

impl ProcessConfig {
    /// One tank, constant demand: the level saw-tooths with a fixed period.
    pub fn single_tank() -> Self {
        Self {
            tanks: vec![TankConfig {
                capacity: 1000.0,
                low: 300.0,
                high: 700.0,
                min_level: 100.0,
            }],
            demand_on: 1000,
            ..Self::default()
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        (1..=self.tanks.len())
            .flat_map(|i| SIGNALS.iter().map(move |s| format!("{s}{i}")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.tanks.is_empty() || self.tanks.len() > 2 {
            return bad("process supports one or two tanks");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.inflow_rate > 0.0 && self.demand_rate > 0.0) {
            return bad("rates must be positive");
        }
        if self.tanks.len() == 2 && !(self.transfer_rate > 0.0) {
            return bad("transfer_rate must be positive");
        }
        if self.demand_period == 0 || self.demand_on > self.demand_period {
            return bad("demand schedule needs 0 < demand_on <= demand_period");
        }
        if !(self.level_noise >= 0.0 && self.flow_noise >= 0.0) {
            return bad("noise levels must be >= 0");
        }
        for t in &self.tanks {
            if !(t.capacity > 0.0) || !(t.low < t.high) || !(t.min_level >= 0.0) || t.high > t.capacity {
                return bad("tank needs capacity > 0, min_level >= 0 and low < high <= capacity");
            }
        }
        Ok(())
    }

    fn signal_index(&self, name: &str) -> Option<(usize, usize)> {
        self.feature_names()
            .iter()
            .position(|n| n == name)
            .map(|p| (p / 4, p % 4))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AttackKind {
    /// Sensor reads a constant; the PLC acts on it.
    SensorSpoofFixed { value: f64 },
    /// Sensor reads the true value plus an offset; the PLC acts on it.
    SensorSpoofOffset { offset: f64 },
    /// Actuator forced to a state regardless of PLC logic.
    ActuatorOverride { value: f64 },
    /// Recorded channel replaced by the normal recording starting at
    /// `source_start` (test-segment index); the PLC still sees the truth.
    ReplayConceal { source_start: usize },
    /// All rates in and out of the target level's tank multiplied.
    RateScale { factor: f64 },
}

// `deny_unknown_fields` is unsupported together with `flatten`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attack {
    /// Test-segment indices, `[start, end)`.
    pub start: usize,
    pub end: usize,
    pub target: String,
    #[serde(flatten)]
    pub kind: AttackKind,
}

impl Attack {
    fn active(&self, t: usize) -> bool {
        (self.start..self.end).contains(&t)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackScript {
    #[serde(default)]
    pub attacks: Vec<Attack>,
}

impl AttackScript {
    /// One attack of each kind on the default two-tank process, timed
    /// against the 1000-step demand cycle so that none leaves the plant
    /// in a state that outlasts its interval.
    pub fn default_test() -> Self {
        let a = |start, end, target: &str, kind| Attack {
            start,
            end,
            target: target.into(),
            kind,
        };
        Self {
            attacks: vec![
                a(410, 590, "level1", AttackKind::SensorSpoofFixed { value: 550.0 }),
                a(1500, 1800, "flow2", AttackKind::SensorSpoofOffset { offset: 1.0 }),
                a(2100, 2350, "pump1", AttackKind::ActuatorOverride { value: 1.0 }),
                a(4000, 4400, "level1", AttackKind::ReplayConceal { source_start: 2450 }),
            ],
        }
    }

    pub fn validate(&self, cfg: &ProcessConfig) -> Result<()> {
        for a in &self.attacks {
            let (_, sig) = cfg
                .signal_index(&a.target)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown attack target `{}`", a.target)))?;
            if a.start > a.end || a.end > cfg.test_steps {
                return Err(Error::InvalidParameter(format!(
                    "attack on `{}` [{}, {}) outside the {} test steps",
                    a.target, a.start, a.end, cfg.test_steps
                )));
            }
            let fits = match &a.kind {
                AttackKind::SensorSpoofFixed { .. } | AttackKind::SensorSpoofOffset { .. } => sig < 2,
                AttackKind::ActuatorOverride { value } => sig >= 2 && (*value == 0.0 || *value == 1.0),
                AttackKind::ReplayConceal { source_start } => source_start + (a.end - a.start) <= cfg.test_steps,
                AttackKind::RateScale { factor } => sig == 0 && *factor > 0.0,
            };
            if !fits {
                return Err(Error::InvalidParameter(format!(
                    "attack {:?} does not apply to `{}`",
                    a.kind, a.target
                )));
            }
        }
        for (i, a) in self.attacks.iter().enumerate() {
            for b in &self.attacks[i + 1..] {
                if a.target == b.target && a.start < b.end && b.start < a.end {
                    return Err(Error::OverlappingAttacks(a.target.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Generated train/test pair plus ground truth the recordings may hide.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: TimeSeriesDataset,
    pub test: TimeSeriesDataset,
    /// True tank levels over the test segment, `(test_steps, tanks)`.
    pub true_levels: Array2<f64>,
    /// Test steps where a tank hit its capacity.
    pub overflow: Vec<bool>,
}

struct Trace {
    recorded: Array2<f64>,
    levels: Array2<f64>,
    overflow: Vec<bool>,
}

fn run(cfg: &ProcessConfig, script: &AttackScript, strict: bool) -> Result<Trace> {
    let n_tanks = cfg.tanks.len();
    let total = cfg.train_steps + cfg.test_steps;
    let offset = cfg.train_steps;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let level_noise = Normal::new(0.0, cfg.level_noise).expect("validated noise");
    let flow_noise = Normal::new(0.0, cfg.flow_noise).expect("validated noise");
    let mut level: Vec<f64> = cfg.tanks.iter().map(|t| (t.low + t.high) / 2.0).collect();
    let mut valve = vec![true; n_tanks];
    let mut recorded = Array2::zeros((total, 4 * n_tanks));
    let mut levels = Array2::zeros((total, n_tanks));
    let mut overflow = vec![false; total];
    let targets: Vec<(usize, usize)> = script
        .attacks
        .iter()
        .map(|a| cfg.signal_index(&a.target).expect("validated target"))
        .collect();

    for t in 0..total {
        // active attack kinds per (tank, signal)
        let mut on: Vec<[Vec<&AttackKind>; 4]> = (0..n_tanks).map(|_| Default::default()).collect();
        for (i, a) in script.attacks.iter().enumerate() {
            if t >= offset && a.active(t - offset) {
                let (k, sig) = targets[i];
                on[k][sig].push(&a.kind);
            }
        }
        let attack_on = |tank: usize, sig: usize| on[tank][sig].iter().copied();
        let mut scale = vec![1.0; n_tanks];
        for tank in 0..n_tanks {
            for a in attack_on(tank, 0) {
                if let AttackKind::RateScale { factor } = *a {
                    scale[tank] *= factor;
                }
            }
        }
        let sensed = |tank: usize, sig: usize, truth: f64| {
            attack_on(tank, sig).fold(truth, |v, a| match *a {
                AttackKind::SensorSpoofFixed { value } => value,
                AttackKind::SensorSpoofOffset { offset } => v + offset,
                _ => v,
            })
        };
        let seen: Vec<f64> = (0..n_tanks).map(|k| sensed(k, 0, level[k])).collect();

        for (k, tc) in cfg.tanks.iter().enumerate() {
            if seen[k] <= tc.low {
                valve[k] = true;
            } else if seen[k] >= tc.high {
                valve[k] = false;
            }
        }
        let demand = t % cfg.demand_period < cfg.demand_on;
        let last = n_tanks - 1;
        let mut pump = vec![false; n_tanks];
        if n_tanks == 2 {
            pump[0] = valve[1] && seen[0] > cfg.tanks[0].min_level;
        }
        pump[last] = demand && seen[last] > cfg.tanks[last].min_level;

        let mut valve_state = valve.clone();
        for k in 0..n_tanks {
            for a in attack_on(k, 2) {
                if let AttackKind::ActuatorOverride { value } = *a {
                    valve_state[k] = value == 1.0;
                }
            }
            for a in attack_on(k, 3) {
                if let AttackKind::ActuatorOverride { value } = *a {
                    pump[k] = value == 1.0;
                }
            }
        }

        // flows in level units per second
        let mut inflow = vec![0.0; n_tanks];
        let mut outflow = vec![0.0; n_tanks];
        if valve_state[0] {
            inflow[0] = cfg.inflow_rate * scale[0];
        }
        if n_tanks == 2 {
            if valve_state[1] && pump[0] {
                outflow[0] = cfg.transfer_rate * scale[0];
                inflow[1] = outflow[0];
            }
            if pump[1] {
                outflow[1] = cfg.demand_rate * scale[1];
            }
        } else if pump[0] {
            outflow[0] = cfg.demand_rate * scale[0];
        }

        for k in 0..n_tanks {
            let ln = level_noise.sample(&mut rng);
            let fnoise = flow_noise.sample(&mut rng);
            let base = 4 * k;
            let fixed = |sig| attack_on(k, sig).any(|a| matches!(a, AttackKind::SensorSpoofFixed { .. }));
            // a fixed spoof reports its value exactly
            recorded[[t, base]] = sensed(k, 0, level[k]) + if fixed(0) { 0.0 } else { ln };
            recorded[[t, base + 1]] = sensed(k, 1, inflow[k]) + if fixed(1) { 0.0 } else { fnoise };
            recorded[[t, base + 2]] = f64::from(u8::from(valve_state[k]));
            recorded[[t, base + 3]] = f64::from(u8::from(pump[k]));
            levels[[t, k]] = level[k];
        }

        for (k, tc) in cfg.tanks.iter().enumerate() {
            let next = level[k] + (inflow[k] - outflow[k]) * cfg.dt;
            if next > tc.capacity {
                if strict {
                    return Err(Error::MisconfiguredProcess { tank: k + 1, step: t });
                }
                overflow[t] = true;
            }
            level[k] = next.clamp(0.0, 1.5 * tc.capacity);
        }
    }
    Ok(Trace {
        recorded,
        levels,
        overflow,
    })
}

fn dataset(cfg: &ProcessConfig, x: Array2<f64>, t0: usize, labels: Vec<bool>) -> Result<TimeSeriesDataset> {
    let names = cfg.feature_names();
    let meta = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let tank = &cfg.tanks[j / 4];
            match j % 4 {
                0 | 1 => {
                    let col = x.column(j);
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut m = FeatureMeta::continuous(name.clone(), lo, hi);
                    m.valid_range = if j % 4 == 0 {
                        (0.0, tank.capacity)
                    } else {
                        (0.0, cfg.inflow_rate.max(cfg.transfer_rate) * 2.0)
                    };
                    m
                }
                _ => FeatureMeta::binary(name.clone()),
            }
        })
        .collect();
    let timestamps = (0..x.nrows()).map(|i| (t0 + i) as f64 * cfg.dt).collect();
    TimeSeriesDataset::new(timestamps, x, Some(labels), meta)
}

/// Attack-free train and test segments.
pub fn simulate(cfg: &ProcessConfig) -> Result<Corpus> {
    inject(cfg, &AttackScript::default())
}

/// Simulates the process with `script` applied to the test segment.
/// Spoofs and overrides are re-simulated; replays substitute the
/// attack-free recording.
pub fn inject(cfg: &ProcessConfig, script: &AttackScript) -> Result<Corpus> {
    cfg.validate()?;
    script.validate(cfg)?;
    let base = run(cfg, &AttackScript::default(), true)?;
    let attacked = if script.attacks.is_empty() {
        None
    } else {
        Some(run(cfg, script, false)?)
    };
    let src = attacked.as_ref().unwrap_or(&base);
    let mut trace = src.recorded.clone();
    let off = cfg.train_steps;
    for a in &script.attacks {
        if let AttackKind::ReplayConceal { source_start } = a.kind {
            let (tank, sig) = cfg.signal_index(&a.target).expect("validated target");
            let j = 4 * tank + sig;
            for k in 0..a.end - a.start {
                trace[[off + a.start + k, j]] = base.recorded[[off + source_start + k, j]];
            }
        }
    }
    let mut labels = vec![false; cfg.test_steps];
    for a in &script.attacks {
        labels[a.start..a.end].iter_mut().for_each(|l| *l = true);
    }
    let train = dataset(cfg, trace.slice(ndarray::s![..off, ..]).to_owned(), 0, vec![false; off])?;
    let test = dataset(cfg, trace.slice(ndarray::s![off.., ..]).to_owned(), off, labels)?;
    Ok(Corpus {
        train,
        test,
        true_levels: src.levels.slice(ndarray::s![off.., ..]).to_owned(),
        overflow: src.overflow[off..].to_vec(),
    })
}

/// Single-tank corpus where one attack doubles the fill and drain rates,
/// decimated so that one normal cycle spans 24 records.
pub fn frequency_corpus_config() -> (ProcessConfig, AttackScript, usize) {
    let cfg = ProcessConfig {
        train_steps: 60_000,
        test_steps: 20_000,
        seed: 11,
        ..ProcessConfig::single_tank()
    };
    let script = AttackScript {
        attacks: vec![Attack {
            start: 8_000,
            end: 14_000,
            target: "level1".into(),
            kind: AttackKind::RateScale { factor: 2.0 },
        }],
    };
    (cfg, script, 25)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(cfg: ProcessConfig) -> ProcessConfig {
        ProcessConfig {
            level_noise: 0.0,
            flow_noise: 0.0,
            ..cfg
        }
    }

    #[test]
    fn single_tank_period_is_closed_form() {
        let cfg = quiet(ProcessConfig {
            train_steps: 3000,
            test_steps: 10,
            ..ProcessConfig::single_tank()
        });
        let c = simulate(&cfg).unwrap();
        let l = c.train.features().column(0).to_vec();
        // fill net 3-1=2, drain 1, gap 400: period 200 + 400
        let period = 400.0 / 2.0 + 400.0 / 1.0;
        assert_eq!(period, 600.0);
        for t in 1000..2000 {
            assert_eq!(l[t], l[t + 600]);
        }
        assert!((1..600).all(|p| (1000..1600).any(|t| l[t] != l[t + p])));
    }

    #[test]
    fn mass_is_conserved_without_noise() {
        let cfg = quiet(ProcessConfig {
            train_steps: 4000,
            test_steps: 10,
            ..ProcessConfig::default()
        });
        let c = simulate(&cfg).unwrap();
        let x = c.train.features();
        for t in 0..3999 {
            let out1 = x[[t, 5]];
            assert_eq!(x[[t + 1, 0]] - x[[t, 0]], x[[t, 1]] - out1);
            let out2 = x[[t, 7]] * cfg.demand_rate;
            assert_eq!(x[[t + 1, 4]] - x[[t, 4]], x[[t, 5]] - out2);
        }
    }

    #[test]
    fn deterministic() {
        let cfg = ProcessConfig {
            train_steps: 500,
            test_steps: 500,
            ..ProcessConfig::default()
        };
        let a = inject(&cfg, &AttackScript::default_test().clip(500)).unwrap();
        let b = inject(&cfg, &AttackScript::default_test().clip(500)).unwrap();
        assert_eq!(a.test, b.test);
        assert_eq!(a.train, b.train);
    }

    impl AttackScript {
        fn clip(mut self, end: usize) -> Self {
            self.attacks.retain(|a| {
                a.end <= end
                    && match a.kind {
                        AttackKind::ReplayConceal { source_start } => source_start + a.end - a.start <= end,
                        _ => true,
                    }
            });
            self
        }
    }

    #[test]
    fn empty_script_is_normal() {
        let cfg = ProcessConfig {
            train_steps: 300,
            test_steps: 300,
            ..ProcessConfig::default()
        };
        let c = inject(&cfg, &AttackScript::default()).unwrap();
        assert!(c.test.labels().unwrap().iter().all(|l| !l));
        assert_eq!(c.test.features(), simulate(&cfg).unwrap().test.features());
    }

    #[test]
    fn low_spoof_overflows_tank() {
        let cfg = quiet(ProcessConfig {
            train_steps: 1000,
            test_steps: 1000,
            ..ProcessConfig::default()
        });
        let script = AttackScript {
            attacks: vec![Attack {
                start: 0,
                end: 800,
                target: "level1".into(),
                kind: AttackKind::SensorSpoofFixed { value: 200.0 },
            }],
        };
        let c = inject(&cfg, &script).unwrap();
        let peak = c.true_levels.column(0).iter().copied().fold(0.0, f64::max);
        assert!(peak > cfg.tanks[0].capacity);
        assert!(peak <= 1.5 * cfg.tanks[0].capacity);
        assert!(c.overflow.iter().any(|&o| o));
        let valve = c.test.features().column(2).to_vec();
        assert!(valve[..800].iter().all(|&v| v == 1.0));
        let labels = c.test.labels().unwrap();
        assert!(labels[..800].iter().all(|&l| l) && labels[800..].iter().all(|&l| !l));
    }

    #[test]
    fn replay_copies_source_exactly() {
        let cfg = ProcessConfig {
            train_steps: 500,
            test_steps: 1000,
            ..ProcessConfig::default()
        };
        let script = AttackScript {
            attacks: vec![Attack {
                start: 600,
                end: 900,
                target: "level2".into(),
                kind: AttackKind::ReplayConceal { source_start: 100 },
            }],
        };
        let c = inject(&cfg, &script).unwrap();
        let normal = simulate(&cfg).unwrap();
        let x = c.test.features();
        for k in 0..300 {
            assert_eq!(x[[600 + k, 4]], normal.test.features()[[100 + k, 4]]);
        }
        assert_eq!(x.column(5), normal.test.features().column(5));
    }

    #[test]
    fn rejects_overlaps_and_bad_targets() {
        let cfg = ProcessConfig::default();
        let over = AttackScript {
            attacks: vec![
                Attack {
                    start: 0,
                    end: 10,
                    target: "level1".into(),
                    kind: AttackKind::SensorSpoofOffset { offset: 1.0 },
                },
                Attack {
                    start: 5,
                    end: 20,
                    target: "level1".into(),
                    kind: AttackKind::SensorSpoofFixed { value: 1.0 },
                },
            ],
        };
        assert!(matches!(inject(&cfg, &over), Err(Error::OverlappingAttacks(_))));
        let wrong = AttackScript {
            attacks: vec![Attack {
                start: 0,
                end: 10,
                target: "valve1".into(),
                kind: AttackKind::SensorSpoofFixed { value: 1.0 },
            }],
        };
        assert!(inject(&cfg, &wrong).is_err());
    }

    #[test]
    fn overflowing_config_is_rejected() {
        let cfg = ProcessConfig {
            tanks: vec![TankConfig {
                capacity: 100.0,
                low: 30.0,
                high: 99.5,
                min_level: 10.0,
            }],
            inflow_rate: 50.0,
            train_steps: 100,
            test_steps: 10,
            ..ProcessConfig::single_tank()
        };
        assert!(matches!(
            simulate(&cfg),
            Err(Error::MisconfiguredProcess { tank: 1, .. })
        ));
    }

    #[test]
    fn rate_scale_halves_period() {
        let (cfg, script, _) = frequency_corpus_config();
        let cfg = quiet(ProcessConfig {
            train_steps: 1000,
            test_steps: 4000,
            ..cfg
        });
        let script = AttackScript {
            attacks: vec![Attack {
                start: 1000,
                end: 4000,
                ..script.attacks[0].clone()
            }],
        };
        let c = inject(&cfg, &script).unwrap();
        let l = c.test.features().column(0).to_vec();
        for t in 2000..3000 {
            assert_eq!(l[t], l[t + 300]);
        }
    }

    #[test]
    fn script_json_round_trip() {
        let s = AttackScript::default_test();
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains("\"kind\":\"sensor_spoof_fixed\""));
        assert_eq!(serde_json::from_str::<AttackScript>(&j).unwrap(), s);
    }
}
