//! Joint-level PD tracking against a per-joint double-integrator plant.
//!
//! The reference engine runs at its tick rate; the PD loop runs an integer
//! number of inner steps per tick, holding each reference sample constant
//! until the next one arrives.

use std::io::Write;

use thiserror::Error;

use crate::engine::{EngineError, EngineState, ReferenceSample};
use crate::gait::GaitLibrary;
use crate::script::CommandScript;

/// Default inner loop rate in Hz.
pub const DEFAULT_INNER_RATE: f64 = 2000.0;

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid tracking configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T, E = TrackingError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub struct PdGains {
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    pub torque_limit: Vec<f64>,
}

impl PdGains {
    pub fn new(kp: Vec<f64>, kd: Vec<f64>, torque_limit: Vec<f64>) -> Result<Self> {
        if kp.len() != kd.len() || kp.len() != torque_limit.len() {
            return Err(TrackingError::Dimension(format!(
                "kp {}, kd {}, torque_limit {}",
                kp.len(),
                kd.len(),
                torque_limit.len()
            )));
        }
        if kp.iter().chain(&kd).any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(TrackingError::Config(
                "gains must be finite and non-negative".into(),
            ));
        }
        if torque_limit.iter().any(|l| !(*l > 0.0)) {
            return Err(TrackingError::Config(
                "torque limits must be positive".into(),
            ));
        }
        Ok(Self {
            kp,
            kd,
            torque_limit,
        })
    }

    pub fn uniform(n: usize, kp: f64, kd: f64, torque_limit: f64) -> Result<Self> {
        Self::new(vec![kp; n], vec![kd; n], vec![torque_limit; n])
    }

    /// `kd = 2 sqrt(kp I)` per joint.
    pub fn critically_damped(kp: f64, inertia: &[f64], torque_limit: f64) -> Result<Self> {
        let n = inertia.len();
        let kd = inertia.iter().map(|i| 2.0 * (kp * i).sqrt()).collect();
        Self::new(vec![kp; n], kd, vec![torque_limit; n])
    }

    pub fn len(&self) -> usize {
        self.kp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kp.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantState {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub inertia: Vec<f64>,
}

impl PlantState {
    pub fn at_rest(q: Vec<f64>, inertia: Vec<f64>) -> Result<Self> {
        if q.len() != inertia.len() {
            return Err(TrackingError::Dimension(format!(
                "{} positions, {} inertias",
                q.len(),
                inertia.len()
            )));
        }
        if inertia.iter().any(|i| !(*i > 0.0)) {
            return Err(TrackingError::Config("inertia must be positive".into()));
        }
        let n = q.len();
        Ok(Self {
            q,
            qdot: vec![0.0; n],
            inertia,
        })
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.qdot
            .iter()
            .zip(&self.inertia)
            .map(|(v, i)| 0.5 * i * v * v)
            .sum()
    }
}

/// Saturated PD torque towards the sample's desired position and velocity.
pub fn pd_torque(gains: &PdGains, sample: &ReferenceSample, q: &[f64], qdot: &[f64]) -> Vec<f64> {
    (0..gains.len())
        .map(|i| {
            let tau = gains.kp[i] * (sample.q_des[i] - q[i])
                + gains.kd[i] * (sample.qdot_des[i] - qdot[i]);
            tau.clamp(-gains.torque_limit[i], gains.torque_limit[i])
        })
        .collect()
}

/// One semi-implicit Euler step of `I qddot = torque`.
pub fn plant_step(state: &PlantState, torque: &[f64], dt: f64) -> PlantState {
    let mut next = state.clone();
    for (i, tau) in torque.iter().enumerate() {
        next.qdot[i] += tau / next.inertia[i] * dt;
        next.q[i] += next.qdot[i] * dt;
    }
    next
}

/// One inner-loop step.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    /// Index into [`Trace::samples`] of the reference in effect.
    pub sample: usize,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub torque: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub samples: Vec<ReferenceSample>,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    /// Root-mean-square of `q_des - q` over all joints for rows with
    /// `t >= from`.
    pub fn rms_error_since(&self, from: f64) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for row in self.rows.iter().filter(|r| r.t >= from) {
            let s = &self.samples[row.sample];
            for (d, q) in s.q_des.iter().zip(&row.q) {
                sum += (d - q) * (d - q);
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            (sum / count as f64).sqrt()
        }
    }

    /// CSV with columns `t`, then per joint `q_des`, `q`, `qdot_des`, `qdot`,
    /// `torque` blocks.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let n = self.samples.first().map_or(0, |s| s.q_des.len());
        let mut header = String::from("t");
        for name in ["q_des", "q", "qdot_des", "qdot", "torque"] {
            for i in 0..n {
                header.push_str(&format!(",{name}{i}"));
            }
        }
        writeln!(out, "{header}")?;
        for row in &self.rows {
            let s = &self.samples[row.sample];
            write!(out, "{}", row.t)?;
            for block in [&s.q_des, &row.q, &s.qdot_des, &row.qdot, &row.torque] {
                for v in block.iter() {
                    write!(out, ",{v}")?;
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Runs the engine for `duration` seconds under `schedule`, driving the plant
/// with `inner_rate / engine rate` PD steps per tick.
pub fn run_closed_loop(
    engine: &mut EngineState,
    lib: &GaitLibrary,
    mut plant: PlantState,
    gains: &PdGains,
    duration: f64,
    schedule: &CommandScript,
    inner_rate: f64,
) -> Result<Trace> {
    let n = lib.n_outputs();
    if gains.len() != n || plant.q.len() != n || plant.qdot.len() != n || plant.inertia.len() != n {
        return Err(TrackingError::Dimension(format!(
            "library has {n} outputs; gains {}, plant {}",
            gains.len(),
            plant.q.len()
        )));
    }
    let tick = engine.config.tick_period;
    let ratio = inner_rate * tick;
    let substeps = ratio.round();
    if !(substeps >= 1.0 && (ratio - substeps).abs() <= 1e-9 * ratio) {
        return Err(TrackingError::Config(format!(
            "inner rate {inner_rate} Hz is not an integer multiple of the engine rate {} Hz",
            1.0 / tick
        )));
    }
    let substeps = substeps as usize;
    let dt = 1.0 / inner_rate;
    let ticks = (duration / tick).round() as usize;

    let mut trace = Trace::default();
    for _ in 0..ticks {
        let cmd = schedule.command_at(engine.time());
        let sample = engine.tick(lib, cmd)?;
        let index = trace.samples.len();
        for m in 0..substeps {
            let torque = pd_torque(gains, &sample, &plant.q, &plant.qdot);
            trace.rows.push(TraceRow {
                t: sample.t + m as f64 * dt,
                sample: index,
                q: plant.q.clone(),
                qdot: plant.qdot.clone(),
                torque: torque.clone(),
            });
            plant = plant_step(&plant, &torque, dt);
        }
        trace.samples.push(sample);
    }
    Ok(trace)
}
