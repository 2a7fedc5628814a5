//! Online reference generation.
//!
//! An [`EngineState`] is ticked at a fixed rate with a [`CommandInput`]
//! (user velocity, heading, and residual corrections) and emits one
//! [`ReferenceSample`] per tick. Velocity changes are handled by blending
//! from the active curve into the newly interpolated gait over the rest of
//! the current step; at the end of each step the stance leg swaps and the
//! next step starts from the mirrored gait.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bezier::{bernstein_basis, combine_columns, BASIS_LEN};
use crate::gait::{Gait, GaitError, GaitLibrary, InterpolationMode, Stance, Velocity};
use crate::transition::{PhaseClock, TransitionCurve, TransitionError};

/// Spliced phases at or above `1 - STEP_EPS` trigger the step event.
const STEP_EPS: f64 = 1e-9;

/// States per rayon task in [`tick_batch`].
const BATCH_CHUNK: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Gait(#[from] GaitError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error("command field {0} is not finite")]
    NonFiniteCommand(&'static str),
    #[error("delta_q has {got} entries, library has {expected} outputs")]
    ResidualLength { expected: usize, got: usize },
    #[error("batch has {states} states but {commands} commands")]
    BatchLength { states: usize, commands: usize },
    #[error("invalid engine configuration: {0}")]
    Config(String),
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Seconds per tick.
    pub tick_period: f64,
    /// Target velocity change (m/s) that triggers a new transition.
    pub deadband: f64,
    /// Transitions requested at step phase `>= 1 - splice_margin` wait for
    /// the next step.
    pub splice_margin: f64,
    /// Elementwise bound on `|delta_q|` in rad.
    pub residual_bound: f64,
    pub initial_stance: Stance,
    /// Re-blend towards the target on every tick, not only on command changes.
    pub reblend_every_tick: bool,
    /// Largest tolerated joint jump (rad) between consecutive steps.
    pub impact_tolerance: f64,
    pub interpolation: InterpolationMode,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            tick_period: 0.02,
            deadband: 1e-4,
            splice_margin: 0.05,
            residual_bound: 0.3,
            initial_stance: Stance::Left,
            reblend_every_tick: false,
            impact_tolerance: 0.05,
            interpolation: InterpolationMode::Simplex,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EngineError::Config(m));
        if !(self.tick_period > 0.0 && self.tick_period.is_finite()) {
            return bad(format!("tick_period {} must be positive", self.tick_period));
        }
        if !(self.deadband >= 0.0 && self.deadband.is_finite()) {
            return bad(format!("deadband {} must be non-negative", self.deadband));
        }
        if !(0.0..1.0).contains(&self.splice_margin) {
            return bad(format!(
                "splice_margin {} outside [0, 1)",
                self.splice_margin
            ));
        }
        if !(self.residual_bound > 0.0) {
            return bad(format!(
                "residual_bound {} must be positive",
                self.residual_bound
            ));
        }
        if !(self.impact_tolerance >= 0.0) {
            return bad(format!(
                "impact_tolerance {} must be non-negative",
                self.impact_tolerance
            ));
        }
        Ok(())
    }
}

/// Inputs for one tick.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CommandInput {
    /// User velocity command in the command frame (m/s).
    pub v_user: Velocity,
    /// Yaw of the command frame relative to robot forward (rad).
    pub heading: f64,
    /// Velocity residual, robot frame (m/s).
    pub delta_v: Velocity,
    /// Joint residuals (rad). Empty means zero.
    pub delta_q: Vec<f64>,
}

impl CommandInput {
    pub fn velocity(v: Velocity) -> Self {
        Self {
            v_user: v,
            ..Self::default()
        }
    }

    fn validate(&self, n_outputs: usize) -> Result<()> {
        if !self.v_user.is_finite() {
            return Err(EngineError::NonFiniteCommand("v_user"));
        }
        if !self.heading.is_finite() {
            return Err(EngineError::NonFiniteCommand("heading"));
        }
        if !self.delta_v.is_finite() {
            return Err(EngineError::NonFiniteCommand("delta_v"));
        }
        if !self.delta_q.is_empty() && self.delta_q.len() != n_outputs {
            return Err(EngineError::ResidualLength {
                expected: n_outputs,
                got: self.delta_q.len(),
            });
        }
        if self.delta_q.iter().any(|x| !x.is_finite()) {
            return Err(EngineError::NonFiniteCommand("delta_q"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFlags {
    /// At least one joint residual was clamped.
    pub residual_saturated: bool,
    /// A step event on this tick jumped by more than the impact tolerance.
    pub impact_mismatch: bool,
}

impl SampleFlags {
    pub fn bits(&self) -> u8 {
        self.residual_saturated as u8 | (self.impact_mismatch as u8) << 1
    }

    pub fn from_bits(bits: u8) -> Self {
        Self {
            residual_saturated: bits & 1 != 0,
            impact_mismatch: bits & 2 != 0,
        }
    }
}

/// Joint reference emitted on each tick.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSample {
    /// Time of the sample (s).
    pub t: f64,
    pub step_index: u64,
    pub stance: Stance,
    /// Step phase `(t - t0) / T`, monotone within a step.
    pub phase: f64,
    /// Phase of the active curve since the last splice.
    pub spliced_phase: f64,
    pub v_target: Velocity,
    /// `q_nominal + delta_q` (rad).
    pub q_des: Vec<f64>,
    /// Reference joint velocity (rad/s).
    pub qdot_des: Vec<f64>,
    /// Gait reference before residuals (rad).
    pub q_nominal: Vec<f64>,
    pub flags: SampleFlags,
}

/// `v` expressed in a frame rotated by `heading`.
pub fn rotate_command(v: Velocity, heading: f64) -> Velocity {
    let (s, c) = heading.sin_cos();
    Velocity::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Mutable engine state. One owner ticks it; samples are plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct EngineState {
    pub active: TransitionCurve,
    pub stance: Stance,
    pub step_index: u64,
    pub last_target_velocity: Velocity,
    /// Ticks since start; time is `ticks * tick_period`.
    pub ticks: u64,
    pub config: EngineConfig,
    /// Joint jump at the most recent step event (rad).
    pub last_impact_residual: f64,
}

/// Work left after the state update of a tick: everything except curve
/// evaluation.
#[derive(Clone, Debug)]
struct Pending {
    t: f64,
    phase: f64,
    spliced_phase: f64,
    v_target: Velocity,
    delta_q: Vec<f64>,
    flags: SampleFlags,
}

impl EngineState {
    /// Starts at rest at time zero, tracking the gait for `v0` from phase 0.
    pub fn init(lib: &GaitLibrary, v0: Velocity, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        if !v0.is_finite() {
            return Err(EngineError::NonFiniteCommand("v0"));
        }
        let v = lib.project(v0)?;
        let stance = config.initial_stance;
        let gait = nominal_gait(lib, v, stance, config.interpolation)?;
        let clock = PhaseClock::start(0.0, gait.step_duration);
        Ok(Self {
            active: TransitionCurve::steady(gait.curve, clock, v),
            stance,
            step_index: 0,
            last_target_velocity: v,
            ticks: 0,
            config,
            last_impact_residual: 0.0,
        })
    }

    pub fn time(&self) -> f64 {
        self.ticks as f64 * self.config.tick_period
    }

    pub fn clock(&self) -> &PhaseClock {
        &self.active.clock
    }

    /// Advances one tick and returns the reference for the new time.
    pub fn tick(&mut self, lib: &GaitLibrary, cmd: &CommandInput) -> Result<ReferenceSample> {
        cmd.validate(lib.n_outputs())?;
        let pending = self.advance(lib, cmd)?;
        let n = lib.n_outputs();
        let mut q_nominal = vec![0.0; n];
        let mut qdot = vec![0.0; n];
        self.active
            .position_into(pending.spliced_phase, &mut q_nominal)?;
        self.active
            .velocity_into(pending.spliced_phase, &mut qdot)?;
        Ok(self.finish(pending, q_nominal, qdot))
    }

    fn advance(&mut self, lib: &GaitLibrary, cmd: &CommandInput) -> Result<Pending> {
        let cfg = self.config;
        let rotated = rotate_command(cmd.v_user, cmd.heading);
        let wanted = Velocity::new(rotated.x + cmd.delta_v.x, rotated.y + cmd.delta_v.y);
        let v_target = lib.project(wanted)?;

        let now = self.time();
        let changed = v_target.distance(self.last_target_velocity) > cfg.deadband;
        if (changed || cfg.reblend_every_tick)
            && self.active.clock.tau_at(now) < 1.0 - cfg.splice_margin
        {
            let target = nominal_gait(lib, v_target, self.stance, cfg.interpolation)?;
            self.active = self.active.reblend(&target.curve, v_target, now)?;
            self.last_target_velocity = v_target;
        }

        self.ticks += 1;
        let t = self.time();
        self.active.clock.t = t;

        let mut flags = SampleFlags::default();
        if self.active.clock.tau_hat_at(t) >= 1.0 - STEP_EPS {
            let n = lib.n_outputs();
            let mut old_end = vec![0.0; n];
            self.active.position_into(1.0, &mut old_end)?;
            self.stance = self.stance.flipped();
            let gait = nominal_gait(lib, v_target, self.stance, cfg.interpolation)?;
            let clock = PhaseClock::start(t, gait.step_duration);
            self.active = TransitionCurve::steady(gait.curve, clock, v_target);
            self.last_target_velocity = v_target;
            self.step_index += 1;

            let mut new_start = vec![0.0; n];
            self.active.position_into(0.0, &mut new_start)?;
            self.last_impact_residual = old_end
                .iter()
                .zip(&new_start)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if self.last_impact_residual > cfg.impact_tolerance {
                flags.impact_mismatch = true;
                log::debug!(
                    "step {}: reference jumps {:.4} rad at impact",
                    self.step_index,
                    self.last_impact_residual
                );
            }
        }

        let clock = &self.active.clock;
        let spliced_phase = clock.tau_hat_at(t).clamp(0.0, 1.0);
        let phase = clock.tau_at(t).clamp(0.0, 1.0);

        let bound = cfg.residual_bound;
        let delta_q = if cmd.delta_q.is_empty() {
            vec![0.0; lib.n_outputs()]
        } else {
            cmd.delta_q
                .iter()
                .map(|&d| {
                    let c = d.clamp(-bound, bound);
                    flags.residual_saturated |= c != d;
                    c
                })
                .collect()
        };

        Ok(Pending {
            t,
            phase,
            spliced_phase,
            v_target,
            delta_q,
            flags,
        })
    }

    fn finish(&self, p: Pending, q_nominal: Vec<f64>, qdot_des: Vec<f64>) -> ReferenceSample {
        let q_des = q_nominal
            .iter()
            .zip(&p.delta_q)
            .map(|(q, d)| q + d)
            .collect();
        ReferenceSample {
            t: p.t,
            step_index: self.step_index,
            stance: self.stance,
            phase: p.phase,
            spliced_phase: p.spliced_phase,
            v_target: p.v_target,
            q_des,
            qdot_des,
            q_nominal,
            flags: p.flags,
        }
    }
}

/// The library gait for `v` performed on `stance`. Right-stance steps use the
/// mirror of the left-stance gait at the laterally reflected velocity.
pub fn nominal_gait(
    lib: &GaitLibrary,
    v: Velocity,
    stance: Stance,
    mode: InterpolationMode,
) -> Result<Gait> {
    match stance {
        Stance::Left => Ok(lib.interpolate_with(v, mode)?),
        Stance::Right => {
            let canonical = lib.interpolate_with(v.mirrored(), mode)?;
            Ok(canonical.mirrored(lib.mirror())?)
        }
    }
}

/// Ticks many independent engines at once.
///
/// The result is bit-identical to calling [`EngineState::tick`] on each pair
/// in turn: state updates run per engine, then all curves are evaluated with
/// a shared basis layout using the same accumulation kernel as the scalar
/// path.
pub fn tick_batch(
    states: &mut [EngineState],
    lib: &GaitLibrary,
    cmds: &[CommandInput],
) -> Result<Vec<ReferenceSample>> {
    if states.len() != cmds.len() {
        return Err(EngineError::BatchLength {
            states: states.len(),
            commands: cmds.len(),
        });
    }
    let n = lib.n_outputs();
    for cmd in cmds {
        cmd.validate(n)?;
    }
    let pending: Vec<Pending> = states
        .par_iter_mut()
        .zip(cmds.par_iter())
        .with_min_len(BATCH_CHUNK)
        .map(|(s, c)| s.advance(lib, c))
        .collect::<Result<_>>()?;

    let taus: Vec<f64> = pending.iter().map(|p| p.spliced_phase).collect();
    let positions = eval_positions(states, &taus, n, lib.degree());
    let velocities = eval_velocities(states, &taus, n)?;

    Ok(pending
        .into_iter()
        .zip(positions.chunks(n).zip(velocities.chunks(n)))
        .zip(states.iter())
        .map(|((p, (q, qd)), s)| s.finish(p, q.to_vec(), qd.to_vec()))
        .collect())
}

/// Row-major `(states, n_outputs)` positions from a `(states, degree + 1)`
/// Bernstein basis matrix.
fn eval_positions(states: &[EngineState], taus: &[f64], n: usize, degree: usize) -> Vec<f64> {
    let cols = degree + 1;
    let mut basis = vec![0.0; taus.len() * cols];
    basis
        .par_chunks_mut(cols)
        .zip(taus.par_iter())
        .with_min_len(BATCH_CHUNK)
        .for_each(|(row, &tau)| {
            let mut buf = [0.0; BASIS_LEN];
            bernstein_basis(degree, tau, &mut buf);
            row.copy_from_slice(&buf[..cols]);
        });
    let mut out = vec![0.0; states.len() * n];
    out.par_chunks_mut(n)
        .zip(basis.par_chunks(cols))
        .zip(states.par_iter())
        .with_min_len(BATCH_CHUNK)
        .for_each(|((q, b), s)| combine_columns(s.active.blended.coeffs(), b, q));
    out
}

fn eval_velocities(states: &[EngineState], taus: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; states.len() * n];
    out.par_chunks_mut(n)
        .zip(states.par_iter().zip(taus.par_iter()))
        .with_min_len(BATCH_CHUNK)
        .try_for_each(|(qd, (s, &tau))| s.active.velocity_into(tau, qd))?;
    Ok(out)
}
