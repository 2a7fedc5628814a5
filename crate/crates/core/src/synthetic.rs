//! Synthetic gait libraries for testing and demos.
//!
//! Each generated gait describes a biped with `n_outputs / 2` joints per leg
//! (left leg first). Joints cycle through the roles hip yaw, hip roll, hip
//! pitch, knee and ankle. Every joint follows either a stance or a swing
//! profile built from two shapes:
//!
//! * a sweep `c(tau) = 1 - 2 s(tau)` with `s` the quintic smoothstep, going
//!   from +1 to -1 with zero slope at both ends;
//! * a bump `64 tau^3 (1 - tau)^3`, zero at both ends with a unit peak at
//!   mid-step.
//!
//! Sweep amplitudes depend on `v_x` and `v_y^2`, bump amplitudes on speed and
//! `v_y`, so coefficients vary smoothly over the grid. The stance and swing
//! profiles are paired so that the mirrored end pose equals the start pose.
//! Since end poses do not depend on the sign of `v_y`, the same holds between
//! a gait and the mirrored gait at `(v_x, -v_y)`, which is what the engine
//! plays on right-stance steps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bezier::{BezierCurve, BezierError};
use crate::gait::{Gait, GaitError, GaitLibrary, LibraryMetadata, MirrorMap, Stance, Velocity};

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("gait '{gait}': fit residual {residual:.3e} exceeds {limit:.3e}")]
    FitResidual {
        gait: String,
        residual: f64,
        limit: f64,
    },
    #[error(transparent)]
    Bezier(#[from] BezierError),
    #[error(transparent)]
    Gait(#[from] GaitError),
}

pub type Result<T, E = SyntheticError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointRole {
    HipYaw,
    HipRoll,
    HipPitch,
    Knee,
    Ankle,
}

impl JointRole {
    const CYCLE: [JointRole; 5] = [
        JointRole::HipYaw,
        JointRole::HipRoll,
        JointRole::HipPitch,
        JointRole::Knee,
        JointRole::Ankle,
    ];

    /// Whether the joint angle changes sign under left/right reflection.
    pub fn is_lateral(self) -> bool {
        matches!(self, JointRole::HipYaw | JointRole::HipRoll)
    }
}

/// Waveform parameters for one joint role (angles in rad, gains in
/// rad per m/s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointProfile {
    /// Mean angle. For lateral joints the swing leg uses the negated value.
    pub offset: f64,
    pub sweep_gain_x: f64,
    /// Sweep per (m/s)^2 of lateral speed.
    pub sweep_gain_y2: f64,
    pub stance_bump: f64,
    pub swing_bump: f64,
    /// Extra swing bump per m/s of speed.
    pub swing_bump_gain: f64,
    /// Bump per m/s of `v_y`, opposite on the two legs.
    pub lateral_bump_gain: f64,
}

impl JointProfile {
    pub fn default_for(role: JointRole) -> Self {
        let p = |offset,
                 sweep_gain_x,
                 sweep_gain_y2,
                 stance_bump,
                 swing_bump,
                 swing_bump_gain,
                 lateral_bump_gain| {
            JointProfile {
                offset,
                sweep_gain_x,
                sweep_gain_y2,
                stance_bump,
                swing_bump,
                swing_bump_gain,
                lateral_bump_gain,
            }
        };
        match role {
            JointRole::HipYaw => p(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.3),
            JointRole::HipRoll => p(0.04, 0.0, 1.5, 0.02, 0.0, 0.0, 0.6),
            JointRole::HipPitch => p(-0.2, 0.6, 0.0, 0.0, 0.2, 0.3, 0.0),
            JointRole::Knee => p(0.55, 0.0, 0.0, 0.05, 0.45, 0.4, 0.0),
            JointRole::Ankle => p(-0.35, -0.3, 0.0, 0.0, -0.25, -0.2, 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profiles {
    pub hip_yaw: JointProfile,
    pub hip_roll: JointProfile,
    pub hip_pitch: JointProfile,
    pub knee: JointProfile,
    pub ankle: JointProfile,
}

impl Default for Profiles {
    fn default() -> Self {
        Self {
            hip_yaw: JointProfile::default_for(JointRole::HipYaw),
            hip_roll: JointProfile::default_for(JointRole::HipRoll),
            hip_pitch: JointProfile::default_for(JointRole::HipPitch),
            knee: JointProfile::default_for(JointRole::Knee),
            ankle: JointProfile::default_for(JointRole::Ankle),
        }
    }
}

impl Profiles {
    fn get(&self, role: JointRole) -> &JointProfile {
        match role {
            JointRole::HipYaw => &self.hip_yaw,
            JointRole::HipRoll => &self.hip_roll,
            JointRole::HipPitch => &self.hip_pitch,
            JointRole::Knee => &self.knee,
            JointRole::Ankle => &self.ankle,
        }
    }
}

/// Velocity sample points: the Cartesian product of two axes, or an explicit
/// list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VelocityGrid {
    Axes { v_x: Vec<f64>, v_y: Vec<f64> },
    Points { points: Vec<[f64; 2]> },
}

impl VelocityGrid {
    pub fn points(&self) -> Vec<Velocity> {
        match self {
            VelocityGrid::Axes { v_x, v_y } => v_y
                .iter()
                .flat_map(|y| v_x.iter().map(move |x| Velocity::new(*x, *y)))
                .collect(),
            VelocityGrid::Points { points } => {
                points.iter().map(|p| Velocity::new(p[0], p[1])).collect()
            }
        }
    }
}

impl Default for VelocityGrid {
    /// 13 forward speeds by 3 lateral speeds, 39 gaits.
    fn default() -> Self {
        VelocityGrid::Axes {
            v_x: vec![
                -0.3, -0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5,
            ],
            v_y: vec![-0.2, 0.0, 0.2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub robot_name: String,
    pub grid: VelocityGrid,
    pub n_outputs: usize,
    pub degree: usize,
    pub step_duration: f64,
    /// Number of phase samples per gait passed to the fit.
    pub samples: usize,
    pub max_fit_residual: f64,
    pub n_l: usize,
    pub n_e: usize,
    pub profiles: Profiles,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            robot_name: "synthetic-biped".into(),
            grid: VelocityGrid::default(),
            n_outputs: 10,
            degree: 7,
            step_duration: 0.4,
            samples: 101,
            max_fit_residual: 1e-6,
            n_l: 14,
            n_e: 41,
            profiles: Profiles::default(),
        }
    }
}

fn sweep(tau: f64) -> f64 {
    let s = tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau);
    1.0 - 2.0 * s
}

fn bump(tau: f64) -> f64 {
    let b = tau * (1.0 - tau);
    64.0 * b * b * b
}

impl SyntheticSpec {
    pub fn role(&self, output: usize) -> JointRole {
        JointRole::CYCLE[(output % (self.n_outputs / 2)) % JointRole::CYCLE.len()]
    }

    /// Swaps the legs; lateral joints change sign.
    pub fn mirror_map(&self) -> MirrorMap {
        let half = self.n_outputs / 2;
        let permutation = (0..self.n_outputs)
            .map(|i| (i + half) % self.n_outputs)
            .collect();
        let signs = (0..self.n_outputs)
            .map(|i| if self.role(i).is_lateral() { -1.0 } else { 1.0 })
            .collect();
        MirrorMap::new(permutation, signs).expect("leg swap is an involution")
    }

    /// Joint angles of the left-stance gait for `v` at phase `tau`.
    pub fn pose(&self, v: Velocity, tau: f64) -> Vec<f64> {
        let half = self.n_outputs / 2;
        let speed = v.norm();
        (0..self.n_outputs)
            .map(|i| {
                let role = self.role(i);
                let p = self.profiles.get(role);
                let amplitude = p.sweep_gain_x * v.x + p.sweep_gain_y2 * v.y * v.y;
                let stance_leg = i < half;
                let offset = if role.is_lateral() && !stance_leg {
                    -p.offset
                } else {
                    p.offset
                };
                // stance sweeps +amp -> -amp; swing mirrors it, keeping lateral
                // joints on the same sweep so the reflected end pose matches
                let sign = if stance_leg || role.is_lateral() {
                    1.0
                } else {
                    -1.0
                };
                let bump_amp = if stance_leg {
                    p.stance_bump + p.lateral_bump_gain * v.y
                } else {
                    p.swing_bump + p.swing_bump_gain * speed - p.lateral_bump_gain * v.y
                };
                offset + sign * amplitude * sweep(tau) + bump_amp * bump(tau)
            })
            .collect()
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(SyntheticError::Spec(m));
        if self.n_outputs < 2 || !self.n_outputs.is_multiple_of(2) {
            return bad(format!(
                "n_outputs must be even and >= 2, got {}",
                self.n_outputs
            ));
        }
        if self.samples < self.degree + 1 {
            return bad(format!(
                "{} samples cannot determine a degree-{} curve",
                self.samples, self.degree
            ));
        }
        if !(self.step_duration > 0.0) {
            return bad(format!(
                "step_duration must be positive, got {}",
                self.step_duration
            ));
        }
        if self.grid.points().is_empty() {
            return bad("velocity grid is empty".into());
        }
        Ok(())
    }
}

/// Name used for the gait at `v`.
pub fn gait_name(v: Velocity) -> String {
    format!("vx{:+.3}_vy{:+.3}", v.x, v.y)
}

/// Samples and fits one gait per grid point.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<GaitLibrary> {
    spec.check()?;
    let gaits = spec
        .grid
        .points()
        .into_iter()
        .map(|v| synthesize_gait(spec, v))
        .collect::<Result<Vec<_>>>()?;
    let metadata = LibraryMetadata {
        robot_name: spec.robot_name.clone(),
        n_l: spec.n_l,
        n_e: spec.n_e,
        extra: [(
            "generator".to_string(),
            serde_json::Value::String("synthetic".into()),
        )]
        .into_iter()
        .collect(),
    };
    Ok(GaitLibrary::new(gaits, spec.mirror_map(), metadata)?)
}

fn synthesize_gait(spec: &SyntheticSpec, v: Velocity) -> Result<Gait> {
    let name = gait_name(v);
    let samples: Vec<(f64, Vec<f64>)> = (0..spec.samples)
        .map(|k| {
            let tau = k as f64 / (spec.samples - 1) as f64;
            (tau, spec.pose(v, tau))
        })
        .collect();
    let curve = BezierCurve::fit_least_squares(&samples, spec.degree)?;
    let residual = samples
        .iter()
        .map(|(tau, y)| {
            let fit = curve.eval(*tau).expect("sample phases lie in [0, 1]");
            fit.iter()
                .zip(y)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    if !(residual <= spec.max_fit_residual) {
        return Err(SyntheticError::FitResidual {
            gait: name,
            residual,
            limit: spec.max_fit_residual,
        });
    }
    Ok(Gait::new(name, curve, v, spec.step_duration, Stance::Left)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_39_points_including_origin() {
        let pts = VelocityGrid::default().points();
        assert_eq!(pts.len(), 39);
        assert!(pts.contains(&Velocity::ZERO));
    }

    #[test]
    fn analytic_profiles_are_impact_consistent() {
        let spec = SyntheticSpec::default();
        let map = spec.mirror_map();
        for v in spec.grid.points() {
            let start = spec.pose(v, 0.0);
            let end = map.apply_pose(&spec.pose(v, 1.0));
            for (a, b) in start.iter().zip(&end) {
                assert!((a - b).abs() < 1e-15, "{v}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn steps_chain_through_mirrored_lateral_gait() {
        let spec = SyntheticSpec::default();
        let map = spec.mirror_map();
        for v in spec.grid.points() {
            let end = map.apply_pose(&spec.pose(v, 1.0));
            let next = spec.pose(v.mirrored(), 0.0);
            for (a, b) in end.iter().zip(&next) {
                assert!((a - b).abs() < 1e-15, "{v}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn step_in_place_is_time_symmetric() {
        let spec = SyntheticSpec {
            grid: VelocityGrid::Points {
                points: vec![[0.0, 0.0]],
            },
            ..Default::default()
        };
        let lib = generate_synthetic(&spec).unwrap();
        let g = &lib.gaits()[0];
        assert_eq!(g.velocity, Velocity::ZERO);
        for k in 0..=20 {
            let tau = k as f64 / 20.0;
            let a = g.curve.eval(tau).unwrap();
            let b = g.curve.eval(1.0 - tau).unwrap();
            assert!((a - b).amax() < 1e-9);
        }
        assert_eq!(lib.warnings().len(), 1);
    }

    #[test]
    fn fitted_library_is_impact_consistent() {
        let spec = SyntheticSpec::default();
        let lib = generate_synthetic(&spec).unwrap();
        assert_eq!(lib.len(), 39);
        assert_eq!(lib.n_outputs(), 10);
        assert_eq!(lib.degree(), 7);
        for g in lib.gaits() {
            let start = g.curve.eval(0.0).unwrap();
            let end: Vec<f64> = g.curve.eval(1.0).unwrap().iter().copied().collect();
            let mirrored = lib.mirror().apply_pose(&end);
            for (a, b) in start.iter().zip(&mirrored) {
                assert!((a - b).abs() <= 1e-3);
            }
        }
    }

    #[test]
    fn coefficients_vary_continuously() {
        let mut gaps = Vec::new();
        for dv in [1e-1, 1e-2, 1e-3, 1e-4] {
            let spec = SyntheticSpec {
                grid: VelocityGrid::Points {
                    points: vec![[0.2, 0.05], [0.2 + dv, 0.05]],
                },
                ..Default::default()
            };
            let lib = generate_synthetic(&spec).unwrap();
            let d = (lib.gaits()[0].curve.coeffs() - lib.gaits()[1].curve.coeffs()).amax();
            gaps.push(d);
        }
        for w in gaps.windows(2) {
            assert!(w[1] < w[0] * 0.2);
        }
        assert!(gaps[3] < 1e-3);
    }

    #[test]
    fn low_degree_fails_fit_check() {
        let spec = SyntheticSpec {
            degree: 3,
            ..Default::default()
        };
        assert!(matches!(
            generate_synthetic(&spec),
            Err(SyntheticError::FitResidual { .. })
        ));
    }

    #[test]
    fn spec_validation() {
        let odd = SyntheticSpec {
            n_outputs: 5,
            ..Default::default()
        };
        assert!(matches!(
            generate_synthetic(&odd),
            Err(SyntheticError::Spec(_))
        ));
        let empty = SyntheticSpec {
            grid: VelocityGrid::Points { points: vec![] },
            ..Default::default()
        };
        assert!(matches!(
            generate_synthetic(&empty),
            Err(SyntheticError::Spec(_))
        ));
    }

    #[test]
    fn spec_parses_from_json() {
        let spec: SyntheticSpec =
            serde_json::from_str(r#"{"grid": {"v_x": [0.0, 0.1], "v_y": [0.0, 0.1]}}"#).unwrap();
        assert_eq!(spec.grid.points().len(), 4);
        assert_eq!(spec.degree, 7);
        assert!(serde_json::from_str::<SyntheticSpec>(r#"{"degre": 7}"#).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec::default();
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.gaits(), b.gaits());
    }
}
