//! Mid-step transitions between gaits.
//!
//! At transition time `t1` both the currently tracked curve and the target
//! gait are cut at the current phase; their tails are reparameterized over
//! the remaining step time and merged into a single curve that keeps the
//! first three control points of the current tail and the last three of the
//! target tail, averaging the interior ones. Sharing three boundary control
//! points on each side makes the merged curve agree with both tails in value,
//! first and second derivative at the respective ends.

use thiserror::Error;

use crate::bezier::{BezierCurve, BezierError};
use crate::gait::{Gait, Velocity};

/// Smallest degree for which the blend leaves at least one interior column.
pub const MIN_BLEND_DEGREE: usize = 7;

/// Number of boundary control points copied from each side by [`blend`].
const KEPT_COLUMNS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransitionError {
    #[error(transparent)]
    Bezier(#[from] BezierError),
    #[error("blending needs degree >= {MIN_BLEND_DEGREE}, got {0}")]
    DegreeTooLow(usize),
    #[error("no step time left to splice into (phase {0})")]
    NoTimeRemaining(f64),
    #[error("invalid phase clock: {0}")]
    InvalidClock(String),
}

pub type Result<T, E = TransitionError> = std::result::Result<T, E>;

/// Time bookkeeping for one step: stride start `t0`, last splice `t1`,
/// step duration `period` and current time `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseClock {
    pub t0: f64,
    pub t1: f64,
    pub period: f64,
    pub t: f64,
}

impl PhaseClock {
    pub fn new(t0: f64, t1: f64, period: f64, t: f64) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(TransitionError::InvalidClock(format!(
                "period must be positive, got {period}"
            )));
        }
        if ![t0, t1, t].iter().all(|x| x.is_finite()) {
            return Err(TransitionError::InvalidClock("non-finite time".into()));
        }
        let clock = Self { t0, t1, period, t };
        if !(t0 <= t1 && t1 < clock.end() && t1 <= t && t <= clock.end()) {
            return Err(TransitionError::InvalidClock(format!(
                "need t0 <= t1 < t0 + T and t1 <= t <= t0 + T, got t0={t0} t1={t1} T={period} t={t}"
            )));
        }
        Ok(clock)
    }

    /// A fresh step starting at `t0`.
    pub fn start(t0: f64, period: f64) -> Self {
        Self {
            t0,
            t1: t0,
            period,
            t: t0,
        }
    }

    /// Time of the end of the step, `t0 + T`.
    #[inline]
    pub fn end(&self) -> f64 {
        self.t0 + self.period
    }

    /// Step time left after the last splice, `(t0 + T) - t1`.
    #[inline]
    pub fn remaining(&self) -> f64 {
        self.end() - self.t1
    }

    /// Step phase `(t - t0) / T`.
    #[inline]
    pub fn tau_at(&self, t: f64) -> f64 {
        (t - self.t0) / self.period
    }

    /// Spliced phase, mapping `[t1, t0 + T]` onto `[0, 1]`.
    ///
    /// The denominator is formed as `(t0 + T) - t1` so that passing the same
    /// `t0 + T` yields exactly one.
    #[inline]
    pub fn tau_hat_at(&self, t: f64) -> f64 {
        (t - self.t1) / self.remaining()
    }

    pub fn tau(&self) -> f64 {
        self.tau_at(self.t)
    }

    pub fn tau_hat(&self) -> f64 {
        self.tau_hat_at(self.t)
    }

    /// Same step, with the splice point moved to `t1`.
    pub fn spliced_at(&self, t1: f64) -> Self {
        Self { t1, t: t1, ..*self }
    }
}

/// The part of `curve` after phase `tau1`, reparameterized onto `[0, 1]`.
pub fn splice_tail(curve: &BezierCurve, tau1: f64) -> Result<BezierCurve> {
    if !(0.0..1.0).contains(&tau1) {
        return Err(TransitionError::NoTimeRemaining(tau1));
    }
    if tau1 == 0.0 {
        return Ok(curve.clone());
    }
    Ok(curve.split_right(tau1)?)
}

/// Merges two tails: columns `0..3` from `from`, columns `b-2..=b` from `to`,
/// interior columns averaged.
pub fn blend(from: &BezierCurve, to: &BezierCurve) -> Result<BezierCurve> {
    from.same_shape(to)?;
    let b = from.degree();
    if b < MIN_BLEND_DEGREE {
        return Err(TransitionError::DegreeTooLow(b));
    }
    let a1 = from.coeffs();
    let a2 = to.coeffs();
    let mut out = a1.clone();
    for j in KEPT_COLUMNS..=(b - KEPT_COLUMNS) {
        for r in 0..out.nrows() {
            out[(r, j)] = (a1[(r, j)] + a2[(r, j)]) / 2.0;
        }
    }
    for j in (b + 1 - KEPT_COLUMNS)..=b {
        out.set_column(j, &a2.column(j));
    }
    Ok(BezierCurve::from_matrix_unchecked(out))
}

/// The curve being tracked over the rest of the current step.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionCurve {
    pub blended: BezierCurve,
    pub source_tail: BezierCurve,
    pub target_tail: BezierCurve,
    pub clock: PhaseClock,
    pub target_velocity: Velocity,
}

impl TransitionCurve {
    /// Tracks `curve` unmodified over a full step.
    pub fn steady(curve: BezierCurve, clock: PhaseClock, velocity: Velocity) -> Self {
        Self {
            source_tail: curve.clone(),
            target_tail: curve.clone(),
            blended: curve,
            clock,
            target_velocity: velocity,
        }
    }

    /// Blends from the current curve towards `target` (a full-step curve)
    /// starting at time `t_splice`.
    ///
    /// The current curve is cut at its own spliced phase and the target at
    /// the step phase, so repeated calls chain transitions within one step.
    pub fn reblend(
        &self,
        target: &BezierCurve,
        target_velocity: Velocity,
        t_splice: f64,
    ) -> Result<Self> {
        let clock = self.clock.spliced_at(t_splice);
        let source_tail = splice_tail(&self.blended, self.clock.tau_hat_at(t_splice))?;
        let target_tail = splice_tail(target, clock.tau_at(t_splice))?;
        Ok(Self {
            blended: blend(&source_tail, &target_tail)?,
            source_tail,
            target_tail,
            clock,
            target_velocity,
        })
    }

    /// Reference position at spliced phase `tau_hat`.
    pub fn position_into(&self, tau_hat: f64, out: &mut [f64]) -> Result<()> {
        Ok(self.blended.eval_into(tau_hat, out)?)
    }

    /// Reference velocity with respect to time at spliced phase `tau_hat`.
    pub fn velocity_into(&self, tau_hat: f64, out: &mut [f64]) -> Result<()> {
        self.blended.eval_derivative_into(tau_hat, 1, out)?;
        let rate = self.clock.remaining();
        out.iter_mut().for_each(|v| *v /= rate);
        Ok(())
    }
}

/// Splices `current` (a full-step curve) and `target` at the clock's splice
/// phase and blends the tails.
pub fn make_transition(
    current: &BezierCurve,
    target: &Gait,
    clock: PhaseClock,
) -> Result<TransitionCurve> {
    let tau1 = clock.tau_at(clock.t1);
    let source_tail = splice_tail(current, tau1)?;
    let target_tail = splice_tail(&target.curve, tau1)?;
    Ok(TransitionCurve {
        blended: blend(&source_tail, &target_tail)?,
        source_tail,
        target_tail,
        clock,
        target_velocity: target.velocity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gait::Stance;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn curve(rng: &mut impl Rng, rows: usize, degree: usize) -> BezierCurve {
        let data: Vec<f64> = (0..rows * (degree + 1))
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        BezierCurve::from_row_major(rows, degree, &data).unwrap()
    }

    fn de_casteljau(points: &[f64], t: f64) -> f64 {
        let mut p = points.to_vec();
        for level in (1..p.len()).rev() {
            for j in 0..level {
                p[j] = (1.0 - t) * p[j] + t * p[j + 1];
            }
        }
        p[0]
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn blend_layout_degree_seven() {
        let a1 = BezierCurve::from_row_major(1, 7, &[0., 1., 2., 3., 4., 5., 6., 7.]).unwrap();
        let a2 =
            BezierCurve::from_row_major(1, 7, &[10., 11., 12., 13., 14., 15., 16., 17.]).unwrap();
        let b = blend(&a1, &a2).unwrap();
        assert_eq!(b.to_row_major(), vec![0., 1., 2., 8., 9., 15., 16., 17.]);
    }

    #[test]
    fn blend_higher_degree_averages_all_interior() {
        let a1 = BezierCurve::constant(&[0.0], 10).unwrap();
        let a2 = BezierCurve::constant(&[2.0], 10).unwrap();
        let b = blend(&a1, &a2).unwrap().to_row_major();
        assert_eq!(b, vec![0., 0., 0., 1., 1., 1., 1., 1., 2., 2., 2.]);
    }

    #[test]
    fn blend_errors() {
        let low = BezierCurve::constant(&[0.0], 6).unwrap();
        assert_eq!(blend(&low, &low), Err(TransitionError::DegreeTooLow(6)));
        let a = BezierCurve::constant(&[0.0], 7).unwrap();
        let b = BezierCurve::constant(&[0.0, 1.0], 7).unwrap();
        assert!(matches!(blend(&a, &b), Err(TransitionError::Bezier(_))));
    }

    #[test]
    fn blend_identical_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = curve(&mut rng, 10, 7);
        assert_eq!(blend(&a, &a).unwrap(), a);
    }

    #[test]
    fn splice_tail_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let c = curve(&mut rng, 2, 7);
        assert_eq!(splice_tail(&c, 0.0).unwrap(), c);
        assert!(matches!(
            splice_tail(&c, 1.0),
            Err(TransitionError::NoTimeRemaining(_))
        ));
        assert!(splice_tail(&c, -0.1).is_err());

        let tau1 = 0.35;
        let tail = splice_tail(&c, tau1).unwrap();
        let start = tail.eval(0.0).unwrap();
        let expect = c.eval(tau1).unwrap();
        assert!((start - expect).amax() <= 1e-15);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let u: f64 = rng.gen();
            let v = tail.eval(u).unwrap();
            for r in 0..2 {
                let pts: Vec<f64> = c.coeffs().row(r).iter().copied().collect();
                worst = worst.max((v[r] - de_casteljau(&pts, tau1 + (1.0 - tau1) * u)).abs());
            }
        }
        assert!(worst <= 1e-10);
    }

    #[test]
    fn clock_validation() {
        assert!(PhaseClock::new(0.0, 0.1, 0.4, 0.2).is_ok());
        assert!(PhaseClock::new(0.0, 0.4, 0.4, 0.4).is_err());
        assert!(PhaseClock::new(0.0, 0.1, 0.0, 0.1).is_err());
        assert!(PhaseClock::new(0.2, 0.1, 0.4, 0.2).is_err());
        assert!(PhaseClock::new(0.0, 0.2, 0.4, 0.1).is_err());
    }

    #[test]
    fn transition_at_stride_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let current = curve(&mut rng, 3, 7);
        let target = Gait::new(
            "t",
            curve(&mut rng, 3, 7),
            Velocity::new(0.2, 0.0),
            0.4,
            Stance::Left,
        )
        .unwrap();
        let tr = make_transition(&current, &target, PhaseClock::start(1.0, 0.4)).unwrap();
        assert_eq!(tr.source_tail, current);
        assert_eq!(tr.target_tail, target.curve);
        assert_eq!(tr.blended.eval(0.0).unwrap(), current.eval(0.0).unwrap());
        assert_eq!(
            tr.blended.eval(1.0).unwrap(),
            target.curve.eval(1.0).unwrap()
        );
    }

    #[test]
    fn transition_to_same_curve_continues_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let c = curve(&mut rng, 3, 7);
        let g = Gait::new("g", c.clone(), Velocity::ZERO, 0.4, Stance::Left).unwrap();
        let clock = PhaseClock::new(0.0, 0.1, 0.4, 0.1).unwrap();
        let tr = make_transition(&c, &g, clock).unwrap();
        assert_eq!(tr.blended, splice_tail(&c, 0.25).unwrap());
    }

    #[test]
    fn reblend_from_steady_matches_make_transition() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let c = curve(&mut rng, 3, 7);
        let g = Gait::new(
            "g",
            curve(&mut rng, 3, 7),
            Velocity::ZERO,
            0.4,
            Stance::Left,
        )
        .unwrap();
        let steady =
            TransitionCurve::steady(c.clone(), PhaseClock::start(0.0, 0.4), Velocity::ZERO);
        let a = steady.reblend(&g.curve, g.velocity, 0.1).unwrap();
        let b = make_transition(&c, &g, PhaseClock::new(0.0, 0.1, 0.4, 0.1).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chained_reblend_stays_continuous_in_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let c = curve(&mut rng, 2, 7);
        let g1 = curve(&mut rng, 2, 7);
        let g2 = curve(&mut rng, 2, 7);
        let steady = TransitionCurve::steady(c, PhaseClock::start(0.0, 0.5), Velocity::ZERO);
        let first = steady.reblend(&g1, Velocity::ZERO, 0.1).unwrap();
        let second = first.reblend(&g2, Velocity::ZERO, 0.3).unwrap();
        let mut before = [0.0; 2];
        let mut after = [0.0; 2];
        first
            .position_into(first.clock.tau_hat_at(0.3), &mut before)
            .unwrap();
        second.position_into(0.0, &mut after).unwrap();
        assert!(rel_close(before[0], after[0], 1e-12) && rel_close(before[1], after[1], 1e-12));
        first
            .velocity_into(first.clock.tau_hat_at(0.3), &mut before)
            .unwrap();
        second.velocity_into(0.0, &mut after).unwrap();
        assert!(rel_close(before[0], after[0], 1e-9) && rel_close(before[1], after[1], 1e-9));
    }

    proptest! {
        #[test]
        fn boundary_continuity(seed in any::<u64>(), tau1 in 0.0f64..0.95) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let current = curve(&mut rng, 4, 7);
            let target = Gait::new("t", curve(&mut rng, 4, 7), Velocity::ZERO, 0.4, Stance::Left).unwrap();
            let clock = PhaseClock::new(0.0, tau1 * 0.4, 0.4, tau1 * 0.4).unwrap();
            let tr = make_transition(&current, &target, clock).unwrap();
            for order in 0..=2usize {
                let (b0, s0, b1, t1) = if order == 0 {
                    (tr.blended.eval(0.0).unwrap(), tr.source_tail.eval(0.0).unwrap(),
                     tr.blended.eval(1.0).unwrap(), tr.target_tail.eval(1.0).unwrap())
                } else {
                    (tr.blended.eval_derivative(0.0, order).unwrap(), tr.source_tail.eval_derivative(0.0, order).unwrap(),
                     tr.blended.eval_derivative(1.0, order).unwrap(), tr.target_tail.eval_derivative(1.0, order).unwrap())
                };
                for r in 0..4 {
                    prop_assert!(rel_close(b0[r], s0[r], 1e-9));
                    prop_assert!(rel_close(b1[r], t1[r], 1e-9));
                }
            }
        }

        #[test]
        fn interior_averaging_symmetry(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = curve(&mut rng, 3, 9);
            let b = curve(&mut rng, 3, 9);
            let ab = blend(&a, &b).unwrap();
            let ba = blend(&b, &a).unwrap();
            for j in 3..=6 {
                for r in 0..3 {
                    prop_assert_eq!(ab.coeffs()[(r, j)], ba.coeffs()[(r, j)]);
                    prop_assert_eq!(ab.coeffs()[(r, j)] + ba.coeffs()[(r, j)], a.coeffs()[(r, j)] + b.coeffs()[(r, j)]);
                }
            }
        }

        #[test]
        fn phase_mapping_endpoints(t0 in -100.0f64..100.0, frac in 0.0f64..0.999, period in 0.01f64..5.0) {
            let t1 = t0 + frac * period;
            let clock = PhaseClock { t0, t1, period, t: t1 };
            prop_assume!(t1 < clock.end());
            prop_assert_eq!(clock.tau_hat_at(t1), 0.0);
            prop_assert_eq!(clock.tau_hat_at(t0 + period), 1.0);
            let mid = t1 + 0.5 * clock.remaining();
            prop_assert!(clock.tau_hat_at(mid) > 0.0 && clock.tau_hat_at(mid) < 1.0);
        }
    }
}
