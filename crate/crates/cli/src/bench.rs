//! Batch equivalence probe and throughput timing.

use std::time::Instant;

use gaitlib::engine::tick_batch;
use gaitlib::{
    CommandInput, EngineConfig, EngineError, EngineState, GaitLibrary, ReferenceSample, Stance,
    Velocity,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const TARGET_SAMPLES_PER_SECOND: f64 = 100_000.0;

#[derive(Debug, Serialize)]
pub struct BenchResult {
    pub kind: &'static str,
    pub batch: usize,
    pub samples: usize,
    pub seconds: f64,
    pub samples_per_second: f64,
}

fn random_command(rng: &mut impl Rng, n: usize) -> CommandInput {
    CommandInput {
        v_user: Velocity::new(rng.gen_range(-0.4..0.6), rng.gen_range(-0.3..0.3)),
        heading: rng.gen_range(-0.5..0.5),
        delta_v: Velocity::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)),
        delta_q: if rng.gen_bool(0.5) {
            (0..n).map(|_| rng.gen_range(-0.4..0.4)).collect()
        } else {
            Vec::new()
        },
    }
}

/// Engines scattered over velocity, stance and phase.
pub fn random_states(
    lib: &GaitLibrary,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<EngineState>, EngineError> {
    let n = lib.n_outputs();
    (0..count)
        .map(|_| {
            let config = EngineConfig {
                initial_stance: if rng.gen_bool(0.5) {
                    Stance::Left
                } else {
                    Stance::Right
                },
                ..EngineConfig::default()
            };
            let v0 = Velocity::new(rng.gen_range(-0.3..0.5), rng.gen_range(-0.2..0.2));
            let mut s = EngineState::init(lib, v0, config)?;
            let warmup = rng.gen_range(0..60);
            let mut cmd = random_command(rng, n);
            for _ in 0..warmup {
                if rng.gen_bool(0.1) {
                    cmd = random_command(rng, n);
                }
                s.tick(lib, &cmd)?;
            }
            Ok(s)
        })
        .collect()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

pub fn bitwise_equal(a: &ReferenceSample, b: &ReferenceSample) -> bool {
    a.t.to_bits() == b.t.to_bits()
        && a.step_index == b.step_index
        && a.stance == b.stance
        && a.phase.to_bits() == b.phase.to_bits()
        && a.spliced_phase.to_bits() == b.spliced_phase.to_bits()
        && a.v_target.x.to_bits() == b.v_target.x.to_bits()
        && a.v_target.y.to_bits() == b.v_target.y.to_bits()
        && bits(&a.q_des) == bits(&b.q_des)
        && bits(&a.qdot_des) == bits(&b.qdot_des)
        && bits(&a.q_nominal) == bits(&b.q_nominal)
        && a.flags == b.flags
}

/// Ticks `count` random engines both ways for a few rounds and compares.
pub fn probe(lib: &GaitLibrary, count: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = lib.n_outputs();
    let mut batch = random_states(lib, count, &mut rng).map_err(|e| e.to_string())?;
    let mut seq = batch.clone();
    for round in 0..8 {
        let cmds: Vec<CommandInput> = (0..count).map(|_| random_command(&mut rng, n)).collect();
        let got = tick_batch(&mut batch, lib, &cmds).map_err(|e| e.to_string())?;
        for (i, (s, c)) in seq.iter_mut().zip(&cmds).enumerate() {
            let want = s.tick(lib, c).map_err(|e| e.to_string())?;
            if !bitwise_equal(&want, &got[i]) {
                return Err(format!(
                    "round {round}, state {i}: batch sample differs from sequential"
                ));
            }
        }
    }
    Ok(())
}

fn sweep_command(k: usize) -> CommandInput {
    // slow sweep so the engine keeps re-blending
    let v = 0.25 + 0.2 * (k as f64 * 1e-3).sin();
    CommandInput::velocity(Velocity::new(v, 0.1 * (k as f64 * 7e-4).cos()))
}

pub fn single_thread(lib: &GaitLibrary, samples: usize) -> Result<BenchResult, EngineError> {
    let mut s = EngineState::init(lib, Velocity::ZERO, EngineConfig::default())?;
    let start = Instant::now();
    let mut sink = 0.0;
    for k in 0..samples {
        sink += s.tick(lib, &sweep_command(k))?.q_des[0];
    }
    let seconds = start.elapsed().as_secs_f64();
    std::hint::black_box(sink);
    Ok(BenchResult {
        kind: "single",
        batch: 1,
        samples,
        seconds,
        samples_per_second: samples as f64 / seconds,
    })
}

pub fn batched(
    lib: &GaitLibrary,
    batch: usize,
    samples: usize,
    seed: u64,
) -> Result<BenchResult, EngineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = random_states(lib, batch, &mut rng)?;
    let rounds = samples.div_ceil(batch);
    let start = Instant::now();
    let mut sink = 0.0;
    for k in 0..rounds {
        let cmds = vec![sweep_command(k); batch];
        sink += tick_batch(&mut states, lib, &cmds)?[0].q_des[0];
    }
    let seconds = start.elapsed().as_secs_f64();
    std::hint::black_box(sink);
    let total = rounds * batch;
    Ok(BenchResult {
        kind: "batch",
        batch,
        samples: total,
        seconds,
        samples_per_second: total as f64 / seconds,
    })
}
