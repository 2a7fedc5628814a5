//! Open-loop streaming runs and the trace CSV format.
//!
//! Columns, in order: `t, step_index, stance, phase, v_target_x, v_target_y`,
//! then `q_des0..`, `qdot_des0..`, `q_nominal0..`, one per library output.
//! Stance is written as `L` or `R`. Floats use the shortest representation
//! that parses back to the same value.

use std::io::Write;

use crate::engine::{EngineState, ReferenceSample, Result};
use crate::gait::GaitLibrary;
use crate::script::CommandScript;

/// Number of ticks needed to cover `duration` at `tick_period`.
pub fn tick_count(duration: f64, tick_period: f64) -> u64 {
    (duration / tick_period).round() as u64
}

/// Ticks the engine through `script`, one sample per tick.
pub fn run_script(
    engine: &mut EngineState,
    lib: &GaitLibrary,
    script: &CommandScript,
    duration: f64,
) -> Result<Vec<ReferenceSample>> {
    let ticks = tick_count(duration, engine.config.tick_period);
    (0..ticks)
        .map(|_| {
            let cmd = script.command_at(engine.time());
            engine.tick(lib, cmd)
        })
        .collect()
}

pub fn trace_header(n_outputs: usize) -> String {
    let mut cols: Vec<String> = [
        "t",
        "step_index",
        "stance",
        "phase",
        "v_target_x",
        "v_target_y",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for prefix in ["q_des", "qdot_des", "q_nominal"] {
        cols.extend((0..n_outputs).map(|i| format!("{prefix}{i}")));
    }
    cols.join(",")
}

pub fn write_trace_row(mut out: impl Write, s: &ReferenceSample) -> std::io::Result<()> {
    write!(
        out,
        "{},{},{},{},{},{}",
        s.t,
        s.step_index,
        s.stance.as_char(),
        s.phase,
        s.v_target.x,
        s.v_target.y
    )?;
    for x in s.q_des.iter().chain(&s.qdot_des).chain(&s.q_nominal) {
        write!(out, ",{x}")?;
    }
    writeln!(out)
}

pub fn write_trace(
    mut out: impl Write,
    n_outputs: usize,
    samples: &[ReferenceSample],
) -> std::io::Result<()> {
    writeln!(out, "{}", trace_header(n_outputs))?;
    for s in samples {
        write_trace_row(&mut out, s)?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{CommandInput, EngineConfig};
    use crate::gait::Velocity;
    use crate::synthetic::{generate_synthetic, SyntheticSpec};

    #[test]
    fn header_layout() {
        let h = trace_header(2);
        assert_eq!(
            h,
            "t,step_index,stance,phase,v_target_x,v_target_y,q_des0,q_des1,qdot_des0,qdot_des1,q_nominal0,q_nominal1"
        );
    }

    #[test]
    fn rows_match_header_and_parse_back() {
        let lib = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let mut engine = EngineState::init(&lib, Velocity::ZERO, EngineConfig::default()).unwrap();
        let script =
            CommandScript::constant(CommandInput::velocity(Velocity::new(0.1, 0.0)), 1.0).unwrap();
        let samples = run_script(&mut engine, &lib, &script, script.duration()).unwrap();
        assert_eq!(samples.len(), 50);
        let mut buf = Vec::new();
        write_trace(&mut buf, lib.n_outputs(), &samples).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 51);
        let width = lines[0].split(',').count();
        assert_eq!(width, 6 + 3 * lib.n_outputs());
        for (line, s) in lines[1..].iter().zip(&samples) {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f.len(), width);
            assert_eq!(f[0].parse::<f64>().unwrap(), s.t);
            assert_eq!(f[6].parse::<f64>().unwrap().to_bits(), s.q_des[0].to_bits());
        }
    }
}
