//! Piecewise-constant command schedules.
//!
//! CSV layout, one header line then one row per command change:
//!
//! ```text
//! t,v_x,v_y,heading,dv_x,dv_y[,dq0,dq1,...]
//! 0,0.0,0.0,0,0,0
//! 3,0.3,0.1,0,0,0
//! 10,0.3,0.1,0,0,0
//! ```
//!
//! Rows are sorted by strictly increasing `t` and the first row is at `t = 0`.
//! A row is in effect from its `t` until the next row. The `t` of the last row
//! is the script duration. The `dq` columns are optional; when present there
//! must be one per library output.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::engine::CommandInput;
use crate::gait::Velocity;

const FIXED_COLUMNS: [&str; 6] = ["t", "v_x", "v_y", "heading", "dv_x", "dv_y"];

/// Slack applied when matching engine time against row times.
const TIME_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read command script: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed command script: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: {0}")]
    Header(String),
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("command script has no rows")]
    Empty,
}

pub type Result<T, E = ScriptError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub struct ScriptRow {
    pub t: f64,
    pub command: CommandInput,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommandScript {
    rows: Vec<ScriptRow>,
    n_residuals: usize,
}

impl CommandScript {
    pub fn new(rows: Vec<ScriptRow>) -> Result<Self> {
        let first = rows.first().ok_or(ScriptError::Empty)?;
        if first.t != 0.0 {
            return Err(ScriptError::Row {
                row: 1,
                reason: format!("first row must be at t = 0, got {}", first.t),
            });
        }
        let n_residuals = first.command.delta_q.len();
        for (i, r) in rows.iter().enumerate() {
            let row = i + 1;
            if !r.t.is_finite() {
                return Err(ScriptError::Row {
                    row,
                    reason: "t is not finite".into(),
                });
            }
            if i > 0 && !(r.t > rows[i - 1].t) {
                return Err(ScriptError::Row {
                    row,
                    reason: format!("t = {} does not increase", r.t),
                });
            }
            if r.command.delta_q.len() != n_residuals {
                return Err(ScriptError::Row {
                    row,
                    reason: format!(
                        "{} residuals, expected {n_residuals}",
                        r.command.delta_q.len()
                    ),
                });
            }
        }
        Ok(Self { rows, n_residuals })
    }

    /// A single command held for `duration` seconds.
    pub fn constant(command: CommandInput, duration: f64) -> Result<Self> {
        Self::new(vec![
            ScriptRow {
                t: 0.0,
                command: command.clone(),
            },
            ScriptRow {
                t: duration,
                command,
            },
        ])
    }

    pub fn rows(&self) -> &[ScriptRow] {
        &self.rows
    }

    /// Number of `dq` columns (zero when the script carries none).
    pub fn n_residuals(&self) -> usize {
        self.n_residuals
    }

    pub fn duration(&self) -> f64 {
        self.rows[self.rows.len() - 1].t
    }

    /// The command in effect at time `t`.
    pub fn command_at(&self, t: f64) -> &CommandInput {
        let k = self.rows.partition_point(|r| r.t <= t + TIME_SLACK);
        &self.rows[k.saturating_sub(1)].command
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < FIXED_COLUMNS.len()
            || header.iter().zip(FIXED_COLUMNS).any(|(a, b)| a != b)
        {
            return Err(ScriptError::Header(format!(
                "expected columns {} then optional dq0.., got {}",
                FIXED_COLUMNS.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        for (k, name) in header.iter().skip(FIXED_COLUMNS.len()).enumerate() {
            if name != format!("dq{k}") {
                return Err(ScriptError::Header(format!(
                    "column '{name}' should be 'dq{k}'"
                )));
            }
        }
        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let row = i + 1;
            let values: Vec<f64> = record
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| ScriptError::Row {
                            row,
                            reason: format!("'{f}' is not a finite number"),
                        })
                })
                .collect::<Result<_>>()?;
            rows.push(ScriptRow {
                t: values[0],
                command: CommandInput {
                    v_user: Velocity::new(values[1], values[2]),
                    heading: values[3],
                    delta_v: Velocity::new(values[4], values[5]),
                    delta_q: values[6..].to_vec(),
                },
            });
        }
        Self::new(rows)
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let mut header = FIXED_COLUMNS.join(",");
        for k in 0..self.n_residuals {
            header.push_str(&format!(",dq{k}"));
        }
        writeln!(out, "{header}")?;
        for r in &self.rows {
            let c = &r.command;
            write!(
                out,
                "{},{},{},{},{},{}",
                r.t, c.v_user.x, c.v_user.y, c.heading, c.delta_v.x, c.delta_v.y
            )?;
            for d in &c.delta_q {
                write!(out, ",{d}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const STEP: &str = "\
# velocity step at 3 s
t,v_x,v_y,heading,dv_x,dv_y
0,0,0,0,0,0
3,0.3,0.1,0,0,0
10,0.3,0.1,0,0,0
";

    #[test]
    fn parse_and_lookup() {
        let s = CommandScript::from_reader(STEP.as_bytes()).unwrap();
        assert_eq!(s.rows().len(), 3);
        assert_eq!(s.duration(), 10.0);
        assert_eq!(s.n_residuals(), 0);
        assert_eq!(s.command_at(2.98).v_user, Velocity::ZERO);
        assert_eq!(s.command_at(3.0).v_user, Velocity::new(0.3, 0.1));
        // time accumulated as ticks * period may land a hair below the row
        assert_eq!(s.command_at(150.0 * 0.02).v_user, Velocity::new(0.3, 0.1));
        assert_eq!(s.command_at(99.0).v_user, Velocity::new(0.3, 0.1));
    }

    #[test]
    fn residual_columns() {
        let text = "t,v_x,v_y,heading,dv_x,dv_y,dq0,dq1\n0,0,0,0,0,0,0.1,-0.1\n1,0,0,0,0,0,0,0\n";
        let s = CommandScript::from_reader(text.as_bytes()).unwrap();
        assert_eq!(s.n_residuals(), 2);
        assert_eq!(s.command_at(0.5).delta_q, vec![0.1, -0.1]);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(CommandScript::from_reader(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn rejects_bad_scripts() {
        let unsorted = "t,v_x,v_y,heading,dv_x,dv_y\n0,0,0,0,0,0\n2,0,0,0,0,0\n1,0,0,0,0,0\n";
        assert!(matches!(
            CommandScript::from_reader(unsorted.as_bytes()),
            Err(ScriptError::Row { row: 3, .. })
        ));
        let late = "t,v_x,v_y,heading,dv_x,dv_y\n0.5,0,0,0,0,0\n";
        assert!(matches!(
            CommandScript::from_reader(late.as_bytes()),
            Err(ScriptError::Row { row: 1, .. })
        ));
        let header = "time,v_x,v_y,heading,dv_x,dv_y\n0,0,0,0,0,0\n";
        assert!(matches!(
            CommandScript::from_reader(header.as_bytes()),
            Err(ScriptError::Header(_))
        ));
        let junk = "t,v_x,v_y,heading,dv_x,dv_y\n0,abc,0,0,0,0\n";
        assert!(matches!(
            CommandScript::from_reader(junk.as_bytes()),
            Err(ScriptError::Row { .. })
        ));
        let empty = "t,v_x,v_y,heading,dv_x,dv_y\n";
        assert!(matches!(
            CommandScript::from_reader(empty.as_bytes()),
            Err(ScriptError::Empty)
        ));
        let ragged = "t,v_x,v_y,heading,dv_x,dv_y\n0,0,0,0,0\n";
        assert!(CommandScript::from_reader(ragged.as_bytes()).is_err());
    }
}
