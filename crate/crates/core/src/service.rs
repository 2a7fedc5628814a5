//! Line-delimited request/response server.
//!
//! One client at a time, one engine tick per request. The client opens with
//! a handshake, then sends requests; each gets exactly one reply line.
//!
//! ```text
//! > HELLO gaitref/1
//! < HELLO gaitref/1 n_outputs=10
//! > REQ 0.02 0.3 0 0 0 0
//! < SAMPLE 0.02 0 0 L 0 0 0.3 0 0 <q_des x10> <qdot_des x10> <q_nominal x10>
//! > REQ oops
//! < ERR parse field 2 'oops' is not a number
//! ```
//!
//! Request fields: `REQ timestamp v_x v_y heading dv_x dv_y [dq0 .. dq(n-1)]`.
//! The `dq` block is either absent or complete.
//!
//! Response fields: `SAMPLE timestamp t step_index stance phase spliced_phase
//! v_target_x v_target_y flags`, then the three joint vectors. `timestamp` is
//! echoed from the request; `t` is engine time. `flags` is a bit set
//! (1 = residual saturated, 2 = impact mismatch).
//!
//! Errors are `ERR <category> <message>` with category one of `handshake`,
//! `version`, `parse`, `arity`, `command`. A `version` or `handshake` error
//! closes the connection; the others keep it open. When the client
//! disconnects the engine is reset to standing still.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};

use thiserror::Error;

use crate::engine::{
    CommandInput, EngineConfig, EngineError, EngineState, ReferenceSample, SampleFlags,
};
use crate::gait::{GaitLibrary, Stance, Velocity};

pub const PROTOCOL: &str = "gaitref/1";

const REQUEST_FIXED: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("expected 'HELLO {PROTOCOL}', got '{0}'")]
    Handshake(String),
    #[error("unsupported protocol '{0}', server speaks {PROTOCOL}")]
    Version(String),
    #[error("field {field} '{text}' is not a number")]
    Parse { field: usize, text: String },
    #[error("{0}")]
    Arity(String),
    #[error(transparent)]
    Command(#[from] EngineError),
}

impl ProtocolError {
    pub fn category(&self) -> &'static str {
        match self {
            ProtocolError::Handshake(_) => "handshake",
            ProtocolError::Version(_) => "version",
            ProtocolError::Parse { .. } => "parse",
            ProtocolError::Arity(_) => "arity",
            ProtocolError::Command(_) => "command",
        }
    }

    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            ProtocolError::Handshake(_) | ProtocolError::Version(_)
        )
    }

    pub fn to_line(&self) -> String {
        // messages stay on one line
        format!(
            "ERR {} {}",
            self.category(),
            self.to_string().replace('\n', " ")
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    pub timestamp: f64,
    pub command: CommandInput,
}

fn number(field: usize, text: &str) -> Result<f64, ProtocolError> {
    text.parse::<f64>().map_err(|_| ProtocolError::Parse {
        field,
        text: text.to_string(),
    })
}

pub fn format_request(req: &Request) -> String {
    let c = &req.command;
    let mut line = format!(
        "REQ {} {} {} {} {} {}",
        req.timestamp, c.v_user.x, c.v_user.y, c.heading, c.delta_v.x, c.delta_v.y
    );
    for d in &c.delta_q {
        line.push_str(&format!(" {d}"));
    }
    line
}

pub fn parse_request(line: &str, n_outputs: usize) -> Result<Request, ProtocolError> {
    let mut parts = line.split_whitespace();
    match parts.next() {
        Some("REQ") => {}
        Some(other) => return Err(ProtocolError::Arity(format!("unknown message '{other}'"))),
        None => return Err(ProtocolError::Arity("empty line".into())),
    }
    let fields: Vec<&str> = parts.collect();
    if fields.len() != REQUEST_FIXED && fields.len() != REQUEST_FIXED + n_outputs {
        return Err(ProtocolError::Arity(format!(
            "REQ takes {REQUEST_FIXED} or {} fields, got {}",
            REQUEST_FIXED + n_outputs,
            fields.len()
        )));
    }
    let values = fields
        .iter()
        .enumerate()
        .map(|(i, f)| number(i + 1, f))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Request {
        timestamp: values[0],
        command: CommandInput {
            v_user: Velocity::new(values[1], values[2]),
            heading: values[3],
            delta_v: Velocity::new(values[4], values[5]),
            delta_q: values[REQUEST_FIXED..].to_vec(),
        },
    })
}

pub fn format_sample(timestamp: f64, s: &ReferenceSample) -> String {
    let mut line = format!(
        "SAMPLE {} {} {} {} {} {} {} {} {}",
        timestamp,
        s.t,
        s.step_index,
        s.stance.as_char(),
        s.phase,
        s.spliced_phase,
        s.v_target.x,
        s.v_target.y,
        s.flags.bits()
    );
    for x in s.q_des.iter().chain(&s.qdot_des).chain(&s.q_nominal) {
        line.push_str(&format!(" {x}"));
    }
    line
}

/// Inverse of [`format_sample`]; returns the echoed timestamp and the sample.
pub fn parse_sample(line: &str, n_outputs: usize) -> Result<(f64, ReferenceSample), ProtocolError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.first() != Some(&"SAMPLE") || fields.len() != 10 + 3 * n_outputs {
        return Err(ProtocolError::Arity(format!(
            "expected SAMPLE with {} fields",
            9 + 3 * n_outputs
        )));
    }
    let f = |i: usize| number(i, fields[i]);
    let step_index = fields[3].parse::<u64>().map_err(|_| ProtocolError::Parse {
        field: 3,
        text: fields[3].into(),
    })?;
    let stance = match fields[4] {
        "L" => Stance::Left,
        "R" => Stance::Right,
        other => {
            return Err(ProtocolError::Parse {
                field: 4,
                text: other.into(),
            })
        }
    };
    let bits = fields[9].parse::<u8>().map_err(|_| ProtocolError::Parse {
        field: 9,
        text: fields[9].into(),
    })?;
    let block = |k: usize| -> Result<Vec<f64>, ProtocolError> {
        (0..n_outputs).map(|i| f(10 + k * n_outputs + i)).collect()
    };
    Ok((
        f(1)?,
        ReferenceSample {
            t: f(2)?,
            step_index,
            stance,
            phase: f(5)?,
            spliced_phase: f(6)?,
            v_target: Velocity::new(f(7)?, f(8)?),
            q_des: block(0)?,
            qdot_des: block(1)?,
            q_nominal: block(2)?,
            flags: SampleFlags::from_bits(bits),
        },
    ))
}

pub fn check_hello(line: &str) -> Result<(), ProtocolError> {
    let mut parts = line.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some("HELLO"), Some(PROTOCOL), None) => Ok(()),
        (Some("HELLO"), Some(v), None) => Err(ProtocolError::Version(v.to_string())),
        _ => Err(ProtocolError::Handshake(line.trim().to_string())),
    }
}

/// Per-connection protocol state around an engine.
pub struct Session<'a> {
    lib: &'a GaitLibrary,
    engine: EngineState,
    greeted: bool,
}

pub enum Reply {
    Line(String),
    /// Send the line, then close the connection.
    Close(String),
}

impl<'a> Session<'a> {
    pub fn new(lib: &'a GaitLibrary, config: EngineConfig) -> Result<Self, EngineError> {
        Ok(Self {
            lib,
            engine: EngineState::init(lib, Velocity::ZERO, config)?,
            greeted: false,
        })
    }

    pub fn engine(&self) -> &EngineState {
        &self.engine
    }

    /// Back to standing still with no client attached.
    pub fn reset(&mut self) {
        let config = self.engine.config;
        self.engine = EngineState::init(self.lib, Velocity::ZERO, config)
            .expect("initial state was constructible");
        self.greeted = false;
    }

    pub fn handle(&mut self, line: &str) -> Reply {
        if !self.greeted {
            return match check_hello(line) {
                Ok(()) => {
                    self.greeted = true;
                    Reply::Line(format!(
                        "HELLO {PROTOCOL} n_outputs={}",
                        self.lib.n_outputs()
                    ))
                }
                Err(e) => Reply::Close(e.to_line()),
            };
        }
        let result = parse_request(line, self.lib.n_outputs()).and_then(|req| {
            let s = self.engine.tick(self.lib, &req.command)?;
            Ok(format_sample(req.timestamp, &s))
        });
        match result {
            Ok(l) => Reply::Line(l),
            Err(e) => Reply::Line(e.to_line()),
        }
    }

    /// Serves one connection until EOF or a fatal protocol error.
    pub fn run(&mut self, reader: impl BufRead, mut writer: impl Write) -> std::io::Result<()> {
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match self.handle(&line) {
                Reply::Line(l) => writeln!(writer, "{l}")?,
                Reply::Close(l) => {
                    writeln!(writer, "{l}")?;
                    writer.flush()?;
                    return Ok(());
                }
            }
            writer.flush()?;
        }
        Ok(())
    }
}

/// Accepts clients one after another; `max_clients` bounds the loop.
pub fn serve(
    listener: TcpListener,
    lib: &GaitLibrary,
    config: EngineConfig,
    max_clients: Option<usize>,
) -> std::io::Result<()> {
    let mut session = Session::new(lib, config)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    for (served, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        let peer = stream.peer_addr().ok();
        log::info!("client connected: {peer:?}");
        if let Err(e) = serve_stream(&mut session, stream) {
            log::warn!("connection error: {e}");
        }
        session.reset();
        log::info!("client disconnected, engine reset");
        if max_clients.is_some_and(|m| served + 1 >= m) {
            break;
        }
    }
    Ok(())
}

fn serve_stream(session: &mut Session, stream: TcpStream) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    session.run(reader, stream)
}
