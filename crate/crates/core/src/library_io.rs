//! Gait library files.
//!
//! Libraries are stored as JSON documents (schema in `docs/library-format.md`).
//! Numbers are written in shortest round-trip form and parsed with correct
//! rounding, so `save` after `load` reproduces every coefficient bit for bit.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bezier::{BezierCurve, MAX_DEGREE};
use crate::gait::{Gait, GaitError, GaitLibrary, LibraryMetadata, MirrorMap, Stance, Velocity};

pub const FORMAT_VERSION: u32 = 1;

/// Impact residuals above this are reported as warnings by [`validate`].
pub const IMPACT_WARNING_THRESHOLD: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("schema violation: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("unsupported format_version {found} (this build reads {FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("gait '{gait}': {field} has size {found}, expected {expected}")]
    Dimension {
        gait: String,
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("gait '{gait}': {field}: {reason}")]
    InvalidValue {
        gait: String,
        field: &'static str,
        reason: String,
    },
    #[error("gaits '{first}' and '{second}' share velocity {velocity}")]
    DuplicateVelocity {
        first: String,
        second: String,
        velocity: Velocity,
    },
    #[error("mirror map is not an involution at output {index}")]
    MirrorNotInvolution { index: usize },
    #[error("invalid mirror map: {0}")]
    InvalidMirror(String),
    #[error("import table {source_name}, line {line}: {reason}")]
    Table {
        source_name: String,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Library(GaitError),
}

impl LibraryError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            LibraryError::Io { .. } => "io",
            LibraryError::Schema(_) => "schema",
            LibraryError::UnsupportedVersion { .. } => "version",
            LibraryError::Dimension { .. } => "dimension",
            LibraryError::InvalidValue { .. } => "value",
            LibraryError::DuplicateVelocity { .. } => "duplicate-velocity",
            LibraryError::MirrorNotInvolution { .. } => "mirror-involution",
            LibraryError::InvalidMirror(_) => "mirror",
            LibraryError::Table { .. } => "import-table",
            LibraryError::Library(_) => "library",
        }
    }
}

impl From<GaitError> for LibraryError {
    fn from(e: GaitError) -> Self {
        match e {
            GaitError::DimensionMismatch {
                gait,
                field,
                expected,
                found,
            } => LibraryError::Dimension {
                gait,
                field,
                expected,
                found,
            },
            GaitError::DuplicateVelocity {
                first,
                second,
                velocity,
            } => LibraryError::DuplicateVelocity {
                first,
                second,
                velocity,
            },
            GaitError::MirrorNotInvolution { index } => LibraryError::MirrorNotInvolution { index },
            GaitError::InvalidMirror(m) => LibraryError::InvalidMirror(m),
            GaitError::InvalidStepDuration { gait, value } => LibraryError::InvalidValue {
                gait,
                field: "step_duration",
                reason: format!("must be positive and finite, got {value}"),
            },
            GaitError::NonFiniteVelocity { gait } => LibraryError::InvalidValue {
                gait,
                field: "velocity",
                reason: "not finite".into(),
            },
            other => LibraryError::Library(other),
        }
    }
}

pub type Result<T, E = LibraryError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MirrorRecord {
    pub permutation: Vec<usize>,
    pub signs: Vec<i8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaitRecord {
    pub name: String,
    pub v_x: f64,
    pub v_y: f64,
    pub step_duration: f64,
    /// Row-major `n_outputs x (degree + 1)`.
    pub coeffs: Vec<f64>,
}

/// On-disk library document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryFile {
    pub format_version: u32,
    pub n_outputs: usize,
    pub degree: usize,
    pub mirror: MirrorRecord,
    #[serde(default)]
    pub metadata: LibraryMetadata,
    pub gaits: Vec<GaitRecord>,
}

impl LibraryFile {
    pub fn from_library(lib: &GaitLibrary) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            n_outputs: lib.n_outputs(),
            degree: lib.degree(),
            mirror: MirrorRecord {
                permutation: lib.mirror().permutation().to_vec(),
                signs: lib.mirror().signs().iter().map(|s| *s as i8).collect(),
            },
            metadata: lib.metadata().clone(),
            gaits: lib
                .gaits()
                .iter()
                .map(|g| GaitRecord {
                    name: g.name.clone(),
                    v_x: g.velocity.x,
                    v_y: g.velocity.y,
                    step_duration: g.step_duration,
                    coeffs: g.curve.to_row_major(),
                })
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("library documents always serialize");
        s.push('\n');
        s
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LibraryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| LibraryError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn mirror_map(&self) -> Result<MirrorMap> {
        let signs = self.mirror.signs.iter().map(|s| f64::from(*s)).collect();
        Ok(MirrorMap::new(self.mirror.permutation.clone(), signs)?)
    }

    /// Checks every structural invariant and builds the library.
    pub fn to_library(&self) -> Result<GaitLibrary> {
        if self.format_version != FORMAT_VERSION {
            return Err(LibraryError::UnsupportedVersion {
                found: self.format_version,
            });
        }
        if self.n_outputs == 0 {
            return Err(LibraryError::InvalidValue {
                gait: String::new(),
                field: "n_outputs",
                reason: "must be at least 1".into(),
            });
        }
        if self.degree == 0 || self.degree > MAX_DEGREE {
            return Err(LibraryError::InvalidValue {
                gait: String::new(),
                field: "degree",
                reason: format!("must lie in 1..={MAX_DEGREE}, got {}", self.degree),
            });
        }
        if self.mirror.permutation.len() != self.n_outputs {
            return Err(LibraryError::Dimension {
                gait: String::new(),
                field: "mirror.permutation",
                expected: self.n_outputs,
                found: self.mirror.permutation.len(),
            });
        }
        let mirror = self.mirror_map()?;
        let gaits = self
            .gaits
            .iter()
            .map(|r| self.gait(r))
            .collect::<Result<Vec<_>>>()?;
        Ok(GaitLibrary::new(gaits, mirror, self.metadata.clone())?)
    }

    fn gait(&self, r: &GaitRecord) -> Result<Gait> {
        let expected = self.n_outputs * (self.degree + 1);
        if r.coeffs.len() != expected {
            return Err(LibraryError::Dimension {
                gait: r.name.clone(),
                field: "coeffs",
                expected,
                found: r.coeffs.len(),
            });
        }
        let curve =
            BezierCurve::from_row_major(self.n_outputs, self.degree, &r.coeffs).map_err(|e| {
                LibraryError::InvalidValue {
                    gait: r.name.clone(),
                    field: "coeffs",
                    reason: e.to_string(),
                }
            })?;
        Ok(Gait::new(
            r.name.clone(),
            curve,
            Velocity::new(r.v_x, r.v_y),
            r.step_duration,
            Stance::Left,
        )?)
    }
}

pub fn load(path: impl AsRef<Path>) -> Result<GaitLibrary> {
    LibraryFile::read(path)?.to_library()
}

pub fn save(lib: &GaitLibrary, path: impl AsRef<Path>) -> Result<()> {
    LibraryFile::from_library(lib).write(path)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaitImpact {
    pub name: String,
    /// `max_i |mirror(q(1))_i - q(0)_i|` in rad.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoefficientStats {
    pub min: f64,
    pub max: f64,
    pub mean_abs: f64,
}

/// Machine-readable library health report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    /// `true` when no hard invariant is violated.
    pub ok: bool,
    pub hard_failures: Vec<String>,
    pub warnings: Vec<String>,
    pub n_gaits: usize,
    pub n_outputs: usize,
    pub degree: usize,
    pub hull_area: f64,
    pub min_triangle_angle_deg: Option<f64>,
    pub max_impact_residual: f64,
    pub impact: Vec<GaitImpact>,
    pub coefficients: Option<CoefficientStats>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}: {} gaits, {} outputs, degree {}",
            if self.ok { "valid" } else { "INVALID" },
            self.n_gaits,
            self.n_outputs,
            self.degree
        )?;
        writeln!(f, "hull area: {:.6} (m/s)^2", self.hull_area)?;
        if let Some(a) = self.min_triangle_angle_deg {
            writeln!(f, "min triangle angle: {a:.2} deg")?;
        }
        writeln!(
            f,
            "max impact residual: {:.3e} rad",
            self.max_impact_residual
        )?;
        if let Some(c) = &self.coefficients {
            writeln!(
                f,
                "coefficients: min {:.4} max {:.4} mean|.| {:.4}",
                c.min, c.max, c.mean_abs
            )?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        for e in &self.hard_failures {
            writeln!(f, "error: {e}")?;
        }
        Ok(())
    }
}

/// Reports on a library document. Never fails; hard invariant violations
/// are listed in `hard_failures`.
pub fn validate(file: &LibraryFile) -> ValidationReport {
    let all: Vec<f64> = file
        .gaits
        .iter()
        .flat_map(|g| g.coeffs.iter().copied())
        .collect();
    let coefficients = (!all.is_empty()).then(|| CoefficientStats {
        min: all.iter().copied().fold(f64::INFINITY, f64::min),
        max: all.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_abs: all.iter().map(|v| v.abs()).sum::<f64>() / all.len() as f64,
    });
    let mut report = ValidationReport {
        ok: true,
        hard_failures: Vec::new(),
        warnings: Vec::new(),
        n_gaits: file.gaits.len(),
        n_outputs: file.n_outputs,
        degree: file.degree,
        hull_area: 0.0,
        min_triangle_angle_deg: None,
        max_impact_residual: 0.0,
        impact: Vec::new(),
        coefficients,
    };
    let lib = match file.to_library() {
        Ok(lib) => lib,
        Err(e) => {
            report.ok = false;
            report.hard_failures.push(format!("[{}] {e}", e.kind()));
            return report;
        }
    };
    report.warnings.extend(lib.warnings().iter().cloned());
    report.hull_area = lib.hull_area();
    report.min_triangle_angle_deg = lib.min_triangle_angle().map(f64::to_degrees);
    for g in lib.gaits() {
        let start = g.curve.coeffs().column(0);
        let end: Vec<f64> = g
            .curve
            .coeffs()
            .column(lib.degree())
            .iter()
            .copied()
            .collect();
        let mirrored_end = lib.mirror().apply_pose(&end);
        let residual = mirrored_end
            .iter()
            .zip(start.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual > IMPACT_WARNING_THRESHOLD {
            report.warnings.push(format!(
                "gait '{}': mirrored end pose differs from start pose by {residual:.3e} rad",
                g.name
            ));
        }
        report.max_impact_residual = report.max_impact_residual.max(residual);
        report.impact.push(GaitImpact {
            name: g.name.clone(),
            residual,
        });
    }
    report
}

/// Reads a single-gait table:
///
/// ```text
/// # comments start with '#'
/// name = walk_0.2
/// v_x = 0.2
/// v_y = 0.0
/// step_duration = 0.4
/// 0.10 0.12 0.15 ...     <- one row per output, degree + 1 numbers each
/// ```
///
/// Numbers in a row may be separated by whitespace or commas. `name`
/// defaults to `default_name`.
pub fn import_table(text: &str, default_name: &str) -> Result<Gait> {
    let err = |line: usize, reason: String| LibraryError::Table {
        source_name: default_name.to_string(),
        line,
        reason,
    };
    let mut name = default_name.to_string();
    let (mut v_x, mut v_y, mut duration) = (None, None, None);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some((key, value)) = line.split_once('=') {
            if !rows.is_empty() {
                return Err(err(line_no, "header field after coefficient rows".into()));
            }
            let (key, value) = (key.trim(), value.trim());
            let number = || {
                value
                    .parse::<f64>()
                    .map_err(|_| err(line_no, format!("{key}: '{value}' is not a number")))
            };
            match key {
                "name" => name = value.to_string(),
                "v_x" => v_x = Some(number()?),
                "v_y" => v_y = Some(number()?),
                "step_duration" => duration = Some(number()?),
                other => return Err(err(line_no, format!("unknown header field '{other}'"))),
            }
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| err(line_no, format!("'{f}' is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(err(
                    line_no,
                    format!("row has {} values, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    let missing = |f: &str| err(0, format!("missing header field '{f}'"));
    let v_x = v_x.ok_or_else(|| missing("v_x"))?;
    let v_y = v_y.ok_or_else(|| missing("v_y"))?;
    let duration = duration.ok_or_else(|| missing("step_duration"))?;
    if rows.is_empty() {
        return Err(err(0, "no coefficient rows".into()));
    }
    let degree = rows[0].len().saturating_sub(1);
    let flat: Vec<f64> = rows.concat();
    let curve = BezierCurve::from_row_major(rows.len(), degree, &flat).map_err(|e| {
        LibraryError::InvalidValue {
            gait: name.clone(),
            field: "coeffs",
            reason: e.to_string(),
        }
    })?;
    Ok(Gait::new(
        name,
        curve,
        Velocity::new(v_x, v_y),
        duration,
        Stance::Left,
    )?)
}

/// Builds a library from table files.
pub fn import_tables(
    paths: &[PathBuf],
    mirror: MirrorMap,
    metadata: LibraryMetadata,
) -> Result<GaitLibrary> {
    let gaits = paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|source| LibraryError::Io {
                path: p.clone(),
                source,
            })?;
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            import_table(&text, &stem)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GaitLibrary::new(gaits, mirror, metadata)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_file() -> LibraryFile {
        let gait = |name: &str, v_x: f64, v_y: f64| GaitRecord {
            name: name.into(),
            v_x,
            v_y,
            step_duration: 0.4,
            coeffs: (0..6).map(|k| 0.1 * k as f64 + v_x).collect(),
        };
        LibraryFile {
            format_version: FORMAT_VERSION,
            n_outputs: 2,
            degree: 2,
            mirror: MirrorRecord {
                permutation: vec![1, 0],
                signs: vec![1, 1],
            },
            metadata: LibraryMetadata {
                robot_name: "test".into(),
                n_l: 14,
                n_e: 41,
                ..Default::default()
            },
            gaits: vec![
                gait("a", 0.0, 0.0),
                gait("b", 0.3, 0.0),
                gait("c", 0.0, 0.2),
            ],
        }
    }

    #[test]
    fn round_trip_through_text() {
        let f = small_file();
        let lib = f.to_library().unwrap();
        let text = LibraryFile::from_library(&lib).to_json();
        let back = LibraryFile::from_json(&text).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn metadata_extra_fields_survive() {
        let mut f = small_file();
        f.metadata
            .extra
            .insert("solver".into(), serde_json::json!({"tol": 1e-6}));
        let text = f.to_json();
        assert_eq!(LibraryFile::from_json(&text).unwrap(), f);
    }

    #[test]
    fn distinct_error_kinds() {
        let mut f = small_file();
        f.gaits[1].v_x = 0.0;
        match f.to_library() {
            Err(LibraryError::DuplicateVelocity { first, second, .. }) => {
                assert_eq!((first.as_str(), second.as_str()), ("a", "b"));
            }
            other => panic!("{other:?}"),
        }

        let mut f = small_file();
        f.gaits[2].coeffs.pop();
        let e = f.to_library().unwrap_err();
        assert_eq!(e.kind(), "dimension");
        assert!(e.to_string().contains("'c'"));

        let mut f = small_file();
        f.mirror.signs = vec![1, -1];
        assert_eq!(f.to_library().unwrap_err().kind(), "mirror-involution");

        let mut f = small_file();
        f.format_version = 7;
        assert_eq!(f.to_library().unwrap_err().kind(), "version");

        let mut f = small_file();
        f.gaits[0].step_duration = 0.0;
        let e = f.to_library().unwrap_err();
        assert_eq!(e.kind(), "value");
        assert!(e.to_string().contains("step_duration"));

        let e = LibraryFile::from_json("{\"format_version\": 1}").unwrap_err();
        assert_eq!(e.kind(), "schema");
        let e = LibraryFile::from_json("not json").unwrap_err();
        assert_eq!(e.kind(), "schema");
    }

    #[test]
    fn validation_report() {
        let report = validate(&small_file());
        assert!(report.ok, "{report}");
        assert!((report.hull_area - 0.03).abs() < 1e-12);
        assert_eq!(report.impact.len(), 3);

        let mut bad = small_file();
        bad.gaits[1].step_duration = 0.0;
        let report = validate(&bad);
        assert!(!report.ok);
        assert_eq!(report.hard_failures.len(), 1);

        let mut single = small_file();
        single.gaits.truncate(1);
        let report = validate(&single);
        assert!(report.ok);
        assert!(report
            .warnings
            .iter()
            .any(|w| w.contains("no 2-D interpolation")));
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["ok"], serde_json::Value::Bool(true));
    }

    #[test]
    fn table_import() {
        let text = "\
# exported gait
name = fwd
v_x = 0.25
v_y = -0.05
step_duration = 0.35
0.0, 0.1, 0.2
1.0  1.1  1.2
";
        let g = import_table(text, "file").unwrap();
        assert_eq!(g.name, "fwd");
        assert_eq!(g.velocity, Velocity::new(0.25, -0.05));
        assert_eq!(g.step_duration, 0.35);
        assert_eq!(g.curve.to_row_major(), vec![0.0, 0.1, 0.2, 1.0, 1.1, 1.2]);

        let ragged = "v_x = 0\nv_y = 0\nstep_duration = 0.4\n0 1 2\n0 1\n";
        assert!(matches!(
            import_table(ragged, "r"),
            Err(LibraryError::Table { line: 5, .. })
        ));
        let missing = "v_x = 0\nstep_duration = 0.4\n0 1 2\n";
        assert!(matches!(
            import_table(missing, "m"),
            Err(LibraryError::Table { .. })
        ));
        let unnamed = "v_x = 0\nv_y = 0\nstep_duration = 0.4\n0 1\n";
        assert_eq!(import_table(unnamed, "stem").unwrap().name, "stem");
    }

    #[test]
    fn import_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        for (i, (vx, vy)) in [(0.0, 0.0), (0.2, 0.0), (0.0, 0.1)].iter().enumerate() {
            let p = dir.path().join(format!("g{i}.txt"));
            std::fs::write(
                &p,
                format!("v_x = {vx}\nv_y = {vy}\nstep_duration = 0.4\n0 1 2 3 4 5 6 7\n"),
            )
            .unwrap();
            paths.push(p);
        }
        let lib =
            import_tables(&paths, MirrorMap::identity(1), LibraryMetadata::default()).unwrap();
        assert_eq!(lib.len(), 3);
        assert_eq!(lib.gaits()[1].name, "g1");
        let out = dir.path().join("lib.json");
        save(&lib, &out).unwrap();
        assert_eq!(
            LibraryFile::from_library(&load(&out).unwrap()),
            LibraryFile::from_library(&lib)
        );
    }

    proptest! {
        #[test]
        fn coefficients_round_trip_bitwise(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 6)) {
            let mut f = small_file();
            f.gaits[0].coeffs = values.clone();
            let back = LibraryFile::from_json(&f.to_json()).unwrap();
            for (a, b) in back.gaits[0].coeffs.iter().zip(&values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
