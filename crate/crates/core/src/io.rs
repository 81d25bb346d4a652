//! Configuration files and on-disk formats.
//!
//! Snapshots are stored as a 64-byte ASCII header `SAVF1 <nx> <ny> <t> <step>` padded with
//! spaces and terminated by a newline, followed by `nx·ny` little-endian `f64` values in
//! row-major order (`x` fastest). Domain lengths and display scaling live in a `.txt` sidecar.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{ConvergenceRow, InitialCondition, RunConfig, ScheduleSpec, Snapshot};
use crate::integrator::{NewtonPolicy, RatioPolicy, StepOptions, StepRecord};
use crate::model::{potential_by_name, Flow, SchemeParams, VKind};
use crate::spectral::{Field, Grid};

pub const SCHEMA_VERSION: u32 = 1;
pub const SNAPSHOT_HEADER_LEN: usize = 64;
const SNAPSHOT_MAGIC: &str = "SAVF1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "two_pi")]
    pub lx: f64,
    #[serde(default = "two_pi")]
    pub ly: f64,
}

fn two_pi() -> f64 {
    2.0 * std::f64::consts::PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub eps2: f64,
    pub lambda: f64,
    pub c0: f64,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default = "default_v")]
    pub v: VKind,
    pub flow: Flow,
    #[serde(default = "default_potential")]
    pub potential: String,
    #[serde(default)]
    pub dealias: bool,
}

fn one() -> f64 {
    1.0
}

fn default_v() -> VKind {
    VKind::Linear
}

fn default_potential() -> String {
    "double-well".to_string()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default)]
    pub newton: NewtonPolicy,
    #[serde(default)]
    pub ratio_policy: RatioPolicy,
    #[serde(default)]
    pub parallel_solves: bool,
    /// First step size; the schedule ramps geometrically back onto its own grid.
    #[serde(default)]
    pub startup_dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "one_usize")]
    pub record_every: usize,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

fn one_usize() -> usize {
    1
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            record_every: 1,
            snapshot_times: Vec::new(),
        }
    }
}

/// JSON run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    pub grid: GridSection,
    pub model: ModelSection,
    pub initial: InitialCondition,
    pub schedule: ScheduleSpec,
    pub t_end: f64,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ConfigFile {
    pub fn from_json(text: &str, origin: &Path) -> Result<ConfigFile> {
        let cfg: ConfigFile = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!(
                "{}: line {}, column {}: {}",
                origin.display(),
                e.line(),
                e.column(),
                e
            ))
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported schema_version {} (expected {SCHEMA_VERSION})",
                origin.display(),
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ConfigFile::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    /// Replaces the seed of a random initial field and of a perturbed schedule.
    pub fn override_seed(&mut self, seed: u64) {
        if let InitialCondition::SeededRandom { seed: s, .. } = &mut self.initial {
            *s = seed;
        }
        if let ScheduleSpec::Perturbed { seed: s, .. } = &mut self.schedule {
            *s = seed;
        }
    }

    pub fn to_run_config(&self) -> Result<RunConfig> {
        let grid = Grid::new(self.grid.nx, self.grid.ny, self.grid.lx, self.grid.ly)?;
        let m = &self.model;
        let params = SchemeParams::with_potential(
            m.eps2,
            m.lambda,
            m.c0,
            m.sigma,
            m.v,
            m.flow,
            potential_by_name(&m.potential)?,
        )?
        .with_dealiasing(m.dealias);
        let mut cfg = RunConfig::new(
            params,
            grid,
            self.initial.clone(),
            self.schedule.clone(),
            self.t_end,
        );
        cfg.step = StepOptions {
            newton: self.solver.newton,
            ratio_policy: self.solver.ratio_policy,
            parallel_solves: self.solver.parallel_solves,
        };
        cfg.startup_dt = self.solver.startup_dt;
        cfg.record_every = self.output.record_every;
        cfg.snapshot_times = self.output.snapshot_times.clone();
        cfg.validate()?;
        cfg.schedule.build(cfg.t_end)?;
        Ok(cfg)
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

/// Header: `step,t,dt,gamma,xi,r,energy,modified_energy,discrete_energy_H,newton_residual,mass,h2_seminorm`.
pub fn write_records_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    if let Some(r) = records.iter().find(|r| !record_is_finite(r)) {
        return Err(Error::NonFinite { step: r.step });
    }
    write_rows(path, records)
}

fn record_is_finite(r: &StepRecord) -> bool {
    [
        r.t_np1,
        r.dt_np1,
        r.gamma_np1,
        r.xi,
        r.r,
        r.energy,
        r.modified_energy,
        r.discrete_energy_h,
        r.newton_residual,
        r.mass,
        r.h2_seminorm,
    ]
    .iter()
    .all(|v| v.is_finite())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<StepRecord>> {
    read_rows(path)
}

pub fn write_convergence_csv(path: &Path, rows: &[ConvergenceRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_convergence_csv(path: &Path) -> Result<Vec<ConvergenceRow>> {
    read_rows(path)
}

/// `t,dt` pairs of a run, for plotting adaptive step sizes.
pub fn write_dt_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        t: f64,
        dt: f64,
    }
    let rows: Vec<Row> = records
        .iter()
        .map(|r| Row {
            t: r.t_np1,
            dt: r.dt_np1,
        })
        .collect();
    write_rows(path, &rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotMeta {
    pub nx: usize,
    pub ny: usize,
    pub time: f64,
    pub step: usize,
}

fn snapshot_header(meta: &SnapshotMeta) -> Result<[u8; SNAPSHOT_HEADER_LEN]> {
    let text = format!(
        "{SNAPSHOT_MAGIC} {} {} {:e} {}",
        meta.nx, meta.ny, meta.time, meta.step
    );
    if text.len() >= SNAPSHOT_HEADER_LEN {
        return Err(Error::InvalidParameter(format!(
            "snapshot header `{text}` exceeds {} bytes",
            SNAPSHOT_HEADER_LEN - 1
        )));
    }
    let mut header = [b' '; SNAPSHOT_HEADER_LEN];
    header[..text.len()].copy_from_slice(text.as_bytes());
    header[SNAPSHOT_HEADER_LEN - 1] = b'\n';
    Ok(header)
}

/// Writes the raw payload only.
pub fn write_raw_snapshot(path: &Path, field: &Field, time: f64, step: usize) -> Result<()> {
    let grid = field.grid();
    let header = snapshot_header(&SnapshotMeta {
        nx: grid.nx(),
        ny: grid.ny(),
        time,
        step,
    })?;
    create_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(&header)?;
    for v in field.values() {
        write(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a raw snapshot. With `grid` given, the dimensions must match it; otherwise domain
/// lengths come from the sidecar when present and default to `2π`.
pub fn read_snapshot(path: &Path, grid: Option<&Arc<Grid>>) -> Result<(Field, SnapshotMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < SNAPSHOT_HEADER_LEN {
        return Err(bad("file shorter than the snapshot header".into()));
    }
    let header = std::str::from_utf8(&bytes[..SNAPSHOT_HEADER_LEN])
        .map_err(|_| bad("header is not ASCII".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(SNAPSHOT_MAGIC) {
        return Err(bad(format!("missing `{SNAPSHOT_MAGIC}` magic")));
    }
    let mut next = |what: &str| {
        parts
            .next()
            .ok_or_else(|| bad(format!("header lacks {what}")))
            .map(str::to_owned)
    };
    let parse_usize = |s: String, what: &str| {
        s.parse::<usize>()
            .map_err(|_| bad(format!("bad {what} `{s}`")))
    };
    let nx = parse_usize(next("nx")?, "nx")?;
    let ny = parse_usize(next("ny")?, "ny")?;
    let time_text = next("time")?;
    let time = time_text
        .parse::<f64>()
        .map_err(|_| bad(format!("bad time `{time_text}`")))?;
    let step = parse_usize(next("step")?, "step")?;
    let payload = &bytes[SNAPSHOT_HEADER_LEN..];
    if payload.len() != nx * ny * 8 {
        return Err(bad(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            nx * ny * 8
        )));
    }
    let grid = match grid {
        Some(g) => {
            if g.nx() != nx || g.ny() != ny {
                return Err(bad(format!(
                    "snapshot is {nx}x{ny} but the grid is {}x{}",
                    g.nx(),
                    g.ny()
                )));
            }
            g.clone()
        }
        None => {
            let (lx, ly) = read_sidecar_lengths(&path.with_extension("txt"))?;
            Grid::new(nx, ny, lx, ly)?
        }
    };
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let field = Field::new(grid, values).map_err(|e| bad(e.to_string()))?;
    Ok((field, SnapshotMeta { nx, ny, time, step }))
}

fn read_sidecar_lengths(path: &Path) -> Result<(f64, f64)> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok((two_pi(), two_pi()));
    };
    let lookup = |key: &str| {
        text.lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .and_then(|(_, v)| v.trim().parse::<f64>().ok())
    };
    Ok((
        lookup("lx").unwrap_or_else(two_pi),
        lookup("ly").unwrap_or_else(two_pi),
    ))
}

/// 8-bit P5 image, `(v − min)/(max − min)` mapped to 0..=255; a constant field maps to 0.
pub fn write_pgm(path: &Path, field: &Field) -> Result<(f64, f64)> {
    let (lo, hi) = (field.min(), field.max());
    let span = hi - lo;
    let grid = field.grid();
    let mut bytes = format!("P5\n{} {}\n255\n", grid.nx(), grid.ny()).into_bytes();
    bytes.extend(field.values().iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    create_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok((lo, hi))
}

/// Writes `<stem>.raw`, `<stem>.pgm` and the `<stem>.txt` sidecar; returns the raw path.
pub fn write_snapshot(dir: &Path, stem: &str, snap: &Snapshot) -> Result<PathBuf> {
    let raw = dir.join(format!("{stem}.raw"));
    write_raw_snapshot(&raw, &snap.field, snap.time, snap.step)?;
    let (lo, hi) = write_pgm(&dir.join(format!("{stem}.pgm")), &snap.field)?;
    let grid = snap.field.grid();
    let sidecar = format!(
        "schema_version = {SCHEMA_VERSION}\nnx = {}\nny = {}\nlx = {:e}\nly = {:e}\n\
         time = {:e}\nrequested_time = {:e}\nstep = {}\npgm_min = {:e}\npgm_max = {:e}\n",
        grid.nx(),
        grid.ny(),
        grid.lx(),
        grid.ly(),
        snap.time,
        snap.requested_time,
        snap.step,
        lo,
        hi
    );
    let side = dir.join(format!("{stem}.txt"));
    fs::write(&side, sidecar).map_err(|e| Error::io(&side, e))?;
    Ok(raw)
}

/// File stem for a snapshot requested at time `t`.
pub fn snapshot_stem(t: f64) -> String {
    format!("snapshot_t{t}")
}
