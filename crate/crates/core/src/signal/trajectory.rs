use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, FldError, Result};
use crate::numerics::DenseArray;

/// Default frame period in seconds.
pub const DEFAULT_DT: f64 = 0.02;
/// Default state dimension (humanoid layout).
pub const DEFAULT_STATE_DIM: usize = 27;

/// One state vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub values: Vec<f64>,
}

/// Named contiguous index ranges of the state vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionGroup {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

impl DimensionGroup {
    fn new(name: &str, start: usize, end: usize) -> Self {
        Self {
            name: name.into(),
            start,
            end,
        }
    }
}

/// Humanoid state layout: base linear velocity 0:3, base angular velocity
/// 3:6, projected gravity 6:9, joint positions 9:27 (legs 9:19, arms 19:27).
pub mod layout {
    pub const LIN_VEL: std::ops::Range<usize> = 0..3;
    pub const ANG_VEL: std::ops::Range<usize> = 3..6;
    pub const GRAVITY: std::ops::Range<usize> = 6..9;
    pub const JOINTS: std::ops::Range<usize> = 9..27;
    pub const LEG_JOINTS: std::ops::Range<usize> = 9..19;
    pub const ARM_JOINTS: std::ops::Range<usize> = 19..27;
}

/// Groups used in per-group error reports. For the 27-D layout these are
/// velocities, gravity and joints; any other `d` gets a single `all` group.
pub fn dimension_groups(d: usize) -> Vec<DimensionGroup> {
    if d == DEFAULT_STATE_DIM {
        vec![
            DimensionGroup::new("velocity", 0, 6),
            DimensionGroup::new("gravity", 6, 9),
            DimensionGroup::new("joints", 9, 27),
        ]
    } else {
        vec![DimensionGroup::new("all", 0, d)]
    }
}

/// Frames sampled at a fixed period, stored row-major (`frames × d`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    d: usize,
    data: Vec<f64>,
    pub dt: f64,
    pub label: Option<String>,
}

impl Trajectory {
    pub fn new(d: usize, data: Vec<f64>, dt: f64, label: Option<String>) -> Result<Self> {
        if d == 0 {
            return invalid("state dimension must be positive");
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return invalid(format!("dt must be positive, got {dt}"));
        }
        if data.len() % d != 0 {
            return shape_err(format!(
                "{} values do not form whole {d}-D frames",
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FldError::Parse {
                row: i / d,
                msg: "non-finite value".into(),
            });
        }
        Ok(Self { d, data, dt, label })
    }

    pub fn from_frames(frames: &[StateFrame], dt: f64, label: Option<String>) -> Result<Self> {
        let d = frames.first().map(|f| f.values.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(frames.len() * d);
        for (i, f) in frames.iter().enumerate() {
            if f.values.len() != d {
                return Err(FldError::Parse {
                    row: i,
                    msg: format!("expected {d} values, found {}", f.values.len()),
                });
            }
            data.extend_from_slice(&f.values);
        }
        Self::new(d, data, dt, label)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.d..(t + 1) * self.d]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `d × H` matrix of frames `[start, start + h)`, oldest column first.
    pub fn segment_matrix(&self, start: usize, h: usize) -> Result<DenseArray> {
        if start + h > self.len() {
            return Err(FldError::TooShort {
                len: self.len(),
                needed: start + h,
            });
        }
        let d = self.d;
        Ok(DenseArray::from_fn(&[d, h], |i| {
            let (dim, col) = (i / h, i % h);
            self.data[(start + col) * d + dim]
        }))
    }

    /// Writes the segment into `out` (length `d·H`) without allocating.
    pub fn write_segment(&self, start: usize, h: usize, out: &mut [f64]) {
        let d = self.d;
        for col in 0..h {
            let f = &self.data[(start + col) * d..(start + col + 1) * d];
            for (dim, v) in f.iter().enumerate() {
                out[dim * h + col] = *v;
            }
        }
    }
}

/// Options for [`load_csv`].
#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub header: bool,
    pub dt: f64,
    pub label: Option<String>,
    /// Log a warning when fewer frames than this are read.
    pub min_frames: Option<usize>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            header: false,
            dt: DEFAULT_DT,
            label: None,
            min_frames: None,
        }
    }
}

/// Parses `d`-column CSV (one frame per row, LF or CRLF line endings).
/// Errors name the zero-based data row.
pub fn read_csv(reader: impl Read, d: usize, opts: &CsvOptions) -> Result<Trajectory> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(opts.header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != d {
            return Err(FldError::Parse {
                row,
                msg: format!("expected {d} columns, found {}", rec.len()),
            });
        }
        for cell in rec.iter() {
            let v: f64 = cell.parse().map_err(|_| FldError::Parse {
                row,
                msg: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(FldError::Parse {
                    row,
                    msg: format!("non-finite value `{cell}`"),
                });
            }
            data.push(v);
        }
    }
    if data.is_empty() {
        return Err(FldError::Empty("CSV holds no frames".into()));
    }
    let traj = Trajectory::new(d, data, opts.dt, opts.label.clone())?;
    if let Some(min) = opts.min_frames {
        if traj.len() < min {
            log::warn!(
                "trajectory has {} frames, fewer than the window length {min}; it cannot be windowed",
                traj.len()
            );
        }
    }
    Ok(traj)
}

pub fn load_csv(path: impl AsRef<Path>, d: usize, opts: &CsvOptions) -> Result<Trajectory> {
    let f = std::fs::File::open(path.as_ref())?;
    read_csv(std::io::BufReader::new(f), d, opts)
}

/// Writes one frame per row, optionally preceded by a header line.
pub fn write_csv(
    traj: &Trajectory,
    w: impl std::io::Write,
    header: Option<&[String]>,
) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().from_writer(w);
    if let Some(h) = header {
        wtr.write_record(h)?;
    }
    for f in traj.frames() {
        wtr.write_record(f.iter().map(|v| format!("{v:?}")))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path.as_ref())?;
    write_csv(traj, std::io::BufWriter::new(f), None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(header: bool) -> CsvOptions {
        CsvOptions {
            header,
            ..Default::default()
        }
    }

    #[test]
    fn three_rows() {
        let t = read_csv("1,2\n3,4\n5,6\n".as_bytes(), 2, &opts(false)).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.frame(2), &[5.0, 6.0]);
    }

    #[test]
    fn header_and_crlf() {
        let t = read_csv("a,b\r\n1,2\r\n3,4\r\n".as_bytes(), 2, &opts(true)).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.frame(0), &[1.0, 2.0]);
    }

    #[test]
    fn nan_names_row() {
        let e = read_csv("1,2\n3,NaN\n".as_bytes(), 2, &opts(false)).unwrap_err();
        assert!(matches!(e, FldError::Parse { row: 1, .. }), "{e}");
    }

    #[test]
    fn ragged_and_text() {
        assert!(matches!(
            read_csv("1,2\n3\n".as_bytes(), 2, &opts(false)),
            Err(FldError::Parse { row: 1, .. })
        ));
        assert!(matches!(
            read_csv("x,2\n".as_bytes(), 2, &opts(false)),
            Err(FldError::Parse { row: 0, .. })
        ));
    }

    #[test]
    fn segment_columns_are_frames() {
        let t = Trajectory::new(2, (0..10).map(|v| v as f64).collect(), 0.02, None).unwrap();
        let s = t.segment_matrix(1, 3).unwrap();
        // dim 0 of frames 1..4 is 2, 4, 6
        assert_eq!(s.row(0), &[2.0, 4.0, 6.0]);
        assert_eq!(s.row(1), &[3.0, 5.0, 7.0]);
        let mut buf = vec![0.0; 6];
        t.write_segment(1, 3, &mut buf);
        assert_eq!(buf, s.data());
    }

    #[test]
    fn csv_round_trip() {
        let t = Trajectory::new(3, vec![0.1, -2.5, 1e-17, 3.0, 4.0, 5.0], 0.02, None).unwrap();
        let mut out = Vec::new();
        write_csv(&t, &mut out, None).unwrap();
        let back = read_csv(out.as_slice(), 3, &opts(false)).unwrap();
        assert_eq!(back.data(), t.data());
    }
}
