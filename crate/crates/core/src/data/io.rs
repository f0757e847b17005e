//! Trajectory files.
//!
//! * CSV: one row per time step, one column per coordinate, optional header.
//! * Binary: `b"KOOPTRAJ"`, `u32` version (= 1), `u32` dimension `d`, `u64`
//!   length, then `length × d` little-endian `f64` in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use faer::Mat;

use super::TrajectoryDataset;
use crate::error::{Error, Result};

pub const TRAJ_MAGIC: &[u8; 8] = b"KOOPTRAJ";
pub const TRAJ_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryFormat {
    Csv,
    Binary,
}

impl TrajectoryFormat {
    /// `.csv` files are CSV, everything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => TrajectoryFormat::Csv,
            _ => TrajectoryFormat::Binary,
        }
    }
}

pub fn read_csv<R: Read>(reader: R, source: &str) -> Result<TrajectoryDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::format(format!("{source}: {e}")))?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            // a non-numeric first line is a header
            Err(_) if line == 0 => continue,
            Err(e) => {
                return Err(Error::format(format!("{source}: line {}: {e}", line + 1)));
            }
        }
    }
    TrajectoryDataset::from_rows(&rows, None, source)
}

pub fn write_csv<W: Write>(traj: &TrajectoryDataset, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let header: Vec<String> = (0..traj.dim()).map(|j| format!("x{j}")).collect();
    writeln!(w, "{}", header.join(","))?;
    let s = traj.states();
    for i in 0..traj.len() {
        let row: Vec<String> = (0..traj.dim()).map(|j| format!("{}", s[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(mut reader: R, source: &str) -> Result<TrajectoryDataset> {
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if &magic != TRAJ_MAGIC {
        return Err(Error::format(format!("{source}: not a trajectory file (bad magic)")));
    }
    let version = read_u32(&mut reader)?;
    if version != TRAJ_VERSION {
        return Err(Error::format(format!("{source}: unsupported trajectory version {version}")));
    }
    let d = read_u32(&mut reader)? as usize;
    let len = usize::try_from(read_u64(&mut reader)?)
        .map_err(|_| Error::format("trajectory length overflows"))?;
    let total = len
        .checked_mul(d)
        .ok_or_else(|| Error::format("trajectory size overflows"))?;
    let mut data = Vec::with_capacity(total);
    for _ in 0..total {
        data.push(read_f64(&mut reader)?);
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::format(format!("{source}: {} trailing bytes", rest.len())));
    }
    TrajectoryDataset::new(Mat::from_fn(len, d, |i, j| data[i * d + j]), None, source)
}

pub fn write_binary<W: Write>(traj: &TrajectoryDataset, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    w.write_all(TRAJ_MAGIC)?;
    w.write_all(&TRAJ_VERSION.to_le_bytes())?;
    w.write_all(&(traj.dim() as u32).to_le_bytes())?;
    w.write_all(&(traj.len() as u64).to_le_bytes())?;
    let s = traj.states();
    for i in 0..traj.len() {
        for j in 0..traj.dim() {
            w.write_all(&s[(i, j)].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory, sniffing the binary magic before falling back to CSV.
pub fn read_trajectory(path: &Path) -> Result<TrajectoryDataset> {
    let source = path.display().to_string();
    let mut file = BufReader::new(File::open(path)?);
    let mut head = [0u8; 8];
    let n = read_prefix(&mut file, &mut head)?;
    let chained = (&head[..n]).chain(file);
    if n == 8 && &head == TRAJ_MAGIC {
        read_binary(chained, &source)
    } else {
        read_csv(chained, &source)
    }
}

pub fn write_trajectory(traj: &TrajectoryDataset, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    match TrajectoryFormat::from_path(path) {
        TrajectoryFormat::Csv => write_csv(traj, file),
        TrajectoryFormat::Binary => write_binary(traj, file),
    }
}

fn read_prefix<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            k => filled += k,
        }
    }
    Ok(filled)
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
