//! Path serialization: columnar CSV for a single path and a little-endian binary
//! container for whole ensembles.
//!
//! Binary layout (all integers `u64`, all reals `f64`, little endian):
//!
//! ```text
//! magic "SDPE", version u32
//! dim, mesh, horizon, points_per_path, path_count
//! path_count seed records: (master, index, purpose)
//! body: path_count * points_per_path * dim values, row-major per path
//! ```
//!
//! `mesh` is `1/n` for step-path ensembles and the solver step for SDE ensembles.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::paths::{PathEnsemble, StepPath, TimeGrid};
use crate::rng::SeedRecord;

const MAGIC: &[u8; 4] = b"SDPE";
const VERSION: u32 = 1;

/// Writes `t_index,component_0,...` rows, one per piece.
pub fn write_path_csv<W: Write>(path: &StepPath, mut w: W) -> Result<()> {
    let header: Vec<String> = std::iter::once("t_index".to_string())
        .chain((0..path.dim()).map(|i| format!("component_{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for j in 0..path.grid().pieces() {
        write!(w, "{j}")?;
        for v in path.piece(j) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Reads a CSV written by [`write_path_csv`] back onto `grid`.
pub fn read_path_csv<R: BufRead>(grid: TimeGrid, r: R) -> Result<StepPath> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty csv".into()))??;
    let dim = header.split(',').count().saturating_sub(1);
    let mut values = Vec::new();
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let idx: usize = parse(fields.next(), row)?;
        if idx != row {
            return Err(Error::Format(format!("row {row} carries t_index {idx}")));
        }
        for _ in 0..dim {
            values.push(parse(fields.next(), row)?);
        }
    }
    StepPath::from_values(dim, grid, values)
}

fn parse<T: std::str::FromStr>(field: Option<&str>, row: usize) -> Result<T> {
    field
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("bad field in row {row}")))
}

/// In-memory image of the binary container.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleFile {
    pub dim: usize,
    pub mesh: f64,
    pub horizon: f64,
    pub points: usize,
    pub seeds: Vec<SeedRecord>,
    pub values: Vec<f64>,
}

impl EnsembleFile {
    pub fn from_ensemble(e: &PathEnsemble) -> Self {
        EnsembleFile {
            dim: e.dim(),
            mesh: e.grid().mesh(),
            horizon: e.grid().horizon(),
            points: e.grid().pieces(),
            seeds: e.seeds().to_vec(),
            values: e.paths().iter().flat_map(|p| p.values().iter().copied()).collect(),
        }
    }

    /// Rebuilds step paths; requires `1/mesh` to be an integer.
    pub fn to_ensemble(&self) -> Result<PathEnsemble> {
        let n = (1.0 / self.mesh).round();
        if n < 1.0 || ((1.0 / self.mesh) - n).abs() > 1e-9 * n {
            return Err(Error::Format(format!("mesh {} is not 1/n", self.mesh)));
        }
        let grid = TimeGrid::new(n as usize, self.horizon)?;
        let stride = self.points * self.dim;
        let paths = self
            .values
            .chunks_exact(stride)
            .map(|c| StepPath::from_values(self.dim, grid, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        PathEnsemble::new(paths, self.seeds.clone())
    }

    pub fn path_count(&self) -> usize {
        self.seeds.len()
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        if self.values.len() != self.seeds.len() * self.points * self.dim {
            return Err(Error::contract("ensemble body size does not match header"));
        }
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for x in [self.dim as u64, self.mesh.to_bits(), self.horizon.to_bits()] {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&(self.points as u64).to_le_bytes())?;
        w.write_all(&(self.seeds.len() as u64).to_le_bytes())?;
        for s in &self.seeds {
            for x in [s.master, s.index, s.purpose] {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an ensemble container".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let dim = read_u64(&mut r)? as usize;
        let mesh = f64::from_bits(read_u64(&mut r)?);
        let horizon = f64::from_bits(read_u64(&mut r)?);
        let points = read_u64(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let seeds = (0..count)
            .map(|_| {
                Ok(SeedRecord {
                    master: read_u64(&mut r)?,
                    index: read_u64(&mut r)?,
                    purpose: read_u64(&mut r)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let values = (0..count * points * dim)
            .map(|_| Ok(f64::from_bits(read_u64(&mut r)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EnsembleFile {
            dim,
            mesh,
            horizon,
            points,
            seeds,
            values,
        })
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamPurpose;

    fn sample_path() -> StepPath {
        let g = TimeGrid::new(4, 1.0).unwrap();
        StepPath::from_increments(2, g, &[0.1, -0.2, 1.0 / 3.0, 0.0, -7.5, 1e-300, 2.0, 2.0, 0.0, 0.25])
            .unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let p = sample_path();
        let mut buf = Vec::new();
        write_path_csv(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_index,component_0,component_1\n0,0.1,-0.2\n"));
        let back = read_path_csv(*p.grid(), buf.as_slice()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let p = sample_path();
        let seeds = vec![
            SeedRecord::new(9, 0, StreamPurpose::Array),
            SeedRecord::new(9, 1, StreamPurpose::Array),
        ];
        let e = PathEnsemble::new(vec![p.clone(), p], seeds).unwrap();
        let file = EnsembleFile::from_ensemble(&e);
        let mut buf = Vec::new();
        file.write(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SDPE");
        assert_eq!(buf.len(), 8 + 5 * 8 + 2 * 24 + 2 * 5 * 2 * 8);
        let back = EnsembleFile::read(buf.as_slice()).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_ensemble().unwrap(), e);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(EnsembleFile::read(&b"NOPE...."[..]), Err(Error::Format(_))));
        let g = TimeGrid::new(2, 1.0).unwrap();
        let bad = "t_index,component_0\n0,1\n2,3\n";
        assert!(read_path_csv(g, bad.as_bytes()).is_err());
    }
}
