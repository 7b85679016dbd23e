//! Thinned draw tables and their on-disk format.
//!
//! A `.bin` file is one JSON header line `{"name", "shape", "draws"}` followed
//! by the values as little-endian f64 in row-major order, the draw index
//! leading. Every table can also be exported as CSV with one row per draw.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which sweeps are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoragePolicy {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl StoragePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::validation("thin must be at least 1"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::validation(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }

    /// `floor((iterations − burn_in) / thin)`.
    pub fn stored_count(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    pub fn keeps(&self, sweep: usize) -> bool {
        sweep >= self.burn_in && (sweep - self.burn_in + 1) % self.thin == 0
    }
}

/// Draws of one variable group; each draw has the same `shape`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawTable {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    name: String,
    shape: Vec<usize>,
    draws: usize,
}

impl DrawTable {
    pub fn new(name: &str, shape: &[usize]) -> Self {
        DrawTable {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: Vec::new(),
        }
    }

    pub fn with_capacity(name: &str, shape: &[usize], draws: usize) -> Self {
        let mut t = Self::new(name, shape);
        t.data.reserve(draws * t.width());
        t
    }

    /// Values per draw.
    pub fn width(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn draws(&self) -> usize {
        let w = self.width();
        if w == 0 {
            0
        } else {
            self.data.len() / w
        }
    }

    pub fn push(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.width(), "draw width for {}", self.name);
        self.data.extend_from_slice(values);
    }

    pub fn draw(&self, d: usize) -> &[f64] {
        let w = self.width();
        &self.data[d * w..(d + 1) * w]
    }

    pub fn draw_mut(&mut self, d: usize) -> &mut [f64] {
        let w = self.width();
        &mut self.data[d * w..(d + 1) * w]
    }

    /// All draws of one flattened entry.
    pub fn entry(&self, e: usize) -> Vec<f64> {
        let w = self.width();
        (0..self.draws()).map(|d| self.data[d * w + e]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let w = self.width();
        let n = self.draws().max(1) as f64;
        let mut m = vec![0.0; w];
        for d in 0..self.draws() {
            for (acc, v) in m.iter_mut().zip(self.draw(d)) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Concatenate the draws of several tables with the same shape.
    pub fn concat(tables: &[&DrawTable]) -> Result<DrawTable> {
        let first = tables.first().ok_or_else(|| Error::validation("no tables to pool"))?;
        let mut out = DrawTable::new(&first.name, &first.shape);
        for t in tables {
            if t.shape != first.shape {
                return Err(Error::Dimension(format!("cannot pool {} tables of different shapes", first.name)));
            }
            out.data.extend_from_slice(&t.data);
        }
        Ok(out)
    }

    pub fn write_bin(&self, path: &Path) -> Result<()> {
        let header = Header {
            name: self.name.clone(),
            shape: self.shape.clone(),
            draws: self.draws(),
        };
        let mut buf = serde_json::to_vec(&header).expect("header serializes");
        buf.push(b'\n');
        buf.reserve(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_bin(path: &Path) -> Result<DrawTable> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let nl = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::parse(path, "missing header line"))?;
        let header: Header =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::parse(path, format!("bad header: {e}")))?;
        let body = &bytes[nl + 1..];
        let expect = header.draws * header.shape.iter().product::<usize>();
        if body.len() != expect * 8 {
            return Err(Error::parse(
                path,
                format!("expected {expect} values, found {} bytes", body.len()),
            ));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(DrawTable {
            name: header.name,
            shape: header.shape,
            data,
        })
    }

    /// One row per draw, columns named by the multi-index of each entry.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let names: Vec<String> = (0..self.width()).map(|e| self.entry_name(e)).collect();
        out.push_str("draw,");
        out.push_str(&names.join(","));
        out.push('\n');
        for d in 0..self.draws() {
            out.push_str(&d.to_string());
            for v in self.draw(d) {
                out.push(',');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// `name[i][j]...` for a flat entry index.
    pub fn entry_name(&self, mut e: usize) -> String {
        let mut idx = vec![0; self.shape.len()];
        for (slot, &dim) in idx.iter_mut().zip(&self.shape).rev() {
            *slot = e % dim;
            e /= dim;
        }
        let mut s = self.name.clone();
        for i in idx {
            s.push_str(&format!("[{i}]"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stored_count_rule() {
        let p = StoragePolicy {
            iterations: 103,
            burn_in: 10,
            thin: 3,
        };
        assert_eq!(p.stored_count(), 31);
        assert_eq!((0..103).filter(|&i| p.keeps(i)).count(), 31);
        assert!(StoragePolicy { iterations: 10, burn_in: 10, thin: 1 }.validate().is_err());
        assert!(StoragePolicy { iterations: 10, burn_in: 1, thin: 0 }.validate().is_err());
    }

    #[test]
    fn bin_roundtrip_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = DrawTable::new("lambda", &[2, 3]);
        for d in 0..4 {
            let v: Vec<f64> = (0..6).map(|i| d as f64 * 10.0 + i as f64 + 0.1).collect();
            t.push(&v);
        }
        let p = dir.path().join("lambda.bin");
        t.write_bin(&p).unwrap();
        let back = DrawTable::read_bin(&p).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.draws(), 4);
        assert_eq!(back.entry(5), vec![5.1, 15.1, 25.1, 35.1]);
        assert_eq!(t.entry_name(4), "lambda[1][1]");
        t.write_csv(&dir.path().join("lambda.csv")).unwrap();
        let csv = fs::read_to_string(dir.path().join("lambda.csv")).unwrap();
        assert!(csv.starts_with("draw,lambda[0][0],"));
        assert_eq!(csv.lines().count(), 5);
    }
}
