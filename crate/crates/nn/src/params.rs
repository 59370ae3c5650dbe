use std::io::{Read, Write};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::NnError;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable matrices.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

const MAGIC: &[u8; 8] = b"D2TW0001";

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Xavier-uniform initialised `rows × cols` matrix.
    pub fn xavier<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let value = Array2::from_shape_fn((rows, cols), |_| dist.sample(rng));
        self.insert(name, value)
    }

    pub fn normal<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut R) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let value = Array2::from_shape_fn((rows, cols), |_| dist.sample(rng));
        self.insert(name, value)
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> ParamId {
        self.insert(name, Array2::from_elem((rows, cols), value))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Writes all matrices as a little-endian blob.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        write_matrices(&mut w, &self.names, &self.values)
    }

    /// Reads a blob written by [`ParamStore::write_to`] into a store whose
    /// layout (names and shapes) must already match.
    pub fn read_into<R: Read>(&mut self, r: R) -> Result<(), NnError> {
        let (names, values) = read_matrices(r)?;
        if names != self.names {
            return Err(NnError::Layout(format!(
                "expected {} named parameters, blob holds {}",
                self.names.len(),
                names.len()
            )));
        }
        for (i, v) in values.into_iter().enumerate() {
            if v.dim() != self.values[i].dim() {
                return Err(NnError::Layout(format!(
                    "parameter {} has shape {:?}, blob holds {:?}",
                    self.names[i],
                    self.values[i].dim(),
                    v.dim()
                )));
            }
            self.values[i] = v;
        }
        Ok(())
    }
}

pub(crate) fn write_matrices<W: Write>(w: &mut W, names: &[String], values: &[Array2<f64>]) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for (name, v) in names.iter().zip(values) {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(v.nrows() as u64).to_le_bytes())?;
        w.write_all(&(v.ncols() as u64).to_le_bytes())?;
        for x in v.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_matrices<R: Read>(mut r: R) -> Result<(Vec<String>, Vec<Array2<f64>>), NnError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Layout("not a weights blob".into()));
    }
    let count = read_u64(&mut r)? as usize;
    let mut names = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u64(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        names.push(String::from_utf8(name).map_err(|e| NnError::Layout(e.to_string()))?);
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        values.push(Array2::from_shape_vec((rows, cols), data).map_err(|e| NnError::Layout(e.to_string()))?);
    }
    Ok((names, values))
}
