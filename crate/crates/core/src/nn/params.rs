use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Matrix;
use crate::error::{Error, Result};

/// Version tag written into every parameter blob.
pub const PARAM_FORMAT_VERSION: u32 = 1;
const PARAM_MAGIC: &[u8; 8] = b"QECSPARM";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Adds a `rows x cols` parameter drawn uniformly from `[-scale, scale]`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut R,
    ) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        self.add(name, Matrix::from_vec(rows, cols, data))
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::all_finite)
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, m) in self.names.iter().zip(&self.values) {
            h.update(name.as_bytes());
            h.update((m.rows as u64).to_le_bytes());
            h.update((m.cols as u64).to_le_bytes());
            for x in &m.data {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PARAM_MAGIC)?;
        w.write_all(&PARAM_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for (name, m) in self.names.iter().zip(&self.values) {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(m.rows as u64).to_le_bytes())?;
            w.write_all(&(m.cols as u64).to_le_bytes())?;
            let mut buf = Vec::with_capacity(m.data.len() * 8);
            for x in &m.data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != PARAM_MAGIC {
            return Err(Error::Checkpoint("not a parameter blob".into()));
        }
        let version = read_u32(&mut r)?;
        if version != PARAM_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: PARAM_FORMAT_VERSION,
                found: version,
            });
        }
        let count = read_u64(&mut r)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = read_u64(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let mut buf = vec![0u8; rows * cols * 8];
            r.read_exact(&mut buf)?;
            let data = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            store.add(name, Matrix::from_vec(rows, cols, data));
        }
        Ok(store)
    }

    /// Checks that `other` has the same names and shapes, in order.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.shape() == b.shape())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[derive(Clone, Debug, Default)]
struct Slot {
    dense: Option<Matrix>,
    rows: BTreeMap<usize, Vec<f64>>,
}

/// Gradients keyed by parameter. Embedding lookups accumulate sparse rows.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    slots: Vec<Slot>,
}

impl Gradients {
    pub fn new(num_params: usize) -> Self {
        Gradients {
            slots: vec![Slot::default(); num_params],
        }
    }

    fn slot(&mut self, id: ParamId) -> &mut Slot {
        if self.slots.len() <= id.0 {
            self.slots.resize(id.0 + 1, Slot::default());
        }
        &mut self.slots[id.0]
    }

    pub fn add_dense(&mut self, id: ParamId, g: &Matrix) {
        let slot = self.slot(id);
        match &mut slot.dense {
            Some(d) => d.add_assign(g),
            None => slot.dense = Some(g.clone()),
        }
    }

    pub fn add_row(&mut self, id: ParamId, row: usize, g: &[f64]) {
        let slot = self.slot(id);
        let entry = slot.rows.entry(row).or_insert_with(|| vec![0.0; g.len()]);
        for (a, b) in entry.iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn merge(&mut self, other: &Gradients) {
        for (i, s) in other.slots.iter().enumerate() {
            if let Some(d) = &s.dense {
                self.add_dense(ParamId(i), d);
            }
            for (&r, g) in &s.rows {
                self.add_row(ParamId(i), r, g);
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for s in &mut self.slots {
            if let Some(d) = &mut s.dense {
                d.scale_assign(k);
            }
            for g in s.rows.values_mut() {
                g.iter_mut().for_each(|x| *x *= k);
            }
        }
    }

    /// Effective dense gradient for `id` given the parameter's shape.
    pub fn dense(&self, id: ParamId, rows: usize, cols: usize) -> Matrix {
        let mut out = Matrix::zeros(rows, cols);
        if let Some(s) = self.slots.get(id.0) {
            if let Some(d) = &s.dense {
                out.add_assign(d);
            }
            for (&r, g) in &s.rows {
                for (a, b) in out.row_mut(r).iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.slots.iter().all(|s| {
            s.dense
                .as_ref()
                .is_none_or(|d| d.data.iter().all(|&x| x == 0.0))
                && s.rows.values().all(|g| g.iter().all(|&x| x == 0.0))
        })
    }

    pub fn global_norm(&self, store: &ParamStore) -> f64 {
        store
            .ids()
            .map(|id| {
                let (r, c) = store.get(id).shape();
                self.dense(id, r, c).norm_sq()
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().all(|s| {
            s.dense.as_ref().is_none_or(Matrix::all_finite)
                && s.rows.values().all(|g| g.iter().all(|x| x.is_finite()))
        })
    }

    /// Rescales so the global norm does not exceed `max_norm`. Returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, store: &ParamStore, max_norm: f64) -> f64 {
        let norm = self.global_norm(store);
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Matrix> = store
            .ids()
            .map(|id| Matrix::zeros(store.get(id).rows, store.get(id).cols))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let (rows, cols) = store.get(id).shape();
            let g = grads.dense(id, rows, cols);
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let p = store.get_mut(id);
            for i in 0..g.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
