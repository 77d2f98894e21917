use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;

use super::Matrix;
use crate::error::{Error, Result};

/// Handle to a tensor registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors, each with a gradient buffer of the same shape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    grads: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(self.id(&name).is_none(), "duplicate parameter name {name}");
        let (r, c) = value.shape();
        self.names.push(name);
        self.values.push(value);
        self.grads.push(Matrix::zeros(r, c));
        ParamId(self.values.len() - 1)
    }

    /// Uniform Glorot initialization in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let value = Matrix::from_vec(fan_in, fan_out, data).expect("glorot shape");
        self.add(name, value)
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

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.grads[id.0]
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    /// Plain SGD update followed by clearing the gradient buffers.
    pub fn sgd_step(&mut self, learning_rate: f64) {
        for (v, g) in self.values.iter_mut().zip(self.grads.iter_mut()) {
            v.axpy(-learning_rate, g);
            g.fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    /// Serializes parameters plus string metadata into the text checkpoint container.
    ///
    /// Layout, one item per line:
    ///
    /// ```text
    /// autoultr-checkpoint 1
    /// meta <key> <value>              (zero or more, value runs to end of line)
    /// tensor <name> <rows> <cols>
    /// <cols space-separated values>   (repeated rows times)
    /// end
    /// ```
    ///
    /// Values are written in Rust's shortest round-trip form, so a reload is exact.
    pub fn to_checkpoint(&self, meta: &BTreeMap<String, String>) -> String {
        let mut out = String::from("autoultr-checkpoint 1\n");
        for (k, v) in meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, value) in self.names.iter().zip(&self.values) {
            let _ = writeln!(out, "tensor {name} {} {}", value.rows(), value.cols());
            for i in 0..value.rows() {
                let line: Vec<String> = value.row(i).iter().map(|v| format!("{v:?}")).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    /// Parses the container written by [`ParamStore::to_checkpoint`].
    pub fn from_checkpoint(text: &str) -> Result<(ParamStore, BTreeMap<String, String>)> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        let bad = |line: usize, message: &str| Error::Parse {
            line,
            message: message.to_string(),
        };
        match lines.next() {
            Some((_, "autoultr-checkpoint 1")) => {}
            Some((n, _)) => return Err(bad(n, "missing checkpoint header")),
            None => return Err(bad(1, "empty checkpoint")),
        }
        let mut store = ParamStore::new();
        let mut meta = BTreeMap::new();
        let mut finished = false;
        while let Some((n, line)) = lines.next() {
            if line.is_empty() {
                continue;
            }
            if line == "end" {
                finished = true;
                break;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.insert(k.to_string(), v.to_string());
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "tensor" {
                return Err(bad(n, "expected `tensor <name> <rows> <cols>`"));
            }
            let rows: usize = parts[2].parse().map_err(|_| bad(n, "bad row count"))?;
            let cols: usize = parts[3].parse().map_err(|_| bad(n, "bad column count"))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (rn, row) = lines.next().ok_or_else(|| bad(n, "truncated tensor"))?;
                let before = data.len();
                for tok in row.split_whitespace() {
                    data.push(tok.parse::<f64>().map_err(|_| bad(rn, "bad value"))?);
                }
                if data.len() - before != cols {
                    return Err(bad(rn, "wrong number of values in row"));
                }
            }
            if store.id(parts[1]).is_some() {
                return Err(bad(n, "duplicate tensor name"));
            }
            store.add(parts[1], Matrix::from_vec(rows, cols, data)?);
        }
        if !finished {
            return Err(bad(text.lines().count(), "missing `end` line"));
        }
        Ok((store, meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.add_glorot("w", 3, 4, &mut rng);
        store.add("b", Matrix::from_vec(1, 2, vec![0.1, -1e-300]).unwrap());
        let mut meta = BTreeMap::new();
        meta.insert("kind".to_string(), "set_attention heads=2".to_string());
        let text = store.to_checkpoint(&meta);
        let (back, meta_back) = ParamStore::from_checkpoint(&text).unwrap();
        assert_eq!(back, store);
        assert_eq!(meta_back, meta);
    }

    #[test]
    fn checkpoint_rejects_truncation() {
        let mut store = ParamStore::new();
        store.add("w", Matrix::zeros(2, 2));
        let text = store.to_checkpoint(&BTreeMap::new());
        let cut: String = text.lines().take(3).collect::<Vec<_>>().join("\n");
        assert!(ParamStore::from_checkpoint(&cut).is_err());
    }

    #[test]
    fn sgd_step_moves_against_gradient_and_clears() {
        let mut store = ParamStore::new();
        let id = store.add("w", Matrix::filled(1, 2, 1.0));
        store.grad_mut(id).as_mut_slice().copy_from_slice(&[2.0, -4.0]);
        store.sgd_step(0.5);
        assert_eq!(store.value(id).as_slice(), &[0.0, 3.0]);
        assert_eq!(store.grad(id).as_slice(), &[0.0, 0.0]);
    }
}
