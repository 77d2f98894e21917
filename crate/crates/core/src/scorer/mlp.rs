use rand::Rng;

use super::{ArchConfig, ListBatch};
use crate::diff::{Matrix, ParamStore, Tape, Var};
use crate::error::Result;

pub(super) fn init<R: Rng>(params: &mut ParamStore, input_dim: usize, arch: &ArchConfig, rng: &mut R) {
    let mut fan_in = input_dim;
    let sizes = arch.mlp_hidden.iter().copied().chain(std::iter::once(1));
    for (l, width) in sizes.enumerate() {
        params.add_glorot(format!("mlp.{l}.w"), fan_in, width, rng);
        params.add(format!("mlp.{l}.b"), Matrix::zeros(1, width));
        fan_in = width;
    }
}

/// Same network on every row; returns a `(B·N) × 1` column.
pub(super) fn forward(store: &ParamStore, tape: &mut Tape, batch: &ListBatch) -> Result<Var> {
    let layers = store.len() / 2;
    let mut h = tape.constant(batch.features.clone());
    for l in 0..layers {
        let w = param(store, tape, &format!("mlp.{l}.w"));
        let b = param(store, tape, &format!("mlp.{l}.b"));
        h = tape.linear(h, w, b)?;
        if l + 1 < layers {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

pub(super) fn param(store: &ParamStore, tape: &mut Tape, name: &str) -> Var {
    let id = store
        .id(name)
        .unwrap_or_else(|| panic!("scorer parameter `{name}` missing"));
    tape.param(store, id)
}
