use rand::Rng;

use super::mlp::param;
use super::{ArchConfig, ListBatch};
use crate::diff::{Matrix, ParamStore, Tape, Var};
use crate::error::Result;

pub(super) fn init<R: Rng>(params: &mut ParamStore, input_dim: usize, arch: &ArchConfig, rng: &mut R) {
    let d = arch.attn_width;
    let ff = arch.attn_ff;
    params.add_glorot("attn.in.w", input_dim, d, rng);
    params.add("attn.in.b", Matrix::zeros(1, d));
    for blk in 0..arch.attn_blocks {
        for m in ["q", "k", "v", "o"] {
            params.add_glorot(format!("attn.{blk}.{m}.w"), d, d, rng);
            params.add(format!("attn.{blk}.{m}.b"), Matrix::zeros(1, d));
        }
        params.add(format!("attn.{blk}.ln1.g"), Matrix::filled(1, d, 1.0));
        params.add(format!("attn.{blk}.ln1.b"), Matrix::zeros(1, d));
        params.add_glorot(format!("attn.{blk}.ff1.w"), d, ff, rng);
        params.add(format!("attn.{blk}.ff1.b"), Matrix::zeros(1, ff));
        params.add_glorot(format!("attn.{blk}.ff2.w"), ff, d, rng);
        params.add(format!("attn.{blk}.ff2.b"), Matrix::zeros(1, d));
        params.add(format!("attn.{blk}.ln2.g"), Matrix::filled(1, d, 1.0));
        params.add(format!("attn.{blk}.ln2.b"), Matrix::zeros(1, d));
    }
    params.add_glorot("attn.out.w", d, 1, rng);
    params.add("attn.out.b", Matrix::zeros(1, 1));
}

fn dense(store: &ParamStore, tape: &mut Tape, x: Var, name: &str) -> Result<Var> {
    let w = param(store, tape, &format!("{name}.w"));
    let b = param(store, tape, &format!("{name}.b"));
    tape.linear(x, w, b)
}

fn norm(store: &ParamStore, tape: &mut Tape, x: Var, name: &str) -> Result<Var> {
    let g = param(store, tape, &format!("{name}.g"));
    let b = param(store, tape, &format!("{name}.b"));
    tape.layer_norm(x, g, b)
}

/// Post-norm transformer encoder blocks without positional encoding, so the
/// output permutes with the input rows.
pub(super) fn forward(
    store: &ParamStore,
    arch: &ArchConfig,
    tape: &mut Tape,
    batch: &ListBatch,
) -> Result<Var> {
    let x = tape.constant(batch.features.clone());
    let mut h = dense(store, tape, x, "attn.in")?;
    for blk in 0..arch.attn_blocks {
        let p = format!("attn.{blk}");
        let q = dense(store, tape, h, &format!("{p}.q"))?;
        let k = dense(store, tape, h, &format!("{p}.k"))?;
        let v = dense(store, tape, h, &format!("{p}.v"))?;
        let a = tape.attention(q, k, v, arch.attn_heads, batch.list_len, &batch.mask)?;
        let a = dense(store, tape, a, &format!("{p}.o"))?;
        let r = tape.add(h, a)?;
        h = norm(store, tape, r, &format!("{p}.ln1"))?;
        let f = dense(store, tape, h, &format!("{p}.ff1"))?;
        let f = tape.relu(f);
        let f = dense(store, tape, f, &format!("{p}.ff2"))?;
        let r = tape.add(h, f)?;
        h = norm(store, tape, r, &format!("{p}.ln2"))?;
    }
    dense(store, tape, h, "attn.out")
}
