use rand::Rng;

use super::mlp::param;
use super::{ArchConfig, ListBatch};
use crate::diff::{Matrix, ParamStore, Tape, Var};
use crate::error::Result;

pub(super) fn init<R: Rng>(params: &mut ParamStore, input_dim: usize, arch: &ArchConfig, rng: &mut R) {
    let d = arch.gru_hidden;
    params.add_glorot("gru.wx", input_dim, 3 * d, rng);
    params.add("gru.bx", Matrix::zeros(1, 3 * d));
    params.add_glorot("gru.wh", d, 3 * d, rng);
    params.add("gru.bh", Matrix::zeros(1, 3 * d));
    params.add_glorot("gru.wc", d, d, rng);
    params.add_glorot("gru.wo", d, 1, rng);
    params.add("gru.bo", Matrix::zeros(1, 1));
}

/// Reads each list in `orders[b]`, then scores document `i` from its step
/// output `o_i` and the final state `c` as `o_i·Wc·c + wo·o_i + bo`.
pub(super) fn forward(
    store: &ParamStore,
    tape: &mut Tape,
    batch: &ListBatch,
    orders: &[Vec<usize>],
) -> Result<Var> {
    let (nb, n) = (batch.n_lists, batch.list_len);
    let d = store.value(store.id("gru.wh").expect("gru.wh")).rows();
    let x = tape.constant(batch.features.clone());
    let wx = param(store, tape, "gru.wx");
    let bx = param(store, tape, "gru.bx");
    let wh = param(store, tape, "gru.wh");
    let bh = param(store, tape, "gru.bh");
    let gx_all = tape.linear(x, wx, bx)?;

    let mut h = tape.constant(Matrix::zeros(nb, d));
    let mut steps = Vec::with_capacity(n);
    for t in 0..n {
        let rows: Vec<usize> = (0..nb).map(|b| b * n + orders[b][t]).collect();
        let mask: Vec<bool> = rows.iter().map(|&r| batch.mask[r]).collect();
        let gx = tape.gather_rows(gx_all, rows)?;
        let gh = tape.linear(h, wh, bh)?;
        h = tape.gru_gate(gx, gh, h, mask)?;
        steps.push(h);
    }
    // Step-major (t, b) rows back to document-major (b, i) rows.
    let stacked = tape.concat_rows(steps)?;
    let mut back = vec![0; nb * n];
    for (b, order) in orders.iter().enumerate() {
        for (t, &i) in order.iter().enumerate() {
            back[b * n + i] = t * nb + b;
        }
    }
    let o = tape.gather_rows(stacked, back)?;

    let wc = param(store, tape, "gru.wc");
    let u = tape.matmul(h, wc)?;
    let u = tape.gather_rows(u, (0..nb * n).map(|r| r / n).collect())?;
    let inter = tape.mul(o, u)?;
    let inter = tape.row_sum(inter);
    let wo = param(store, tape, "gru.wo");
    let bo = param(store, tape, "gru.bo");
    let lin = tape.linear(o, wo, bo)?;
    tape.add(inter, lin)
}
