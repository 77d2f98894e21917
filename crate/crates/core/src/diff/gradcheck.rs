//! Central finite-difference verification of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Matrix, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Settings for [`grad_check_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the entry with the largest relative error.
    pub worst_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }

    /// Parameter with the largest relative error.
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn failing(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params
            .iter()
            .filter(move |p| p.max_rel_error >= self.tolerance)
    }
}

fn eval_loss<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let v = tape.value(loss);
    if v.shape() != (1, 1) {
        return Err(Error::Usage(format!(
            "gradient check needs a scalar loss, got {:?}",
            v.shape()
        )));
    }
    Ok(v[(0, 0)])
}

/// Runs forward and backward once; returns a copy of `store` whose gradient
/// buffers hold the analytic gradient of the loss built by `f`.
pub fn analytic_gradients<F>(store: &ParamStore, f: &F) -> Result<ParamStore>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut out = store.clone();
    out.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss)?;
    tape.accumulate_param_grads(&mut out);
    Ok(out)
}

/// Compares the gradient buffers of `analytic` against central differences of
/// the loss built by `f`, probing each scalar of `store` in turn.
pub fn compare_gradients<F>(
    store: &ParamStore,
    analytic: &ParamStore,
    f: &F,
    config: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(config.step > 0.0) {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    let mut probe = store.clone();
    let mut params = Vec::with_capacity(store.len());
    for id in store.ids() {
        let name = store.name(id).to_string();
        let mut max_rel = 0.0_f64;
        let mut worst = 0;
        for k in 0..store.value(id).len() {
            let orig = store.value(id).as_slice()[k];
            probe.value_mut(id).as_mut_slice()[k] = orig + config.step;
            let up = eval_loss(&probe, f)?;
            probe.value_mut(id).as_mut_slice()[k] = orig - config.step;
            let down = eval_loss(&probe, f)?;
            probe.value_mut(id).as_mut_slice()[k] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Check {
                    param: name,
                    message: format!("non-finite loss when probing entry {k}"),
                });
            }
            let numeric = (up - down) / (2.0 * config.step);
            let a = analytic.grad(id).as_slice()[k];
            let denom = a.abs().max(numeric.abs()).max(config.floor);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel || rel.is_nan() {
                max_rel = if rel.is_nan() { f64::INFINITY } else { rel };
                worst = k;
            }
        }
        params.push(ParamCheck {
            name,
            max_rel_error: max_rel,
            worst_index: worst,
        });
    }
    let pass = params.iter().all(|p| p.max_rel_error < config.tolerance);
    Ok(GradCheckReport {
        params,
        tolerance: config.tolerance,
        pass,
    })
}

pub fn grad_check_with<F>(store: &ParamStore, f: &F, config: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let analytic = analytic_gradients(store, f)?;
    compare_gradients(store, &analytic, f, config)
}

/// Gradient check with the default relative-error floor.
pub fn grad_check<F>(store: &ParamStore, f: &F, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    grad_check_with(
        store,
        f,
        GradCheckConfig {
            step,
            tolerance,
            ..GradCheckConfig::default()
        },
    )
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("random matrix")
}

/// One named kernel composition reduced to a scalar loss.
pub struct KernelCase {
    pub name: &'static str,
    pub store: ParamStore,
    #[allow(clippy::type_complexity)]
    pub loss: Box<dyn Fn(&mut Tape, &ParamStore) -> Result<Var>>,
}

/// Small random instances of every kernel, each reduced to a scalar by a
/// fixed random projection so that no gradient is trivially symmetric.
pub fn kernel_cases(seed: u64) -> Vec<KernelCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();

    let x = random_matrix(&mut rng, 4, 3, 1.0);
    let proj = random_matrix(&mut rng, 4, 5, 1.0);
    for name in ["relu", "tanh", "sigmoid", "mul"] {
        let mut store = ParamStore::new();
        let w = store.add("w", random_matrix(&mut rng, 3, 5, 1.0));
        let b = store.add("b", random_matrix(&mut rng, 1, 5, 0.5));
        let (x, proj) = (x.clone(), proj.clone());
        let loss = move |t: &mut Tape, s: &ParamStore| {
            let xv = t.constant(x.clone());
            let (wv, bv) = (t.param(s, w), t.param(s, b));
            let h = t.linear(xv, wv, bv)?;
            let a = match name {
                "relu" => t.relu(h),
                "tanh" => t.tanh(h),
                "sigmoid" => t.sigmoid(h),
                _ => t.mul(h, h)?,
            };
            let p = t.constant(proj.clone());
            let m = t.mul(a, p)?;
            Ok(t.sum(m))
        };
        cases.push(KernelCase {
            name,
            store,
            loss: Box::new(loss),
        });
    }

    {
        let mut store = ParamStore::new();
        let w = store.add("w", random_matrix(&mut rng, 3, 4, 1.0));
        let b = store.add("b", random_matrix(&mut rng, 1, 4, 0.5));
        let x = x.clone();
        let weights: Vec<f64> = (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect();
        let loss = move |t: &mut Tape, s: &ParamStore| {
            let xv = t.constant(x.clone());
            let (wv, bv) = (t.param(s, w), t.param(s, b));
            let h = t.linear(xv, wv, bv)?;
            t.softmax_xent(h, vec![true; 16], weights.clone(), 0.5)
        };
        cases.push(KernelCase {
            name: "linear_softmax_xent",
            store,
            loss: Box::new(loss),
        });
    }

    {
        let mut store = ParamStore::new();
        let w = store.add("w", random_matrix(&mut rng, 3, 4, 1.0));
        let x = x.clone();
        let proj = random_matrix(&mut rng, 4, 4, 1.0);
        let mask: Vec<bool> = (0..16).map(|i| i % 4 != 3 || i == 15).collect();
        let loss = move |t: &mut Tape, s: &ParamStore| {
            let xv = t.constant(x.clone());
            let wv = t.param(s, w);
            let h = t.matmul(xv, wv)?;
            let p = t.softmax(h, Some(mask.clone()))?;
            let c = t.constant(proj.clone());
            let m = t.mul(p, c)?;
            Ok(t.sum(m))
        };
        cases.push(KernelCase {
            name: "softmax",
            store,
            loss: Box::new(loss),
        });
    }

    {
        let mut store = ParamStore::new();
        let w = store.add("w", random_matrix(&mut rng, 3, 6, 1.0));
        let gamma = store.add("gamma", random_matrix(&mut rng, 1, 6, 1.0));
        let beta = store.add("beta", random_matrix(&mut rng, 1, 6, 1.0));
        let x = x.clone();
        let proj = random_matrix(&mut rng, 4, 6, 1.0);
        let loss = move |t: &mut Tape, s: &ParamStore| {
            let xv = t.constant(x.clone());
            let wv = t.param(s, w);
            let h = t.matmul(xv, wv)?;
            let (g, b) = (t.param(s, gamma), t.param(s, beta));
            let y = t.layer_norm(h, g, b)?;
            let c = t.constant(proj.clone());
            let m = t.mul(y, c)?;
            Ok(t.sum(m))
        };
        cases.push(KernelCase {
            name: "layer_norm",
            store,
            loss: Box::new(loss),
        });
    }

    {
        // Two lists of three rows, two heads, last key of the second list masked.
        let x = random_matrix(&mut rng, 6, 3, 1.0);
        let proj = random_matrix(&mut rng, 6, 4, 1.0);
        let mut store = ParamStore::new();
        let wq = store.add("wq", random_matrix(&mut rng, 3, 4, 1.0));
        let wk = store.add("wk", random_matrix(&mut rng, 3, 4, 1.0));
        let wv = store.add("wv", random_matrix(&mut rng, 3, 4, 1.0));
        let mask = vec![true, true, true, true, true, false];
        let loss = move |t: &mut Tape, s: &ParamStore| {
            let xv = t.constant(x.clone());
            let (a, b, c) = (t.param(s, wq), t.param(s, wk), t.param(s, wv));
            let q = t.matmul(xv, a)?;
            let k = t.matmul(xv, b)?;
            let v = t.matmul(xv, c)?;
            let o = t.attention(q, k, v, 2, 3, &mask)?;
            let p = t.constant(proj.clone());
            let m = t.mul(o, p)?;
            Ok(t.sum(m))
        };
        cases.push(KernelCase {
            name: "attention",
            store,
            loss: Box::new(loss),
        });
    }

    {
        // Three recurrent steps over two sequences; the second sequence stops after two.
        let d = 3;
        let xs: Vec<Matrix> = (0..3).map(|_| random_matrix(&mut rng, 2, 2, 1.0)).collect();
        let proj = random_matrix(&mut rng, 2, d, 1.0);
        let mut store = ParamStore::new();
        let wx = store.add("wx", random_matrix(&mut rng, 2, 3 * d, 1.0));
        let wh = store.add("wh", random_matrix(&mut rng, d, 3 * d, 1.0));
        let bx = store.add("bx", random_matrix(&mut rng, 1, 3 * d, 0.5));
        let bh = store.add("bh", random_matrix(&mut rng, 1, 3 * d, 0.5));
        let loss = move |t: &mut Tape, s: &ParamStore| {
            let (wxv, whv, bxv, bhv) = (t.param(s, wx), t.param(s, wh), t.param(s, bx), t.param(s, bh));
            let mut h = t.constant(Matrix::zeros(2, d));
            for (step, x) in xs.iter().enumerate() {
                let xv = t.constant(x.clone());
                let gx = t.linear(xv, wxv, bxv)?;
                let gh = t.linear(h, whv, bhv)?;
                h = t.gru_gate(gx, gh, h, vec![true, step < 2])?;
            }
            let p = t.constant(proj.clone());
            let m = t.mul(h, p)?;
            Ok(t.sum(m))
        };
        cases.push(KernelCase {
            name: "gru_gate",
            store,
            loss: Box::new(loss),
        });
    }

    {
        let mut store = ParamStore::new();
        let w = store.add("w", random_matrix(&mut rng, 3, 2, 1.0));
        let x = x.clone();
        let proj = random_matrix(&mut rng, 1, 5, 1.0);
        let loss = move |t: &mut Tape, s: &ParamStore| {
            let xv = t.constant(x.clone());
            let wv = t.param(s, w);
            let h = t.matmul(xv, wv)?;
            let th = t.tanh(h);
            let g = t.gather_rows(th, vec![3, 0, 0, 2])?;
            let c = t.concat_rows(vec![g, h])?;
            let r = t.reshape(c, 2, 8)?;
            let rs = t.row_sum(r);
            let sq = t.mul(rs, rs)?;
            let sc = t.scale(sq, 0.7);
            let a = t.add(sc, rs)?;
            let p = t.constant(proj.clone());
            let pm = t.matmul(a, p)?;
            Ok(t.sum(pm))
        };
        cases.push(KernelCase {
            name: "gather_concat_reshape",
            store,
            loss: Box::new(loss),
        });
    }

    cases
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(name: &str, seed: u64) -> KernelCase {
        kernel_cases(seed)
            .into_iter()
            .find(|c| c.name == name)
            .unwrap()
    }

    #[test]
    fn every_kernel_passes_on_seed_zero() {
        for c in kernel_cases(0) {
            let report = grad_check(&c.store, &c.loss, 1e-5, 1e-4).unwrap();
            assert!(report.pass, "{}: {:?}", c.name, report.worst());
        }
    }

    #[test]
    fn corrupted_gradient_is_reported_on_the_right_parameter() {
        let c = case("attention", 0);
        let mut analytic = analytic_gradients(&c.store, &c.loss).unwrap();
        let id = analytic.id("wk").unwrap();
        analytic.grad_mut(id).as_mut_slice()[2] *= 2.0;
        let report =
            compare_gradients(&c.store, &analytic, &c.loss, GradCheckConfig::default()).unwrap();
        assert!(!report.pass);
        let failing: Vec<&str> = report.failing().map(|p| p.name.as_str()).collect();
        assert_eq!(failing, vec!["wk"]);
        assert_eq!(report.worst().unwrap().worst_index, 2);
    }

    #[test]
    fn non_finite_loss_names_the_parameter() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::scalar(0.0));
        let loss = move |t: &mut Tape, s: &ParamStore| {
            let wv = t.param(s, w);
            let big = t.scale(wv, 1e308);
            let sq = t.mul(big, big)?;
            Ok(t.sum(sq))
        };
        match grad_check(&store, &loss, 1e-5, 1e-4) {
            Err(Error::Check { param, .. }) => assert_eq!(param, "w"),
            other => panic!("expected check error, got {other:?}"),
        }
    }

    #[test]
    fn non_positive_step_is_rejected() {
        let c = case("tanh", 1);
        assert!(matches!(
            grad_check(&c.store, &c.loss, 0.0, 1e-4),
            Err(Error::Config(_))
        ));
    }
}
