//! Central finite-difference oracle shared by the gradient and acceptance
//! suites. Everything here evaluates forward values only; it never reads the
//! analytic gradients it is compared against.
#![allow(dead_code)]

use delexpara::tensor::{Graph, ParamStore, Tensor, Var};
use delexpara::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-6;
/// Fallback step when a ReLU or max kink lies within `FD_STEP`.
pub const FINE_STEP: f64 = 1e-6;

fn agrees(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= ABS_FLOOR || diff <= REL_TOL * analytic.abs().max(numeric.abs())
}

/// Central difference at `FD_STEP`, retried once at `FINE_STEP` on mismatch.
fn central(analytic: f64, at: impl Fn(f64) -> f64) -> f64 {
    let coarse = at(FD_STEP);
    if agrees(analytic, coarse) {
        coarse
    } else {
        at(FINE_STEP)
    }
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel: f64,
    pub failures: Vec<String>,
}

impl GradReport {
    pub fn record(&mut self, what: &str, analytic: f64, numeric: f64) {
        self.checked += 1;
        let diff = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        let rel = if diff <= ABS_FLOOR { 0.0 } else { diff / scale.max(ABS_FLOOR) };
        self.max_rel = self.max_rel.max(rel);
        if !agrees(analytic, numeric) {
            self.failures.push(format!(
                "{what}: analytic {analytic:.9e} numeric {numeric:.9e}"
            ));
        }
    }

    pub fn ok(&self) -> bool {
        self.checked > 0 && self.failures.is_empty()
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Checks `d/dx sum(f(x) ⊙ R)` for a random projection `R`, perturbing every
/// coordinate of every input tensor.
pub fn check_op<F>(name: &str, seed: u64, inputs: &[Tensor<f64>], f: F) -> GradReport
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let empty = ParamStore::<f64>::new();
    let probe = {
        let mut g = Graph::new(&empty);
        let vars: Vec<Var> = inputs.iter().cloned().map(|t| g.constant(t)).collect();
        let out = f(&mut g, &vars).unwrap();
        g.shape(out).to_vec()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let projection = random_tensor(&mut rng, &probe);

    let objective = |ins: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new(&empty);
        let vars: Vec<Var> = ins.iter().cloned().map(|t| g.constant(t)).collect();
        let out = f(&mut g, &vars).unwrap();
        g.value(out)
            .iter()
            .zip(projection.data())
            .map(|(a, b)| a * b)
            .sum()
    };

    let mut g = Graph::new(&empty);
    let vars: Vec<Var> = inputs.iter().cloned().map(|t| g.variable(t)).collect();
    let out = f(&mut g, &vars).unwrap();
    let r = g.constant(projection.clone());
    let weighted = g.mul(out, r).unwrap();
    let loss = g.sum(weighted);
    let grads = g.backward(loss).unwrap();

    let mut report = GradReport::default();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]).unwrap().to_vec();
        for i in 0..input.numel() {
            let numeric = central(analytic[i], |h| {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[i] -= h;
                (objective(&plus) - objective(&minus)) / (2.0 * h)
            });
            report.record(&format!("{name}[input {k}][{i}]"), analytic[i], numeric);
        }
    }
    report
}

/// Finite-difference check of every parameter coordinate (or every
/// `stride`-th one) against analytic parameter gradients.
pub fn check_params<L, A>(
    store: &ParamStore<f64>,
    stride: usize,
    loss: L,
    analytic: A,
) -> GradReport
where
    L: Fn(&ParamStore<f64>) -> f64,
    A: Fn(&ParamStore<f64>) -> delexpara::tensor::ParamGrads<f64>,
{
    let grads = analytic(store);
    let mut report = GradReport::default();
    let mut counter = 0usize;
    for id in store.ids() {
        for i in 0..store.get(id).numel() {
            counter += 1;
            if counter % stride != 0 {
                continue;
            }
            let analytic = grads.get(id)[i];
            let numeric = central(analytic, |h| {
                let mut plus = store.clone();
                plus.get_mut(id).data_mut()[i] += h;
                let mut minus = store.clone();
                minus.get_mut(id).data_mut()[i] -= h;
                (loss(&plus) - loss(&minus)) / (2.0 * h)
            });
            report.record(&format!("{}[{i}]", store.name(id)), analytic, numeric);
        }
    }
    report
}
