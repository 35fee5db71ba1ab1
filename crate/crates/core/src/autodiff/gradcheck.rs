//! Central finite-difference verification of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Pass threshold on the max relative error of every input.
    pub tolerance: f64,
    /// Elements with `|x| < kink_radius` are excluded and reported as kinks.
    pub kink_radius: Option<f64>,
    /// Denominator floor for the relative error.
    pub abs_floor: f64,
    /// Check at most this many seeded-random elements per input.
    pub sample: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-6,
            kink_radius: None,
            abs_floor: 1e-6,
            sample: None,
            seed: 0,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct InputReport {
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub checked: usize,
    /// Flat indices skipped as nondifferentiable points.
    pub kinks: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` gradients of `eval` at `point` against central differences.
pub fn compare_with_finite_differences(
    mut eval: impl FnMut(&[Tensor]) -> Result<f64>,
    point: &[Tensor],
    analytic: &[Tensor],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if point.len() != analytic.len() {
        return Err(Error::InvalidArgument("one analytic gradient per input required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut work: Vec<Tensor> = point.to_vec();
    let mut inputs = Vec::with_capacity(point.len());
    for (k, (x, grad)) in point.iter().zip(analytic).enumerate() {
        if x.shape() != grad.shape() {
            return Err(Error::ShapeMismatch {
                op: "gradcheck",
                lhs: x.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        let mut indices: Vec<usize> = (0..x.numel()).collect();
        if let Some(n) = opts.sample {
            // Partial Fisher-Yates: deterministic subset of size n.
            let n = n.min(indices.len());
            for i in 0..n {
                let j = rng.gen_range(i..indices.len());
                indices.swap(i, j);
            }
            indices.truncate(n);
        }
        let mut report = InputReport::default();
        for idx in indices {
            let x0 = x.data()[idx];
            if opts.kink_radius.is_some_and(|r| x0.abs() < r) {
                report.kinks.push(idx);
                continue;
            }
            work[k].data_mut()[idx] = x0 + opts.step;
            let fp = eval(&work)?;
            work[k].data_mut()[idx] = x0 - opts.step;
            let fm = eval(&work)?;
            work[k].data_mut()[idx] = x0;
            let numeric = (fp - fm) / (2.0 * opts.step);
            let err = relative_error(grad.data()[idx], numeric, opts.abs_floor);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_index = idx;
            }
            report.checked += 1;
        }
        inputs.push(report);
    }
    let passed = inputs.iter().all(|r| r.max_rel_error < opts.tolerance);
    Ok(GradCheckReport {
        inputs,
        tolerance: opts.tolerance,
        passed,
    })
}

/// Checks the tape gradients of `op` at `inputs`.
///
/// Non-scalar outputs are contracted with a fixed seeded random weighting so
/// that ops with constant sums (softmax) still get a meaningful check.
pub fn check_gradients<F>(op: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let y = op(&mut g, &vars)?;
    let w = g.constant(weights_for(&g, y, opts.seed));
    let prod = g.mul(y, w)?;
    let root = g.sum(prod)?;
    let mut grads = g.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| grads.take(v).expect("leaf gradient"))
        .collect();

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let y = op(&mut g, &vars)?;
        let w = weights_for(&g, y, opts.seed);
        Ok(g.value(y).data().iter().zip(w.data()).map(|(a, b)| a * b).sum())
    };
    compare_with_finite_differences(eval, inputs, &analytic, opts)
}

fn weights_for(g: &Graph, y: Var, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(y).to_vec();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

/// Seeded uniform tensor in `[lo, hi)`, used by tests and examples.
pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("positive shape")
}
