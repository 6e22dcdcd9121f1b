//! Central finite-difference verification of reverse-mode gradients.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub tolerance: f64,
    pub step: f64,
    /// Fraction of coordinates sampled per tensor.
    pub fraction: f64,
    /// Lower bound on sampled coordinates per tensor (capped at its size).
    pub min_coords: usize,
    /// Denominator floor of the relative error, so that vanishing gradients
    /// are compared absolutely.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            step: 1e-5,
            fraction: 0.01,
            min_coords: 32,
            abs_floor: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoordError {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub failures: Vec<CoordError>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.failures.is_empty())
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            Ok(self)
        } else {
            Err(Error::GradCheck(self.to_string()))
        }
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tensors {
            write!(
                f,
                "{:<28} coords={:<5} max_rel={:.3e}",
                t.name, t.checked, t.max_rel_error
            )?;
            if !t.failures.is_empty() {
                write!(f, "  FAIL at")?;
                for c in t.failures.iter().take(5) {
                    write!(
                        f,
                        " [{}: analytic {:.6e} numeric {:.6e}]",
                        c.index, c.analytic, c.numeric
                    )?;
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Builds the loss on a fresh graph from the given parameter leaves.
pub trait LossFn: Fn(&mut Graph<f64>, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>> LossFn for F {}

fn evaluate(forward: &impl LossFn, params: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.constant(p.clone())).collect();
    let loss = forward(&mut g, &vars)?;
    Ok(g.value(loss).data()[0])
}

/// Reverse-mode gradients of `forward` at `params`.
pub fn analytic_gradients(forward: &impl LossFn, params: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p)).collect();
    let loss = forward(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    Ok(vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect())
}

/// Compares supplied analytic gradients against central differences on a
/// random subsample of coordinates.
pub fn compare_gradients(
    forward: &impl LossFn,
    names: &[String],
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut tensors = Vec::with_capacity(params.len());
    for (t, name) in names.iter().enumerate() {
        let n = params[t].numel();
        let want = ((n as f64 * opts.fraction).ceil() as usize).max(opts.min_coords).min(n);
        let mut coords = sample(&mut rng, n, want).into_vec();
        coords.sort_unstable();
        let mut check = TensorCheck {
            name: name.clone(),
            checked: coords.len(),
            max_rel_error: 0.0,
            failures: Vec::new(),
        };
        for &i in &coords {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + opts.step;
            let up = evaluate(forward, &work)?;
            work[t].data_mut()[i] = orig - opts.step;
            let down = evaluate(forward, &work)?;
            work[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic[t].data()[i];
            let denom = a.abs().max(numeric.abs()).max(opts.abs_floor);
            let rel = (a - numeric).abs() / denom;
            check.max_rel_error = check.max_rel_error.max(rel);
            if !(rel <= opts.tolerance) {
                check.failures.push(CoordError {
                    index: i,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
        tensors.push(check);
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        tensors,
    })
}

/// Full check: reverse sweep, then finite differences on sampled coordinates.
pub fn gradient_check(
    forward: impl LossFn,
    names: &[String],
    params: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    assert_eq!(names.len(), params.len());
    let analytic = analytic_gradients(&forward, params)?;
    compare_gradients(&forward, names, params, &analytic, opts)
}
