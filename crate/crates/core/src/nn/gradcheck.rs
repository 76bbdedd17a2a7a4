//! Central finite-difference verification of analytic gradients.

use std::rc::Rc;

use rand::{seq::index::sample, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::graph::{Graph, Var};
use super::tensor::Tensor4;
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Denominator floor: `|a − n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Check at most this many elements per input (sampled without replacement).
    pub max_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            floor: 1e-6,
            max_per_input: None,
            seed: 0x5eed,
        }
    }
}

impl GradCheckOptions {
    pub fn with_h(h: f64) -> Self {
        Self {
            h,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `grad(inputs)` against central differences of the scalar
/// function `f`.
pub fn grad_check_fn(
    inputs: &[Tensor4],
    opts: &GradCheckOptions,
    f: impl Fn(&[Tensor4]) -> Result<f64>,
    grad: impl Fn(&[Tensor4]) -> Result<Vec<Tensor4>>,
) -> Result<GradCheckReport> {
    let analytic = grad(inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor4> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (ii, input) in inputs.iter().enumerate() {
        let n = input.len();
        let indices: Vec<usize> = match opts.max_per_input {
            Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        for idx in indices {
            let orig = input.data()[idx];
            work[ii].data_mut()[idx] = orig + opts.h;
            let fp = f(&work)?;
            work[ii].data_mut()[idx] = orig - opts.h;
            let fm = f(&work)?;
            work[ii].data_mut()[idx] = orig;
            let numeric = (fp - fm) / (2.0 * opts.h);
            let a = analytic[ii].data()[idx];
            let err = relative_error(a, numeric, opts.floor);
            report.checked += 1;
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                report.worst_input = ii;
                report.worst_index = idx;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Fixed pseudo-random probe used to reduce tensor outputs to scalars.
pub fn probe(len: usize, seed: u64) -> Rc<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Rc::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Gradient check of a graph-building closure. Non-scalar outputs are
/// reduced with a fixed random probe.
pub fn grad_check<F>(inputs: &[Tensor4], opts: &GradCheckOptions, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let scalar = |g: &mut Graph, vars: &[Var]| -> Result<Var> {
        let out = build(g, vars)?;
        let len = g.value(out).len();
        if len == 1 {
            Ok(out)
        } else {
            g.dot(out, probe(len, opts.seed ^ 0xabcd))
        }
    };
    let f = |xs: &[Tensor4]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone())).collect();
        let out = scalar(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };
    let grad = |xs: &[Tensor4]| -> Result<Vec<Tensor4>> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone())).collect();
        let out = scalar(&mut g, &vars)?;
        let mut grads = g.backward(out)?;
        Ok(vars
            .iter()
            .zip(xs)
            .map(|(v, x)| grads.take(*v).unwrap_or_else(|| Tensor4::zeros(x.shape())))
            .collect())
    };
    grad_check_fn(inputs, opts, f, grad)
}
