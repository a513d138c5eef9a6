//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Result, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    /// Check at most this many seeded coordinates per input (all if `None`).
    pub coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            floor: 1e-6,
            coords_per_input: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoordReport {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Worst coordinate per input tensor.
    pub worst: Vec<Option<CoordReport>>,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.worst.iter().flatten().map(|c| c.rel_err).fold(0.0, f64::max)
    }

    /// Inputs whose worst coordinate exceeds `tol`.
    pub fn failures(&self, tol: f64) -> Vec<&CoordReport> {
        self.worst.iter().flatten().filter(|c| c.rel_err >= tol).collect()
    }
}

/// Compares reverse-mode gradients of the scalar `f` with central differences
/// at every (or a seeded sample of) coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let analytic: Vec<Tensor> = {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let root = f(&g, &vars)?;
        let grads = g.backward(root)?;
        vars.iter()
            .zip(inputs)
            .map(|(v, t)| grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    };

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&g, &vars)?.scalar())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = match opts.coords_per_input {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut worst: Option<CoordReport> = None;
        for c in coords {
            let orig = input.data()[c];
            work[i].data_mut()[c] = orig + opts.step;
            let plus = eval(&work)?;
            work[i].data_mut()[c] = orig - opts.step;
            let minus = eval(&work)?;
            work[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[i].data()[c];
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            let rel_err = (a - numeric).abs() / denom;
            report.coords_checked += 1;
            if worst.as_ref().is_none_or(|w| rel_err > w.rel_err) {
                worst = Some(CoordReport {
                    input: i,
                    coord: c,
                    analytic: a,
                    numeric,
                    rel_err,
                });
            }
        }
        report.worst.push(worst);
    }
    Ok(report)
}
