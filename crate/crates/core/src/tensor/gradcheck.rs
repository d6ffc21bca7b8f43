//! Central finite-difference verification of analytic gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::Result;

/// Parameters above this size are checked on a random subsample of this
/// many elements.
pub const MAX_CHECKED: usize = 1000;

#[derive(Debug, Clone)]
pub struct ParamReport {
    pub param: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub tol: f64,
    pub params: Vec<ParamReport>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error <= self.tol)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamReport> {
        self.params.iter().filter(|p| p.max_rel_error > self.tol)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient of scalar `f` at `params` with central
/// differences `(f(p+h) - f(p-h)) / 2h`.
///
/// `f` receives fresh trainable leaves carrying the values of `params`; it
/// must be deterministic.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], step: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let leaves: Vec<Tensor> = params.iter().map(Tensor::to_param).collect();
    f(&leaves)?.backward()?;
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|l| l.grad_vec().unwrap_or_else(|| vec![0.0; l.numel()])).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let mut reports = Vec::with_capacity(params.len());
    for (pi, param) in params.iter().enumerate() {
        let n = param.numel();
        let elements: Vec<usize> = if n > MAX_CHECKED {
            let mut v = index::sample(&mut rng, n, MAX_CHECKED).into_vec();
            v.sort_unstable();
            v
        } else {
            (0..n).collect()
        };
        let mut report = ParamReport {
            param: pi,
            checked: elements.len(),
            max_rel_error: 0.0,
            worst_element: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &e in &elements {
            let eval = |delta: f64| -> Result<f64> {
                let inputs: Vec<Tensor> = params
                    .iter()
                    .enumerate()
                    .map(|(j, p)| {
                        let mut data = p.data().to_vec();
                        if j == pi {
                            data[e] += delta;
                        }
                        Tensor::new(p.shape(), data)
                    })
                    .collect::<Result<_>>()?;
                Ok(f(&inputs)?.item())
            };
            let numeric = (eval(step)? - eval(-step)?) / (2.0 * step);
            let a = analytic[pi][e];
            let err = relative_error(a, numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_element = e;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        reports.push(report);
    }
    Ok(GradReport { tol, params: reports })
}
