//! Damped Gauss-Newton (Levenberg-Marquardt) solver for weighted least squares.

use nalgebra::{DMatrix, DVector};

use super::{DataSeries, FitOptions, Model};
use crate::error::{Error, Result};

pub(crate) struct Solution {
    pub params: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    /// Unscaled covariance of the free parameters, `(JᵀJ)⁻¹`.
    pub covariance: DMatrix<f64>,
    pub free: Vec<usize>,
}

struct Problem<'a> {
    model: &'a dyn Model,
    data: &'a DataSeries,
    free: Vec<usize>,
    bounds: Vec<(f64, f64)>,
}

impl Problem<'_> {
    fn residuals(&self, p: &[f64]) -> Result<DVector<f64>> {
        let d = self.data;
        let mut r = DVector::zeros(d.len());
        for i in 0..d.len() {
            let f = self.model.eval(d.x[i], p)?;
            if !f.is_finite() {
                return Err(Error::Domain(format!("model is not finite at x = {}", d.x[i])));
            }
            r[i] = (d.y[i] - f) / d.sigma[i];
        }
        Ok(r)
    }

    /// Jacobian of the weighted residuals with respect to the free parameters.
    fn jacobian(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.data;
        let mut j = DMatrix::zeros(d.len(), self.free.len());
        let mut g = vec![0.0; p.len()];
        for i in 0..d.len() {
            self.model.gradient(d.x[i], p, &mut g)?;
            for (col, &k) in self.free.iter().enumerate() {
                j[(i, col)] = -g[k] / d.sigma[i];
            }
        }
        Ok(j)
    }

    fn project(&self, p: &mut [f64]) {
        for &k in &self.free {
            let (lo, hi) = self.bounds[k];
            p[k] = p[k].clamp(lo, hi);
        }
    }
}

/// `(JᵀJ)⁻¹` computed on the column-equilibrated matrix.
fn covariance(jac: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let jtj = jac.transpose() * jac;
    let n = jtj.nrows();
    let scale = DVector::from_iterator(n, (0..n).map(|i| jtj[(i, i)].sqrt()));
    if scale.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Singular("a parameter has no influence on the model".into()));
    }
    let mut scaled = jtj.clone();
    for r in 0..n {
        for c in 0..n {
            scaled[(r, c)] /= scale[r] * scale[c];
        }
    }
    let inv = scaled
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular("normal matrix is not positive definite".into()))?;
    let mut cov = inv;
    for r in 0..n {
        for c in 0..n {
            cov[(r, c)] /= scale[r] * scale[c];
        }
    }
    Ok(cov)
}

pub(crate) fn solve(model: &dyn Model, data: &DataSeries, initial: &[f64], options: &FitOptions) -> Result<Solution> {
    let n_params = model.parameters().len();
    let fixed = |k: usize| options.fixed.get(k).copied().unwrap_or(false);
    let free: Vec<usize> = (0..n_params).filter(|&k| !fixed(k)).collect();
    let bounds = options
        .bounds
        .clone()
        .unwrap_or_else(|| vec![(f64::NEG_INFINITY, f64::INFINITY); n_params]);
    let problem = Problem { model, data, free, bounds };

    let mut p = initial.to_vec();
    let mut r = problem.residuals(&p)?;
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let n_free = problem.free.len();

    if n_free > 0 {
        let mut jac = problem.jacobian(&p)?;
        loop {
            if iterations >= options.max_iterations {
                return Err(Error::NotConverged {
                    iterations,
                    cost,
                    damping: lambda,
                });
            }
            iterations += 1;
            let jtj = jac.transpose() * &jac;
            let grad = jac.transpose() * &r;
            let mut accepted = None;
            while lambda <= 1e16 {
                let mut a = jtj.clone();
                for i in 0..n_free {
                    a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
                }
                let Some(chol) = a.cholesky() else {
                    lambda *= 10.0;
                    continue;
                };
                let step = chol.solve(&(-&grad));
                let mut trial = p.clone();
                for (col, &k) in problem.free.iter().enumerate() {
                    trial[k] += step[col];
                }
                problem.project(&mut trial);
                match problem.residuals(&trial) {
                    Ok(r_trial) => {
                        let c = r_trial.norm_squared();
                        if c < cost {
                            accepted = Some((trial, r_trial, c));
                            break;
                        }
                    }
                    Err(Error::Domain(_)) => {}
                    Err(e) => return Err(e),
                }
                lambda *= 10.0;
            }
            let Some((trial, r_trial, c)) = accepted else {
                // No descent left at machine precision: we are at the minimum.
                break;
            };
            let decrease = cost - c;
            p = trial;
            r = r_trial;
            cost = c;
            lambda = (lambda / 10.0).max(1e-12);
            jac = problem.jacobian(&p)?;
            if decrease <= options.tolerance * cost || cost <= 1e-30 * data.len() as f64 {
                break;
            }
        }
    }

    let covariance = if n_free > 0 {
        covariance(&problem.jacobian(&p)?)?
    } else {
        DMatrix::zeros(0, 0)
    };
    Ok(Solution {
        params: p,
        cost,
        iterations,
        covariance,
        free: problem.free,
    })
}
