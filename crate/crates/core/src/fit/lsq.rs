//! Dense nonlinear least squares over a closure, solved by Levenberg–Marquardt.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{storage::Owned, DMatrix, DVector, Dyn};

/// Residuals and Jacobian at `params`, or `None` where the model is undefined.
pub(crate) type Model<'a> = dyn Fn(&[f64]) -> Option<(Vec<f64>, DMatrix<f64>)> + 'a;

struct Problem<'a> {
    params: DVector<f64>,
    model: &'a Model<'a>,
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for Problem<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.params.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.params.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        (self.model)(self.params.as_slice()).map(|(r, _)| DVector::from_vec(r))
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        (self.model)(self.params.as_slice()).map(|(_, j)| j)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub params: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub converged: bool,
    pub reason: String,
}

/// Minimizes the squared residuals of `model` starting at `start`.
pub(crate) fn minimize(start: &[f64], model: &Model<'_>) -> Solution {
    let problem = Problem { params: DVector::from_column_slice(start), model };
    let (done, report) = LevenbergMarquardt::new().with_patience(400).minimize(problem);
    let params = done.params.as_slice().to_vec();
    let cost = model(&params).map_or(f64::INFINITY, |(r, _)| r.iter().map(|x| x * x).sum());
    Solution { params, cost, converged: report.termination.was_successful() && cost.is_finite(), reason: format!("{:?}", report.termination) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_an_exponential() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * (-1.5 * x).exp()).collect();
        let model = |p: &[f64]| {
            let mut j = DMatrix::zeros(xs.len(), 2);
            let r = xs
                .iter()
                .zip(&ys)
                .enumerate()
                .map(|(i, (x, y))| {
                    let e = (p[1] * x).exp();
                    j[(i, 0)] = e;
                    j[(i, 1)] = p[0] * x * e;
                    p[0] * e - y
                })
                .collect();
            Some((r, j))
        };
        let s = minimize(&[1.0, -1.0], &model);
        assert!(s.converged, "{}", s.reason);
        assert!((s.params[0] - 2.0).abs() < 1e-8 && (s.params[1] + 1.5).abs() < 1e-8);
    }
}
