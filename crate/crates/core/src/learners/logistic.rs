//! L2-regularised weighted logistic regression on a handful of real inputs,
//! used to fuse screener scores.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticParams {
    /// Penalty on the coefficients (not the intercept).
    pub l2: f64,
    pub max_iter: usize,
    /// Convergence target on the largest gradient component.
    pub tolerance: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            l2: 1e-4,
            max_iter: 100,
            tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub input_names: Vec<String>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl LogisticModel {
    pub fn predict(&self, inputs: &[f64]) -> Result<f64> {
        if inputs.len() != self.coefficients.len() {
            return Err(Error::Contract(format!(
                "{} inputs, model expects {}",
                inputs.len(),
                self.coefficients.len()
            )));
        }
        let z = self.intercept + dot(&self.coefficients, inputs);
        Ok(sigmoid(z))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Penalised mean negative log-likelihood over parameters laid out as
/// `[intercept, coefficients...]`.
pub struct LogisticObjective<'a> {
    pub inputs: &'a [Vec<f64>],
    pub positive: &'a [bool],
    pub weights: &'a [f64],
    pub l2: f64,
    total: f64,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(inputs: &'a [Vec<f64>], positive: &'a [bool], weights: &'a [f64], l2: f64) -> Result<Self> {
        let n = inputs.len();
        if positive.len() != n || weights.len() != n {
            return Err(Error::Contract("inputs, labels and weights differ in length".into()));
        }
        if n == 0 {
            return Err(Error::Training("no samples".into()));
        }
        let d = inputs[0].len();
        if inputs.iter().any(|x| x.len() != d) {
            return Err(Error::Contract("ragged input rows".into()));
        }
        if inputs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite input".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Parameter("weights must be finite and non-negative".into()));
        }
        if !(l2.is_finite() && l2 >= 0.0) {
            return Err(Error::Parameter(format!("l2 penalty {l2} is invalid")));
        }
        let total: f64 = weights.iter().sum();
        let pos: f64 = weights.iter().zip(positive).filter(|(_, p)| **p).map(|(w, _)| w).sum();
        if pos <= 0.0 || pos >= total {
            return Err(Error::Training("fusion data must contain both classes".into()));
        }
        Ok(LogisticObjective {
            inputs,
            positive,
            weights,
            l2,
            total,
        })
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len() + 1
    }

    fn margin(&self, beta: &[f64], x: &[f64]) -> f64 {
        beta[0] + dot(&beta[1..], x)
    }

    pub fn value(&self, beta: &[f64]) -> f64 {
        let mut loss = 0.0;
        for ((x, &y), &w) in self.inputs.iter().zip(self.positive).zip(self.weights) {
            let z = self.margin(beta, x);
            // -log p = softplus(-z), -log(1-p) = softplus(z)
            loss += w * if y { softplus(-z) } else { softplus(z) };
        }
        loss / self.total + 0.5 * self.l2 * beta[1..].iter().map(|b| b * b).sum::<f64>()
    }

    pub fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        for ((x, &y), &w) in self.inputs.iter().zip(self.positive).zip(self.weights) {
            let r = w * (sigmoid(self.margin(beta, x)) - if y { 1.0 } else { 0.0 });
            g[0] += r;
            for (gj, xj) in g[1..].iter_mut().zip(x) {
                *gj += r * xj;
            }
        }
        for (j, gj) in g.iter_mut().enumerate() {
            *gj /= self.total;
            if j > 0 {
                *gj += self.l2 * beta[j];
            }
        }
        g
    }

    fn hessian(&self, beta: &[f64]) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut h = vec![vec![0.0; d]; d];
        let mut xt = vec![1.0; d];
        for (x, &w) in self.inputs.iter().zip(self.weights) {
            let p = sigmoid(self.margin(beta, x));
            let c = w * p * (1.0 - p) / self.total;
            xt[1..].copy_from_slice(x);
            for a in 0..d {
                for b in 0..d {
                    h[a][b] += c * xt[a] * xt[b];
                }
            }
        }
        for (j, row) in h.iter_mut().enumerate().skip(1) {
            row[j] += self.l2;
        }
        h
    }
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting; `None`
/// when the system is numerically singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Largest gradient component accepted as converged.
pub const GRADIENT_LIMIT: f64 = 1e-6;

pub fn train_logistic(
    input_names: &[String],
    inputs: &[Vec<f64>],
    positive: &[bool],
    weights: &[f64],
    params: &LogisticParams,
) -> Result<LogisticModel> {
    let obj = LogisticObjective::new(inputs, positive, weights, params.l2)?;
    if obj.dim() != input_names.len() + 1 {
        return Err(Error::Contract("input names do not match input width".into()));
    }
    let d = obj.dim();
    let mut beta = vec![0.0; d];
    let mut f = obj.value(&beta);
    for _ in 0..params.max_iter {
        let g = obj.gradient(&beta);
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax <= params.tolerance {
            break;
        }
        let mut h = obj.hessian(&beta);
        // a whisker of damping keeps separable data solvable
        for (j, row) in h.iter_mut().enumerate() {
            row[j] += 1e-12;
        }
        let step = solve(h, g.clone()).unwrap_or(g);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b - t * s).collect();
            let fc = obj.value(&cand);
            if fc <= f {
                beta = cand;
                f = fc;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let gmax = obj.gradient(&beta).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if gmax > GRADIENT_LIMIT {
        return Err(Error::Training(format!(
            "logistic fit did not converge (gradient {gmax:.3e})"
        )));
    }
    Ok(LogisticModel {
        input_names: input_names.to_vec(),
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn noisy(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>, Vec<f64>) {
        let mut rng = crate::rng::rng_from(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut ws = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.gen();
            let b: f64 = rng.gen();
            let p = sigmoid(-2.0 + 3.0 * a + 1.0 * b);
            ys.push(rng.gen::<f64>() < p);
            xs.push(vec![a, b]);
            ws.push(rng.gen_range(0.5..2.0));
        }
        (xs, ys, ws)
    }

    fn names() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (xs, ys, ws) = noisy(200, 1);
        let obj = LogisticObjective::new(&xs, &ys, &ws, 1e-2).unwrap();
        let beta = [0.3, -0.7, 1.1];
        let g = obj.gradient(&beta);
        let h = 1e-5;
        for j in 0..3 {
            let mut up = beta;
            let mut dn = beta;
            up[j] += h;
            dn[j] -= h;
            let fd = (obj.value(&up) - obj.value(&dn)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6, "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn fit_reaches_a_stationary_point() {
        let (xs, ys, ws) = noisy(400, 2);
        let model = train_logistic(&names(), &xs, &ys, &ws, &LogisticParams::default()).unwrap();
        let obj = LogisticObjective::new(&xs, &ys, &ws, 1e-4).unwrap();
        let mut beta = vec![model.intercept];
        beta.extend(&model.coefficients);
        assert!(obj.gradient(&beta).iter().all(|g| g.abs() <= GRADIENT_LIMIT));
        assert!(model.coefficients[0] > 0.0);
    }

    #[test]
    fn separable_data_still_converges_under_the_penalty() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 20.0, 0.0]).collect();
        let ys: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let ws = vec![1.0; 20];
        let params = LogisticParams { l2: 1e-2, ..Default::default() };
        let model = train_logistic(&names(), &xs, &ys, &ws, &params).unwrap();
        assert!(model.predict(&[0.95, 0.0]).unwrap() > 0.5);
        assert!(model.predict(&[0.05, 0.0]).unwrap() < 0.5);
    }

    #[test]
    fn one_class_is_rejected() {
        let xs = vec![vec![0.1, 0.2]; 5];
        let ys = vec![true; 5];
        let ws = vec![1.0; 5];
        assert!(matches!(
            train_logistic(&names(), &xs, &ys, &ws, &LogisticParams::default()),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn zero_inputs_with_balanced_classes_score_one_half() {
        let xs = vec![vec![0.0, 0.0]; 10];
        let ys: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        let model = train_logistic(&names(), &xs, &ys, &[1.0; 10], &LogisticParams::default()).unwrap();
        assert!(model.intercept.abs() < 1e-9);
        assert!((model.predict(&[0.0, 0.0]).unwrap() - 0.5).abs() < 1e-9);
    }
}
