//! BFGS with Armijo backtracking.

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub armijo_c1: f64,
    pub shrink: f64,
    pub max_line_steps: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { max_iters: 500, grad_tol: 1e-8, armijo_c1: 1e-4, shrink: 0.5, max_line_steps: 60 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after every accepted step, starting with the initial point.
    pub history: Vec<f64>,
}

/// Minimizes `f`. `value` evaluates the objective only (used by the line
/// search); `value_grad` returns the objective and its gradient.
pub fn minimize(
    x0: &[f64],
    value: impl Fn(&[f64]) -> f64,
    value_grad: impl Fn(&[f64]) -> (f64, Vec<f64>),
    opts: &BfgsOptions,
) -> BfgsResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = value_grad(&x);
    let mut history = vec![fx];
    let mut h = identity(n);
    let mut converged = false;
    let mut iterations = 0;
    if n == 0 || !fx.is_finite() {
        return BfgsResult { x, value: fx, grad_norm: 0.0, iterations, converged: n == 0, history };
    }
    while iterations < opts.max_iters {
        let gnorm = norm(&g);
        if gnorm <= opts.grad_tol {
            converged = true;
            break;
        }
        let mut p = mat_vec(&h, &g, n);
        p.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&p, &g);
        if !(slope < 0.0) {
            h = identity(n);
            p = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        // First iteration: scale so the trial step has unit length.
        let mut alpha = if iterations == 0 { (1.0 / norm(&p)).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..opts.max_line_steps {
            let trial: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + alpha * b).collect();
            let ft = value(&trial);
            if ft.is_finite() && ft <= fx + opts.armijo_c1 * alpha * slope {
                accepted = Some(trial);
                break;
            }
            alpha *= opts.shrink;
        }
        let Some(x_new) = accepted else {
            // No decrease representable at this precision: treat as converged
            // when the gradient is already tiny relative to the objective scale.
            converged = gnorm <= 1e-6 * fx.abs().max(1.0);
            break;
        };
        let (f_new, g_new) = value_grad(&x_new);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if iterations == 0 {
                // Rescale the initial inverse Hessian (Nocedal & Wright 6.20).
                let scale = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= scale);
            }
            bfgs_update(&mut h, &s, &y, sy, n);
        }
        let stalled = f_new == fx;
        x = x_new;
        fx = f_new;
        g = g_new;
        history.push(fx);
        iterations += 1;
        if stalled && norm(&g) <= 1e-6 * fx.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    let grad_norm = norm(&g);
    if grad_norm <= opts.grad_tol {
        converged = true;
    }
    BfgsResult { x, value: fx, grad_norm, iterations, converged, history }
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64, n: usize) {
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y, n);
    let yhy = dot(y, &hy);
    let coef = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn mat_vec(m: &[f64], v: &[f64], n: usize) -> Vec<f64> {
    m.chunks_exact(n).map(|row| dot(row, v)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    fn rosenbrock_grad(x: &[f64]) -> (f64, Vec<f64>) {
        let g0 = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
        let g1 = 200.0 * (x[1] - x[0] * x[0]);
        (rosenbrock(x), vec![g0, g1])
    }

    #[test]
    fn solves_rosenbrock() {
        let r = minimize(&[-1.2, 1.0], rosenbrock, rosenbrock_grad, &BfgsOptions::default());
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn quadratic_in_few_steps() {
        let f = |x: &[f64]| x[0] * x[0] + 10.0 * x[1] * x[1] + x[0] * x[1];
        let fg = |x: &[f64]| (f(x), vec![2.0 * x[0] + x[1], 20.0 * x[1] + x[0]]);
        let r = minimize(&[3.0, -2.0], f, fg, &BfgsOptions::default());
        assert!(r.converged);
        assert!(r.iterations < 30);
        assert!(r.x.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let opts = BfgsOptions { max_iters: 3, ..Default::default() };
        let r = minimize(&[-1.2, 1.0], rosenbrock, rosenbrock_grad, &opts);
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
        assert!(r.value < rosenbrock(&[-1.2, 1.0]));
    }
}
