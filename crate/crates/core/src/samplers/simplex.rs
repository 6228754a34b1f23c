//! Projected gradient descent on the probability simplex.

use serde::{Deserialize, Serialize};

/// Euclidean projection onto `{x : x >= 0, sum x = 1}` (sort-based).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    let mut x: Vec<f64> = v.iter().map(|&vi| (vi - theta).max(0.0)).collect();
    let s: f64 = x.iter().sum();
    if s > 0.0 {
        x.iter_mut().for_each(|xi| *xi /= s);
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimplexOptions {
    pub max_iter: usize,
    /// Stop once no coordinate moves by more than this.
    pub tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self { max_iter: 500, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution {
    /// Best iterate seen.
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes a convex, smooth `f` over the simplex from `start`.
///
/// Accelerated projected gradient (FISTA) with backtracking on the local
/// Lipschitz estimate and a restart whenever the objective goes up. The
/// trial step starts at `1 / |g|_inf` and may grow by half each iteration,
/// so the method is scale-free in the gradient. Converged means the
/// projected gradient step from the extrapolated point moved no coordinate
/// by more than `tol`. The best iterate is always returned.
pub fn minimize_on_simplex<F, G>(f: F, grad: G, start: Vec<f64>, opts: SimplexOptions) -> SimplexSolution
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = project_to_simplex(&start);
    let mut fx = f(&x);
    let mut best = (x.clone(), fx);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut step = f64::NAN;
    for iter in 0..opts.max_iter {
        let g = grad(&y);
        let fy = f(&y);
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax == 0.0 {
            return SimplexSolution { x: best.0, objective: best.1, iterations: iter, converged: true };
        }
        step = if step.is_finite() { step * 1.5 } else { 1.0 / gmax };
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - step * gi).collect();
            let cand = project_to_simplex(&trial);
            let (lin, sq) = g.iter().zip(y.iter().zip(&cand)).fold((0.0, 0.0), |(l, q), (gi, (yi, ci))| {
                (l + gi * (ci - yi), q + (ci - yi) * (ci - yi))
            });
            let fc = f(&cand);
            // Upper quadratic model; the slack absorbs round-off near the optimum.
            if fc <= fy + lin + sq / (2.0 * step) + 1e-15 * fy.abs().max(1e-300) {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            return SimplexSolution { x: best.0, objective: best.1, iterations: iter + 1, converged: true };
        };
        let gap = y.iter().zip(&cand).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if fc < best.1 {
            best = (cand.clone(), fc);
        }
        if gap < opts.tol {
            return SimplexSolution { x: best.0, objective: best.1, iterations: iter + 1, converged: true };
        }
        if fc > fx {
            // Momentum overshot: drop it and restart from the last iterate.
            y = x.clone();
            t = 1.0;
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let beta = (t - 1.0) / t_next;
        y = cand.iter().zip(&x).map(|(c, xi)| c + beta * (c - xi)).collect();
        x = cand;
        fx = fc;
        t = t_next;
    }
    SimplexSolution { x: best.0, objective: best.1, iterations: opts.max_iter, converged: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn projection_examples() {
        assert_eq!(project_to_simplex(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(project_to_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_to_simplex(&[1.0, 1.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quadratic_minimum_inside() {
        let target = [0.2, 0.3, 0.5];
        let f = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum();
        let g = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
        let sol = minimize_on_simplex(f, g, vec![1.0, 0.0, 0.0], SimplexOptions::default());
        assert!(sol.converged);
        for (a, b) in sol.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn projection_lands_on_simplex(v in prop::collection::vec(-3.0f64..3.0, 1..8)) {
            let p = project_to_simplex(&v);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
