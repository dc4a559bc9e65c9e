//! Derivative-free minimization (Nelder-Mead simplex).

#[derive(Debug, Clone, Copy)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Stop when the simplex values spread less than `f_tol * (1 + |f_best|)`...
    pub f_tol: f64,
    /// ...and every vertex lies within `x_tol` (max-norm) of the best one.
    pub x_tol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self { max_evals: 5000, f_tol: 1e-10, x_tol: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

impl NelderMead {
    /// Minimize `f` from `x0` with an initial simplex of one `step[i]` move
    /// per coordinate. Non-finite objective values count as +inf.
    pub fn minimize<F>(&self, mut f: F, x0: &[f64], step: &[f64]) -> Minimum
    where
        F: FnMut(&[f64]) -> f64,
    {
        assert_eq!(x0.len(), step.len(), "one step per coordinate");
        let dim = x0.len();
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };

        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
        simplex.push((x0.to_vec(), eval(x0, &mut evals)));
        for i in 0..dim {
            let mut x = x0.to_vec();
            x[i] += if step[i] != 0.0 { step[i] } else { 1e-3 };
            let v = eval(&x, &mut evals);
            simplex.push((x, v));
        }
        if dim == 0 {
            let (x, value) = simplex.pop().expect("one vertex");
            return Minimum { x, value, evals, converged: true };
        }

        let mut converged = false;
        while evals < self.max_evals {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let worst = simplex[dim].1;
            let spread = worst - best;
            let diameter = simplex[1..]
                .iter()
                .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if spread == 0.0 && best.is_finite() || spread <= self.f_tol * (1.0 + best.abs()) && diameter <= self.x_tol
            {
                converged = true;
                break;
            }

            let centroid: Vec<f64> =
                (0..dim).map(|j| simplex[..dim].iter().map(|(x, _)| x[j]).sum::<f64>() / dim as f64).collect();
            let along =
                |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[dim].0).map(|(c, w)| c + t * (w - c)).collect() };

            let reflected = along(-1.0);
            let fr = eval(&reflected, &mut evals);
            if fr < simplex[0].1 {
                let expanded = along(-2.0);
                let fe = eval(&expanded, &mut evals);
                simplex[dim] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
                continue;
            }
            if fr < simplex[dim - 1].1 {
                simplex[dim] = (reflected, fr);
                continue;
            }
            let (contracted, fc) = if fr < worst {
                let x = along(-0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            } else {
                let x = along(0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            };
            if fc < worst.min(fr) {
                simplex[dim] = (contracted, fc);
                continue;
            }
            // shrink toward the best vertex
            let best_x = simplex[0].0.clone();
            for vertex in simplex.iter_mut().skip(1) {
                let x: Vec<f64> = best_x.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                let v = eval(&x, &mut evals);
                *vertex = (x, v);
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, value) = simplex.swap_remove(0);
        Minimum { x, value, evals, converged }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_rosenbrock_minimum() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = NelderMead::default().minimize(rosen, &[-1.2, 1.0], &[0.5, 0.5]);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn one_dimensional_quadratic() {
        let m = NelderMead::default().minimize(|x| (x[0] - 3.0).powi(2) + 2.0, &[0.0], &[1.0]);
        assert!((m.x[0] - 3.0).abs() < 1e-5);
        assert!((m.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_regions_are_avoided() {
        let f = |x: &[f64]| {
            if x[0] < 0.0 {
                f64::NAN
            } else {
                (x[0] - 0.5).powi(2) + x[1].powi(2)
            }
        };
        let m = NelderMead::default().minimize(f, &[2.0, 1.0], &[1.0, 1.0]);
        assert!((m.x[0] - 0.5).abs() < 1e-4 && m.x[1].abs() < 1e-4);
    }

    #[test]
    fn respects_eval_budget() {
        let opts = NelderMead { max_evals: 20, ..Default::default() };
        let m = opts.minimize(|x| x.iter().map(|v| v * v).sum(), &[5.0; 4], &[1.0; 4]);
        assert!(m.evals <= 20 + 4);
        assert!(!m.converged);
    }
}
