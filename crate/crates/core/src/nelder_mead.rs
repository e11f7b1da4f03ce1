//! Bounded Nelder–Mead simplex minimizer.

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    /// Initial simplex step per coordinate.
    pub steps: Vec<f64>,
    /// Convergence threshold on the spread of objective values.
    pub f_tol: f64,
    /// Convergence threshold on the largest vertex offset from the best vertex.
    pub x_tol: f64,
    pub max_iterations: usize,
    /// Box constraints. Vertices may leave the box; the objective is then
    /// evaluated at the projection plus the squared distance to it.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NelderMeadOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Simplex collapsed while the objective values still disagreed.
    pub degenerate: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

pub fn minimize<F>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> NelderMeadOutcome
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(opts.steps.len(), n);
    assert_eq!(opts.lower.len(), n);
    assert_eq!(opts.upper.len(), n);

    let project = |x: &mut Vec<f64>| {
        for ((v, lo), hi) in x.iter_mut().zip(&opts.lower).zip(&opts.upper) {
            *v = v.clamp(*lo, *hi);
        }
    };
    let eval = |x: &[f64]| {
        let mut p = x.to_vec();
        project(&mut p);
        let outside: f64 = x.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
        let v = f(&p) + outside;
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    project(&mut start);
    simplex.push(start.clone());
    for i in 0..n {
        let mut v = start.clone();
        v[i] += opts.steps[i];
        if v[i] > opts.upper[i] {
            v[i] -= 2.0 * opts.steps[i];
        }
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();

    let mut iterations = 0;
    let mut converged = false;
    let mut degenerate = false;
    while iterations < opts.max_iterations {
        // Stable sort keeps tie order deterministic.
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let f_spread = values[n] - values[0];
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if f_spread <= opts.f_tol && x_spread <= opts.x_tol {
            converged = true;
            break;
        }
        if x_spread <= f64::EPSILON * (1.0 + simplex[0].iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            degenerate = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |coef: f64| {
            (0..n)
                .map(|k| centroid[k] + coef * (centroid[k] - simplex[n][k]))
                .collect::<Vec<f64>>()
        };

        let reflected = along(REFLECT);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = along(EXPAND);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let p = along(REFLECT * CONTRACT);
            let fp = eval(&p);
            (p, fp)
        } else {
            let p = along(-CONTRACT);
            let fp = eval(&p);
            (p, fp)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            for k in 0..n {
                simplex[i][k] = best[k] + SHRINK * (simplex[i][k] - best[k]);
            }
            values[i] = eval(&simplex[i]);
        }
    }

    let best = (0..=n)
        .min_by(|&i, &j| values[i].total_cmp(&values[j]))
        .expect("non-empty simplex");
    let mut x = simplex[best].clone();
    project(&mut x);
    let fx = if x == simplex[best] { values[best] } else { f(&x) };
    NelderMeadOutcome {
        x,
        f: fx,
        iterations,
        converged,
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(n: usize) -> NelderMeadOptions {
        NelderMeadOptions {
            steps: vec![0.5; n],
            f_tol: 1e-14,
            x_tol: 1e-7,
            max_iterations: 5000,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let out = minimize(f, &[-1.2, 1.0], &opts(2));
        assert!(out.converged);
        assert!(
            (out.x[0] - 1.0).abs() < 1e-5 && (out.x[1] - 1.0).abs() < 1e-5,
            "{:?}",
            out.x
        );
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2);
        let mut o = opts(2);
        o.upper = vec![2.0, 10.0];
        let out = minimize(f, &[0.0, 0.0], &o);
        assert!((out.x[0] - 2.0).abs() < 1e-6, "{out:?}");
        assert!((out.x[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64]| x.iter().map(|v| v.abs()).sum::<f64>();
        let x0 = [0.3, -0.2, 0.1];
        let out = minimize(f, &x0, &opts(3));
        assert!(out.f <= f(&x0));
    }
}
