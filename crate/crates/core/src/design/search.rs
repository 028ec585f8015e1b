//! Derivative-free minimizers over a box.

/// Outcome of a local search.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((xi, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *xi = xi.clamp(*l, *h);
    }
}

/// Nelder-Mead with every trial point projected onto `[lo, hi]`. The
/// initial simplex steps `step[i]` along each axis. Stops once the simplex
/// spread in `f` drops below `f_tol`, the best value reaches `target`, or
/// `max_evals` is spent.
#[allow(clippy::too_many_arguments)]
pub fn nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    lo: &[f64],
    hi: &[f64],
    f_tol: f64,
    target: f64,
    max_evals: usize,
) -> SearchResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut start = x0.to_vec();
    project(&mut start, lo, hi);
    let mut simplex = vec![start.clone()];
    for i in 0..n {
        let mut v = start.clone();
        v[i] += step[i];
        if v[i] > hi[i] {
            v[i] = start[i] - step[i];
        }
        project(&mut v, lo, hi);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let (best, worst) = (values[0], values[n]);
        if best <= target || evals >= max_evals || (worst - best).abs() <= f_tol {
            break;
        }

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, vi) in centroid.iter_mut().zip(v) {
                *c += vi / n as f64;
            }
        }
        let along = |t: f64| {
            let mut p: Vec<f64> = centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect();
            project(&mut p, lo, hi);
            p
        };

        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < values[0] {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        for i in 1..=n {
            let mut p: Vec<f64> = simplex[0]
                .iter()
                .zip(&simplex[i])
                .map(|(b, v)| b + 0.5 * (v - b))
                .collect();
            project(&mut p, lo, hi);
            values[i] = eval(&p, &mut evals);
            simplex[i] = p;
        }
    }
    SearchResult {
        x: simplex.swap_remove(0),
        f: values[0],
        evals,
    }
}

/// Compass (coordinate) pattern search on the unit cube. Polls `+h, -h`
/// along each axis in order, moves to the first improvement, and halves `h`
/// after a failed poll until `h < mesh_tol`.
pub fn compass_search<F>(mut f: F, u0: &[f64], mesh0: f64, mesh_tol: f64, max_evals: usize) -> SearchResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = u0.len();
    let mut u: Vec<f64> = u0.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    let mut fu = f(&u);
    let mut evals = 1;
    let mut h = mesh0;
    'outer: while h >= mesh_tol && evals < max_evals {
        for i in 0..n {
            for sign in [1.0, -1.0] {
                let trial_i = (u[i] + sign * h).clamp(0.0, 1.0);
                if trial_i == u[i] {
                    continue;
                }
                let mut trial = u.clone();
                trial[i] = trial_i;
                let ft = f(&trial);
                evals += 1;
                if ft < fu {
                    u = trial;
                    fu = ft;
                    continue 'outer;
                }
                if evals >= max_evals {
                    break 'outer;
                }
            }
        }
        h *= 0.5;
    }
    SearchResult { x: u, f: fu, evals }
}
