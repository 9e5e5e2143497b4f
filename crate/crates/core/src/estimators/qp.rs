//! Dense convex quadratic programs with simple bounds.
//!
//! Minimizes `z' H z - 2 b' z` for symmetric positive definite `H`, with
//! optional `lower <= z_j <= upper` bounds on a subset of the variables,
//! using a primal active-set method.

use nalgebra::{DMatrix, DVector};

use super::{Bound, EstimatorError};

/// Bounds on one decision variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxConstraint {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Bounds in the final working set, sorted by variable index.
    pub active: Vec<(usize, Bound)>,
    pub converged: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
}

pub fn solve_unconstrained(h: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, EstimatorError> {
    band_cholesky_solve(h, b)
}

/// Largest `|i - j|` with a nonzero entry.
fn half_bandwidth(h: &DMatrix<f64>) -> usize {
    let n = h.nrows();
    let mut p = 0;
    for i in 0..n {
        for j in 0..i {
            if h[(i, j)] != 0.0 {
                p = p.max(i - j);
                break;
            }
        }
    }
    p
}

/// Cholesky solve restricted to the band of `h`; the window Hessians have
/// half-bandwidth 3, so this is linear in the window length.
fn band_cholesky_solve(h: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, EstimatorError> {
    let n = h.nrows();
    let p = half_bandwidth(h);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let lo = j.saturating_sub(p);
        let mut diag = h[(j, j)];
        for k in lo..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) {
            return Err(EstimatorError::Singular);
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n.min(j + p + 1) {
            let mut v = h[(i, j)];
            for k in i.saturating_sub(p)..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    let mut x = b.clone();
    for i in 0..n {
        let mut v = x[i];
        for k in i.saturating_sub(p)..i {
            v -= l[(i, k)] * x[k];
        }
        x[i] = v / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut v = x[i];
        for k in (i + 1)..n.min(i + p + 1) {
            v -= l[(k, i)] * x[k];
        }
        x[i] = v / l[(i, i)];
    }
    Ok(x)
}

/// Scaled KKT residual: stationarity on free variables and multiplier sign
/// on the active bounds, relative to `max(1, |b|_inf)`.
pub fn kkt_residual(h: &DMatrix<f64>, b: &DVector<f64>, z: &DVector<f64>, active: &[(usize, Bound)]) -> f64 {
    let g = h * z - b;
    let scale = b.amax().max(1.0);
    let mut worst = 0.0_f64;
    let mut is_active = vec![None; z.len()];
    for &(j, bound) in active {
        is_active[j] = Some(bound);
    }
    for (j, gj) in g.iter().enumerate() {
        let r = match is_active[j] {
            None => gj.abs(),
            Some(Bound::Lower) => (-gj).max(0.0),
            Some(Bound::Upper) => gj.max(0.0),
        };
        worst = worst.max(r);
    }
    worst / scale
}

/// Equality-constrained subproblem: variables in `fixed` held at their
/// current values, the rest minimized.
fn solve_fixed(
    h: &DMatrix<f64>,
    b: &DVector<f64>,
    z: &DVector<f64>,
    fixed: &[Option<Bound>],
) -> Result<DVector<f64>, EstimatorError> {
    let free: Vec<usize> = (0..z.len()).filter(|&j| fixed[j].is_none()).collect();
    let mut out = z.clone();
    if free.is_empty() {
        return Ok(out);
    }
    let nf = free.len();
    let mut hff = DMatrix::zeros(nf, nf);
    let mut rhs = DVector::zeros(nf);
    for (a, &i) in free.iter().enumerate() {
        let mut r = b[i];
        for j in 0..z.len() {
            if fixed[j].is_some() {
                r -= h[(i, j)] * z[j];
            }
        }
        rhs[a] = r;
        for (c, &j) in free.iter().enumerate() {
            hff[(a, c)] = h[(i, j)];
        }
    }
    let zf = band_cholesky_solve(&hff, &rhs)?;
    for (a, &i) in free.iter().enumerate() {
        out[i] = zf[a];
    }
    Ok(out)
}

/// Primal active-set method started from the projection of the
/// unconstrained minimizer onto the box. Ties between entering or leaving
/// constraints go to the lowest variable index.
pub fn solve_box_qp(
    h: &DMatrix<f64>,
    b: &DVector<f64>,
    constraints: &[BoxConstraint],
    tol: f64,
    max_iter: usize,
) -> Result<QpSolution, EstimatorError> {
    let n = b.len();
    let mut z = solve_unconstrained(h, b)?;
    let mut bounds: Vec<Option<(f64, f64)>> = vec![None; n];
    for c in constraints {
        bounds[c.index] = Some((c.lower, c.upper));
    }

    let mut fixed: Vec<Option<Bound>> = vec![None; n];
    for (j, bj) in bounds.iter().enumerate() {
        if let Some((lo, hi)) = *bj {
            if z[j] <= lo {
                z[j] = lo;
                fixed[j] = Some(Bound::Lower);
            } else if z[j] >= hi {
                z[j] = hi;
                fixed[j] = Some(Bound::Upper);
            }
        }
    }
    if fixed.iter().all(Option::is_none) {
        let kkt = kkt_residual(h, b, &z, &[]);
        return Ok(QpSolution {
            z,
            active: Vec::new(),
            converged: kkt <= tol,
            iterations: 0,
            kkt_residual: kkt,
        });
    }

    let scale = b.amax().max(1.0);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let candidate = solve_fixed(h, b, &z, &fixed)?;
        let step = &candidate - &z;
        let step_tol = 1e-12 * z.amax().max(1.0);

        if step.amax() <= step_tol {
            z = candidate;
            // multipliers of the working bounds, sign-adjusted so that
            // a negative value means the bound should be released
            let g = h * &z - b;
            let mut release: Option<(usize, f64)> = None;
            for (j, f) in fixed.iter().enumerate() {
                let lambda = match f {
                    None => continue,
                    Some(Bound::Lower) => g[j],
                    Some(Bound::Upper) => -g[j],
                };
                if lambda < -tol * scale && release.is_none_or(|(_, l)| lambda < l) {
                    release = Some((j, lambda));
                }
            }
            match release {
                None => {
                    converged = true;
                    break;
                }
                Some((j, _)) => fixed[j] = None,
            }
            continue;
        }

        // longest feasible step toward the candidate
        let mut alpha = 1.0;
        let mut blocking: Option<(usize, Bound)> = None;
        for j in 0..n {
            if fixed[j].is_some() {
                continue;
            }
            let Some((lo, hi)) = bounds[j] else { continue };
            let p = step[j];
            let (limit, bound) = if p < 0.0 {
                ((lo - z[j]) / p, Bound::Lower)
            } else if p > 0.0 {
                ((hi - z[j]) / p, Bound::Upper)
            } else {
                continue;
            };
            if limit < alpha {
                alpha = limit.max(0.0);
                blocking = Some((j, bound));
            }
        }
        z += step * alpha;
        if let Some((j, bound)) = blocking {
            let (lo, hi) = bounds[j].expect("blocking variable is bounded");
            z[j] = if bound == Bound::Lower { lo } else { hi };
            fixed[j] = Some(bound);
        }
    }

    let active: Vec<(usize, Bound)> = fixed
        .iter()
        .enumerate()
        .filter_map(|(j, f)| f.map(|b| (j, b)))
        .collect();
    let kkt = kkt_residual(h, b, &z, &active);
    Ok(QpSolution {
        z,
        active,
        converged: converged && kkt <= tol,
        iterations,
        kkt_residual: kkt,
    })
}
