//! Reference computations used only by tests. They share no code path with
//! the library solvers.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Plain description of a window problem.
#[derive(Clone, Debug)]
pub struct Problem {
    pub y: Vec<f64>,
    pub t: Vec<f64>,
    pub q_diag: [f64; 2],
    pub omega: f64,
    pub psi_diag: [f64; 2],
    pub u: f64,
    pub prior: [f64; 2],
}

impl Problem {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Whitened residual rows `A z - r` of the window objective.
    fn stacked(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n();
        let rows = 2 + n + 2 * (n - 1);
        let mut a = DMatrix::zeros(rows, 2 * n);
        let mut r = DVector::zeros(rows);
        let mut row = 0;
        for c in 0..2 {
            let w = self.psi_diag[c].sqrt();
            a[(row, c)] = w;
            r[row] = w * self.prior[c];
            row += 1;
        }
        let wm = self.omega.sqrt();
        for i in 0..n {
            a[(row, 2 * i)] = wm;
            r[row] = wm * self.y[i];
            row += 1;
        }
        for i in 0..n - 1 {
            let dt = self.t[i + 1] - self.t[i];
            let (gd, gs) = (0.5 * self.u * dt * dt, self.u * dt);
            // d_{i+1} - d_i - dt s_i - gd
            let wd = self.q_diag[0].sqrt();
            a[(row, 2 * i + 2)] = wd;
            a[(row, 2 * i)] = -wd;
            a[(row, 2 * i + 1)] = -wd * dt;
            r[row] = wd * gd;
            row += 1;
            // s_{i+1} - s_i - gs
            let ws = self.q_diag[1].sqrt();
            a[(row, 2 * i + 3)] = ws;
            a[(row, 2 * i + 1)] = -ws;
            r[row] = ws * gs;
            row += 1;
        }
        (a, r)
    }

    /// Objective by direct residual evaluation.
    pub fn cost(&self, d: &[f64], s: &[f64]) -> f64 {
        let mut j = self.psi_diag[0] * (d[0] - self.prior[0]).powi(2)
            + self.psi_diag[1] * (s[0] - self.prior[1]).powi(2);
        for i in 0..self.n() {
            j += self.omega * (self.y[i] - d[i]).powi(2);
        }
        for i in 0..self.n() - 1 {
            let dt = self.t[i + 1] - self.t[i];
            let wd = d[i + 1] - (d[i] + s[i] * dt + 0.5 * self.u * dt * dt);
            let ws = s[i + 1] - (s[i] + self.u * dt);
            j += self.q_diag[0] * wd * wd + self.q_diag[1] * ws * ws;
        }
        j
    }

    /// Unconstrained minimizer from the dense normal equations of the
    /// stacked residuals, solved by LU.
    pub fn solve_dense(&self) -> (Vec<f64>, Vec<f64>) {
        let (a, r) = self.stacked();
        let at = a.transpose();
        let z = (&at * &a).lu().solve(&(&at * &r)).expect("normal equations");
        split(&z)
    }

    /// Minimizer with some speed variables pinned to given values.
    fn solve_pinned(&self, pinned: &[Option<f64>]) -> (Vec<f64>, Vec<f64>) {
        let (a, r) = self.stacked();
        let n = self.n();
        let free: Vec<usize> = (0..2 * n)
            .filter(|&j| j % 2 == 0 || pinned[j / 2].is_none())
            .collect();
        let mut rhs = r.clone();
        for i in 0..n {
            if let Some(v) = pinned[i] {
                rhs -= a.column(2 * i + 1) * v;
            }
        }
        let af = a.select_columns(free.iter());
        let at = af.transpose();
        let zf = (&at * &af).lu().solve(&(&at * &rhs)).expect("normal equations");
        let mut z = DVector::zeros(2 * n);
        for (k, &j) in free.iter().enumerate() {
            z[j] = zf[k];
        }
        for i in 0..n {
            if let Some(v) = pinned[i] {
                z[2 * i + 1] = v;
            }
        }
        split(&z)
    }

    /// Bound-constrained minimizer by enumerating every assignment of each
    /// speed to {free, lower, upper} and keeping the best feasible one.
    /// Exponential in `n`; meant for `n <= 8`.
    pub fn solve_bounded_bruteforce(&self, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        let combos = 3usize.pow(n as u32);
        for code in 0..combos {
            let mut c = code;
            let pinned: Vec<Option<f64>> = (0..n)
                .map(|_| {
                    let v = c % 3;
                    c /= 3;
                    match v {
                        0 => None,
                        1 => Some(lo),
                        _ => Some(hi),
                    }
                })
                .collect();
            let (d, s) = self.solve_pinned(&pinned);
            if s.iter().any(|v| *v < lo - 1e-12 || *v > hi + 1e-12) {
                continue;
            }
            let j = self.cost(&d, &s);
            if best.as_ref().is_none_or(|(bj, _, _)| j < *bj) {
                best = Some((j, d, s));
            }
        }
        let (_, d, s) = best.expect("some assignment is feasible");
        (d, s)
    }
}

fn split(z: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
    let d = z.iter().step_by(2).copied().collect();
    let s = z.iter().skip(1).step_by(2).copied().collect();
    (d, s)
}

/// Textbook Kalman recursion written out component-wise.
pub fn kalman_by_hand(p: &Problem) -> (Vec<f64>, Vec<f64>) {
    let (qd, qs) = (1.0 / p.q_diag[0], 1.0 / p.q_diag[1]);
    let r = 1.0 / p.omega;
    let (mut d, mut s) = (p.prior[0], p.prior[1]);
    let (mut p00, mut p01, mut p11) = (1.0 / p.psi_diag[0], 0.0, 1.0 / p.psi_diag[1]);
    let mut out_d = Vec::new();
    let mut out_s = Vec::new();
    for k in 0..p.n() {
        if k > 0 {
            let dt = p.t[k] - p.t[k - 1];
            d = d + s * dt + 0.5 * p.u * dt * dt;
            s += p.u * dt;
            let n00 = p00 + 2.0 * dt * p01 + dt * dt * p11 + qd;
            let n01 = p01 + dt * p11;
            let n11 = p11 + qs;
            p00 = n00;
            p01 = n01;
            p11 = n11;
        }
        let innov = p.y[k] - d;
        let sk = p00 + r;
        let (k0, k1) = (p00 / sk, p01 / sk);
        d += k0 * innov;
        s += k1 * innov;
        let n00 = (1.0 - k0) * p00;
        let n01 = (1.0 - k0) * p01;
        let n11 = p11 - k1 * p01;
        p00 = n00;
        p01 = n01;
        p11 = n11;
        out_d.push(d);
        out_s.push(s);
    }
    (out_d, out_s)
}

/// Receding windows of `w` samples solved one by one with the dense
/// least-squares oracle. Mirrors the library's reporting convention.
pub fn receding_by_windows(p: &Problem, w: usize) -> (Vec<f64>, Vec<f64>) {
    let n = p.n();
    let sub = |start: usize, end: usize, prior: [f64; 2]| Problem {
        y: p.y[start..end].to_vec(),
        t: p.t[start..end].to_vec(),
        prior,
        ..p.clone()
    };
    let (mut d, mut s) = sub(0, w, p.prior).solve_dense();
    let mut prev = (d.clone(), s.clone());
    for k in w..n {
        let start = k + 1 - w;
        let (wd, ws) = sub(start, k + 1, [prev.0[1], prev.1[1]]).solve_dense();
        d.push(wd[w - 1]);
        s.push(ws[w - 1]);
        prev = (wd, ws);
    }
    (d, s)
}

/// Gaussian kernel density evaluated directly at `x`.
pub fn kde_at(samples: &[f64], bandwidth: f64, x: f64) -> f64 {
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    samples
        .iter()
        .map(|v| (-0.5 * ((x - v) / bandwidth).powi(2)).exp())
        .sum::<f64>()
        * norm
}

/// Arg-max of the density over `m` evenly spaced points spanning the data.
pub fn kde_mode_dense(samples: &[f64], bandwidth: f64, m: usize) -> f64 {
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut best = (lo, f64::NEG_INFINITY);
    for i in 0..m {
        let x = lo + (hi - lo) * i as f64 / (m - 1) as f64;
        let f = kde_at(samples, bandwidth, x);
        if f > best.1 {
            best = (x, f);
        }
    }
    best.0
}
