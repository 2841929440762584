//! Independent oracles shared by the integration and acceptance tests. The
//! oracles here never call into the code under test; `checks` holds the
//! measurements built on top of them.
#![allow(dead_code)]

pub mod checks;

use rand::Rng;

/// Central finite differences of `f` at `x` with step `h`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over coordinates.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn random_simplex(rng: &mut impl Rng, classes: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..classes).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Minimum-cost transport between `p` and `q` on the integer line with
/// ground cost `|i - j|`, found by enumerating every basis of the transport
/// polytope (subsets of `2C - 1` cells), solving the equality system on that
/// basis and keeping the cheapest non-negative solution.
pub fn transport_lp(p: &[f64], q: &[f64]) -> f64 {
    let c = p.len();
    assert_eq!(c, q.len());
    if c == 1 {
        return 0.0;
    }
    let cells: Vec<(usize, usize)> = (0..c).flat_map(|i| (0..c).map(move |j| (i, j))).collect();
    let m = 2 * c - 1;
    let mut best = f64::INFINITY;
    let mut pick: Vec<usize> = (0..m).collect();
    loop {
        if let Some(x) = solve_basis(&cells, &pick, p, q) {
            let cost: f64 = pick
                .iter()
                .zip(&x)
                .map(|(&k, v)| {
                    let (i, j) = cells[k];
                    v * (i as f64 - j as f64).abs()
                })
                .sum();
            best = best.min(cost);
        }
        if !next_combination(&mut pick, cells.len()) {
            break;
        }
    }
    best
}

fn next_combination(pick: &mut [usize], n: usize) -> bool {
    let m = pick.len();
    let mut i = m;
    while i > 0 {
        i -= 1;
        if pick[i] < n - m + i {
            pick[i] += 1;
            for j in i + 1..m {
                pick[j] = pick[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Solves row/column-sum constraints restricted to the chosen cells by
/// Gauss-Jordan elimination; `None` for singular or infeasible bases.
fn solve_basis(cells: &[(usize, usize)], pick: &[usize], p: &[f64], q: &[f64]) -> Option<Vec<f64>> {
    let c = p.len();
    let m = pick.len();
    let rows = 2 * c;
    let mut a = vec![vec![0.0; m + 1]; rows];
    for (col, &k) in pick.iter().enumerate() {
        let (i, j) = cells[k];
        a[i][col] = 1.0;
        a[c + j][col] = 1.0;
    }
    for i in 0..c {
        a[i][m] = p[i];
        a[c + i][m] = q[i];
    }
    let mut r = 0;
    let mut pivots = Vec::with_capacity(m);
    for col in 0..m {
        let pr = (r..rows).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pr][col].abs() < 1e-12 {
            return None;
        }
        a.swap(r, pr);
        let d = a[r][col];
        for v in a[r].iter_mut() {
            *v /= d;
        }
        for rr in 0..rows {
            if rr != r && a[rr][col] != 0.0 {
                let f = a[rr][col];
                let pivot = a[r].clone();
                for (v, p) in a[rr].iter_mut().zip(&pivot) {
                    *v -= f * p;
                }
            }
        }
        pivots.push(r);
        r += 1;
    }
    if (r..rows).any(|rr| a[rr][m].abs() > 1e-12) {
        return None;
    }
    let x: Vec<f64> = pivots.iter().map(|&pr| a[pr][m]).collect();
    if x.iter().any(|&v| v < -1e-12) {
        return None;
    }
    Some(x)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
