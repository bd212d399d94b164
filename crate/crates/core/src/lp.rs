//! Dense two-phase simplex for small linear programs, and the Chebyshev
//! centre of a polytope given as half-spaces.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::HalfSpace;

const EPS: f64 = 1e-10;
const MAX_PIVOTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

/// Maximizes `c . x` subject to `A x <= b` and `x >= 0`.
///
/// Tableau simplex with Bland's rule, so degenerate problems cannot cycle.
/// Returns an error only when the pivot budget is exhausted.
pub fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpOutcome> {
    let m = a.len();
    let n = c.len();
    if b.len() != m || a.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidInput("inconsistent linear program dimensions".into()));
    }
    let artificial_rows: Vec<usize> = (0..m).filter(|&i| b[i] < 0.0).collect();
    let n_art = artificial_rows.len();
    // columns: [x (n) | slack (m) | artificial (n_art) | rhs]
    let width = n + m + n_art + 1;
    let rhs = width - 1;
    let mut tab = vec![vec![0.0; width]; m];
    let mut basis = vec![0usize; m];
    let mut art = 0;
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            tab[i][j] = sign * a[i][j];
        }
        tab[i][n + i] = sign;
        tab[i][rhs] = sign * b[i];
        if b[i] < 0.0 {
            tab[i][n + m + art] = 1.0;
            basis[i] = n + m + art;
            art += 1;
        } else {
            basis[i] = n + i;
        }
    }

    let mut pivots = 0;
    if n_art > 0 {
        // Phase one: maximize minus the sum of artificials.
        let mut cost = vec![0.0; width];
        for k in 0..n_art {
            cost[n + m + k] = -1.0;
        }
        let status = run(&mut tab, &mut basis, &cost, n + m + n_art, &mut pivots)?;
        debug_assert!(status, "phase one is bounded");
        let infeasibility: f64 = basis
            .iter()
            .zip(&tab)
            .filter(|(&col, _)| col >= n + m)
            .map(|(_, row)| row[rhs])
            .sum();
        let scale = 1.0 + b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if infeasibility > EPS * scale {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive remaining (zero-valued) artificials out of the basis.
        let mut i = 0;
        while i < tab.len() {
            if basis[i] >= n + m {
                match (0..n + m).find(|&j| tab[i][j].abs() > EPS) {
                    Some(j) => {
                        pivot(&mut tab, i, j);
                        basis[i] = j;
                        i += 1;
                    }
                    None => {
                        tab.remove(i);
                        basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
        for row in &mut tab {
            for v in &mut row[n + m..rhs] {
                *v = 0.0;
            }
        }
    }

    let mut cost = vec![0.0; width];
    cost[..n].copy_from_slice(c);
    if !run(&mut tab, &mut basis, &cost, n + m, &mut pivots)? {
        return Ok(LpOutcome::Unbounded);
    }
    let mut x = vec![0.0; n];
    for (row, &col) in tab.iter().zip(&basis) {
        if col < n {
            x[col] = row[rhs];
        }
    }
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpOutcome::Optimal { x, objective })
}

/// Runs simplex iterations on the tableau for the given cost vector over the
/// first `active` columns. Returns `false` when the problem is unbounded.
fn run(tab: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], active: usize, pivots: &mut usize) -> Result<bool> {
    let rhs = cost.len() - 1;
    loop {
        // reduced cost of column j: c_j - c_B . column_j
        let reduced = |j: usize| -> f64 {
            let cb: f64 = basis.iter().zip(tab.iter()).map(|(&bcol, row)| cost[bcol] * row[j]).sum();
            cost[j] - cb
        };
        let Some(enter) = (0..active).find(|&j| !basis.contains(&j) && reduced(j) > EPS) else {
            return Ok(true);
        };
        let mut leave: Option<(usize, f64)> = None;
        for (i, row) in tab.iter().enumerate() {
            if row[enter] > EPS {
                let ratio = row[rhs] / row[enter];
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - EPS || (ratio <= lr + EPS && basis[i] < basis[li]) {
                            Some((i, ratio))
                        } else {
                            Some((li, lr))
                        }
                    }
                };
            }
        }
        let Some((row, _)) = leave else {
            return Ok(false);
        };
        pivot(tab, row, enter);
        basis[row] = enter;
        *pivots += 1;
        if *pivots > MAX_PIVOTS {
            return Err(Error::LinearProgram(format!("no convergence after {MAX_PIVOTS} pivots")));
        }
    }
}

fn pivot(tab: &mut [Vec<f64>], row: usize, col: usize) {
    let p = tab[row][col];
    for v in tab[row].iter_mut() {
        *v /= p;
    }
    tab[row][col] = 1.0;
    let pivot_row = tab[row].clone();
    for (i, r) in tab.iter_mut().enumerate() {
        if i == row {
            continue;
        }
        let f = r[col];
        if f != 0.0 {
            for (v, pv) in r.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            r[col] = 0.0;
        }
    }
}

/// Largest ball inscribed in a polytope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChebyshevBall {
    pub center: Vector3<f64>,
    pub radius: f64,
}

/// Chebyshev centre of `{x : n_i . x <= d_i}` for unit normals `n_i`.
///
/// Solves `max r` subject to `n_i . x + r <= d_i`, `r >= 0`. Returns `None`
/// when the intersection is empty; a polytope without interior yields radius 0.
pub fn chebyshev_center(half_spaces: &[HalfSpace]) -> Result<Option<ChebyshevBall>> {
    if half_spaces.is_empty() {
        return Err(Error::LinearProgram("unbounded: no constraints".into()));
    }
    // x is free: split into x+ - x-.
    let a: Vec<Vec<f64>> = half_spaces
        .iter()
        .map(|h| {
            let n = h.normal;
            vec![n.x, n.y, n.z, -n.x, -n.y, -n.z, 1.0]
        })
        .collect();
    let b: Vec<f64> = half_spaces.iter().map(|h| h.offset).collect();
    let c = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
    match maximize(&c, &a, &b)? {
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => Err(Error::LinearProgram("unbounded polytope".into())),
        LpOutcome::Optimal { x, objective } => Ok(Some(ChebyshevBall {
            center: Vector3::new(x[0] - x[3], x[1] - x[4], x[2] - x[5]),
            radius: objective.max(0.0),
        })),
    }
}
