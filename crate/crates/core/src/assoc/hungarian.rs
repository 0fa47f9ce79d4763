//! Minimum-cost rectangular assignment.
//!
//! The matrix is padded to square with zero-cost dummy rows or columns and
//! solved by the shortest-augmenting-path form of the Hungarian method, which
//! also yields optimal dual potentials. Among all optimal assignments the
//! lexicographically smallest (row 0's column first, then row 1's, ...) is
//! selected by walking the tight-edge subgraph of those potentials.

use crate::error::{Error, Result};

/// Dense row-major cost matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                what: "cost matrix data",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("cost matrix entry {bad} is not finite")));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CostMatrix::new(rows, cols, data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged cost matrix rows".into()));
        }
        CostMatrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Column assigned to each row, `None` when the row is left out.
    pub row_to_col: Vec<Option<usize>>,
    pub total_cost: f64,
}

impl Assignment {
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_to_col.iter().enumerate().filter_map(|(i, c)| c.map(|c| (i, c)))
    }
}

pub fn hungarian(cost: &CostMatrix) -> Assignment {
    let (rows, cols) = (cost.rows, cost.cols);
    let n = rows.max(cols);
    if n == 0 || rows == 0 || cols == 0 {
        return Assignment {
            row_to_col: vec![None; rows],
            total_cost: 0.0,
        };
    }
    let at = |i: usize, j: usize| if i < rows && j < cols { cost.get(i, j) } else { 0.0 };

    // 1-based potentials and column owners; index 0 is the virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of = vec![0usize; n];
    let mut row_of = vec![0usize; n];
    for j in 1..=n {
        col_of[owner[j] - 1] = j - 1;
        row_of[j - 1] = owner[j] - 1;
    }

    let scale = cost.data.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    let tight = |i: usize, j: usize| at(i, j) - u[i + 1] - v[j + 1] <= tol;
    lexicographic_refine(n, &tight, &mut col_of, &mut row_of);

    let row_to_col: Vec<Option<usize>> = (0..rows).map(|i| (col_of[i] < cols).then_some(col_of[i])).collect();
    let total_cost = row_to_col
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|c| cost.get(i, c)))
        .sum();
    Assignment { row_to_col, total_cost }
}

/// Rewrites a perfect matching on the tight subgraph into the
/// lexicographically smallest perfect matching of that subgraph.
fn lexicographic_refine(n: usize, tight: &dyn Fn(usize, usize) -> bool, col_of: &mut [usize], row_of: &mut [usize]) {
    let mut fixed_col = vec![false; n];
    for i in 0..n {
        for j in 0..n {
            if fixed_col[j] || !tight(i, j) {
                continue;
            }
            if col_of[i] == j {
                break;
            }
            // Move row i onto j; the displaced row r must reach i's old column.
            let r = row_of[j];
            let target = col_of[i];
            let mut prev_col = vec![usize::MAX; n];
            let mut seen_row = vec![false; n];
            let mut stack = vec![r];
            seen_row[r] = true;
            seen_row[i] = true;
            let mut found = false;
            'search: while let Some(row) = stack.pop() {
                for c in 0..n {
                    if fixed_col[c] || c == j || prev_col[c] != usize::MAX || !tight(row, c) {
                        continue;
                    }
                    prev_col[c] = row;
                    if c == target {
                        found = true;
                        break 'search;
                    }
                    let next = row_of[c];
                    if !seen_row[next] {
                        seen_row[next] = true;
                        stack.push(next);
                    }
                }
            }
            if !found {
                continue;
            }
            // augment backwards from the freed column
            let mut c = target;
            loop {
                let row = prev_col[c];
                let old = col_of[row];
                col_of[row] = c;
                row_of[c] = row;
                if row == r {
                    break;
                }
                c = old;
            }
            col_of[i] = j;
            row_of[j] = i;
            break;
        }
        fixed_col[col_of[i]] = true;
    }
}
