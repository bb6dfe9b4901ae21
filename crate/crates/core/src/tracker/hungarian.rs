//! Minimum-cost assignment for rectangular cost matrices.
//!
//! The matrix is padded to square with a large constant and solved with the
//! shortest-augmenting-path Hungarian method with row/column potentials.
//! Among optimal assignments the lexicographically smallest one (by column
//! per row, in row order) is returned: with the optimal potentials fixed,
//! optimal assignments are exactly the perfect matchings on zero-reduced-cost
//! edges, and rows are pinned greedily to their smallest feasible column.

use crate::scalar::Scalar;

/// Cost given to padding cells.
pub const PAD_COST: f64 = 1e6;

/// Solves the assignment problem. `cost` is row-major and rectangular.
///
/// Returns `min(rows, cols)` `(row, col)` pairs sorted by row.
///
/// # Panics
///
/// Panics if the rows have different lengths.
pub fn hungarian<T: Scalar>(cost: &[Vec<T>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    assert!(cost.iter().all(|r| r.len() == cols), "cost matrix must be rectangular");
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let n = rows.max(cols);
    let mut a = vec![vec![PAD_COST; n]; n];
    let mut scale = 0f64;
    for (i, row) in cost.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            a[i][j] = c.as_f64();
            scale = scale.max(a[i][j].abs());
        }
    }
    let (mut row_to_col, u, v) = solve_square(&a);
    let tol = 1e-9 * (1.0 + scale);
    let tight = |i: usize, j: usize| a[i][j] - u[i] - v[j] <= tol;
    lexicographic_refine(&mut row_to_col, rows, &tight);

    (0..rows)
        .filter(|&i| row_to_col[i] < cols)
        .map(|i| (i, row_to_col[i]))
        .collect()
}

/// Sum of `cost[i][j]` over an assignment.
pub fn assignment_cost<T: Scalar>(cost: &[Vec<T>], pairs: &[(usize, usize)]) -> T {
    pairs.iter().fold(T::zero(), |acc, &(i, j)| acc + cost[i][j])
}

/// Square Hungarian with potentials. Returns the row→column assignment and
/// the dual potentials (u for rows, v for columns).
fn solve_square(a: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = a.len();
    // 1-based arrays; index 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[i0 - 1][j - 1] - u[i0] - v[j];
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
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[col_owner[j] - 1] = j - 1;
    }
    (row_to_col, u[1..].to_vec(), v[1..].to_vec())
}

fn lexicographic_refine(row_to_col: &mut [usize], rows: usize, tight: &impl Fn(usize, usize) -> bool) {
    let n = row_to_col.len();
    let mut col_to_row = vec![0usize; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        col_to_row[j] = i;
    }
    let mut locked_col = vec![false; n];

    for i in 0..rows {
        for j in 0..n {
            if locked_col[j] || !tight(i, j) {
                continue;
            }
            if row_to_col[i] == j {
                locked_col[j] = true;
                break;
            }
            // Move i onto j: the current owner of j must reach i's old column
            // through an alternating path of tight edges among unlocked rows.
            let freed = row_to_col[i];
            let owner = col_to_row[j];
            let mut visited = vec![false; n];
            visited[j] = true;
            let mut moves = Vec::new();
            if reroute(owner, freed, row_to_col, &col_to_row, &locked_col, &mut visited, tight, &mut moves) {
                for (r, c) in moves {
                    row_to_col[r] = c;
                    col_to_row[c] = r;
                }
                row_to_col[i] = j;
                col_to_row[j] = i;
                locked_col[j] = true;
                break;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn reroute(
    row: usize,
    target: usize,
    row_to_col: &[usize],
    col_to_row: &[usize],
    locked_col: &[bool],
    visited: &mut [bool],
    tight: &impl Fn(usize, usize) -> bool,
    moves: &mut Vec<(usize, usize)>,
) -> bool {
    for c in 0..row_to_col.len() {
        if visited[c] || locked_col[c] || c == row_to_col[row] || !tight(row, c) {
            continue;
        }
        visited[c] = true;
        if c == target || reroute(col_to_row[c], target, row_to_col, col_to_row, locked_col, visited, tight, moves) {
            moves.push((row, c));
            return true;
        }
    }
    false
}
