//! Rectangular linear assignment (shortest augmenting path with dual
//! potentials, the Jonker-Volgenant scheme) and the head-to-human
//! association built on it.

use serde::{Deserialize, Serialize};

use super::{ioh, BoundingBox};
use crate::error::{Error, Result};

/// Cost marking a cell that may never be matched.
pub const FORBIDDEN: f64 = f64::INFINITY;

/// A matching between rows and columns of a cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, column)` pairs sorted by row.
    pub matches: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    /// Column matched to `row`, if any.
    pub fn column_of(&self, row: usize) -> Option<usize> {
        self.matches.iter().find(|m| m.0 == row).map(|m| m.1)
    }
}

/// Minimum-cost matching of `rows` onto `cols` (`rows.len() <= cols.len()`),
/// every row matched. Forbidden cells are replaced by `big`; returns `None`
/// when the optimum has to use one of them.
fn sap_rows_into_cols(
    cost: &dyn Fn(usize, usize) -> f64,
    rows: &[usize],
    cols: &[usize],
    big: f64,
) -> Option<Vec<(usize, usize)>> {
    let n = rows.len();
    let m = cols.len();
    debug_assert!(n <= m);
    if n == 0 {
        return Some(Vec::new());
    }
    let at = |i: usize, j: usize| {
        let c = cost(rows[i - 1], cols[j - 1]);
        if c.is_finite() {
            c
        } else {
            big
        }
    };
    // 1-based arrays, index 0 is the virtual source column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = at(i0, j) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
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
    let mut out = Vec::with_capacity(n);
    for j in 1..=m {
        if owner[j] > 0 {
            let (r, c) = (rows[owner[j] - 1], cols[j - 1]);
            if !cost(r, c).is_finite() {
                return None;
            }
            out.push((r, c));
        }
    }
    out.sort_unstable();
    Some(out)
}

/// Optimal matching of cardinality `min(|rows|, |cols|)` over the given
/// subsets. Returns the matches (sorted by row) and their total.
fn optimal_subset(
    cost: &[Vec<f64>],
    rows: &[usize],
    cols: &[usize],
    big: f64,
) -> Option<(Vec<(usize, usize)>, f64)> {
    let matches = if rows.len() <= cols.len() {
        sap_rows_into_cols(&|r, c| cost[r][c], rows, cols, big)?
    } else {
        let mut t = sap_rows_into_cols(&|c, r| cost[r][c], cols, rows, big)?;
        for m in t.iter_mut() {
            *m = (m.1, m.0);
        }
        t.sort_unstable();
        t
    };
    let total = matches.iter().map(|&(r, c)| cost[r][c]).sum();
    Some((matches, total))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

/// Minimum-cost matching of `min(R, C)` pairs avoiding [`FORBIDDEN`] cells.
///
/// Among optimal matchings the lexicographically smallest match list is
/// returned: rows are fixed in order, each to the smallest column that
/// still admits an optimal completion.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Result<Assignment> {
    let r = cost.len();
    let c = cost.first().map_or(0, |row| row.len());
    if cost.iter().any(|row| row.len() != c) {
        return Err(Error::Shape("ragged cost matrix".into()));
    }
    if r == 0 || c == 0 {
        return Ok(Assignment {
            matches: Vec::new(),
            total_cost: 0.0,
        });
    }
    let finite_sum: f64 = cost
        .iter()
        .flatten()
        .filter(|v| v.is_finite())
        .map(|v| v.abs())
        .sum();
    let big = 2.0 * finite_sum + 1.0;

    let all_rows: Vec<usize> = (0..r).collect();
    let all_cols: Vec<usize> = (0..c).collect();
    let (_, optimum) = optimal_subset(cost, &all_rows, &all_cols, big).ok_or(Error::NoFeasibleMatching)?;

    let need = r.min(c);
    let mut fixed: Vec<(usize, usize)> = Vec::with_capacity(need);
    let mut fixed_cost = 0.0;
    let mut free_cols = all_cols;
    for row in 0..r {
        if fixed.len() == need {
            break;
        }
        let rest_rows: Vec<usize> = (row + 1..r).collect();
        let mut chosen = None;
        for (pos, &col) in free_cols.iter().enumerate() {
            if !cost[row][col].is_finite() {
                continue;
            }
            let mut rest_cols = free_cols.clone();
            rest_cols.remove(pos);
            let still_needed = need - fixed.len() - 1;
            if rest_rows.len().min(rest_cols.len()) < still_needed {
                continue;
            }
            if let Some((_, sub)) = optimal_subset(cost, &rest_rows, &rest_cols, big) {
                if close(fixed_cost + cost[row][col] + sub, optimum) {
                    chosen = Some(pos);
                    break;
                }
            }
        }
        match chosen {
            Some(pos) => {
                let col = free_cols.remove(pos);
                fixed_cost += cost[row][col];
                fixed.push((row, col));
            }
            None => {
                // Leaving this row unmatched must still allow an optimum.
                let still_needed = need - fixed.len();
                if rest_rows.len().min(free_cols.len()) < still_needed {
                    return Err(Error::NoFeasibleMatching);
                }
            }
        }
    }
    if fixed.len() != need {
        return Err(Error::NoFeasibleMatching);
    }
    let total_cost = fixed.iter().map(|&(row, col)| cost[row][col]).sum();
    Ok(Assignment {
        matches: fixed,
        total_cost,
    })
}

/// Weights of the head association cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssociationWeights {
    pub distance: f64,
    pub confidence: f64,
    pub ioh_threshold: f64,
}

impl Default for AssociationWeights {
    fn default() -> Self {
        Self {
            distance: 0.5,
            confidence: 0.5,
            ioh_threshold: 0.7,
        }
    }
}

/// Assign detected heads to humans.
///
/// A head is admissible for a human when their IoH exceeds the threshold.
/// The cost of an admissible pair is a weighted sum of the center distance
/// (divided by the human box's shorter edge) and `1 - confidence`. The
/// largest possible number of humans is matched first, then cost is
/// minimized. Returns, per human, the index of its head.
pub fn associate_heads(
    humans: &[BoundingBox],
    heads: &[(BoundingBox, f64)],
    weights: &AssociationWeights,
) -> Vec<Option<usize>> {
    if humans.is_empty() || heads.is_empty() {
        return vec![None; humans.len()];
    }
    let k = heads.len();
    let mut cost = vec![vec![FORBIDDEN; k + humans.len()]; humans.len()];
    let mut finite_sum = 0.0;
    for (i, human) in humans.iter().enumerate() {
        let (hx, hy) = human.center();
        let edge = human.width().min(human.height());
        for (j, (head, conf)) in heads.iter().enumerate() {
            if ioh(human, head) <= weights.ioh_threshold {
                continue;
            }
            let (kx, ky) = head.center();
            let dist = ((hx - kx).powi(2) + (hy - ky).powi(2)).sqrt() / edge;
            let c = weights.distance * dist + weights.confidence * (1.0 - conf.clamp(0.0, 1.0));
            cost[i][j] = c;
            finite_sum += c.abs();
        }
    }
    // One private "no head" column per human, priced above any real matching.
    let dummy = finite_sum + 1.0;
    for (i, row) in cost.iter_mut().enumerate() {
        row[k + i] = dummy;
    }
    let assignment = solve_assignment(&cost).expect("dummy columns keep the problem feasible");
    let mut out = vec![None; humans.len()];
    for (row, col) in assignment.matches {
        if col < k {
            out[row] = Some(col);
        }
    }
    out
}
