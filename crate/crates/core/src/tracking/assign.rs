use super::AffinityMatrix;

/// Tolerance when comparing matching totals during tie-breaking. Affinity
/// weights live in [0, 1] and matrices stay small, so accumulated rounding
/// is far below this.
const TOTAL_EPS: f64 = 1e-9;

/// Maximum-weight bipartite assignment via the Kuhn-Munkres algorithm.
///
/// Returns (row, col) pairs forming a matching of maximum total weight.
/// Among all optimal matchings the result is canonical: rows are processed
/// in ascending order and each takes the lowest column consistent with an
/// optimal completion. Pairs with weight below `min_overlap` are removed
/// after solving.
pub fn assign(aff: &AffinityMatrix, min_overlap: f64) -> Vec<(usize, usize)> {
    let (n_rows, n_cols) = (aff.n_rows(), aff.n_cols());
    if n_rows == 0 || n_cols == 0 {
        return Vec::new();
    }

    let all_rows: Vec<usize> = (0..n_rows).collect();
    let all_cols: Vec<usize> = (0..n_cols).collect();
    let optimum = max_matching_total(aff, &all_rows, &all_cols);

    // Fix assignments row by row, keeping the total achievable.
    let mut free_cols = all_cols;
    let mut fixed_sum = 0.0;
    let mut pairs = Vec::new();
    for row in 0..n_rows {
        let tail_rows: Vec<usize> = (row + 1..n_rows).collect();
        let mut chosen = None;
        for (slot, &col) in free_cols.iter().enumerate() {
            let mut rest_cols = free_cols.clone();
            rest_cols.remove(slot);
            let completion = max_matching_total(aff, &tail_rows, &rest_cols);
            if fixed_sum + aff.get(row, col) + completion >= optimum - TOTAL_EPS {
                chosen = Some((slot, col));
                break;
            }
        }
        if let Some((slot, col)) = chosen {
            fixed_sum += aff.get(row, col);
            free_cols.remove(slot);
            pairs.push((row, col));
        }
    }

    pairs.retain(|&(r, c)| aff.get(r, c) >= min_overlap);
    pairs
}

/// Total weight of a maximum-weight matching restricted to the given rows
/// and columns. O(n^3) Hungarian algorithm with potentials, run on the
/// negated weights padded to a square matrix.
fn max_matching_total(aff: &AffinityMatrix, rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    let dim = rows.len().max(cols.len());
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows.len() && j < cols.len() {
            -aff.get(rows[i], cols[j])
        } else {
            0.0
        }
    };

    // 1-indexed potentials; p[j] = row matched to column j, 0 = unmatched.
    let n = dim;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut total = 0.0;
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i - 1 < rows.len() && j - 1 < cols.len() {
            total += aff.get(rows[i - 1], cols[j - 1]);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive-enumeration oracle: maximum matching total over all
    /// injective row->col assignments.
    pub(crate) fn brute_force_max(aff: &AffinityMatrix) -> f64 {
        fn recurse(aff: &AffinityMatrix, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == aff.n_rows() {
                return 0.0;
            }
            // Row left unmatched.
            let mut best = recurse(aff, row + 1, used);
            for col in 0..aff.n_cols() {
                if !used[col] {
                    used[col] = true;
                    let total = aff.get(row, col) + recurse(aff, row + 1, used);
                    used[col] = false;
                    best = best.max(total);
                }
            }
            best
        }
        recurse(aff, 0, &mut vec![false; aff.n_cols()])
    }

    fn total_of(aff: &AffinityMatrix, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(r, c)| aff.get(r, c)).sum()
    }

    #[test]
    fn identity_matrix_matches_diagonal() {
        let aff = AffinityMatrix::from_rows(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        assert_eq!(assign(&aff, 0.5), vec![(0, 0), (1, 1), (2, 2)]);
    }

    // Brute force: 0.9 + 0.1 = 1.0 < 0.8 + 0.85 = 1.65.
    #[test]
    fn anti_diagonal_beats_greedy() {
        let aff = AffinityMatrix::from_rows(vec![vec![0.9, 0.8], vec![0.85, 0.1]]);
        assert_eq!(assign(&aff, 0.0), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn all_below_threshold_is_empty() {
        let aff = AffinityMatrix::from_rows(vec![vec![0.2, 0.1], vec![0.15, 0.25]]);
        assert!(assign(&aff, 0.3).is_empty());
    }

    #[test]
    fn empty_matrix_is_empty_matching() {
        let aff = AffinityMatrix::from_rows(vec![]);
        assert!(assign(&aff, 0.0).is_empty());
    }

    #[test]
    fn rectangular_more_rows_than_cols() {
        let aff = AffinityMatrix::from_rows(vec![vec![0.9], vec![0.95], vec![0.1]]);
        assert_eq!(assign(&aff, 0.0), vec![(1, 0)]);
    }

    #[test]
    fn rectangular_more_cols_than_rows() {
        let aff = AffinityMatrix::from_rows(vec![vec![0.3, 0.9, 0.5]]);
        assert_eq!(assign(&aff, 0.0), vec![(0, 1)]);
    }

    #[test]
    fn ties_break_to_lowest_row_then_lowest_col() {
        // Both diagonals total 1.0; canonical picks (0,0),(1,1).
        let aff = AffinityMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert_eq!(assign(&aff, 0.0), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn random_matrices_match_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..300 {
            let n_rows = rng.random_range(1..=7);
            let n_cols = rng.random_range(1..=7);
            let rows: Vec<Vec<f64>> = (0..n_rows)
                .map(|_| (0..n_cols).map(|_| rng.random::<f64>()).collect())
                .collect();
            let aff = AffinityMatrix::from_rows(rows);
            let pairs = assign(&aff, 0.0);

            // Injective on rows and columns.
            let mut rows_seen = vec![false; n_rows];
            let mut cols_seen = vec![false; n_cols];
            for &(r, c) in &pairs {
                assert!(!rows_seen[r] && !cols_seen[c]);
                rows_seen[r] = true;
                cols_seen[c] = true;
            }

            let expected = brute_force_max(&aff);
            assert!(
                (total_of(&aff, &pairs) - expected).abs() < 1e-9,
                "matching total {} differs from enumeration maximum {}",
                total_of(&aff, &pairs),
                expected
            );
        }
    }
}
