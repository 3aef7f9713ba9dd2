//! Greedy best-row covering arrays.
//!
//! Each round adds the row covering the most still-uncovered t-tuples. When the
//! full factorial has at most [`EXHAUSTIVE_LIMIT`] rows every row is scored and
//! ties go to the lexicographically smallest; otherwise a seeded pool of
//! candidates is built one factor at a time, AETG style.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CoverageError;

const EXHAUSTIVE_LIMIT: usize = 4096;
const CANDIDATES_PER_ROUND: usize = 50;

fn subsets(k: usize, t: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, k: usize, t: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == t {
            out.push(cur.clone());
            return;
        }
        for i in start..k {
            cur.push(i);
            rec(i + 1, k, t, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, k, t, &mut Vec::with_capacity(t), &mut out);
    out
}

struct Tuples {
    levels: Vec<usize>,
    subsets: Vec<Vec<usize>>,
    covered: Vec<Vec<bool>>,
    remaining: usize,
}

impl Tuples {
    fn new(levels: &[usize], t: usize) -> Self {
        let subsets = subsets(levels.len(), t);
        let covered: Vec<Vec<bool>> = subsets
            .iter()
            .map(|s| vec![false; s.iter().map(|&f| levels[f]).product()])
            .collect();
        let remaining = covered.iter().map(Vec::len).sum();
        Self {
            levels: levels.to_vec(),
            subsets,
            covered,
            remaining,
        }
    }

    fn code(&self, subset: &[usize], row: &[usize]) -> usize {
        subset.iter().fold(0, |acc, &f| acc * self.levels[f] + row[f])
    }

    fn gain(&self, row: &[usize]) -> usize {
        self.subsets
            .iter()
            .zip(&self.covered)
            .filter(|(s, cov)| !cov[self.code(s, row)])
            .count()
    }

    /// Gain counted only over subsets whose factors are all assigned.
    fn partial_gain(&self, row: &[Option<usize>]) -> usize {
        self.subsets
            .iter()
            .zip(&self.covered)
            .filter(|(s, cov)| {
                s.iter().all(|&f| row[f].is_some()) && {
                    let code = s.iter().fold(0, |acc, &f| acc * self.levels[f] + row[f].unwrap());
                    !cov[code]
                }
            })
            .count()
    }

    fn cover(&mut self, row: &[usize]) {
        for i in 0..self.subsets.len() {
            let code = self.code(&self.subsets[i], row);
            if !self.covered[i][code] {
                self.covered[i][code] = true;
                self.remaining -= 1;
            }
        }
    }

    fn first_uncovered(&self) -> Option<(usize, usize)> {
        self.covered
            .iter()
            .enumerate()
            .find_map(|(i, cov)| cov.iter().position(|c| !c).map(|code| (i, code)))
    }

    fn decode(&self, subset: usize, mut code: usize) -> Vec<(usize, usize)> {
        let s = &self.subsets[subset];
        let mut out = vec![(0, 0); s.len()];
        for (slot, &f) in s.iter().enumerate().rev() {
            out[slot] = (f, code % self.levels[f]);
            code /= self.levels[f];
        }
        out
    }
}

fn decode_row(levels: &[usize], mut code: usize) -> Vec<usize> {
    let mut row = vec![0; levels.len()];
    for j in (0..levels.len()).rev() {
        row[j] = code % levels[j];
        code /= levels[j];
    }
    row
}

/// Rows covering every level combination of every `t` factors.
pub fn generate_covering_array(levels: &[usize], t: usize, seed: u64) -> Result<Vec<Vec<usize>>, CoverageError> {
    extend_covering_array(levels, t, seed, &[])
}

/// Rows that, together with `existing`, cover every t-tuple.
pub(crate) fn extend_covering_array(
    levels: &[usize],
    t: usize,
    seed: u64,
    existing: &[Vec<usize>],
) -> Result<Vec<Vec<usize>>, CoverageError> {
    if t == 0 || t > levels.len() {
        return Err(CoverageError::Domain(format!(
            "strength {t} needs 1 ≤ t ≤ {} factors",
            levels.len()
        )));
    }
    if levels.contains(&0) {
        return Err(CoverageError::Domain("every factor needs at least one level".into()));
    }
    let mut tuples = Tuples::new(levels, t);
    for r in existing {
        tuples.cover(r);
    }
    let mut rows = Vec::new();
    let total = levels
        .iter()
        .try_fold(1usize, |acc, &l| acc.checked_mul(l))
        .unwrap_or(usize::MAX);

    if total <= EXHAUSTIVE_LIMIT {
        while tuples.remaining > 0 {
            let mut best: Option<(usize, Vec<usize>)> = None;
            for code in 0..total {
                let row = decode_row(levels, code);
                let g = tuples.gain(&row);
                if best.as_ref().is_none_or(|(bg, _)| g > *bg) {
                    best = Some((g, row));
                }
            }
            let (_, row) = best.expect("at least one row");
            tuples.cover(&row);
            rows.push(row);
        }
        return Ok(rows);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..levels.len()).collect();
    while tuples.remaining > 0 {
        let (subset, code) = tuples.first_uncovered().expect("remaining > 0");
        let anchor = tuples.decode(subset, code);
        let mut best: Option<(usize, Vec<usize>)> = None;
        for _ in 0..CANDIDATES_PER_ROUND {
            let mut row: Vec<Option<usize>> = vec![None; levels.len()];
            for &(f, l) in &anchor {
                row[f] = Some(l);
            }
            order.shuffle(&mut rng);
            for &f in &order {
                if row[f].is_some() {
                    continue;
                }
                let start = rng.gen_range(0..levels[f]);
                let mut best_level = start;
                let mut best_gain = None;
                for off in 0..levels[f] {
                    let l = (start + off) % levels[f];
                    row[f] = Some(l);
                    let g = tuples.partial_gain(&row);
                    if best_gain.is_none_or(|bg| g > bg) {
                        best_gain = Some(g);
                        best_level = l;
                    }
                }
                row[f] = Some(best_level);
            }
            let row: Vec<usize> = row.into_iter().map(|l| l.expect("filled")).collect();
            let g = tuples.gain(&row);
            let better = match &best {
                None => true,
                Some((bg, br)) => g > *bg || (g == *bg && row < *br),
            };
            if better {
                best = Some((g, row));
            }
        }
        let (_, row) = best.expect("candidates generated");
        tuples.cover(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// t-tuples (as `(factor, level)` lists) that `rows` leave uncovered.
pub fn uncovered_tuples(levels: &[usize], t: usize, rows: &[Vec<usize>]) -> Vec<Vec<(usize, usize)>> {
    let mut tuples = Tuples::new(levels, t);
    for r in rows {
        tuples.cover(r);
    }
    let mut out = Vec::new();
    for (i, cov) in tuples.covered.iter().enumerate() {
        for (code, &c) in cov.iter().enumerate() {
            if !c {
                out.push(tuples.decode(i, code));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    // Independent check: enumerate every t-subset and every level combination.
    fn brute_force_covered(levels: &[usize], t: usize, rows: &[Vec<usize>]) -> bool {
        for s in subsets(levels.len(), t) {
            let seen: BTreeSet<Vec<usize>> = rows.iter().map(|r| s.iter().map(|&f| r[f]).collect()).collect();
            let need: usize = s.iter().map(|&f| levels[f]).product();
            if seen.len() != need {
                return false;
            }
        }
        true
    }

    #[test]
    fn three_binary_pairwise() {
        let rows = generate_covering_array(&[2, 2, 2], 2, 0).unwrap();
        assert!(brute_force_covered(&[2, 2, 2], 2, &rows));
        assert!(rows.len() <= 6);
    }

    #[test]
    fn single_factor() {
        let rows = generate_covering_array(&[5], 1, 0).unwrap();
        assert_eq!(rows.len(), 5);
    }

    #[test]
    fn four_ternary_pairwise() {
        let rows = generate_covering_array(&[3, 3, 3, 3], 2, 0).unwrap();
        assert!(brute_force_covered(&[3, 3, 3, 3], 2, &rows));
        assert!(rows.len() <= 15, "{}", rows.len());
    }

    #[test]
    fn strength_errors() {
        assert!(generate_covering_array(&[2, 2], 3, 0).is_err());
        assert!(generate_covering_array(&[2, 0], 1, 0).is_err());
    }

    #[test]
    fn large_space_uses_candidates_and_is_deterministic() {
        let levels = [4, 4, 4, 4, 4, 4, 4];
        let a = generate_covering_array(&levels, 2, 7).unwrap();
        let b = generate_covering_array(&levels, 2, 7).unwrap();
        assert_eq!(a, b);
        assert!(brute_force_covered(&levels, 2, &a));
        assert!(uncovered_tuples(&levels, 2, &a).is_empty());
    }
}
