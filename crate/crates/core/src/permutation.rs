//! Plackett-Luce orderings and the NeuralSort permutation relaxation.

use rand::Rng;

use crate::autodiff::{softmax, Real};
use crate::error::{check_tau, DrpmError, Result};
use crate::noise::standard_gumbel;

/// Positive per-element scores `s` and the Gumbel scale `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlScores {
    scores: Vec<f64>,
    beta: f64,
}

impl PlScores {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        Self::with_beta(scores, 1.0)
    }

    pub fn with_beta(scores: Vec<f64>, beta: f64) -> Result<Self> {
        if let Some((i, s)) = scores
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && **s > 0.0))
        {
            return Err(DrpmError::param(
                "scores",
                format!("score {i} is {s}; scores must be finite and > 0"),
            ));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(DrpmError::param("beta", format!("{beta} is not a positive scale")));
        }
        Ok(Self { scores, beta })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }

    pub fn log_scores(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.ln()).collect()
    }

    /// `β log s_i + β g_i` for standard Gumbel noise `g`.
    pub fn perturbed(&self, gumbels: &[f64]) -> Vec<f64> {
        self.scores
            .iter()
            .zip(gumbels)
            .map(|(s, g)| self.beta * (s.ln() + g))
            .collect()
    }
}

/// An `n × n` permutation matrix, stored as the column selected by each row.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PermutationMatrix {
    order: Vec<usize>,
}

impl PermutationMatrix {
    /// Row `i` selects element `order[i]`.
    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &j in &order {
            if j >= n || seen[j] {
                return Err(DrpmError::Validation(format!(
                    "{order:?} is not a permutation of 0..{n}"
                )));
            }
            seen[j] = true;
        }
        Ok(Self { order })
    }

    pub fn from_matrix(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        let mut order = Vec::with_capacity(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n || row.iter().any(|&x| x > 1) || row.iter().filter(|&&x| x == 1).count() != 1 {
                return Err(DrpmError::Validation(format!(
                    "row {i} of the permutation matrix is not one-hot of length {n}"
                )));
            }
            order.push(row.iter().position(|&x| x == 1).unwrap());
        }
        Self::from_order(order)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.order.len()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn to_matrix(&self) -> Vec<Vec<u8>> {
        let n = self.n();
        self.order
            .iter()
            .map(|&j| {
                let mut row = vec![0u8; n];
                row[j] = 1;
                row
            })
            .collect()
    }
}

/// `n_k × n` matrix whose rows select distinct elements in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetPermutation {
    rows: Vec<usize>,
    n: usize,
}

impl SubsetPermutation {
    pub fn new(rows: Vec<usize>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for &j in &rows {
            if j >= n || seen[j] {
                return Err(DrpmError::Validation(format!(
                    "{rows:?} does not select distinct elements of 0..{n}"
                )));
            }
            seen[j] = true;
        }
        Ok(Self { rows, n })
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Row-stochastic relaxation of a permutation matrix with its hard twin.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedPermutation {
    pub values: Vec<Vec<f64>>,
    pub tau: f64,
    pub hard: PermutationMatrix,
}

/// `log p(π; s) = Σ_i log[(πs)_i / (Z − Σ_{j<i} (πs)_j)]`.
pub fn pl_log_pmf(scores: &PlScores, perm: &PermutationMatrix) -> Result<f64> {
    if perm.n() != scores.len() {
        return Err(DrpmError::Validation(format!(
            "permutation has {} rows but there are {} scores",
            perm.n(),
            scores.len()
        )));
    }
    Ok(sequential_log_prob(scores.scores(), perm.order(), 0.0))
}

/// Log-probability of picking `picks` in order from the pool `picks ∪ rest`,
/// where `rest_mass` is the total score of unpicked elements.
///
/// The running normalizer is summed from the tail rather than subtracted from
/// `Z` so that late factors do not lose precision.
pub(crate) fn sequential_log_prob<R: Real>(scores: &[R], picks: &[usize], rest_mass: f64) -> R {
    let mut acc = None;
    let mut tail: Option<R> = None;
    for &j in picks.iter().rev() {
        let s = scores[j];
        let denom = match tail {
            None => s + rest_mass,
            Some(t) => t + s,
        };
        tail = Some(denom);
        let term = s.ln() - denom.ln();
        acc = Some(match acc {
            None => term,
            Some(a) => a + term,
        });
    }
    match acc {
        Some(a) => a,
        None => scores.first().map_or_else(|| panic!("empty score vector"), |s| s.lift(0.0)),
    }
}

/// `log p(π̄ | S_{<k}; s)` for a subset permutation, `Z_k = Z − Σ_{S_{<k}} s`.
pub fn subset_perm_log_prob(
    scores: &PlScores,
    sp: &SubsetPermutation,
    prior: &[usize],
) -> Result<f64> {
    if sp.n() != scores.len() {
        return Err(DrpmError::Validation(format!(
            "subset permutation has width {} but there are {} scores",
            sp.n(),
            scores.len()
        )));
    }
    let mut excluded = vec![false; scores.len()];
    for &j in prior {
        if j >= scores.len() {
            return Err(DrpmError::Index {
                index: j,
                len: scores.len(),
            });
        }
        excluded[j] = true;
    }
    if let Some(j) = sp.rows().iter().find(|&&j| excluded[j]) {
        return Err(DrpmError::Validation(format!(
            "element {j} is selected but already belongs to an earlier subset"
        )));
    }
    let mut picked = excluded;
    for &j in sp.rows() {
        picked[j] = true;
    }
    let rest: f64 = scores
        .scores()
        .iter()
        .zip(&picked)
        .filter(|(_, &p)| !p)
        .map(|(s, _)| s)
        .sum();
    Ok(sequential_log_prob(scores.scores(), sp.rows(), rest))
}

/// Indices sorting `values` in decreasing order; ties go to the lower index.
pub fn argsort_descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Plackett-Luce draw by sorting Gumbel-perturbed log-scores.
pub fn pl_sample<G: Rng + ?Sized>(scores: &PlScores, rng: &mut G) -> PermutationMatrix {
    let gumbels: Vec<f64> = (0..scores.len()).map(|_| standard_gumbel(rng)).collect();
    pl_sample_from_noise(scores, &gumbels)
}

pub fn pl_sample_from_noise(scores: &PlScores, gumbels: &[f64]) -> PermutationMatrix {
    PermutationMatrix {
        order: argsort_descending(&scores.perturbed(gumbels)),
    }
}

/// The most probable ordering: scores sorted in decreasing order.
pub fn pl_max_perm(scores: &PlScores) -> PermutationMatrix {
    PermutationMatrix {
        order: argsort_descending(scores.scores()),
    }
}

/// Row scores `[(n + 1 − 2i) v − A 1]` with `A[i, j] = |v_i − v_j|`, rows 1-based.
pub(crate) fn neuralsort_scores<R: Real>(values: &[R]) -> Vec<Vec<R>> {
    let n = values.len();
    let a_one: Vec<R> = values
        .iter()
        .map(|&vj| {
            values
                .iter()
                .map(|&vl| (vj - vl).abs())
                .reduce(|a, b| a + b)
                .expect("non-empty")
        })
        .collect();
    (1..=n)
        .map(|i| {
            let coef = (n + 1) as f64 - 2.0 * i as f64;
            values
                .iter()
                .zip(&a_one)
                .map(|(&v, &a)| v * coef - a)
                .collect()
        })
        .collect()
}

/// Row-by-row argmax with already claimed columns masked out.
fn masked_argmax_rows(scores: &[Vec<f64>]) -> Vec<usize> {
    let n = scores.len();
    let mut claimed = vec![false; n];
    scores
        .iter()
        .map(|row| {
            let mut best = usize::MAX;
            for (j, &v) in row.iter().enumerate() {
                if !claimed[j] && (best == usize::MAX || v > row[best]) {
                    best = j;
                }
            }
            claimed[best] = true;
            best
        })
        .collect()
}

/// Hard sort permutation from the pairwise-difference construction.
pub fn neuralsort_hard(values: &[f64]) -> PermutationMatrix {
    if values.is_empty() {
        return PermutationMatrix { order: Vec::new() };
    }
    PermutationMatrix {
        order: masked_argmax_rows(&neuralsort_scores(values)),
    }
}

/// Softmax relaxation of [`neuralsort_hard`] at temperature `tau`.
pub fn neuralsort_relaxed(values: &[f64], tau: f64) -> Result<RelaxedPermutation> {
    check_tau(tau)?;
    let (values_r, hard) = neuralsort_relaxed_generic(values, tau);
    Ok(RelaxedPermutation {
        values: values_r,
        tau,
        hard,
    })
}

pub(crate) fn neuralsort_relaxed_generic<R: Real>(
    values: &[R],
    tau: f64,
) -> (Vec<Vec<R>>, PermutationMatrix) {
    if values.is_empty() {
        return (Vec::new(), PermutationMatrix { order: Vec::new() });
    }
    let scores = neuralsort_scores(values);
    let plain: Vec<Vec<f64>> = scores
        .iter()
        .map(|row| row.iter().map(|x| x.value()).collect())
        .collect();
    let hard = PermutationMatrix {
        order: masked_argmax_rows(&plain),
    };
    let rows = scores.iter().map(|row| softmax(row, tau)).collect();
    (rows, hard)
}

/// Every permutation of `0..n` in lexicographic order (test and oracle helper).
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        // next lexicographic permutation
        let Some(i) = (1..cur.len()).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..cur.len()).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::rng_from_seed;
    use std::collections::HashMap;

    fn perm(order: &[usize]) -> PermutationMatrix {
        PermutationMatrix::from_order(order.to_vec()).unwrap()
    }

    #[test]
    fn worked_examples() {
        let eq = PlScores::new(vec![1.0; 3]).unwrap();
        for order in all_permutations(3) {
            let lp = pl_log_pmf(&eq, &perm(&order)).unwrap();
            assert!((lp - (1.0f64 / 6.0).ln()).abs() < 1e-14);
        }
        let s = PlScores::new(vec![2.0, 1.0, 1.0]).unwrap();
        let lp = pl_log_pmf(&s, &PermutationMatrix::identity(3)).unwrap();
        // (2/4)(1/2)(1/1)
        assert!((lp - 0.25f64.ln()).abs() < 1e-15);
        let one = PlScores::new(vec![3.3]).unwrap();
        assert_eq!(pl_log_pmf(&one, &PermutationMatrix::identity(1)).unwrap(), 0.0);
    }

    #[test]
    fn rejects_non_permutations() {
        assert!(PermutationMatrix::from_order(vec![0, 0, 1]).is_err());
        assert!(PermutationMatrix::from_order(vec![0, 3, 1]).is_err());
        assert!(PermutationMatrix::from_matrix(&[vec![1, 0], vec![1, 0]]).is_err());
        assert!(PermutationMatrix::from_matrix(&[vec![1, 1], vec![0, 0]]).is_err());
        let p = PermutationMatrix::from_matrix(&[vec![0, 1], vec![1, 0]]).unwrap();
        assert_eq!(p.order(), &[1, 0]);
        assert_eq!(p.to_matrix(), vec![vec![0, 1], vec![1, 0]]);
        let s = PlScores::new(vec![1.0; 3]).unwrap();
        assert!(pl_log_pmf(&s, &PermutationMatrix::identity(2)).is_err());
        assert!(PlScores::new(vec![1.0, -1.0]).is_err());
        assert!(PlScores::with_beta(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn max_perm_examples() {
        let s = PlScores::new(vec![0.3, 0.1, 0.2]).unwrap();
        assert_eq!(pl_max_perm(&s).order(), &[0, 2, 1]);
        let best = all_permutations(3)
            .into_iter()
            .map(|o| (pl_log_pmf(&s, &perm(&o)).unwrap(), o))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap();
        assert_eq!(best.1, vec![0, 2, 1]);
        assert_eq!(pl_max_perm(&PlScores::new(vec![1.0; 4]).unwrap()).order(), &[0, 1, 2, 3]);
        assert_eq!(pl_max_perm(&PlScores::new(vec![4.0, 3.0, 2.0]).unwrap()).order(), &[0, 1, 2]);
    }

    #[test]
    fn subset_permutation_examples() {
        let s = PlScores::new(vec![2.0, 1.0, 1.0]).unwrap();
        let sp = SubsetPermutation::new(vec![0], 3).unwrap();
        assert!((subset_perm_log_prob(&s, &sp, &[]).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        let sp = SubsetPermutation::new(vec![1], 3).unwrap();
        assert!((subset_perm_log_prob(&s, &sp, &[0]).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        let full = SubsetPermutation::new(vec![2, 0, 1], 3).unwrap();
        let a = subset_perm_log_prob(&s, &full, &[]).unwrap();
        let b = pl_log_pmf(&s, &perm(&[2, 0, 1])).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(matches!(
            subset_perm_log_prob(&s, &sp, &[1]),
            Err(DrpmError::Validation(_))
        ));
        assert!(SubsetPermutation::new(vec![1, 1], 3).is_err());
    }

    #[test]
    fn neuralsort_examples() {
        assert_eq!(neuralsort_hard(&[0.3, 0.1, 0.2]).order(), &[0, 2, 1]);
        assert_eq!(neuralsort_hard(&[3.0, 2.0, 1.0, 0.0]).order(), &[0, 1, 2, 3]);
        assert_eq!(neuralsort_hard(&[0.5; 4]).order(), &[0, 1, 2, 3]);
        // duplicated values would repeat a column without masking
        assert_eq!(neuralsort_hard(&[1.0, 2.0, 2.0]).order(), &[1, 2, 0]);

        let r = neuralsort_relaxed(&[0.3, 0.1, 0.2], 0.01).unwrap();
        assert_eq!(r.hard.order(), &[0, 2, 1]);
        let hard = r.hard.to_matrix();
        let dev = r
            .values
            .iter()
            .flatten()
            .zip(hard.iter().flatten())
            .map(|(a, &b)| (a - b as f64).abs())
            .fold(0.0, f64::max);
        // every row's top score leads the runner-up by 0.1, so at τ = 0.01 the
        // diagonal mass is 1 / (1 + e^-10 + e^-(gap2/τ)); recompute it directly
        let rows = [[0.3, -0.1, 0.2], [-0.3, -0.3, -0.2], [-0.9, -0.5, -0.6]];
        let oracle = rows
            .iter()
            .map(|row| {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|x| ((x - m) / 0.01).exp()).sum();
                1.0 - 1.0 / z
            })
            .fold(0.0, f64::max);
        assert!((dev - oracle).abs() < 1e-12, "{dev} vs {oracle}");
        assert!((oracle - 2.0 * (-10f64).exp()).abs() < 1e-7);
        assert!(dev < 1e-4);

        let single = neuralsort_relaxed(&[4.2], 0.3).unwrap();
        assert_eq!(single.values, vec![vec![1.0]]);
        assert!(neuralsort_relaxed(&[1.0], 0.0).is_err());
    }

    #[test]
    fn neuralsort_rows_are_softmax() {
        let mut rng = rng_from_seed(9);
        for _ in 0..100 {
            let v: Vec<f64> = (0..6).map(|_| standard_gumbel(&mut rng)).collect();
            let r = neuralsort_relaxed(&v, 0.7).unwrap();
            for row in &r.values {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            assert_eq!(r.hard.order(), argsort_descending(&v).as_slice());
        }
    }

    #[test]
    fn pl_normalizes() {
        let s = PlScores::new(vec![0.3, 2.0, 1.1, 0.7, 5.0]).unwrap();
        let total: f64 = all_permutations(5)
            .iter()
            .map(|o| pl_log_pmf(&s, &perm(o)).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_sample_is_descending_argsort() {
        let s = PlScores::new(vec![0.2, 0.9, 0.5]).unwrap();
        assert_eq!(pl_sample_from_noise(&s, &[0.0; 3]).order(), &[1, 2, 0]);
    }

    #[test]
    fn symmetric_sampling_frequencies() {
        let s = PlScores::new(vec![1.0; 3]).unwrap();
        let mut rng = rng_from_seed(21);
        let m = 600_000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..m {
            *counts.entry(pl_sample(&s, &mut rng).order().to_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            assert!((*c as f64 / m as f64 - 1.0 / 6.0).abs() < 0.002);
        }

        let s = PlScores::new(vec![2.0, 1.0, 1.0]).unwrap();
        let m = 1_000_000;
        let id = (0..m)
            .filter(|_| pl_sample(&s, &mut rng).order() == [0, 1, 2])
            .count();
        assert!((id as f64 / m as f64 - 0.25).abs() < 0.002);
    }

    #[test]
    fn permutations_enumerate_in_order() {
        let p = all_permutations(3);
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], vec![0, 1, 2]);
        assert_eq!(p[5], vec![2, 1, 0]);
        assert_eq!(all_permutations(0), vec![Vec::<usize>::new()]);
    }
}
