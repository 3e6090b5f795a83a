//! Fisher's noncentral multivariate hypergeometric distribution (MVHG).
//!
//! `p(n; ω) = (1/P0) Π_k C(m_k, n_k) ω_k^{n_k}` over count vectors with
//! `Σ n_k = n` and `n_k ≤ m_k`. All arithmetic is in log space. The
//! normalizer and every sequential conditional come from the suffix table
//! `C_k(t)`: the log of the unnormalized mass of groups `k..K` summing to `t`.
//!
//! Sampling goes group by group through the exact conditionals
//! `p(n_k = j | n_{<k}) ∝ C(m_k, j) ω_k^j C_{k+1}(r - j)`, so there is no
//! merged-group bias.

use rand::Rng;

use crate::autodiff::{log_sum_exp, softmax, Real};
use crate::error::{check_tau, DrpmError, Result};
use crate::noise::{draw_count_gumbels, NoiseLayout};

/// Largest support that [`MvhgParams::support`] will materialize.
pub const SUPPORT_GUARD: u128 = 10_000_000;

const OMEGA_FLOOR: f64 = 1e-30;

/// Urn model: per-group capacities `m`, draw count `n`, importance weights `ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct MvhgParams {
    capacities: Vec<usize>,
    n: usize,
    omega: Vec<f64>,
    log_omega: Vec<f64>,
    ln_fact: Vec<f64>,
    suffix: Vec<Vec<Option<f64>>>,
}

impl MvhgParams {
    pub fn new(capacities: Vec<usize>, n: usize, omega: Vec<f64>) -> Result<Self> {
        if capacities.is_empty() {
            return Err(DrpmError::param("K", "at least one group is required"));
        }
        if omega.len() != capacities.len() {
            return Err(DrpmError::param(
                "omega",
                format!("expected {} weights, got {}", capacities.len(), omega.len()),
            ));
        }
        if let Some((k, w)) = omega
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(DrpmError::param(
                "omega",
                format!("weight {k} is {w}; weights must be finite and > 0"),
            ));
        }
        let total: usize = capacities.iter().sum();
        if n > total {
            return Err(DrpmError::param(
                "n",
                format!("{n} draws exceed the total capacity {total}"),
            ));
        }
        let log_omega: Vec<f64> = omega.iter().map(|w| w.max(OMEGA_FLOOR).ln()).collect();
        let ln_fact = ln_factorials(capacities.iter().copied().max().unwrap_or(0).max(n));
        let suffix = suffix_log_normalizers(&capacities, n, &log_omega, &ln_fact);
        Ok(Self {
            capacities,
            n,
            omega,
            log_omega,
            ln_fact,
            suffix,
        })
    }

    /// Every capacity set to `n`, the default for partition models.
    pub fn with_uniform_capacity(n: usize, omega: Vec<f64>) -> Result<Self> {
        let k = omega.len();
        Self::new(vec![n; k.max(1)], n, omega)
    }

    pub fn k(&self) -> usize {
        self.capacities.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn capacities(&self) -> &[usize] {
        &self.capacities
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn log_omega(&self) -> &[f64] {
        &self.log_omega
    }

    pub fn noise_layout(&self) -> NoiseLayout {
        NoiseLayout::new(&self.capacities, self.n)
    }

    /// Same urn with new weights.
    pub fn with_omega(&self, omega: Vec<f64>) -> Result<Self> {
        Self::new(self.capacities.clone(), self.n, omega)
    }

    /// `log P0`.
    pub fn log_normalizer(&self) -> f64 {
        self.suffix[0][self.n].expect("n <= total capacity")
    }

    pub(crate) fn ln_fact(&self) -> &[f64] {
        &self.ln_fact
    }

    pub fn is_in_support(&self, counts: &SubsetSizes) -> bool {
        counts.0.len() == self.k()
            && counts.total() == self.n
            && counts.0.iter().zip(&self.capacities).all(|(c, m)| c <= m)
    }

    /// Exact log-probability; `-inf` outside the support.
    pub fn log_pmf(&self, counts: &SubsetSizes) -> f64 {
        if !self.is_in_support(counts) {
            return f64::NEG_INFINITY;
        }
        log_pmf_generic(&self.capacities, self.n, &self.log_omega, &self.ln_fact, &counts.0)
    }

    pub fn pmf(&self, counts: &SubsetSizes) -> f64 {
        self.log_pmf(counts).exp()
    }

    /// Number of support points, computed without enumerating them.
    pub fn support_size(&self) -> u128 {
        let mut ways = vec![0u128; self.n + 1];
        ways[0] = 1;
        for &m in &self.capacities {
            let mut next = vec![0u128; self.n + 1];
            for (t, w) in ways.iter().enumerate() {
                if *w == 0 {
                    continue;
                }
                for j in 0..=m.min(self.n - t) {
                    next[t + j] = next[t + j].saturating_add(*w);
                }
            }
            ways = next;
        }
        ways[self.n]
    }

    /// All count vectors in the support, in lexicographic order.
    pub fn support(&self) -> Result<Vec<SubsetSizes>> {
        let required = self.support_size();
        if required > SUPPORT_GUARD {
            return Err(DrpmError::Capacity {
                what: "MVHG support enumeration",
                required,
                bound: SUPPORT_GUARD,
                hint: "reduce K or n",
            });
        }
        // tail capacity after group k
        let mut tail = vec![0usize; self.k() + 1];
        for k in (0..self.k()).rev() {
            tail[k] = tail[k + 1] + self.capacities[k];
        }
        let mut out = Vec::with_capacity(required as usize);
        let mut current = vec![0usize; self.k()];
        self.extend_support(0, self.n, &tail, &mut current, &mut out);
        Ok(out)
    }

    fn extend_support(
        &self,
        k: usize,
        remaining: usize,
        tail: &[usize],
        current: &mut Vec<usize>,
        out: &mut Vec<SubsetSizes>,
    ) {
        if k == self.k() {
            if remaining == 0 {
                out.push(SubsetSizes(current.clone()));
            }
            return;
        }
        let lo = remaining.saturating_sub(tail[k + 1]);
        let hi = self.capacities[k].min(remaining);
        for j in lo..=hi {
            current[k] = j;
            self.extend_support(k + 1, remaining - j, tail, current, out);
        }
        current[k] = 0;
    }

    /// Unnormalized log-weights of `n_k = j`, `j = 0..=min(m_k, remaining)`,
    /// given that `remaining` draws are left for groups `k..K` (`k` is 0-based).
    ///
    /// Infeasible values carry `-inf`. Normalizing gives `p(n_k = j | n_{<k})`.
    pub fn conditional_log_weights(&self, k: usize, remaining: usize) -> Result<Vec<f64>> {
        if k >= self.k() {
            return Err(DrpmError::Index {
                index: k,
                len: self.k(),
            });
        }
        if remaining > self.n {
            return Err(DrpmError::Validation(format!(
                "{remaining} remaining draws exceed n = {}",
                self.n
            )));
        }
        let weights = conditional_log_weights_generic(
            self.capacities[k],
            self.log_omega[k],
            &self.suffix[k + 1],
            remaining,
            &self.ln_fact,
        );
        Ok(weights
            .into_iter()
            .take(self.capacities[k].min(remaining) + 1)
            .map(|w| w.unwrap_or(f64::NEG_INFINITY))
            .collect())
    }

    /// Normalized conditional `p(n_k = · | remaining)`.
    pub fn conditional_probabilities(&self, k: usize, remaining: usize) -> Result<Vec<f64>> {
        let w = self.conditional_log_weights(k, remaining)?;
        let lse = log_sum_exp(&w).unwrap_or(f64::NEG_INFINITY);
        Ok(w.iter().map(|x| (x - lse).exp()).collect())
    }

    /// Exact draw by Gumbel-max over each sequential conditional.
    pub fn sample_hard<G: Rng + ?Sized>(&self, rng: &mut G) -> SubsetSizes {
        let gumbels = draw_count_gumbels(rng, &self.noise_layout());
        self.hard_from_noise(&gumbels)
    }

    /// Deterministic Gumbel-max draw from stored count noise (`Σ (m_k+1)` values).
    pub fn hard_from_noise(&self, count_gumbels: &[f64]) -> SubsetSizes {
        let layout = self.noise_layout();
        let mut remaining = self.n;
        let mut counts = Vec::with_capacity(self.k());
        for k in 0..self.k() {
            let weights = conditional_log_weights_generic(
                self.capacities[k],
                self.log_omega[k],
                &self.suffix[k + 1],
                remaining,
                &self.ln_fact,
            );
            let start = layout.group_offsets[k];
            let g = &count_gumbels[start..start + self.capacities[k] + 1];
            let j = perturbed_argmax(&weights, g);
            counts.push(j);
            remaining -= j;
        }
        SubsetSizes(counts)
    }

    /// Gumbel-softmax relaxation of [`Self::sample_hard`].
    ///
    /// Uses the same noise as `sample_hard` for the same RNG state, so the hard
    /// twin is identical sample by sample.
    pub fn sample_relaxed<G: Rng + ?Sized>(&self, tau: f64, rng: &mut G) -> Result<RelaxedCounts> {
        check_tau(tau)?;
        let gumbels = draw_count_gumbels(rng, &self.noise_layout());
        Ok(self.relaxed_from_noise(&gumbels, tau))
    }

    pub fn relaxed_from_noise(&self, count_gumbels: &[f64], tau: f64) -> RelaxedCounts {
        let relaxed = relaxed_counts_generic(
            &self.capacities,
            self.n,
            &self.log_omega,
            &self.ln_fact,
            count_gumbels,
            tau,
        );
        RelaxedCounts {
            tau,
            simplex: relaxed.simplex,
            hard: SubsetSizes(relaxed.hard),
        }
    }
}

/// Subset sizes `n = (n_1, …, n_K)`. Empty subsets are legal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubsetSizes(pub Vec<usize>);

impl SubsetSizes {
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    /// `ν_k = Σ_{ι<k} n_ι` for `k = 0..=K`; the last entry is `n`.
    pub fn prefix_sums(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.0.len() + 1);
        let mut acc = 0;
        out.push(0);
        for &c in &self.0 {
            acc += c;
            out.push(acc);
        }
        out
    }

    /// One-hot encoding of count `k` over `{0, …, capacity}`.
    pub fn one_hot(&self, k: usize, capacity: usize) -> Vec<f64> {
        let mut v = vec![0.0; capacity + 1];
        v[self.0[k]] = 1.0;
        v
    }
}

/// Per-group relaxed one-hots over `{0, …, m_k}` plus the straight-through hard twin.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedCounts {
    pub tau: f64,
    pub simplex: Vec<Vec<f64>>,
    pub hard: SubsetSizes,
}

impl RelaxedCounts {
    /// Relaxed count `Σ_j j p_kj` of every group.
    pub fn expected_counts(&self) -> Vec<f64> {
        self.simplex.iter().map(|p| expected_index(p)).collect()
    }
}

pub(crate) fn expected_index(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(j, q)| j as f64 * q).sum()
}

/// `ln k!` for `k = 0..=max`.
pub(crate) fn ln_factorials(max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(max + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..=max {
        acc += (i as f64).ln();
        out.push(acc);
    }
    out
}

#[inline]
fn ln_binom(ln_fact: &[f64], m: usize, j: usize) -> f64 {
    ln_fact[m] - ln_fact[j] - ln_fact[m - j]
}

/// Table `C[k][t]`, `k = 0..=K`, `t = 0..=n`; `None` where no tail sums to `t`.
pub(crate) fn suffix_log_normalizers<R: Real>(
    capacities: &[usize],
    n: usize,
    log_omega: &[R],
    ln_fact: &[f64],
) -> Vec<Vec<Option<R>>> {
    let k_groups = capacities.len();
    let zero = log_omega[0].lift(0.0);
    let mut table: Vec<Vec<Option<R>>> = vec![vec![None; n + 1]; k_groups + 1];
    table[k_groups][0] = Some(zero);
    for k in (0..k_groups).rev() {
        for t in 0..=n {
            let terms: Vec<R> = (0..=capacities[k].min(t))
                .filter_map(|j| {
                    table[k + 1][t - j].map(|tail| {
                        log_omega[k] * j as f64 + ln_binom(ln_fact, capacities[k], j) + tail
                    })
                })
                .collect();
            table[k][t] = log_sum_exp(&terms);
        }
    }
    table
}

/// Log-weights `log C(m_k, j) + j log ω_k + C_{k+1}(r - j)` for `j = 0..=m_k`.
pub(crate) fn conditional_log_weights_generic<R: Real>(
    capacity: usize,
    log_omega_k: R,
    next_suffix: &[Option<R>],
    remaining: usize,
    ln_fact: &[f64],
) -> Vec<Option<R>> {
    (0..=capacity)
        .map(|j| {
            if j > remaining {
                return None;
            }
            next_suffix[remaining - j]
                .map(|tail| log_omega_k * j as f64 + ln_binom(ln_fact, capacity, j) + tail)
        })
        .collect()
}

pub(crate) fn log_pmf_generic<R: Real>(
    capacities: &[usize],
    n: usize,
    log_omega: &[R],
    ln_fact: &[f64],
    counts: &[usize],
) -> R {
    let suffix = suffix_log_normalizers(capacities, n, log_omega, ln_fact);
    let mut acc = -suffix[0][n].expect("n <= total capacity");
    for (k, &c) in counts.iter().enumerate() {
        acc = acc + log_omega[k] * c as f64 + ln_binom(ln_fact, capacities[k], c);
    }
    acc
}

/// Lowest-index argmax of `w_j + g_j` over feasible `j`.
pub(crate) fn perturbed_argmax<R: Real>(weights: &[Option<R>], gumbels: &[f64]) -> usize {
    let mut best = None;
    let mut best_val = f64::NEG_INFINITY;
    for (j, w) in weights.iter().enumerate() {
        if let Some(w) = w {
            let v = w.value() + gumbels[j];
            if best.is_none() || v > best_val {
                best = Some(j);
                best_val = v;
            }
        }
    }
    best.expect("every conditional has a feasible value")
}

/// Relaxed counts evaluated generically.
pub(crate) struct GenericRelaxedCounts<R> {
    /// Per group, length `m_k + 1`; infeasible entries are constant zeros.
    pub simplex: Vec<Vec<R>>,
    pub hard: Vec<usize>,
}

pub(crate) fn relaxed_counts_generic<R: Real>(
    capacities: &[usize],
    n: usize,
    log_omega: &[R],
    ln_fact: &[f64],
    count_gumbels: &[f64],
    tau: f64,
) -> GenericRelaxedCounts<R> {
    let suffix = suffix_log_normalizers(capacities, n, log_omega, ln_fact);
    let mut remaining = n;
    let mut offset = 0;
    let mut simplex = Vec::with_capacity(capacities.len());
    let mut hard = Vec::with_capacity(capacities.len());
    for (k, &m) in capacities.iter().enumerate() {
        let g = &count_gumbels[offset..offset + m + 1];
        offset += m + 1;
        let weights =
            conditional_log_weights_generic(m, log_omega[k], &suffix[k + 1], remaining, ln_fact);
        let j = perturbed_argmax(&weights, g);
        let feasible: Vec<(usize, R)> = weights
            .iter()
            .enumerate()
            .filter_map(|(j, w)| w.map(|w| (j, w + g[j])))
            .collect();
        let logits: Vec<R> = feasible.iter().map(|(_, w)| *w).collect();
        let probs = softmax(&logits, tau);
        let zero = log_omega[k].lift(0.0);
        let mut row = vec![zero; m + 1];
        for ((idx, _), p) in feasible.iter().zip(probs) {
            row[*idx] = p;
        }
        simplex.push(row);
        hard.push(j);
        remaining -= j;
    }
    GenericRelaxedCounts { simplex, hard }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::rng_from_seed;

    fn binom(n: u64, k: u64) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    /// Direct evaluation of the PMF formula over a brute-force support.
    fn brute_pmf(m: &[usize], n: usize, omega: &[f64], counts: &[usize]) -> f64 {
        let unnorm = |c: &[usize]| {
            c.iter()
                .zip(m)
                .zip(omega)
                .map(|((&ci, &mi), &w)| binom(mi as u64, ci as u64) * w.powi(ci as i32))
                .product::<f64>()
        };
        let mut p0 = 0.0;
        let mut idx = vec![0usize; m.len()];
        loop {
            if idx.iter().sum::<usize>() == n {
                p0 += unnorm(&idx);
            }
            let mut k = 0;
            loop {
                if k == m.len() {
                    return unnorm(counts) / p0;
                }
                idx[k] += 1;
                if idx[k] <= m[k] {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    #[test]
    fn worked_example_log_pmf() {
        let p = MvhgParams::new(vec![3, 3], 3, vec![1.0, 1.0]).unwrap();
        let oracle = brute_pmf(&[3, 3], 3, &[1.0, 1.0], &[2, 1]);
        assert!((oracle - 0.45).abs() < 1e-15);
        let lp = p.log_pmf(&SubsetSizes(vec![2, 1]));
        assert!((lp - 0.45f64.ln()).abs() < 1e-12 * 0.45f64.ln().abs());
        let scaled = MvhgParams::new(vec![3, 3], 3, vec![2.0, 2.0]).unwrap();
        assert!((scaled.log_pmf(&SubsetSizes(vec![2, 1])) - lp).abs() < 1e-12);
    }

    #[test]
    fn single_group_is_forced() {
        let p = MvhgParams::new(vec![5], 5, vec![1.0]).unwrap();
        assert!(p.log_pmf(&SubsetSizes(vec![5])).abs() < 1e-15);
        assert_eq!(p.support().unwrap(), vec![SubsetSizes(vec![5])]);
        let mut rng = rng_from_seed(1);
        for _ in 0..10 {
            assert_eq!(p.sample_hard(&mut rng), SubsetSizes(vec![5]));
        }
        let relaxed = p.sample_relaxed(0.7, &mut rng).unwrap();
        assert_eq!(relaxed.simplex[0], vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn infeasible_counts_are_neg_infinity() {
        let p = MvhgParams::new(vec![2, 3], 3, vec![1.0, 1.0]).unwrap();
        assert_eq!(p.log_pmf(&SubsetSizes(vec![3, 0])), f64::NEG_INFINITY);
        assert_eq!(p.log_pmf(&SubsetSizes(vec![1, 1])), f64::NEG_INFINITY);
        assert_eq!(p.log_pmf(&SubsetSizes(vec![1, 1, 1])), f64::NEG_INFINITY);
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            MvhgParams::new(vec![1, 1], 3, vec![1.0, 1.0]),
            Err(DrpmError::InvalidParameter { ref field, .. }) if field == "n"
        ));
        assert!(matches!(
            MvhgParams::new(vec![3, 3], 3, vec![1.0, 0.0]),
            Err(DrpmError::InvalidParameter { ref field, .. }) if field == "omega"
        ));
        assert!(MvhgParams::new(vec![], 0, vec![]).is_err());
        assert!(MvhgParams::new(vec![3], 3, vec![f64::NAN]).is_err());
    }

    #[test]
    fn support_order_and_size() {
        let p = MvhgParams::new(vec![3, 3], 3, vec![1.0, 1.0]).unwrap();
        let s: Vec<Vec<usize>> = p.support().unwrap().into_iter().map(|c| c.0).collect();
        assert_eq!(s, vec![vec![0, 3], vec![1, 2], vec![2, 1], vec![3, 0]]);

        let p = MvhgParams::new(vec![2, 2, 2], 2, vec![1.0; 3]).unwrap();
        // brute force: all vectors in {0,1,2}^3 summing to 2
        let mut brute = 0;
        for a in 0..=2 {
            for b in 0..=2 {
                for c in 0..=2 {
                    if a + b + c == 2 {
                        brute += 1;
                    }
                }
            }
        }
        assert_eq!(brute, 6);
        assert_eq!(p.support().unwrap().len(), 6);
        assert_eq!(p.support_size(), 6);
    }

    #[test]
    fn support_guard() {
        let p = MvhgParams::new(vec![60; 8], 60, vec![1.0; 8]).unwrap();
        assert!(p.support_size() > SUPPORT_GUARD);
        assert!(matches!(p.support(), Err(DrpmError::Capacity { .. })));
    }

    #[test]
    fn conditional_weights_worked_example() {
        let p = MvhgParams::new(vec![3, 3], 3, vec![1.0, 1.0]).unwrap();
        let w = p.conditional_log_weights(0, 3).unwrap();
        let expect = [1.0f64, 9.0, 9.0, 1.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b.ln()).abs() < 1e-12);
        }
        let probs = p.conditional_probabilities(0, 3).unwrap();
        assert!((probs[2] - 0.45).abs() < 1e-14);
        // last group: remainder forced
        let last = p.conditional_probabilities(1, 2).unwrap();
        assert_eq!(last.len(), 3);
        assert!((last[2] - 1.0).abs() < 1e-15);
        assert_eq!(last[0], 0.0);
        assert!(matches!(
            p.conditional_log_weights(2, 1),
            Err(DrpmError::Index { index: 2, len: 2 })
        ));
    }

    #[test]
    fn vanishing_tail_weight_forces_first_group() {
        let p = MvhgParams::new(vec![3, 3], 3, vec![1.0, 1e-9]).unwrap();
        let probs = p.conditional_probabilities(0, 3).unwrap();
        assert!(probs[3] > 1.0 - 1e-8);
    }

    #[test]
    fn conditionals_multiply_to_the_joint() {
        let p = MvhgParams::new(vec![2, 3, 4], 5, vec![0.3, 1.7, 0.9]).unwrap();
        for c in p.support().unwrap() {
            let mut remaining = 5;
            let mut prod = 1.0;
            for k in 0..3 {
                prod *= p.conditional_probabilities(k, remaining).unwrap()[c.0[k]];
                remaining -= c.0[k];
            }
            let joint = p.pmf(&c);
            assert!((prod - joint).abs() <= 1e-10 * joint, "{c:?}");
            let oracle = brute_pmf(&[2, 3, 4], 5, &[0.3, 1.7, 0.9], &c.0);
            assert!((joint - oracle).abs() <= 1e-12 * oracle.max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn hard_sampler_matches_pmf() {
        let p = MvhgParams::new(vec![3, 3], 3, vec![1.0, 1.0]).unwrap();
        let mut rng = rng_from_seed(7);
        let m = 1_000_000;
        let hits = (0..m)
            .filter(|_| p.sample_hard(&mut rng) == SubsetSizes(vec![2, 1]))
            .count();
        let freq = hits as f64 / m as f64;
        assert!((freq - 0.45).abs() < 0.002, "{freq}");
    }

    #[test]
    fn skewed_weights_concentrate() {
        let p = MvhgParams::new(vec![3, 3], 3, vec![1e6, 1.0]).unwrap();
        let mut rng = rng_from_seed(3);
        let m = 100_000;
        let hits = (0..m)
            .filter(|_| p.sample_hard(&mut rng) == SubsetSizes(vec![3, 0]))
            .count();
        // exact p(3,0) = 1e18 / (1e18 + 9e12 + 9e6 + 1)
        assert!(p.pmf(&SubsetSizes(vec![3, 0])) > 0.99999);
        assert!(hits as f64 / m as f64 > 0.999);
    }

    #[test]
    fn relaxed_rejects_bad_tau() {
        let p = MvhgParams::new(vec![3, 3], 3, vec![1.0, 1.0]).unwrap();
        let mut rng = rng_from_seed(0);
        assert!(matches!(
            p.sample_relaxed(0.0, &mut rng),
            Err(DrpmError::Domain { name: "tau", .. })
        ));
        assert!(p.sample_relaxed(-1.0, &mut rng).is_err());
    }

    #[test]
    fn relaxed_hard_twin_is_temperature_invariant_and_matches_hard() {
        let p = MvhgParams::new(vec![4, 4, 4], 4, vec![0.4, 1.3, 2.2]).unwrap();
        for seed in 0..10_000u64 {
            let hard = p.sample_hard(&mut rng_from_seed(seed));
            let a = p.sample_relaxed(1.0, &mut rng_from_seed(seed)).unwrap();
            let b = p.sample_relaxed(0.5, &mut rng_from_seed(seed)).unwrap();
            assert_eq!(a.hard, hard);
            assert_eq!(b.hard, hard);
            for row in &a.simplex {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn relaxed_sharpens_to_hard_one_hots() {
        let p = MvhgParams::new(vec![3, 3], 3, vec![1.0, 1.0]).unwrap();
        let layout = p.noise_layout();
        // noise with well separated perturbed logits
        let noise = [0.1, -0.3, 0.8, 0.2, 0.0, 0.5, -0.2, 0.4];
        let relaxed = p.relaxed_from_noise(&noise, 0.01);
        let hard = p.hard_from_noise(&noise);
        assert_eq!(relaxed.hard, hard);
        for (k, row) in relaxed.simplex.iter().enumerate() {
            let one_hot = hard.one_hot(k, layout.capacities[k]);
            let dev = row
                .iter()
                .zip(&one_hot)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(dev < 1e-6, "group {k}: {dev}");
        }
    }
}
