//! Policy-gradient estimators and the reuse-set selection rule.
//!
//! Per-sample contributions are `g_k(s,a) = A(s,a) ∇log π_k(a|s)`. Reweighted
//! estimators multiply them by a likelihood ratio: the individual ratio
//! `π_k/π_i` (ILR) or the mixture ratio `π_k / Σ_i α_i π_i` (MLR). Trace
//! variances always refer to the variance of the sample *mean*, i.e. the
//! per-sample covariance trace divided by the sample count.

use rand::Rng;

use crate::error::{Error, Result};
use crate::policy::{Action, ActorCritic};
use crate::replay::{ReplayStore, Transition};

/// A gradient estimate with the estimated trace of its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    /// `+∞` when fewer than two samples were available.
    pub trace_var: f64,
    pub n_samples: usize,
}

/// Snapshot indices whose transitions are reused at the current iteration.
/// Always contains the current index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReuseSet {
    current: usize,
    indices: Vec<usize>,
}

impl ReuseSet {
    pub fn new(current: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut indices: Vec<usize> = indices.into_iter().filter(|&i| i <= current).collect();
        indices.push(current);
        indices.sort_unstable();
        indices.dedup();
        Self { current, indices }
    }

    /// The on-policy set `{k}`.
    pub fn only(current: usize) -> Self {
        Self::new(current, [])
    }

    pub fn current(&self) -> usize {
        self.current
    }

    /// Sorted, deduplicated.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

/// Streaming mean and covariance trace of a sequence of vectors (Welford).
#[derive(Debug, Clone)]
pub struct MeanAccumulator {
    n: usize,
    mean: Vec<f64>,
    m2: f64,
}

impl MeanAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: 0.0,
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Adds `scale * x`.
    pub fn push_scaled(&mut self, x: &[f64], scale: f64) -> Result<()> {
        if x.len() != self.mean.len() {
            return Err(Error::Dimension {
                expected: self.mean.len(),
                got: x.len(),
                context: "sample vector",
            });
        }
        self.n += 1;
        let inv = 1.0 / self.n as f64;
        let mut m2 = 0.0;
        for (m, &v) in self.mean.iter_mut().zip(x) {
            let v = scale * v;
            let delta = v - *m;
            *m += delta * inv;
            m2 += delta * (v - *m);
        }
        self.m2 += m2;
        Ok(())
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        self.push_scaled(x, 1.0)
    }

    /// Trace of the unbiased per-sample covariance; `+∞` below two samples.
    pub fn sample_trace(&self) -> f64 {
        if self.n < 2 {
            f64::INFINITY
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Trace variance of the mean of `population` samples, estimated from
    /// the samples seen so far.
    pub fn trace_var_of_mean(&self, population: usize) -> f64 {
        self.sample_trace() / population.max(1) as f64
    }

    pub fn finish(self) -> GradientEstimate {
        GradientEstimate {
            trace_var: self.trace_var_of_mean(self.n),
            n_samples: self.n,
            grad: self.mean,
        }
    }
}

/// Trace of the covariance of the mean of `samples`.
pub fn trace_variance(samples: &[Vec<f64>]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let mut acc = MeanAccumulator::new(samples[0].len());
    for s in samples {
        acc.push(s)?;
    }
    Ok(acc.finish().trace_var)
}

/// `A · ∇log π(a|s)`.
pub fn per_sample_gradient(
    model: &ActorCritic,
    state: &[f64],
    action: &Action,
    advantage: f64,
) -> Result<Vec<f64>> {
    let eval = model.evaluate(state)?;
    let mut g = vec![0.0; model.parameter_count()];
    model.accumulate_score(&eval, action, advantage, &mut g)?;
    Ok(g)
}

/// `π_target / π_behavior` from log-likelihoods.
pub fn ilr_ratio(target_ll: f64, behavior_ll: f64) -> f64 {
    (target_ll - behavior_ll).exp()
}

/// `π_target / Σ_i α_i π_i` from log-likelihoods, computed in log space.
pub fn mixture_ratio(target_ll: f64, component_lls: &[f64], weights: &[f64]) -> f64 {
    let terms = component_lls
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&l, &w)| l + w.ln());
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let lse = max + terms.map(|t| (t - max).exp()).sum::<f64>().ln();
    (target_ll - lse).exp()
}

fn check_len(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected,
            got,
            context,
        })
    }
}

/// Importance-weighted mean of per-sample gradients drawn from one
/// behavior policy.
pub fn ilr_estimate(
    samples: &[Vec<f64>],
    target_ll: &[f64],
    behavior_ll: &[f64],
) -> Result<GradientEstimate> {
    check_len(samples.len(), target_ll.len(), "target log-likelihoods")?;
    check_len(samples.len(), behavior_ll.len(), "behavior log-likelihoods")?;
    let Some(first) = samples.first() else {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    };
    let mut acc = MeanAccumulator::new(first.len());
    for ((g, &t), &b) in samples.iter().zip(target_ll).zip(behavior_ll) {
        acc.push_scaled(g, ilr_ratio(t, b))?;
    }
    Ok(acc.finish())
}

/// Mixture-weighted mean of per-sample gradients pooled from several
/// behavior policies. `component_ll[j][i]` is the log-likelihood of sample
/// `j` under component `i`; `weights` are the mixture proportions.
pub fn mlr_estimate(
    samples: &[Vec<f64>],
    target_ll: &[f64],
    component_ll: &[Vec<f64>],
    weights: &[f64],
) -> Result<GradientEstimate> {
    check_len(samples.len(), target_ll.len(), "target log-likelihoods")?;
    check_len(samples.len(), component_ll.len(), "component log-likelihoods")?;
    let Some(first) = samples.first() else {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    };
    let mut acc = MeanAccumulator::new(first.len());
    for ((g, &t), c) in samples.iter().zip(target_ll).zip(component_ll) {
        check_len(weights.len(), c.len(), "mixture weights")?;
        acc.push_scaled(g, mixture_ratio(t, c, weights))?;
    }
    Ok(acc.finish())
}

/// Keeps every candidate whose ILR trace variance is at most `c` times the
/// on-policy one. The current index is always kept.
pub fn select_reuse_set(
    current: usize,
    pg_trace_var: f64,
    candidates: &[(usize, f64)],
    c: f64,
) -> Result<ReuseSet> {
    if c <= 1.0 || !c.is_finite() {
        return Err(Error::Config(format!("selection constant must exceed 1, got {c}")));
    }
    let bound = c * pg_trace_var;
    Ok(ReuseSet::new(
        current,
        candidates
            .iter()
            .filter(|(_, v)| *v <= bound)
            .map(|&(i, _)| i),
    ))
}

/// Supplies the on-policy per-sample gradient `g_k` for stored transitions.
pub trait SampleGradient {
    fn dim(&self) -> usize;
    /// Writes `g_k(s,a)` into `out`, which arrives zeroed.
    fn sample_gradient(&self, t: &Transition, out: &mut [f64]) -> Result<()>;
}

/// Outcome of screening every stored snapshot against the current one.
#[derive(Debug, Clone, PartialEq)]
pub struct Screening {
    pub reuse: ReuseSet,
    pub pg_trace_var: f64,
    /// `(snapshot index, ILR trace variance)` for every candidate.
    pub candidates: Vec<(usize, f64)>,
}

fn subsample<R: Rng + ?Sized>(
    range: std::ops::Range<usize>,
    cap: Option<usize>,
    rng: &mut R,
) -> Vec<usize> {
    match cap {
        Some(m) if m < range.len() => {
            let mut picks: Vec<usize> = rand::seq::index::sample(rng, range.len(), m)
                .into_iter()
                .map(|p| range.start + p)
                .collect();
            picks.sort_unstable();
            picks
        }
        _ => range.collect(),
    }
}

/// Evaluates the selection rule over all snapshots in the store. Each
/// candidate's variance is estimated from at most `n_eval` of its samples.
pub fn screen<G: SampleGradient + ?Sized, R: Rng + ?Sized>(
    grads: &G,
    store: &ReplayStore,
    current: usize,
    c: f64,
    n_eval: Option<usize>,
    rng: &mut R,
) -> Result<Screening> {
    let mut g = vec![0.0; grads.dim()];
    let mut candidates = Vec::with_capacity(store.snapshots().len());
    for snap in store.snapshots() {
        let i = snap.index;
        let range = store.range_of(i);
        let population = range.len();
        let mut acc = MeanAccumulator::new(grads.dim());
        for j in subsample(range, n_eval, rng) {
            let t = store.transition(j);
            g.fill(0.0);
            grads.sample_gradient(t, &mut g)?;
            let w = if i == current {
                1.0
            } else {
                ilr_ratio(store.log_likelihood(current, j)?, store.log_likelihood(i, j)?)
            };
            acc.push_scaled(&g, w)?;
        }
        candidates.push((i, acc.trace_var_of_mean(population)));
    }
    let pg_trace_var = candidates
        .iter()
        .find(|(i, _)| *i == current)
        .map(|&(_, v)| v)
        .ok_or(Error::CacheIncomplete {
            snapshot: current,
            transition: store.end_index(),
        })?;
    let reuse = select_reuse_set(current, pg_trace_var, &candidates, c)?;
    Ok(Screening {
        reuse,
        pg_trace_var,
        candidates,
    })
}

/// How stored samples are reweighted towards the current policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reweighting {
    /// Mixture likelihood ratio over the reuse set.
    Mixture,
    /// Per-sample ratio to the generating snapshot; contributions whose
    /// ratio leaves `[1-ε, 1+ε]` in the direction of the advantage vanish.
    Clipped(f64),
}

/// Trace variance of the reweighted gradient mean over all transitions of
/// `reuse`, estimated from at most `n_eval` samples per snapshot.
pub fn reuse_trace_variance<G: SampleGradient + ?Sized, R: Rng + ?Sized>(
    grads: &G,
    store: &ReplayStore,
    reuse: &ReuseSet,
    kind: Reweighting,
    n_eval: Option<usize>,
    advantage: impl Fn(&Transition) -> Result<f64>,
    rng: &mut R,
) -> Result<f64> {
    let k = reuse.current();
    let counts: Vec<usize> = reuse.indices().iter().map(|&i| store.range_of(i).len()).collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyReuse);
    }
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let mut g = vec![0.0; grads.dim()];
    let mut comp = vec![0.0; weights.len()];
    let mut acc = MeanAccumulator::new(grads.dim());
    for &i in reuse.indices() {
        for j in subsample(store.range_of(i), n_eval, rng) {
            let t = store.transition(j);
            let target = store.log_likelihood(k, j)?;
            let w = match kind {
                Reweighting::Mixture => {
                    for (slot, &u) in comp.iter_mut().zip(reuse.indices()) {
                        *slot = store.log_likelihood(u, j)?;
                    }
                    mixture_ratio(target, &comp, &weights)
                }
                Reweighting::Clipped(eps) => {
                    let r = ilr_ratio(target, store.log_likelihood(i, j)?);
                    let a = advantage(t)?;
                    if (a > 0.0 && r > 1.0 + eps) || (a < 0.0 && r < 1.0 - eps) {
                        0.0
                    } else {
                        r
                    }
                }
            };
            g.fill(0.0);
            if w != 0.0 {
                grads.sample_gradient(t, &mut g)?;
            }
            acc.push_scaled(&g, w)?;
        }
    }
    Ok(acc.trace_var_of_mean(total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_vectors(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    /// Trace of the full unbiased covariance matrix, divided by n.
    fn covariance_trace(x: &[Vec<f64>]) -> f64 {
        let n = x.len() as f64;
        let d = x[0].len();
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|v| v[j]).sum::<f64>() / n).collect();
        let mut cov = vec![vec![0.0; d]; d];
        for v in x {
            for a in 0..d {
                for b in 0..d {
                    cov[a][b] += (v[a] - mean[a]) * (v[b] - mean[b]) / (n - 1.0);
                }
            }
        }
        (0..d).map(|a| cov[a][a]).sum::<f64>() / n
    }

    #[test]
    fn trace_variance_matches_covariance_matrix() {
        let x = random_vectors(200, 5, 3);
        let got = trace_variance(&x).unwrap();
        let want = covariance_trace(&x);
        assert!((got - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn trace_variance_needs_two_samples() {
        assert!(matches!(
            trace_variance(&[vec![1.0]]),
            Err(Error::InsufficientSamples { .. })
        ));
        let single = ilr_estimate(&[vec![1.0, 2.0]], &[0.0], &[0.0]).unwrap();
        assert_eq!(single.trace_var, f64::INFINITY);
        assert_eq!(single.grad, vec![1.0, 2.0]);
    }

    #[test]
    fn ilr_with_equal_policies_is_the_plain_mean() {
        let x = random_vectors(50, 3, 9);
        let ll = vec![-0.7; 50];
        let est = ilr_estimate(&x, &ll, &ll).unwrap();
        for j in 0..3 {
            let m = x.iter().map(|v| v[j]).sum::<f64>() / 50.0;
            assert!((est.grad[j] - m).abs() < 1e-12);
        }
        assert!((est.trace_var - trace_variance(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mixture_ratio_reference_values() {
        let ln = f64::ln;
        // target 0.8, components 0.8 and 0.2 equally weighted -> 0.8 / 0.5
        let f = mixture_ratio(ln(0.8), &[ln(0.8), ln(0.2)], &[0.5, 0.5]);
        assert!((f - 1.6).abs() < 1e-12);
        // single component reduces to the individual ratio
        let f = mixture_ratio(ln(0.3), &[ln(0.6)], &[1.0]);
        assert!((f - ilr_ratio(ln(0.3), ln(0.6))).abs() < 1e-15);
        // extreme log-likelihoods stay finite
        let f = mixture_ratio(-900.0, &[-900.0, -1000.0], &[0.5, 0.5]);
        assert!((f - 2.0).abs() < 1e-9);
    }

    #[test]
    fn selection_always_keeps_current() {
        let reuse = select_reuse_set(4, 1.0, &[(0, 10.0), (2, 1.2), (4, 1.0)], 1.5).unwrap();
        assert_eq!(reuse.indices(), &[2, 4]);
        let none = select_reuse_set(4, 0.0, &[(0, 10.0)], 1.5).unwrap();
        assert_eq!(none.indices(), &[4]);
        assert!(select_reuse_set(0, 1.0, &[], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn mixture_ratio_is_bounded_by_set_size(
            lls in proptest::collection::vec(-40.0f64..0.0, 1..8),
            pick in 0usize..8,
        ) {
            let m = lls.len();
            let target = lls[pick % m];
            let weights = vec![1.0 / m as f64; m];
            let f = mixture_ratio(target, &lls, &weights);
            prop_assert!(f >= 0.0);
            prop_assert!(f <= m as f64 * (1.0 + 1e-12));
        }

        #[test]
        fn selection_is_permutation_invariant(
            vars in proptest::collection::vec(0.0f64..5.0, 1..10),
            pg in 0.1f64..3.0,
            seed in any::<u64>(),
        ) {
            let current = vars.len();
            let mut cands: Vec<(usize, f64)> = vars.iter().copied().enumerate().collect();
            let a = select_reuse_set(current, pg, &cands, 1.5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(cands.as_mut_slice(), &mut rng);
            let b = select_reuse_set(current, pg, &cands, 1.5).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn reuse_set_is_monotone_in_c(
            vars in proptest::collection::vec(0.0f64..5.0, 1..10),
            c1 in 1.01f64..3.0,
            dc in 0.0f64..3.0,
        ) {
            let cands: Vec<(usize, f64)> = vars.iter().copied().enumerate().collect();
            let small = select_reuse_set(vars.len(), 1.0, &cands, c1).unwrap();
            let large = select_reuse_set(vars.len(), 1.0, &cands, c1 + dc).unwrap();
            prop_assert!(small.indices().iter().all(|&i| large.contains(i)));
        }
    }
}
