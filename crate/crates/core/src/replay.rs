//! Transition history, policy snapshots and the likelihood cache.
//!
//! Snapshot and transition indices are zero-based: iteration `k` collects the
//! batch `T_k` under snapshot `k`. When snapshot `k` joins the cache, the store
//! evaluates the log-likelihood of every stored transition under snapshot `k`
//! and of every not-yet-covered transition under each earlier snapshot, so
//! iteration `k` costs `|D_k| + k * |T_k|` evaluations and nothing is ever
//! recomputed.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::estimator::ReuseSet;
use crate::policy::{Action, ActorCritic, LIKELIHOOD_FLOOR};

/// One observed step, tagged with the snapshot that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub policy_index: usize,
    /// `next_state` is terminal (time-limit truncation is not terminal).
    pub done: bool,
}

/// Frozen model parameters. Actor and critic share one flat vector because
/// the shared-trunk architecture has parameters that belong to both.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    pub index: usize,
    pub params: Vec<f64>,
}

/// Computes `log π_θ(a|s)` for a batch of transitions under a snapshot.
pub trait LikelihoodModel {
    fn log_likelihoods(
        &mut self,
        snapshot: &PolicySnapshot,
        transitions: &[Transition],
    ) -> Result<Vec<f64>>;
}

/// Evaluates snapshots by loading their parameters into a scratch model.
#[derive(Debug, Clone)]
pub struct SnapshotEvaluator {
    model: ActorCritic,
    loaded: Option<usize>,
}

impl SnapshotEvaluator {
    pub fn new(model: ActorCritic) -> Self {
        Self {
            model,
            loaded: None,
        }
    }
}

impl LikelihoodModel for SnapshotEvaluator {
    fn log_likelihoods(
        &mut self,
        snapshot: &PolicySnapshot,
        transitions: &[Transition],
    ) -> Result<Vec<f64>> {
        if self.loaded != Some(snapshot.index) {
            self.model.set_params(&snapshot.params)?;
            self.loaded = Some(snapshot.index);
        }
        transitions
            .iter()
            .map(|t| self.model.log_prob(&t.state, &t.action))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayStore {
    transitions: Vec<Transition>,
    /// Global index of `transitions[0]`.
    first_index: usize,
    snapshots: Vec<PolicySnapshot>,
    /// `loglik[r][j]`: log-likelihood of `transitions[j]` under `snapshots[r]`.
    loglik: Vec<Vec<f64>>,
    evaluations: u64,
    max_snapshots: Option<usize>,
}

impl ReplayStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps at most `cap` snapshots; older ones are dropped together with
    /// their transitions.
    pub fn with_capacity_limit(cap: Option<usize>) -> Self {
        Self {
            max_snapshots: cap.map(|c| c.max(1)),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Global index one past the newest stored transition.
    pub fn end_index(&self) -> usize {
        self.first_index + self.transitions.len()
    }

    pub fn first_index(&self) -> usize {
        self.first_index
    }

    /// Likelihood evaluations performed so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// Number of cached log-likelihood values.
    pub fn cache_entries(&self) -> usize {
        self.loglik.iter().map(Vec::len).sum()
    }

    pub fn snapshots(&self) -> &[PolicySnapshot] {
        &self.snapshots
    }

    pub fn snapshot(&self, index: usize) -> Option<&PolicySnapshot> {
        self.row(index).map(|r| &self.snapshots[r])
    }

    pub fn latest_snapshot(&self) -> Option<&PolicySnapshot> {
        self.snapshots.last()
    }

    /// Index the next snapshot (and the next batch) must carry.
    pub fn next_index(&self) -> usize {
        self.snapshots.last().map_or(0, |s| s.index + 1)
    }

    fn row(&self, snapshot_index: usize) -> Option<usize> {
        self.snapshots
            .binary_search_by_key(&snapshot_index, |s| s.index)
            .ok()
    }

    pub fn transition(&self, global: usize) -> &Transition {
        &self.transitions[global - self.first_index]
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Global index range of the transitions generated by a snapshot.
    pub fn range_of(&self, policy_index: usize) -> Range<usize> {
        let lo = self
            .transitions
            .partition_point(|t| t.policy_index < policy_index);
        let hi = self
            .transitions
            .partition_point(|t| t.policy_index <= policy_index);
        self.first_index + lo..self.first_index + hi
    }

    pub fn transitions_of(&self, policy_index: usize) -> &[Transition] {
        let r = self.range_of(policy_index);
        &self.transitions[r.start - self.first_index..r.end - self.first_index]
    }

    /// Cached `log π_i(a_t|s_t)`, floored at `ln(LIKELIHOOD_FLOOR)`.
    pub fn log_likelihood(&self, snapshot_index: usize, global: usize) -> Result<f64> {
        let missing = Error::CacheIncomplete {
            snapshot: snapshot_index,
            transition: global,
        };
        let row = self.row(snapshot_index).ok_or(missing.clone())?;
        let col = global.checked_sub(self.first_index).ok_or(missing.clone())?;
        self.loglik[row].get(col).copied().ok_or(missing)
    }

    /// Adds a batch generated by the snapshot that will be cached next.
    pub fn append_batch(&mut self, batch: Vec<Transition>) -> Result<()> {
        let Some(first) = batch.first() else {
            return Ok(());
        };
        let k = first.policy_index;
        if let Some(t) = batch.iter().find(|t| t.policy_index != k) {
            return Err(Error::BatchIntegrity(k, t.policy_index));
        }
        if k != self.next_index() {
            return Err(Error::SnapshotOrder {
                expected: self.next_index(),
                got: k,
            });
        }
        self.transitions.extend(batch);
        Ok(())
    }

    /// Caches a new snapshot: its likelihood of every stored transition, plus
    /// the likelihood of transitions not yet covered under every earlier
    /// snapshot. Returns the number of evaluations performed.
    pub fn extend_cache<M: LikelihoodModel + ?Sized>(
        &mut self,
        snapshot: PolicySnapshot,
        model: &mut M,
    ) -> Result<usize> {
        if snapshot.index != self.next_index() {
            return Err(Error::SnapshotOrder {
                expected: self.next_index(),
                got: snapshot.index,
            });
        }
        let floor = LIKELIHOOD_FLOOR.ln();
        let mut count = 0;
        for r in 0..self.snapshots.len() {
            let covered = self.loglik[r].len();
            if covered < self.transitions.len() {
                let fresh = model.log_likelihoods(&self.snapshots[r], &self.transitions[covered..])?;
                count += fresh.len();
                self.loglik[r].extend(fresh.into_iter().map(|v| v.max(floor)));
            }
        }
        let row = model.log_likelihoods(&snapshot, &self.transitions)?;
        count += row.len();
        self.loglik.push(row.into_iter().map(|v| v.max(floor)).collect());
        self.snapshots.push(snapshot);
        self.evaluations += count as u64;
        self.evict();
        Ok(count)
    }

    fn evict(&mut self) {
        let Some(cap) = self.max_snapshots else {
            return;
        };
        while self.snapshots.len() > cap {
            let old = self.snapshots.remove(0);
            self.loglik.remove(0);
            let drop = self
                .transitions
                .partition_point(|t| t.policy_index <= old.index);
            self.transitions.drain(..drop);
            for row in &mut self.loglik {
                row.drain(..drop.min(row.len()));
            }
            self.first_index += drop;
        }
    }

    /// Uniform minibatch (without replacement) of global indices drawn from
    /// the union of transitions generated by the snapshots in `reuse`.
    pub fn batch_for<R: Rng + ?Sized>(
        &self,
        reuse: &ReuseSet,
        minibatch: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        let ranges: Vec<Range<usize>> = reuse
            .indices()
            .iter()
            .map(|&i| self.range_of(i))
            .filter(|r| !r.is_empty())
            .collect();
        let total: usize = ranges.iter().map(|r| r.len()).sum();
        if total == 0 {
            return Err(Error::EmptyReuse);
        }
        let picks = rand::seq::index::sample(rng, total, minibatch.min(total));
        Ok(picks
            .into_iter()
            .map(|mut p| {
                for r in &ranges {
                    if p < r.len() {
                        return r.start + p;
                    }
                    p -= r.len();
                }
                unreachable!("pick within total")
            })
            .collect())
    }

    /// Writes the store as versioned line-delimited text.
    pub fn dump<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "vrer-store 1")?;
        writeln!(
            out,
            "meta {} {} {}",
            self.first_index,
            self.evaluations,
            self.max_snapshots.map_or("none".to_string(), |c| c.to_string())
        )?;
        for s in &self.snapshots {
            let mut line = format!("S {} {}", s.index, s.params.len());
            for p in &s.params {
                write!(line, " {p}").expect("string write");
            }
            writeln!(out, "{line}")?;
        }
        for t in &self.transitions {
            let mut line = format!("T {}", t.state.len());
            for v in &t.state {
                write!(line, " {v}").expect("string write");
            }
            match t.action {
                Action::Discrete(a) => write!(line, " D {a}"),
                Action::Continuous(a) => write!(line, " C {a}"),
            }
            .expect("string write");
            for v in &t.next_state {
                write!(line, " {v}").expect("string write");
            }
            write!(line, " {} {} {}", t.reward, t.policy_index, u8::from(t.done))
                .expect("string write");
            writeln!(out, "{line}")?;
        }
        for (s, row) in self.snapshots.iter().zip(&self.loglik) {
            let mut line = format!("L {} {}", s.index, row.len());
            for v in row {
                write!(line, " {v}").expect("string write");
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Reads a store written by [`ReplayStore::dump`].
    pub fn restore<R: BufRead>(input: R) -> Result<Self> {
        let mut store = ReplayStore::new();
        let mut lines = input.lines().enumerate();
        let bad = |line: usize, reason: &str| Error::Format {
            line: line + 1,
            reason: reason.to_string(),
        };
        match lines.next() {
            Some((_, Ok(h))) if h.trim() == "vrer-store 1" => {}
            _ => return Err(bad(0, "missing or unsupported header")),
        }
        for (no, line) in lines {
            let line = line?;
            let mut tok = line.split_whitespace();
            let tag = match tok.next() {
                Some(t) => t,
                None => continue,
            };
            let mut num = |what: &str| -> Result<f64> {
                tok.next()
                    .ok_or_else(|| bad(no, &format!("missing {what}")))?
                    .parse::<f64>()
                    .map_err(|_| bad(no, &format!("bad {what}")))
            };
            match tag {
                "meta" => {
                    store.first_index = num("first index")? as usize;
                    store.evaluations = num("evaluation count")? as u64;
                    store.max_snapshots = match tok.next() {
                        Some("none") | None => None,
                        Some(c) => Some(c.parse().map_err(|_| bad(no, "bad cap"))?),
                    };
                }
                "S" => {
                    let index = num("snapshot index")? as usize;
                    let n = num("parameter count")? as usize;
                    let params = (0..n).map(|_| num("parameter")).collect::<Result<_>>()?;
                    store.snapshots.push(PolicySnapshot { index, params });
                }
                "T" => {
                    let dim = num("state dimension")? as usize;
                    let state = (0..dim).map(|_| num("state")).collect::<Result<Vec<_>>>()?;
                    let kind = tok.next().ok_or_else(|| bad(no, "missing action"))?;
                    let mut num = |what: &str| -> Result<f64> {
                        tok.next()
                            .ok_or_else(|| bad(no, &format!("missing {what}")))?
                            .parse::<f64>()
                            .map_err(|_| bad(no, &format!("bad {what}")))
                    };
                    let action = match kind {
                        "D" => Action::Discrete(num("action")? as usize),
                        "C" => Action::Continuous(num("action")?),
                        _ => return Err(bad(no, "unknown action kind")),
                    };
                    let next_state = (0..dim).map(|_| num("next state")).collect::<Result<_>>()?;
                    let reward = num("reward")?;
                    let policy_index = num("policy index")? as usize;
                    let done = num("done flag")? != 0.0;
                    store.transitions.push(Transition {
                        state,
                        action,
                        next_state,
                        reward,
                        policy_index,
                        done,
                    });
                }
                "L" => {
                    let index = num("snapshot index")? as usize;
                    let n = num("row length")? as usize;
                    let row = (0..n).map(|_| num("log-likelihood")).collect::<Result<_>>()?;
                    if store.snapshots.get(store.loglik.len()).map(|s| s.index) != Some(index) {
                        return Err(bad(no, "likelihood row out of order"));
                    }
                    store.loglik.push(row);
                }
                _ => return Err(bad(no, "unknown record")),
            }
        }
        if store.loglik.len() != store.snapshots.len() {
            return Err(bad(0, "missing likelihood rows"));
        }
        Ok(store)
    }
}
