//! Question-set selection: k-means clustering, the diversity-aware value
//! function, and its maximization under a knapsack budget.
//!
//! The value of a set `S` with budget `b` is
//! `(sum of increments in S - b) + beta * sum_k sqrt(|C_k ∩ S|)`.
//! It is monotone and submodular, so a threshold greedy with single-element
//! augmentation reaches at least `(1/2 - eps)` of the optimal gain over the
//! empty set.

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::difficulty::DifficultyTable;
use crate::error::{Error, Result};
use crate::numeric::{rng, stable_sum};
use crate::schedule::ScheduleState;

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const BRUTE_FORCE_LIMIT: usize = 22;
const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    #[serde(rename = "K")]
    pub k: usize,
    pub assignment: IndexMap<String, usize>,
    pub centroids: Vec<Vec<f64>>,
}

impl ClusterAssignment {
    pub fn cluster_of(&self, id: &str) -> Result<usize> {
        self.assignment
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("question `{id}` has no cluster")))
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        // strict: ties keep the lowest index
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

/// Lloyd's k-means with seeded k-means++ initialization.
pub fn kmeans_cluster(
    embeddings: &IndexMap<String, Vec<f64>>,
    k: usize,
    seed: u64,
) -> Result<ClusterAssignment> {
    if embeddings.is_empty() {
        return Err(Error::invalid("cannot cluster an empty embedding set"));
    }
    if k == 0 {
        return Err(Error::invalid("cluster count K must be >= 1"));
    }
    let points: Vec<&[f64]> = embeddings.values().map(Vec::as_slice).collect();
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("embeddings have inconsistent dimensions"));
    }
    let n = points.len();
    let mut r = rng(seed);

    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[r.random_range(0..n)].to_vec());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total = stable_sum(d2.iter().copied());
        let pick = if total > 0.0 {
            let target = r.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            r.random_range(0..n)
        };
        let c = points[pick].to_vec();
        for (d, p) in d2.iter_mut().zip(&points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }

    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..KMEANS_MAX_ITERS {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for (c, (s, &cnt)) in centroids.iter_mut().zip(sums.into_iter().zip(&counts)) {
            if cnt > 0 {
                *c = s.into_iter().map(|v| v / cnt as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }

    Ok(ClusterAssignment {
        k,
        assignment: embeddings.keys().cloned().zip(assign).collect(),
        centroids,
    })
}

/// Difficulty each unexhausted question would add if its input steps were
/// reduced by `step_reduction` (clamped at zero).
pub fn candidate_increments(
    state: &ScheduleState,
    table: &DifficultyTable,
    step_reduction: usize,
) -> Result<IndexMap<String, f64>> {
    let mut out = IndexMap::new();
    for (id, &c) in &state.c {
        if c == 0 {
            continue;
        }
        let steps = table.steps(id)?;
        if c > steps.len() {
            return Err(Error::invalid(format!(
                "input-step count {c} exceeds steps of `{id}`"
            )));
        }
        let lo = c.saturating_sub(step_reduction);
        out.insert(id.clone(), stable_sum(steps[lo..c].iter().copied()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub increment: f64,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionProblem {
    /// In input order; ties everywhere resolve towards earlier candidates.
    pub candidates: Vec<Candidate>,
    pub budget: f64,
    pub n_clusters: usize,
    pub beta: f64,
}

impl SelectionProblem {
    pub fn new(
        candidates: Vec<Candidate>,
        budget: f64,
        n_clusters: usize,
        beta: f64,
    ) -> Result<Self> {
        if !(budget >= 0.0) || !budget.is_finite() {
            return Err(Error::invalid(format!(
                "budget must be finite and >= 0, got {budget}"
            )));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::invalid(format!(
                "beta must be finite and >= 0, got {beta}"
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &candidates {
            if !(c.increment >= 0.0) || !c.increment.is_finite() {
                return Err(Error::invalid(format!(
                    "candidate `{}` has invalid increment {}",
                    c.id, c.increment
                )));
            }
            if c.cluster >= n_clusters {
                return Err(Error::invalid(format!(
                    "candidate `{}` cluster {} >= K = {n_clusters}",
                    c.id, c.cluster
                )));
            }
            if !seen.insert(c.id.as_str()) {
                return Err(Error::DuplicateId(c.id.clone()));
            }
        }
        Ok(Self {
            candidates,
            budget,
            n_clusters,
            beta,
        })
    }

    pub fn from_increments(
        increments: &IndexMap<String, f64>,
        clusters: &ClusterAssignment,
        budget: f64,
        beta: f64,
    ) -> Result<Self> {
        let candidates = increments
            .iter()
            .map(|(id, &increment)| {
                Ok(Candidate {
                    id: id.clone(),
                    increment,
                    cluster: clusters.cluster_of(id)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(candidates, budget, clusters.k, beta)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    fn indices_of(&self, ids: &[&str]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let i = self
                .candidates
                .iter()
                .position(|c| c.id == *id)
                .ok_or_else(|| Error::invalid(format!("`{id}` is not a candidate")))?;
            if out.contains(&i) {
                return Err(Error::invalid(format!("`{id}` listed twice")));
            }
            out.push(i);
        }
        Ok(out)
    }

    pub fn ids(&self, set: &[usize]) -> Vec<String> {
        set.iter().map(|&i| self.candidates[i].id.clone()).collect()
    }

    pub fn cost(&self, set: &[usize]) -> f64 {
        stable_sum(set.iter().map(|&i| self.candidates[i].increment))
    }

    fn diversity(&self, counts: &[usize]) -> f64 {
        self.beta * stable_sum(counts.iter().map(|&n| (n as f64).sqrt()))
    }

    fn counts(&self, set: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.n_clusters];
        for &i in set {
            counts[self.candidates[i].cluster] += 1;
        }
        counts
    }

    /// Value of a set of candidate indices.
    pub fn value_of_indices(&self, set: &[usize]) -> f64 {
        (self.cost(set) - self.budget) + self.diversity(&self.counts(set))
    }

    /// Value minus the value of the empty set; the budget term cancels.
    pub fn gain_of_indices(&self, set: &[usize]) -> f64 {
        self.cost(set) + self.diversity(&self.counts(set))
    }

    pub fn value_of(&self, ids: &[&str]) -> Result<f64> {
        Ok(self.value_of_indices(&self.indices_of(ids)?))
    }

    pub fn marginal_gain(&self, ids: &[&str], x: &str) -> Result<f64> {
        let set = self.indices_of(ids)?;
        let xi = self.indices_of(&[x])?[0];
        if set.contains(&xi) {
            return Err(Error::invalid(format!("`{x}` is already in the set")));
        }
        let n_k = self.counts(&set)[self.candidates[xi].cluster];
        Ok(self.gain_from_count(xi, n_k))
    }

    fn gain_from_count(&self, i: usize, n_k: usize) -> f64 {
        self.candidates[i].increment + self.beta * ((n_k as f64 + 1.0).sqrt() - (n_k as f64).sqrt())
    }

    /// Threshold greedy with single-element augmentation under the budget.
    ///
    /// Returns candidate indices in input order. The result's cost never
    /// exceeds the budget.
    pub fn select_ftgp(&self, eps: f64) -> Result<Vec<usize>> {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::invalid(format!(
                "epsilon must lie in (0, 1/2), got {eps}"
            )));
        }
        let n = self.len();
        let mut greedy = Greedy::new(self);

        // free items always fit
        for i in 0..n {
            if self.candidates[i].increment == 0.0 {
                greedy.add(i);
            }
        }

        let fits = |g: &Greedy, i: usize| -> bool {
            !g.selected[i] && g.used + self.candidates[i].increment <= self.budget
        };

        let mut best_single: Option<(usize, f64)> = None;
        for i in 0..n {
            let d = self.candidates[i].increment;
            if d > 0.0 && d <= self.budget {
                let v = self.gain_from_count(i, 0);
                if best_single.is_none_or(|(_, b)| v > b) {
                    best_single = Some((i, v));
                }
            }
        }

        if let Some((_, single_gain)) = best_single {
            let theta_max = (0..n)
                .filter(|&i| fits(&greedy, i))
                .map(|i| greedy.gain(i) / self.candidates[i].increment)
                .fold(0.0, f64::max);
            let theta_min = eps * single_gain / self.budget;
            greedy.augment();
            let mut theta = theta_max;
            while theta >= theta_min && theta > 0.0 {
                for i in 0..n {
                    if fits(&greedy, i) && greedy.gain(i) / self.candidates[i].increment >= theta {
                        greedy.add(i);
                        greedy.augment();
                    }
                }
                theta *= 1.0 - eps;
            }
            // the value is monotone, so any leftover room is worth filling
            for i in 0..n {
                if fits(&greedy, i) {
                    greedy.add(i);
                    greedy.augment();
                }
            }
        }

        let mut best = greedy.order.clone();
        let mut best_gain = self.gain_of_indices(&best);
        if let Some((prefix, extra, _)) = greedy.best_augmented {
            let mut s = greedy.order[..prefix].to_vec();
            s.push(extra);
            let g = self.gain_of_indices(&s);
            if g > best_gain {
                best = s;
                best_gain = g;
            }
        }
        if let Some((i, g)) = best_single {
            if g > best_gain {
                best = vec![i];
            }
        }
        best.sort_unstable();
        Ok(best)
    }

    /// Exhaustive optimum; ties go to the lexicographically smallest id set.
    pub fn select_bruteforce(&self) -> Result<Vec<usize>> {
        let n = self.len();
        if n > BRUTE_FORCE_LIMIT {
            return Err(Error::invalid(format!(
                "brute force limited to {BRUTE_FORCE_LIMIT} candidates, got {n}"
            )));
        }
        let sorted_ids = |mask: u32| -> Vec<&str> {
            let mut v: Vec<&str> = (0..n)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| self.candidates[i].id.as_str())
                .collect();
            v.sort_unstable();
            v
        };
        let set_of = |mask: u32| -> Vec<usize> { (0..n).filter(|i| mask >> i & 1 == 1).collect() };

        let mut best_mask = 0u32;
        let mut best_value = self.value_of_indices(&[]);
        // Gray-code walk: one element flips per step
        let mut mask = 0u32;
        let mut cost = 0.0f64;
        let mut counts = vec![0usize; self.n_clusters];
        for step in 1u64..(1u64 << n) {
            let bit = step.trailing_zeros() as usize;
            let c = &self.candidates[bit];
            mask ^= 1 << bit;
            if mask >> bit & 1 == 1 {
                cost += c.increment;
                counts[c.cluster] += 1;
            } else {
                cost -= c.increment;
                counts[c.cluster] -= 1;
            }
            let slack = 1e-9 * self.budget.abs().max(1.0);
            if cost > self.budget + slack {
                continue;
            }
            let approx = cost - self.budget + self.diversity(&counts);
            if approx < best_value - slack {
                continue;
            }
            let set = set_of(mask);
            if self.cost(&set) > self.budget {
                continue;
            }
            let v = self.value_of_indices(&set);
            let tol = 1e-12 * v.abs().max(1.0);
            if v > best_value + tol
                || ((v - best_value).abs() <= tol && sorted_ids(mask) < sorted_ids(best_mask))
            {
                best_value = v;
                best_mask = mask;
            }
        }
        Ok(set_of(best_mask))
    }
}

struct Greedy<'a> {
    problem: &'a SelectionProblem,
    selected: Vec<bool>,
    order: Vec<usize>,
    counts: Vec<usize>,
    used: f64,
    /// (greedy prefix length, added element, gain)
    best_augmented: Option<(usize, usize, f64)>,
}

impl<'a> Greedy<'a> {
    fn new(problem: &'a SelectionProblem) -> Self {
        Self {
            problem,
            selected: vec![false; problem.len()],
            order: Vec::new(),
            counts: vec![0; problem.n_clusters],
            used: 0.0,
            best_augmented: None,
        }
    }

    fn gain(&self, i: usize) -> f64 {
        let k = self.problem.candidates[i].cluster;
        self.problem.gain_from_count(i, self.counts[k])
    }

    fn add(&mut self, i: usize) {
        let c = &self.problem.candidates[i];
        self.selected[i] = true;
        self.order.push(i);
        self.counts[c.cluster] += 1;
        self.used += c.increment;
    }

    /// Records the best single feasible extension of the current set.
    fn augment(&mut self) {
        let base = self.problem.gain_of_indices(&self.order);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.problem.len() {
            if self.selected[i]
                || self.used + self.problem.candidates[i].increment > self.problem.budget
            {
                continue;
            }
            let g = self.gain(i);
            if best.is_none_or(|(_, b)| g > b) {
                best = Some((i, g));
            }
        }
        if let Some((i, g)) = best {
            let total = base + g;
            if self.best_augmented.is_none_or(|(_, _, b)| total > b) {
                self.best_augmented = Some((self.order.len(), i, total));
            }
        }
    }
}
