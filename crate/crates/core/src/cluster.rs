//! Feature-space clustering: k-means, an evolutionary search over the cluster
//! count, nearest-prototype classification and cluster-balanced sampling.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{mix, stream};
use crate::tissue::{PatchGrid, PatchRecord};

/// Value reported when the within-cluster dispersion is zero.
pub const OBJECTIVE_CAP: f64 = 1e300;

const MAX_LLOYD_ITERATIONS: usize = 300;
const SHIFT_TOLERANCE: f64 = 1e-6;
const KMEANS_RESTARTS: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub value: f64,
    /// Within-cluster dispersion was zero; `value` is [`OBJECTIVE_CAP`].
    pub capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub objective: f64,
    pub objective_capped: bool,
    pub seed: u64,
}

impl ClusterModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }

    /// Index of the nearest centroid (lowest index on ties).
    pub fn nearest(&self, v: &[f64]) -> usize {
        nearest(&self.centroids, v).0
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub population: usize,
    pub generations: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub mutation_rate: f64,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population: 16,
            generations: 20,
            k_min: 2,
            k_max: 8,
            mutation_rate: 0.3,
            seed: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_min < 2 || self.k_max < self.k_min {
            return Err(Error::Config(format!(
                "cluster range [{}, {}] must satisfy 2 <= k_min <= k_max",
                self.k_min, self.k_max
            )));
        }
        if self.population < 4 {
            return Err(Error::Config("population must be at least 4".into()));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::Config("mutation_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, v);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn check_features(features: &[Vec<f64>]) -> Result<usize> {
    let dim = features.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::Input("features are empty".into()));
    }
    for f in features {
        if f.len() != dim {
            return Err(Error::Input(format!("feature length {} != {dim}", f.len())));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
    }
    Ok(dim)
}

fn mean_of<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, dim: usize) -> (Vec<f64>, usize) {
    let mut sum = vec![0.0; dim];
    let mut n = 0;
    for r in rows {
        for (s, v) in sum.iter_mut().zip(r) {
            *s += v;
        }
        n += 1;
    }
    if n > 0 {
        for s in &mut sum {
            *s /= n as f64;
        }
    }
    (sum, n)
}

fn within_dispersion(features: &[Vec<f64>], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    features
        .iter()
        .zip(assignment)
        .map(|(f, &a)| sq_dist(f, &centroids[a]))
        .sum()
}

/// Calinski–Harabasz ratio `(B / (k-1)) / (W / (n-k))`; higher is better.
pub fn cluster_objective(features: &[Vec<f64>], assignment: &[usize], centroids: &[Vec<f64>]) -> Result<Objective> {
    let dim = check_features(features)?;
    let k = centroids.len();
    let n = features.len();
    if assignment.len() != n {
        return Err(Error::Input("assignment length differs from feature count".into()));
    }
    if k < 2 {
        return Err(Error::Input("objective needs at least two clusters".into()));
    }
    if centroids.iter().any(|c| c.len() != dim) {
        return Err(Error::Input("centroid dimension differs from features".into()));
    }
    let mut sizes = vec![0usize; k];
    for &a in assignment {
        if a >= k {
            return Err(Error::Input(format!("assignment {a} out of range for k = {k}")));
        }
        sizes[a] += 1;
    }
    if let Some(c) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::DegenerateClustering(format!("cluster {c} is empty")));
    }
    let (grand, _) = mean_of(features.iter(), dim);
    let between: f64 = centroids
        .iter()
        .zip(&sizes)
        .map(|(c, &s)| s as f64 * sq_dist(c, &grand))
        .sum();
    let within = within_dispersion(features, assignment, centroids);
    if within == 0.0 {
        if between == 0.0 {
            return Err(Error::DegenerateClustering("all points coincide".into()));
        }
        return Ok(Objective {
            value: OBJECTIVE_CAP,
            capped: true,
        });
    }
    let value = (between / (k - 1) as f64) / (within / (n - k) as f64);
    Ok(Objective {
        value: value.min(OBJECTIVE_CAP),
        capped: value >= OBJECTIVE_CAP,
    })
}

fn kmeans_plus_plus(features: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(seed);
    let n = features.len();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = features.iter().map(|f| sq_dist(f, &features[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    acc += d;
                    if acc > target {
                        break;
                    }
                }
            }
            pick.expect("some distance is positive")
        } else {
            // Every point coincides with a centroid; take the first unused index.
            (0..n).find(|i| !chosen.contains(i)).expect("n >= k")
        };
        chosen.push(next);
        for (d, f) in d2.iter_mut().zip(features) {
            *d = d.min(sq_dist(f, &features[next]));
        }
    }
    chosen.into_iter().map(|i| features[i].clone()).collect()
}

/// One k-means run; returns centroids, assignment and the within-cluster
/// dispersion measured after every assignment step.
fn lloyd(features: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>, Vec<f64>) {
    let k = centroids.len();
    let mut assignment = vec![0usize; features.len()];
    let mut trace = Vec::new();
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut dists = vec![0.0; features.len()];
        for (i, f) in features.iter().enumerate() {
            let (c, d) = nearest(&centroids, f);
            assignment[i] = c;
            dists[i] = d;
        }
        // Re-seed empty clusters at the worst-served points.
        let mut sizes = vec![0usize; k];
        for &a in &assignment {
            sizes[a] += 1;
        }
        for c in 0..k {
            if sizes[c] == 0 {
                let far = (0..features.len())
                    .filter(|&i| sizes[assignment[i]] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    sizes[assignment[i]] -= 1;
                    assignment[i] = c;
                    sizes[c] = 1;
                    dists[i] = 0.0;
                    centroids[c] = features[i].clone();
                }
            }
        }
        trace.push(within_dispersion(features, &assignment, &centroids));
        let mut shift: f64 = 0.0;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let (mean, count) = mean_of(
                features.iter().zip(&assignment).filter(|(_, &a)| a == c).map(|(f, _)| f),
                dim,
            );
            if count > 0 {
                shift = shift.max(sq_dist(centroid, &mean).sqrt());
                *centroid = mean;
            }
        }
        if shift < SHIFT_TOLERANCE {
            break;
        }
    }
    for (i, f) in features.iter().enumerate() {
        assignment[i] = nearest(&centroids, f).0;
    }
    trace.push(within_dispersion(features, &assignment, &centroids));
    (centroids, assignment, trace)
}

/// k-means with k-means++ seeding, keeping the best of a few seeded restarts.
/// The returned trace is the within-cluster dispersion per Lloyd step of the
/// kept restart.
pub fn kmeans_with_trace(features: &[Vec<f64>], k: usize, seed: u64) -> Result<(ClusterModel, Vec<f64>)> {
    let dim = check_features(features)?;
    if k < 2 {
        return Err(Error::Input(format!("k = {k}; need at least 2 clusters")));
    }
    if features.len() < k {
        return Err(Error::Input(format!("{} points cannot form {k} clusters", features.len())));
    }
    let mut best: Option<(f64, Vec<Vec<f64>>, Vec<usize>, Vec<f64>)> = None;
    for restart in 0..KMEANS_RESTARTS {
        let init = kmeans_plus_plus(features, k, mix(&[seed, restart]));
        let (centroids, assignment, trace) = lloyd(features, init, dim);
        let w = *trace.last().expect("trace is non-empty");
        if best.as_ref().map_or(true, |b| w < b.0) {
            best = Some((w, centroids, assignment, trace));
        }
    }
    let (_, centroids, assignment, trace) = best.expect("at least one restart");
    let objective = cluster_objective(features, &assignment, &centroids)?;
    Ok((
        ClusterModel {
            k,
            centroids,
            assignment,
            objective: objective.value,
            objective_capped: objective.capped,
            seed,
        },
        trace,
    ))
}

pub fn kmeans_assign(features: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterModel> {
    kmeans_with_trace(features, k, seed).map(|(m, _)| m)
}

/// Seed used for the k-means run at a given cluster count.
pub fn kmeans_seed_for(search_seed: u64, k: usize) -> u64 {
    mix(&[search_seed, k as u64])
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionTrace {
    pub model: ClusterModel,
    /// Population of each generation, starting with generation 0.
    pub generations: Vec<Vec<usize>>,
    /// Fitness of every k evaluated; degenerate clusterings score `-inf`.
    pub fitness: BTreeMap<usize, f64>,
}

pub fn evolve_cluster_count(features: &[Vec<f64>], cfg: &EvolutionConfig) -> Result<ClusterModel> {
    evolve_cluster_count_traced(features, cfg).map(|t| t.model)
}

/// Genetic search over k: tournament selection of size two, ±1 mutation and
/// one elite carried forward. Each k is clustered once with a seed derived
/// from `(cfg.seed, k)`, so the result does not depend on evaluation order.
pub fn evolve_cluster_count_traced(features: &[Vec<f64>], cfg: &EvolutionConfig) -> Result<EvolutionTrace> {
    cfg.validate()?;
    check_features(features)?;
    if features.len() < cfg.k_max {
        return Err(Error::Input(format!(
            "{} points cannot form up to {} clusters",
            features.len(),
            cfg.k_max
        )));
    }
    let mut models: BTreeMap<usize, Option<ClusterModel>> = BTreeMap::new();
    let evaluate = |pop: &[usize], models: &mut BTreeMap<usize, Option<ClusterModel>>| -> Result<()> {
        let mut fresh: Vec<usize> = pop.iter().copied().filter(|k| !models.contains_key(k)).collect();
        fresh.sort_unstable();
        fresh.dedup();
        let results: Vec<(usize, Result<ClusterModel>)> = fresh
            .into_par_iter()
            .map(|k| (k, kmeans_assign(features, k, kmeans_seed_for(cfg.seed, k))))
            .collect();
        for (k, r) in results {
            match r {
                Ok(m) => models.insert(k, Some(m)),
                Err(Error::DegenerateClustering(_)) => models.insert(k, None),
                Err(e) => return Err(e),
            };
        }
        Ok(())
    };
    let fit = |models: &BTreeMap<usize, Option<ClusterModel>>, k: usize| {
        models[&k].as_ref().map_or(f64::NEG_INFINITY, |m| m.objective)
    };
    // Higher fitness wins; smaller k breaks ties.
    let better = |models: &BTreeMap<usize, Option<ClusterModel>>, a: usize, b: usize| {
        let (fa, fb) = (fit(models, a), fit(models, b));
        fa > fb || (fa == fb && a < b)
    };

    let mut rng = stream(mix(&[cfg.seed, 0x65_766f_6c76_65]));
    let mut pop: Vec<usize> = (0..cfg.population)
        .map(|_| rng.gen_range(cfg.k_min..=cfg.k_max))
        .collect();
    evaluate(&pop, &mut models)?;
    let mut generations = vec![pop.clone()];
    for _ in 0..cfg.generations {
        let elite = pop
            .iter()
            .copied()
            .reduce(|a, b| if better(&models, b, a) { b } else { a })
            .expect("population is non-empty");
        let mut next = Vec::with_capacity(cfg.population);
        next.push(elite);
        while next.len() < cfg.population {
            let a = pop[rng.gen_range(0..pop.len())];
            let b = pop[rng.gen_range(0..pop.len())];
            let mut child = if better(&models, b, a) { b } else { a };
            if rng.gen::<f64>() < cfg.mutation_rate {
                child = if rng.gen::<bool>() { child + 1 } else { child.saturating_sub(1) };
                child = child.clamp(cfg.k_min, cfg.k_max);
            }
            next.push(child);
        }
        evaluate(&next, &mut models)?;
        generations.push(next.clone());
        pop = next;
    }
    let fitness: BTreeMap<usize, f64> = models.keys().map(|&k| (k, fit(&models, k))).collect();
    let best_k = models
        .keys()
        .copied()
        .reduce(|a, b| if better(&models, b, a) { b } else { a })
        .expect("at least one k evaluated");
    let model = models
        .remove(&best_k)
        .flatten()
        .ok_or_else(|| Error::DegenerateClustering("every evaluated k was degenerate".into()))?;
    Ok(EvolutionTrace {
        model,
        generations,
        fitness,
    })
}

/// Mean feature vector of each class's examples.
pub fn class_prototypes(examples: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    if examples.is_empty() {
        return Err(Error::Input("no classes given".into()));
    }
    let dim = examples
        .iter()
        .flatten()
        .next()
        .map(Vec::len)
        .ok_or_else(|| Error::Input("no examples given".into()))?;
    examples
        .iter()
        .enumerate()
        .map(|(c, ex)| {
            if ex.is_empty() {
                return Err(Error::Input(format!("class {c} has no examples")));
            }
            if ex.iter().any(|e| e.len() != dim) {
                return Err(Error::Input(format!("class {c} has an example of the wrong length")));
            }
            Ok(mean_of(ex.iter(), dim).0)
        })
        .collect()
}

/// Class of the nearest prototype (Euclidean); the lowest class index wins ties.
pub fn prototype_classify(prototypes: &[Vec<f64>], query: &[f64]) -> Result<usize> {
    if prototypes.is_empty() {
        return Err(Error::Input("no prototypes".into()));
    }
    if prototypes.iter().any(|p| p.len() != query.len()) {
        return Err(Error::Input(format!(
            "query has {} features, prototypes have {}",
            query.len(),
            prototypes[0].len()
        )));
    }
    Ok(nearest(prototypes, query).0)
}

/// Up to `per_cluster` records drawn uniformly without replacement from each
/// cluster. `model.assignment` is indexed like `grid.tissue_records()`.
/// Output is grouped by cluster, each group in grid order.
pub fn balanced_sample(grid: &PatchGrid, model: &ClusterModel, per_cluster: usize, seed: u64) -> Result<Vec<PatchRecord>> {
    let records: Vec<&PatchRecord> = grid.tissue_records().collect();
    if records.len() != model.assignment.len() {
        return Err(Error::Consistency(format!(
            "model covers {} patches, grid has {} tissue patches",
            model.assignment.len(),
            records.len()
        )));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); model.k];
    for (i, &a) in model.assignment.iter().enumerate() {
        if a >= model.k {
            return Err(Error::Consistency(format!("assignment {a} out of range")));
        }
        members[a].push(i);
    }
    let mut out = Vec::new();
    for (c, m) in members.iter().enumerate() {
        let mut rng = stream(mix(&[seed, c as u64]));
        let take = per_cluster.min(m.len());
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, m.len(), take)
            .into_iter()
            .map(|j| m[j])
            .collect();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| records[i].clone()));
    }
    Ok(out)
}
