//! Bayesian Gaussian-mixture clustering of world-frame plane parameters.
//!
//! Features are `(s_n · n, d)` 4-vectors of canonical planes. The mixture is
//! fitted by MAP-EM with a symmetric Dirichlet prior on the weights
//! (concentration below one), so components that lose their support are
//! driven to zero weight and pruned. After EM converges, pairs of components
//! are merged while the merge lowers the BIC of the mixture; this removes the
//! duplicate components that over-seeding leaves on a single plane. The
//! number of room planes is then read off by thresholding the weights.

use std::cmp::Ordering;

use nalgebra::{Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Plane;
use crate::measurements::{GlobalMeasurement, Klass};

const DIM: usize = 4;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("k_max must be at least 1")]
    InvalidComponentCount,
    #[error("component {0} has a singular covariance")]
    SingularCovariance(usize),
    #[error("no cluster reaches the weight threshold {0}")]
    NoPlanesSelected(f64),
}

/// 4-vector `(s_n·nx, s_n·ny, s_n·nz, d)` of a canonical plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneFeature(pub [f64; DIM]);

impl PlaneFeature {
    pub fn from_plane(plane: &Plane, normal_scale: f64) -> Self {
        let n = plane.normal() * normal_scale;
        Self([n.x, n.y, n.z, plane.offset()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureConfig {
    /// Symmetric Dirichlet concentration on the weights.
    pub alpha0: f64,
    /// Per-dimension variance floor; `0` disables it.
    pub variance_floor: f64,
    /// Convergence threshold on the per-iteration objective improvement.
    pub tolerance: f64,
    /// Iteration cap per EM phase.
    pub max_iterations: usize,
    /// Merge redundant components after EM.
    pub merge: bool,
    /// Components whose planes are within this angle (degrees) and
    /// `coincident_offset_m` of each other are merged; `0` disables.
    pub coincident_angle_deg: f64,
    pub coincident_offset_m: f64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            alpha0: 0.5,
            variance_floor: 1e-6,
            tolerance: 1e-6,
            max_iterations: 200,
            merge: true,
            coincident_angle_deg: 5.0,
            coincident_offset_m: 0.1,
        }
    }
}

/// One mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneCluster {
    pub id: usize,
    pub weight: f64,
    pub mean: [f64; DIM],
    /// Diagonal of the covariance.
    pub variance: [f64; DIM],
    /// Sample indices whose largest responsibility is this component.
    pub members: Vec<usize>,
    pub plane: Plane,
}

impl PlaneCluster {
    pub fn covariance(&self) -> Matrix4<f64> {
        Matrix4::from_diagonal(&self.variance.into())
    }

    pub fn log_density(&self, x: &PlaneFeature) -> f64 {
        gaussian_log_density(&x.0, &self.mean, &self.variance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub clusters: Vec<PlaneCluster>,
    /// Log-likelihood of the final model over the distinct feature values,
    /// each weighted by its multiplicity relative to the rarest one.
    pub log_likelihood: f64,
    /// Total EM iterations over all phases.
    pub iterations: usize,
    pub seed: u64,
    /// MAP objective per iteration, one segment per EM phase. A phase ends
    /// whenever the component set changes (pruning or merging); within a
    /// segment the values are non-decreasing.
    pub objective_trace: Vec<Vec<f64>>,
    pub merges: usize,
}

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    mean: [f64; DIM],
    variance: [f64; DIM],
}

fn gaussian_log_density(x: &[f64; DIM], mean: &[f64; DIM], var: &[f64; DIM]) -> f64 {
    let mut acc = 0.0;
    for d in 0..DIM {
        let diff = x[d] - mean[d];
        acc += LN_2PI + var[d].ln() + diff * diff / var[d];
    }
    -0.5 * acc
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn lex_cmp(a: &[f64; DIM], b: &[f64; DIM]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

fn sq_dist(a: &[f64; DIM], b: &[f64; DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Distinct feature values with their multiplicities, scaled so the rarest
/// value has weight 1. Uniform duplication of the input leaves the samples
/// unchanged, which makes the whole fit invariant to it.
struct Samples {
    xs: Vec<PlaneFeature>,
    w: Vec<f64>,
    /// Distinct-value index of every input feature.
    index: Vec<usize>,
}

impl Samples {
    fn collapse(features: &[PlaneFeature]) -> Self {
        let mut order: Vec<usize> = (0..features.len()).collect();
        order.sort_by(|&a, &b| lex_cmp(&features[a].0, &features[b].0));
        let mut xs: Vec<PlaneFeature> = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        let mut index = vec![0; features.len()];
        for i in order {
            if xs.last().is_none_or(|u| lex_cmp(&u.0, &features[i].0).is_ne()) {
                xs.push(features[i]);
                counts.push(0.0);
            }
            *counts.last_mut().expect("pushed") += 1.0;
            index[i] = xs.len() - 1;
        }
        let min = counts.iter().copied().fold(f64::INFINITY, f64::min);
        Self { xs, w: counts.iter().map(|c| c / min).collect(), index }
    }

    fn total(&self) -> f64 {
        self.w.iter().sum()
    }
}

/// k-means++ seeding over the weighted distinct samples.
fn seed_means(s: &Samples, k: usize, seed: u64) -> Vec<[f64; DIM]> {
    let uniq: Vec<([f64; DIM], f64)> = s.xs.iter().zip(&s.w).map(|(x, &w)| (x.0, w)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng, w: &[f64]| -> Option<usize> {
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for (i, wi) in w.iter().enumerate() {
            acc += wi;
            if target < acc && *wi > 0.0 {
                return Some(i);
            }
        }
        w.iter().rposition(|&wi| wi > 0.0)
    };
    let counts: Vec<f64> = uniq.iter().map(|u| u.1).collect();
    let first = pick(&mut rng, &counts).expect("non-empty features");
    let mut centers = vec![uniq[first].0];
    let mut d2: Vec<f64> = uniq.iter().map(|(v, c)| sq_dist(v, &centers[0]) * c).collect();
    while centers.len() < k {
        let Some(next) = pick(&mut rng, &d2) else { break };
        let c = uniq[next].0;
        centers.push(c);
        for (slot, (v, cnt)) in d2.iter_mut().zip(&uniq) {
            *slot = slot.min(sq_dist(v, &c) * cnt);
        }
    }
    centers
}

struct EStep {
    /// Row-major `n × k` responsibilities.
    resp: Vec<f64>,
    log_likelihood: f64,
}

/// `ln w_j + ln N(x_i | j)`, row-major `n × k`.
fn log_joint(xs: &[PlaneFeature], comps: &[Component]) -> Vec<f64> {
    let k = comps.len();
    let pre: Vec<([f64; DIM], f64)> = comps
        .iter()
        .map(|c| {
            let inv = c.variance.map(|v| 1.0 / v);
            let norm: f64 = c.variance.iter().map(|v| LN_2PI + v.ln()).sum();
            (inv, c.weight.ln() - 0.5 * norm)
        })
        .collect();
    let mut out = vec![0.0; xs.len() * k];
    out.par_chunks_mut(k.max(1)).zip(xs.par_iter()).for_each(|(row, x)| {
        for (j, (inv, c0)) in pre.iter().enumerate() {
            let mean = &comps[j].mean;
            let mut q = 0.0;
            for d in 0..DIM {
                let diff = x.0[d] - mean[d];
                q += diff * diff * inv[d];
            }
            row[j] = c0 - 0.5 * q;
        }
    });
    out
}

fn e_step(s: &Samples, comps: &[Component]) -> EStep {
    let k = comps.len();
    let mut resp = log_joint(&s.xs, comps);
    let lses: Vec<f64> = resp
        .par_chunks_mut(k)
        .map(|row| {
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
            lse
        })
        .collect();
    EStep { resp, log_likelihood: lses.iter().zip(&s.w).map(|(l, w)| l * w).sum() }
}

fn log_prior(comps: &[Component], alpha0: f64) -> f64 {
    comps.iter().map(|c| (alpha0 - 1.0) * c.weight.ln()).sum()
}

/// Returns `true` if some component was pruned.
fn m_step(s: &Samples, e: &EStep, comps: &mut Vec<Component>, cfg: &MixtureConfig) -> bool {
    let k = comps.len();
    let xs = &s.xs;
    let n = xs.len();
    let mut nk = vec![0.0; k];
    let mut sum = vec![[0.0; DIM]; k];
    for i in 0..n {
        let x = &xs[i].0;
        for j in 0..k {
            let r = e.resp[i * k + j] * s.w[i];
            nk[j] += r;
            for d in 0..DIM {
                sum[j][d] += r * x[d];
            }
        }
    }
    let mut means = vec![[0.0; DIM]; k];
    for j in 0..k {
        if nk[j] > 0.0 {
            for d in 0..DIM {
                means[j][d] = sum[j][d] / nk[j];
            }
        } else {
            means[j] = comps[j].mean;
        }
    }
    let mut sq = vec![[0.0; DIM]; k];
    for i in 0..n {
        let x = &xs[i].0;
        for j in 0..k {
            let r = e.resp[i * k + j] * s.w[i];
            for d in 0..DIM {
                let diff = x[d] - means[j][d];
                sq[j][d] += r * diff * diff;
            }
        }
    }
    let raw: Vec<f64> = nk.iter().map(|&v| (v + cfg.alpha0 - 1.0).max(0.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut next = Vec::with_capacity(k);
    for j in 0..k {
        if raw[j] <= 0.0 {
            continue;
        }
        let mut variance = [0.0; DIM];
        for d in 0..DIM {
            variance[d] = (sq[j][d] / nk[j]).max(cfg.variance_floor);
        }
        next.push(Component { weight: raw[j] / total, mean: means[j], variance });
    }
    let pruned = next.len() < k;
    *comps = next;
    pruned
}

struct Phase {
    trace: Vec<f64>,
    iterations: usize,
}

/// EM until convergence or until the component set changes.
fn run_em(xs: &Samples, comps: &mut Vec<Component>, cfg: &MixtureConfig, budget: usize) -> (Phase, bool) {
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut prev = f64::NEG_INFINITY;
    while iterations < budget {
        let e = e_step(xs, comps);
        let obj = e.log_likelihood + log_prior(comps, cfg.alpha0);
        trace.push(obj);
        if obj - prev < cfg.tolerance && iterations > 0 {
            return (Phase { trace, iterations }, false);
        }
        prev = obj;
        iterations += 1;
        if m_step(xs, &e, comps, cfg) {
            return (Phase { trace, iterations }, true);
        }
    }
    (Phase { trace, iterations }, false)
}

fn moment_merge(a: &Component, b: &Component) -> Component {
    let w = a.weight + b.weight;
    let mut mean = [0.0; DIM];
    let mut variance = [0.0; DIM];
    for d in 0..DIM {
        mean[d] = (a.weight * a.mean[d] + b.weight * b.mean[d]) / w;
        let second = (a.weight * (a.variance[d] + a.mean[d] * a.mean[d])
            + b.weight * (b.variance[d] + b.mean[d] * b.mean[d]))
            / w;
        variance[d] = (second - mean[d] * mean[d]).max(a.variance[d].min(b.variance[d]));
    }
    Component { weight: w, mean, variance }
}

/// Best pair to merge under BIC, with the merged component list.
///
/// Only the merged column changes, so each trial reuses the per-point
/// log-sum-exp of the current model instead of a full E-step.
fn best_merge(s: &Samples, comps: &[Component]) -> Option<Vec<Component>> {
    let k = comps.len();
    if k < 2 {
        return None;
    }
    // free parameters per diagonal component: mean, variance, weight
    let penalty = 0.5 * (2 * DIM + 1) as f64 * s.total().ln();
    let xs = &s.xs;
    let joint = log_joint(xs, comps);
    // per point: max log joint and the shifted sum of exponentials
    let stats: Vec<(f64, f64)> = joint
        .chunks(k)
        .map(|row| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (m, row.iter().map(|l| (l - m).exp()).sum())
        })
        .collect();
    let current: f64 = stats.iter().zip(&s.w).map(|((m, t), w)| w * (m + t.ln())).sum();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect();
    let losses: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let merged = moment_merge(&comps[a], &comps[b]);
            let lw = merged.weight.ln();
            let mut ll = 0.0;
            for (i, x) in xs.iter().enumerate() {
                let (m, t) = stats[i];
                let row = &joint[i * k..(i + 1) * k];
                let rest = (t - (row[a] - m).exp() - (row[b] - m).exp()).max(0.0);
                let lm = lw + gaussian_log_density(&x.0, &merged.mean, &merged.variance);
                let top = m.max(lm);
                ll += s.w[i] * (top + (rest * (m - top).exp() + (lm - top).exp()).ln());
            }
            current - ll
        })
        .collect();
    let mut best: Option<(f64, usize, usize)> = None;
    for (&(a, b), &loss) in pairs.iter().zip(&losses) {
        if loss < penalty && best.is_none_or(|(l, _, _)| loss < l) {
            best = Some((loss, a, b));
        }
    }
    let (_, a, b) = best?;
    let mut out: Vec<Component> = Vec::with_capacity(k - 1);
    for (j, c) in comps.iter().enumerate() {
        if j == a {
            out.push(moment_merge(&comps[a], &comps[b]));
        } else if j != b {
            out.push(c.clone());
        }
    }
    Some(out)
}

/// Merges the closest pair of components describing the same plane.
///
/// Non-Gaussian measurement noise (heavy tails, normal/offset correlation)
/// is fitted by a core plus satellite components that BIC keeps; they are
/// still one physical plane.
fn coincident_merge(comps: &[Component], cfg: &MixtureConfig) -> Option<Vec<Component>> {
    if !(cfg.coincident_angle_deg > 0.0 && cfg.coincident_offset_m > 0.0) {
        return None;
    }
    let planes: Vec<Plane> = comps.iter().map(|c| feature_to_plane(&c.mean)).collect();
    let mut best: Option<(f64, usize, usize)> = None;
    for a in 0..comps.len() {
        for b in a + 1..comps.len() {
            let (na, nb) = (planes[a].normal(), planes[b].normal());
            let dot = na.dot(nb);
            let angle = na.cross(nb).norm().atan2(dot.abs()).to_degrees();
            let offset = (planes[a].offset() - dot.signum() * planes[b].offset()).abs();
            if angle <= cfg.coincident_angle_deg && offset <= cfg.coincident_offset_m {
                let score = angle / cfg.coincident_angle_deg + offset / cfg.coincident_offset_m;
                if best.is_none_or(|(s, _, _)| score < s) {
                    best = Some((score, a, b));
                }
            }
        }
    }
    let (_, a, b) = best?;
    let mut out: Vec<Component> = Vec::with_capacity(comps.len() - 1);
    for (j, c) in comps.iter().enumerate() {
        if j == a {
            out.push(moment_merge(&comps[a], &comps[b]));
        } else if j != b {
            out.push(c.clone());
        }
    }
    Some(out)
}

fn feature_to_plane(mean: &[f64; DIM]) -> Plane {
    let n = Vector3::new(mean[0], mean[1], mean[2]);
    let n = if n.norm() > 0.0 { n.normalize() } else { Vector3::z() };
    Plane::canonicalize([n.x, n.y, n.z, mean[3]]).expect("unit normal")
}

/// Fits the mixture by MAP-EM with pruning and BIC merging.
pub fn fit_mixture(
    features: &[PlaneFeature],
    k_max: usize,
    seed: u64,
    cfg: &MixtureConfig,
) -> Result<MixtureModel, ClusterError> {
    let n = features.len();
    if n < 2 {
        return Err(ClusterError::TooFewSamples(n));
    }
    if k_max == 0 {
        return Err(ClusterError::InvalidComponentCount);
    }
    let samples = Samples::collapse(features);
    let total = samples.total();
    let means = seed_means(&samples, k_max, seed);
    let mut global_var = [0.0; DIM];
    let mut global_mean = [0.0; DIM];
    for (x, w) in samples.xs.iter().zip(&samples.w) {
        for d in 0..DIM {
            global_mean[d] += w * x.0[d] / total;
        }
    }
    for (x, w) in samples.xs.iter().zip(&samples.w) {
        for d in 0..DIM {
            let diff = x.0[d] - global_mean[d];
            global_var[d] += w * diff * diff / total;
        }
    }
    for (d, v) in global_var.iter_mut().enumerate() {
        *v = v.max(cfg.variance_floor);
        if !(*v > 0.0) {
            return Err(ClusterError::SingularCovariance(d));
        }
    }
    let k = means.len();
    let mut comps: Vec<Component> =
        means.into_iter().map(|mean| Component { weight: 1.0 / k as f64, mean, variance: global_var }).collect();

    let mut traces = Vec::new();
    let mut iterations = 0;
    let mut merges = 0;
    loop {
        let (phase, pruned) = run_em(&samples, &mut comps, cfg, cfg.max_iterations);
        iterations += phase.iterations;
        traces.push(phase.trace);
        if pruned {
            continue;
        }
        if !cfg.merge {
            break;
        }
        match best_merge(&samples, &comps).or_else(|| coincident_merge(&comps, cfg)) {
            Some(next) => {
                comps = next;
                merges += 1;
            }
            None => break,
        }
    }
    if cfg.variance_floor <= 0.0 {
        if let Some(j) = comps.iter().position(|c| c.variance.iter().any(|v| !(*v > 0.0))) {
            return Err(ClusterError::SingularCovariance(j));
        }
    }

    // canonical component order: weight descending, then mean
    comps.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| lex_cmp(&a.mean, &b.mean)));
    let e = e_step(&samples, &comps);
    let k = comps.len();
    let mut members = vec![Vec::new(); k];
    for i in 0..n {
        let u = samples.index[i];
        let row = &e.resp[u * k..(u + 1) * k];
        let mut best = 0;
        for j in 1..k {
            if row[j] > row[best] {
                best = j;
            }
        }
        members[best].push(i);
    }
    let clusters = comps
        .into_iter()
        .zip(members)
        .enumerate()
        .map(|(id, (c, members))| PlaneCluster {
            id,
            weight: c.weight,
            mean: c.mean,
            variance: c.variance,
            members,
            plane: feature_to_plane(&c.mean),
        })
        .collect();
    Ok(MixtureModel { clusters, log_likelihood: e.log_likelihood, iterations, seed, objective_trace: traces, merges })
}

/// Clusters with weight at least `w_min`, heaviest first.
pub fn select_room_planes(model: &MixtureModel, w_min: f64) -> Result<Vec<PlaneCluster>, ClusterError> {
    let mut out: Vec<PlaneCluster> = model.clusters.iter().filter(|c| c.weight >= w_min).cloned().collect();
    if out.is_empty() {
        return Err(ClusterError::NoPlanesSelected(w_min));
    }
    out.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.id.cmp(&b.id)));
    Ok(out)
}

/// The `n` members with the highest density under the cluster Gaussian,
/// most likely first; ties go to the lower index.
pub fn rank_voters(cluster: &PlaneCluster, features: &[PlaneFeature], n: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> =
        cluster.members.iter().map(|&i| (cluster.log_density(&features[i]), i)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(n).map(|(_, i)| i).collect()
}

/// Partitions by class, preserving order.
pub fn split_by_class(measurements: &[GlobalMeasurement]) -> (Vec<GlobalMeasurement>, Vec<GlobalMeasurement>) {
    measurements.iter().cloned().partition(|m| m.source.klass == Klass::Wall)
}

#[derive(Serialize)]
struct DumpRecord<'a> {
    id: usize,
    weight: f64,
    mean: &'a [f64; DIM],
    variance: &'a [f64; DIM],
    members: usize,
    plane: Plane,
}

/// One JSON object per component.
pub fn format_mixture_dump(model: &MixtureModel) -> String {
    let mut s = String::new();
    for c in &model.clusters {
        let rec = DumpRecord {
            id: c.id,
            weight: c.weight,
            mean: &c.mean,
            variance: &c.variance,
            members: c.members.len(),
            plane: c.plane,
        };
        s.push_str(&serde_json::to_string(&rec).expect("serializable"));
        s.push('\n');
    }
    s
}
