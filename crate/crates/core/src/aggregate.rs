//! Plan aggregation: time-series k-means under dynamic time warping.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, ModeId, ACTION_DIM};
use crate::policy::ActionPlan;
use crate::{math, rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanClusterings {
    pub assignments: Vec<usize>,
    pub centers: Vec<ActionPlan>,
    /// Sum of DTW distances from each plan to its assigned center.
    pub inertia: f64,
    /// Inertia after each iteration.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Sakoe-Chiba band half-width; `None` for exact DTW.
    pub band: Option<usize>,
    /// Drop centers within this DTW distance of an earlier kept center.
    pub nms_eps: Option<f64>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: 6,
            max_iter: 20,
            band: None,
            nms_eps: None,
        }
    }
}

fn local_cost(a: &Action, b: &Action) -> f64 {
    math::sqrt(math::sq_dist(&a.to_array(), &b.to_array()))
}

fn effective_band(n: usize, m: usize, band: Option<usize>) -> Result<usize> {
    match band {
        Some(0) => Err(Error::config("DTW band must be >= 1")),
        Some(w) => Ok(w.max(n.abs_diff(m))),
        None => Ok(n.max(m)),
    }
}

/// Accumulated-cost table, `(n + 1) x (m + 1)` with an infinite border.
fn dtw_table(a: &[Action], b: &[Action], band: Option<usize>) -> Result<Vec<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("dtw: empty sequence"));
    }
    let (n, m) = (a.len(), b.len());
    let w = effective_band(n, m, band)?;
    let cols = m + 1;
    let mut d = vec![f64::INFINITY; (n + 1) * cols];
    d[0] = 0.0;
    for i in 1..=n {
        let lo = i.saturating_sub(w).max(1);
        let hi = (i + w).min(m);
        for j in lo..=hi {
            let best = d[(i - 1) * cols + j]
                .min(d[i * cols + j - 1])
                .min(d[(i - 1) * cols + j - 1]);
            d[i * cols + j] = local_cost(&a[i - 1], &b[j - 1]) + best;
        }
    }
    Ok(d)
}

/// DTW alignment cost with Euclidean local cost. `band` restricts matches
/// to `|i - j| <= max(band, |len(a) - len(b)|)`.
pub fn dtw_distance(a: &[Action], b: &[Action], band: Option<usize>) -> Result<f64> {
    let d = dtw_table(a, b, band)?;
    Ok(d[d.len() - 1])
}

/// Optimal alignment as `(i, j)` index pairs from `(0, 0)` to the ends.
pub fn dtw_path(a: &[Action], b: &[Action], band: Option<usize>) -> Result<(f64, Vec<(usize, usize)>)> {
    let d = dtw_table(a, b, band)?;
    let cols = b.len() + 1;
    let (mut i, mut j) = (a.len(), b.len());
    let mut path = vec![(i - 1, j - 1)];
    while i > 1 || j > 1 {
        let diag = d[(i - 1) * cols + j - 1];
        let up = d[(i - 1) * cols + j];
        let left = d[i * cols + j - 1];
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i - 1, j - 1));
    }
    path.reverse();
    Ok((d[d.len() - 1], path))
}

fn assign(plans: &[ActionPlan], centers: &[ActionPlan], band: Option<usize>) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut labels = Vec::with_capacity(plans.len());
    let mut dists = Vec::with_capacity(plans.len());
    for p in plans {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in centers.iter().enumerate() {
            let d = dtw_distance(&p.actions, &c.actions, band)?;
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        labels.push(best);
        dists.push(best_d);
    }
    Ok((labels, dists))
}

/// Members averaged onto the center's time axis along their DTW paths.
fn barycenter_step(center: &ActionPlan, members: &[&ActionPlan], band: Option<usize>) -> Result<ActionPlan> {
    let len = center.actions.len();
    let mut sum = vec![[0.0; ACTION_DIM]; len];
    let mut count = vec![0usize; len];
    for m in members {
        let (_, path) = dtw_path(&center.actions, &m.actions, band)?;
        for (i, j) in path {
            let a = m.actions[j].to_array();
            for c in 0..ACTION_DIM {
                sum[i][c] += a[c];
            }
            count[i] += 1;
        }
    }
    let actions = sum
        .iter()
        .zip(&count)
        .map(|(s, &n)| Action::new(s[0] / n as f64, s[1] / n as f64, s[2] / n as f64))
        .collect();
    Ok(ActionPlan {
        actions,
        mode_hint: majority(members.iter().map(|m| m.mode_hint)),
    })
}

fn majority(hints: impl Iterator<Item = Option<ModeId>>) -> Option<ModeId> {
    let mut counts: Vec<(ModeId, usize)> = Vec::new();
    for m in hints.flatten() {
        match counts.iter_mut().find(|(k, _)| *k == m) {
            Some((_, c)) => *c += 1,
            None => counts.push((m, 1)),
        }
    }
    let mut best: Option<(ModeId, usize)> = None;
    for (m, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((m, c));
        }
    }
    best.map(|(m, _)| m)
}

fn kmeans_pp(plans: &[ActionPlan], k: usize, band: Option<usize>, r: &mut rng::StreamRng) -> Result<Vec<usize>> {
    let mut chosen = vec![r.random_range(0..plans.len())];
    let mut dmin: Vec<f64> = plans
        .iter()
        .map(|p| dtw_distance(&p.actions, &plans[chosen[0]].actions, band))
        .collect::<Result<_>>()?;
    while chosen.len() < k {
        let weights: Vec<f64> = dmin.iter().map(|d| d * d).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let u = rng::uniform(r, 0.0, total);
            let mut acc = 0.0;
            let mut idx = None;
            for (i, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc && *w > 0.0 {
                    idx = Some(i);
                    break;
                }
            }
            idx.unwrap_or_else(|| weights.iter().rposition(|w| *w > 0.0).unwrap_or(0))
        } else {
            // every remaining plan coincides with a center
            (0..plans.len()).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(pick);
        for (i, p) in plans.iter().enumerate() {
            let d = dtw_distance(&p.actions, &plans[pick].actions, band)?;
            if d < dmin[i] {
                dmin[i] = d;
            }
        }
    }
    Ok(chosen)
}

/// DTW k-means with default band and no suppression.
pub fn cluster_plans(plans: &[ActionPlan], k: usize, max_iter: usize, rng_seed: u64) -> Result<PlanClusterings> {
    cluster_plans_with(
        plans,
        &ClusterConfig {
            k,
            max_iter,
            ..ClusterConfig::default()
        },
        rng_seed,
    )
}

/// Lloyd alternation under DTW. A center update is kept only when it does
/// not raise its cluster's cost, so inertia never increases.
pub fn cluster_plans_with(plans: &[ActionPlan], config: &ClusterConfig, rng_seed: u64) -> Result<PlanClusterings> {
    let k = config.k;
    let band = config.band;
    if k == 0 || plans.len() < k {
        return Err(Error::config(format!(
            "cannot form {k} clusters from {} plans",
            plans.len()
        )));
    }
    if plans.iter().any(|p| p.actions.is_empty()) {
        return Err(Error::Empty("cluster_plans: empty plan"));
    }
    effective_band(1, 1, band)?;

    let mut centers: Vec<ActionPlan> = if k == plans.len() {
        plans.to_vec()
    } else {
        let mut r = rng::stream(rng_seed, 0xA66);
        kmeans_pp(plans, k, band, &mut r)?
            .into_iter()
            .map(|i| plans[i].clone())
            .collect()
    };
    let mut labels: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..config.max_iter.max(1) {
        iterations += 1;
        let (mut next, mut dists) = assign(plans, &centers, band)?;
        reseed_empty(plans, &mut centers, &mut next, &mut dists);
        let changed = next != labels;
        labels = next;

        for (j, center) in centers.iter_mut().enumerate() {
            let members: Vec<&ActionPlan> = plans.iter().zip(&labels).filter(|(_, l)| **l == j).map(|(p, _)| p).collect();
            let old_cost: f64 = labels.iter().zip(&dists).filter(|(l, _)| **l == j).map(|(_, d)| d).sum();
            let candidate = barycenter_step(center, &members, band)?;
            let new_d: Vec<f64> = members
                .iter()
                .map(|m| dtw_distance(&m.actions, &candidate.actions, band))
                .collect::<Result<_>>()?;
            if new_d.iter().sum::<f64>() <= old_cost {
                *center = candidate;
                let mut it = new_d.into_iter();
                for (l, d) in labels.iter().zip(dists.iter_mut()) {
                    if *l == j {
                        *d = it.next().expect("one distance per member");
                    }
                }
            }
        }
        history.push(dists.iter().sum());
        if !changed && iterations > 1 {
            break;
        }
    }
    let inertia = *history.last().expect("at least one iteration");
    let mut out = PlanClusterings {
        assignments: labels,
        centers,
        inertia,
        inertia_history: history,
        iterations,
    };
    if let Some(eps) = config.nms_eps {
        out = suppress_near_duplicates(plans, out, eps, band)?;
    }
    Ok(out)
}

/// Give every empty cluster the plan farthest from its center, taken from a
/// cluster that keeps at least one member.
fn reseed_empty(plans: &[ActionPlan], centers: &mut [ActionPlan], labels: &mut [usize], dists: &mut [f64]) {
    for j in 0..centers.len() {
        if labels.contains(&j) {
            continue;
        }
        let mut sizes = vec![0usize; centers.len()];
        for l in labels.iter() {
            sizes[*l] += 1;
        }
        let mut far: Option<usize> = None;
        for i in 0..plans.len() {
            if sizes[labels[i]] >= 2 && far.is_none_or(|f| dists[i] > dists[f]) {
                far = Some(i);
            }
        }
        if let Some(i) = far {
            centers[j] = plans[i].clone();
            labels[i] = j;
            dists[i] = 0.0;
        }
    }
}

/// Keep centers greedily in index order, dropping any within `eps` of a
/// kept one; dropped clusters' members move to their nearest kept center.
pub fn suppress_near_duplicates(
    plans: &[ActionPlan],
    c: PlanClusterings,
    eps: f64,
    band: Option<usize>,
) -> Result<PlanClusterings> {
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..c.centers.len() {
        let mut close = false;
        for &q in &kept {
            if dtw_distance(&c.centers[j].actions, &c.centers[q].actions, band)? <= eps {
                close = true;
                break;
            }
        }
        if !close {
            kept.push(j);
        }
    }
    let centers: Vec<ActionPlan> = kept.iter().map(|&j| c.centers[j].clone()).collect();
    let (assignments, dists) = assign(plans, &centers, band)?;
    let inertia = dists.iter().sum();
    let mut history = c.inertia_history;
    history.push(inertia);
    Ok(PlanClusterings {
        assignments,
        centers,
        inertia,
        inertia_history: history,
        iterations: c.iterations,
    })
}

/// Fraction of plans whose hint matches their cluster's majority hint.
pub fn purity(c: &PlanClusterings, plans: &[ActionPlan]) -> f64 {
    let mut hit = 0usize;
    for j in 0..c.centers.len() {
        let hints: Vec<Option<ModeId>> = plans.iter().zip(&c.assignments).filter(|(_, l)| **l == j).map(|(p, _)| p.mode_hint).collect();
        let top = majority(hints.iter().copied());
        hit += hints.iter().filter(|h| **h == top && top.is_some()).count();
    }
    hit as f64 / plans.len() as f64
}
