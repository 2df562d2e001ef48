//! Independent reference implementations shared by integration tests.
#![allow(dead_code)]

use rand::Rng;

pub type Traj = Vec<[f64; 2]>;

pub fn l2(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1])).sqrt()
}

/// Per ground truth, scan all predictions with an explicit loop; returns the
/// mean minimum and the number of distinct argmins.
pub fn brute_min(preds: &[Traj], gts: &[Traj], last_only: bool) -> (f64, usize) {
    let mut chosen = Vec::new();
    let mut total = 0.0;
    for g in gts {
        let mut best_k = 0;
        let mut best = f64::MAX;
        for k in 0..preds.len() {
            let mut e = 0.0;
            if last_only {
                e = l2(preds[k][g.len() - 1], g[g.len() - 1]);
            } else {
                for t in 0..g.len() {
                    e += l2(preds[k][t], g[t]);
                }
                e /= g.len() as f64;
            }
            if e < best {
                best = e;
                best_k = k;
            }
        }
        total += best;
        if !chosen.contains(&best_k) {
            chosen.push(best_k);
        }
    }
    (total / gts.len() as f64, chosen.len())
}

pub fn brute_self(preds: &[Traj]) -> (f64, f64) {
    let k = preds.len();
    let (mut a, mut f) = (0.0, 0.0);
    for i in 0..k {
        let mut na = f64::MAX;
        let mut nf = f64::MAX;
        for j in 0..k {
            if i == j {
                continue;
            }
            let t = preds[i].len();
            let mut s = 0.0;
            for q in 0..t {
                s += l2(preds[i][q], preds[j][q]);
            }
            na = na.min(s / t as f64);
            nf = nf.min(l2(preds[i][t - 1], preds[j][t - 1]));
        }
        a += na;
        f += nf;
    }
    (a / k as f64, f / k as f64)
}

pub fn random_traj(rng: &mut impl Rng, len: usize) -> Traj {
    let mut p = [rng.random_range(0.0..192.0), rng.random_range(0.0..96.0)];
    (0..len)
        .map(|_| {
            p = [p[0] + rng.random_range(-8.0..8.0), p[1] + rng.random_range(-8.0..8.0)];
            p
        })
        .collect()
}

/// Five ground-truth futures fanning out from the origin, and eight
/// predictions of which only two are the nearest to any of them: one between
/// the three upper futures and one between the two lower ones. The other six
/// head away from every future.
pub fn fanout_configuration() -> (Vec<Traj>, Vec<Traj>) {
    let ray = |deg: f64, speed: f64| -> Traj {
        let (s, c) = deg.to_radians().sin_cos();
        (1..=12).map(|t| [c * speed * t as f64, s * speed * t as f64]).collect()
    };
    let gts = vec![ray(40.0, 4.0), ray(25.0, 4.0), ray(10.0, 4.0), ray(-20.0, 4.0), ray(-35.0, 4.0)];
    let mut preds = vec![ray(150.0, 4.0), ray(25.0, 4.2), ray(180.0, 3.0), ray(-27.0, 3.8)];
    preds.extend([ray(-150.0, 4.0), ray(120.0, 2.0), ray(-110.0, 3.0), ray(200.0, 1.0)]);
    (gts, preds)
}

use tgmr_core::scene::{GridSpec, TrajectorySample};
use tgmr_core::synthetic::{generate, GenOptions, Layout, ScenarioTemplate};
use tgmr_core::Config;

/// Samples of `layout` re-gridded onto `scales`, with shortened tracks.
pub fn small_samples(layout: Layout, seed: u64, n: usize, t_obs: usize, pred_len: usize, scales: &[(usize, usize)]) -> Vec<TrajectorySample> {
    let t = ScenarioTemplate::new(layout, 1);
    let opts = GenOptions {
        t_obs,
        pred_len,
        ..GenOptions::default()
    };
    let mut scene = generate(&t, seed, n, &opts).unwrap();
    scene.scales = scales.to_vec();
    scene.seg_grid = scales
        .iter()
        .map(|&(c, r)| vec![t.pooled(&GridSpec::new(c, r, 192.0, 96.0).unwrap()); t_obs])
        .collect();
    scene.to_samples().unwrap()
}

pub fn small_config(scales: &[(usize, usize)], hidden: usize, attn: usize) -> Config {
    let mut c = Config::default();
    c.model.scales = scales.to_vec();
    c.model.hidden_channels = hidden;
    c.model.attn_dim = attn;
    c
}

/// All `n^steps` node sequences under step-independent log-probabilities,
/// best first.
pub fn exhaustive_top_k(log_dists: &[Vec<f64>], k: usize) -> Vec<(Vec<usize>, f64)> {
    let n = log_dists[0].len();
    let mut all: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    for d in log_dists {
        let mut next = Vec::with_capacity(all.len() * n);
        for (seq, score) in &all {
            for (i, &lp) in d.iter().enumerate() {
                let mut s = seq.clone();
                s.push(i);
                next.push((s, score + lp));
            }
        }
        all = next;
    }
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}
