//! Diverse beam search over the graph stream's node distributions.

use serde::{Deserialize, Serialize};
use tgmr_autograd::Graph;

use crate::error::{Error, Result};
use crate::model::{Model, StepInput};
use crate::replay::{offset_at, replay_step, DecoderState, DecoderVars};
use crate::scene::{Point, TrajectorySample};

#[derive(Clone, Debug, PartialEq)]
pub struct Beam {
    pub nodes: Vec<usize>,
    /// Accumulated log-probability minus diversity penalties.
    pub score: f64,
}

impl Beam {
    pub fn root() -> Self {
        Self { nodes: Vec::new(), score: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extension {
    /// Index into the beams passed to [`beam_step`].
    pub parent: usize,
    pub node: usize,
    pub score: f64,
}

fn rank_order(beams: &[Beam]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..beams.len()).collect();
    order.sort_by(|&a, &b| beams[b].score.total_cmp(&beams[a].score).then(a.cmp(&b)));
    order
}

/// Scores every extension `C + log P(i) - gamma(i)` and keeps the best `k`.
///
/// `log_dists[b]` holds beam `b`'s log-probabilities over nodes; `-inf`
/// marks impossible nodes. Beams are ranked by score (lower index on ties).
/// For a beam, `gamma(i)` is `diversity_rate` times the number of
/// higher-ranked beams whose own most likely extension is node `i`.
/// Extensions are ordered by score, then node index, then parent rank.
pub fn beam_step(beams: &[Beam], log_dists: &[Vec<f64>], diversity_rate: f64, k: usize) -> Result<Vec<Extension>> {
    if beams.len() != log_dists.len() {
        return Err(Error::Shape(format!("{} beams but {} distributions", beams.len(), log_dists.len())));
    }
    if beams.is_empty() || k == 0 {
        return Err(Error::Empty("beam set"));
    }
    let nodes = log_dists[0].len();
    if log_dists.iter().any(|d| d.len() != nodes) {
        return Err(Error::Shape("beam distributions differ in length".into()));
    }
    let order = rank_order(beams);
    let mut taken = vec![0usize; nodes];
    // (score, node, rank, parent)
    let mut cands: Vec<(f64, usize, usize, usize)> = Vec::with_capacity(beams.len() * nodes);
    for (rank, &b) in order.iter().enumerate() {
        let d = &log_dists[b];
        let mut best: Option<usize> = None;
        for (i, &lp) in d.iter().enumerate() {
            if lp == f64::NEG_INFINITY {
                continue;
            }
            if best.is_none_or(|j| lp > d[j]) {
                best = Some(i);
            }
            let gamma = diversity_rate * taken[i] as f64;
            cands.push((beams[b].score + lp - gamma, i, rank, b));
        }
        if let Some(i) = best {
            taken[i] += 1;
        }
    }
    if cands.is_empty() {
        return Err(Error::ZeroProbability);
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    cands.truncate(k);
    Ok(cands
        .into_iter()
        .map(|(score, node, _, parent)| Extension { parent, node, score })
        .collect())
}

/// Applies extensions to produce the next beam set, in extension order.
pub fn extend(beams: &[Beam], exts: &[Extension]) -> Vec<Beam> {
    exts.iter()
        .map(|e| {
            let mut nodes = beams[e.parent].nodes.clone();
            nodes.push(e.node);
            Beam { nodes, score: e.score }
        })
        .collect()
}

/// `base^exp`, saturating.
fn search_space(base: usize, exp: usize) -> u128 {
    (0..exp).fold(1u128, |acc, _| acc.saturating_mul(base as u128))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub scale: usize,
    pub grid: (usize, usize),
    pub trajectories: Vec<Vec<Point>>,
    pub nodes: Vec<Vec<usize>>,
    pub scores: Vec<f64>,
    /// Per step, the beam-averaged node distribution (for heatmaps).
    pub step_probs: Vec<Vec<f64>>,
}

impl PredictionSet {
    pub fn k(&self) -> usize {
        self.trajectories.len()
    }
}

struct Live {
    beam: Beam,
    state: DecoderState,
    input: StepInput,
    coords: Vec<Point>,
}

/// K trajectories for one sample at scale `scale`. Each beam carries its own
/// forked decoder state and memory graph.
pub fn decode_multi(
    model: &Model,
    scale: usize,
    sample: &TrajectorySample,
    steps: usize,
    k: usize,
    diversity_rate: f64,
) -> Result<PredictionSet> {
    let sm = model.scales.get(scale).ok_or_else(|| Error::Config(format!("no scale {scale}")))?;
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if steps == 0 {
        return Err(Error::Config("decoding needs at least one step".into()));
    }
    let n = sm.num_nodes();
    if k as u128 > search_space(n, steps) {
        return Err(Error::SearchSpace {
            k,
            space: format!("{n}^{steps}"),
        });
    }
    let use_replay = model.config.use_memory_replay;
    let last = *sample.observed.last().ok_or(Error::Empty("observed trajectory"))?;

    let mut g = Graph::new();
    let params = model.params.bind(&mut g, false);
    let enc = sm.encode(&mut g, &params, sample)?;
    let init = DecoderVars::from_encoder(&mut g, sm, &enc).snapshot(&g);
    drop(g);

    let mut live = vec![Live {
        beam: Beam::root(),
        state: init,
        input: sm.step_input(last)?,
        coords: Vec::new(),
    }];
    let mut step_probs = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut dists = Vec::with_capacity(live.len());
        let mut offsets = Vec::with_capacity(live.len());
        let mut states = Vec::with_capacity(live.len());
        let mut mean = vec![0.0; n];
        for l in &live {
            let mut g = Graph::new();
            let params = model.params.bind(&mut g, false);
            let vars = l.state.to_vars(&mut g);
            let r = replay_step(&mut g, sm, &params, vars, l.input, use_replay)?;
            let lp = g.value(r.log_probs).data().to_vec();
            mean.iter_mut().zip(&lp).for_each(|(m, v)| *m += v.exp() / live.len() as f64);
            offsets.push((0..n).map(|i| offset_at(&g, sm, r.offsets, i)).collect::<Vec<_>>());
            states.push(r.state.snapshot(&g));
            dists.push(lp);
        }
        step_probs.push(mean);
        let beams: Vec<Beam> = live.iter().map(|l| l.beam.clone()).collect();
        let exts = beam_step(&beams, &dists, diversity_rate, k)?;
        let next_beams = extend(&beams, &exts);
        live = exts
            .iter()
            .zip(next_beams)
            .map(|(e, beam)| {
                let off = offsets[e.parent][e.node];
                let c = sm.scene.spec.cell_center(e.node);
                let mut coords = live[e.parent].coords.clone();
                coords.push([c[0] + off[0], c[1] + off[1]]);
                Live {
                    beam,
                    state: states[e.parent].clone(),
                    input: StepInput { node: e.node, offset: off },
                    coords,
                }
            })
            .collect();
    }
    if live.len() != k {
        return Err(Error::SearchSpace {
            k,
            space: format!("{} reachable", live.len()),
        });
    }
    Ok(PredictionSet {
        scale,
        grid: (sm.scene.spec.cols, sm.scene.spec.rows),
        scores: live.iter().map(|l| l.beam.score).collect(),
        nodes: live.iter().map(|l| l.beam.nodes.clone()).collect(),
        trajectories: live.into_iter().map(|l| l.coords).collect(),
        step_probs,
    })
}

/// Reports the finest scale (index 0 is finest).
pub fn select_scale(outputs: Vec<PredictionSet>) -> Result<PredictionSet> {
    outputs
        .into_iter()
        .min_by_key(|p| p.scale)
        .ok_or(Error::Empty("per-scale predictions"))
}

/// Decodes the finest scale with the configured K and diversity rate.
pub fn predict(model: &Model, sample: &TrajectorySample, k: usize, diversity_rate: f64) -> Result<PredictionSet> {
    let steps = sample.pred_len();
    select_scale(vec![decode_multi(model, 0, sample, steps, k, diversity_rate)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ln(p: &[f64]) -> Vec<f64> {
        p.iter().map(|v| v.ln()).collect()
    }

    fn run(dists: &[Vec<f64>], k: usize, rate: f64) -> Vec<Beam> {
        let mut beams = vec![Beam::root()];
        for d in dists {
            let ld: Vec<Vec<f64>> = beams.iter().map(|_| ln(d)).collect();
            let exts = beam_step(&beams, &ld, rate, k).unwrap();
            beams = extend(&beams, &exts);
        }
        beams
    }

    #[test]
    fn single_beam_is_greedy() {
        let d = vec![vec![0.1, 0.6, 0.3], vec![0.5, 0.2, 0.3], vec![0.2, 0.2, 0.6]];
        let b = run(&d, 1, 0.0);
        assert_eq!(b[0].nodes, vec![1, 0, 2]);
    }

    #[test]
    fn certain_step_keeps_score() {
        let beams = vec![Beam { nodes: vec![2], score: -1.25 }];
        let e = beam_step(&beams, &[ln(&[0.0, 1.0, 0.0])], 0.0, 1).unwrap();
        assert_eq!(e[0].score, -1.25);
        assert_eq!(e[0].node, 1);
    }

    #[test]
    fn all_zero_probability_errors() {
        let e = beam_step(&[Beam::root()], &[vec![f64::NEG_INFINITY; 3]], 0.0, 2);
        assert!(matches!(e, Err(Error::ZeroProbability)));
    }

    /// All `n^steps` sequences by total log-probability, best first, ties by
    /// lexicographic node order.
    fn exhaustive(dists: &[Vec<f64>], k: usize) -> Vec<(Vec<usize>, f64)> {
        let n = dists[0].len();
        let mut all: Vec<(Vec<usize>, f64)> = vec![(vec![], 0.0)];
        for d in dists {
            all = all
                .into_iter()
                .flat_map(|(s, c)| {
                    (0..n).map(move |i| {
                        let mut s = s.clone();
                        s.push(i);
                        (s, c + d[i].ln())
                    })
                })
                .collect();
        }
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn tiny_instance_matches_enumeration() {
        let d = vec![vec![0.4, 0.3, 0.2, 0.1], vec![0.25, 0.15, 0.35, 0.25]];
        let want = exhaustive(&d, 3);
        let got = run(&d, 3, 0.0);
        for (b, (s, c)) in got.iter().zip(&want) {
            assert_eq!(&b.nodes, s);
            assert!((b.score - c).abs() < 1e-12);
        }
    }

    #[test]
    fn diversity_separates_flat_beams() {
        let flat = vec![vec![0.25; 4]; 3];
        let plain = run(&flat, 4, 0.0);
        let diverse = run(&flat, 4, 2.0);
        let finals = |b: &[Beam]| {
            let mut v: Vec<usize> = b.iter().map(|x| *x.nodes.last().unwrap()).collect();
            v.sort();
            v.dedup();
            v.len()
        };
        assert!(finals(&diverse) >= finals(&plain));
        let mut seqs: Vec<_> = diverse.iter().map(|b| b.nodes.clone()).collect();
        seqs.dedup();
        assert_eq!(seqs.len(), 4);
    }

    #[test]
    fn penalty_only_lowers_scores() {
        let beams = vec![Beam { nodes: vec![0], score: -0.1 }, Beam { nodes: vec![1], score: -0.3 }];
        let d = vec![ln(&[0.7, 0.2, 0.1]), ln(&[0.6, 0.3, 0.1])];
        let a = beam_step(&beams, &d, 0.0, 6).unwrap();
        let b = beam_step(&beams, &d, 1.0, 6).unwrap();
        for e in &b {
            let base = a.iter().find(|x| x.parent == e.parent && x.node == e.node).unwrap();
            assert!(e.score <= base.score);
        }
        // the second beam's favourite (node 0) is penalised once
        let pen = b.iter().find(|x| x.parent == 1 && x.node == 0).unwrap();
        assert!((pen.score - (-0.3 + 0.6f64.ln() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn select_scale_takes_finest() {
        let p = |scale| PredictionSet {
            scale,
            grid: (1, 1),
            trajectories: vec![],
            nodes: vec![],
            scores: vec![],
            step_probs: vec![],
        };
        assert_eq!(select_scale(vec![p(1), p(0)]).unwrap().scale, 0);
        assert_eq!(select_scale(vec![p(0)]).unwrap().scale, 0);
        assert!(select_scale(vec![]).is_err());
    }

    proptest! {
        #[test]
        fn scores_never_increase(seed in 0u64..1000, rate in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dists: Vec<Vec<f64>> = (0..3).map(|_| {
                let v: Vec<f64> = (0..5).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = v.iter().sum();
                v.into_iter().map(|x| x / s).collect()
            }).collect();
            let mut beams = vec![Beam::root()];
            for d in &dists {
                let ld: Vec<Vec<f64>> = beams.iter().map(|_| ln(d)).collect();
                let exts = beam_step(&beams, &ld, rate, 4).unwrap();
                for e in &exts {
                    prop_assert!(e.score <= beams[e.parent].score);
                }
                beams = extend(&beams, &exts);
                prop_assert!(beams.windows(2).all(|w| w[0].score >= w[1].score));
            }
        }
    }
}
