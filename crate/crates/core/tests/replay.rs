mod common;

use std::sync::Arc;

use common::{small_config, small_samples};
use proptest::prelude::*;
use tgmr_autograd::Graph;
use tgmr_core::replay::{replay_decode, smooth, DecodeInputs, DecoderVars, MemoryGraph};
use tgmr_core::synthetic::Layout;
use tgmr_core::transformer::EdgeWeights;
use tgmr_core::Model;

const SCALES: [(usize, usize); 2] = [(12, 6), (6, 3)];

/// Greedy rollout at every scale; returns the worst row error seen in the
/// raw weights, the smoothed weights and the memory.
fn rollout(seed: u64, gain: f64, layout: Layout, use_replay: bool) -> f64 {
    let mut cfg = small_config(&SCALES, 6, 4);
    cfg.model.use_memory_replay = use_replay;
    let mut model = Model::new(&cfg.model, seed).unwrap();
    for p in model.params.params_mut() {
        Arc::make_mut(&mut p.tensor).data_mut().iter_mut().for_each(|v| *v *= gain);
    }
    let sample = &small_samples(layout, seed, 1, 4, 6, &SCALES)[0];
    let mut worst: f64 = 0.0;
    for sm in &model.scales {
        let mut g = Graph::new();
        let params = model.params.bind(&mut g, false);
        let enc = sm.encode(&mut g, &params, sample).unwrap();
        let first = sm.step_input(*sample.observed.last().unwrap()).unwrap();
        let out = replay_decode(&mut g, sm, &params, &enc, &DecodeInputs::Greedy { first }, 6, use_replay).unwrap();
        for r in &out {
            let mut checked = vec![r.raw_weights, r.weights];
            if use_replay {
                checked.push(r.state.memory);
            }
            for v in checked {
                let e = EdgeWeights::from_tensor(&sm.scene, g.value(v)).unwrap();
                worst = worst.max(e.max_row_error().unwrap());
            }
            if use_replay {
                assert_eq!(g.value(r.weights), g.value(r.state.memory));
            } else {
                assert_eq!(g.value(r.weights), g.value(r.raw_weights));
                assert!(g.value(r.state.memory).data().iter().all(|&v| v == 0.0));
            }
        }
    }
    worst
}

#[test]
fn each_step_smooths_against_the_previous_result() {
    let cfg = small_config(&SCALES, 6, 4);
    let model = Model::new(&cfg.model, 2).unwrap();
    let sample = &small_samples(Layout::TJunction, 2, 1, 4, 6, &SCALES)[0];
    let sm = model.finest();
    let mut g = Graph::new();
    let params = model.params.bind(&mut g, false);
    let enc = sm.encode(&mut g, &params, sample).unwrap();
    let vars = DecoderVars::from_encoder(&mut g, sm, &enc);
    assert!(g.value(vars.memory).data().iter().all(|&v| v == 0.0));
    let first = sm.step_input(*sample.observed.last().unwrap()).unwrap();
    let out = replay_decode(&mut g, sm, &params, &enc, &DecodeInputs::Greedy { first }, 3, true).unwrap();
    for t in 1..3 {
        let raw = EdgeWeights::from_tensor(&sm.scene, g.value(out[t].raw_weights)).unwrap();
        let mut mem = MemoryGraph::init(&sm.scene, 0);
        mem.weights = g.value(out[t - 1].weights).clone();
        let (want, _) = smooth(&sm.scene, &raw, &mem).unwrap();
        let got = g.value(out[t].weights).data();
        assert!(want.weights.iter().zip(got).all(|(a, b)| (a - b).abs() < 1e-15));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn rows_stay_normalised(seed in 0u64..10_000, gain in 0.5f64..6.0, l in 0usize..4, replay: bool) {
        let worst = rollout(seed, gain, Layout::ALL[l], replay);
        prop_assert!(worst <= 1e-6, "row error {worst}");
    }
}

