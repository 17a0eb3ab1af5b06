use diffnet::{finite_diff_check, GradCheckConfig, Graph, ParameterSet, Tensor};
use proptest::prelude::*;
use pshape::cpc::{sample_segments, train_cpc, CpcConfig, EncoderModel, SegmentBatch};
use pshape::envs::{collect_random_trajectories, EnvId, TrajectorySet};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_config(batch: usize) -> CpcConfig {
    CpcConfig { context: 3, predict: 2, batch, embedding: 5, context_size: 4, hidden: 6, score_init: 0.5, ..Default::default() }
}

fn random_batch(b: usize, config: &CpcConfig, rng: &mut ChaCha8Rng) -> SegmentBatch {
    let segments = (0..b)
        .map(|_| (0..config.segment_len()).map(|_| Tensor::vector((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())).collect())
        .collect();
    SegmentBatch::new(segments, config.context, config.predict).unwrap()
}

fn set(env: EnvId, count: usize, len: usize, seed: u64) -> TrajectorySet {
    collect_random_trajectories(env.make().as_mut(), count, len, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn infonce_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let config = toy_config(4);
    let model = EncoderModel::new(config.clone(), &[3], &mut rng).unwrap();
    let batch = random_batch(4, &config, &mut rng);
    let loss_of = |p: &ParameterSet| {
        let mut g = Graph::new();
        let l = model.infonce_graph(&mut g, p, &batch).unwrap();
        g.value(l).item()
    };
    let mut g = Graph::new();
    let l = model.infonce_graph(&mut g, &model.params, &batch).unwrap();
    let grads = g.backward(l).unwrap();
    let report = finite_diff_check(loss_of, &model.params, &grads, GradCheckConfig { samples: 500, ..Default::default() });
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn loss_at_initialization_is_near_log_batch() {
    let data = set(EnvId::Pendulum, 10, 60, 0);
    for seed in 0..3 {
        let config = CpcConfig::default();
        let model = EncoderModel::new(config.clone(), &[3], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let batch = sample_segments(&data, &config, &mut ChaCha8Rng::seed_from_u64(seed + 10)).unwrap();
        let loss = model.infonce_loss(&batch).unwrap();
        assert!((loss - 8f64.ln()).abs() < 0.1, "seed {seed}: {loss}");
    }
}

#[test]
fn training_lowers_the_loss_on_pendulum() {
    let data = set(EnvId::Pendulum, 40, 100, 1);
    let config = CpcConfig { epochs: 1, ..Default::default() };
    let out = train_cpc(&data, &config, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert!(out.smoothed_final_loss(0.1) < out.losses[0] - 0.3, "{} vs {}", out.smoothed_final_loss(0.1), out.losses[0]);
}

#[test]
fn training_is_reproducible() {
    let data = set(EnvId::Pendulum, 8, 40, 3);
    let config = CpcConfig { epochs: 1, context_size: 16, embedding: 8, ..Default::default() };
    let a = train_cpc(&data, &config, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = train_cpc(&data, &config, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.model, b.model);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn loss_is_invariant_to_batch_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = toy_config(5);
        let model = EncoderModel::new(config.clone(), &[3], &mut rng).unwrap();
        let batch = random_batch(5, &config, &mut rng);
        let mut order: Vec<usize> = (0..5).collect();
        order.shuffle(&mut rng);
        let a = model.infonce_loss(&batch).unwrap();
        let b = model.infonce_loss(&batch.permuted(&order)).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn loss_is_a_cross_entropy(seed in any::<u64>(), b in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = toy_config(b);
        let model = EncoderModel::new(config.clone(), &[3], &mut rng).unwrap();
        let loss = model.infonce_loss(&random_batch(b, &config, &mut rng)).unwrap();
        prop_assert!(loss.is_finite() && loss >= 0.0);
    }
}
