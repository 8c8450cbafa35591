//! Multi-iteration training behaviour at quarter scale.

use s2gan_core::networks::{Mode, NetworkKind, Scale};
use s2gan_core::synth::build_codebook;
use s2gan_core::train::{
    mean_norm_deviation, Control, IterationRecord, Phase, TrainConfig, TrainState, Trainer,
};
use s2gan_core::{rng, Real, Tensor};

use NetworkKind::*;

const LN2: f64 = std::f64::consts::LN_2;

fn small(seed: u64, batch: usize, iters: u64) -> TrainConfig {
    let mut c = TrainConfig::desk(seed, iters);
    c.batch_size = batch;
    c.data_count = 64;
    c.codebook_scenes = 10;
    c
}

fn trainer<T: Real>(c: TrainConfig) -> Trainer<T> {
    let cb = build_codebook(c.seed, c.scale, c.codebook_scenes).unwrap();
    Trainer::from_state(c, TrainState::new(c.scale, c.seed, cb, c.digest()).unwrap()).unwrap()
}

fn run<T: Real>(t: &mut Trainer<T>, phase: Phase) -> Vec<IterationRecord> {
    let mut out = Vec::new();
    t.begin(phase).unwrap();
    t.run(&mut |r: &IterationRecord, _: &TrainState<T>| {
        out.push(r.clone());
        Ok(Control::Continue)
    })
    .unwrap();
    out
}

/// Zero the last layer so every score is sigmoid(0) or every logit 0.
fn zero_head<T: Real>(t: &mut Trainer<T>, kind: NetworkKind) {
    let p = &mut t.state.net_mut(kind).params.tensors;
    let n = p.len();
    for w in &mut p[n - 2..] {
        w.data_mut().iter_mut().for_each(|x| *x = T::zero());
    }
}

#[test]
fn losses_at_half_scores_match_closed_forms() {
    let m = 4.0;
    let mut c = small(2, 4, 4);
    c.data_count = 16;
    c.lr_structure = 0.0;
    c.lr_style = 0.0;
    c.lr_fcn = 0.0;
    let mut t = trainer::<f64>(c);
    for k in [StructureDiscriminator, StyleDiscriminator, Fcn] {
        zero_head(&mut t, k);
    }
    let before: Vec<u64> = NetworkKind::ALL.iter().map(|&k| t.state.param_digest(k)).collect();

    // One epoch each at lr 0.
    for r in run(&mut t, Phase::Structure) {
        assert!((r.loss("structure_d_loss").unwrap() - m * LN2).abs() < 1e-5);
        assert!((r.loss("structure_g_loss").unwrap() - m / 2.0 * LN2).abs() < 1e-5);
    }
    for r in run(&mut t, Phase::FcnPretrain) {
        assert!((r.loss("fcn_loss").unwrap() - m * 40f64.ln()).abs() < 1e-5);
    }
    for r in run(&mut t, Phase::StyleFrozenFcn) {
        assert!((r.loss("style_d_loss").unwrap() - m * LN2).abs() < 1e-5);
        assert!((r.loss("style_cond_g_loss").unwrap() - m / 2.0 * LN2).abs() < 1e-5);
        // Uniform logits on the generated half.
        assert!((r.loss("style_fcn_term").unwrap() - m / 2.0 * 40f64.ln()).abs() < 1e-5);
    }
    let after: Vec<u64> = NetworkKind::ALL.iter().map(|&k| t.state.param_digest(k)).collect();
    for (i, k) in NetworkKind::ALL.iter().enumerate() {
        // Parameters unchanged; only batch-norm running averages may move.
        if t.state.net(*k).params.buffers.is_empty() {
            assert_eq!(before[i], after[i], "{}", k.name());
        }
    }
}

#[test]
fn frozen_fcn_survives_a_hundred_iterations() {
    let mut c = small(4, 4, 100);
    c.iters_fcn = Some(2);
    let mut t = trainer::<f32>(c);
    run(&mut t, Phase::FcnPretrain);
    let fcn = t.state.net(Fcn).params.clone();
    let records = run(&mut t, Phase::StyleFrozenFcn);
    assert_eq!(records.len(), 100);
    assert_eq!(t.state.net(Fcn).params, fcn);
}

#[test]
fn identical_config_identical_curves() {
    let c = small(6, 4, 5);
    let a = run(&mut trainer::<f32>(c), Phase::Structure);
    let b = run(&mut trainer::<f32>(c), Phase::Structure);
    assert_eq!(a, b);
}

#[test]
fn style_path_gradient_is_linear_in_lambda() {
    let c = small(8, 4, 1);
    let mut t = trainer::<f64>(c);
    t.state.completed = vec![Phase::Structure, Phase::FcnPretrain, Phase::StyleFrozenFcn];
    t.begin(Phase::Joint).unwrap();
    let g0 = t.joint_structure_gradient(0.0).unwrap();
    let ga = t.joint_structure_gradient(0.1).unwrap();
    let gb = t.joint_structure_gradient(0.7).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for ((a, b), z) in ga.iter().zip(&gb).zip(&g0) {
        for ((&a, &b), &z) in a.data().iter().zip(b.data()).zip(z.data()) {
            let predicted = (a - z) * 7.0;
            num += (b - z - predicted).powi(2);
            den += (b - z).powi(2);
        }
    }
    assert!(den > 0.0);
    assert!((num / den).sqrt() < 1e-6, "{}", (num / den).sqrt());
}

#[test]
fn structure_desk_run_learns() {
    // 2000 iterations at quarter scale.
    let c = small(0, 16, 2000);
    let mut t = trainer::<f32>(c);
    let z: Tensor<f32> = rng::uniform_noise(&mut rng::stream(1234, 0, 0), 16, 100);
    let deviation = |t: &Trainer<f32>| {
        let mut g = t.state.net(StructureGenerator).clone();
        mean_norm_deviation(&g.run(&[z.clone()], Mode::Train).unwrap()).unwrap()
    };
    let initial = deviation(&t);
    let records = run(&mut t, Phase::Structure);
    let tail = &records[records.len() - 100..];
    let accuracy = tail.iter().map(|r| r.loss("structure_d_accuracy").unwrap()).sum::<f64>() / 100.0;
    let trained = deviation(&t);
    assert!(accuracy < 1.0, "D accuracy {}", accuracy);
    assert!(trained < initial, "norm deviation {} -> {}", initial, trained);
    assert_eq!(t.state.scale, Scale::Quarter);
}

#[test]
fn fcn_loss_at_init_is_near_uniform() {
    let m = 4.0;
    let mut c = small(10, 4, 3);
    c.lr_fcn = 0.0;
    let mut t = trainer::<f32>(c);
    for r in run(&mut t, Phase::FcnPretrain) {
        let loss = r.loss("fcn_loss").unwrap();
        let uniform = m * 40f64.ln();
        assert!((loss - uniform).abs() <= 0.05 * uniform, "{} vs {}", loss, uniform);
    }
}
