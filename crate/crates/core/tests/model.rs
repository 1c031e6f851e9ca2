use mtl_core::model::{build_network, Architecture, GrlPosition, LayerGraph, NetworkConfig, Targets, Variant};
use mtl_core::nn::gradcheck::finite_difference_check;
use mtl_core::nn::{LossWeights, Mode, Radam, RadamConfig};
use mtl_core::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_config(variant: Variant) -> NetworkConfig {
    NetworkConfig {
        n_scenes: 3,
        n_events: 2,
        n_bins: 16,
        variant,
        arch: Architecture::toy(),
        ..NetworkConfig::default()
    }
}

fn toy_batch(n: usize, t: usize, cfg: &NetworkConfig, seed: u64) -> (Tensor, Targets) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(&[n, 1, t, cfg.n_bins], |_| rng.random_range(-1.0..1.0));
    let mut scene = Tensor::zeros(&[n, cfg.n_scenes]);
    for i in 0..n {
        let k = rng.random_range(0..cfg.n_scenes);
        scene.data_mut()[i * cfg.n_scenes + k] = 1.0;
    }
    let events = Tensor::from_fn(&[n, t, cfg.n_events], |_| f64::from(rng.random_bool(0.3) as u8));
    (x, Targets { scene, events })
}

fn build(cfg: &NetworkConfig, seed: u64) -> LayerGraph {
    build_network(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn expected_default_params() -> usize {
    let conv = |cin: usize, cout: usize| 9 * cin * cout + cout;
    let bn = |c: usize| 2 * c;
    let fc = |i: usize, o: usize| i * o + o;
    let gru_dir = |f: usize, h: usize| 3 * h * (f + h) + 3 * h;
    let trunk = conv(1, 128) + bn(128) + 2 * (conv(128, 128) + bn(128));
    let scene = conv(128, 256) + bn(256) + conv(256, 256) + bn(256) + fc(256, 32) + fc(32, 4);
    let event = 2 * gru_dir(256, 32) + fc(64, 32) + fc(32, 25);
    trunk + scene + event
}

#[test]
fn default_parameter_count_matches_hand_count() {
    assert_eq!(expected_default_params(), 1_250_237);
    let g = build(&NetworkConfig::default(), 0);
    assert_eq!(g.param_count(), 1_250_237);
    assert_eq!(build(&NetworkConfig::default(), 99).param_count(), 1_250_237);
}

#[test]
fn default_forward_shape_trace() {
    let mut g = build(&NetworkConfig::default(), 1);
    let x = Tensor::zeros(&[1, 1, 500, 64]);
    let out = g.forward(&x, Mode::Eval).unwrap();
    let shape_of = |name: &str| {
        g.last_trace()
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.clone())
            .unwrap()
    };
    assert_eq!(shape_of("trunk.pool1"), vec![1, 128, 500, 8]);
    assert_eq!(shape_of("trunk.pool2"), vec![1, 128, 500, 4]);
    assert_eq!(shape_of("trunk.pool3"), vec![1, 128, 500, 2]);
    assert_eq!(shape_of("scene.pool1"), vec![1, 256, 20, 2]);
    assert_eq!(shape_of("scene.gpool"), vec![1, 256]);
    assert_eq!(shape_of("event.flatten"), vec![1, 500, 256]);
    assert_eq!(shape_of("event.bigru"), vec![1, 500, 64]);
    assert_eq!(out.scene_logits.unwrap().shape(), &[1, 4]);
    assert_eq!(out.event_logits.unwrap().shape(), &[1, 500, 25]);
}

#[test]
fn single_task_variants_keep_one_branch() {
    let mtl = build(&NetworkConfig::default(), 0);
    let asc = build(
        &NetworkConfig {
            variant: Variant::AscOnly,
            ..NetworkConfig::default()
        },
        0,
    );
    let names = |g: &LayerGraph| g.nodes().map(|n| n.name.clone()).collect::<Vec<_>>();
    let expected: Vec<String> = mtl.trunk().iter().chain(mtl.scene_branch()).map(|n| n.name.clone()).collect();
    assert_eq!(names(&asc), expected);
    assert!(asc.event_branch().is_empty());

    let sed = build(
        &NetworkConfig {
            variant: Variant::SedOnly,
            ..NetworkConfig::default()
        },
        0,
    );
    assert!(sed.scene_branch().is_empty());
    assert_eq!(sed.event_branch().len(), mtl.event_branch().len());
}

#[test]
fn smallest_config_runs() {
    let cfg = NetworkConfig {
        n_scenes: 2,
        n_events: 1,
        ..toy_config(Variant::Mtl)
    };
    let mut g = build(&cfg, 3);
    let (x, _) = toy_batch(1, 20, &cfg, 3);
    let p = g.predict(&x).unwrap();
    let s = p.scene_probs.unwrap();
    assert_eq!(s.shape(), &[1, 2]);
    assert!((s.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let e = p.event_probs.unwrap();
    assert_eq!(e.shape(), &[1, 20, 1]);
    assert!(e.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn grl_rejected_for_single_task_and_duplicates() {
    let mut cfg = toy_config(Variant::AscOnly);
    cfg.grl.position = Some(GrlPosition::S1);
    assert!(matches!(
        build_network(&cfg, &mut ChaCha8Rng::seed_from_u64(0)),
        Err(Error::Config(_))
    ));
    let mut g = build(&toy_config(Variant::Mtl), 0);
    g.insert_grl(GrlPosition::E1, 1.0).unwrap();
    assert!(matches!(g.insert_grl(GrlPosition::S2, 1.0), Err(Error::Config(_))));
}

#[test]
fn bad_input_shape_is_rejected() {
    let mut g = build(&toy_config(Variant::Mtl), 0);
    let x = Tensor::zeros(&[1, 1, 20, 15]);
    assert!(matches!(g.forward(&x, Mode::Eval), Err(Error::Shape(_))));
    // 20 frames survive, 4 do not survive the 5x1 time pool.
    let x = Tensor::zeros(&[1, 1, 4, 16]);
    assert!(matches!(g.forward(&x, Mode::Eval), Err(Error::Shape(_))));
}

#[test]
fn zero_weights_give_uniform_scene_probs() {
    let cfg = NetworkConfig {
        n_scenes: 4,
        ..toy_config(Variant::Mtl)
    };
    let mut g = build(&cfg, 0);
    let zeros = vec![0.0; g.param_count()];
    g.set_flat_params(&zeros).unwrap();
    let (x, _) = toy_batch(2, 20, &cfg, 1);
    let p = g.predict(&x).unwrap().scene_probs.unwrap();
    assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn identical_clips_give_identical_rows() {
    let cfg = toy_config(Variant::Mtl);
    let mut g = build(&cfg, 4);
    let (one, _) = toy_batch(1, 20, &cfg, 4);
    let mut data = one.data().to_vec();
    data.extend_from_slice(one.data());
    let x = Tensor::new(vec![2, 1, 20, 16], data).unwrap();
    let p = g.predict(&x).unwrap();
    let s = p.scene_probs.unwrap();
    assert_eq!(s.data()[..3], s.data()[3..]);
    let e = p.event_probs.unwrap();
    let half = e.len() / 2;
    assert_eq!(e.data()[..half], e.data()[half..]);
}

fn network_fd_error(mode: Mode, n: usize, seed: u64) -> f64 {
    let cfg = toy_config(Variant::Mtl);
    let mut g = build(&cfg, seed);
    let (x, targets) = toy_batch(n, 20, &cfg, seed + 100);
    // Unit weights keep both losses visible to the check.
    let w = LossWeights::new(1.0, 1.0).unwrap();
    g.loss_and_grad(&x, &targets, w, mode).unwrap();
    let analytic = g.flat_grads();
    let params = g.flat_params();
    let mut probe = g.clone();
    finite_difference_check(
        |p| {
            probe.set_flat_params(p).unwrap();
            probe.loss_and_grad(&x, &targets, w, mode).unwrap().total
        },
        &params,
        &analytic,
    )
    .unwrap()
}

#[test]
fn full_network_gradient_matches_finite_differences() {
    let err = network_fd_error(Mode::Eval, 1, 7);
    assert!(err < 1e-4, "eval-mode error {err}");
    let err = network_fd_error(Mode::Train, 2, 8);
    assert!(err < 1e-4, "train-mode error {err}");
}

#[test]
fn alpha_zero_trunk_gradient_equals_sed_only() {
    let mtl_cfg = toy_config(Variant::Mtl);
    let sed_cfg = toy_config(Variant::SedOnly);
    let mut mtl = build(&mtl_cfg, 11);
    let mut sed = build(&sed_cfg, 12);
    let wanted: Vec<String> = sed.checkpoint_entries().into_iter().map(|e| e.name).collect();
    let shared: Vec<_> = mtl
        .checkpoint_entries()
        .into_iter()
        .filter(|e| wanted.contains(&e.name))
        .collect();
    sed.load_entries(&shared).unwrap();

    let (x, targets) = toy_batch(2, 20, &mtl_cfg, 13);
    mtl.loss_and_grad(&x, &targets, LossWeights::new(0.0, 1.0).unwrap(), Mode::Train)
        .unwrap();
    sed.loss_and_grad(&x, &targets, LossWeights::default(), Mode::Train)
        .unwrap();
    let trunk_grads = |g: &LayerGraph| {
        g.named_params()
            .into_iter()
            .filter(|(n, _)| n.starts_with("trunk."))
            .flat_map(|(_, p)| p.weight_grad.data().iter().chain(p.bias_grad.data()).copied().collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    let a = trunk_grads(&mtl);
    assert!(a.iter().any(|&v| v != 0.0));
    assert_eq!(a, trunk_grads(&sed));
}

#[test]
fn one_small_step_decreases_loss() {
    let cfg = toy_config(Variant::Mtl);
    let w = LossWeights::default();
    for seed in 0..10 {
        let mut g = build(&cfg, seed);
        let (x, targets) = toy_batch(2, 20, &cfg, seed + 1000);
        let mut opt = Radam::new(RadamConfig {
            lr: 1e-4,
            ..RadamConfig::default()
        });
        let before = g.train_step(&x, &targets, w, &mut opt).unwrap().total;
        let after = g.loss_and_grad(&x, &targets, w, Mode::Train).unwrap().total;
        assert!(after < before, "seed {seed}: {after} >= {before}");
    }
}

#[test]
fn checkpoint_and_manifest_round_trip() {
    let mut cfg = toy_config(Variant::Mtl);
    cfg.grl.position = Some(GrlPosition::E2);
    cfg.grl.lambda = 0.5;
    let mut g = build(&cfg, 21);
    let (x, targets) = toy_batch(2, 20, &cfg, 22);
    let mut opt = Radam::new(RadamConfig::default());
    g.train_step(&x, &targets, LossWeights::default(), &mut opt).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let (ck, mf) = (dir.path().join("model.mtlw"), dir.path().join("manifest.json"));
    g.save(&ck, &mf).unwrap();
    let mut back = LayerGraph::load(&ck, &mf).unwrap();
    assert_eq!(back.manifest(), g.manifest());
    assert_eq!(back.checkpoint_entries(), g.checkpoint_entries());
    assert_eq!(back.predict(&x).unwrap(), g.predict(&x).unwrap());
}

#[test]
fn load_rejects_mismatched_entries() {
    let g = build(&toy_config(Variant::Mtl), 0);
    let mut other = build(&toy_config(Variant::SedOnly), 0);
    assert!(matches!(other.load_entries(&g.checkpoint_entries()), Err(Error::Format(_))));
}
