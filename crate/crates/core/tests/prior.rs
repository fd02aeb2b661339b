use jointrecon_core::prior::{
    dsm_loss, dsm_loss_and_grad, gm_log_density, gm_score, load_checkpoint, save_checkpoint, train_score, Channels,
    GaussianMixture, GmPrior, ScoreNet, ScoreNetParams, ScoreSource, Stack, TrainConfig,
};
use jointrecon_core::sampler::NoiseSchedule;
use jointrecon_core::{RandomStream, Shape};
use proptest::prelude::*;

fn mixtures_2d() -> Vec<GaussianMixture> {
    vec![
        GaussianMixture::single(vec![0.3, -0.2], 0.7).unwrap(),
        GaussianMixture::new(vec![0.3, 0.7], vec![vec![-1.0, 0.5], vec![1.2, -0.4]], vec![0.5, 0.8]).unwrap(),
        GaussianMixture::new(
            vec![0.2, 0.5, 0.3],
            vec![vec![0.0, 0.0], vec![1.5, 1.5], vec![-1.0, 2.0]],
            vec![0.3, 0.6, 0.45],
        )
        .unwrap(),
    ]
}

fn mixtures_3d() -> Vec<GaussianMixture> {
    vec![
        GaussianMixture::single(vec![0.5, 0.1, -0.3], 0.4).unwrap(),
        GaussianMixture::new(vec![0.6, 0.4], vec![vec![0.2, 0.0, 0.1], vec![0.9, 0.5, -0.5]], vec![0.2, 0.35]).unwrap(),
        GaussianMixture::new(
            vec![0.25, 0.25, 0.5],
            vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.5, 0.5, 0.5]],
            vec![0.3, 0.3, 0.6],
        )
        .unwrap(),
    ]
}

#[test]
fn mixture_density_integrates_to_one() {
    let (lo, hi, n) = (-8.0, 8.0, 801);
    let h = (hi - lo) / (n - 1) as f64;
    for gm in mixtures_2d() {
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = [lo + i as f64 * h, lo + j as f64 * h];
                let wi = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                let wj = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
                total += wi * wj * gm_log_density(&x, &gm).unwrap().exp();
            }
        }
        total *= h * h;
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }
}

#[test]
fn mixture_score_matches_finite_differences() {
    let mut s = RandomStream::new(4, "points");
    let h = 1e-5;
    for gm in mixtures_3d() {
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| s.uniform_range(-1.5, 1.5)).collect();
            let score = gm_score(&x, &gm).unwrap();
            let fd: Vec<f64> = (0..3)
                .map(|k| {
                    let mut p = x.clone();
                    let mut m = x.clone();
                    p[k] += h;
                    m[k] -= h;
                    (gm_log_density(&p, &gm).unwrap() - gm_log_density(&m, &gm).unwrap()) / (2.0 * h)
                })
                .collect();
            let err: f64 = score.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err <= 1e-5 * norm.max(1e-3), "x {x:?}: {score:?} vs {fd:?}");
        }
    }
}

proptest! {
    #[test]
    fn single_gaussian_score_is_affine(
        mean in prop::collection::vec(-2.0f64..2.0, 4),
        x in prop::collection::vec(-3.0f64..3.0, 4),
        tau in 0.1f64..3.0,
    ) {
        let gm = GaussianMixture::single(mean.clone(), tau).unwrap();
        let s = gm_score(&x, &gm).unwrap();
        for k in 0..4 {
            let expect = (mean[k] - x[k]) / (tau * tau);
            prop_assert!((s[k] - expect).abs() <= 1e-9 * expect.abs().max(1.0));
        }
    }
}

fn randomized_net(channels: Channels, seed: u64) -> ScoreNet {
    let mut stream = RandomStream::new(seed, "net");
    let mut p = ScoreNetParams::init(channels, [4, 6, 5], 0.01, 10.0, &mut stream).unwrap();
    for v in p.values.iter_mut() {
        *v = (0.3 * stream.normal()) as f32;
    }
    ScoreNet::new(p).unwrap()
}

fn random_stack(shape: Shape, channels: Channels, stream: &mut RandomStream) -> Stack {
    let n = shape.len() * channels.count();
    Stack::new(shape, channels, (0..n).map(|_| stream.uniform()).collect()).unwrap()
}

#[test]
fn network_gradient_matches_finite_differences() {
    let net = randomized_net(Channels::Joint, 1);
    let mut s = RandomStream::new(2, "inputs");
    let x = random_stack(Shape::square(8), Channels::Joint, &mut s);
    let z: Vec<f64> = (0..x.data().len()).map(|_| s.normal()).collect();
    let sigma = 0.7;
    let mut grad = vec![0.0; net.params().n_params()];
    net.sample_loss(&x, &z, sigma, Some(&mut grad)).unwrap();

    let base = net.params().clone();
    let n = base.values.len();
    for _ in 0..40 {
        let k = s.int_range(0, n);
        let eval = |delta: f32| {
            let mut p = base.clone();
            p.values[k] += delta;
            let used = p.values[k] as f64 - base.values[k] as f64;
            let loss = ScoreNet::new(p).unwrap().sample_loss(&x, &z, sigma, None).unwrap();
            (loss, used)
        };
        let (lp, dp) = eval(1e-3);
        let (lm, dm) = eval(-1e-3);
        let fd = (lp - lm) / (dp - dm);
        let tol = 1e-3 * fd.abs().max(grad[k].abs()).max(1e-2);
        assert!((fd - grad[k]).abs() <= tol, "param {k}: analytic {} vs fd {fd}", grad[k]);
    }
}

#[test]
fn network_gradient_accumulates_over_batch() {
    let net = randomized_net(Channels::Pet, 3);
    let mut s = RandomStream::new(5, "inputs");
    let batch: Vec<Stack> = (0..3).map(|_| random_stack(Shape::square(8), Channels::Pet, &mut s)).collect();
    let schedule = NoiseSchedule::default();
    let (l1, g1) = dsm_loss_and_grad(&net, &batch, &schedule, &mut RandomStream::new(9, "dsm")).unwrap();
    let l2 = dsm_loss(&net, &batch, &schedule, &mut RandomStream::new(9, "dsm")).unwrap();
    assert!((l1 - l2).abs() <= 1e-9 * l1);
    assert_eq!(g1.len(), net.params().n_params());
}

fn fresh_net(channels: Channels) -> ScoreNet {
    let p = ScoreNetParams::init(channels, [4, 6, 5], 0.01, 10.0, &mut RandomStream::new(0, "init")).unwrap();
    ScoreNet::new(p).unwrap()
}

#[test]
fn dsm_loss_properties() {
    let shape = Shape::square(8);
    let mut s = RandomStream::new(6, "data");
    let batch: Vec<Stack> = (0..64).map(|_| random_stack(shape, Channels::Joint, &mut s)).collect();
    let schedule = NoiseSchedule::default();
    let net = randomized_net(Channels::Joint, 7);

    let a = dsm_loss(&net, &batch, &schedule, &mut RandomStream::new(1, "dsm")).unwrap();
    let b = dsm_loss(&net, &batch, &schedule, &mut RandomStream::new(1, "dsm")).unwrap();
    assert!(a >= 0.0);
    assert_eq!(a.to_bits(), b.to_bits());

    // A zero output leaves ‖z‖², whose mean is the dimension.
    let d = (shape.len() * 3) as f64;
    let zero = dsm_loss(&fresh_net(Channels::Joint), &batch, &schedule, &mut RandomStream::new(2, "dsm")).unwrap();
    assert!((zero - d).abs() <= 0.05 * d, "{zero} vs {d}");
}

#[test]
fn exact_score_beats_zero_score() {
    let shape = Shape::square(4);
    let n = shape.len() * 3;
    let mean: Vec<f64> = (0..n).map(|i| 0.5 + 0.3 * ((i as f64) * 0.7).sin()).collect();
    let tau = 0.2;
    let prior = GmPrior::new(shape, Channels::Joint, GaussianMixture::single(mean.clone(), tau).unwrap()).unwrap();
    let mut s = RandomStream::new(8, "draws");
    let batch: Vec<Stack> = (0..64)
        .map(|_| Stack::new(shape, Channels::Joint, mean.iter().map(|m| m + tau * s.normal()).collect()).unwrap())
        .collect();
    let schedule = NoiseSchedule::default();
    let exact = dsm_loss(&prior, &batch, &schedule, &mut RandomStream::new(3, "dsm")).unwrap();
    let zero = dsm_loss(&fresh_net(Channels::Joint), &batch, &schedule, &mut RandomStream::new(3, "dsm")).unwrap();
    assert!(exact < zero, "{exact} vs {zero}");
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let net = randomized_net(Channels::Mri, 11);
    let dir = tempfile::tempdir().unwrap();
    let schedule = NoiseSchedule::default();
    save_checkpoint(net.params(), &schedule, 5, dir.path()).unwrap();
    let (params, desc) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(&params, net.params());
    assert_eq!(desc.seed, 5);
    assert_eq!(desc.n_params, params.n_params());
    let x = random_stack(Shape::square(8), Channels::Mri, &mut RandomStream::new(1, "x"));
    let a = net.score(&x, 0.3).unwrap();
    let b = ScoreNet::new(params).unwrap().score(&x, 0.3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let net = randomized_net(Channels::Pet, 12);
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(net.params(), &NoiseSchedule::default(), 0, dir.path()).unwrap();
    let bin = dir.path().join("params.bin");
    let mut bytes = std::fs::read(&bin).unwrap();
    bytes[10] ^= 1;
    std::fs::write(&bin, bytes).unwrap();
    assert!(load_checkpoint(dir.path()).is_err());
    assert!(matches!(
        load_checkpoint(&dir.path().join("missing")),
        Err(jointrecon_core::Error::MissingInput(_))
    ));
}

fn toy_data(n: usize, seed: u64) -> Vec<Stack> {
    let mut s = RandomStream::new(seed, "toy");
    (0..n).map(|_| random_stack(Shape::square(8), Channels::Joint, &mut s)).collect()
}

#[test]
fn training_is_bit_reproducible() {
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        widths: [4, 6, 5],
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let train = toy_data(8, 1);
    let heldout = toy_data(4, 2);
    let a = train_score(&train, &heldout, &cfg, |_| {}).unwrap();
    let b = train_score(&train, &heldout, &cfg, |_| {}).unwrap();
    assert_eq!(a.log.len(), 3);
    assert_eq!(a.log[0].epoch, 0);

    let da = tempfile::tempdir().unwrap();
    let db = tempfile::tempdir().unwrap();
    save_checkpoint(&a.params, &cfg.schedule, cfg.seed, da.path()).unwrap();
    save_checkpoint(&b.params, &cfg.schedule, cfg.seed, db.path()).unwrap();
    for name in ["params.bin", "params.json"] {
        assert_eq!(
            std::fs::read(da.path().join(name)).unwrap(),
            std::fs::read(db.path().join(name)).unwrap()
        );
    }

    let other = train_score(&train, &heldout, &TrainConfig { seed: 1, ..cfg.clone() }, |_| {}).unwrap();
    assert_ne!(other.params, a.params);
}

#[test]
fn diverging_training_is_reported() {
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        widths: [4, 6, 5],
        learning_rate: 1e6,
        clip_norm: None,
        ..TrainConfig::default()
    };
    let err = train_score(&toy_data(8, 3), &toy_data(4, 4), &cfg, |_| {}).unwrap_err();
    assert!(matches!(err, jointrecon_core::Error::TrainingDiverged { .. }), "{err}");
}
