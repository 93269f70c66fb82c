use gtic_core::adversary::Discriminator;
use gtic_core::nn::gradcheck::compare_with_finite_differences;
use gtic_core::nn::{Gradients, Mode, ParamStore, Tensor};
use gtic_core::pipeline::{GeneratorParams, MaskedCodeTensor, SymbolGrid};
use gtic_core::{Arch, Error, Pipeline, PipelineConfig, SurrogateMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TINY: Arch = Arch {
    width: 8,
    decoder_blocks: 1,
    masker_blocks: 1,
    disc_width: 8,
};

fn image(dims: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(dims, |_| r.gen_range(0.0..1.0))
}

fn toy(channels: usize) -> PipelineConfig {
    PipelineConfig {
        channels,
        arch: Arch::TOY,
        ..PipelineConfig::default()
    }
}

fn inference(params: &mut GeneratorParams<f64>) {
    params.set_mode(Mode::Inference);
}

#[test]
fn encoder_and_decoder_shapes() {
    let (pipe, mut params) = Pipeline::build::<f64>(toy(16), 1).unwrap();
    inference(&mut params);
    let x = image(&[64, 64, 3], 1);
    let a = pipe.analyze(&params, &x, 0.0).unwrap();
    assert_eq!(a.code.dims(), &[8, 8, 16]);
    assert_eq!(a.masked.grid.dims(), [8, 8, 16]);
    let xhat = pipe.decode(&params, &a.masked).unwrap();
    assert_eq!(xhat.dims(), &[64, 64, 3]);
    assert!(xhat.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn encoder_rejects_unaligned_or_wrong_channels() {
    let (pipe, params) = Pipeline::build::<f64>(toy(4), 1).unwrap();
    assert!(matches!(
        pipe.encode(&params, &image(&[12, 16, 3], 1)),
        Err(Error::Shape { .. })
    ));
    assert!(matches!(
        pipe.encode(&params, &image(&[16, 16, 1], 1)),
        Err(Error::Shape { .. })
    ));
    let wrong = MaskedCodeTensor {
        depth: 2,
        grid: SymbolGrid::zeros(2, 2, 5),
    };
    assert!(matches!(pipe.decode(&params, &wrong), Err(Error::Shape { .. })));
}

#[test]
fn building_is_deterministic_per_seed() {
    let (_, a) = Pipeline::build::<f32>(toy(8), 7).unwrap();
    let (_, b) = Pipeline::build::<f32>(toy(8), 7).unwrap();
    let (_, c) = Pipeline::build::<f32>(toy(8), 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn single_and_double_precision_agree() {
    let (pipe, mut p64) = Pipeline::build::<f64>(toy(8), 3).unwrap();
    inference(&mut p64);
    let p32: GeneratorParams<f32> = p64.cast();
    let x = image(&[16, 16, 3], 2);
    let w64 = pipe.encode(&p64, &x).unwrap();
    let w32 = pipe.encode(&p32, &x.cast::<f32>()).unwrap();
    for (a, b) in w64.data().iter().zip(w32.data()) {
        assert!((a - *b as f64).abs() < 1e-4 * (1.0 + a.abs()));
    }
}

#[test]
fn hard_training_pass_matches_inference_chain_in_inference_mode() {
    let (pipe, mut params) = Pipeline::build::<f64>(toy(8), 4).unwrap();
    inference(&mut params);
    let x = image(&[16, 24, 3], 3);
    let a = pipe.analyze(&params, &x, 0.5).unwrap();
    let pass = pipe
        .forward_train(&params, &Tensor::stack(std::slice::from_ref(&x)).unwrap(), 0.5)
        .unwrap();
    let codes = pass.masked_codes(2).unwrap();
    assert_eq!(codes[0], a.masked);
    let xhat = pipe.decode(&params, &a.masked).unwrap();
    for (u, v) in xhat.data().iter().zip(pass.reconstruction.data()) {
        assert!((u - v).abs() < 1e-9);
    }
}

#[test]
fn masker_off_keeps_every_channel() {
    let mut cfg = toy(6);
    cfg.use_masker = false;
    let (pipe, params) = Pipeline::build::<f64>(cfg, 5).unwrap();
    let a = pipe.analyze(&params, &image(&[16, 16, 3], 4), 2.0).unwrap();
    assert_eq!(a.mask.count_ones(), 2 * 2 * 6);
    assert_eq!(a.masked.grid, a.quantized.grid);
}

#[test]
fn straight_through_reaches_the_encoder() {
    let (pipe, params) = Pipeline::build::<f64>(toy(8), 6).unwrap();
    let x = Tensor::stack(&[image(&[16, 16, 3], 5), image(&[16, 16, 3], 6)]).unwrap();
    let pass = pipe.forward_train(&params, &x, 0.0).unwrap();
    let g = pass.reconstruction.zip_map(&x, |a, b| 2.0 * (a - b)).unwrap();
    let grads = pipe.backward(&params, &pass, &g).unwrap();
    assert!(grads.encoder.l2_norm() > 0.0);
    assert!(grads.masker.l2_norm() > 0.0);
    assert!(grads.decoder.l2_norm() > 0.0);
}

#[test]
fn backward_needs_a_surrogate() {
    let mut cfg = toy(4);
    cfg.surrogate = SurrogateMode::Off;
    let (pipe, params) = Pipeline::build::<f64>(cfg, 6).unwrap();
    let x = Tensor::stack(&[image(&[8, 8, 3], 5)]).unwrap();
    let pass = pipe.forward_train(&params, &x, 0.0).unwrap();
    assert!(pipe.backward(&params, &pass, &pass.reconstruction).is_err());
}

/// Relaxed surrogates make the chain differentiable, so the surrogate
/// gradients must agree with central differences.
#[test]
fn relaxed_surrogate_gradients_match_finite_differences() {
    let cfg = PipelineConfig {
        channels: 4,
        depth: 2,
        surrogate: SurrogateMode::Relaxed,
        arch: TINY,
        ..PipelineConfig::default()
    };
    let (pipe, mut params) = Pipeline::build::<f64>(cfg, 9).unwrap();
    // zero biases behind dead units sit exactly on a ReLU kink
    let mut jitter = ChaCha8Rng::seed_from_u64(12);
    for store in [&mut params.encoder, &mut params.masker, &mut params.decoder] {
        let ids: Vec<_> = store.trainable_ids().collect();
        for id in ids {
            if store.entries()[id.index()].name.ends_with(".bias") {
                store
                    .get_mut(id)
                    .data_mut()
                    .iter_mut()
                    .for_each(|b| *b += jitter.gen_range(-0.05..0.05));
            }
        }
    }
    let x = Tensor::stack(&[image(&[16, 16, 3], 7), image(&[16, 16, 3], 8)]).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(10);
    let probe = Tensor::from_fn(&[2, 16, 16, 3], |_| r.gen_range(-1.0..1.0));
    let pass = pipe.forward_train(&params, &x, 0.3).unwrap();
    let grads = pipe.backward(&params, &pass, &probe).unwrap();

    let loss = |p: &GeneratorParams<f64>| -> gtic_core::Result<f64> {
        let out = pipe.forward_train(p, &x, 0.3)?;
        Ok(out
            .reconstruction
            .data()
            .iter()
            .zip(probe.data())
            .map(|(a, b)| a * b)
            .sum())
    };
    type Pick = fn(&mut GeneratorParams<f64>) -> &mut ParamStore<f64>;
    let picks: [(Pick, &Gradients<f64>); 3] = [
        (|p| &mut p.encoder, &grads.encoder),
        (|p| &mut p.masker, &grads.masker),
        (|p| &mut p.decoder, &grads.decoder),
    ];
    let mut worst = 0.0f64;
    for (pick, g) in picks {
        let store = pick(&mut params.clone()).clone();
        let report = compare_with_finite_differences(
            &store,
            &x,
            g,
            None,
            |s, _| {
                let mut p = params.clone();
                *pick(&mut p) = s.clone();
                loss(&p)
            },
            1e-5,
            1e-3,
            6,
        )
        .unwrap();
        worst = worst.max(report.max_error());
        assert!(report.passed(), "{:?}", report.failures());
    }
    assert!(worst < 1e-3);
}

#[test]
fn discriminator_scores_and_gradients() {
    let (disc, store) = Discriminator::build::<f64>(&TINY, 3).unwrap();
    let x = Tensor::stack(&[image(&[32, 32, 3], 1), image(&[32, 32, 3], 2)]).unwrap();
    let (scores, tape) = disc.forward(&store, &x).unwrap();
    assert_eq!(scores.dims(), &[2, 3]);
    assert!(scores.data().iter().all(|&s| s > 0.0 && s < 1.0));

    let mut r = ChaCha8Rng::seed_from_u64(4);
    let w = Tensor::from_fn(&[2, 3], |_| r.gen_range(-1.0..1.0));
    let mut grads = Gradients::zeros_like(&store);
    let gin = disc.backward(&store, &tape, &w, &mut grads).unwrap();
    let report = compare_with_finite_differences(
        &store,
        &x,
        &grads,
        Some(&gin),
        |s, input| {
            let (sc, _) = disc.forward(s, input)?;
            Ok(sc.data().iter().zip(w.data()).map(|(a, b)| a * b).sum())
        },
        1e-5,
        1e-4,
        8,
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.failures());
}
