use gtic_core::nn::{finite_diff_check, ConvSpec, Gradients, Layer, LayerSpec, Mode, ParamStore, Sequential, Tensor};
use gtic_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(11)
}

fn random(dims: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(dims, |_| r.gen_range(-1.0..1.0))
}

fn build(spec: LayerSpec, in_ch: usize) -> (Layer, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let layer = Layer::build(spec, in_ch, "l", &mut store, &mut rng()).unwrap();
    (layer, store)
}

#[test]
fn unit_kernel_conv_is_identity() {
    let (layer, mut store) = build(LayerSpec::Conv(ConvSpec::same(1, 1, 1)), 1);
    store
        .assign("l.weight", Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap())
        .unwrap();
    let x = random(&[1, 4, 4, 1], 1);
    let (y, _) = layer.forward(&store, &x).unwrap();
    assert_eq!(y, x);
}

#[test]
fn two_by_two_valid_conv() {
    let spec = ConvSpec {
        filters: 1,
        kernel: 2,
        stride: 1,
        padding: 0,
    };
    let (layer, mut store) = build(LayerSpec::Conv(spec), 1);
    store
        .assign(
            "l.weight",
            Tensor::new(&[2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        )
        .unwrap();
    let x = Tensor::new(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let (y, _) = layer.forward(&store, &x).unwrap();
    assert_eq!(y.dims(), &[1, 1, 1, 1]);
    assert_eq!(y.data()[0], 5.0);
}

#[test]
fn rectifier_examples() {
    let (leaky, store) = build(LayerSpec::LeakyRelu { slope: 0.2 }, 1);
    let x = Tensor::new(&[1, 1, 2, 1], vec![-2.0, 3.0]).unwrap();
    let (y, _) = leaky.forward(&store, &x).unwrap();
    assert!((y.data()[0] + 0.4).abs() < 1e-12);
    assert_eq!(y.data()[1], 3.0);

    let (relu, store) = build(LayerSpec::Relu, 1);
    let (y, cache) = relu.forward(&store, &x).unwrap();
    assert_eq!(y.data(), &[0.0, 3.0]);
    let mut g = Gradients::zeros_like(&store);
    let gin = relu
        .backward(&store, &cache, &Tensor::full(&[1, 1, 2, 1], 1.0), &mut g)
        .unwrap();
    assert_eq!(gin.data(), &[0.0, 1.0]);
}

#[test]
fn conv_bias_gradient_is_output_gradient_sum() {
    let (layer, store) = build(LayerSpec::Conv(ConvSpec::same(3, 3, 1)), 2);
    let x = random(&[2, 5, 5, 2], 2);
    let (y, cache) = layer.forward(&store, &x).unwrap();
    let gout = random(y.dims(), 3);
    let mut g = Gradients::zeros_like(&store);
    layer.backward(&store, &cache, &gout, &mut g).unwrap();
    let bias = g.get(store.id("l.bias").unwrap());
    for c in 0..3 {
        let expect: f64 = gout.data().iter().skip(c).step_by(3).sum();
        assert!((bias.data()[c] - expect).abs() < 1e-12);
    }
}

#[test]
fn batchnorm_normalizes_each_channel_in_training() {
    let (layer, store) = build(LayerSpec::BatchNorm, 3);
    let x = random(&[4, 3, 3, 3], 4).map(|v| 5.0 * v + 2.0);
    let (y, _) = layer.forward(&store, &x).unwrap();
    for c in 0..3 {
        let vals: Vec<f64> = y.data().iter().skip(c).step_by(3).copied().collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-3);
    }
}

#[test]
fn batchnorm_inference_uses_running_statistics() {
    let (layer, mut store) = build(LayerSpec::BatchNorm, 2);
    let x = random(&[3, 2, 2, 2], 5).map(|v| v + 4.0);
    let (_, cache) = layer.forward(&store, &x).unwrap();
    layer.update_running_stats(&mut store, &cache);
    let rm = store.by_name("l.running_mean").unwrap().clone();
    let rv = store.by_name("l.running_var").unwrap().clone();
    store.set_mode(Mode::Inference);
    let (y, _) = layer.forward(&store, &x).unwrap();
    for (i, (&xi, &yi)) in x.data().iter().zip(y.data()).enumerate() {
        let c = i % 2;
        let expect = (xi - rm.data()[c]) / (rv.data()[c] + 1e-5).sqrt();
        assert!((yi - expect).abs() < 1e-12);
    }
    // a single update moves the running mean a tenth of the way from zero
    assert!(rm.data().iter().all(|&m| m > 0.3 && m < 0.5));
}

#[test]
fn transposed_conv_scales_spatial_dims() {
    let (layer, store) = build(LayerSpec::TransposedConv(ConvSpec::same(4, 3, 2)), 2);
    let (y, _) = layer.forward(&store, &random(&[1, 3, 5, 2], 6)).unwrap();
    assert_eq!(y.dims(), &[1, 6, 10, 4]);
}

#[test]
fn shape_contract_violations_are_errors() {
    let (layer, store) = build(LayerSpec::Conv(ConvSpec::same(2, 3, 1)), 3);
    assert!(matches!(
        layer.forward(&store, &random(&[1, 4, 4, 2], 7)),
        Err(Error::Shape { .. })
    ));
    assert!(matches!(
        layer.forward(&store, &random(&[4, 4, 3], 7)),
        Err(Error::Shape { .. })
    ));
    assert!(matches!(
        Layer::build(
            LayerSpec::Residual { filters: 4 },
            3,
            "r",
            &mut ParamStore::<f64>::new(),
            &mut rng()
        ),
        Err(Error::InvalidSpec(_))
    ));
}

#[test]
fn backward_rejects_foreign_cache() {
    let (conv, store) = build(LayerSpec::Conv(ConvSpec::same(2, 3, 1)), 2);
    let (relu, _) = build(LayerSpec::Relu, 2);
    let x = random(&[1, 4, 4, 2], 8);
    let (_, cache) = relu.forward(&store, &x).unwrap();
    let mut g = Gradients::zeros_like(&store);
    assert!(matches!(
        conv.backward(&store, &cache, &x, &mut g),
        Err(Error::MissingCache(_))
    ));
}

#[test]
fn instance_norm_standardizes_each_item_in_both_modes() {
    let (layer, mut store) = build(LayerSpec::InstanceNorm, 2);
    let mut x = random(&[2, 4, 4, 2], 12);
    x.data_mut()
        .iter_mut()
        .enumerate()
        .for_each(|(i, v)| *v = *v * (1 + i / 32) as f64 + 3.0);
    let (y, _) = layer.forward(&store, &x).unwrap();
    for item in y.data().chunks(32) {
        for ch in 0..2 {
            let vals: Vec<f64> = item.iter().skip(ch).step_by(2).copied().collect();
            let mean = vals.iter().sum::<f64>() / 16.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3, "{var}");
        }
    }
    store.set_mode(Mode::Inference);
    assert_eq!(layer.forward(&store, &x).unwrap().0, y);
}

fn check(spec: LayerSpec, in_ch: usize, dims: &[usize]) {
    let (layer, store) = build(spec, in_ch);
    let report = finite_diff_check(&layer, &store, &random(dims, 9), 1e-5, 1e-4).unwrap();
    assert!(report.passed(), "{spec:?}: {:?}", report.failures());
}

#[test]
fn gradients_match_finite_differences() {
    check(LayerSpec::Conv(ConvSpec::same(3, 3, 1)), 2, &[2, 5, 5, 2]);
    check(LayerSpec::Conv(ConvSpec::same(3, 5, 2)), 2, &[1, 6, 6, 2]);
    check(LayerSpec::Conv(ConvSpec::same(2, 4, 2)), 3, &[1, 8, 8, 3]);
    check(LayerSpec::TransposedConv(ConvSpec::same(3, 3, 2)), 2, &[1, 3, 4, 2]);
    check(LayerSpec::BatchNorm, 3, &[3, 3, 3, 3]);
    check(LayerSpec::InstanceNorm, 2, &[2, 3, 4, 2]);
    check(LayerSpec::Relu, 2, &[1, 3, 3, 2]);
    check(LayerSpec::LeakyRelu { slope: 0.2 }, 2, &[1, 3, 3, 2]);
    check(LayerSpec::Sigmoid, 2, &[1, 3, 3, 2]);
    check(LayerSpec::AvgPool, 2, &[2, 4, 6, 2]);
    check(LayerSpec::Residual { filters: 2 }, 2, &[2, 4, 4, 2]);
}

#[test]
fn gradcheck_step_is_bounded() {
    let (layer, store) = build(LayerSpec::Relu, 1);
    let x = random(&[1, 2, 2, 1], 1);
    assert!(finite_diff_check(&layer, &store, &x, 1e-2, 1e-4).is_err());
    assert!(finite_diff_check(&layer, &store, &x, 1e-8, 1e-4).is_err());
}

#[test]
fn sequential_chains_layers() {
    let specs = [
        LayerSpec::Conv(ConvSpec::same(4, 3, 2)),
        LayerSpec::BatchNorm,
        LayerSpec::Relu,
        LayerSpec::Residual { filters: 4 },
    ];
    let mut store = ParamStore::<f64>::new();
    let net = Sequential::build(&specs, 3, "net", &mut store, &mut rng()).unwrap();
    assert_eq!(net.out_channels(), 4);
    let x = random(&[2, 8, 8, 3], 3);
    let (y, tape) = net.forward(&store, &x).unwrap();
    assert_eq!(y.dims(), &[2, 4, 4, 4]);
    let mut g = Gradients::zeros_like(&store);
    let gin = net
        .backward(&store, &tape, &Tensor::full(y.dims(), 1.0), &mut g)
        .unwrap();
    assert_eq!(gin.dims(), x.dims());
    assert!(store.by_name("net.3.conv1.weight").is_some());
}
