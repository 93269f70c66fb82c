use gtic_core::bitstream::Bitstream;
use gtic_core::metrics::{ms_ssim, psnr};
use gtic_core::nn::{Mode, Tensor};
use gtic_core::{Arch, Codec, EntropyMode, Error, Pipeline, PipelineConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TINY: Arch = Arch {
    width: 8,
    decoder_blocks: 1,
    masker_blocks: 1,
    disc_width: 8,
};

fn codec(channels: usize, seed: u64) -> Codec<f32> {
    let cfg = PipelineConfig {
        channels,
        arch: TINY,
        ..PipelineConfig::default()
    };
    let (pipe, mut params) = Pipeline::build::<f32>(cfg, seed).unwrap();
    params.set_mode(Mode::Inference);
    Codec::new(pipe, params)
}

fn image(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[h, w, 3], |_| r.gen_range(0.0..1.0))
}

#[test]
fn odd_sizes_pad_then_crop_back() {
    let c = codec(8, 1);
    let x = image(65, 63, 2);
    let bs = c.compress(&x, 0.0, EntropyMode::Adaptive).unwrap();
    let h = &bs.header;
    assert_eq!((h.original_height, h.original_width), (65, 63));
    assert_eq!((h.padded_height, h.padded_width), (72, 64));
    let y = c.decompress_bytes(&bs.to_bytes()).unwrap();
    assert_eq!(y.dims(), &[65, 63, 3]);
    assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn compression_is_deterministic_and_every_mode_decodes_alike() {
    let c = codec(8, 3);
    let x = image(32, 40, 4);
    let a = c.compress(&x, 0.5, EntropyMode::FixedTable).unwrap().to_bytes();
    assert_eq!(a, c.compress(&x, 0.5, EntropyMode::FixedTable).unwrap().to_bytes());
    let reference = c.decompress_bytes(&a).unwrap();
    for mode in [EntropyMode::Adaptive, EntropyMode::Raw] {
        let bytes = c.compress(&x, 0.5, mode).unwrap().to_bytes();
        assert_eq!(c.decompress_bytes(&bytes).unwrap(), reference, "{mode:?}");
    }
}

#[test]
fn larger_shift_never_grows_the_fixed_code_file() {
    let c = codec(8, 5);
    for seed in 0..4 {
        let x = image(48, 48, 10 + seed);
        let lo = c.compress(&x, -2.0, EntropyMode::FixedTable).unwrap().byte_len();
        let hi = c.compress(&x, 2.0, EntropyMode::FixedTable).unwrap().byte_len();
        assert!(hi <= lo, "{hi} > {lo}");
    }
}

#[test]
fn stream_from_another_code_shape_is_rejected() {
    let bytes = codec(8, 1)
        .compress(&image(16, 16, 1), 0.0, EntropyMode::FixedTable)
        .unwrap()
        .to_bytes();
    match codec(4, 1).decompress_bytes(&bytes) {
        Err(Error::CodeMismatch {
            found_channels: 8,
            model_channels: 4,
            ..
        }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn input_rejections() {
    let c = codec(4, 1);
    assert!(matches!(
        c.compress(&image(16, 16, 1), 2.5, EntropyMode::FixedTable),
        Err(Error::ShiftOutOfRange(_))
    ));
    assert!(c
        .compress(&image(16, 16, 1), f64::NAN, EntropyMode::FixedTable)
        .is_err());
    let gray = Tensor::<f32>::zeros(&[16, 16, 1]);
    assert!(c.compress(&gray, 0.0, EntropyMode::FixedTable).is_err());
    let mut bad = image(16, 16, 1);
    bad.data_mut()[5] = f32::NAN;
    assert!(c.compress(&bad, 0.0, EntropyMode::FixedTable).is_err());
}

#[test]
fn measure_agrees_with_a_manual_round_trip() {
    let c = codec(8, 7);
    let x = image(32, 32, 8);
    let (bpp, p, s) = c.measure(&x, 0.0, EntropyMode::Adaptive).unwrap();
    let bs = c.compress(&x, 0.0, EntropyMode::Adaptive).unwrap();
    let y = c.decompress(&Bitstream::from_bytes(&bs.to_bytes()).unwrap()).unwrap();
    assert_eq!(bpp, bs.byte_len() as f64 * 8.0 / (32.0 * 32.0));
    assert_eq!(p, psnr(&x, &y).unwrap());
    assert_eq!(s, ms_ssim(&x, &y).unwrap());
}
