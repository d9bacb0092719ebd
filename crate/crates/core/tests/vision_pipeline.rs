use mmfuse_core::rng::keyed_rng;
use mmfuse_core::vision::{
    augment, flip_horizontal, load_and_resize, ppm, rotate_zoom, standardize, AugmentConfig,
    ImageRecord,
};
use mmfuse_core::{Error, Tensor};
use proptest::prelude::*;

fn write_ppm(dir: &std::path::Path, name: &str, px: &[f32], w: usize, h: usize) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, ppm::encode(px, w, h)).unwrap();
    path
}

/// Smooth radial bump that is dark near the corners.
fn smooth_image(n: usize) -> ImageRecord {
    let c = (n as f32 - 1.0) / 2.0;
    let mut px = vec![0.0f32; 3 * n * n];
    for ch in 0..3 {
        for y in 0..n {
            for x in 0..n {
                let r2 = ((y as f32 - c).powi(2) + (x as f32 - c).powi(2)) / (c * c);
                px[(ch * n + y) * n + x] = (-(2.0 + ch as f32) * r2).exp();
            }
        }
    }
    ImageRecord::new(Tensor::new(&[3, n, n], px).unwrap()).unwrap()
}

fn mean_abs_diff(a: &ImageRecord, b: &ImageRecord) -> f32 {
    let (a, b) = (a.pixels.data(), b.pixels.data());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f32>() / a.len() as f32
}

#[test]
fn solid_color_survives_resize() {
    let dir = tempfile::tempdir().unwrap();
    let (w, h) = (7, 5);
    let mut px = Vec::new();
    for v in [51.0f32, 102.0, 204.0] {
        px.extend(std::iter::repeat_n(v / 255.0, w * h));
    }
    let path = write_ppm(dir.path(), "solid.ppm", &px, w, h);
    let img = load_and_resize(&path, 4).unwrap();
    assert_eq!(img.pixels.shape(), &[3, 4, 4]);
    assert_eq!(img.original_dims, (5, 7));
    for (c, v) in [0.2f32, 0.4, 0.8].iter().enumerate() {
        assert!(img.pixels.data()[c * 16..(c + 1) * 16].iter().all(|p| (p - v).abs() < 1e-6));
    }
}

#[test]
fn target_sized_image_is_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let px: Vec<f32> = (0..3 * 9).map(|i| ((i * 37) % 256) as f32 / 255.0).collect();
    let path = write_ppm(dir.path(), "same.ppm", &px, 3, 3);
    let img = load_and_resize(&path, 3).unwrap();
    for (a, b) in img.pixels.data().iter().zip(&px) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn unreadable_file_is_data_error_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.ppm");
    std::fs::write(&path, b"not an image").unwrap();
    match load_and_resize(&path, 8) {
        Err(Error::Data(msg)) => assert!(msg.contains("broken.ppm")),
        other => panic!("expected data error, got {other:?}"),
    }
    assert!(load_and_resize(&dir.path().join("missing.ppm"), 8).is_err());
}

#[test]
fn grayscale_is_replicated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.pgm");
    let mut bytes = b"P5\n2 2\n255\n".to_vec();
    bytes.extend([0u8, 85, 170, 255]);
    std::fs::write(&path, bytes).unwrap();
    let img = load_and_resize(&path, 2).unwrap();
    let d = img.pixels.data();
    assert_eq!(&d[0..4], &d[4..8]);
    assert_eq!(&d[0..4], &d[8..12]);
}

#[test]
fn standardize_identity_and_constant() {
    let img = smooth_image(6);
    let t = standardize(&img, [0.0; 3], [1.0; 3]).unwrap();
    assert_eq!(t.data(), img.pixels.data());
    let flat = ImageRecord::new(Tensor::full(&[3, 4, 4], 0.5)).unwrap();
    let t = standardize(&flat, [0.5; 3], [0.5; 3]).unwrap();
    assert!(t.data().iter().all(|&v| v == 0.0));
}

#[test]
fn disabled_and_neutral_augmentation_are_identity() {
    let img = smooth_image(9);
    let mut rng = keyed_rng(&[3]);
    assert_eq!(augment(&img, &AugmentConfig::disabled(), &mut rng), img);
    let neutral = AugmentConfig {
        enabled: true,
        horizontal_flip_prob: 0.0,
        rotation_degrees: 0.0,
        zoom_range: [1.0, 1.0],
    };
    assert_eq!(augment(&img, &neutral, &mut rng), img);
    let out = rotate_zoom(&img, 0.0, 1.0);
    assert!(mean_abs_diff(&out, &img) < 1e-6);
}

#[test]
fn flip_is_an_involution() {
    let img = smooth_image(8);
    let mut asym = img.clone();
    asym.pixels.data_mut()[3] = 1.0;
    assert_ne!(flip_horizontal(&asym), asym);
    assert_eq!(flip_horizontal(&flip_horizontal(&asym)), asym);
    let forced = AugmentConfig {
        enabled: true,
        horizontal_flip_prob: 1.0,
        rotation_degrees: 0.0,
        zoom_range: [1.0, 1.0],
    };
    let mut rng = keyed_rng(&[4]);
    let twice = augment(&augment(&asym, &forced, &mut rng), &forced, &mut rng);
    assert_eq!(twice, asym);
}

#[test]
fn rotation_round_trip_on_smooth_image() {
    let img = smooth_image(32);
    for theta in [5.0, 10.0, 15.0, -12.0] {
        let back = rotate_zoom(&rotate_zoom(&img, theta, 1.0), -theta, 1.0);
        let d = mean_abs_diff(&back, &img);
        assert!(d < 0.02, "θ={theta}: mean abs diff {d}");
    }
}

#[test]
fn rotation_is_counter_clockwise() {
    // a bright pixel right of center moves above center after +90°
    let n = 5;
    let mut px = vec![0.0f32; 3 * n * n];
    for c in 0..3 {
        px[(c * n + 2) * n + 4] = 1.0;
    }
    let img = ImageRecord::new(Tensor::new(&[3, n, n], px).unwrap()).unwrap();
    let out = rotate_zoom(&img, 90.0, 1.0);
    assert!((out.pixels.data()[2] - 1.0).abs() < 1e-5);
}

#[test]
fn seeded_augmentation_is_bit_reproducible() {
    let img = smooth_image(16);
    let cfg = AugmentConfig::default();
    let a = augment(&img, &cfg, &mut keyed_rng(&[9, 1, 2]));
    let b = augment(&img, &cfg, &mut keyed_rng(&[9, 1, 2]));
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn augmented_values_stay_in_unit_interval(
        seed in any::<u64>(),
        px in proptest::collection::vec(0.0f32..=1.0, 3 * 36),
        rot in 0.0f64..90.0,
        lo in 0.3f64..1.0,
        span in 0.0f64..2.0,
    ) {
        let img = ImageRecord::new(Tensor::new(&[3, 6, 6], px).unwrap()).unwrap();
        let cfg = AugmentConfig { enabled: true, horizontal_flip_prob: 0.5, rotation_degrees: rot, zoom_range: [lo, lo + span] };
        prop_assert!(cfg.validate().is_ok());
        let out = augment(&img, &cfg, &mut keyed_rng(&[seed]));
        prop_assert_eq!(out.pixels.shape(), img.pixels.shape());
        prop_assert!(out.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
