use mmfuse_core::nn::ForwardCtx;
use mmfuse_core::params::gradcheck_params;
use mmfuse_core::rng::keyed_rng;
use mmfuse_core::vision_encoder::{VisionEncoder, VisionEncoderConfig};
use mmfuse_core::{Error, ParamStore, Tape, Tensor};
use rand::Rng;

fn tiny() -> VisionEncoderConfig {
    VisionEncoderConfig {
        widths: vec![2, 4],
        resolution: 8,
        ..Default::default()
    }
}

fn image(r: usize, seed: u64) -> Tensor<f32> {
    let mut rng = keyed_rng(&[seed]);
    Tensor::new(&[3, r, r], (0..3 * r * r).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn output_dimension_and_determinism() {
    let cfg = VisionEncoderConfig::default();
    let mut store = ParamStore::new();
    let enc = VisionEncoder::new(&cfg, &mut store, &mut keyed_rng(&[1])).unwrap();
    let img = image(32, 2);
    let a = enc.encode_image(&img, &store).unwrap();
    assert_eq!(a.shape(), &[64]);
    assert_eq!(a, enc.encode_image(&img, &store).unwrap());

    let zeros = Tensor::zeros(&[3, 32, 32]);
    let z1 = enc.encode_image(&zeros, &store).unwrap();
    let mut store2 = ParamStore::new();
    let enc2 = VisionEncoder::new(&cfg, &mut store2, &mut keyed_rng(&[1])).unwrap();
    assert_eq!(z1, enc2.encode_image(&zeros, &store2).unwrap());
    assert!(z1.is_finite());
}

#[test]
fn wrong_resolution_or_channels_is_data_error() {
    let mut store = ParamStore::new();
    let enc = VisionEncoder::new(&tiny(), &mut store, &mut keyed_rng(&[1])).unwrap();
    assert!(matches!(enc.encode_image(&image(16, 1), &store), Err(Error::Data(_))));
    let gray = Tensor::zeros(&[1, 8, 8]);
    assert!(matches!(enc.encode_image(&gray, &store), Err(Error::Data(_))));
}

#[test]
fn config_validation() {
    let mut cfg = tiny();
    cfg.widths = vec![4, 2];
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let mut cfg = tiny();
    cfg.resolution = 6;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let mut cfg = tiny();
    cfg.backbone = "densenet".into();
    assert!(cfg.validate().is_err());
}

#[test]
fn finite_under_input_scaling() {
    let mut store = ParamStore::new();
    let enc = VisionEncoder::new(&tiny(), &mut store, &mut keyed_rng(&[4])).unwrap();
    let img = image(8, 5);
    for k in [-10.0f32, -1.0, 0.1, 2.0, 10.0] {
        let scaled = Tensor::new(&[3, 8, 8], img.data().iter().map(|v| v * k).collect()).unwrap();
        let f = enc.encode_image(&scaled, &store).unwrap();
        assert_eq!(f.shape(), &[4]);
        assert!(f.is_finite(), "scale {k}");
    }
}

#[test]
fn batch_rows_match_single_images() {
    let mut store = ParamStore::new();
    let enc = VisionEncoder::new(&tiny(), &mut store, &mut keyed_rng(&[6])).unwrap();
    let (a, b) = (image(8, 7), image(8, 8));
    let mut tape = Tape::new();
    let bind = store.bind(&mut tape);
    let data: Vec<f32> = a.data().iter().chain(b.data()).copied().collect();
    let x = tape.constant(Tensor::new(&[2, 3, 8, 8], data).unwrap());
    let out = enc.forward(&mut tape, &bind, x, &ForwardCtx::inference()).unwrap();
    let both = tape.data(out).to_vec();
    let single: Vec<f32> = [a, b]
        .iter()
        .flat_map(|i| enc.encode_image(i, &store).unwrap().into_data())
        .collect();
    for (x, y) in both.iter().zip(&single) {
        assert!((x - y).abs() < 1e-5);
    }
}

#[test]
fn gradcheck_full_encoder() {
    let mut store = ParamStore::<f64>::new();
    let enc = VisionEncoder::new(&tiny(), &mut store, &mut keyed_rng(&[9])).unwrap();
    let img: Tensor<f64> = image(8, 10).cast();
    let data: Vec<f64> = img.data().iter().chain(image(8, 11).cast::<f64>().data()).copied().collect();
    let batch = Tensor::new(&[2, 3, 8, 8], data).unwrap();
    let probe = vec![0.7, -0.4, 1.3, 0.5, -0.9, 0.8, 0.3, 1.1];
    let worst = gradcheck_params(
        &store,
        |tape, bind| {
            let x = tape.constant(batch.clone());
            let f = enc.forward(tape, bind, x, &ForwardCtx::inference())?;
            let w = tape.constant(Tensor::new(&[2, 4], probe.clone())?);
            let y = tape.mul(f, w)?;
            Ok(tape.sum(y))
        },
        1e-4,
    )
    .unwrap();
    assert!(worst < 1e-4, "max relative error {worst}");
}
