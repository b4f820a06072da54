//! File round trips and damaged-file detection.

use maskinfer_core::enclave::{Enclave, EnclaveConfig};
use maskinfer_core::harness::io::{self, Artifact};
use maskinfer_core::harness::{
    build_model, prepare_model, random_input, run_protocol, ArchSpec, TEMPLATES,
};
use maskinfer_core::{Error, SeededRng};

fn enclave_for(name: &str, seed: u64) -> Enclave<f64> {
    let spec = ArchSpec::template(name).unwrap();
    let m = prepare_model(&build_model::<f64>(&spec, &mut SeededRng::new(seed)).unwrap()).unwrap();
    Enclave::new(&m, EnclaveConfig::default(), seed).unwrap()
}

#[test]
fn every_artifact_round_trips_byte_for_byte() {
    for name in TEMPLATES {
        let spec = ArchSpec::template(name).unwrap();
        let model = build_model::<f64>(&spec, &mut SeededRng::new(1)).unwrap();
        let bytes = io::model_to_bytes(&model, Some(1));
        let back = io::model_from_bytes::<f64>(&bytes).unwrap();
        assert_eq!(back.seed, Some(1));
        assert!(back.notice.is_none());
        assert_eq!(
            io::model_to_bytes(&back.value, back.seed),
            bytes,
            "{name} model"
        );

        let mut enclave = enclave_for(name, 2);
        let x = random_input(enclave.model().input_shape(), &mut SeededRng::new(3));
        let run = run_protocol(&mut enclave, &x).unwrap();
        let bundle = enclave.bundle(Some(run.otp));
        let bytes = io::bundle_to_bytes(&bundle);
        let back = io::bundle_from_bytes::<f64>(&bytes).unwrap().value;
        assert_eq!(back, bundle, "{name} bundle");
        assert_eq!(io::bundle_to_bytes(&back), bytes);

        let bytes = io::input_to_bytes(&x);
        assert_eq!(io::input_from_bytes::<f64>(&bytes).unwrap().value, x);

        let bytes = io::secrets_to_bytes(&enclave);
        let rebuilt: Enclave<f64> = io::secrets_from_bytes(&bytes).unwrap();
        assert_eq!(io::secrets_to_bytes(&rebuilt), bytes, "{name} secrets");
    }
}

#[test]
fn weights_only_bundle_has_no_pads() {
    let enclave = enclave_for("mlp", 4);
    let bytes = io::bundle_to_bytes(&enclave.bundle(None));
    let (manifest, _) = io::read_manifest(&bytes).unwrap();
    assert_eq!(manifest.artifact, Artifact::Bundle);
    assert!(manifest.inference.is_none());
    assert!(io::bundle_from_bytes::<f64>(&bytes)
        .unwrap()
        .value
        .otp
        .is_none());
}

#[test]
fn rebuilt_enclave_reproduces_weights_and_skips_used_pads() {
    let mut enclave = enclave_for("transformer", 5);
    let x = random_input(enclave.model().input_shape(), &mut SeededRng::new(6));
    let first = run_protocol(&mut enclave, &x).unwrap();
    let mut rebuilt: Enclave<f64> =
        io::secrets_from_bytes(&io::secrets_to_bytes(&enclave)).unwrap();
    assert_eq!(rebuilt.weights(), enclave.weights());
    assert_eq!(rebuilt.inferences(), 1);

    let next = run_protocol(&mut enclave, &x).unwrap();
    let resumed = run_protocol(&mut rebuilt, &x).unwrap();
    assert_eq!(resumed.otp, next.otp);
    assert_ne!(resumed.otp, first.otp);
    assert!(rebuilt.resume_at(0).is_err());
}

#[test]
fn damaged_files_are_rejected() {
    let model = build_model::<f64>(&ArchSpec::mlp(), &mut SeededRng::new(7)).unwrap();
    let bytes = io::model_to_bytes(&model, None);

    let mut flipped = bytes.clone();
    let at = flipped.len() - 12;
    flipped[at] ^= 0x40;
    assert!(matches!(
        io::model_from_bytes::<f64>(&flipped),
        Err(Error::Checksum { .. })
    ));

    let cut = &bytes[..bytes.len() - 5];
    assert!(matches!(
        io::model_from_bytes::<f64>(cut),
        Err(Error::Truncated(_))
    ));

    let mut bumped = bytes.clone();
    assert_eq!(&bumped[..12], b"maskinfer 1\n");
    bumped[10] = b'9';
    assert!(matches!(
        io::model_from_bytes::<f64>(&bumped),
        Err(Error::Version {
            found: 9,
            expected: 1
        })
    ));

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(io::model_from_bytes::<f64>(&trailing).is_err());

    assert!(matches!(
        io::bundle_from_bytes::<f64>(&bytes),
        Err(Error::Format(_))
    ));
    assert!(matches!(
        io::model_from_bytes::<f64>(b"not a model\n"),
        Err(Error::Format(_))
    ));
}

#[test]
fn loading_at_another_precision_says_so() {
    let model = build_model::<f64>(&ArchSpec::mlp(), &mut SeededRng::new(8)).unwrap();
    let loaded = io::model_from_bytes::<f32>(&io::model_to_bytes(&model, None)).unwrap();
    assert!(loaded.notice.is_some());
    let x = random_input(model.input_shape(), &mut SeededRng::new(9));
    let exact = model.forward(&x).unwrap().to_rows();
    let single = loaded
        .value
        .forward(&x.cast::<f32>())
        .unwrap()
        .to_rows()
        .cast::<f64>();
    assert!(exact.max_abs_diff(&single) < 1e-3);
}

#[test]
fn files_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let enclave = enclave_for("cnn", 10);
    let path = dir.path().join("state.bin");
    io::save_secrets(&path, &enclave).unwrap();
    let rebuilt: Enclave<f64> = io::load_secrets(&path).unwrap();
    assert_eq!(rebuilt.weights(), enclave.weights());

    let missing = dir.path().join("absent.bin");
    match io::load_model::<f64>(&missing) {
        Err(Error::Io { path, .. }) => assert_eq!(path, missing),
        other => panic!("expected an io error, got {:?}", other.map(|_| ())),
    }
}
