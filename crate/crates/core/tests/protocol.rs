//! Boundary crossings, tags, audits and counter conformance.

mod common;

use maskinfer_core::enclave::{Enclave, EnclaveConfig};
use maskinfer_core::harness::{
    build_model, count_report, prepare_model, random_input, run_protocol, size_report,
    verify_equivalence, verify_model, ArchSpec, VerifyOptions, TEMPLATES,
};
use maskinfer_core::refnet::{Act, Block, LayerKind, PlainModel, Shape};
use maskinfer_core::runtime::{exec_residual, ExtraOps, MaskTag, MaskedAct, ObfModel};
use maskinfer_core::{Error, SeededRng};

use common::{dense, mha};

fn mlp(seed: u64) -> PlainModel<f64> {
    build_model(&ArchSpec::mlp(), &mut SeededRng::new(seed)).unwrap()
}

#[test]
fn output_before_input_is_out_of_order() {
    let m = mlp(1);
    let mut enclave = Enclave::new(&m, EnclaveConfig::default(), 2).unwrap();
    let (mut session, _) = enclave.prepare_inference().unwrap();
    let fake = MaskedAct {
        act: Act::zeros(m.output_shape()),
        tag: MaskTag {
            row_perm: false,
            col: 0,
        },
    };
    let err = session.unmask_output(&fake).unwrap_err();
    assert!(matches!(err, Error::CrossingOrder { .. }), "{err}");
    assert_eq!(session.crossings(), 0);
}

#[test]
fn wrong_input_shape_does_not_spend_a_crossing() {
    let m = mlp(1);
    let mut enclave = Enclave::new(&m, EnclaveConfig::default(), 2).unwrap();
    let (mut session, _) = enclave.prepare_inference().unwrap();
    let bad = Act::<f64>::zeros(Shape::Mat { rows: 3, cols: 16 });
    assert!(matches!(session.mask_input(&bad), Err(Error::Shape { .. })));
    assert_eq!(session.crossings(), 0);
}

#[test]
fn identity_masks_reproduce_plaintext() {
    for name in TEMPLATES {
        let opts = VerifyOptions {
            trials: 3,
            tol: 1e-12,
            config: EnclaveConfig::identity(),
            ..VerifyOptions::default()
        };
        let r = verify_equivalence::<f64>(&ArchSpec::template(name).unwrap(), &opts).unwrap();
        assert!(
            r.passed && r.max_deviation <= 1e-12,
            "{name}: {}",
            r.max_deviation
        );
    }
}

#[test]
fn fresh_pads_each_inference() {
    let m = mlp(3);
    let mut enclave = Enclave::new(&m, EnclaveConfig::default(), 4).unwrap();
    let x = random_input(m.input_shape(), &mut SeededRng::new(5));
    let a = run_protocol(&mut enclave, &x).unwrap();
    let b = run_protocol(&mut enclave, &x).unwrap();
    assert_eq!(a.labels, b.labels);
    assert_eq!((a.session.inference(), b.session.inference()), (0, 1));
    assert_ne!(a.trace[0].act, b.trace[0].act);
    assert_ne!(a.otp, b.otp);
    assert_eq!(enclave.inferences(), 2);
}

#[test]
fn labels_match_plaintext_argmax() {
    let m = mlp(6);
    let mut enclave = Enclave::new(&m, EnclaveConfig::default(), 7).unwrap();
    let x = random_input(m.input_shape(), &mut SeededRng::new(8));
    let run = run_protocol(&mut enclave, &x).unwrap();
    assert_eq!(run.labels, m.forward(&x).unwrap().to_rows().argmax_rows());
}

#[test]
fn residual_with_mismatched_tags_is_refused() {
    let x = Act::<f64>::zeros(Shape::Mat { rows: 2, cols: 2 });
    let a = MaskedAct {
        act: x.clone(),
        tag: MaskTag {
            row_perm: true,
            col: 1,
        },
    };
    let b = MaskedAct {
        act: x,
        tag: MaskTag {
            row_perm: true,
            col: 2,
        },
    };
    assert!(matches!(exec_residual(&a, &b), Err(Error::MaskTag(_))));
}

#[test]
fn materials_from_another_model_are_refused() {
    let mut a = Enclave::new(&mlp(1), EnclaveConfig::default(), 1).unwrap();
    let t: PlainModel<f64> = build_model(&ArchSpec::transformer(), &mut SeededRng::new(1)).unwrap();
    let mut b = Enclave::new(&t, EnclaveConfig::default(), 1).unwrap();
    let (_, otp_b) = b.prepare_inference().unwrap();
    let _ = a.prepare_inference().unwrap();
    assert!(ObfModel::assemble(a.weights(), &otp_b).is_err());
}

#[test]
fn audit_is_clean_for_templates() {
    for name in TEMPLATES {
        let m = prepare_model(
            &build_model::<f64>(&ArchSpec::template(name).unwrap(), &mut SeededRng::new(2))
                .unwrap(),
        )
        .unwrap();
        let mut enclave = Enclave::new(&m, EnclaveConfig::default(), 3).unwrap();
        let (session, otp) = enclave.prepare_inference().unwrap();
        let report = enclave.audit(&session, enclave.weights(), &otp);
        assert!(report.is_clean(), "{name}: {:?}", report.violations);
        assert!(!report.fields.is_empty());
    }
}

fn causal_model(rng: &mut SeededRng) -> PlainModel<f64> {
    let mut attn = mha(4, 2, rng);
    if let Block::Mha(m) = &mut attn {
        m.causal = true;
    }
    PlainModel::new(
        Shape::Mat { rows: 5, cols: 3 },
        vec![dense(3, 4, rng), attn, dense(4, 2, rng)],
    )
    .unwrap()
}

#[test]
fn causal_attention_needs_the_insecure_option() {
    let m = causal_model(&mut SeededRng::new(4));
    assert!(matches!(
        Enclave::new(&m, EnclaveConfig::default(), 1),
        Err(Error::Unsupported(_))
    ));
    let config = EnclaveConfig {
        insecure_causal: true,
        ..EnclaveConfig::default()
    };
    let opts = VerifyOptions {
        trials: 5,
        config,
        ..VerifyOptions::default()
    };
    let r = verify_model(&m, &opts).unwrap();
    assert!(r.passed, "max deviation {}", r.max_deviation);

    let mut enclave = Enclave::new(&m, config, 1).unwrap();
    let (session, otp) = enclave.prepare_inference().unwrap();
    let report = enclave.audit(&session, enclave.weights(), &otp);
    assert!(!report.is_clean());
}

#[test]
fn residual_from_model_input_is_unsupported() {
    let mut rng = SeededRng::new(5);
    let m = PlainModel::new(
        Shape::Mat { rows: 2, cols: 3 },
        vec![dense(3, 3, &mut rng), Block::Residual { from: 0 }],
    )
    .unwrap();
    assert!(matches!(
        Enclave::new(&m, EnclaveConfig::default(), 1),
        Err(Error::Unsupported(_))
    ));
}

#[test]
fn tampered_counter_names_the_layer() {
    let m = mlp(9);
    let mut enclave = Enclave::new(&m, EnclaveConfig::default(), 9).unwrap();
    let x = random_input(m.input_shape(), &mut SeededRng::new(9));
    let mut run = run_protocol(&mut enclave, &x).unwrap();
    assert!(count_report(&run.counters).is_ok());
    run.counters.layers[1].ops = ExtraOps::new(3, 2);
    match count_report(&run.counters) {
        Err(Error::Conformance(msg)) => assert!(msg.contains("layer 1"), "{msg}"),
        other => panic!("expected a conformance failure, got {other:?}"),
    }
}

#[test]
fn mixed_nonlinear_totals() {
    // Three ReLUs and one GELU: 3·(4, 2) + (4, 1).
    let mut rng = SeededRng::new(10);
    let blocks = vec![
        dense(4, 4, &mut rng),
        Block::Relu,
        dense(4, 4, &mut rng),
        Block::Relu,
        dense(4, 4, &mut rng),
        Block::Relu,
        dense(4, 4, &mut rng),
        Block::Gelu,
        dense(4, 2, &mut rng),
    ];
    let m = PlainModel::new(Shape::Mat { rows: 3, cols: 4 }, blocks).unwrap();
    let mut enclave = Enclave::new(&m, EnclaveConfig::default(), 1).unwrap();
    let run = run_protocol(&mut enclave, &random_input(m.input_shape(), &mut rng)).unwrap();
    assert_eq!(run.counters.total(), ExtraOps::new(16, 7));
    assert_eq!(run.counters.tee_crossings, 2);
}

#[test]
fn purely_linear_model_carries_only_biases_and_padding() {
    let mut rng = SeededRng::new(11);
    let m = PlainModel::new(
        Shape::Mat { rows: 3, cols: 4 },
        vec![dense(4, 5, &mut rng), dense(5, 2, &mut rng)],
    )
    .unwrap();
    let mut enclave = Enclave::new(&m, EnclaveConfig::default(), 1).unwrap();
    let run = run_protocol(&mut enclave, &random_input(m.input_shape(), &mut rng)).unwrap();
    assert_eq!(run.counters.total().krons, 0);
    let sizes = size_report(&m, &enclave.bundle(Some(run.otp)));
    // Expanded biases 3x5 and 3x2 plus the first layer's 3x5 padding correction.
    assert_eq!(sizes.material_bytes, (15 + 6 + 15) * 8);
    assert_eq!(sizes.nonlinear_bytes, 0);
    assert_eq!(
        sizes.by_kind.keys().copied().collect::<Vec<_>>(),
        vec![LayerKind::Dense]
    );
}
