use super::*;
use crate::data::{synthesize_dataset, GeneratorParams};

fn tiny_data(n: usize, seed: u64) -> Dataset {
    let p = GeneratorParams {
        num_records: n,
        grid: 5,
        ..GeneratorParams::default()
    };
    synthesize_dataset(&p, seed).unwrap()
}

fn quick(variant: Variant, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        lr: 0.05,
        batch_size: 4,
        variant,
        timing: false,
        ..TrainConfig::default()
    }
}

#[test]
fn sgd_examples() {
    let mut p = Params::from_parts(
        [("w".to_string(), Tensor::scalar(1.0)), ("s".to_string(), Tensor::scalar(5.0))].into(),
        &["s".to_string()],
    );
    let grads: BTreeMap<_, _> = [("w".to_string(), Tensor::scalar(2.0))].into();
    let before = p.clone();
    sgd_step(&mut p, &grads, 0.0).unwrap();
    assert_eq!(p, before);
    sgd_step(&mut p, &grads, 0.5).unwrap();
    assert_eq!(p.get("w").unwrap().item().unwrap(), 0.0);
    assert_eq!(p.get("s").unwrap().item().unwrap(), 5.0);

    // f(p) = p², p = 3, lr = 0.1
    let mut p = Params::from_parts([("p".to_string(), Tensor::scalar(3.0))].into(), &[]);
    let g = Graph::new();
    let v = g.leaf(p.get("p").unwrap().clone());
    g.backward(v.mul(v).unwrap()).unwrap();
    let grads: BTreeMap<_, _> = [("p".to_string(), g.grad(v).unwrap())].into();
    sgd_step(&mut p, &grads, 0.1).unwrap();
    let v: f64 = p.get("p").unwrap().item().unwrap();
    assert!((v - 2.4).abs() < 1e-15);
}

#[test]
fn sgd_names_missing_gradient() {
    let mut p = Params::from_parts([("a.weight".to_string(), Tensor::scalar(1.0))].into(), &[]);
    let e = sgd_step(&mut p, &BTreeMap::new(), 0.1).unwrap_err();
    assert!(matches!(&e, Error::MissingGradient(n) if n == "a.weight"));
    assert!(e.to_string().contains("a.weight"));
}

#[test]
fn config_invariants() {
    let bad = [
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { lr: 0.0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
    ];
    for c in bad {
        assert!(train(&ModelConfig::tiny(), &c, &tiny_data(2, 0), None).is_err());
    }
}

#[test]
fn deterministic_metrics_and_params() {
    let data = tiny_data(6, 1);
    let (tr, te) = crate::data::split(&data, 0.34, 0).unwrap();
    let cfg = quick(Variant::Multimodal, 2);
    let a = train(&ModelConfig::tiny(), &cfg, &tr, Some(&te)).unwrap();
    let b = train(&ModelConfig::tiny(), &cfg, &tr, Some(&te)).unwrap();
    assert_eq!(a.metrics.to_csv(), b.metrics.to_csv());
    assert_eq!(a.checkpoint, b.checkpoint);
    assert_eq!(a.metrics.rows.len(), 6);
}

#[test]
fn final_test_row_matches_evaluate() {
    let data = tiny_data(6, 2);
    let (tr, te) = crate::data::split(&data, 0.34, 0).unwrap();
    let out = train(&ModelConfig::tiny(), &quick(Variant::Multimodal, 2), &tr, Some(&te)).unwrap();
    let mse = evaluate(&out.checkpoint, &te, 16).unwrap();
    assert_eq!(Some(mse), out.metrics.last(Split::Test));
}

#[test]
fn raw_only_variants_never_render() {
    let data = tiny_data(4, 3);
    for v in [Variant::MlpOnly, Variant::MlpAttn] {
        let out = train(&ModelConfig::tiny(), &quick(v, 1), &data, Some(&data)).unwrap();
        assert_eq!(out.charts_rendered, 0);
    }
    let out = train(&ModelConfig::tiny(), &quick(Variant::Multimodal, 1), &data, None).unwrap();
    // initial eval + one epoch
    assert_eq!(out.charts_rendered, 8);
}

#[test]
fn raw_only_training_leaves_vision_untouched() {
    let data = tiny_data(4, 4);
    let out = train(&ModelConfig::tiny(), &quick(Variant::MlpOnly, 2), &data, None).unwrap();
    let init = crate::model::init_params::<f64>(&ModelConfig::tiny(), 0).unwrap();
    assert_eq!(out.checkpoint.params.get("vision.conv.0.weight").unwrap(), init.get("vision.conv.0.weight").unwrap());
    assert_eq!(out.checkpoint.params.get("raw.attn.wq.weight").unwrap(), init.get("raw.attn.wq.weight").unwrap());
    assert_ne!(out.checkpoint.params.get("head.weight").unwrap(), init.get("head.weight").unwrap());
}

#[test]
fn evaluate_ignores_batch_size_order_and_duplication() {
    let data = tiny_data(5, 5);
    let model = Model::<f64>::new(ModelConfig::tiny(), 9).unwrap();
    let e1 = evaluate_model(&model, Variant::Multimodal, &data, 1).unwrap();
    let e16 = evaluate_model(&model, Variant::Multimodal, &data, 16).unwrap();
    assert!((e1 - e16).abs() < 1e-10);

    let mut recs = data.records().to_vec();
    recs.reverse();
    let rev = Dataset::new(recs.clone(), data.split, data.provenance.clone()).unwrap();
    assert!((evaluate_model(&model, Variant::Multimodal, &rev, 3).unwrap() - e1).abs() < 1e-10);

    let dup: Vec<_> = recs
        .iter()
        .cloned()
        .chain(recs.iter().cloned().map(|mut r| {
            r.id.push_str("_b");
            r
        }))
        .collect();
    let dup = Dataset::new(dup, data.split, data.provenance.clone()).unwrap();
    assert!((evaluate_model(&model, Variant::Multimodal, &dup, 4).unwrap() - e1).abs() < 1e-10);
}

#[test]
fn evaluate_is_zero_when_head_outputs_targets() {
    // Zero head weights and a bias equal to a shared target profile.
    let mut data = tiny_data(3, 6).into_records();
    let q = data[0].q.clone();
    for r in &mut data {
        r.q = q.clone();
    }
    let data = Dataset::new(data, crate::data::SplitTag::Full, crate::data::Provenance::InMemory).unwrap();
    let mut model = Model::<f64>::new(ModelConfig::tiny(), 0).unwrap();
    model.params.set("head.weight", Tensor::zeros(vec![8, 5])).unwrap();
    model.params.set("head.bias", Tensor::from_vec(vec![5], q).unwrap()).unwrap();
    for v in Variant::ALL {
        assert_eq!(evaluate_model(&model, v, &data, 2).unwrap(), 0.0);
    }
}

#[test]
fn evaluate_rejects_grid_mismatch() {
    let data = synthesize_dataset(&GeneratorParams { num_records: 2, grid: 7, ..GeneratorParams::default() }, 0).unwrap();
    let model = Model::<f64>::new(ModelConfig::tiny(), 0).unwrap();
    assert!(matches!(
        evaluate_model(&model, Variant::MlpOnly, &data, 2),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn diverging_run_reports_epoch_and_batch() {
    let data = tiny_data(4, 7);
    let cfg = TrainConfig { lr: 1e200, ..quick(Variant::MlpOnly, 3) };
    match train(&ModelConfig::tiny(), &cfg, &data, None) {
        Err(Error::NonFiniteLoss { epoch, batch, .. }) => {
            assert!(epoch >= 1);
            assert!(batch < 1);
        }
        other => panic!("expected non-finite loss, got {other:?}"),
    }
}

#[test]
fn f32_training_runs_and_checkpoints_at_f32() {
    let data = tiny_data(4, 8);
    let cfg = TrainConfig { dtype: DType::F32, ..quick(Variant::Multimodal, 2) };
    let out = train(&ModelConfig::tiny(), &cfg, &data, Some(&data)).unwrap();
    let back = checkpoint::parse_checkpoint(&checkpoint::checkpoint_bytes(&out.checkpoint).unwrap()).unwrap();
    assert_eq!(back, out.checkpoint);
    assert_eq!(evaluate(&back, &data, 4).unwrap(), out.metrics.last(Split::Test).unwrap());
}

mod ckpt {
    use super::*;
    use checkpoint::{checkpoint_bytes, parse_checkpoint};

    fn sample() -> Checkpoint {
        let data = tiny_data(4, 10);
        train(&ModelConfig::tiny(), &quick(Variant::Multimodal, 1), &data, None)
            .unwrap()
            .checkpoint
    }

    #[test]
    fn roundtrip_is_byte_and_value_exact() {
        let ck = sample();
        let bytes = checkpoint_bytes(&ck).unwrap();
        let back = parse_checkpoint(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(checkpoint_bytes(&back).unwrap(), bytes);
        let data = tiny_data(3, 11);
        assert_eq!(evaluate(&back, &data, 2).unwrap().to_bits(), evaluate(&ck, &data, 2).unwrap().to_bits());
    }

    #[test]
    fn layout_starts_with_magic_and_header_length() {
        let bytes = checkpoint_bytes(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"QDF1");
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + len]).unwrap();
        assert_eq!(header["version"], 1);
        let first = &header["tensors"][0];
        for key in ["name", "dtype", "shape", "offset", "length"] {
            assert!(first.get(key).is_some(), "{key}");
        }
        assert!(header["crc32"].is_u64());
        assert!(header["rng"]["word_pos"].is_string());
    }

    #[test]
    fn flipped_payload_byte_is_caught() {
        let mut bytes = checkpoint_bytes(&sample()).unwrap();
        let last = bytes.len() - 3;
        bytes[last] ^= 0x10;
        let e = parse_checkpoint(&bytes).unwrap_err();
        assert!(matches!(e, Error::Format { .. }), "{e}");
        assert!(e.to_string().contains("checksum"));
    }

    #[test]
    fn bad_magic_and_truncation_report_offsets() {
        let bytes = checkpoint_bytes(&sample()).unwrap();
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(parse_checkpoint(&wrong), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(parse_checkpoint(&bytes[..6]), Err(Error::Format { offset: 4, .. })));
        let cut = bytes.len() - 10;
        match parse_checkpoint(&bytes[..cut]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, cut),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let bytes = checkpoint_bytes(&sample()).unwrap();
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + len]).unwrap();
        header["version"] = 7.into();
        let json = serde_json::to_vec(&header).unwrap();
        let mut out = b"QDF1".to_vec();
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&bytes[8 + len..]);
        assert!(matches!(parse_checkpoint(&out), Err(Error::Version { found: 7, expected: 1 })));
    }

    #[test]
    fn rng_state_restores_position() {
        use rand::RngCore;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        rng.set_stream(1);
        rng.next_u64();
        let state = RngState::capture(5, &rng);
        let mut back = state.restore().unwrap();
        assert_eq!(back.next_u64(), rng.next_u64());
    }
}
