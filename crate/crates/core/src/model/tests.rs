use super::*;
use crate::ctc::ctc_loss_logits;
use crate::nn::{LayerKind, MulCount};

const TINY: &str = r#"
name = "tiny"
input = [8, 12, 1]
layout = "C--D"
padding = "same"
charset_size = 3
dropout_rate = 0.0

[[blocks]]
filters = 3
kernel = [3, 3]
stride = [2, 1]
gated = true

[[blocks]]
filters = 4
kernel = [2, 2]
stride = [2, 2]
gated = true
pool = [2, 1]

[recurrent]
layers = 2
units = 3
dense_between = 4
variant = "reset_after"
"#;

fn image(cfg: &ModelConfig, f: impl Fn(usize, usize) -> f64) -> Tensor {
    let [h, w, _] = cfg.input;
    let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
    Tensor::from_vec(&cfg.input, data).unwrap()
}

#[test]
fn reference_geometry_totals() {
    let base = ModelConfig::flor_base();
    let all_c = base.with_layout("C--C--C--C--C--C".parse().unwrap()).unwrap();
    assert_eq!(cost(&all_c).unwrap().params_total, 822_770);
    for (_, layout, _) in TABLE5 {
        let m = Model::build(&base.with_layout(layout.parse().unwrap()).unwrap(), 1).unwrap();
        assert_eq!(m.enumerated_params(), m.cost_report().unwrap().params_total, "{layout}");
        assert_eq!(m.time_steps(), 128);
        assert_eq!(m.output_shape().unwrap(), vec![128, 98]);
    }
}

#[test]
fn layout_selects_block_kinds() {
    let base = ModelConfig::flor_base();
    let kinds = |layout: &str| -> Vec<LayerKind> {
        let m = Model::build(&base.with_layout(layout.parse().unwrap()).unwrap(), 0).unwrap();
        (1..=6).map(|b| m.layer(&format!("block{b}.conv")).unwrap().kind()).collect()
    };
    use LayerKind::{Conv as C, DwSepConv as D};
    assert_eq!(kinds("C--C--C--D--D--C"), vec![C, C, C, D, D, C]);
    assert_eq!(kinds("D--D--D--D--D--D"), vec![D; 6]);
}

#[test]
fn layout_leaves_other_sections_alone() {
    let base = ModelConfig::flor_base();
    let fixed = |layout: &str| -> Vec<(String, u64)> {
        let r = cost(&base.with_layout(layout.parse().unwrap()).unwrap()).unwrap();
        r.per_layer
            .into_iter()
            .filter(|l| !l.name.ends_with(".conv") && !l.name.ends_with(".prelu") && !l.name.ends_with(".bn"))
            .map(|l| (l.name, l.params))
            .collect()
    };
    let reference = fixed("C--C--C--C--C--C");
    for (_, layout, _) in TABLE5 {
        assert_eq!(fixed(layout), reference, "{layout}");
    }
}

#[test]
fn separable_blocks_cost_fewer_mults() {
    let base = ModelConfig::flor_base();
    let c = cost(&base.with_layout("C--C--C--C--C--C".parse().unwrap()).unwrap()).unwrap();
    let d = cost(&base.with_layout("D--D--D--D--D--D".parse().unwrap()).unwrap()).unwrap();
    for b in 1..=6 {
        let name = format!("block{b}.conv");
        assert!(d.layer(&name).unwrap().mults < c.layer(&name).unwrap().mults, "{name}");
        assert!(d.layer(&name).unwrap().params < c.layer(&name).unwrap().params, "{name}");
    }
}

#[test]
fn layout_length_must_match_blocks() {
    let base = ModelConfig::flor_base();
    assert!(base.with_layout("C--C--D".parse().unwrap()).is_err());
    let mut cfg = base.clone();
    cfg.layout = "C--C--C--C--C".parse().unwrap();
    assert!(Model::build(&cfg, 0).is_err());
}

#[test]
fn config_validation() {
    let ok = ModelConfig::from_toml(TINY).unwrap();
    let mut bad = ok.clone();
    bad.charset_size = 0;
    assert!(bad.validate().is_err());
    let mut bad = ok.clone();
    bad.dropout_rate = 1.0;
    assert!(bad.validate().is_err());
    let mut bad = ok.clone();
    bad.blocks[0].stride = [0, 1];
    assert!(bad.validate().is_err());
    assert!(ModelConfig::from_toml(&TINY.replace("padding", "paddin")).is_err());
    // geometry collapsing below one timestep
    let mut tall = ok.clone();
    tall.input = [8, 1, 1];
    tall.blocks[1].pool = Some([2, 4]);
    assert!(Model::build(&tall, 0).is_err());
}

#[test]
fn config_toml_round_trip() {
    for cfg in [ModelConfig::flor_base(), ModelConfig::micro(), ModelConfig::from_toml(TINY).unwrap()] {
        assert_eq!(ModelConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}

#[test]
fn builds_are_deterministic() {
    let cfg = ModelConfig::micro();
    let a = Model::build(&cfg, 42).unwrap();
    let b = Model::build(&cfg, 42).unwrap();
    let c = Model::build(&cfg, 43).unwrap();
    let bits = |m: &Model| -> Vec<u64> { m.params().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect() };
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn micro_forward_contract() {
    let cfg = ModelConfig::micro();
    let m = Model::build(&cfg, 7).unwrap();
    assert_eq!(m.time_steps(), 128);
    let white = m.forward(&image(&cfg, |_, _| 1.0)).unwrap();
    let ink = m.forward(&image(&cfg, |y, x| ((y / 8 + x / 8) % 2) as f64)).unwrap();
    for p in [&white, &ink] {
        assert_eq!((p.steps(), p.classes()), (128, 6));
        for t in 0..p.steps() {
            let s: f64 = p.row(t).iter().sum();
            assert!((s - 1.0).abs() < 1e-12 && p.row(t).iter().all(|v| v.is_finite()));
        }
    }
    assert_ne!(white.values(), ink.values());
    assert!(m.forward(&Tensor::zeros(&[128, 1024, 2])).is_err());
}

#[test]
fn tallied_forward_matches_cost() {
    let cfg = ModelConfig::from_toml(TINY).unwrap();
    let m = Model::build(&cfg, 3).unwrap();
    let mut tally = MulCount::default();
    m.forward_tallied(&image(&cfg, |y, x| ((y * 3 + x) % 5) as f64 / 4.0), &mut tally).unwrap();
    let report = m.cost_report().unwrap();
    let conv: u64 = report
        .per_layer
        .iter()
        .filter(|l| l.name.ends_with(".conv") || l.name.ends_with(".gated"))
        .map(|l| l.mults)
        .sum();
    assert_eq!(tally.0, conv);
}

#[test]
fn checkpoint_round_trip() {
    let cfg = ModelConfig::from_toml(TINY).unwrap();
    let mut m = Model::build(&cfg, 5).unwrap();
    for l in m.layers_mut() {
        if let LayerOp::BatchNorm(bn) = &mut l.op {
            bn.running_mean.data_mut()[0] = 0.25;
            bn.running_var.data_mut()[1] = 2.5;
        }
    }
    let bytes = m.to_checkpoint().to_bytes();
    let back = Model::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back, m);

    let mut ck = m.to_checkpoint();
    ck.layers[0].tensors[0].1 = Tensor::zeros(&[1, 1, 1, 1]);
    assert!(Model::from_checkpoint(&ck).is_err());
    let mut ck = m.to_checkpoint();
    ck.layers.pop();
    assert!(Model::from_checkpoint(&ck).is_err());
    assert!(Model::from_checkpoint(&Checkpoint::default()).is_err());
}

#[test]
fn backward_matches_finite_differences() {
    let cfg = ModelConfig::from_toml(TINY).unwrap();
    let mut m = Model::build(&cfg, 9).unwrap();
    // move PReLU and BN off their identity initialization
    for (i, l) in m.layers_mut().iter_mut().enumerate() {
        match &mut l.op {
            LayerOp::Prelu(p) => p.alpha.data_mut().iter_mut().for_each(|a| *a = 0.1 + 0.05 * i as f64),
            LayerOp::BatchNorm(b) => {
                b.gamma.data_mut().iter_mut().for_each(|g| *g = 1.3);
                b.beta.data_mut().iter_mut().for_each(|g| *g = -0.1);
            }
            _ => {}
        }
    }
    let x = image(&cfg, |y, x| ((y * 7 + x * 3) % 11) as f64 / 10.0);
    let label = [0, 2];
    let loss = |m: &Model| {
        let (logits, _) = m.forward_train(&x, &mut ForwardCtx::inference()).unwrap();
        ctc_loss_logits(&logits, &label).unwrap().value
    };
    let (logits, trace) = m.forward_train(&x, &mut ForwardCtx::inference()).unwrap();
    let l = ctc_loss_logits(&logits, &label).unwrap();
    assert!(l.feasible);
    let grads: Vec<Tensor> = m.backward(&trace, &l.grad).unwrap().into_iter().flatten().collect();
    assert_eq!(grads.len(), m.params().len());
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for (pi, g) in grads.iter().enumerate() {
        for k in [0, g.len() / 2, g.len() - 1] {
            let orig = m.params()[pi].data()[k];
            m.params_mut()[pi].data_mut()[k] = orig + eps;
            let up = loss(&m);
            m.params_mut()[pi].data_mut()[k] = orig - eps;
            let down = loss(&m);
            m.params_mut()[pi].data_mut()[k] = orig;
            let num = (up - down) / (2.0 * eps);
            let err = (num - g.data()[k]).abs() / num.abs().max(g.data()[k].abs()).max(1e-2);
            worst = worst.max(err);
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

const GOLDEN: [[f64; 6]; 5] = [
    [0.12640442493448112, 0.2145565011776672, 0.117886637548007, 0.15271812717544767, 0.22756482560165464, 0.1608694835627424],
    [0.11266768250038751, 0.22320286725506983, 0.10886651137673113, 0.15446243522543712, 0.23086881118893463, 0.1699316924534399],
    [0.10816574922226078, 0.22662368267478686, 0.10375960298704402, 0.16043633666017448, 0.22104835247884771, 0.17996627597688622],
    [0.11405612081255231, 0.20190302518020395, 0.11227055617849699, 0.16786377928168317, 0.22038223550019956, 0.18352428304686408],
    [0.10991222112676056, 0.17956185465418625, 0.1402061456086371, 0.17032163162661307, 0.2103966462155145, 0.1896015007682885],
];

// Recorded from the first verified build; guards against silent numeric drift.
#[test]
fn golden_micro_output() {
    let cfg = ModelConfig::micro();
    let m = Model::build(&cfg, 2024).unwrap();
    let x = image(&cfg, |y, x| if (x / 32 + y / 16) % 3 == 0 { 0.0 } else { 1.0 });
    let p = m.forward(&x).unwrap();
    for (t, row) in GOLDEN.iter().enumerate() {
        for (k, want) in row.iter().enumerate() {
            assert!((p.get(t, k) - want).abs() < 1e-12, "row {t} class {k}: {} vs {want}", p.get(t, k));
        }
    }
}

#[test]
fn table5_report_on_reference_geometry() {
    let r = table5_report(&ModelConfig::flor_base()).unwrap();
    assert_eq!(r.baseline_params, 822_770);
    assert_eq!(r.block_deltas, vec![-118, -3936, -8672, -14960, -18384, -28112]);
    assert_eq!(r.rows.len(), 6);
    assert!(r.is_additive() && r.is_ordered());
    let all_d = r.rows.iter().find(|row| row.layout == "D--D--D--D--D--D").unwrap();
    assert!(r.rows.iter().all(|row| row.params >= all_d.params));
    assert_eq!(r.present_work().delta, -33_344);
    assert_eq!(r.present_work().published_delta, -1_992);
    assert_eq!(r.delta_residual(), -31_352);
}
