use ndarray::{s, Array1, Array2, Array3, ArrayD, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use signflow::params::ParamSet;
use signflow::seqmodel::{
    self, classify, encoder_stack_forward, layer_norm_forward, lstm_forward, mhsa_forward, positional_encoding,
    project, seq_forward, SeqModelConfig,
};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

fn tiny_config() -> SeqModelConfig {
    SeqModelConfig {
        d_model: 16,
        num_layers: 2,
        num_heads: 4,
        ffn_dim: 24,
        lstm_hidden: 5,
        num_classes: 7,
        backbone_width: Some(12),
        ..SeqModelConfig::default()
    }
}

fn tiny_params(cfg: &SeqModelConfig, seed: u64) -> ParamSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    seqmodel::init_params(cfg, 12, &mut rng)
}

#[test]
fn projection_with_zero_weight_returns_bias() {
    let cfg = tiny_config();
    let mut params = tiny_params(&cfg, 1);
    params.get_mut("seq.proj.weight").unwrap().fill(0.0);
    let c = Array1::from_shape_fn(16, |i| i as f64 * 0.25 - 1.0);
    params.get_mut("seq.proj.bias").unwrap().assign(&c.clone().into_dyn());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Array3::from_shape_simple_fn((2, 3, 12), || rng.random_range(-5.0..5.0));
    let z = project(x.view(), &params).unwrap();
    for row in z.to_shape((6, 16)).unwrap().rows() {
        assert_eq!(row, c.view());
    }
}

#[test]
fn projection_default_shapes() {
    let cfg = SeqModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params: ParamSet<f32> = seqmodel::init_params(&cfg, 512, &mut rng);
    assert_eq!(params.get("seq.proj.weight").unwrap().shape(), &[512, 256]);
    let x = Array3::<f32>::zeros((2, 32, 512));
    assert_eq!(project(x.view(), &params).unwrap().dim(), (2, 32, 256));
}

#[test]
fn projection_rejects_wrong_width() {
    let cfg = tiny_config();
    let params = tiny_params(&cfg, 4);
    let x = Array3::<f64>::zeros((1, 2, 13));
    assert!(matches!(project(x.view(), &params), Err(signflow::error::Error::ShapeMismatch { .. })));
}

#[test]
fn projection_matches_per_row_dot_products() {
    let cfg = tiny_config();
    let params = tiny_params(&cfg, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Array3::from_shape_simple_fn((3, 4, 12), || rng.random_range(-2.0..2.0));
    let z = project(x.view(), &params).unwrap();
    let w = params.mat("seq.proj.weight").unwrap();
    let b = params.vec("seq.proj.bias").unwrap();
    for bi in 0..3 {
        for t in 0..4 {
            for j in 0..16 {
                let mut acc = b[j];
                for i in 0..12 {
                    acc += x[[bi, t, i]] * w[[i, j]];
                }
                assert!((z[[bi, t, j]] - acc).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn positional_encoding_matches_scalar_loop() {
    let pe: Array2<f64> = positional_encoding(32, 256).unwrap();
    for t in 0..32 {
        for i in 0..128 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / 256.0);
            assert!((pe[[t, 2 * i]] - angle.sin()).abs() < 1e-9);
            assert!((pe[[t, 2 * i + 1]] - angle.cos()).abs() < 1e-9);
        }
    }
}

#[test]
fn positional_encoding_sin_one_for_any_width() {
    for d in [2, 8, 64, 256] {
        let pe: Array2<f64> = positional_encoding(2, d).unwrap();
        assert!((pe[[1, 0]] - 0.841_471).abs() < 1e-6);
    }
}

fn attn_setup(seed: u64) -> (SeqModelConfig, ParamSet<f64>) {
    let cfg = tiny_config();
    (cfg.clone(), tiny_params(&cfg, seed))
}

#[test]
fn attention_rows_are_distributions() {
    let (_, params) = attn_setup(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_matrix(&mut rng, 2 * 9, 16) * 3.0;
    let (_, cache) = mhsa_forward(&params, "seq.encoder.0.attn", x.view(), 2, 9, 4).unwrap();
    for row in cache.weights.lanes(Axis(3)) {
        assert!((row.sum() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}

#[test]
fn attention_single_step_is_output_projection_of_values() {
    let (_, params) = attn_setup(9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random_matrix(&mut rng, 3, 16);
    let (out, cache) = mhsa_forward(&params, "seq.encoder.0.attn", x.view(), 3, 1, 4).unwrap();
    assert!(cache.weights.iter().all(|&w| (w - 1.0).abs() < 1e-12));
    let lin = |p: &str, m: &Array2<f64>| {
        let w = params.mat(&format!("seq.encoder.0.attn.{p}.weight")).unwrap();
        let b = params.vec(&format!("seq.encoder.0.attn.{p}.bias")).unwrap();
        m.dot(&w) + b
    };
    let expected = lin("out", &lin("v", &x));
    assert!((&out - &expected).iter().all(|d| d.abs() < 1e-12));
}

#[test]
fn zero_queries_average_the_values() {
    let (_, mut params) = attn_setup(11);
    params.get_mut("seq.encoder.0.attn.q.weight").unwrap().fill(0.0);
    params.get_mut("seq.encoder.0.attn.q.bias").unwrap().fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (batch, t) = (2, 5);
    let x = random_matrix(&mut rng, batch * t, 16);
    let (out, _) = mhsa_forward(&params, "seq.encoder.0.attn", x.view(), batch, t, 4).unwrap();
    let wv = params.mat("seq.encoder.0.attn.v.weight").unwrap();
    let bv = params.vec("seq.encoder.0.attn.v.bias").unwrap();
    let wo = params.mat("seq.encoder.0.attn.out.weight").unwrap();
    let bo = params.vec("seq.encoder.0.attn.out.bias").unwrap();
    let v = x.dot(&wv) + bv;
    for b in 0..batch {
        let mean = v.slice(s![b * t..(b + 1) * t, ..]).mean_axis(Axis(0)).unwrap();
        let expected = mean.dot(&wo) + bo;
        for r in b * t..(b + 1) * t {
            assert!((&out.row(r) - &expected).iter().all(|d| d.abs() < 1e-9));
        }
    }
}

#[test]
fn attention_rejects_indivisible_heads() {
    let (_, params) = attn_setup(13);
    let x = Array2::<f64>::zeros((2, 16));
    assert!(mhsa_forward(&params, "seq.encoder.0.attn", x.view(), 1, 2, 3).is_err());
}

#[test]
fn layer_norm_rows_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random_matrix(&mut rng, 10, 32) * 7.0 + 3.0;
    let ones = Array1::<f64>::ones(32);
    let zeros = Array1::<f64>::zeros(32);
    let (y, _) = layer_norm_forward(x.view(), ones.view(), zeros.view());
    for row in y.rows() {
        let mean = row.mean().unwrap();
        let var = row.mapv(|v| (v - mean).powi(2)).mean().unwrap();
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-5);
    }
}

fn permute_rows(x: &Array2<f64>, batch: usize, t: usize, perm: &[usize]) -> Array2<f64> {
    let mut out = x.clone();
    for b in 0..batch {
        for (dst, &src) in perm.iter().enumerate() {
            out.row_mut(b * t + dst).assign(&x.row(b * t + src));
        }
    }
    out
}

#[test]
fn encoder_stack_is_permutation_equivariant() {
    let (cfg, params) = attn_setup(15);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let (batch, t) = (2, 6);
    let z = random_matrix(&mut rng, batch * t, 16);
    let perm = [3, 0, 5, 1, 4, 2];
    let (y, _) = encoder_stack_forward(&params, &cfg, z.view(), batch, t, None).unwrap();
    let zp = permute_rows(&z, batch, t, &perm);
    let (yp, _) = encoder_stack_forward(&params, &cfg, zp.view(), batch, t, None).unwrap();
    let expected = permute_rows(&y, batch, t, &perm);
    assert!((&yp - &expected).iter().all(|d| d.abs() < 1e-5));
}

#[test]
fn positional_encoding_breaks_equivariance() {
    let (mut cfg, params) = attn_setup(17);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let (batch, t) = (1, 6);
    let f = random_matrix(&mut rng, batch * t, 12);
    let perm = [3, 0, 5, 1, 4, 2];
    let run = |cfg: &SeqModelConfig, x: &Array2<f64>| {
        seq_forward(&params, cfg, x.view(), batch, t, None, false)
            .unwrap()
            .trace
            .encoded
    };
    let fp = permute_rows(&f, batch, t, &perm);
    cfg.positional_encoding = false;
    let gap_off = (&run(&cfg, &fp) - &permute_rows(&run(&cfg, &f), batch, t, &perm))
        .iter()
        .fold(0.0f64, |a, d| a.max(d.abs()));
    cfg.positional_encoding = true;
    let gap_on = (&run(&cfg, &fp) - &permute_rows(&run(&cfg, &f), batch, t, &perm))
        .iter()
        .fold(0.0f64, |a, d| a.max(d.abs()));
    assert!(gap_off < 1e-5);
    assert!(gap_on > 1e-3, "gap with encoding {gap_on}");
}

fn lstm_params(input: usize, hidden: usize, seed: u64, dirs: &[&str]) -> ParamSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    for dir in dirs {
        p.insert_trainable(format!("l.{dir}.w_ih"), random_matrix(&mut rng, input, 4 * hidden));
        p.insert_trainable(format!("l.{dir}.w_hh"), random_matrix(&mut rng, hidden, 4 * hidden));
        p.insert_trainable(
            format!("l.{dir}.bias"),
            Array1::from_shape_simple_fn(4 * hidden, || rng.random_range(-1.0..1.0)),
        );
    }
    p
}

#[test]
fn lstm_zero_everything_gives_zero() {
    let mut p = lstm_params(3, 4, 19, &["fwd", "bwd"]);
    for (_, param) in p.iter_mut() {
        param.value.fill(0.0);
    }
    let x = Array2::<f64>::zeros((2 * 5, 3));
    let (h, _) = lstm_forward(&p, "l", x.view(), 2, 5, true).unwrap();
    assert_eq!(h.dim(), (10, 8));
    assert!(h.iter().all(|&v| v == 0.0));
}

fn reverse_time(x: &Array2<f64>, batch: usize, t: usize) -> Array2<f64> {
    let perm: Vec<usize> = (0..t).rev().collect();
    permute_rows(x, batch, t, &perm)
}

#[test]
fn lstm_backward_direction_is_time_reversed_forward() {
    let mut p = lstm_params(3, 4, 20, &["fwd"]);
    for name in ["w_ih", "w_hh", "bias"] {
        let v = p.get(&format!("l.fwd.{name}")).unwrap().clone();
        p.insert_trainable(format!("l.bwd.{name}"), v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (batch, t) = (2, 7);
    let x = random_matrix(&mut rng, batch * t, 3);
    let (both, _) = lstm_forward(&p, "l", x.view(), batch, t, true).unwrap();
    let xr = reverse_time(&x, batch, t);
    let (fwd_rev, _) = lstm_forward(&p, "l", xr.view(), batch, t, false).unwrap();
    let expected = reverse_time(&fwd_rev, batch, t);
    let bwd = both.slice(s![.., 4..]);
    assert!((&bwd - &expected).iter().all(|d| d.abs() < 1e-6));
}

fn scalar_lstm(x: &[Vec<f64>], w_ih: &Array2<f64>, w_hh: &Array2<f64>, bias: &Array1<f64>) -> Vec<Vec<f64>> {
    let hdim = w_hh.nrows();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut h = vec![0.0; hdim];
    let mut c = vec![0.0; hdim];
    let mut out = Vec::new();
    for xt in x {
        let pre = |gate: usize, j: usize, h: &[f64]| {
            let col = gate * hdim + j;
            let mut a = bias[col];
            for (i, xi) in xt.iter().enumerate() {
                a += xi * w_ih[[i, col]];
            }
            for (k, hk) in h.iter().enumerate() {
                a += hk * w_hh[[k, col]];
            }
            a
        };
        let mut h_new = vec![0.0; hdim];
        for j in 0..hdim {
            let i = sig(pre(0, j, &h));
            let f = sig(pre(1, j, &h));
            let g = pre(2, j, &h).tanh();
            let o = sig(pre(3, j, &h));
            c[j] = f * c[j] + i * g;
            h_new[j] = o * c[j].tanh();
        }
        h = h_new;
        out.push(h.clone());
    }
    out
}

#[test]
fn lstm_matches_scalar_gate_oracle() {
    let p = lstm_params(3, 2, 22, &["fwd"]);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x = random_matrix(&mut rng, 2, 3);
    let (h, _) = lstm_forward(&p, "l", x.view(), 1, 2, false).unwrap();
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let w_ih = p.mat("l.fwd.w_ih").unwrap().to_owned();
    let w_hh = p.mat("l.fwd.w_hh").unwrap().to_owned();
    let bias = p.vec("l.fwd.bias").unwrap().to_owned();
    let expected = scalar_lstm(&rows, &w_ih, &w_hh, &bias);
    for t in 0..2 {
        for j in 0..2 {
            assert!((h[[t, j]] - expected[t][j]).abs() < 1e-6);
        }
    }
}

fn head_params(width: usize, classes: usize, seed: u64) -> ParamSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    p.insert_trainable("h.weight", random_matrix(&mut rng, width, classes));
    p.insert_trainable("h.bias", Array1::from_shape_simple_fn(classes, || rng.random_range(-1.0..1.0)));
    p
}

#[test]
fn classifier_probabilities_are_distributions() {
    let p = head_params(6, 85, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let l = random_matrix(&mut rng, 3 * 4, 6) * 4.0;
    let out = classify(&p, "h", l.view(), 3, 4).unwrap();
    assert_eq!(out.probs.dim(), (3, 85));
    for row in out.probs.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn zero_head_gives_uniform_probabilities() {
    let mut p = head_params(6, 5, 26);
    for (_, param) in p.iter_mut() {
        param.value.fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let l = random_matrix(&mut rng, 2 * 3, 6);
    let out = classify(&p, "h", l.view(), 2, 3).unwrap();
    assert!(out.probs.iter().all(|&v| (v - 0.2).abs() < 1e-12));
}

#[test]
fn classifier_logits_are_affine_in_input() {
    let p = head_params(6, 4, 28);
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let (l1, l2) = (random_matrix(&mut rng, 10, 6), random_matrix(&mut rng, 10, 6));
    let (alpha, beta) = (0.7, -1.9);
    let mixed = &l1 * alpha + &l2 * beta;
    let logits = |l: &Array2<f64>| classify(&p, "h", l.view(), 2, 5).unwrap().logits;
    let bias = p.vec("h.bias").unwrap();
    let expected = logits(&l1) * alpha + logits(&l2) * beta - &(&bias * (alpha + beta - 1.0));
    assert!((&logits(&mixed) - &expected).iter().all(|d| d.abs() < 1e-9));
}

#[test]
fn unidirectional_keeps_classifier_width() {
    let cfg = SeqModelConfig {
        bidirectional: false,
        ..SeqModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let params: ParamSet<f32> = seqmodel::init_params(&cfg, 512, &mut rng);
    assert_eq!(params.get("seq.lstm.fwd.w_hh").unwrap().shape(), &[256, 1024]);
    assert!(!params.contains("seq.lstm.bwd.w_ih"));
    assert_eq!(params.get("seq.head.weight").unwrap().shape(), &[256, 85]);
}

#[test]
fn zero_layers_feed_projection_to_lstm() {
    let mut cfg = tiny_config();
    cfg.num_layers = 0;
    let params = tiny_params(&cfg, 31);
    assert!(params.names().all(|n| !n.starts_with("seq.encoder")));
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let f = random_matrix(&mut rng, 2 * 3, 12);
    let out = seq_forward(&params, &cfg, f.view(), 2, 3, None, false).unwrap();
    assert_eq!(out.trace.encoded, out.trace.projected);
    assert_eq!(out.logits.dim(), (2, 7));
}

#[test]
fn config_rejects_indivisible_heads() {
    let cfg = SeqModelConfig {
        d_model: 250,
        ..SeqModelConfig::default()
    };
    assert!(cfg.validate().is_err());
    assert!(SeqModelConfig::default().validate().is_ok());
    assert_eq!(SeqModelConfig::default().d_k(), 32);
}

#[test]
fn dropout_only_applies_with_seed() {
    let mut cfg = tiny_config();
    cfg.dropout = 0.3;
    let params = tiny_params(&cfg, 33);
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let f = random_matrix(&mut rng, 2 * 3, 12);
    let plain = seq_forward(&params, &cfg, f.view(), 2, 3, None, false).unwrap().logits;
    cfg.dropout = 0.0;
    let reference = seq_forward(&params, &cfg, f.view(), 2, 3, Some(5), false).unwrap().logits;
    assert_eq!(plain, reference);
    cfg.dropout = 0.3;
    let dropped = seq_forward(&params, &cfg, f.view(), 2, 3, Some(5), false).unwrap().logits;
    assert_ne!(plain, dropped);
}

proptest! {
    #[test]
    fn argmax_ignores_constant_logit_shift(
        values in prop::collection::vec(-50.0f64..50.0, 12),
        shift in -1e3f64..1e3,
    ) {
        let logits = Array2::from_shape_vec((3, 4), values).unwrap();
        let shifted = &logits + shift;
        prop_assert_eq!(seqmodel::argmax_rows(logits.view()), seqmodel::argmax_rows(shifted.view()));
    }

    #[test]
    fn softmax_rows_sum_to_one(values in prop::collection::vec(-80.0f64..80.0, 1..40)) {
        let n = values.len();
        let mut m = Array2::from_shape_vec((1, n), values).unwrap();
        seqmodel::softmax_rows(&mut m);
        prop_assert!((m.sum() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn eval_pass_is_bitwise_repeatable() {
    let cfg = tiny_config();
    let params = tiny_params(&cfg, 35);
    let f = ArrayD::from_shape_fn(vec![8, 12], |i| ((i[0] * 12 + i[1]) as f64).sin())
        .into_dimensionality()
        .unwrap();
    let a = seq_forward(&params, &cfg, f.view(), 2, 4, None, false).unwrap().logits;
    let b = seq_forward(&params, &cfg, f.view(), 2, 4, None, false).unwrap().logits;
    assert_eq!(a, b);
}
