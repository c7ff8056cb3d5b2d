//! Property tests over randomly generated inputs.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stode_core::autodiff::{conv1d_dilated, propagate_nodes};
use stode_core::checkpoint;
use stode_core::data::{gather_batch, make_windows, Scaler, ScalerKind, SeriesMatrix};
use stode_core::graph::{cgp_field, normalize_adjacency, topk_mask, GraphLearnerParams};
use stode_core::metrics::{multi_step_metrics, single_step_metrics};
use stode_core::model::tiny_config;
use stode_core::temporal::receptive_field;
use stode_core::train::{clip_global_norm, global_grad_norm};
use stode_core::{Ablation, Mode, Model, Tape, Tensor};

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let len: usize = shape.iter().product();
    prop::collection::vec(-1.0f64..1.0, len).prop_map(move |v| Tensor::new(shape.clone(), v).unwrap())
}

fn square(n: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0.0f64..1.0, n * n).prop_map(move |v| Tensor::new(vec![n, n], v).unwrap())
}

fn series(max_rows: usize, max_cols: usize) -> impl Strategy<Value = SeriesMatrix> {
    (2..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-1e3f64..1e3, r * c).prop_map(move |v| SeriesMatrix::new(r, c, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn learned_graph_is_uni_directional(seed in any::<u64>(), n in 2usize..9, d in 1usize..6, beta in 0.1f64..6.0) {
        let p = GraphLearnerParams::random(n, d, beta, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let a = p.adjacency().unwrap();
        for i in 0..n {
            prop_assert_eq!(a.get(&[i, i]), 0.0);
            for j in 0..n {
                let v = a.get(&[i, j]);
                prop_assert!((0.0..1.0).contains(&v));
                prop_assert_eq!(v * a.get(&[j, i]), 0.0);
            }
        }
    }

    #[test]
    fn propagation_is_linear(
        (a, x, y) in (2usize..6).prop_flat_map(|n| (square(n), tensor(vec![2, n, 3, 4]), tensor(vec![2, n, 3, 4]))),
        alpha in -2.0f64..2.0,
        beta in -2.0f64..2.0,
    ) {
        let tape = Tape::new();
        let av = tape.constant(a);
        let (xv, yv) = (tape.constant(x), tape.constant(y));
        let combo = xv.scale(alpha).add_scaled(yv, beta).unwrap();
        let lhs = propagate_nodes(av, combo).unwrap().value();
        let rhs = propagate_nodes(av, xv).unwrap().scale(alpha)
            .add_scaled(propagate_nodes(av, yv).unwrap(), beta).unwrap().value();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
    }

    #[test]
    fn normalized_rows_are_stochastic_and_fix_constants(a in (2usize..7).prop_flat_map(square), c in -3.0f64..3.0) {
        let n = a.shape()[0];
        let tape = Tape::new();
        let a_hat = normalize_adjacency(tape.constant(a)).unwrap();
        let v = a_hat.value();
        for i in 0..n {
            let row: f64 = (0..n).map(|j| v.get(&[i, j])).sum();
            prop_assert!((row - 1.0).abs() <= 1e-12);
        }
        let field = cgp_field(tape.constant(Tensor::full(&[n, 2, 3], c)), a_hat).unwrap().value();
        prop_assert!(field.max_abs() <= 1e-12);
    }

    #[test]
    fn topk_keeps_exactly_k_per_row(a in (2usize..7).prop_flat_map(square), k_frac in 0.0f64..1.0) {
        let n = a.shape()[0];
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let mask = topk_mask(&a, k).unwrap();
        for i in 0..n {
            let kept: Vec<usize> = (0..n).filter(|&j| mask.get(&[i, j]) == 1.0).collect();
            prop_assert_eq!(kept.len(), k);
            let floor = kept.iter().map(|&j| a.get(&[i, j])).fold(f64::INFINITY, f64::min);
            for j in (0..n).filter(|j| !kept.contains(j)) {
                prop_assert!(a.get(&[i, j]) <= floor);
            }
        }
    }

    #[test]
    fn conv_output_length(width in 1usize..5, dilation in 1usize..5, extra in 0usize..6, c_in in 1usize..3, c_out in 1usize..3) {
        let q = (width - 1) * dilation + 1 + extra;
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, c_in, q], 0.5));
        let w = tape.constant(Tensor::full(&[c_out, c_in, width], 0.1));
        let out = conv1d_dilated(x, w, None, dilation).unwrap();
        prop_assert_eq!(out.shape(), vec![2, c_out, q - (width - 1) * dilation]);
        if (width - 1) * dilation > 0 {
            let short = tape.constant(Tensor::full(&[2, c_in, (width - 1) * dilation], 0.5));
            prop_assert!(conv1d_dilated(short, w, None, dilation).is_err());
        }
    }

    #[test]
    fn receptive_field_formula(r in 1usize..4, k in 2usize..8, l in 1usize..6) {
        let dilations: usize = (0..l).map(|i| r.pow(i as u32)).sum();
        prop_assert_eq!(receptive_field(r, k, l), 1 + (k - 1) * dilations);
    }

    #[test]
    fn scaler_round_trip(s in series(30, 4), zscore in any::<bool>()) {
        let kind = if zscore { ScalerKind::ZScore } else { ScalerKind::MaxAbs };
        let scaler = Scaler::fit(kind, &s, 0..s.rows()).unwrap();
        let back = scaler.inverse(&scaler.transform(&s).unwrap()).unwrap();
        for (a, b) in back.values().iter().zip(s.values()) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn window_count_matches_enumeration(start in 0usize..5, len in 0usize..21, t in 1usize..8, h in 1usize..5, multi in any::<bool>()) {
        let mode = if multi { Mode::MultiStep } else { Mode::SingleStep };
        let windows = make_windows(start..start + len, t, h, mode);
        let mut brute = 0;
        for first in start..start + len {
            let last = first + t + h;
            if last <= start + len {
                brute += 1;
            }
        }
        prop_assert_eq!(windows.len(), brute);
        for w in &windows {
            prop_assert_eq!(w.input.len(), t);
            prop_assert!(w.target.end <= start + len);
            prop_assert_eq!(w.target.len(), if multi { h } else { 1 });
            prop_assert_eq!(w.target.end, w.input.end + h);
        }
    }

    #[test]
    fn batches_reconstruct_the_series(s in series(20, 3), t in 1usize..5, h in 1usize..4) {
        let windows = make_windows(0..s.rows(), t, h, Mode::MultiStep);
        prop_assume!(!windows.is_empty());
        let refs: Vec<_> = windows.iter().collect();
        let (x, y) = gather_batch(&s, &refs, Mode::MultiStep).unwrap();
        for (b, w) in windows.iter().enumerate() {
            for i in 0..s.cols() {
                for (q, row) in w.input.clone().enumerate() {
                    prop_assert_eq!(x.get(&[b, i, 0, q]), s.get(row, i));
                }
                for (q, row) in w.target.clone().enumerate() {
                    prop_assert_eq!(y.get(&[b, i, 0, q]), s.get(row, i));
                }
            }
        }
    }

    #[test]
    fn metric_invariances(
        (pred, truth) in (2usize..12, 1usize..4).prop_flat_map(|(t, n)| (tensor(vec![t, n]), tensor(vec![t, n]))),
        c in 0.1f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        if let Ok(base) = single_step_metrics(&pred, &truth) {
            let scaled = single_step_metrics(&pred.map(|v| v * c), &truth.map(|v| v * c)).unwrap();
            prop_assert!((scaled.rse - base.rse).abs() <= 1e-9 * base.rse.max(1.0));
            let affine = single_step_metrics(&pred.map(|v| c * v + shift), &truth).unwrap();
            prop_assert!((affine.corr - base.corr).abs() <= 1e-9);
            prop_assert!((-1.0..=1.0).contains(&base.corr));
        }
        let m = multi_step_metrics(&pred, &truth, None).unwrap();
        prop_assert!(m.rmse + 1e-12 >= m.mae);
        prop_assert!(m.mae >= 0.0);
    }

    #[test]
    fn clipping_never_increases_the_norm(grads in prop::collection::vec(-100.0f64..100.0, 2..30), max_norm in 0.01f64..50.0) {
        let (ga, gb) = grads.split_at(grads.len() / 2);
        let mut a = Tensor::zeros(&[ga.len()]).with_grad();
        let mut b = Tensor::zeros(&[gb.len()]).with_grad();
        a.grad_mut().unwrap().copy_from_slice(ga);
        b.grad_mut().unwrap().copy_from_slice(gb);
        let mut params = [&mut a, &mut b];
        let before = global_grad_norm(&params);
        let reported = clip_global_norm(&mut params, max_norm);
        let after = global_grad_norm(&params);
        prop_assert_eq!(reported, before);
        prop_assert!(after <= before + 1e-12);
        prop_assert!(after <= max_norm * (1.0 + 1e-12));
        if before <= max_norm {
            prop_assert_eq!(after, before);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), variant in 0usize..6) {
        let mut cfg = tiny_config();
        cfg.ablation = Ablation::parse(["none", "no_cgp", "no_cta", "no_gsl", "no_attn", "fully_discrete"][variant]).unwrap();
        let model = Model::new(cfg, seed).unwrap();
        let back = checkpoint::from_json(&checkpoint::to_json(&model, None).unwrap()).unwrap().model;
        for (a, b) in model.params.tensors().iter().zip(back.params.tensors()) {
            let bits = |t: &Tensor| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
        let x = Tensor::from_fn(&[2, 3, 1, 4], |k| (k as f64 * 0.37).sin());
        let (p, q) = (model.predict(&x).unwrap(), back.predict(&x).unwrap());
        prop_assert_eq!(p.values(), q.values());
    }
}
