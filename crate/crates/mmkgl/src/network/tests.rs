use super::*;
use crate::autodiff::Tape;
use crate::spectral::build_laplacian;
use ndarray::arr2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
}

fn ring_adjacency(n: usize) -> Array2<f64> {
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        let j = (i + 1) % n;
        a[[i, j]] = 1.0;
        a[[j, i]] = 1.0;
    }
    a
}

/// Random probability rows (softmax of random logits).
fn random_probs(r: &mut ChaCha8Rng, n: usize, t: usize) -> Array2<f64> {
    let mut p = Array2::zeros((n, t));
    for i in 0..n {
        let mut sum = 0.0;
        for j in 0..t {
            let e = (r.random_range(-2.0..2.0f64)).exp();
            p[[i, j]] = e;
            sum += e;
        }
        for j in 0..t {
            p[[i, j]] /= sum;
        }
    }
    p
}

#[test]
fn branch_output_has_normalized_rows_of_shape_n_by_t() {
    let mut r = rng(3);
    let tape = Tape::new();
    let n = 6;
    let bundle = build_laplacian(&tape, tape.leaf(ring_adjacency(n))).unwrap();
    let order = 3;
    let x = tape.leaf(random(&mut r, n, 4));
    let layer1: Vec<_> = (0..=order)
        .map(|_| tape.param(random(&mut r, 4, 5)))
        .collect();
    let layer2: Vec<_> = (0..=order)
        .map(|_| tape.param(random(&mut r, 5, 2)))
        .collect();
    let probs = branch_forward(&tape, &bundle, x, &layer1, &layer2).unwrap();
    assert_eq!(tape.shape(probs), (n, 2));
    let p = tape.value(probs);
    for i in 0..n {
        assert!((p.row(i).sum() - 1.0).abs() <= 1e-10);
        for j in 0..2 {
            assert!((0.0..=1.0).contains(&p[[i, j]]));
        }
    }
}

#[test]
fn all_zero_weights_give_uniform_predictions() {
    let tape = Tape::new();
    let n = 5;
    let bundle = build_laplacian(&tape, tape.leaf(ring_adjacency(n))).unwrap();
    let x = tape.leaf(Array2::from_elem((n, 3), 0.7));
    let zeros1: Vec<_> = (0..3).map(|_| tape.param(Array2::zeros((3, 4)))).collect();
    let zeros2: Vec<_> = (0..3).map(|_| tape.param(Array2::zeros((4, 2)))).collect();
    let probs = branch_forward(&tape, &bundle, x, &zeros1, &zeros2).unwrap();
    let p = tape.value(probs);
    for i in 0..n {
        assert_eq!(p[[i, 0]], 0.5);
        assert_eq!(p[[i, 1]], 0.5);
    }
}

#[test]
fn perfect_confident_predictions_give_near_zero_loss() {
    let tape = Tape::new();
    let labels = [0, 1, 0, 1];
    let train = [true; 4];
    let probs = tape.leaf(Array2::from_shape_fn((4, 2), |(i, j)| {
        if labels[i] == j {
            1.0
        } else {
            0.0
        }
    }));
    let loss = masked_cross_entropy(&tape, probs, &labels, &train).unwrap();
    let v = tape.scalar_value(loss);
    assert!(v >= 0.0 && v < 1e-9, "loss {v}");
}

#[test]
fn half_probabilities_give_n_ln2() {
    let tape = Tape::new();
    let n = 7;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let train = vec![true; n];
    let probs = tape.leaf(Array2::from_elem((n, 2), 0.5));
    let loss = branch_losses(&tape, &[probs], &labels, &train).unwrap();
    let expected = n as f64 * std::f64::consts::LN_2;
    assert!((tape.scalar_value(loss) - expected).abs() <= 1e-12);
}

#[test]
fn identical_branches_double_the_loss() {
    let mut r = rng(7);
    let tape = Tape::new();
    let n = 6;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let train = vec![true; n];
    let probs = tape.leaf(random_probs(&mut r, n, 2));
    let one = branch_losses(&tape, &[probs], &labels, &train).unwrap();
    let two = branch_losses(&tape, &[probs, probs], &labels, &train).unwrap();
    let ratio = tape.scalar_value(two) / tape.scalar_value(one);
    assert!((ratio - 2.0).abs() <= 1e-12);
}

#[test]
fn loss_is_restricted_to_training_subjects() {
    let tape = Tape::new();
    let labels = [0, 1, 0];
    let train = [true, false, false];
    // Subject 0 at p=0.5; others extremely wrong but not in training.
    let probs = tape.leaf(arr2(&[[0.5, 0.5], [1.0, 0.0], [0.0, 1.0]]));
    let loss = masked_cross_entropy(&tape, probs, &labels, &train).unwrap();
    assert!((tape.scalar_value(loss) - std::f64::consts::LN_2).abs() <= 1e-9);
}

#[test]
fn empty_training_set_is_a_contract_error() {
    let tape = Tape::new();
    let probs = tape.leaf(Array2::from_elem((2, 2), 0.5));
    assert!(matches!(
        masked_cross_entropy(&tape, probs, &[0, 1], &[false, false]),
        Err(Error::Contract(_))
    ));
}

#[test]
fn categorical_loss_for_three_classes() {
    let tape = Tape::new();
    let probs = tape.leaf(arr2(&[[0.2, 0.5, 0.3], [0.1, 0.1, 0.8]]));
    let loss = masked_cross_entropy(&tape, probs, &[1, 2], &[true, true]).unwrap();
    let expected = -(0.5f64.ln()) - (0.8f64.ln());
    assert!((tape.scalar_value(loss) - expected).abs() <= 1e-12);
}

#[test]
fn single_branch_tensor_is_the_branch_itself() {
    let mut r = rng(11);
    let tape = Tape::new();
    let probs = random_probs(&mut r, 4, 3);
    let flat = build_ckdt(&tape, &[tape.leaf(probs.clone())]).unwrap();
    assert_eq!(tape.value(flat), probs);
}

#[test]
fn tensor_entries_are_products_of_branch_probabilities() {
    let mut r = rng(13);
    let tape = Tape::new();
    let (n, t, k) = (3, 2, 3);
    let branches: Vec<Array2<f64>> = (0..k).map(|_| random_probs(&mut r, n, t)).collect();
    let vars: Vec<_> = branches.iter().map(|b| tape.leaf(b.clone())).collect();
    let flat = tape.value(build_ckdt(&tape, &vars).unwrap());
    assert_eq!(flat.dim(), (n, 8));
    let tensor = CrossKernelTensor::from_flat(flat, t, k).unwrap();
    for i in 0..n {
        for a in 0..t {
            for b in 0..t {
                for c in 0..t {
                    let want =
                        branches[0][[i, a]] * branches[1][[i, b]] * branches[2][[i, c]];
                    let got = tensor.entry(i, &[a, b, c]);
                    assert!((got - want).abs() <= 1e-15);
                }
            }
        }
    }
}

#[test]
fn one_hot_branches_give_a_single_one() {
    let tape = Tape::new();
    let b1 = tape.leaf(arr2(&[[1.0, 0.0]]));
    let b2 = tape.leaf(arr2(&[[0.0, 1.0]]));
    let flat = tape.value(build_ckdt(&tape, &[b1, b2]).unwrap());
    // Index [0, 1] with branch 1 slowest: flat position 0*2+1 = 1.
    assert_eq!(flat, arr2(&[[0.0, 1.0, 0.0, 0.0]]));
}

#[test]
fn tensor_sums_to_one_and_marginalizes_to_branches() {
    let mut r = rng(17);
    for t in [2, 3] {
        for k in [1, 2, 3] {
            let tape = Tape::new();
            let n = 5;
            let branches: Vec<Array2<f64>> =
                (0..k).map(|_| random_probs(&mut r, n, t)).collect();
            let vars: Vec<_> = branches.iter().map(|b| tape.leaf(b.clone())).collect();
            let flat = tape.value(build_ckdt(&tape, &vars).unwrap());
            let tensor = CrossKernelTensor::from_flat(flat, t, k).unwrap();
            for i in 0..n {
                let s: f64 = tensor.flat.row(i).sum();
                assert!((s - 1.0).abs() <= 1e-9, "t={t} k={k} sum {s}");
            }
            for (b, orig) in branches.iter().enumerate() {
                let marg = tensor.marginal(b);
                for (m, o) in marg.iter().zip(orig.iter()) {
                    assert!((m - o).abs() <= 1e-12, "marginal t={t} k={k}");
                }
            }
        }
    }
}

#[test]
fn class_count_mismatch_is_rejected() {
    let mut r = rng(19);
    let tape = Tape::new();
    let b1 = tape.leaf(random_probs(&mut r, 3, 2));
    let b2 = tape.leaf(random_probs(&mut r, 3, 3));
    assert!(build_ckdt(&tape, &[b1, b2]).is_err());
}

#[test]
fn zero_head_on_uniform_tensor_gives_uniform_predictions() {
    let tape = Tape::new();
    let fused = tape.leaf(Array2::from_elem((4, 8), 0.125));
    let head = FusionHeadVars {
        weight: tape.param(Array2::zeros((8, 2))),
        bias: tape.param(Array2::zeros((1, 2))),
    };
    let (probs, _) = fusion_forward(&tape, fused, &head).unwrap();
    let p = tape.value(probs);
    for i in 0..4 {
        assert_eq!(p[[i, 0]], 0.5);
        assert_eq!(p[[i, 1]], 0.5);
    }
}

#[test]
fn fusion_loss_at_half_is_n_ln2() {
    let tape = Tape::new();
    let n = 5;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let probs = tape.leaf(Array2::from_elem((n, 2), 0.5));
    let loss = masked_cross_entropy(&tape, probs, &labels, &vec![true; n]).unwrap();
    assert!((tape.scalar_value(loss) - n as f64 * std::f64::consts::LN_2).abs() <= 1e-12);
}

#[test]
fn gradient_reaches_first_branch_through_the_tensor() {
    let mut r = rng(23);
    let tape = Tape::new();
    let n = 6;
    let bundle = build_laplacian(&tape, tape.leaf(ring_adjacency(n))).unwrap();
    let x = tape.leaf(random(&mut r, n, 4));
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let train = vec![true; n];

    let mut branch_probs = Vec::new();
    let mut first_branch_w = None;
    for order in [2usize, 3] {
        let l1: Vec<_> = (0..=order)
            .map(|_| tape.param(random(&mut r, 4, 4)))
            .collect();
        let l2: Vec<_> = (0..=order)
            .map(|_| tape.param(random(&mut r, 4, 2)))
            .collect();
        if first_branch_w.is_none() {
            first_branch_w = Some(l1[0]);
        }
        branch_probs.push(branch_forward(&tape, &bundle, x, &l1, &l2).unwrap());
    }
    let fused = fusion_input(&tape, FusionMode::Ckdt, &branch_probs, None).unwrap();
    let head = FusionHeadVars {
        weight: tape.param(random(&mut r, 4, 2)),
        bias: tape.param(random(&mut r, 1, 2)),
    };
    let (probs, _) = fusion_forward(&tape, fused, &head).unwrap();
    let loss = masked_cross_entropy(&tape, probs, &labels, &train).unwrap();
    tape.backward(loss).unwrap();
    let g = tape.grad(first_branch_w.unwrap()).unwrap();
    assert!(
        g.iter().any(|&v| v.abs() > 1e-12),
        "fusion loss must reach branch weights through the tensor"
    );
}

#[test]
fn fusion_modes_have_expected_widths_and_normalization() {
    let mut r = rng(29);
    let (n, t, k) = (4, 2, 3);
    let branches: Vec<Array2<f64>> = (0..k).map(|_| random_probs(&mut r, n, t)).collect();
    for mode in [
        FusionMode::Ckdt,
        FusionMode::Concat,
        FusionMode::Add,
        FusionMode::Weight,
        FusionMode::Avg,
    ] {
        let tape = Tape::new();
        let vars: Vec<_> = branches.iter().map(|b| tape.leaf(b.clone())).collect();
        let mix = (mode == FusionMode::Weight).then(|| tape.param(random(&mut r, 1, k)));
        let fused = fusion_input(&tape, mode, &vars, mix).unwrap();
        assert_eq!(tape.shape(fused), (n, mode.input_width(t, k)));
        let v = tape.value(fused);
        match mode {
            // Probability-like modes keep rows summing to one.
            FusionMode::Ckdt | FusionMode::Avg | FusionMode::Weight => {
                for i in 0..n {
                    assert!((v.row(i).sum() - 1.0).abs() <= 1e-9, "{mode:?}");
                }
            }
            FusionMode::Add => {
                for i in 0..n {
                    assert!((v.row(i).sum() - k as f64).abs() <= 1e-9);
                }
            }
            FusionMode::Concat => {}
        }
    }
}

#[test]
fn total_loss_arithmetic() {
    let tape = Tape::new();
    let (a, b, c) = (tape.scalar(3.0), tape.scalar(5.0), tape.scalar(7.0));
    let plain = total_loss(&tape, a, b, c, 1.0, 1.0, 1.0).unwrap();
    assert_eq!(tape.scalar_value(plain), 15.0);
    let pure_fusion = total_loss(&tape, a, b, c, 0.0, 0.0, 1.0).unwrap();
    assert_eq!(tape.scalar_value(pure_fusion), 7.0);
    let doubled = total_loss(&tape, a, b, c, 2.0, 0.0, 0.0).unwrap();
    assert_eq!(tape.scalar_value(doubled), 6.0);
    assert!(total_loss(&tape, a, b, c, -1.0, 1.0, 1.0).is_err());
}

#[test]
fn fusion_mode_parsing_round_trips() {
    for name in ["ckdt", "concat", "add", "weight", "avg"] {
        assert_eq!(FusionMode::parse(name).unwrap().name(), name);
    }
    assert!(FusionMode::parse("nope").is_err());
}
