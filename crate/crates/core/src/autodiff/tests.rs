use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

type T64 = Tape<f64>;

fn random(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Central differences against the tape gradient for every element of
/// every input, relative tolerance 1e-4 (absolute floor 1e-7).
fn check_grad<F>(inputs: &[(Shape, Vec<f64>)], f: F)
where
    F: for<'t> Fn(&'t T64, &[Tensor<'t, f64>]) -> Tensor<'t, f64>,
{
    let eval = |vals: &[Vec<f64>]| {
        let tape = T64::with_nan_guard(true);
        let xs: Vec<_> = inputs.iter().zip(vals).map(|((s, _), v)| tape.leaf(*s, v.clone(), true).unwrap()).collect();
        f(&tape, &xs).item()
    };
    let tape = T64::with_nan_guard(true);
    let xs: Vec<_> = inputs.iter().map(|(s, v)| tape.leaf(*s, v.clone(), true).unwrap()).collect();
    let loss = f(&tape, &xs);
    tape.backward(loss).unwrap();
    tape.check_finite().unwrap();
    let base: Vec<Vec<f64>> = inputs.iter().map(|(_, v)| v.clone()).collect();
    let eps = 1e-6;
    for (k, x) in xs.iter().enumerate() {
        let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
        for i in 0..x.numel() {
            let mut plus = base.clone();
            plus[k][i] += eps;
            let mut minus = base.clone();
            minus[k][i] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let err = (numeric - analytic[i]).abs();
            let scale = numeric.abs().max(analytic[i].abs());
            assert!(
                err <= 1e-4 * scale || err <= 1e-7,
                "input {k} element {i}: numeric {numeric} analytic {}",
                analytic[i]
            );
        }
    }
}

/// Scalar probe: a fixed random projection so every output element matters.
fn probe<'t>(t: Tensor<'t, f64>, seed: u64) -> Tensor<'t, f64> {
    let w = random(t.numel(), seed);
    let target = vec![-3.0; t.numel()];
    t.weighted_l1(&target, &w.iter().map(|v| v + 1.5).collect::<Vec<_>>()).unwrap()
}

#[test]
fn conv3x3_gradients() {
    let x = ([2, 2, 5, 4], random(80, 1));
    let w = ([3, 2, 3, 3], random(54, 2));
    let b = ([1, 1, 1, 3], random(3, 3));
    check_grad(&[x, w, b], |_, xs| probe(xs[0].conv2d(&xs[1], Some(&xs[2])).unwrap(), 9));
}

#[test]
fn conv1x1_gradients() {
    let x = ([1, 3, 4, 4], random(48, 4));
    let w = ([2, 3, 1, 1], random(6, 5));
    check_grad(&[x, w], |_, xs| probe(xs[0].conv2d(&xs[1], None).unwrap(), 10));
}

#[test]
fn group_norm_gradients() {
    let x = ([2, 4, 3, 3], random(72, 6));
    let g = ([1, 4, 1, 1], random(4, 7));
    let b = ([1, 4, 1, 1], random(4, 8));
    check_grad(&[x, g, b], |_, xs| probe(xs[0].group_norm(2, &xs[1], &xs[2], 1e-5).unwrap(), 11));
}

#[test]
fn pointwise_gradients() {
    let x = ([1, 2, 3, 3], random(18, 12));
    let y = ([1, 1, 3, 3], random(9, 13));
    check_grad(&[x.clone()], |_, xs| probe(xs[0].gelu(), 14));
    check_grad(&[x.clone()], |_, xs| probe(xs[0].relu(), 15));
    check_grad(&[x.clone()], |_, xs| probe(xs[0].affine(-2.5, 0.3), 16));
    check_grad(&[x.clone(), x.clone()], |_, xs| probe(xs[0].add(&xs[1].gelu()).unwrap(), 17));
    check_grad(&[x, y], |_, xs| probe(xs[0].concat_channels(&xs[1]).unwrap(), 18));
}

#[test]
fn resample_gradients() {
    let x = ([1, 2, 4, 6], random(48, 19));
    check_grad(&[x.clone()], |_, xs| probe(xs[0].avg_pool2().unwrap(), 20));
    check_grad(&[x.clone()], |_, xs| probe(xs[0].bilinear_up2(), 21));
    check_grad(&[x.clone()], |_, xs| probe(xs[0].reflect_pad(2, 3, 1, 4), 22));
    check_grad(&[x], |_, xs| probe(xs[0].crop(1, 2, 2, 3).unwrap(), 23));
}

#[test]
fn composite_gradients() {
    let x = ([1, 1, 4, 4], random(16, 24));
    let w1 = ([4, 1, 3, 3], random(36, 25));
    let g = ([1, 4, 1, 1], random(4, 26));
    let b = ([1, 4, 1, 1], random(4, 27));
    let w2 = ([1, 8, 3, 3], random(72, 28));
    check_grad(&[x, w1, g, b, w2], |_, xs| {
        let h = xs[0].conv2d(&xs[1], None).unwrap().group_norm(2, &xs[2], &xs[3], 1e-5).unwrap().gelu();
        let down = h.avg_pool2().unwrap().bilinear_up2();
        let cat = down.concat_channels(&h).unwrap();
        probe(cat.conv2d(&xs[4], None).unwrap().sum(), 29)
    });
}

#[test]
fn weighted_l1_value_and_gradient() {
    let tape = T64::new();
    let p = tape.leaf([1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0], true).unwrap();
    let loss = p.weighted_l1(&[0.0, 2.0, 5.0, 4.5], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    // (1*1 + 0 + 3*2 + 4*0.5) / 4
    assert!((loss.item() - 2.25).abs() < 1e-15);
    tape.backward(loss).unwrap();
    assert_eq!(p.grad().unwrap(), vec![0.25, 0.0, -0.75, -1.0]);
}

#[test]
fn bilinear_up2_matches_half_pixel_rule() {
    let tape = T64::new();
    let x = tape.constant([1, 1, 1, 2], vec![0.0, 4.0]).unwrap();
    let up = x.bilinear_up2();
    assert_eq!(up.shape(), [1, 1, 2, 4]);
    assert_eq!(up.to_vec(), vec![0.0, 1.0, 3.0, 4.0, 0.0, 1.0, 3.0, 4.0]);
}

#[test]
fn reflect_pad_mirrors_without_repeating_edges() {
    let tape = T64::new();
    let x = tape.constant([1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let p = x.reflect_pad(0, 0, 2, 2);
    assert_eq!(p.to_vec(), vec![3.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0]);
}

#[test]
fn conv_identity_kernel_is_identity() {
    let tape = T64::new();
    let vals = random(20, 30);
    let x = tape.constant([1, 1, 4, 5], vals.clone()).unwrap();
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    let w = tape.constant([1, 1, 3, 3], k).unwrap();
    assert_eq!(x.conv2d(&w, None).unwrap().to_vec(), vals);
}

#[test]
fn backward_accumulates_and_zero_grad_clears() {
    let tape = T64::new();
    let x = tape.leaf([1, 1, 1, 2], vec![1.0, -1.0], true).unwrap();
    let s = x.affine(3.0, 0.0).sum();
    tape.backward(s).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(x.grad().unwrap(), vec![6.0, 6.0]);
    tape.zero_grad();
    assert!(x.grad().is_none());
}

#[test]
fn backward_rejects_non_scalar() {
    let tape = T64::new();
    let x = tape.leaf([1, 1, 1, 2], vec![1.0, 2.0], true).unwrap();
    assert!(matches!(tape.backward(x), Err(Error::Shape(_))));
}

#[test]
fn detach_blocks_gradient() {
    let tape = T64::new();
    let x = tape.leaf([1, 1, 1, 2], vec![1.0, 2.0], true).unwrap();
    let y = x.detach().affine(2.0, 0.0).add(&x).unwrap().sum();
    tape.backward(y).unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0, 1.0]);
}

#[test]
fn nan_guard_names_first_bad_node() {
    let tape = T64::with_nan_guard(true);
    let x = tape.leaf([1, 1, 1, 2], vec![1.0, 2.0], true).unwrap();
    let bad = x.affine(f64::INFINITY, 0.0);
    let _ = bad.affine(0.0, 1.0);
    let err = tape.check_finite().unwrap_err().to_string();
    assert!(err.contains(&format!("node {}", bad.id())), "{err}");
}

#[test]
fn shape_errors() {
    let tape = T64::new();
    let a = tape.constant([1, 1, 2, 2], vec![0.0; 4]).unwrap();
    let b = tape.constant([1, 1, 2, 3], vec![0.0; 6]).unwrap();
    assert!(a.add(&b).is_err());
    assert!(b.avg_pool2().is_err());
    assert!(a.crop(1, 1, 2, 2).is_err());
    assert!(tape.leaf([1, 1, 2, 2], vec![0.0; 3], false).is_err());
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut params = ModelParams::<f64>::new();
    params.push(Parameter::new("w", vec![2], vec![1.0, -1.0]).unwrap());
    let tape = T64::new();
    let bound = params.bind(&tape, true);
    let loss = bound[0].affine(1.0, 0.0).weighted_l1(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
    tape.backward(loss).unwrap();
    adam_step(&mut params, &bound, &AdamConfig::default(), 0.1).unwrap();
    let v = &params.get(0).value;
    assert!((v[0] - 0.9).abs() < 1e-6 && (v[1] + 0.9).abs() < 1e-6, "{v:?}");
    assert!((decay_lr(decay_lr(1e-3, 0.85), 0.85) - 7.225e-4).abs() < 1e-15);
}

#[test]
fn ptmw_round_trip_and_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.ptmw");
    let mut params = ModelParams::<f32>::new();
    params.push(Parameter::new("enc.0.weight", vec![2, 1, 3, 3], random(18, 31).iter().map(|&v| v as f32).collect()).unwrap());
    params.push(Parameter::new("enc.0.bias", vec![2], vec![0.5, -0.25]).unwrap());
    write_params(&path, &params).unwrap();
    let back: ModelParams<f32> = read_params(&path).unwrap();
    assert_eq!(back.fingerprint(), params.fingerprint());
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], PTMW_MAGIC);
    assert_eq!(bytes.len(), 12 + (4 + 12 + 4 + 16 + 72) + (4 + 10 + 4 + 4 + 8));

    let mut changed = params.clone();
    changed.get_mut(1).value[0] = 0.75;
    assert_ne!(changed.fingerprint(), params.fingerprint());

    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(read_params::<f32>(&path), Err(Error::Truncated(_))));
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    std::fs::write(&path, &wrong).unwrap();
    assert!(matches!(read_params::<f32>(&path), Err(Error::BadMagic { .. })));
}

#[test]
fn adam_unit_gradient_first_step_and_zero_gradient() {
    let mut params = ModelParams::<f64>::new();
    params.push(Parameter::new("a", vec![1], vec![0.3]).unwrap());
    params.push(Parameter::new("b", vec![1], vec![0.7]).unwrap());
    let tape = T64::new();
    let bound = params.bind(&tape, true);
    // d/da of a is 1; b does not enter the loss.
    tape.backward(bound[0].sum()).unwrap();
    adam_step(&mut params, &bound, &AdamConfig::default(), 1e-3).unwrap();
    assert!((params.get(0).value[0] - (0.3 - 1e-3)).abs() <= 1e-9);
    assert_eq!(params.get(1).value[0], 0.7);
}

#[test]
fn constant_fields_are_preserved() {
    let tape = T64::new();
    let c = 1.75;
    let x = tape.constant([1, 2, 4, 6], vec![c; 48]).unwrap();
    let w = tape.constant([1, 2, 3, 3], vec![0.5; 18]).unwrap();
    let y = x.conv2d(&w, None).unwrap();
    assert!(y.to_vec().iter().all(|&v| (v - 18.0 * 0.5 * c).abs() < 1e-12));
    for t in [x.avg_pool2().unwrap(), x.bilinear_up2(), x.reflect_pad(1, 2, 3, 1)] {
        assert!(t.to_vec().iter().all(|&v| (v - c).abs() < 1e-12));
    }
    let scale = tape.constant([1, 2, 1, 1], vec![1.0, 1.0]).unwrap();
    let shift = tape.constant([1, 2, 1, 1], vec![0.25, -0.5]).unwrap();
    let n = x.group_norm(2, &scale, &shift, 1e-5).unwrap().to_vec();
    assert!(n[..24].iter().all(|&v| v == 0.25) && n[24..].iter().all(|&v| v == -0.5));
}

#[test]
fn group_norm_normalizes_each_group() {
    let tape = T64::new();
    let x = tape.constant([2, 4, 5, 5], random(200, 40).iter().map(|v| 3.0 * v + 1.0).collect()).unwrap();
    let one = tape.constant([1, 4, 1, 1], vec![1.0; 4]).unwrap();
    let zero = tape.constant([1, 4, 1, 1], vec![0.0; 4]).unwrap();
    let y = x.group_norm(2, &one, &zero, 1e-5).unwrap().to_vec();
    for g in y.chunks(50) {
        let mean = g.iter().sum::<f64>() / 50.0;
        let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
        assert!(mean.abs() <= 1e-6 && (var - 1.0).abs() <= 1e-5, "{mean} {var}");
    }
}

#[test]
fn activation_and_pool_examples() {
    let tape = T64::new();
    let x = tape.constant([1, 1, 1, 3], vec![0.0, -1.0, 10.0]).unwrap();
    let g = x.gelu().to_vec();
    assert_eq!(g[0], 0.0);
    assert!((g[2] - 10.0).abs() <= 1e-6);
    assert_eq!(x.relu().to_vec()[1], 0.0);
    let p = tape.constant([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(p.avg_pool2().unwrap().item(), 2.5);
    let same = tape.leaf([1, 1, 1, 3], vec![1.0, 2.0, 3.0], false).unwrap();
    assert_eq!(same.weighted_l1(&[1.0, 2.0, 3.0], &[4.0; 3]).unwrap().item(), 0.0);
    assert_eq!(same.weighted_l1(&[0.0, 1.0, 2.0], &[2.0; 3]).unwrap().item(), 2.0);
}

#[test]
fn up_after_pool_stays_within_input_range() {
    for seed in 0..20 {
        let tape = T64::new();
        let v = random(64, 100 + seed);
        let (lo, hi) = v.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        let x = tape.constant([1, 1, 8, 8], v).unwrap();
        let y = x.avg_pool2().unwrap().bilinear_up2().to_vec();
        assert!(y.iter().all(|&u| u >= lo - 1e-12 && u <= hi + 1e-12));
    }
}
