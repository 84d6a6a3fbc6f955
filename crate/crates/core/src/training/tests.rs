use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::Tensor;
use crate::fields::{Geometry, GridSpec, Layout, ScalarField};
use crate::layout::{battery_mask, generate_layout, rasterize_conductivity};
use crate::nets::{build_backbone, build_head, build_supervised_baseline, BackboneConfig, HeadConfig};
use crate::solver::{solve_lowfi, solve_reference, SolveOptions};

fn make_case(id: &str, n: usize, layout: Layout, with_truth: bool) -> Case {
    let pack = PackConfig::default();
    let grid = GridSpec::square(n, 0.084).unwrap();
    let lambda = rasterize_conductivity(&layout, &grid, &pack).unwrap();
    let mask = battery_mask(&layout, &grid).unwrap();
    let truth = with_truth.then(|| solve_reference(&lambda, &mask, &pack, &SolveOptions::default()).unwrap());
    Case { id: id.into(), layout, lambda, mask, truth }
}

fn random_case(id: &str, n: usize, seed: u64) -> Case {
    make_case(id, n, generate_layout(seed, 8, &Geometry::default()).unwrap(), true)
}

fn field_tensor<'t>(tape: &'t Tape<f64>, f: &ScalarField) -> Tensor<'t, f64> {
    let g = f.grid();
    tape.leaf([1, 1, g.rows(), g.cols()], f.values().to_vec(), true).unwrap()
}

#[test]
fn complete_intensity_examples() {
    let pack = PackConfig::default();
    let grid = GridSpec::square(3, 0.003).unwrap();
    let lb = pack.lambda_battery;
    let lambda = ScalarField::new(grid, vec![lb, 3.0, 3.0, lb, 3.0, 3.0, 3.0, 3.0, 3.0]).unwrap();
    let tape = Tape::<f64>::new();
    let t = field_tensor(&tape, &ScalarField::constant(grid, 25.0));
    let phi = complete_intensity(&t, &lambda, &pack).unwrap().to_vec();
    assert_eq!(phi[..4], [12348.35, 0.0, 0.0, 12348.35]);
    let t = field_tensor(&tape, &ScalarField::new(grid, vec![80.0, 26.0, 25.0, 31.0, 25.0, 25.0, 25.0, 25.0, 25.0]).unwrap());
    let phi = complete_intensity(&t, &lambda, &pack).unwrap();
    assert_eq!(phi.to_vec()[..4], [12348.35, -3000.0, 0.0, 12348.35]);
    assert!(!phi.requires_grad());
}

#[test]
fn jacobi_target_examples() {
    let pack = PackConfig::default();
    let tape = Tape::<f64>::new();
    let grid = GridSpec::square(5, 0.005).unwrap();
    let lambda = ScalarField::constant(grid, 3.0);
    let t = field_tensor(&tape, &ScalarField::constant(grid, 7.5));
    let zero = tape.constant(t.shape(), vec![0.0; 25]).unwrap();
    assert!(jacobi_target(&t, &lambda, &zero).unwrap().to_vec().iter().all(|&v| v == 30.0));

    let grid = GridSpec::from_step(5, 5, 0.00042).unwrap();
    let lambda = ScalarField::constant(grid, pack.lambda_battery);
    let t = field_tensor(&tape, &ScalarField::constant(grid, 25.0));
    let phi = complete_intensity(&t, &lambda, &pack).unwrap();
    for v in jacobi_target(&t, &lambda, &phi).unwrap().to_vec() {
        assert!((0.25 * v - 25.0 - 6.07e-4).abs() < 5e-7, "{v}");
    }
}

#[test]
fn lowfi_solution_is_fixed_point_and_zero_loss() {
    let pack = PackConfig::default();
    let case = random_case("a", 64, 3);
    let t = solve_lowfi(&case.lambda, &case.mask, &pack, &SolveOptions::default()).unwrap();
    let tape = Tape::<f64>::new();
    let th = field_tensor(&tape, &t);
    let phi = complete_intensity(&th, &case.lambda, &pack).unwrap();
    let target = jacobi_target(&th, &case.lambda, &phi).unwrap().to_vec();
    for (a, b) in target.iter().zip(t.values()) {
        assert!((0.25 * a - b).abs() <= 1e-8);
    }
    let unweighted = th.weighted_l1(&target.iter().map(|v| 0.25 * v).collect::<Vec<_>>(), &vec![1.0; 4096]).unwrap();
    assert!(unweighted.item() <= 1e-8);
    let weighted = physics_loss(th, &case.lambda, &pack, 0.0, 10.0).unwrap();
    assert!(weighted.item() <= 1e-8 * 10.0);
}

#[test]
fn pixel_weight_examples() {
    let tape = Tape::<f64>::new();
    let ramp = tape.constant([1, 1, 1, 11], (0..11).map(|i| i as f64 / 10.0).collect()).unwrap();
    let w = pixel_weights(&ramp, 0.0, 10.0).unwrap().to_vec();
    for (i, v) in w.iter().enumerate() {
        assert!((v - i as f64).abs() < 1e-12);
    }
    let flat = tape.constant([1, 1, 2, 2], vec![0.3; 4]).unwrap();
    assert_eq!(pixel_weights(&flat, 0.0, 10.0).unwrap().to_vec(), vec![5.0; 4]);
    let odd = tape.constant([1, 1, 1, 3], vec![0.7, 0.2, 0.9]).unwrap();
    assert_eq!(pixel_weights(&odd, 0.0, 10.0).unwrap().to_vec()[1], 0.0);
}

#[test]
fn physics_loss_examples_and_gradient_pattern() {
    let pack = PackConfig::default();
    let empty = make_case("e", 16, Layout::empty(Geometry::default()), false);
    let tape = Tape::<f64>::new();
    let t0 = field_tensor(&tape, &ScalarField::constant(*empty.grid(), 25.0));
    assert_eq!(physics_loss(t0, &empty.lambda, &pack, 0.0, 10.0).unwrap().item(), 0.0);

    // One cell in a corner region; the far corner is isolated coolant.
    let layout = Layout::new(Geometry::default(), vec![[20.0, 20.0]]).unwrap();
    let case = make_case("c", 32, layout, false);
    let tape = Tape::<f64>::new();
    let t = field_tensor(&tape, &ScalarField::constant(*case.grid(), 25.0));
    let loss = physics_loss(t, &case.lambda, &pack, 0.0, 10.0).unwrap();
    assert!(loss.item() > 0.0);
    tape.backward(loss).unwrap();
    let g = t.grad().unwrap();
    let n = 32;
    for (p, &b) in case.mask.flags().iter().enumerate() {
        let (i, j) = (p / n, p % n);
        if b {
            assert!(g[p] != 0.0, "battery pixel ({i},{j})");
        }
        if i > 24 && j > 24 {
            assert_eq!(g[p], 0.0, "coolant pixel ({i},{j})");
        }
    }

    // eta2 rescales the loss without changing the gradient sign pattern.
    let case = random_case("r", 32, 5);
    let field = ScalarField::from_fn(*case.grid(), |i, j| 25.0 + 0.01 * ((i * 7 + j * 3) % 5) as f64).unwrap();
    let run = |eta2: f64| {
        let tape = Tape::<f64>::new();
        let t = field_tensor(&tape, &field);
        let loss = physics_loss(t, &case.lambda, &pack, 0.0, eta2).unwrap();
        let v = loss.item();
        tape.backward(loss).unwrap();
        (v, t.grad().unwrap())
    };
    let (l1, g1) = run(10.0);
    let (l2, g2) = run(3.0);
    assert!(l1 >= 0.0 && (l1 * 0.3 - l2).abs() < 1e-12 * l1.max(1.0));
    for (a, b) in g1.iter().zip(&g2) {
        assert_eq!(a.signum() * (a.abs() > 0.0) as i32 as f64, b.signum() * (b.abs() > 0.0) as i32 as f64);
    }
}

#[test]
fn data_loss_examples() {
    let tape = Tape::<f64>::new();
    let truth: Vec<f64> = (0..16).map(|i| 25.0 + i as f64 * 0.1).collect();
    let same = tape.leaf([1, 1, 4, 4], truth.clone(), true).unwrap();
    assert_eq!(data_loss(same, &truth, 0.0, 10.0).unwrap().item(), 0.0);
    let off = tape.leaf([1, 1, 4, 4], truth.iter().map(|v| v + 0.1).collect(), true).unwrap();
    assert!((data_loss(off, &truth, 0.0, 10.0).unwrap().item() - 0.5).abs() < 1e-9);
    let pred: Vec<f64> = truth.iter().enumerate().map(|(i, v)| v + 0.01 * (i % 3) as f64).collect();
    let a = data_loss(tape.leaf([1, 1, 4, 4], pred.clone(), true).unwrap(), &truth, 0.0, 10.0).unwrap().item();
    let shifted: Vec<f64> = truth.iter().map(|v| v + 3.0).collect();
    let b = data_loss(tape.leaf([1, 1, 4, 4], pred.iter().map(|v| v + 3.0).collect(), true).unwrap(), &shifted, 0.0, 10.0)
        .unwrap()
        .item();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn backbone_physics_loss_gradient_matches_finite_differences() {
    let pack = PackConfig { t0: 0.0, ..PackConfig::default() };
    let case = random_case("g", 16, 8);
    let mut net = build_backbone::<f64>(&BackboneConfig { t0: 0.0, ..Default::default() }, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut scramble = |params: &mut crate::autodiff::ModelParams<f64>| {
        for i in 0..params.len() {
            let p = params.get_mut(i);
            if p.name.starts_with("out.") || p.name.ends_with(".bias") || p.name.ends_with(".shift") {
                p.value.iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
            }
        }
    };
    scramble(net.params_mut());

    let tape = Tape::<f64>::new();
    let bound = net.params().bind(&tape, true);
    let rise = net.rise(&bound, &case.lambda).unwrap();
    let (target, weights) = physics_target(&rise, &case.lambda, &pack, 0.0, 10.0).unwrap();
    let loss = physics_loss(rise, &case.lambda, &pack, 0.0, 10.0).unwrap();
    tape.backward(loss).unwrap();
    let grads: Vec<Vec<f64>> = bound.iter().map(|b| b.grad().unwrap()).collect();

    // Frozen target and weights: the gradient being checked is the one the
    // trainer uses.
    let eval = |net: &crate::nets::Backbone<f64>| {
        let tape = Tape::<f64>::new();
        let bound = net.params().bind(&tape, false);
        net.rise(&bound, &case.lambda).unwrap().weighted_l1(&target, &weights).unwrap().item()
    };
    let eps = 1e-5;
    let mut checked = 0;
    for pi in 0..net.params().len() {
        let len = net.params().get(pi).value.len();
        for k in [0, len / 2, len - 1] {
            let mut plus = net.clone();
            plus.params_mut().get_mut(pi).value[k] += eps;
            let mut minus = net.clone();
            minus.params_mut().get_mut(pi).value[k] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let analytic = grads[pi][k];
            let err = (numeric - analytic).abs();
            assert!(
                err <= 1e-3 * numeric.abs().max(analytic.abs()) || err <= 1e-8,
                "{} [{k}]: numeric {numeric} analytic {analytic}",
                net.params().get(pi).name
            );
            checked += 1;
        }
    }
    assert!(checked > 100);
}

fn small_config() -> BackboneConfig {
    BackboneConfig { widths: vec![8, 8, 16, 16, 16], ..Default::default() }
}

#[test]
fn pretrain_smoke_loss_decreases_and_lr_trace() {
    let pack = PackConfig::default();
    let cases = vec![random_case("one", 32, 1)];
    let mut net = build_backbone::<f32>(&small_config(), 3).unwrap();
    let cfg = TrainConfig { epochs_pretrain: 3, seed: 4, ..Default::default() };
    let log = pretrain(&mut net, &cases, &cfg, &pack).unwrap();
    let m = &log.epoch_mean_loss;
    assert!(m[1] < m[0] && m[2] < m[1], "{m:?}");
    let expected = [0.001, 8.5e-4, 7.225e-4];
    for (a, b) in log.lr_trace.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(log.steps.len(), 3);
}

#[test]
fn pretrain_on_empty_layouts_starts_at_zero_loss() {
    let pack = PackConfig::default();
    let cases = vec![make_case("z", 32, Layout::empty(Geometry::default()), false)];
    let mut net = build_backbone::<f32>(&small_config(), 3).unwrap();
    let cfg = TrainConfig { epochs_pretrain: 1, ..Default::default() };
    let log = pretrain(&mut net, &cases, &cfg, &pack).unwrap();
    assert_eq!(log.steps[0].loss, 0.0);
}

#[test]
fn pretrain_is_deterministic() {
    let pack = PackConfig::default();
    let cases = vec![random_case("a", 32, 1), random_case("b", 32, 2)];
    let cfg = TrainConfig { epochs_pretrain: 2, seed: 9, ..Default::default() };
    let run = || {
        let mut net = build_backbone::<f32>(&small_config(), 3).unwrap();
        let log = pretrain(&mut net, &cases, &cfg, &pack).unwrap();
        (log.steps, net.params().fingerprint())
    };
    assert_eq!(run(), run());
}

#[test]
fn posttrain_freezes_backbone_and_overfits_one_case() {
    let pack = PackConfig::default();
    let cases = vec![random_case("one", 32, 6)];
    let mut backbone = build_backbone::<f32>(&small_config(), 3).unwrap();
    pretrain(&mut backbone, &cases, &TrainConfig { epochs_pretrain: 2, ..Default::default() }, &pack).unwrap();
    let before = backbone.params().fingerprint();
    let mut head = build_head::<f32>(&HeadConfig::default(), 5).unwrap();

    // Head at init reproduces the backbone, so the first loss is the
    // backbone's data loss.
    let t_hat = backbone.predict(&cases[0].lambda).unwrap();
    let tape = Tape::<f64>::new();
    let truth = cases[0].truth.as_ref().unwrap();
    let rise: Vec<f64> = t_hat.values().iter().map(|t| (t - 25.0) as f32 as f64).collect();
    let truth_rise: Vec<f64> = truth.values().iter().map(|t| (t - 25.0) as f32 as f64).collect();
    let initial = data_loss(tape.leaf([1, 1, 32, 32], rise, true).unwrap(), &truth_rise, 0.0, 10.0).unwrap().item();

    let cfg = TrainConfig { epochs_posttrain: 80, lr_decay: 1.0, lr: 1e-2, ..Default::default() };
    let log = posttrain(&backbone, &mut head, &cases, &cfg).unwrap();
    assert!((log.steps[0].loss - initial).abs() <= 1e-5 * initial, "{} vs {initial}", log.steps[0].loss);
    let last = *log.epoch_mean_loss.last().unwrap();
    assert!(last < 0.1 * log.epoch_mean_loss[0], "{:?}", log.epoch_mean_loss);
    assert_eq!(backbone.params().fingerprint(), before);
}

#[test]
fn supervised_training_selects_best_validation_epoch() {
    let labeled = vec![random_case("l0", 32, 11), random_case("l1", 32, 12)];
    let val = vec![random_case("v0", 32, 13)];
    let mut net = build_supervised_baseline::<f32>(&small_config(), 8).unwrap();
    let cfg = TrainConfig { epochs_pretrain: 2, epochs_posttrain: 2, ..Default::default() };
    let log = train_supervised(&mut net, &labeled, &val, &cfg).unwrap();
    assert_eq!(log.lr_trace.len(), 4);
    assert_eq!(log.val_mae.len(), 4);
    let selected = log.val_mae[log.selected_epoch.unwrap()];
    assert!(selected <= *log.val_mae.last().unwrap());
    let kept = mean_mae(&net, &val).unwrap();
    assert!((kept - selected).abs() < 1e-9);
    assert!(log.epoch_mean_loss.last().unwrap() < &log.epoch_mean_loss[0]);

    let err = train_supervised(&mut net, &[], &val, &cfg).unwrap_err();
    assert_eq!(err.to_string(), "empty labeled split");
}

#[test]
fn config_validation() {
    assert!(TrainConfig { batch_size: 2, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { eta2: 0.0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig::default().validate().is_ok());
}
