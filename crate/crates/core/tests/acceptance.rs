//! End-to-end acceptance checks. Each test prints one result line to standard
//! error (unaffected by output capture) before asserting.
//!
//! The MNIST and CIFAR-10 checks read `$JUNCNET_DATA` (default: the
//! workspace `data/` directory, populated by `scripts/fetch-data.sh`).

use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use juncnet::classifier::{
    build_juncnet, evaluate, load_cifar10, load_image_dir, load_mnist, preprocess_frame, synthetic, train,
    JuncNetConfig,
};
use juncnet::imaging::GrayImage;
use juncnet::navigation::{simulate, Action, Command, CommandKind, Observation, PlanEntry, TurnPlan};
use juncnet::network::{grad_check, read_checkpoint, write_checkpoint, Tensor};
use juncnet::radon::{self, RadonConfig, Sinogram};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

// Timed criteria would measure each other on a shared core, so run one at a time.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance {id:>2} [{verdict}] {name}: {detail}");
}

fn data_root() -> PathBuf {
    std::env::var_os("JUNCNET_DATA").map_or_else(
        || PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"),
        PathBuf::from,
    )
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Pearson correlation and RMSE over the inscribed circle.
fn masked_stats(a: &GrayImage, b: &GrayImage) -> (f64, f64) {
    let n = a.width();
    let c = (n as f64 - 1.0) / 2.0;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let (dx, dy) = (j as f64 - c, i as f64 - c);
            if dx * dx + dy * dy <= c * c {
                xs.push(a.get(j, i));
                ys.push(b.get(j, i));
            }
        }
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let mse: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / m;
    (cov / (vx * vy).sqrt(), mse.sqrt())
}

/// RMSE of `s * bp` against the phantom with the least-squares scalar `s`,
/// the fairest possible scaling of the unfiltered back-projection.
fn best_scaled_rmse(bp: &GrayImage, phantom: &GrayImage) -> f64 {
    let n = bp.width();
    let c = (n as f64 - 1.0) / 2.0;
    let (mut ab, mut aa) = (0.0, 0.0);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let (dx, dy) = (j as f64 - c, i as f64 - c);
            if dx * dx + dy * dy <= c * c {
                let (a, b) = (bp.get(j, i), phantom.get(j, i));
                ab += a * b;
                aa += a * a;
                pairs.push((a, b));
            }
        }
    }
    let s = ab / aa;
    (pairs.iter().map(|(a, b)| (s * a - b).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt()
}

#[test]
fn c01_radon_adjointness() {
    let _g = serial();
    let start = Instant::now();
    let cfg = RadonConfig::default();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let f = GrayImage::from_fn(32, 32, |_, _| rng.random::<f64>());
        let g_data: Vec<f64> = (0..cfg.num_angles * 32).map(|_| rng.random::<f64>() - 0.5).collect();
        let g = Sinogram::new(radon::uniform_angles(cfg.num_angles), 32, g_data).unwrap();
        let rf = radon::radon_forward(&f, &cfg).unwrap();
        let rtg = radon::radon_adjoint(&g, 32, &cfg);
        let lhs: f64 = rf.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = f.pixels().iter().zip(rtg.pixels()).map(|(a, b)| a * b).sum();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max((lhs - rhs).abs() / (norm(rf.data()) * norm(g.data())));
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-3 && elapsed < Duration::from_secs(10);
    report(
        1,
        "radon adjointness",
        pass,
        format!(
            "max rel discrepancy {worst:.2e} (< 1e-3), {:.2} s (< 10 s)",
            secs(elapsed)
        ),
    );
    assert!(pass);
}

#[test]
fn c02_fbp_quality() {
    let _g = serial();
    let start = Instant::now();
    let phantom = radon::shepp_logan(128).unwrap();
    let cfg = RadonConfig::with_angles(180);
    let sino = radon::radon_forward(&phantom, &cfg).unwrap();
    let fbp = radon::fbp_reconstruct(&sino, 128, &cfg).unwrap();
    let bp = radon::radon_adjoint(&sino, 128, &cfg);
    let (r, rmse) = masked_stats(&fbp, &phantom);
    let bp_rmse = best_scaled_rmse(&bp, &phantom);
    let elapsed = start.elapsed();
    let pass = r > 0.9 && rmse < 0.5 * bp_rmse && elapsed < Duration::from_secs(30);
    report(
        2,
        "FBP quality, phantom 128 / 180 angles",
        pass,
        format!(
            "pearson {r:.4} (> 0.9), rmse {rmse:.4} vs 0.5 x back-projection {:.4}, {:.2} s (< 30 s)",
            0.5 * bp_rmse,
            secs(elapsed)
        ),
    );
    assert!(pass);
}

#[test]
fn c03_fbp_convergence() {
    let _g = serial();
    let phantom = radon::shepp_logan(128).unwrap();
    let rmses: Vec<f64> = [45, 90, 180]
        .iter()
        .map(|&k| {
            let cfg = RadonConfig::with_angles(k);
            let sino = radon::radon_forward(&phantom, &cfg).unwrap();
            masked_stats(&radon::fbp_reconstruct(&sino, 128, &cfg).unwrap(), &phantom).1
        })
        .collect();
    let pass = rmses[0] > rmses[1] && rmses[1] > rmses[2];
    report(
        3,
        "FBP convergence over 45/90/180 angles",
        pass,
        format!("rmse {rmses:.4?} strictly decreasing"),
    );
    assert!(pass);
}

#[test]
fn c04_gradient_check_reduced_juncnet() {
    let _g = serial();
    let start = Instant::now();
    let cfg = JuncNetConfig {
        input_side: 16,
        in_channels: 2,
        classes: 2,
        conv1_filters: 4,
        conv2_filters: 8,
        dense_hidden: 16,
        seed: 4,
        ..JuncNetConfig::default()
    };
    let model = build_juncnet(&cfg).unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(40);
    let x = Tensor::from_fn(&[2, 2, 16, 16], |_| rng.random::<f64>());
    let r = grad_check(&model, &x, &[0, 1], 1e-5, 1e-4).unwrap();
    let elapsed = start.elapsed();
    let pass = r.passed() && r.checked == model.param_count() && elapsed < Duration::from_secs(60);
    report(
        4,
        "gradient check, reduced net 16x16x2",
        pass,
        format!(
            "max rel error {:.2e} (< 1e-4) over {} params, {:.2} s (< 60 s)",
            r.max_rel_error,
            r.checked,
            secs(elapsed)
        ),
    );
    assert!(pass);
}

#[test]
fn c05_overfit_thirty_samples() {
    let _g = serial();
    let cfg = JuncNetConfig {
        lr: 1e-3,
        ..JuncNetConfig::default()
    };
    let mut model = build_juncnet(&cfg).unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
    let x = Tensor::from_fn(&[30, 2, 64, 64], |_| rng.random::<f64>());
    let labels: Vec<usize> = (0..30).map(|_| rng.random_range(0..2)).collect();
    let mut steps = 0;
    let mut loss = model.loss(&x, &labels).unwrap();
    while loss >= 0.01 && steps < 2000 {
        model.train_step(&x, &labels).unwrap();
        steps += 1;
        loss = model.loss(&x, &labels).unwrap();
    }
    let pass = loss < 0.01;
    report(
        5,
        "overfit 30 random samples",
        pass,
        format!("loss {loss:.2e} (< 0.01) after {steps} steps (<= 2000)"),
    );
    assert!(pass);
}

#[test]
fn c06_mnist_desk_scale() {
    let _g = serial();
    let start = Instant::now();
    let dir = data_root().join("mnist");
    let cfg = JuncNetConfig {
        in_channels: 1,
        classes: 10,
        lr: 1e-3,
        epochs: 3,
        ..JuncNetConfig::default()
    };
    let loaded = load_mnist(
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
        64,
        Some(10_000),
    )
    .and_then(|tr| {
        Ok((
            tr,
            load_mnist(
                dir.join("t10k-images-idx3-ubyte"),
                dir.join("t10k-labels-idx1-ubyte"),
                64,
                Some(2000),
            )?,
        ))
    });
    let (train_set, test_set) = match loaded {
        Ok(sets) => sets,
        Err(e) => {
            report(
                6,
                "MNIST desk scale",
                false,
                format!("data unavailable ({e}); run scripts/fetch-data.sh"),
            );
            panic!("MNIST data unavailable: {e}");
        }
    };
    let mut model = build_juncnet(&cfg).unwrap();
    train(&mut model, &train_set, &cfg, &mut |_| {}).unwrap();
    let acc = evaluate(&model, &test_set).unwrap().accuracy;
    let elapsed = start.elapsed();
    let pass = acc >= 0.95 && elapsed < Duration::from_secs(15 * 60);
    report(
        6,
        "MNIST desk scale, 10k train / 3 epochs",
        pass,
        format!(
            "accuracy {acc:.4} on {} test images (>= 0.95), {:.0} s",
            test_set.len(),
            secs(elapsed)
        ),
    );
    assert!(pass);
}

#[test]
fn c07_cifar10_desk_scale() {
    let _g = serial();
    let start = Instant::now();
    let dir = data_root().join("cifar-10-batches-bin");
    let cfg = JuncNetConfig {
        in_channels: 1,
        classes: 10,
        lr: 1e-3,
        epochs: 10,
        ..JuncNetConfig::default()
    };
    let loaded = load_cifar10(&[dir.join("data_batch_1.bin")], 64, Some(5000))
        .and_then(|tr| Ok((tr, load_cifar10(&[dir.join("test_batch.bin")], 64, Some(2000))?)));
    let (train_set, test_set) = match loaded {
        Ok(sets) => sets,
        Err(e) => {
            report(
                7,
                "CIFAR-10 desk scale",
                false,
                format!("data unavailable ({e}); run scripts/fetch-data.sh"),
            );
            panic!("CIFAR-10 data unavailable: {e}");
        }
    };
    let mut model = build_juncnet(&cfg).unwrap();
    train(&mut model, &train_set, &cfg, &mut |_| {}).unwrap();
    let acc = evaluate(&model, &test_set).unwrap().accuracy;
    let elapsed = start.elapsed();
    let pass = acc >= 0.35 && elapsed < Duration::from_secs(30 * 60);
    report(
        7,
        "CIFAR-10 desk scale, 5k train / 10 epochs",
        pass,
        format!(
            "accuracy {acc:.4} on {} test images (>= 0.35), {:.0} s",
            test_set.len(),
            secs(elapsed)
        ),
    );
    assert!(pass);
}

#[test]
fn c08_frame_latency() {
    let _g = serial();
    let cfg = JuncNetConfig::default();
    let model = build_juncnet(&cfg).unwrap().inference();
    let frames = synthetic::synthetic_corpus(105, 64, 64, 8);
    let mut times = Vec::with_capacity(200);
    for (i, (frame, _)) in frames.iter().enumerate() {
        let t = Instant::now();
        let x = preprocess_frame(frame, &cfg)
            .unwrap()
            .cast::<f32>()
            .reshape(&[1, 2, 64, 64])
            .unwrap();
        let p = model.predict(&x).unwrap();
        std::hint::black_box(p);
        if i >= 10 {
            times.push(t.elapsed());
        }
    }
    times.sort();
    let median = times[times.len() / 2];
    let pass = median <= Duration::from_millis(40);
    report(
        8,
        "frame latency, preprocess + predict",
        pass,
        format!(
            "median {:.2} ms over {} frames (<= 40 ms, 25 FPS)",
            secs(median) * 1e3,
            times.len()
        ),
    );
    assert!(pass);
}

/// Brute-force counter: list the maximal junction runs, release the latch
/// after a gap of at least `k`, count unlatched runs of length `k` or more at
/// their `k`-th frame and look the ordinal up in the plan.
fn run_scanning_oracle(labels: &[Observation], plan: &[(usize, f64)], k: usize) -> (Vec<(usize, f64)>, usize) {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        if labels[i] == Observation::Junction {
            let s = i;
            while i < labels.len() && labels[i] == Observation::Junction {
                i += 1;
            }
            runs.push((s, i - s));
        } else {
            i += 1;
        }
    }
    let mut yaws = Vec::new();
    let mut count = 0;
    let mut latched = false;
    let mut prev_end = 0;
    for (s, len) in runs {
        if s - prev_end >= k {
            latched = false;
        }
        prev_end = s + len;
        if !latched && len >= k {
            count += 1;
            latched = true;
            if let Some(&(_, yaw)) = plan.iter().find(|(idx, yaw)| *idx == count && *yaw != 0.0) {
                yaws.push((s + k - 1, yaw));
            }
        }
    }
    (yaws, count)
}

#[test]
fn c09_navigation_oracle_equivalence() {
    let _g = serial();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(9);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let len = rng.random_range(0..=500);
        let p_junction = rng.random_range(0.05..0.95);
        let mut labels = Vec::with_capacity(len);
        while labels.len() < len {
            let obs = if rng.random_bool(p_junction) {
                Observation::Junction
            } else {
                Observation::None
            };
            let run = rng.random_range(1..=15).min(len - labels.len());
            labels.extend(std::iter::repeat_n(obs, run));
        }
        let k = rng.random_range(1..=10);
        let mut entries = Vec::new();
        let mut idx = 0;
        for _ in 0..rng.random_range(0..8) {
            idx += rng.random_range(1..4);
            let deg = f64::from(rng.random_range(1..=180u32));
            let (action, yaw) = match rng.random_range(0..3) {
                0 => (Action::Left, deg),
                1 => (Action::Right, -deg),
                _ => (Action::Straight, 0.0),
            };
            entries.push(PlanEntry {
                junction_index: idx,
                action,
                yaw_degrees: yaw,
            });
        }
        let plan_pairs: Vec<(usize, f64)> = entries.iter().map(|e| (e.junction_index, e.yaw_degrees)).collect();
        let plan = TurnPlan::new(entries).unwrap();

        let (log, end) = simulate(&labels, &plan, k).unwrap();
        let got: Vec<(usize, f64)> = log
            .iter()
            .filter(|r| r.command.kind == CommandKind::Yaw)
            .map(|r| (r.frame_index, r.command.yaw_degrees))
            .collect();
        let (want, count) = run_scanning_oracle(&labels, &plan_pairs, k);
        if got != want || end.junction_count != count || log.len() != labels.len() {
            mismatches += 1;
        }
    }
    let pass = mismatches == 0;
    report(
        9,
        "navigation vs run-scanning oracle",
        pass,
        format!("{mismatches} mismatches in 1000 random trials"),
    );
    assert!(pass);
}

#[test]
fn c10_straight_track() {
    let _g = serial();
    let k = 5;
    let mut labels = Vec::new();
    for (junction, none) in [(12, 20), (7, 9), (30, 6), (5, 15)] {
        labels.extend(std::iter::repeat_n(Observation::Junction, junction));
        labels.extend(std::iter::repeat_n(Observation::None, none));
    }
    let plan = TurnPlan::parse("1,STRAIGHT,0\n2,STRAIGHT,0\n3,STRAIGHT,0\n4,STRAIGHT,0\n").unwrap();
    let (log, end) = simulate(&labels, &plan, k).unwrap();
    let yaws = log.iter().filter(|r| r.command != Command::NONE).count();
    let pass = end.junction_count == 4 && yaws == 0;
    report(
        10,
        "straight track, 4 junctions",
        pass,
        format!("count {} (4), yaw commands {yaws} (0)", end.junction_count),
    );
    assert!(pass);
}

#[test]
fn c11_checkpoint_round_trip() {
    let _g = serial();
    let model = build_juncnet(&JuncNetConfig {
        seed: 11,
        ..JuncNetConfig::default()
    })
    .unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&model, &mut bytes).unwrap();
    let back = read_checkpoint(bytes.as_slice()).unwrap();
    let (a, b) = (model.inference(), back.inference());
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(111);
    let mut differing = 0;
    for _ in 0..100 {
        let x: Tensor<f32> = Tensor::from_fn(&[1, 2, 64, 64], |_| rng.random::<f32>());
        let (pa, pb) = (a.predict(&x).unwrap(), b.predict(&x).unwrap());
        if pa.data().iter().zip(pb.data()).any(|(u, v)| u.to_bits() != v.to_bits()) {
            differing += 1;
        }
    }
    let pass = differing == 0;
    report(
        11,
        "checkpoint round trip",
        pass,
        format!("{differing} of 100 predictions differ bitwise ({} bytes)", bytes.len()),
    );
    assert!(pass);
}

#[test]
fn c12_synthetic_road_junction_corpus() {
    let _g = serial();
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    synthetic::write_synthetic_corpus(dir.path(), 250, 80, 60, 12).unwrap();
    let cfg = JuncNetConfig {
        lr: 1e-3,
        epochs: 8,
        seed: 12,
        ..JuncNetConfig::default()
    };
    let mut train_set = load_image_dir(dir.path(), &cfg).unwrap();
    let total = train_set.len();
    train_set.shuffle(12);
    let test_set = train_set.split_off(100);
    let mut model = build_juncnet(&cfg).unwrap();
    train(&mut model, &train_set, &cfg, &mut |_| {}).unwrap();
    let acc = evaluate(&model, &test_set).unwrap().accuracy;
    let pass = total >= 400 && acc >= 0.9;
    report(
        12,
        "synthetic road/junction corpus, 2-channel",
        pass,
        format!(
            "held-out accuracy {acc:.4} (>= 0.90), {total} images, {} held out, {:.0} s",
            test_set.len(),
            secs(start.elapsed())
        ),
    );
    assert!(pass);
}
