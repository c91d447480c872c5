//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test -p flowgan-cli --test acceptance -- 5 6`.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use flowgan::classifier::{split, train_classifier, ClassifierConfig, TrainedClassifier};
use flowgan::evalmetrics::{confusion, metrics, roc_curve, ConfusionCounts, MetricSet, MetricsError};
use flowgan::gan::{balance_dataset, generate, train_gan, value_function, GanConfig, GanState};
use flowgan::neuralnet::{backward, bce_with_logit, forward, init_params, MlpModel};
use flowgan::optimizer::{lbfgs_minimize, LbfgsConfig};
use flowgan::par::Execution;
use flowgan::synthdata::{generate_synthetic, SynthSpec};
use flowgan::{class_counts, Class, EncodedSample};
use flowgan_cli::run_command;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    check(t < limit, format!("took {:.1}s, limit {}s", t.as_secs_f64(), limit.as_secs()))
}

// ---------------------------------------------------------------- 1

fn relu_pattern(model: &MlpModel, x: &[f64]) -> Vec<bool> {
    let (_, trace) = forward(model, x).unwrap();
    trace.pre[..trace.pre.len() - 1].iter().flatten().map(|&p| p > 0.0).collect()
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut n_nets, mut n_checked, mut n_kink) = (0, 0, 0);
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for net in 0..200u64 {
        let n_layers = rng.random_range(1..=4);
        let mut dims: Vec<usize> = (0..n_layers).map(|_| rng.random_range(1..=8)).collect();
        dims.push(1);
        let mut model = init_params(&dims, net).unwrap();
        for b in model.biases.iter_mut().flatten() {
            *b = rng.random_range(-0.5..0.5);
        }
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let (_, trace) = forward(&model, &x).unwrap();
        let analytic = backward(&model, &trace, y).unwrap().to_flat();
        let theta = model.to_flat();
        let base_pattern = relu_pattern(&model, &x);
        let mut probe = model.clone();
        let mut loss_at = |t: &[f64]| -> (f64, Vec<bool>) {
            probe.set_flat(t);
            let (_, tr) = forward(&probe, &x).unwrap();
            (bce_with_logit(tr.logits()[0], y), relu_pattern(&probe, &x))
        };
        for i in 0..theta.len() {
            let mut t = theta.clone();
            t[i] = theta[i] + h;
            let (lp, pp) = loss_at(&t);
            t[i] = theta[i] - h;
            let (lm, pm) = loss_at(&t);
            // the finite difference straddles a ReLU kink: not differentiable there
            if pp != base_pattern || pm != base_pattern {
                n_kink += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * h);
            let a = analytic[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
            check(rel < 1e-4, format!("net {net} {dims:?} param {i}: analytic {a:e} fd {fd:e}"))?;
            n_checked += 1;
        }
        n_nets += 1;
    }
    check(n_nets >= 100, "too few networks")?;
    within(start, Duration::from_secs(30))?;
    Ok(format!("{n_nets} nets, {n_checked} partials, max rel err {worst:.1e}, {n_kink} kink-straddling skipped"))
}

// ---------------------------------------------------------------- 2

fn brute_metrics(y: &[bool], pred: &[bool]) -> (ConfusionCounts, Option<MetricSet>) {
    let mut c = ConfusionCounts::default();
    for (&t, &p) in y.iter().zip(pred) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    if c.tp + c.fn_ == 0 {
        return (c, None);
    }
    let n = y.len() as f64;
    let correct = y.iter().zip(pred).filter(|(t, p)| t == p).count() as f64;
    let predicted = pred.iter().filter(|&&p| p).count() as f64;
    let actual = y.iter().filter(|&&t| t).count() as f64;
    let precision = if predicted == 0.0 { 0.0 } else { c.tp as f64 / predicted };
    let recall = c.tp as f64 / actual;
    // F1 as 2TP / (2TP + FP + FN), an algebraically equal form
    let f1 = if c.tp == 0 { 0.0 } else { 2.0 * c.tp as f64 / (2.0 * c.tp as f64 + c.fp as f64 + c.fn_ as f64) };
    (c, Some(MetricSet { accuracy: correct / n, precision, recall, f1 }))
}

fn mann_whitney(scores: &[(f64, Class)]) -> f64 {
    let (mut u, mut pairs) = (0.0, 0.0);
    for (sp, _) in scores.iter().filter(|s| s.1 == Class::Attack) {
        for (sn, _) in scores.iter().filter(|s| s.1 == Class::NonAttack) {
            u += if sp > sn { 1.0 } else if sp == sn { 0.5 } else { 0.0 };
            pairs += 1.0;
        }
    }
    u / pairs
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut n_cases = 0usize;
    for n in 1..=12usize {
        // every labelling for small n, a sample of labellings otherwise
        let labellings: Vec<u32> = if n <= 6 { (0..1u32 << n).collect() } else { (0..8).map(|_| rng.random_range(0..1u32 << n)).collect() };
        for ybits in labellings {
            let y: Vec<bool> = (0..n).map(|i| ybits >> i & 1 == 1).collect();
            for pbits in 0..1u32 << n {
                let pred: Vec<bool> = (0..n).map(|i| pbits >> i & 1 == 1).collect();
                // positive predictions sit exactly on the threshold
                let scores: Vec<(f64, Class)> =
                    pred.iter().zip(&y).map(|(&p, &t)| (if p { 0.5 } else { 0.25 }, if t { Class::Attack } else { Class::NonAttack })).collect();
                let c = confusion(&scores, 0.5).map_err(|e| e.to_string())?;
                let (bc, bm) = brute_metrics(&y, &pred);
                check(c == bc, format!("confusion n={n} y={ybits:b} p={pbits:b}: {c:?} vs {bc:?}"))?;
                match (metrics(&c), bm) {
                    (Ok(m), Some(b)) => {
                        for (name, got, want) in [
                            ("accuracy", m.accuracy, b.accuracy),
                            ("precision", m.precision, b.precision),
                            ("recall", m.recall, b.recall),
                            ("f1", m.f1, b.f1),
                        ] {
                            check((got - want).abs() <= 1e-12, format!("{name} n={n} y={ybits:b} p={pbits:b}: {got} vs {want}"))?;
                        }
                    }
                    (Err(MetricsError::NoPositives), None) => {}
                    (got, want) => return Err(format!("n={n}: {got:?} vs {want:?}")),
                }
                n_cases += 1;
            }
        }
    }
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(2..=50) as f64;
        let mut scores: Vec<(f64, Class)> = (0..n)
            .map(|_| ((rng.random_range(0.0..1.0) * levels).floor() / levels, if rng.random_bool(0.3) { Class::Attack } else { Class::NonAttack }))
            .collect();
        scores[0].1 = Class::Attack;
        scores[1].1 = Class::NonAttack;
        let auc = roc_curve(&scores).map_err(|e| e.to_string())?.auc;
        let diff = (auc - mann_whitney(&scores)).abs();
        worst = worst.max(diff);
        check(diff <= 1e-12, format!("AUC {auc} vs Mann-Whitney {}", mann_whitney(&scores)))?;
    }
    Ok(format!("{n_cases} prediction vectors exact; 1000 ROC instances, max |AUC - U| {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

fn optimizer_check() -> Outcome {
    let start = Instant::now();
    let rosen = |x: &[f64]| {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        (f, vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)])
    };
    let cfg = LbfgsConfig { grad_tol: 1e-10, max_iter: 200, ..Default::default() };
    let r = lbfgs_minimize(rosen, &[-1.2, 1.0], &cfg).map_err(|e| e.to_string())?;
    let dist = ((r.x[0] - 1.0).powi(2) + (r.x[1] - 1.0).powi(2)).sqrt();
    check(dist < 1e-6 && r.iterations <= 200, format!("Rosenbrock ended at {:?} after {} iterations", r.x, r.iterations))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 10;
    let mut max_iter = 0;
    for q in 0..100 {
        let m: Vec<Vec<f64>> = (0..dim).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let a: Vec<Vec<f64>> = (0..dim)
            .map(|i| (0..dim).map(|j| (0..dim).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { 0.5 } else { 0.0 }).collect())
            .collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let grad = |x: &[f64]| -> Vec<f64> { a.iter().zip(&b).map(|(row, bi)| row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() - bi).collect() };
        let f = |x: &[f64]| {
            let g = grad(x);
            // 0.5 x'Ax - b'x = 0.5 x'(Ax - b) - 0.5 b'x
            let fx = 0.5 * x.iter().zip(&g).map(|(p, q)| p * q).sum::<f64>() - 0.5 * b.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
            (fx, g)
        };
        let x0: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let cfg = LbfgsConfig { grad_tol: 1e-8, max_iter: 50, step_tol: 0.0, ..Default::default() };
        let r = lbfgs_minimize(f, &x0, &cfg).map_err(|e| e.to_string())?;
        let gn = grad(&r.x).iter().map(|v| v * v).sum::<f64>().sqrt();
        check(gn < 1e-8 && r.iterations <= 50, format!("quadratic {q}: |g| {gn:e} after {} iterations ({:?})", r.iterations, r.status))?;
        max_iter = max_iter.max(r.iterations);
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!("Rosenbrock |x - (1,1)| {dist:.1e} in {} iterations; 100 quadratics (dim 10) converged, max {max_iter} iterations", r.iterations))
}

// ---------------------------------------------------------------- 4

fn minimax_identity() -> Outcome {
    let v = value_function(&[0.5; 32], &[0.5; 17]).map_err(|e| e.to_string())?;
    let target = -2.0 * 2f64.ln();
    check((v - target).abs() <= 1e-12, format!("V = {v}, expected {target}"))?;
    Ok(format!("V(D = 0.5) = {v:.15}"))
}

// ---------------------------------------------------------------- 5, 6

struct Scored {
    metrics: MetricSet,
    auc: f64,
}

fn score(clf: &TrainedClassifier, samples: &[EncodedSample]) -> Result<Scored, String> {
    let s = clf.scores(samples, Execution::default()).map_err(|e| e.to_string())?;
    let c = confusion(&s, 0.5).map_err(|e| e.to_string())?;
    Ok(Scored { metrics: metrics(&c).map_err(|e| e.to_string())?, auc: roc_curve(&s).map_err(|e| e.to_string())?.auc })
}

struct Blacklist {
    train: Vec<EncodedSample>,
    test: Vec<EncodedSample>,
    unbalanced: Option<Scored>,
}

fn blacklist_data() -> Blacklist {
    let spec = SynthSpec::default();
    assert_eq!((spec.n_attack, spec.n_nonattack, spec.overlap), (60, 9941, 0.3));
    let data = generate_synthetic(&spec).unwrap();
    let s = split(&data, 7).unwrap();
    Blacklist { train: s.train, test: s.test, unbalanced: None }
}

fn imbalance_pathology(bl: &mut Blacklist) -> Outcome {
    let start = Instant::now();
    let (clf, _) = train_classifier(&bl.train, &ClassifierConfig::default(), Execution::default()).map_err(|e| e.to_string())?;
    let r = score(&clf, &bl.test)?;
    let m = r.metrics;
    let msg = format!("accuracy {:.4}, precision {:.4}, recall {:.4}, ROC AUC {:.4}", m.accuracy, m.precision, m.recall, r.auc);
    check(m.accuracy > 0.98 && m.recall < 0.2, msg.clone())?;
    within(start, Duration::from_secs(180))?;
    bl.unbalanced = Some(r);
    Ok(msg)
}

fn balancing_benefit(bl: &mut Blacklist) -> Outcome {
    let before = match &bl.unbalanced {
        Some(r) => r.auc,
        None => {
            imbalance_pathology(bl).map_err(|e| format!("unbalanced baseline failed: {e}"))?;
            bl.unbalanced.as_ref().unwrap().auc
        }
    };
    let start = Instant::now();
    let minority: Vec<Vec<f64>> = bl.train.iter().filter(|s| s.label == Class::Attack).map(|s| s.features.clone()).collect();
    let gan = train_gan(&minority, &GanConfig::default()).map_err(|e| e.to_string())?;
    let train = balance_dataset(&bl.train, &gan, 11).map_err(|e| e.to_string())?;
    let test = balance_dataset(&bl.test, &gan, 12).map_err(|e| e.to_string())?;
    check(class_counts(&train).0 + class_counts(&test).0 == 9941, "balanced counts")?;
    let (clf, _) = train_classifier(&train, &ClassifierConfig::default(), Execution::default()).map_err(|e| e.to_string())?;
    let r = score(&clf, &test)?;
    let m = r.metrics;
    let msg = format!("recall {:.4}, F1 {:.4}, ROC AUC {:.4} (unbalanced {:.4}, gain {:.4})", m.recall, m.f1, r.auc, before, r.auc - before);
    check(m.recall >= 0.9 && m.f1 >= 0.9 && r.auc - before >= 0.1, msg.clone())?;
    within(start, Duration::from_secs(600))?;
    Ok(msg)
}

// ---------------------------------------------------------------- 7

fn moment_matching() -> Outcome {
    let spec = SynthSpec {
        n_attack: 500,
        n_nonattack: 0,
        d: 2,
        mean_attack: vec![0.25, 0.7],
        mean_nonattack: vec![0.5, 0.5],
        spread_attack: 0.05,
        spread_nonattack: 0.05,
        overlap: 0.0,
        seed: 42,
    };
    let real: Vec<Vec<f64>> = generate_synthetic(&spec).unwrap().into_iter().map(|s| s.features).collect();
    let cfg = GanConfig::default();
    check(cfg.epochs <= 500, "epoch budget")?;
    let state = train_gan(&real, &cfg).map_err(|e| e.to_string())?;
    let fake = generate(&state, 1000, 3).map_err(|e| e.to_string())?;
    let mean = |s: &[Vec<f64>], j: usize| s.iter().map(|x| x[j]).sum::<f64>() / s.len() as f64;
    let gaps: Vec<f64> = (0..2).map(|j| (mean(&fake, j) - mean(&real, j)).abs()).collect();
    let many = generate(&state, 10_000, 4).map_err(|e| e.to_string())?;
    check(many.iter().flatten().all(|v| (0.0..=1.0).contains(v)), "generated value outside [0, 1]")?;
    let msg = format!(
        "{} epochs; real mean ({:.3}, {:.3}), generated ({:.3}, {:.3})",
        cfg.epochs,
        mean(&real, 0),
        mean(&real, 1),
        mean(&fake, 0),
        mean(&fake, 1)
    );
    check(gaps.iter().all(|&g| g < 0.1), msg.clone())?;
    Ok(msg)
}

// ---------------------------------------------------------------- 8

fn raw_flows(path: &Path) {
    let mut text = String::from("te,td,sa,da,sp,dp,pr,flg,fwd,stos,pkt,byt,type\n");
    for i in 0..420u32 {
        let label = match i % 14 {
            0 => "blacklist",
            7 if i % 28 == 7 => "dos",
            _ => "background",
        };
        let proto = ["TCP", "UDP", "ICMP"][(i % 3) as usize];
        let flags = [".AP.SF", ".A....", "....S.", "UAPRSF"][(i % 4) as usize];
        let bytes = if label == "blacklist" { 1500 + i * 3 } else { 60 + (i * 37) % 900 };
        text.push_str(&format!(
            "2016-07-27 13:{:02}:{:02},{}.{:03},42.219.{}.{},143.72.8.{},{},{},{proto},{flags},0,{},{},{bytes},{label}\n",
            (i / 60) % 60,
            i % 60,
            i % 5,
            (i * 7) % 1000,
            i % 200,
            (i * 13) % 250,
            i % 50,
            1024 + (i * 31) % 60000,
            [53, 80, 443, 22][(i % 4) as usize],
            (i % 3) * 8,
            1 + i % 40,
        ));
    }
    fs::write(path, text).unwrap();
}

fn run_pipeline(work: &Path, input: &Path, extra: &[&str]) -> Result<(), String> {
    let w = work.to_str().unwrap();
    let i = input.to_str().unwrap();
    let common = ["--work_dir", w, "--max_iter", "40", "--gan_epochs", "15", "--chunk_rows", "100"];
    let chunks = format!("{w}/chunks");
    let stages: Vec<(&str, Vec<&str>)> = vec![
        ("chunk", vec!["--input", i]),
        ("preprocess", vec!["--input", &chunks]),
        ("split", vec![]),
        ("train-clf", vec![]),
        ("evaluate", vec![]),
        ("train-gan", vec![]),
        ("generate", vec![]),
        ("balance", vec!["--balance_test", "true"]),
        ("train-clf", vec!["--balanced", "true"]),
        ("evaluate", vec!["--balanced", "true", "--balance_test", "true"]),
        ("report", vec![]),
    ];
    for (cmd, args) in stages {
        let mut argv = vec!["flowgan", cmd];
        argv.extend(common);
        argv.extend(args);
        argv.extend(extra);
        let code = run_command(&argv);
        check(code == 0, format!("{cmd} exited {code}"))?;
    }
    Ok(())
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn compare_trees(a: &Path, b: &Path, what: &str) -> Result<usize, String> {
    let (ta, tb) = (tree(a), tree(b));
    check(ta.keys().eq(tb.keys()), format!("{what}: different artifact sets"))?;
    let mut n = 0;
    for (name, bytes) in &ta {
        if name.ends_with(".json") || name.ends_with(".csv") {
            check(bytes == &tb[name], format!("{what}: {name} differs"))?;
            n += 1;
        }
    }
    Ok(n)
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = root.path().join("flows.csv");
    raw_flows(&input);
    let (a, b, c) = (root.path().join("a"), root.path().join("b"), root.path().join("c"));
    run_pipeline(&a, &input, &[])?;
    run_pipeline(&b, &input, &[])?;
    let n = compare_trees(&a, &b, "rerun")?;
    // the sequential path must give the same bytes as the parallel one
    run_pipeline(&c, &input, &["--parallel", "false"])?;
    let n_seq = tree(&a)
        .iter()
        .filter(|(k, _)| !k.ends_with(".manifest.json") && (k.ends_with(".json") || k.ends_with(".csv")))
        .map(|(k, v)| check(&tree(&c)[k] == v, format!("sequential: {k} differs")))
        .collect::<Result<Vec<_>, _>>()?
        .len();

    let (s1, s2) = (root.path().join("s1"), root.path().join("s2"));
    for s in [&s1, &s2] {
        let code = run_command(["flowgan", "synth", "--work_dir", s.to_str().unwrap(), "--attack", "30", "--nonattack", "500"]);
        check(code == 0, format!("synth exited {code}"))?;
    }
    let n_synth = compare_trees(&s1, &s2, "synth")?;
    Ok(format!("{n} pipeline artifacts and {n_synth} synth artifacts byte-identical; {n_seq} identical between parallel and sequential"))
}

// ---------------------------------------------------------------- 9

fn balance_exactness() -> Outcome {
    let state = GanState::new(12, GanConfig::default()).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for (n_attack, n_nonattack) in [(60, 9941), (70, 19700)] {
        let spec = SynthSpec { n_attack, n_nonattack, ..Default::default() };
        let real = generate_synthetic(&spec).unwrap();
        let out = balance_dataset(&real, &state, 1).map_err(|e| e.to_string())?;
        let counts = class_counts(&out);
        check(counts == (n_nonattack, n_nonattack), format!("({n_attack}, {n_nonattack}) -> {counts:?}"))?;
        check(out[..real.len()] == real[..], "real rows changed")?;
        lines.push(format!("({n_attack}, {n_nonattack}) -> {counts:?}"));
    }
    Ok(lines.join(", "))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut bl: Option<Blacklist> = None;
    let mut failures = 0;
    for n in 1..=9usize {
        if !wanted(n) {
            continue;
        }
        let (name, outcome): (&str, Outcome) = {
            let run = |f: &mut dyn FnMut() -> Outcome| catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
            match n {
                1 => ("gradient correctness", run(&mut gradient_check)),
                2 => ("metric oracle equivalence", run(&mut metric_oracles)),
                3 => ("optimizer convergence", run(&mut optimizer_check)),
                4 => ("minimax identity", run(&mut minimax_identity)),
                5 => ("imbalance pathology", run(&mut || imbalance_pathology(bl.get_or_insert_with(blacklist_data)))),
                6 => ("balancing benefit", run(&mut || balancing_benefit(bl.get_or_insert_with(blacklist_data)))),
                7 => ("GAN moment matching", run(&mut moment_matching)),
                8 => ("determinism", run(&mut determinism)),
                _ => ("balance exactness", run(&mut balance_exactness)),
            }
        };
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS - {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {n} ({name}): FAIL - {detail}");
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
