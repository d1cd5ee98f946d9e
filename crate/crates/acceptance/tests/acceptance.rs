//! Acceptance criteria 1 through 11. Each criterion prints one line,
//! `PASS` or `FAIL` with the measured numbers; the process exits nonzero if
//! any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use emergence_core::data::{append_record, gen_blobs, load_weights, read_logs, save_weights};
use emergence_core::emergence::{
    choose_pivot, derived_functor_dim, derived_functor_dim_within, emergence_layered,
    emergence_network,
};
use emergence_core::experiment::{
    run_experiment, Arm, ExperimentConfig, ExperimentRecord, RunRecord,
};
use emergence_core::graph::build_layered_quiver;
use emergence_core::init::{
    alpha_for_learning_rate, apply_emergence_scaling, base_init, scale_schedule, PivotMode,
};
use emergence_core::nn::{init_log, Activation, EpochLog, MlpModel, TrainConfig};
use emergence_core::rng::seeded;
use emergence_core::verify::{
    finite_difference_grads, max_relative_error, random_gradient_case, random_profile,
    random_shape, FD_EPSILON, GRAD_REL_TOLERANCE,
};
use emergence_core::{
    ActivationProfile, BaseScheme, EmergenceValue, LayeredShape, QuiverRep, WeightSet,
};
use emrg_acceptance::{brute_emergence, last_positive_delta};
use ndarray::{Array1, Array2};
use num_bigint::BigUint;
use rand::Rng;

const SEED_BASE: u64 = 0xACCE;

struct Outcome {
    passed: bool,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome { passed: true, detail: detail.into() }
}

fn verdict(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn within(limit: Duration, elapsed: Duration) -> bool {
    elapsed < limit
}

fn as_u128(v: &EmergenceValue) -> u128 {
    u128::try_from(v.0.clone()).expect("small cases fit in u128")
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(SEED_BASE, 1);
    let cases = 300;
    for case in 0..cases {
        let shape = random_shape(&mut rng, 5, 6);
        let profile = random_profile(&mut rng, &shape);
        let closed = emergence_layered(&shape, &profile).unwrap();
        let lq = build_layered_quiver(&shape);
        let network = emergence_network(&lq.quiver, &lq.active_set(&profile)).unwrap();
        let brute = brute_emergence(shape.sizes(), profile.counts());
        if as_u128(&closed) != brute || network != closed {
            return verdict(
                false,
                format!(
                    "case {case}: layers {:?} profile {:?}: closed {closed}, network {network}, walked {brute}",
                    shape.sizes(),
                    profile.counts()
                ),
            );
        }
    }
    let t = start.elapsed();
    verdict(within(Duration::from_secs(10), t), format!("{cases} cases agree exactly in {t:.2?} (limit 10s)"))
}

fn derived_functor_consistency() -> Outcome {
    let mut rng = seeded(SEED_BASE, 2);
    let cases = 150;
    let mut literal_mismatches = 0;
    for case in 0..cases {
        let shape = random_shape(&mut rng, 5, 6);
        let profile = random_profile(&mut rng, &shape);
        let lq = build_layered_quiver(&shape);
        let active = lq.active_set(&profile);
        let deleted = lq.edges_out_of_complement(&active);
        let network = emergence_network(&lq.quiver, &active).unwrap();
        let rep = QuiverRep::unit(lq.quiver.clone());
        let restricted = derived_functor_dim_within(&rep, &deleted, &active).unwrap();
        if restricted != network {
            return verdict(
                false,
                format!(
                    "case {case}: layers {:?} profile {:?}: derived {restricted}, network {network}",
                    shape.sizes(),
                    profile.counts()
                ),
            );
        }
        if derived_functor_dim(&rep, &deleted).unwrap() != network {
            literal_mismatches += 1;
        }
    }
    pass(format!(
        "{cases} cases exact with paths confined to the active subnetwork; \
         counting paths through inactive heads as well disagrees in {literal_mismatches}"
    ))
}

fn trivial_zeros() -> Outcome {
    let mut rng = seeded(SEED_BASE, 3);
    let shapes = 50;
    for _ in 0..shapes {
        let depth = rng.random_range(2..=10);
        let shape =
            LayeredShape::new((0..depth).map(|_| rng.random_range(1..=64)).collect()).unwrap();
        let full = emergence_layered(&shape, &shape.full_profile()).unwrap();
        let silent = emergence_layered(&shape, &ActivationProfile::zeros(depth)).unwrap();
        if full.0 != BigUint::ZERO || silent.0 != BigUint::ZERO {
            return verdict(false, format!("layers {:?}: full {full}, zeros {silent}", shape.sizes()));
        }
    }
    pass(format!("{shapes} shapes give 0 for both saturated and silent profiles"))
}

fn pivot_lemma() -> Outcome {
    let p = |s: &[usize]| choose_pivot(&LayeredShape::new(s.to_vec()).unwrap()).pivot;
    let fixed = p(&[4, 4, 4, 4]) == Some(2) && p(&[8, 2, 2, 8]) == Some(3);
    let mut misses = Vec::new();
    for depth in 3..=10usize {
        let lo = depth.div_ceil(2) - 1;
        for n in 2..=8 {
            let sizes = vec![n; depth];
            let got = p(&sizes);
            assert_eq!(got, last_positive_delta(&sizes), "library and reference disagree on {sizes:?}");
            if !matches!(got, Some(i) if (lo..=lo + 2).contains(&i)) {
                misses.push(format!("N={depth} n={n} -> {got:?} not in {lo}..={}", lo + 2));
            }
        }
    }
    misses.dedup_by(|a, b| a.split(' ').next() == b.split(' ').next());
    let detail = format!(
        "(4,4,4,4)->{:?}, (8,2,2,8)->{:?}; uniform shapes: {}",
        p(&[4, 4, 4, 4]),
        p(&[8, 2, 2, 8]),
        if misses.is_empty() { "all inside the window".to_string() } else { misses.join("; ") }
    );
    verdict(fixed && misses.is_empty(), detail)
}

fn schedule_correctness() -> Outcome {
    let s = scale_schedule(5, 2.0, PivotMode::Auto).unwrap();
    let exact = s.multipliers == [0.25, 0.5, 1.0, 2.0, 4.0];
    let sums: Vec<f64> = (1..=12)
        .map(|l| scale_schedule(l, 2.0, PivotMode::Auto).unwrap().exponent_sum())
        .collect();
    let balanced = sums.iter().all(|&x| x == 0.0);
    let shape = LayeredShape::new(vec![7, 5, 9, 3, 4]).unwrap();
    let mut identity = true;
    for scheme in [BaseScheme::XavierUniform, BaseScheme::XavierNormal, BaseScheme::KaimingNormal] {
        let base = base_init(&shape, scheme, 17).unwrap();
        let one = scale_schedule(base.layer_count(), 1.0, PivotMode::Auto).unwrap();
        let same = apply_emergence_scaling(&base, &one).unwrap();
        identity &= base
            .matrices
            .iter()
            .zip(&same.matrices)
            .all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    verdict(
        exact && balanced && identity,
        format!(
            "L=5 alpha=2 -> {:?}; exponent sums L=1..12 all zero: {balanced}; alpha=1 bitwise identity: {identity}",
            s.multipliers
        ),
    )
}

fn learning_rate_alpha() -> Outcome {
    let a = alpha_for_learning_rate(2.0, 1e-3, 1e-4, 2.0).unwrap();
    verdict((a - 6.32).abs() <= 0.01, format!("alpha = {a:.4} (target 6.32 +- 0.01)"))
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(SEED_BASE, 7);
    let mut worst = (0.0f64, String::new());
    for case in 0..20 {
        let bn = case % 2 == 1;
        let act = if case % 4 < 2 { Activation::Relu } else { Activation::Tanh };
        let (model, batch, labels) = random_gradient_case(&mut rng, bn, act);
        let (_, analytic, _) = model.loss_and_grads(batch.view(), &labels).unwrap();
        let numeric = finite_difference_grads(&model, &batch, &labels, FD_EPSILON);
        let (err, at) = max_relative_error(&analytic, &numeric);
        if err.is_nan() || err > worst.0 {
            worst = (err, format!("{at} of {:?} bn={bn}", model.weights.shape().sizes()));
        }
    }
    let t = start.elapsed();
    verdict(
        worst.0 <= GRAD_REL_TOLERANCE && within(Duration::from_secs(30), t),
        format!(
            "20 cases (10 with batchnorm), worst relative error {:.2e} at {} in {t:.2?} (limit 1e-4, 30s)",
            worst.0, worst.1
        ),
    )
}

fn emergence_ordering_at_init() -> Outcome {
    let sizes = vec![3072, 512, 512, 512, 10];
    let shape = LayeredShape::new(sizes.clone()).unwrap();
    let data = gen_blobs(10, 100, 3072, 1.0, 8);
    let cfg = TrainConfig::default();
    let schedule = scale_schedule(shape.weight_layers(), 2.0, PivotMode::Auto).unwrap();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..5 {
        let base = base_init(&shape, BaseScheme::KaimingNormal, seed).unwrap();
        let scaled = apply_emergence_scaling(&base, &schedule).unwrap();
        let e = |w: WeightSet| {
            init_log(&MlpModel::new(w, false, Activation::Relu), &data, None, &cfg)
                .unwrap()
                .emergence
        };
        let (eb, es) = (e(base), e(scaled));
        wins += usize::from(es > eb);
        pairs.push(format!("{eb}<{es}"));
    }
    verdict(
        wins >= 4,
        format!(
            "{sizes:?} on 10-class blobs, tau {}: scaled > base in {wins}/5 seeds (base<scaled: {})",
            cfg.active_threshold,
            pairs.join(", ")
        ),
    )
}

const BLOBS_EXPERIMENT: &str = r#"
layers = [64, 32, 32, 32, 3]
seeds = [0, 1, 2, 3, 4]
base = "kaiming_normal"
[train]
lr = 0.001
batch_size = 128
[dataset]
kind = "blobs"
classes = 3
per_class = 1250
dim = 64
spread = 1.0
test_fraction = 0.2
"#;

fn epoch_loss(rec: &ExperimentRecord, seed: u64, arm: Arm, epoch: usize) -> Option<f64> {
    rec.run(seed, arm)?.epoch(epoch).map(|l| l.train_loss)
}

fn training_benefit() -> Outcome {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::from_toml(BLOBS_EXPERIMENT).unwrap();
    cfg.alpha = Some(2.0);
    cfg.train.epochs = 1;
    let rec = run_experiment(&cfg, 0).unwrap();
    let (mut base, mut scaled, mut violations) = (0.0, 0.0, 0);
    for &seed in &cfg.seeds {
        let (b, s) = match (epoch_loss(&rec, seed, Arm::Base, 1), epoch_loss(&rec, seed, Arm::Scaled, 1)) {
            (Some(b), Some(s)) => (b, s),
            _ => return verdict(false, format!("seed {seed} has no epoch-1 loss (diverged?)")),
        };
        base += b / 5.0;
        scaled += s / 5.0;
        violations += usize::from(s >= b);
    }
    let t = start.elapsed();
    verdict(
        scaled < base && violations <= 1 && within(Duration::from_secs(300), t),
        format!(
            "3000 training samples, mean epoch-1 loss base {base:.4} vs alpha=2 {scaled:.4}, \
             {violations} seed(s) against, {t:.2?} (limit 5min)"
        ),
    )
}

fn batchnorm_stability() -> Outcome {
    let mut cfg = ExperimentConfig::from_toml(BLOBS_EXPERIMENT).unwrap();
    cfg.alpha = Some(10.0);
    cfg.batchnorm = true;
    cfg.train.epochs = 3;
    let rec = run_experiment(&cfg, 0).unwrap();
    let mut bad = Vec::new();
    let mut pairs = Vec::new();
    for &seed in &cfg.seeds {
        let run = rec.run(seed, Arm::Scaled).unwrap();
        let finite = run.diverged_at.is_none() && run.logs.iter().all(|l| l.train_loss.is_finite());
        match (epoch_loss(&rec, seed, Arm::Scaled, 1), epoch_loss(&rec, seed, Arm::Scaled, 3)) {
            (Some(l1), Some(l3)) if finite && l3 < l1 => pairs.push(format!("{l1:.3}->{l3:.3}")),
            other => bad.push(format!("seed {seed}: {other:?}, diverged at {:?}", run.diverged_at)),
        }
    }
    verdict(
        bad.is_empty(),
        if bad.is_empty() {
            format!("5/5 seeds finite, epoch-1 -> epoch-3 loss: {}", pairs.join(", "))
        } else {
            bad.join("; ")
        },
    )
}

fn random_weights(rng: &mut impl Rng) -> WeightSet {
    let depth = rng.random_range(2..=6);
    let sizes: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=12)).collect();
    let mut ws = WeightSet { matrices: vec![], biases: vec![] };
    for p in sizes.windows(2) {
        let w = Array2::from_shape_fn((p[1], p[0]), |_| f64::from(rng.random::<f32>() * 8.0 - 4.0));
        ws.matrices.push(w);
        ws.biases.push(Array1::from_shape_fn(p[1], |_| f64::from(rng.random::<f32>() - 0.5)));
    }
    ws
}

fn random_record(rng: &mut impl Rng) -> ExperimentRecord {
    let mut config = ExperimentConfig::from_toml(BLOBS_EXPERIMENT).unwrap();
    config.batchnorm = rng.random();
    let mut runs = Vec::new();
    for seed in 0..rng.random_range(1..=3u64) {
        for arm in [Arm::Base, Arm::Scaled] {
            let logs = (0..rng.random_range(1..=4))
                .map(|epoch| EpochLog {
                    epoch,
                    train_loss: rng.random::<f64>() * 3.0,
                    train_accuracy: rng.random(),
                    test_accuracy: rng.random::<bool>().then(|| rng.random()),
                    emergence: EmergenceValue(BigUint::from(rng.random::<u64>()) * rng.random::<u64>()),
                    profile: ActivationProfile(vec![64, rng.random_range(0..=32), 30, 29, 3]),
                })
                .collect();
            let diverged_at = (rng.random::<f64>() < 0.2).then(|| rng.random_range(1..5));
            runs.push(RunRecord { seed, arm, logs, diverged_at });
        }
    }
    ExperimentRecord { config, alpha: rng.random::<f64>() * 10.0, created_unix_ms: rng.random(), runs }
}

fn format_round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = seeded(SEED_BASE, 11);
    for case in 0..20 {
        let ws = random_weights(&mut rng);
        let path = dir.path().join(format!("w{case}.emiw"));
        save_weights(&ws, &path).unwrap();
        let back = load_weights(&path).unwrap();
        let same = back.matrices.len() == ws.matrices.len()
            && ws.matrices.iter().zip(&back.matrices).all(|(a, b)| {
                a.dim() == b.dim() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            })
            && ws.biases == back.biases;
        if !same {
            return verdict(false, format!("weights case {case} changed across save/load"));
        }

        let rec = random_record(&mut rng);
        let log = dir.path().join(format!("r{case}.jsonl"));
        append_record(&log, &rec).unwrap();
        let read = read_logs(&log).unwrap();
        if read.records() != vec![rec] || read.dropped_partial {
            return verdict(false, format!("log case {case} changed across write/read"));
        }
    }
    pass("20 weight containers bit-exact, 20 experiment logs identical after reading back")
}

type Check = fn() -> Outcome;

fn main() -> ExitCode {
    let criteria: [(&str, Check); 11] = [
        ("oracle equivalence", oracle_equivalence),
        ("derived functor consistency", derived_functor_consistency),
        ("trivial zeros", trivial_zeros),
        ("pivot lemma", pivot_lemma),
        ("schedule correctness", schedule_correctness),
        ("alpha for a new learning rate", learning_rate_alpha),
        ("gradient oracle", gradient_oracle),
        ("emergence ordering at init", emergence_ordering_at_init),
        ("desk-scale training benefit", training_benefit),
        ("batchnorm stability at alpha=10", batchnorm_stability),
        ("format round-trips", format_round_trips),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = check();
        failed += usize::from(!out.passed);
        println!(
            "criterion {:>2} {} {name} ({:.1?}): {}",
            i + 1,
            if out.passed { "PASS" } else { "FAIL" },
            start.elapsed(),
            out.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
