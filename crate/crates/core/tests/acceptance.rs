//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{
    fd_gradient, oracle_auc, oracle_eer, oracle_neighborhood, oracle_windows, random_image, Mode,
};
use iwmf_core::attacks::{run_attack, AttackConfig, AttackKind};
use iwmf_core::bench::{format_table, run_bench, BenchConfig, Pipeline};
use iwmf_core::diffusion::{
    corrupt, ddrm_denoise_traced, reverse_step, run_chain, Defense, DiffusionConfig,
    GaussianShrinkage, IdentityDenoiser, SIGMA_0,
};
use iwmf_core::eval::{
    auc, eer, far, frr, system_preset, AttackSpec, Condition, DefenseSpec, Protocol,
    ProtocolConfig, ScoredAttack,
};
use iwmf_core::filters::{
    apply_filter, apply_windows, iters_for, iwmf, mean_filter, median_filter, plan_windows,
    window_bounds, window_mean_noniter, FilterConfig, Strategy, WindowOp, WindowPlan,
};
use iwmf_core::verifier::{ExtractorSpec, ToyExtractor};
use iwmf_core::{ImageTensor, RngStream};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn filter_cfg(strategy: Strategy, lambda: f64, seed: u64) -> FilterConfig {
    FilterConfig {
        lambda,
        window_size: 3,
        strategy,
        seed,
        noise_param: 0.0,
    }
}

fn filter_oracles() -> Outcome {
    let start = Instant::now();
    let mut mismatches = 0;
    for i in 0..100u64 {
        let img = random_image(7000 + i, 3, 16, 16);
        let checks = [
            (
                iwmf(&img, &filter_cfg(Strategy::Iwmf, 0.25, i)).unwrap(),
                oracle_windows(&img, i, 0.25, 3, Mode::Iterative),
            ),
            (
                window_mean_noniter(&img, &filter_cfg(Strategy::WindowMeanNoniter, 0.25, i))
                    .unwrap(),
                oracle_windows(&img, i, 0.25, 3, Mode::NonIterative),
            ),
            (
                apply_filter(&img, &filter_cfg(Strategy::WindowMedianIter, 0.25, i)).unwrap(),
                oracle_windows(&img, i, 0.25, 3, Mode::Median),
            ),
            (
                mean_filter(&img, 3).unwrap(),
                oracle_neighborhood(&img, 3, false),
            ),
            (
                median_filter(&img, 3).unwrap(),
                oracle_neighborhood(&img, 3, true),
            ),
        ];
        mismatches += checks.iter().filter(|(a, b)| a != b).count();
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < 10.0,
        format!("{mismatches} mismatches over 5 x 100 images, {secs:.2} s"),
    )
}

fn mean_conservation() -> Outcome {
    let mut windows = 0usize;
    let mut worst_ulps = 0.0f64;
    let mut replay_ok = true;
    let mut seed = 0u64;
    while windows < 10_000 {
        let img = random_image(8000 + seed, 3, 16, 16);
        let plan = plan_windows(img.shape(), 0.25, seed);
        let mut work = img.clone();
        for (c, centers) in plan.centers.iter().enumerate() {
            for &(m, n) in centers {
                let mut single = WindowPlan {
                    centers: vec![Vec::new(); 3],
                };
                single.centers[c].push((m, n));
                let next = apply_windows(&work, &single, 3, WindowOp::IterativeMean).unwrap();
                let rows = window_bounds(m, 3, 16);
                let cols = window_bounds(n, 3, 16);
                let (mut before, mut after, mut k) = (0.0f64, 0.0f64, 0.0f64);
                for y in rows.0..rows.1 {
                    for x in cols.0..cols.1 {
                        before += work.get(c, y, x) as f64;
                        after += next.get(c, y, x) as f64;
                        k += 1.0;
                    }
                }
                let (before, after) = (before / k, after / k);
                let ulp = f32::EPSILON as f64 * before.abs().max(f32::MIN_POSITIVE as f64);
                worst_ulps = worst_ulps.max((after - before).abs() / ulp);
                work = next;
                windows += 1;
            }
        }
        replay_ok &= work == iwmf(&img, &filter_cfg(Strategy::Iwmf, 0.25, seed)).unwrap();
        seed += 1;
    }
    outcome(
        worst_ulps <= 8.0 && replay_ok,
        format!(
            "{windows} windows, worst drift {worst_ulps:.2} ulp, replay matches iwmf: {replay_ok}"
        ),
    )
}

fn first_pair_sgadv(protocol: &Protocol) -> ScoredAttack {
    let none = DefenseSpec::none().build().unwrap();
    protocol
        .craft(&AttackSpec::preset(AttackKind::Sgadv), &none)
        .unwrap()
}

fn zero_sum_cancellation(protocol: &Protocol, sgadv: &ScoredAttack) -> Outcome {
    // dyadic values keep every sum exact
    let clean = ImageTensor::from_fn(1, 3, 3, |_, y, x| (8 + 3 * y + 5 * x) as f32 / 64.0).unwrap();
    let signs = [1.0f32, -1.0, 1.0, -1.0, 0.0, 1.0, -1.0, 1.0, -1.0];
    let mut adv = clean.clone();
    for (i, s) in signs.iter().enumerate() {
        adv.set(0, i / 3, i % 3, clean.get(0, i / 3, i % 3) + s / 128.0);
    }
    let plan = WindowPlan::shared(1, vec![(1, 1)]);
    let a = apply_windows(&adv, &plan, 3, WindowOp::NonIterativeMean).unwrap();
    let b = apply_windows(&clean, &plan, 3, WindowOp::NonIterativeMean).unwrap();
    let exact = a == b && adv != clean;

    let model = protocol.model();
    let mut closer = 0;
    let n = 50.min(sgadv.adversarial.len());
    for (p, ((_, _, src), adv)) in protocol
        .attack_pairs()
        .iter()
        .zip(&sgadv.adversarial)
        .take(n)
        .enumerate()
    {
        let reference = model.first_conv_response(src).unwrap();
        let filtered = iwmf(adv, &filter_cfg(Strategy::Iwmf, 0.25, p as u64)).unwrap();
        let before = model.first_conv_response(adv).unwrap().distance(&reference);
        let after = model
            .first_conv_response(&filtered)
            .unwrap()
            .distance(&reference);
        if after < before {
            closer += 1;
        }
    }
    let frac = closer as f64 / n as f64;
    outcome(
        exact && frac >= 0.9,
        format!("zero-sum window exact: {exact}; conv response closer after IWMF in {closer}/{n}"),
    )
}

fn table_arithmetic() -> Outcome {
    let a = iters_for(0.25, 112, 112);
    let b = iters_for(0.40, 112, 112);
    let (diff, c1) = system_preset("iwmf-diff").unwrap();
    let (plain, c2) = system_preset("iwmf").unwrap();
    let (pure, c3) = system_preset("diffpure").unwrap();
    let (none, c4) = system_preset("none").unwrap();
    let sgadv = Condition::Attack("sgadv".into());
    let rows = (diff.lambda, diff.sigma_y, diff.window_size) == (0.25, Some(0.15), 3)
        && (plain.lambda, plain.sigma_y, plain.window_size) == (0.40, None, 3)
        && (pure.strategy, pure.sigma_y) == (None, Some(0.15))
        && (none.strategy, none.sigma_y) == (None, None)
        && [c1, c2, c3] == [sgadv.clone(), sgadv.clone(), sgadv]
        && c4 == Condition::Imposter
        && FilterConfig::default().window_size == 3;
    outcome(
        a == 3136 && b == 5017 && rows,
        format!("iters_for: {a}, {b}; system rows match: {rows}"),
    )
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let model = ToyExtractor::new(ExtractorSpec::with_size(16, 16), 11).unwrap();
    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let x: Vec<f64> = random_image(i, 3, 16, 16)
            .data()
            .iter()
            .map(|&v| v as f64)
            .collect();
        let target = model.extract(&random_image(100 + i, 3, 16, 16)).unwrap();
        let (_, grad, _) = model.loss_grad_f64(&x, &target).unwrap();
        let loss = |p: &[f64]| {
            let e = model.embed_f64(p).unwrap();
            e.values()
                .iter()
                .zip(target.values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let numeric = fd_gradient(loss, &x, 1e-4);
        let scale = numeric
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-12);
        let err = grad
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max)
            / scale;
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-3 && secs < 30.0,
        format!("max relative error {worst:.2e} over 20 inputs, {secs:.2} s"),
    )
}

fn attack_constraints() -> Outcome {
    let model = ToyExtractor::new(ExtractorSpec::with_size(8, 8), 21).unwrap();
    let mut rng = RngStream::new(99);
    let mut violations = 0;
    let mut worst = 0.0f64;
    for i in 0..200u64 {
        let kind = AttackKind::ALL[i as usize % AttackKind::ALL.len()];
        let cfg = AttackConfig {
            epsilon: rng.uniform(0.001, 0.1),
            alpha: rng.uniform(0.0005, 0.05),
            t_max: 1 + rng.index_below(8),
            tau_conv: 1e-4,
            eot_samples: 1 + rng.index_below(3),
            random_start: rng.index_below(2) == 1,
            seed: i,
        };
        let source = random_image(i, 3, 8, 8);
        let target = random_image(i + 1000, 3, 8, 8);
        let r = run_attack(kind, &model, &source, &target, &cfg, &Defense::iwmf(0.3, i)).unwrap();
        let dist = r.adversarial.max_abs_diff(&source).unwrap() as f64;
        worst = worst.max(dist - cfg.epsilon);
        if dist > cfg.epsilon + 1e-6 || !r.adversarial.in_unit_range() {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("{violations}/200 violations, worst Linf - eps {worst:.2e}"),
    )
}

struct SeedRun {
    far_none: f64,
    far_diff: f64,
    adaptive_fixed: f64,
    adaptive_random: f64,
}

fn toy_protocol(seed: u64) -> Protocol {
    Protocol::new(ProtocolConfig {
        model_seed: seed,
        data_seed: seed + 100,
        attack_pairs: 100,
        attacks: vec![AttackSpec::preset(AttackKind::Sgadv)],
        ..ProtocolConfig::default()
    })
    .unwrap()
}

fn sgadv_far(
    p: &Protocol,
    spec: &DefenseSpec,
    condition: &Condition,
    sg: &ScoredAttack,
) -> (f64, f64) {
    let d = spec.build().unwrap();
    let crafted = [sg.clone()];
    let (s, src) = p.score(&d, &crafted).unwrap();
    let r = p.report(&d, &s, &src, &crafted, condition).unwrap();
    (r.attacks[0].far, r.tau)
}

fn seed_run(seed: u64, p: &Protocol, sg: &ScoredAttack) -> SeedRun {
    let sgadv = Condition::Attack("sgadv".into());
    let (none, c_none) = system_preset("none").unwrap();
    let (diff, c_diff) = system_preset("iwmf-diff").unwrap();
    let (far_none, _) = sgadv_far(p, &none, &c_none, sg);
    let (far_diff, _) = sgadv_far(p, &diff.with_seed(seed), &c_diff, sg);

    let per_call = DefenseSpec::iwmf(0.25).with_seed(seed);
    let fixed = DefenseSpec {
        randomize: false,
        ..per_call.clone()
    };
    let (_, tau) = sgadv_far(p, &per_call, &sgadv, sg);
    let adaptive = AttackSpec::preset(AttackKind::AdaptiveSgadv);
    let rate = |spec: &DefenseSpec| {
        let d = spec.build().unwrap();
        let a = p.craft(&adaptive, &d).unwrap();
        let (s, _) = p.score(&d, &[a]).unwrap();
        far(&s.attacks["adaptive-sgadv"], tau).unwrap()
    };
    SeedRun {
        far_none,
        far_diff,
        adaptive_fixed: rate(&fixed),
        adaptive_random: rate(&per_call),
    }
}

fn diffusion_chain() -> Outcome {
    let img = random_image(1, 3, 8, 8);
    let mut start_ok = true;
    for (i, sigma_y) in [0.3, 0.2, 0.15, 0.1, 0.05, 0.01].into_iter().enumerate() {
        let cfg = DiffusionConfig::with_sigma_y(sigma_y, i as u64);
        let (_, trace) = ddrm_denoise_traced(&img, &cfg, None).unwrap();
        let trace = trace.unwrap();
        let nearest = cfg.schedule.as_slice()[cfg.schedule.nearest(sigma_y)];
        start_ok &= trace.sigma_start == sigma_y
            && trace.sigmas.iter().all(|&s| s < sigma_y)
            && trace
                .sigmas
                .first()
                .is_none_or(|&s| s < nearest.max(sigma_y));
    }

    let x_next = ImageTensor::filled(1, 100, 100, 0.3).unwrap();
    let y = ImageTensor::filled(1, 100, 100, 0.6).unwrap();
    let cfg = DiffusionConfig::with_sigma_y(0.15, 0);
    let mut worst_var = 0.0f64;
    for (i, sigma_t) in [0.1, 0.05, 0.01].into_iter().enumerate() {
        let out = reverse_step(
            &x_next,
            &y,
            0.15,
            sigma_t,
            &cfg,
            None,
            &mut RngStream::new(i as u64),
        )
        .unwrap();
        let v = out.data();
        let n = v.len() as f64;
        let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
        let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = (cfg.eta * sigma_t).powi(2);
        worst_var = worst_var.max((var / expected - 1.0).abs());
    }

    let (mean, std, sigma_y) = (0.5, 0.1, 0.15);
    let denoiser = GaussianShrinkage {
        prior_mean: mean,
        prior_std: std,
    };
    let prior = Normal::new(mean, std).unwrap();
    let mut wins = 0;
    for trial in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let data = (0..3 * 16 * 16)
            .map(|_| prior.sample(&mut rng) as f32)
            .collect();
        let clean = ImageTensor::new(3, 16, 16, data).unwrap();
        let y = corrupt(&clean, sigma_y, 1000 + trial).unwrap();
        let cfg = DiffusionConfig::with_sigma_y(sigma_y, trial);
        let (x0, trace) = run_chain(&y, &cfg, Some(&denoiser), &mut RngStream::new(trial)).unwrap();
        start_ok &= trace.sigma_start == sigma_y;
        if x0.clamp01().unwrap().mse(&clean).unwrap() < y.mse(&clean).unwrap() {
            wins += 1;
        }
    }
    outcome(
        start_ok && worst_var < 0.05 && wins >= 190,
        format!(
            "start at sigma_y: {start_ok}; worst variance error {:.2}%; denoised closer in {wins}/200",
            100.0 * worst_var
        ),
    )
}

fn degenerate_mode() -> Outcome {
    let img = random_image(5, 3, 200, 200);
    let cfg = DiffusionConfig::with_sigma_y(0.0, 9);
    let (out, _) = ddrm_denoise_traced(&img, &cfg, Some(&IdentityDenoiser)).unwrap();
    let close = out
        .data()
        .iter()
        .zip(img.data())
        .filter(|(a, b)| ((**a - **b) as f64).abs() <= 5.0 * SIGMA_0)
        .count();
    let frac = close as f64 / img.len() as f64;
    outcome(
        frac >= 0.9999,
        format!(
            "{:.4}% of {} elements within 5 sigma_0",
            100.0 * frac,
            img.len()
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = RngStream::new(11);
    let mut bad = 0;
    for set in 0..50 {
        let ng = 1 + rng.index_below(100);
        let ni = 1 + rng.index_below(100);
        let coarse = set % 3 == 0;
        let mut draw = |n: usize, shift: f64| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let v = rng.uniform(-0.7, 0.7) + shift;
                    let v = if coarse { (v * 10.0).round() / 10.0 } else { v };
                    v.clamp(-1.0, 1.0)
                })
                .collect()
        };
        let g = draw(ng, 0.3);
        let i = draw(ni, -0.1);
        let p = eer(&g, &i).unwrap();
        let (ofar, ofrr, oeer) = oracle_eer(&g, &i);
        let mut ok = (p.far, p.frr, p.eer) == (ofar, ofrr, oeer)
            && auc(&g, &i).unwrap() == oracle_auc(&g, &i);
        let mut ts: Vec<f64> = g.iter().chain(&i).copied().collect();
        ts.push(2.0);
        ts.push(-2.0);
        ts.sort_by(f64::total_cmp);
        for w in ts.windows(2) {
            ok &= frr(&g, w[0]).unwrap() <= frr(&g, w[1]).unwrap()
                && far(&i, w[0]).unwrap() >= far(&i, w[1]).unwrap();
        }
        if !ok {
            bad += 1;
        }
    }
    outcome(
        bad == 0,
        format!("{bad}/50 score sets disagree with the oracles"),
    )
}

fn bench_ordering() -> Outcome {
    let blur = run_bench(
        &BenchConfig {
            repeats: 5,
            threads: 1,
            ..BenchConfig::default()
        },
        &[Pipeline::Gaussian, Pipeline::Iwmf],
        &IdentityDenoiser,
    )
    .unwrap();
    let diff_pipes: Vec<Pipeline> = Pipeline::ALL
        .into_iter()
        .filter(|p| p.uses_diffusion())
        .collect();
    let diff = run_bench(
        &BenchConfig {
            repeats: 2,
            threads: 1,
            ..BenchConfig::default()
        },
        &diff_pipes,
        &IdentityDenoiser,
    )
    .unwrap();
    let all: Vec<_> = blur.iter().chain(&diff).cloned().collect();
    print!("{}", format_table(&all, BenchConfig::default().batch));
    let gaussian = blur[0].batch_stats().0;
    let iwmf = blur[1].batch_stats().0;
    let slowest_blur = gaussian.max(iwmf);
    let fastest_diff = diff
        .iter()
        .map(|t| t.batch_stats().0)
        .fold(f64::INFINITY, f64::min);
    outcome(
        iwmf > gaussian && fastest_diff >= 5.0 * slowest_blur,
        format!(
            "batch 500: IWMF {iwmf:.3} s vs Gaussian {gaussian:.3} s; fastest diffusion {fastest_diff:.2} s = {:.0}x slowest blur",
            fastest_diff / slowest_blur
        ),
    )
}

fn main() -> ExitCode {
    // cargo passes harness flags such as --list; only run on a plain invocation
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut report = |n: u32, o: Outcome| {
        println!(
            "{} criterion {n}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, o));
    };

    report(1, filter_oracles());
    report(2, mean_conservation());

    let seeds = [1u64, 2, 3];
    let protocols: Vec<Protocol> = seeds.iter().map(|&s| toy_protocol(s)).collect();
    let crafted: Vec<ScoredAttack> = protocols.iter().map(first_pair_sgadv).collect();

    report(3, zero_sum_cancellation(&protocols[0], &crafted[0]));
    report(4, table_arithmetic());
    report(5, gradient_check());
    report(6, attack_constraints());

    let runs: Vec<SeedRun> = seeds
        .iter()
        .zip(&protocols)
        .zip(&crafted)
        .map(|((&s, p), sg)| seed_run(s, p, sg))
        .collect();
    let c7 = runs
        .iter()
        .all(|r| r.far_none >= 0.9 && r.far_diff < r.far_none);
    let d7: Vec<String> = seeds
        .iter()
        .zip(&runs)
        .map(|(s, r)| {
            format!(
                "seed {s}: none {:.2}, IWMF-Diff {:.2}",
                r.far_none, r.far_diff
            )
        })
        .collect();
    report(7, outcome(c7, format!("FAR_SGADV {}", d7.join("; "))));
    let c8 = runs
        .iter()
        .all(|r| r.adaptive_fixed - r.adaptive_random >= 0.10 - 1e-12);
    let d8: Vec<String> = seeds
        .iter()
        .zip(&runs)
        .map(|(s, r)| {
            format!(
                "seed {s}: fixed {:.2}, per-call {:.2}",
                r.adaptive_fixed, r.adaptive_random
            )
        })
        .collect();
    report(
        8,
        outcome(c8, format!("adaptive SGADV success {}", d8.join("; "))),
    );

    report(9, diffusion_chain());
    report(10, degenerate_mode());
    report(11, metric_oracles());
    report(12, bench_ordering());

    let failed: Vec<u32> = results
        .iter()
        .filter(|(_, o)| !o.pass)
        .map(|(n, _)| *n)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
