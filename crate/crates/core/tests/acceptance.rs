//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use hdmr_core::basis::gauss_uniform;
use hdmr_core::fitting::relative_error_values;
use hdmr_core::model::enumerate_dense_indices;
use hdmr_core::rng::{stream, StreamTag};
use hdmr_core::separated::fit_separated;
use hdmr_core::testbed::DiffusionGenerator;
use hdmr_core::*;
use rand::seq::index::sample;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// `ACCEPTANCE_ONLY=4,7` restricts the run to the listed criteria.
fn selected(id: usize) -> bool {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').any(|s| s.trim().parse() == Ok(id)),
        Err(_) => true,
    }
}

fn run(id: usize, name: &str, budget_s: Option<f64>, f: impl FnOnce() -> Outcome) -> bool {
    if !selected(id) {
        return true;
    }
    let t = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f));
    let secs = t.elapsed().as_secs_f64();
    let (mut pass, mut detail) = match res {
        Ok(o) => (o.pass, o.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let timing = match budget_s {
        Some(b) => {
            if secs > b {
                pass = false;
                detail.push_str("; over time budget");
            }
            format!("{secs:.1} s / {b} s")
        }
        None => format!("{secs:.1} s"),
    };
    println!(
        "{} criterion {id} ({name}): {detail} [{timing}]",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn uniform_germs(nd: usize, nq: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = stream(seed, StreamTag::Test, 900, 0);
    (0..nd * nq).map(|_| rng.gen_range(lo..hi)).collect()
}

fn point_cfg(nd_nu: usize, nd_f: usize) -> DiffusionConfig {
    DiffusionConfig {
        nd_nu,
        nd_f,
        ..Default::default()
    }
}

fn c1_orthonormality() -> Outcome {
    let b = BasisConfig::legendre(-1.0, 1.0, 9).unwrap();
    let (x, w) = gauss_uniform(20, -1.0, 1.0);
    let mut worst: f64 = 0.0;
    for a in 1..=10 {
        for c in 1..=10 {
            let g: f64 = x
                .iter()
                .zip(&w)
                .map(|(x, w)| w * b.eval(a, *x).unwrap() * b.eval(c, *x).unwrap())
                .sum();
            worst = worst.max((g - if a == c { 1.0 } else { 0.0 }).abs());
        }
    }
    outcome(worst < 1e-12, format!("max |G - I| = {worst:.2e}"))
}

const TABLE1: [f64; 8] = [0.1815, 0.1396, 0.0906, 0.0450, 0.0236, 0.0097, 0.0035, 0.0011];

fn c2_kl_spectrum() -> Outcome {
    let f = kl_eigendecompose(0.7, 0.3, (0.0, 1.0), 400, 8).unwrap();
    let ev = f.eigenvalues();
    let rel: Vec<f64> = ev.iter().zip(TABLE1).map(|(a, b)| (a - b).abs() / b).collect();
    let first = rel[0] <= 0.02;
    let six = rel[..6].iter().all(|r| *r <= 0.05);
    let sum: f64 = f.full_spectrum().iter().sum();
    let trace = (sum - 0.49).abs() <= 0.005 * 0.49;
    let shown: Vec<String> = ev[..6].iter().map(|v| format!("{v:.4}")).collect();
    outcome(
        first && six && trace,
        format!(
            "leading eigenvalues [{}] vs table [0.1815, 0.1396, 0.0906, 0.0450, 0.0236, 0.0097]; first rel err {:.3} (<= 0.02: {first}), first six max rel err {:.3} (<= 0.05: {six}); sum {sum:.5} (0.49 +- 0.5%: {trace})",
            shown.join(", "),
            rel[0],
            rel[..6].iter().cloned().fold(0.0, f64::max)
        ),
    )
}

fn manufactured_error(m: usize) -> f64 {
    use std::f64::consts::PI;
    let x: Vec<f64> = (0..=m).map(|j| j as f64 / m as f64).collect();
    let nu: Vec<f64> = x.iter().map(|x| 1.0 + x).collect();
    let f: Vec<f64> = x.iter().map(|x| PI * (PI * x).cos() - (1.0 + x) * PI * PI * (PI * x).sin()).collect();
    let u = solve_diffusion(&nu, &f, 0.0, 0.0, (0.0, 1.0)).unwrap();
    u.iter().zip(&x).map(|(u, x)| (u - (PI * x).sin()).abs()).fold(0.0, f64::max)
}

fn c3_solver() -> Outcome {
    let n = 513;
    let u = solve_diffusion(&vec![1.0; n], &vec![-1.0; n], 0.0, 0.0, (0.0, 1.0)).unwrap();
    let mid = (u[256] - 0.125).abs();
    let order = (manufactured_error(64) / manufactured_error(128)).log2();
    outcome(
        mid <= 1e-5 && (order - 2.0).abs() <= 0.2,
        format!("|u(0.5) - 0.125| = {mid:.1e}, observed order {order:.3}"),
    )
}

fn sparse_target(seed: u64, basis: BasisConfig) -> (HdmrModel, Vec<Group>) {
    let nd = 20;
    let mut rng = stream(seed, StreamTag::Test, 901, 0);
    let dims = sample(&mut rng, nd, 7).into_vec();
    let groups = vec![
        Group::new(vec![dims[0]]).unwrap(),
        Group::new(vec![dims[1]]).unwrap(),
        Group::new(vec![dims[2]]).unwrap(),
        Group::new(vec![dims[3], dims[4]]).unwrap(),
        Group::new(vec![dims[5], dims[6]]).unwrap(),
    ];
    let mut m = HdmrModel::constant(basis, nd, 3, 3, rng.gen_range(0.5..2.0)).unwrap();
    for g in &groups {
        let indices = enumerate_dense_indices(g.order(), 4);
        let coeffs = indices.iter().map(|_| rng.gen_range(0.5..2.0)).collect();
        m.insert_mode(Mode::Dense(DenseMode {
            group: g.clone(),
            indices,
            coeffs,
        }))
        .unwrap();
    }
    (m, groups)
}

fn c4_sparse_recovery(models: &mut Vec<HdmrModel>) -> Outcome {
    let basis = BasisConfig::legendre(0.0, 1.0, 4).unwrap();
    let sel = SelectionConfig {
        no_lars: 4,
        ..Default::default()
    };
    let fit = FitConfig {
        no: 4,
        ..Default::default()
    };
    let mut ranked = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let (truth, groups) = sparse_target(seed, basis);
        let make = |nq: usize, tag: u64| {
            let xi = uniform_germs(20, nq, seed * 10 + tag, 0.0, 1.0);
            let u = truth.evaluate_rows(&xi).unwrap();
            SampleSet::from_xi(20, xi, u).unwrap()
        };
        let (train, val, test) = (make(1000, 1), make(250, 2), make(2000, 3));
        let path = glars_select(&train, &sel, &basis).unwrap();
        let first: std::collections::BTreeSet<Group> = path.groups().into_iter().take(5).collect();
        if first == groups.iter().cloned().collect() {
            ranked += 1;
        }
        let (m, _) = fit_hdmr(&train, &val, &path, &fit, &basis).unwrap();
        worst = worst.max(relative_error(&m, &test).unwrap());
        models.push(m);
    }
    outcome(
        ranked >= 9 && worst <= 1e-8,
        format!("true groups ranked first in {ranked}/10 seeds, worst test eps {worst:.2e}"),
    )
}

fn c5_diffusion_trend(models: &mut Vec<HdmrModel>) -> Outcome {
    let cfg = point_cfg(5, 5);
    let gen = DiffusionGenerator::new(&cfg).unwrap();
    let mode = SampleMode::Point { x: 0.5 };
    let test = gen.generate(10_000, 1_000_003, mode).unwrap();
    let basis = BasisConfig::legendre(0.0, 1.0, 8).unwrap();
    let sel = SelectionConfig::default();
    let fit = FitConfig {
        no: 8,
        n_pc: 3,
        n_inter: 3,
        ..Default::default()
    };
    let mut medians = Vec::new();
    for nq in [500usize, 1000, 3000] {
        let mut eps = Vec::new();
        for seed in 0..5u64 {
            let data = gen.generate(nq + nq / 4, 7000 + seed * 31 + nq as u64, mode).unwrap();
            let (train, val, _) = split(&data, nq, nq / 4, 0, seed).unwrap();
            let path = glars_select(&train, &sel, &basis).unwrap();
            let (m, _) = fit_hdmr(&train, &val, &path, &fit, &basis).unwrap();
            eps.push(relative_error(&m, &test).unwrap());
            if seed == 0 {
                models.push(m);
            }
        }
        medians.push(median(eps));
    }
    let monotone = medians.windows(2).all(|w| w[1] <= w[0]);
    let last = medians[2] <= 1e-2;
    outcome(
        monotone && last,
        format!(
            "median eps at Nq = 500/1000/3000: {:.3e} / {:.3e} / {:.3e} (non-increasing: {monotone}, <= 1e-2 at 3000: {last})",
            medians[0], medians[1], medians[2]
        ),
    )
}

fn c6_separated() -> Outcome {
    let cfg = point_cfg(3, 3);
    let gen = DiffusionGenerator::new(&cfg).unwrap();
    let data = gen.generate(3600, 606, SampleMode::Scattered).unwrap();
    let test = gen.generate(10_000, 1_000_006, SampleMode::Scattered).unwrap();
    let (train, val, _) = split(&data, 3000, 600, 0, 6).unwrap();
    let spatial = SpatialBasis::hat(32, vec![0.0], vec![1.0]).unwrap();
    let basis = BasisConfig::legendre(0.0, 1.0, 10).unwrap();
    let sel = SelectionConfig::default();
    let fit = FitConfig {
        no: 10,
        n_pc: 3,
        n_inter: 3,
        ..Default::default()
    };
    let sep = SeparatedConfig {
        lambda_max: 2,
        ..Default::default()
    };
    let (m, _) = fit_separated(&train, &val, &spatial, &sel, &fit, &basis, &sep).unwrap();
    let eps: Vec<f64> = (0..=m.rank())
        .map(|r| {
            let pred = m.truncated(r).evaluate_rows(test.x(), test.xi()).unwrap();
            relative_error_values(&pred, test.u()).unwrap()
        })
        .collect();
    let band = (3e-3..=9e-3).contains(&eps[0]);
    let rank2 = m.rank() == 2 && eps[2] <= 1.1e-3;
    let decreasing = m.rank() == 2 && eps.windows(2).all(|w| w[1] < w[0]);
    let shown: Vec<String> = eps.iter().map(|e| format!("{e:.3e}")).collect();
    outcome(
        band && rank2 && decreasing,
        format!(
            "eps by rank [{}]; rank 0 in [3e-3, 9e-3]: {band}; rank 2 <= 1.1e-3: {rank2}; strictly decreasing: {decreasing}",
            shown.join(", ")
        ),
    )
}

fn c7_robust(models: &mut Vec<HdmrModel>) -> Outcome {
    let cfg = point_cfg(3, 2);
    let gen = DiffusionGenerator::new(&cfg).unwrap();
    let mode = SampleMode::Point { x: 0.5 };
    let test = gen.generate(5000, 1_000_007, mode).unwrap();
    let basis = BasisConfig::legendre(0.0, 1.0, 5).unwrap();
    let sel = SelectionConfig::default();
    let ls_cfg = FitConfig {
        no: 5,
        ..Default::default()
    };
    let noise = NoiseModel::new(3e-3, 0.2, 0.0, 1.0).unwrap();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let clean = gen.generate(625, 700 + seed, mode).unwrap();
        let noisy = inject_noise(&clean, &noise, seed).unwrap();
        let (train, val, _) = split(&noisy, 500, 125, 0, seed).unwrap();
        let path = glars_select(&train, &sel, &basis).unwrap();
        let (ls, _) = fit_hdmr(&train, &val, &path, &ls_cfg, &basis).unwrap();
        let rcfg = FitConfig {
            robust: Some(RobustConfig::new(noise)),
            ..ls_cfg.clone()
        };
        let (rob, _) = fit_hdmr(&train, &val, &path, &rcfg, &basis).unwrap();
        let (e_ls, e_rob) = (relative_error(&ls, &test).unwrap(), relative_error(&rob, &test).unwrap());
        if e_rob <= e_ls {
            wins += 1;
        }
        pairs.push(format!("{e_rob:.2e}/{e_ls:.2e}"));
        models.push(rob);
    }
    // degenerate noise reproduces least squares
    let clean = gen.generate(625, 777, mode).unwrap();
    let (train, val, _) = split(&clean, 500, 125, 0, 9).unwrap();
    let path = glars_select(&train, &sel, &basis).unwrap();
    let (ls, _) = fit_hdmr(&train, &val, &path, &ls_cfg, &basis).unwrap();
    let zero = FitConfig {
        robust: Some(RobustConfig::new(NoiseModel::new(0.0, 0.0, 0.0, 1.0).unwrap())),
        ..ls_cfg.clone()
    };
    let (rob, _) = fit_hdmr(&train, &val, &path, &zero, &basis).unwrap();
    let diff = coefficient_gap(&ls, &rob);
    outcome(
        wins >= 4 && diff <= 1e-8,
        format!("wTLS/LS test eps per seed [{}], wTLS wins {wins}/5; zero-noise coefficient gap {diff:.1e}", pairs.join(", ")),
    )
}

fn coefficient_gap(a: &HdmrModel, b: &HdmrModel) -> f64 {
    if a.groups().ne(b.groups()) {
        return f64::INFINITY;
    }
    let mut gap = (a.f_empty - b.f_empty).abs();
    for (ma, mb) in a.modes().zip(b.modes()) {
        match (ma, mb) {
            (Mode::Dense(x), Mode::Dense(y)) => {
                for (p, q) in x.coeffs.iter().zip(&y.coeffs) {
                    gap = gap.max((p - q).abs());
                }
            }
            (Mode::Cp(x), Mode::Cp(y)) => {
                for (p, q) in x.factors.iter().flatten().flatten().zip(y.factors.iter().flatten().flatten()) {
                    gap = gap.max((p - q).abs());
                }
            }
            _ => return f64::INFINITY,
        }
    }
    gap
}

fn c8_statistics(models: &[HdmrModel]) -> Outcome {
    let mut worst_sum: f64 = 0.0;
    let mut worst_mc: f64 = 0.0;
    let mut checked = 0;
    for (k, m) in models.iter().enumerate() {
        if m.variance() == 0.0 {
            continue;
        }
        checked += 1;
        let s: f64 = m.sobol_indices().unwrap().values().sum();
        worst_sum = worst_sum.max((s - 1.0).abs());
        let xi = uniform_germs(m.nd, 1_000_000, 5000 + k as u64, m.basis.lo, m.basis.hi);
        let v = m.evaluate_rows(&xi).unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        worst_mc = worst_mc.max((var - m.variance()).abs() / m.variance());
    }
    outcome(
        checked > 0 && worst_sum <= 1e-10 && worst_mc <= 0.01,
        format!("{checked} models: max |sum S - 1| = {worst_sum:.1e}, max MC variance rel dev {worst_mc:.2e}"),
    )
}

fn c9_scaling() -> Outcome {
    let basis = BasisConfig::legendre(0.0, 1.0, 4).unwrap();
    let sel = SelectionConfig {
        no_lars: 4,
        n_inter: 2,
        max_groups: 8,
        ..Default::default()
    };
    let nq = 1000;
    let card = |nd: usize| dictionary_cardinality(nd, 4, 2, 2, 1).unwrap();
    let nd1 = 60;
    let nd2 = (nd1..4 * nd1)
        .min_by_key(|&n| (card(n) as i128 - 2 * card(nd1) as i128).abs())
        .unwrap();
    let target = |x: &[f64]| {
        (0..8).map(|k| (k as f64 + 1.0) * (x[k] - 0.5)).sum::<f64>() + 3.0 * (x[0] - 0.5) * (x[1] - 0.5)
    };
    let data = |nd: usize| {
        let xi = uniform_germs(nd, nq, nd as u64, 0.0, 1.0);
        let u = xi.chunks(nd).map(target).collect();
        SampleSet::from_xi(nd, xi, u).unwrap()
    };
    let scan = |nd: usize| {
        let set = data(nd);
        (0..3)
            .map(|_| {
                let p = glars_select(&set, &sel, &basis).unwrap();
                assert_eq!(p.len(), 8);
                p.total_scan_seconds()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let (s1, s2) = (scan(nd1), scan(nd2));
    let scan_ratio = s2 / s1;

    let fit = FitConfig {
        no: 4,
        n_inter: 2,
        n_pc: 2,
        ..Default::default()
    };
    let groups: Vec<Group> = (0..8)
        .map(|k| Group::new(vec![k]).unwrap())
        .chain((0..6).map(|k| Group::new(vec![k, k + 1]).unwrap()))
        .collect();
    let coef = |nd: usize| {
        let set = data(nd);
        let empty = SampleSet::from_xi(nd, Vec::new(), Vec::new()).unwrap();
        let path = hdmr_core::selection::SelectionPath::from_groups(&groups);
        // no validation set: every group is fitted regardless of Nd
        (0..3)
            .map(|_| {
                let t = Instant::now();
                let (m, _) = fit_hdmr(&set, &empty, &path, &fit, &basis).unwrap();
                assert_eq!(m.n_modes(), groups.len());
                t.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let (c1, c2) = (coef(40), coef(80));
    let coef_ratio = c2 / c1;
    outcome(
        (1.5..=2.8).contains(&scan_ratio) && (0.8..=1.5).contains(&coef_ratio),
        format!(
            "scan time x{scan_ratio:.2} ({s1:.3} s -> {s2:.3} s) for card {} -> {} (Nd {nd1} -> {nd2}); coefficient time x{coef_ratio:.2} ({c1:.4} s -> {c2:.4} s) for Nd 40 -> 80",
            card(nd1),
            card(nd2)
        ),
    )
}

fn c10_determinism() -> Outcome {
    let gen = DiffusionGenerator::new(&point_cfg(3, 3)).unwrap();
    let dense = |threads: usize| -> String {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let data = gen.generate(500, 10, SampleMode::Point { x: 0.5 }).unwrap();
            let (train, val, _) = split(&data, 400, 100, 0, 10).unwrap();
            let basis = BasisConfig::legendre(0.0, 1.0, 6).unwrap();
            let sel = SelectionConfig::default();
            let fit = FitConfig {
                n_pc: 1,
                nr: 2,
                ..Default::default()
            };
            let path = glars_select(&train, &sel, &basis).unwrap();
            fit_hdmr(&train, &val, &path, &fit, &basis).unwrap().0.to_json().unwrap()
        })
    };
    let separated = |threads: usize| -> String {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let data = gen.generate(500, 11, SampleMode::Scattered).unwrap();
            let (train, val, _) = split(&data, 400, 100, 0, 11).unwrap();
            let basis = BasisConfig::legendre(0.0, 1.0, 4).unwrap();
            let fit = FitConfig {
                no: 4,
                ..Default::default()
            };
            let spatial = SpatialBasis::hat(8, vec![0.0], vec![1.0]).unwrap();
            let sep = SeparatedConfig {
                lambda_max: 2,
                ..Default::default()
            };
            fit_separated(&train, &val, &spatial, &SelectionConfig::default(), &fit, &basis, &sep)
                .unwrap()
                .0
                .to_json()
                .unwrap()
        })
    };
    let d: Vec<String> = [1, 2, 4, 7].iter().map(|&t| dense(t)).collect();
    let s: Vec<String> = [1, 3, 8].iter().map(|&t| separated(t)).collect();
    let same_d = d.iter().all(|x| *x == d[0]);
    let same_s = s.iter().all(|x| *x == s[0]);
    outcome(
        same_d && same_s,
        format!("dense model files identical over 1/2/4/7 workers: {same_d}; separated over 1/3/8 workers: {same_s}"),
    )
}

#[test]
fn acceptance() {
    let mut models = Vec::new();
    let mut ok = true;
    ok &= run(1, "basis orthonormality", Some(1.0), c1_orthonormality);
    ok &= run(2, "KL spectrum", Some(5.0), c2_kl_spectrum);
    ok &= run(3, "diffusion solver", Some(1.0), c3_solver);
    ok &= run(4, "sparse recovery", Some(30.0), || c4_sparse_recovery(&mut models));
    ok &= run(5, "random-variable convergence trend", Some(600.0), || c5_diffusion_trend(&mut models));
    ok &= run(6, "separated random-field error", Some(900.0), c6_separated);
    ok &= run(7, "robust estimation", None, || c7_robust(&mut models));
    ok &= run(8, "statistics consistency", None, || c8_statistics(&models));
    ok &= run(9, "scaling", None, c9_scaling);
    ok &= run(10, "determinism", None, c10_determinism);
    assert!(ok, "acceptance criteria failed; see the FAIL lines above");
}
