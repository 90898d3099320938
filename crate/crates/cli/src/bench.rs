use std::io::Write;
use std::time::Instant;

use hdmr_core::rng::{stream, StreamTag};
use hdmr_core::selection::SelectionPath;
use hdmr_core::testbed::DiffusionGenerator;
use hdmr_core::{
    dictionary_cardinality, fit_hdmr, glars_select, relative_error, split, BasisConfig, DiffusionConfig, FitConfig,
    Group, SampleMode, SampleSet, SelectionConfig,
};
use rand::Rng;

use crate::{create, io_err, BenchArgs, CliError, CliResult, Run};

pub fn cmd_bench(a: &BenchArgs, run: &mut Run) -> CliResult<()> {
    if a.scaling {
        scaling(a, run)
    } else {
        convergence(a, run)
    }
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

fn convergence(a: &BenchArgs, run: &mut Run) -> CliResult<()> {
    if a.nq_list.is_empty() || a.seeds == 0 {
        return Err(CliError::Config("need at least one Nq and one seed".into()));
    }
    let gen = DiffusionGenerator::new(&DiffusionConfig::default())?;
    let mode = SampleMode::Point { x: 0.5 };
    let test = gen.generate(a.ntest, a.seed.wrapping_add(1_000_003), mode)?;
    let basis = BasisConfig::legendre(0.0, 1.0, a.no)?;
    let sel = SelectionConfig::default();
    let fit = FitConfig {
        no: a.no,
        ..Default::default()
    };
    run.stage("setup");
    let mut w = create(&a.out)?;
    writeln!(w, "nq,seed,eps").map_err(|e| io_err(&a.out, e))?;
    for &nq in &a.nq_list {
        let mut eps = Vec::new();
        for s in 0..a.seeds {
            let seed = a.seed.wrapping_add(s);
            let data = gen.generate(nq + nq / 4, seed.wrapping_mul(7919).wrapping_add(nq as u64), mode)?;
            let (train, val, _) = split(&data, nq, nq / 4, 0, seed)?;
            let path = glars_select(&train, &sel, &basis)?;
            let (m, _) = fit_hdmr(&train, &val, &path, &fit, &basis)?;
            let e = relative_error(&m, &test)?;
            writeln!(w, "{nq},{seed},{e}").map_err(|e| io_err(&a.out, e))?;
            eps.push(e);
        }
        println!("nq {nq} median_eps {:e}", median(eps));
        run.stage(&format!("nq={nq}"));
    }
    w.flush().map_err(|e| io_err(&a.out, e))?;
    run.output(&a.out);
    Ok(())
}

fn linear_set(nd: usize, nq: usize, seed: u64) -> hdmr_core::Result<SampleSet> {
    let mut rng = stream(seed, StreamTag::Test, nd as u64, 0);
    let xi: Vec<f64> = (0..nd * nq).map(|_| rng.gen::<f64>()).collect();
    let u = xi
        .chunks(nd)
        .map(|x| (0..8.min(nd)).map(|k| (k as f64 + 1.0) * (x[k] - 0.5)).sum::<f64>() + 3.0 * (x[0] - 0.5) * (x[1] - 0.5))
        .collect();
    SampleSet::from_xi(nd, xi, u)
}

fn scaling(a: &BenchArgs, run: &mut Run) -> CliResult<()> {
    if a.nd < 8 || a.reps == 0 || a.nq < 20 {
        return Err(CliError::Config("scaling needs nd >= 8, nq >= 20 and at least one repetition".into()));
    }
    let basis = BasisConfig::legendre(0.0, 1.0, 4)?;
    let sel = SelectionConfig {
        no_lars: 4,
        n_inter: 2,
        max_groups: 8,
        ..Default::default()
    };
    let card = |nd: usize| dictionary_cardinality(nd, 4, 2, 2, 1);
    let c1 = card(a.nd)?;
    let mut nd2 = a.nd;
    while card(nd2)? < 2 * c1 {
        nd2 += 1;
    }
    if card(nd2)? - 2 * c1 > 2 * c1 - card(nd2 - 1)? {
        nd2 -= 1;
    }
    let mut w = create(&a.out)?;
    writeln!(w, "table,nd,cardinality,seconds").map_err(|e| io_err(&a.out, e))?;
    let mut scan = Vec::new();
    for nd in [a.nd, nd2] {
        let set = linear_set(nd, a.nq, a.seed)?;
        let mut best = f64::INFINITY;
        for _ in 0..a.reps {
            best = best.min(glars_select(&set, &sel, &basis)?.total_scan_seconds());
        }
        writeln!(w, "scan,{nd},{},{best}", card(nd)?).map_err(|e| io_err(&a.out, e))?;
        scan.push(best);
    }
    run.stage("scan");

    let fit = FitConfig {
        no: 4,
        n_inter: 2,
        n_pc: 2,
        ..Default::default()
    };
    let groups: Vec<Group> = (0..8)
        .map(|k| Group::new(vec![k]))
        .chain((0..6).map(|k| Group::new(vec![k, k + 1])))
        .collect::<hdmr_core::Result<_>>()?;
    let path = SelectionPath::from_groups(&groups);
    let mut coef = Vec::new();
    for nd in [a.nd, 2 * a.nd] {
        let set = linear_set(nd, a.nq, a.seed)?;
        // no validation set, so the fitted skeleton is the same for both Nd
        let empty = SampleSet::from_xi(nd, Vec::new(), Vec::new())?;
        let mut best = f64::INFINITY;
        for _ in 0..a.reps {
            let t = Instant::now();
            fit_hdmr(&set, &empty, &path, &fit, &basis)?;
            best = best.min(t.elapsed().as_secs_f64());
        }
        writeln!(w, "coefficients,{nd},{},{best}", card(nd)?).map_err(|e| io_err(&a.out, e))?;
        coef.push(best);
    }
    run.stage("coefficients");
    w.flush().map_err(|e| io_err(&a.out, e))?;
    run.output(&a.out);
    println!("scan_ratio {:.3} (cardinality {} -> {})", scan[1] / scan[0], c1, card(nd2)?);
    println!("coefficient_ratio {:.3} (Nd {} -> {})", coef[1] / coef[0], a.nd, 2 * a.nd);
    Ok(())
}
