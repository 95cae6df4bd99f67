// SPDX-License-Identifier: MIT OR Apache-2.0
#![allow(clippy::needless_range_loop)]

//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use assertscope::embed::{joint_probabilities, two_means};
use assertscope::localize::{sweep_borderline, Objective};
use assertscope::probe::{ablate, Probe};
use assertscope::steering::ablate_rows;
use assertscope::synth::{GROUP_HIGH_EMOTIONAL, GROUP_HIGH_LOGICAL, GROUP_LOW_EMOTIONAL, GROUP_LOW_OTHER};
use assertscope::{
    correlation_matrix, region_stats, standardize_scores, tsne, ActivationDump, PoolingMode, SampleMeta,
    Source, SteeringVector, TsneParams,
};
use assertscope_validation as oracle;
use assertscope_cli::{run_pipeline, PipelineConfig, PipelineOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn random_dump(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (ActivationDump, Vec<SampleMeta>) {
    let data: Vec<f32> = (0..n * d).map(|_| rng.random_range(-2.0f32..2.0)).collect();
    let dump = ActivationDump::new(n, 1, d, PoolingMode::Mean, data).unwrap();
    // Coarse scores so that ties, and the id tiebreak, actually occur.
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64).collect();
    let std = standardize_scores(&raw).unwrap();
    let meta = (0..n)
        .map(|i| SampleMeta {
            sample_id: format!("r{:03}", (i * 37) % 1000),
            source: Source::DATASETS[i % 5],
            raw_score: raw[i],
            std_score: std[i],
            text: None,
        })
        .collect();
    (dump, meta)
}

fn oracle_matrix(dump: &ActivationDump, meta: &[SampleMeta]) -> (Vec<String>, Vec<f64>) {
    let ids = oracle::sorted_ids(meta);
    let rows: Vec<Vec<f64>> = ids
        .iter()
        .map(|id| {
            let i = meta.iter().position(|m| &m.sample_id == id).unwrap();
            dump.vector(i, 0).iter().map(|&v| v as f64).collect()
        })
        .collect();
    (ids, oracle::correlation(&rows))
}

fn end_to_end(outcomes: &[(u64, PipelineOutcome)], seconds: f64) -> Verdict {
    let n = outcomes.len();
    let layer_ok = outcomes.iter().filter(|(_, o)| o.best_layer == 5).count();
    let split_ok = outcomes.iter().filter(|(_, o)| o.best_borderline.abs_diff(620) <= 3).count();
    let mut worst_match = f64::INFINITY;
    let mut worst_cross = 0.0f64;
    for (_, o) in outcomes {
        let truth = o.truth.as_ref().unwrap();
        let ce: Vec<f64> = o.vectors.iter().map(|v| oracle::cosine(&v.direction, &truth.emotional_axis)).collect();
        let cl: Vec<f64> = o.vectors.iter().map(|v| oracle::cosine(&v.direction, &truth.logical_axis)).collect();
        let ie = oracle::argmin(&ce.iter().map(|c| -c).collect::<Vec<_>>());
        let il = oracle::argmin(&cl.iter().map(|c| -c).collect::<Vec<_>>());
        if ie == il {
            worst_match = f64::NEG_INFINITY;
            continue;
        }
        worst_match = worst_match.min(ce[ie]).min(cl[il]);
        worst_cross = worst_cross.max(oracle::cosine(&o.vectors[ie].direction, &o.vectors[il].direction).abs());
    }
    let pass = layer_ok * 10 >= 9 * n
        && split_ok * 10 >= 9 * n
        && worst_match >= 0.95
        && worst_cross <= 0.1
        && seconds < 120.0;
    verdict(
        pass,
        format!(
            "layer 5 in {layer_ok}/{n}, split within 3 in {split_ok}/{n}, min matched cos {worst_match:.4}, \
             max |cos(e,l)| {worst_cross:.4}, {seconds:.1} s"
        ),
    )
}

fn similarity_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst_r, mut worst_g) = (0.0f64, 0.0f64);
    let mut order_ok = true;
    for _ in 0..50 {
        let n = rng.random_range(2..=64);
        let d = rng.random_range(2..=128);
        let (dump, meta) = random_dump(&mut rng, n, d);
        let sim = correlation_matrix(&dump, &meta, 0).unwrap();
        let (ids, want) = oracle_matrix(&dump, &meta);
        order_ok &= sim.sample_ids == ids;
        for (a, b) in sim.values.iter().zip(&want) {
            worst_r = worst_r.max((a - b).abs());
        }
        for b in 1..n {
            let got = region_stats(&sim, b).unwrap();
            let want = oracle::regions(&want, n, b);
            let diff = |x: Option<f64>, y: Option<f64>| match (x, y) {
                (Some(x), Some(y)) => (x - y).abs(),
                (None, None) => 0.0,
                _ => f64::INFINITY,
            };
            worst_g = worst_g
                .max((got.cross - want.cross).abs())
                .max(diff(got.within_low, want.within_low))
                .max(diff(got.within_high, want.within_high));
        }
    }
    verdict(
        order_ok && worst_r <= 1e-10 && worst_g <= 1e-12,
        format!("50 dumps, max |dr| {worst_r:.2e}, max region error {worst_g:.2e}, order match {order_ok}"),
    )
}

fn sweep_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    let mut argmin_ok = true;
    for _ in 0..40 {
        let n = rng.random_range(10..=64);
        let d = rng.random_range(4..=64);
        let (dump, meta) = random_dump(&mut rng, n, d);
        let sim = correlation_matrix(&dump, &meta, 0).unwrap();
        let min_cluster = rng.random_range(2..=n / 2);
        for (objective, contrast) in [(Objective::Cross, false), (Objective::Contrast, true)] {
            let curve = sweep_borderline(&sim, min_cluster, objective).unwrap();
            let want = oracle::sweep(&sim.values, n, min_cluster, contrast);
            argmin_ok &= curve.borderlines == want.iter().map(|w| w.0).collect::<Vec<_>>();
            for (got, w) in curve.objective.iter().zip(&want) {
                worst = worst.max((got - w.1).abs());
            }
            let values: Vec<f64> = want.iter().map(|w| w.1).collect();
            argmin_ok &= curve.best_b == want[oracle::argmin(&values)].0;
        }
    }
    verdict(worst <= 1e-9 && argmin_ok, format!("80 sweeps, max error {worst:.2e}, argmin identical {argmin_ok}"))
}

fn projection_trials() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut failures = 0;
    let mut worst_orth = 0.0f64;
    let remove = |x: &[f64], u: &[f64]| {
        let mut v = x.to_vec();
        ablate_rows(&mut [v.as_mut_slice()], u);
        v
    };
    for _ in 0..1000 {
        let d = rng.random_range(2..=256);
        let mut gauss = |s: f64| -> Vec<f64> {
            (0..d).map(|_| s * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect()
        };
        let raw = gauss(1.0);
        let x = gauss(10.0);
        let y = gauss(10.0);
        let u = SteeringVector::<f64>::from_raw("u", 0, &raw).unwrap().direction;
        let (a, b) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));

        let rx = remove(&x, &u);
        let rrx = remove(&rx, &u);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let rmix = remove(&mix, &u);
        let ry = remove(&y, &u);
        let nx = oracle_norm(&x);

        let idem = rx.iter().zip(&rrx).all(|(p, q)| (p - q).abs() <= 1e-6 * nx.max(1.0));
        let scale = a.abs() * nx + b.abs() * oracle_norm(&y);
        let lin = rmix
            .iter()
            .zip(rx.iter().zip(&ry))
            .all(|(m, (p, q))| (m - (a * p + b * q)).abs() <= 1e-6 * scale.max(1.0));
        let orth = oracle_dot(&rx, &u).abs() / nx.max(1.0);
        worst_orth = worst_orth.max(orth);
        let shrink = oracle_norm(&rx) <= nx * (1.0 + 1e-12);
        if !(idem && lin && orth <= 1e-5 && shrink) {
            failures += 1;
        }
    }
    verdict(failures == 0, format!("1000 trials, {failures} failures, max orthogonality residual {worst_orth:.2e}"))
}

fn oracle_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn oracle_norm(a: &[f64]) -> f64 {
    oracle_dot(a, a).sqrt()
}

fn tsne_checks(outcomes: &[(u64, PipelineOutcome)]) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (mut sym, mut norm, mut perp) = (0.0f64, 0.0f64, 0.0f64);
    let mut kl_ok = true;
    let mut min_purity = 1.0f64;
    let runs = 10;
    for run in 0..runs {
        // Two planted Gaussian clusters whose centers are five cluster radii
        // apart, along a random direction.
        let (n_half, d) = (15, 64);
        let sep = 5.0 * (d as f64).sqrt();
        let mut gauss = || -> Vec<f64> { (0..d).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect() };
        let u = gauss();
        let nu = oracle_norm(&u);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut truth = Vec::new();
        for c in 0..2 {
            for _ in 0..n_half {
                let mut v = gauss();
                v.iter_mut().zip(&u).for_each(|(x, ui)| *x += c as f64 * sep * ui / nu);
                rows.push(v);
                truth.push(c);
            }
        }
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let n = refs.len();
        let params = TsneParams { seed: run as u64, ..TsneParams::default() };
        let aff = joint_probabilities(&refs, params.perplexity).unwrap();
        for i in 0..n {
            sym = sym.max(aff.p[i * n + i].abs());
            for j in 0..n {
                sym = sym.max((aff.p[i * n + j] - aff.p[j * n + i]).abs());
                if aff.p[i * n + j] < 0.0 {
                    sym = f64::INFINITY;
                }
            }
        }
        norm = norm.max((aff.p.iter().sum::<f64>() - 1.0).abs());
        for &q in &aff.perplexities {
            perp = perp.max((q - params.perplexity).abs());
        }
        let ids: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let emb = tsne(&refs, &ids, &params).unwrap();
        kl_ok &= emb.kl_history.last().unwrap() <= emb.kl_history.first().unwrap();
        let pts: Vec<&[f64]> = emb.coords.iter().map(|c| c.as_slice()).collect();
        min_purity = min_purity.min(oracle::purity(&two_means(&pts), &truth));
    }
    for (_, o) in outcomes {
        kl_ok &= o.summary.tsne_kl_final <= o.summary.tsne_kl_initial;
    }
    let runs_total = runs + outcomes.len();
    verdict(
        sym <= 1e-9 && norm <= 1e-9 && perp <= 1e-3 && kl_ok && min_purity == 1.0,
        format!(
            "asymmetry {sym:.1e}, |sum P - 1| {norm:.1e}, max perplexity error {perp:.1e}, \
             KL non-increasing on {runs_total} runs: {kl_ok}, min purity {:.0}%",
            100.0 * min_purity
        ),
    )
}

fn flagged(o: &PipelineOutcome, vector: &str) -> BTreeSet<String> {
    o.reports
        .iter()
        .find(|r| r.vector == vector)
        .map(|r| r.groups.iter().filter(|g| g.flagged).map(|g| g.name.clone()).collect())
        .unwrap_or_default()
}

fn ablation_pattern(o: &PipelineOutcome) -> Verdict {
    let truth = o.truth.as_ref().unwrap();
    let best = |axis: &[f64]| {
        o.vectors
            .iter()
            .max_by(|a, b| oracle::cosine(&a.direction, axis).total_cmp(&oracle::cosine(&b.direction, axis)))
            .unwrap()
    };
    let ve = best(&truth.emotional_axis);
    let vl = best(&truth.logical_axis);
    let fe = flagged(o, &ve.label);
    let fl = flagged(o, &vl.label);
    let emo_ok = [GROUP_LOW_EMOTIONAL, GROUP_LOW_OTHER, GROUP_HIGH_EMOTIONAL].iter().all(|g| fe.contains(*g));
    let log_ok = fl.len() == 1 && fl.contains(GROUP_HIGH_LOGICAL);

    // Zero-delta identity: a probe whose weights are orthogonal to the
    // removed direction cannot change any prediction.
    let dir = &ve.direction;
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut w: Vec<f64> = (0..dir.len()).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
    let c = oracle_dot(&w, dir);
    w.iter_mut().zip(dir).for_each(|(wi, di)| *wi -= c * di);
    let probe = Probe { layer: ve.layer, weights: w, bias: 0.3, ridge_lambda: 1.0 };
    let (dump, meta, _) = assertscope::generate(&assertscope::PlantSpec::default()).unwrap();
    let labels = truth.group_labels(&meta);
    let groups = assertscope::probe::groups_from_labels(&labels);
    let report = ablate(&dump, &meta, &probe, ve, &groups).unwrap();
    let zero = report.groups.iter().map(|g| g.delta.abs()).fold(0.0, f64::max);

    let show = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join("+");
    verdict(
        emo_ok && log_ok && zero <= 1e-9,
        format!(
            "emotional removal flags [{}] (want lows and high-emotional: {emo_ok}); logical removal flags [{}] \
             (want high-logical only: {log_ok}); orthogonal-probe max |delta| {zero:.1e}",
            show(&fe),
            show(&fl)
        ),
    )
}

fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json")))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn determinism(first_dir: &Path, scratch: &Path) -> Verdict {
    let again = scratch.join("again");
    run_pipeline(&PipelineConfig::synth_default(0, &again)).unwrap();
    let a = artifacts(first_dir);
    let b = artifacts(&again);
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    verdict(
        a.len() == b.len() && !a.is_empty() && differing.is_empty(),
        format!("{} CSV/JSON artifacts compared, {} differ {:?}", a.len(), differing.len(), differing),
    )
}

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let outcomes: Vec<(u64, PipelineOutcome)> = (0..10u64)
        .map(|seed| {
            let out = scratch.path().join(format!("seed{seed}"));
            (seed, run_pipeline(&PipelineConfig::synth_default(seed, out)).unwrap())
        })
        .collect();
    let seconds = start.elapsed().as_secs_f64();

    let results = [
        ("end-to-end synthetic recovery (10 seeds)", end_to_end(&outcomes, seconds)),
        ("similarity oracle equivalence", similarity_oracle()),
        ("partition sweep oracle", sweep_oracle()),
        ("projection algebra", projection_trials()),
        ("t-SNE affinities, convergence and purity", tsne_checks(&outcomes)),
        ("ablation pattern on the default plant", ablation_pattern(&outcomes[0].1)),
        ("pipeline determinism", determinism(&scratch.path().join("seed0"), scratch.path())),
    ];
    let mut failed = 0;
    for (name, v) in &results {
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
