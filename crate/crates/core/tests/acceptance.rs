//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use recaudit::classify::{ClassificationFile, ClassifiedCatalog, Taxonomy};
use recaudit::pipeline::{classify_files, RunConfigFile};
use recaudit::recommenders::{mf_gradient, mf_sgd_step, rec_init, Algorithm, RecommenderConfig};
use recaudit::riskeval::{
    build_report, exposure_shares, gini, js_divergence, permutation_null, trend_slope, ReportOptions,
};
use recaudit::rng::{substream, Key};
use recaudit::simulate::{
    choose_position_cascade, choose_utility_multinomial, ChoiceModelConfig, ChoiceVariant,
    DynamicsConfig, ExposureLog, Simulation, SimulationConfig, Sweep,
};
use recaudit::synthgen::{make_marginal_pair, CohortSpec, Prior, PriorKind, SyntheticUser};

type Check = Result<String, String>;

fn toy(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy").join(name)
}

fn toy_catalog() -> ClassifiedCatalog {
    classify_files(
        &toy("catalog.csv"),
        None,
        &toy("taxonomy.txt"),
        &toy("lexicon.csv"),
        Some(&toy("labels.csv")),
    )
    .expect("toy fixture classifies")
    .catalog()
    .expect("toy catalog")
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---- 1. determinism ----

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let out = |n: &str| dir.path().join(n);
    for name in ["a.jsonl", "b.jsonl"] {
        let status = Command::new(env!("CARGO_BIN_EXE_recaudit"))
            .args(["simulate", "--config"])
            .arg(toy("config.json"))
            .args(["--seed", "7", "--out"])
            .arg(out(name))
            .status()
            .map_err(err)?;
        ensure(status.success(), format!("simulate exited with {status}"))?;
    }
    let a = std::fs::read(out("a.jsonl")).map_err(err)?;
    let b = std::fs::read(out("b.jsonl")).map_err(err)?;
    ensure(a == b, "two invocations produced different logs")?;

    let cfg = RunConfigFile::load(&toy("config.json")).map_err(err)?;
    let inputs = cfg.load_inputs().map_err(err)?;
    let mut logs = Vec::new();
    for sweep in [Sweep::Sequential, Sweep::Parallel, Sweep::Reverse] {
        let log = Simulation::new(&cfg.simulation, &inputs.catalog)
            .co_engagement(inputs.co_engagement.as_ref())
            .sweep(sweep)
            .run()
            .map_err(err)?;
        logs.push(log.to_jsonl());
    }
    ensure(logs.iter().all(|l| *l == a), "sweep order changed the log")?;
    Ok(format!("2 cli runs + sequential/parallel/reverse sweeps identical ({} bytes)", a.len()))
}

// ---- 2. choice-model frequencies ----

fn within_4_sigma(counts: &[u64], probs: &[f64], n: u64) -> Result<String, String> {
    let mut parts = Vec::new();
    for (c, p) in counts.iter().zip(probs) {
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        let z = (*c as f64 - mean) / sd;
        ensure(z.abs() <= 4.0, format!("count {c} vs expected {mean} is {z:.2} sd away"))?;
        parts.push(format!("{:.4}", *c as f64 / n as f64));
    }
    Ok(parts.join("/"))
}

fn choice_models() -> Check {
    const N: u64 = 100_000;
    let mut rng = substream(2024, &[Key::Str("cascade")]);
    let mut counts = [0u64; 3];
    for _ in 0..N {
        match choose_position_cascade(&[0.5, 0.5], 1.0, &mut rng) {
            Some(r) => counts[r - 1] += 1,
            None => counts[2] += 1,
        }
    }
    let cascade = within_4_sigma(&counts, &[0.5, 0.25, 0.25], N)?;

    let mut rng = substream(2024, &[Key::Str("multinomial")]);
    let mut counts = [0u64; 3];
    for _ in 0..N {
        match choose_utility_multinomial(&[0.6, 0.2], 0.5, 0.1, &mut rng) {
            Some(r) => counts[r - 1] += 1,
            None => counts[2] += 1,
        }
    }
    let multi = within_4_sigma(&counts, &[0.75, 0.125, 0.125], N)?;
    Ok(format!("cascade {cascade}, multinomial {multi} (rank1/rank2/none, n={N})"))
}

// ---- 3. MF gradient ----

fn squared_loss(u: &[f64], v: &[f64], r: f64, reg: f64) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum();
    let nv: f64 = v.iter().map(|a| a * a).sum();
    0.5 * (r - dot) * (r - dot) + 0.5 * reg * (nu + nv)
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn mf_gradient_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(1..=8);
        let u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = if rng.random::<bool>() { 1.0 } else { 0.0 };
        let reg = rng.random_range(0.0..0.5);
        let h = 1e-5;
        let fd = |x: &[f64], which_u: bool| -> Vec<f64> {
            (0..d)
                .map(|k| {
                    let mut p = x.to_vec();
                    let mut m = x.to_vec();
                    p[k] += h;
                    m[k] -= h;
                    let (lp, lm) = if which_u {
                        (squared_loss(&p, &v, r, reg), squared_loss(&m, &v, r, reg))
                    } else {
                        (squared_loss(&u, &p, r, reg), squared_loss(&u, &m, r, reg))
                    };
                    (lp - lm) / (2.0 * h)
                })
                .collect()
        };
        let (fd_u, fd_v) = (fd(&u, true), fd(&v, false));
        let (gu, gv) = mf_gradient(&u, &v, r, reg);
        // the applied SGD step must move along the same gradient
        let lr = 0.01;
        let (mut su, mut sv) = (u.clone(), v.clone());
        mf_sgd_step(&mut su, &mut sv, r, lr, reg);
        let step_u: Vec<f64> = su.iter().zip(&u).map(|(a, b)| (b - a) / lr).collect();
        let step_v: Vec<f64> = sv.iter().zip(&v).map(|(a, b)| (b - a) / lr).collect();
        for e in [
            rel_error(&gu, &fd_u),
            rel_error(&gv, &fd_v),
            rel_error(&step_u, &fd_u),
            rel_error(&step_v, &fd_v),
        ] {
            worst = worst.max(e);
        }
    }
    ensure(worst < 1e-4, format!("max relative error {worst:.3e}"))?;
    Ok(format!("100 points, d<=8, max relative error {worst:.2e}"))
}

// ---- 4. recommender oracles ----

struct Instance {
    n_items: usize,
    histories: Vec<Vec<usize>>,
    steps: Vec<Vec<(usize, usize)>>,
    k: usize,
    k_neighbors: usize,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n_items = rng.random_range(2..=100);
    let n_users = rng.random_range(1..=20);
    let histories: Vec<Vec<usize>> = (0..n_users)
        .map(|_| (0..rng.random_range(0..8)).map(|_| rng.random_range(0..n_items)).collect())
        .collect();
    let mut consumed: Vec<BTreeSet<usize>> = histories.iter().map(|h| h.iter().copied().collect()).collect();
    let mut steps = Vec::new();
    for _ in 0..rng.random_range(0..6) {
        let mut step = Vec::new();
        for (u, set) in consumed.iter_mut().enumerate() {
            let free: Vec<usize> = (0..n_items).filter(|i| !set.contains(i)).collect();
            if !free.is_empty() && rng.random::<f64>() < 0.5 {
                let i = free[rng.random_range(0..free.len())];
                set.insert(i);
                step.push((u, i));
            }
        }
        steps.push(step);
    }
    let k = rng.random_range(1..=12);
    let k_neighbors = if rng.random::<bool>() { rng.random_range(1..=30) } else { 10_000 };
    Instance { n_items, histories, steps, k, k_neighbors }
}

fn consumed_after(inst: &Instance) -> Vec<BTreeSet<usize>> {
    let mut sets: Vec<BTreeSet<usize>> = inst.histories.iter().map(|h| h.iter().copied().collect()).collect();
    for (u, i) in inst.steps.iter().flatten() {
        sets[*u].insert(*i);
    }
    sets
}

fn rank_by(scores: &[(usize, f64)], k: usize) -> Vec<usize> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));
    v.into_iter().take(k).map(|(i, _)| i).collect()
}

fn popularity_oracle(inst: &Instance, user: usize) -> Vec<usize> {
    let sets = consumed_after(inst);
    let mut counts = vec![0.0; inst.n_items];
    for i in inst.histories.iter().flatten().chain(inst.steps.iter().flatten().map(|(_, i)| i)) {
        counts[*i] += 1.0;
    }
    let eligible: Vec<(usize, f64)> = (0..inst.n_items)
        .filter(|i| !sets[user].contains(i))
        .map(|i| (i, counts[i]))
        .collect();
    rank_by(&eligible, inst.k)
}

fn knn_oracle(inst: &Instance, user: usize) -> Vec<usize> {
    let sets = consumed_after(inst);
    let incidence = |i: usize| -> Vec<f64> {
        sets.iter().map(|s| if s.contains(&i) { 1.0 } else { 0.0 }).collect()
    };
    let cols: Vec<Vec<f64>> = (0..inst.n_items).map(incidence).collect();
    let cosine = |i: usize, j: usize| -> f64 {
        let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
        let ni: f64 = cols[i].iter().map(|a| a * a).sum();
        let nj: f64 = cols[j].iter().map(|a| a * a).sum();
        if ni == 0.0 || nj == 0.0 {
            0.0
        } else {
            dot / (ni * nj).sqrt()
        }
    };
    let score = |i: usize| -> f64 {
        // the k_neighbors most similar items to i (positive similarity)
        let mut nb: Vec<(usize, f64)> = (0..inst.n_items)
            .filter(|&j| j != i)
            .map(|j| (j, cosine(i, j)))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        nb.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));
        nb.truncate(inst.k_neighbors);
        let keep: BTreeSet<usize> = nb.iter().map(|(j, _)| *j).collect();
        sets[user].iter().filter(|j| keep.contains(j)).map(|&j| cosine(i, j)).sum()
    };
    let eligible: Vec<(usize, f64)> = (0..inst.n_items)
        .filter(|i| !sets[user].contains(i))
        .map(|i| (i, score(i)))
        .collect();
    rank_by(&eligible, inst.k)
}

fn recommender_slates(inst: &Instance, algorithm: Algorithm) -> Result<Vec<Vec<usize>>, String> {
    let taxonomy = Taxonomy::new(["a", "b"]).map_err(err)?;
    let catalog = ClassifiedCatalog::new(
        taxonomy,
        (0..inst.n_items).map(|i| (format!("item{i:03}"), if i % 3 == 0 { "a" } else { "b" }.to_string())),
    )
    .map_err(err)?;
    let users: Vec<SyntheticUser> = inst
        .histories
        .iter()
        .enumerate()
        .map(|(u, h)| SyntheticUser {
            user_id: format!("u{u:02}"),
            cohort: "c".into(),
            stream_id: format!("c-{u}"),
            interest: vec![0.5, 0.5, 0.0],
            p_active: 1.0,
            history: h.iter().map(|&i| catalog.item_id(i).to_string()).collect(),
        })
        .collect();
    let mut config = RecommenderConfig::with_algorithm(algorithm);
    config.k_neighbors = inst.k_neighbors;
    let mut state = rec_init(&config, &catalog, &users, None, 1).map_err(err)?;
    for (t, step) in inst.steps.iter().enumerate() {
        state.update_indices(t as u64 + 1, step);
    }
    let mut rng = substream(1, &[]);
    Ok((0..users.len()).map(|u| state.recommend_index(u, inst.k, &mut rng)).collect())
}

fn recommender_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut slates = 0;
    let mut untruncated = 0;
    for n in 0..200 {
        let inst = random_instance(&mut rng);
        untruncated += usize::from(inst.k_neighbors >= inst.n_items);
        let pop = recommender_slates(&inst, Algorithm::Popularity)?;
        let knn = recommender_slates(&inst, Algorithm::ItemKnn)?;
        for u in 0..inst.histories.len() {
            ensure(pop[u] == popularity_oracle(&inst, u), format!("popularity mismatch, instance {n} user {u}"))?;
            ensure(knn[u] == knn_oracle(&inst, u), format!("item-kNN mismatch, instance {n} user {u}"))?;
            slates += 2;
        }
    }
    Ok(format!("200 instances, {slates} slates equal ({untruncated} with untruncated neighbourhoods)"))
}

// ---- 5. metric units ----

fn metric_units() -> Check {
    let g = gini(&[0.0, 0.0, 0.0, 1.0]).map_err(err)?;
    ensure(g == 0.75, format!("gini = {g}"))?;
    let d = js_divergence(&[1.0, 0.0], &[0.0, 1.0]).map_err(err)?;
    ensure(d == 1.0, format!("disjoint jsd = {d}"))?;
    let kl_p = 0.5 * (0.5f64 / 0.75).log2() + 0.5 * (0.5f64 / 0.25).log2();
    let kl_q = (1.0f64 / 0.75).log2();
    let expected = 0.5 * kl_p + 0.5 * kl_q;
    let d = js_divergence(&[0.5, 0.5], &[1.0, 0.0]).map_err(err)?;
    ensure((d - expected).abs() <= 1e-9, format!("jsd = {d}, expected {expected}"))?;
    let s = trend_slope(&[Some(0.0), Some(1.0), Some(2.0)]).map_err(err)?;
    ensure(s == 1.0, format!("slope = {s}"))?;
    Ok(format!("gini 0.75, jsd 1.0, jsd {d:.6} (|diff| {:.1e}), slope 1.0", (d - expected).abs()))
}

// ---- 6. normalization suite ----

fn random_toy_config(rng: &mut ChaCha8Rng, base: &SimulationConfig) -> SimulationConfig {
    let mut cfg = base.clone();
    cfg.seed = rng.random();
    let algos = [Algorithm::Random, Algorithm::Popularity, Algorithm::ItemKnn, Algorithm::MatrixFactorization];
    cfg.recommender = RecommenderConfig::with_algorithm(algos[rng.random_range(0..4)]);
    cfg.recommender.k_neighbors = rng.random_range(1..=30);
    cfg.recommender.epochs_init = rng.random_range(0..=3);
    cfg.choice = ChoiceModelConfig {
        variant: if rng.random::<bool>() { ChoiceVariant::PositionCascade } else { ChoiceVariant::UtilityMultinomial },
        gamma: rng.random_range(0.0..=1.0),
        w0: rng.random_range(0.0..1.0),
    };
    cfg.dynamics = DynamicsConfig { eta_drift: rng.random_range(0.0..=1.0) };
    cfg.k = rng.random_range(1..=10);
    for c in &mut cfg.cohorts {
        c.p_active = rng.random_range(0.0..=1.0);
        c.n_hist = rng.random_range(0..=10);
    }
    cfg
}

fn normalization_suite() -> Check {
    let catalog = toy_catalog();
    let base = RunConfigFile::load(&toy("config.json")).map_err(err)?.simulation;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let configs: Vec<(SimulationConfig, usize)> = (0..1000)
        .map(|_| {
            let c = random_toy_config(&mut rng, &base);
            (c, rng.random_range(1..=12))
        })
        .collect();
    let results: Vec<Result<(usize, usize), String>> = configs
        .par_iter()
        .enumerate()
        .map(|(n, (cfg, window))| {
            let mut worst_interest: f64 = 0.0;
            let mut negative = false;
            let log = Simulation::new(cfg, &catalog)
                .sweep(Sweep::Sequential)
                .run_observed(|_, users| {
                    for u in users {
                        worst_interest = worst_interest.max((u.interest.iter().sum::<f64>() - 1.0).abs());
                        negative |= u.interest.iter().any(|x| *x < 0.0);
                    }
                })
                .map_err(|e| format!("run {n}: {e}"))?;
            ensure(!negative && worst_interest <= 1e-9, format!("run {n}: interest off simplex by {worst_interest:.2e}"))?;
            let mut rows = 0;
            for c in &log.header.cohorts {
                let series = exposure_shares(&log, &c.name, *window).map_err(err)?;
                for r in series.rows.iter().filter_map(|r| r.shares.as_ref()) {
                    let sum: f64 = r.iter().sum();
                    ensure((sum - 1.0).abs() <= 1e-9, format!("run {n}: share row sums to {sum}"))?;
                    rows += 1;
                }
            }
            Ok((rows, log.records.len()))
        })
        .collect();
    let mut rows = 0;
    let mut records = 0;
    for r in results {
        let (a, b) = r?;
        rows += a;
        records += b;
    }
    Ok(format!("1000 runs, {records} records, {rows} non-empty share rows"))
}

// ---- shared desk-scale fixture for 7 and 8: 200 items, 100 users ----

fn desk_catalog() -> ClassifiedCatalog {
    let taxonomy = Taxonomy::new(["news", "sports", "music", "harmful"]).expect("taxonomy");
    let cats = ["news", "sports", "music", "harmful"];
    ClassifiedCatalog::new(
        taxonomy,
        (0..200).map(|i| (format!("item{i:03}"), cats[i % 4].to_string())),
    )
    .expect("catalog")
}

fn cohort(name: &str, size: usize, alpha: [f64; 4]) -> CohortSpec {
    CohortSpec {
        name: name.into(),
        size,
        prior: Prior { kind: PriorKind::Dirichlet, values: alpha.to_vec() },
        p_active: 0.7,
        n_hist: 5,
        perturbation: None,
        stream: None,
    }
}

fn desk_config(seed: u64, algorithm: Algorithm, cohorts: Vec<CohortSpec>) -> SimulationConfig {
    SimulationConfig {
        steps: 100,
        k: 5,
        seed,
        recommender: RecommenderConfig::with_algorithm(algorithm),
        choice: ChoiceModelConfig::default(),
        dynamics: DynamicsConfig { eta_drift: 0.1 },
        cohorts,
    }
}

fn run(cfg: &SimulationConfig, catalog: &ClassifiedCatalog) -> Result<ExposureLog, String> {
    Simulation::new(cfg, catalog).run().map_err(err)
}

fn final_gini(log: &ExposureLog) -> Result<f64, String> {
    let report = build_report(log, &ReportOptions::default()).map_err(err)?;
    report.item_concentration.final_window_gini.ok_or_else(|| "no final window".to_string())
}

fn feedback_loop_direction() -> Check {
    let catalog = desk_catalog();
    let cohorts = vec![cohort("a", 50, [1.0, 4.0, 1.0, 0.5]), cohort("b", 50, [2.0, 2.0, 2.0, 1.0])];
    let outcomes: Vec<Result<(f64, f64), String>> = (1..=10u64)
        .into_par_iter()
        .map(|seed| {
            let pop = run(&desk_config(seed, Algorithm::Popularity, cohorts.clone()), &catalog)?;
            let rnd = run(&desk_config(seed, Algorithm::Random, cohorts.clone()), &catalog)?;
            Ok((final_gini(&pop)?, final_gini(&rnd)?))
        })
        .collect();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for o in outcomes {
        let (p, r) = o?;
        wins += usize::from(p > r);
        pairs.push(format!("{p:.3}>{r:.3}"));
    }
    ensure(wins >= 9, format!("popularity above random in {wins}/10 seeds: {}", pairs.join(" ")))?;
    Ok(format!("popularity Gini above random in {wins}/10 seeds (e.g. {})", pairs[0]))
}

// ---- 8. marginal-pair sensitivity ----

fn pair_trajectory(log: &ExposureLog) -> Result<Vec<Option<f64>>, String> {
    let report = build_report(log, &ReportOptions::default()).map_err(err)?;
    let d = report.divergence.ok_or("report has no divergence section")?;
    Ok(d[0].trajectory.clone())
}

fn marginal_pair_sensitivity() -> Check {
    let catalog = desk_catalog();
    let (ctrl, pert) = make_marginal_pair(&cohort("base", 50, [2.0, 2.0, 2.0, 1.0]), "harmful", 0.05).map_err(err)?;
    let cohorts = vec![ctrl, pert];
    let outcomes: Vec<Result<(bool, bool, String), String>> = (1..=10u64)
        .into_par_iter()
        .map(|seed| {
            let knn = run(&desk_config(seed, Algorithm::ItemKnn, cohorts.clone()), &catalog)?;
            let traj = pair_trajectory(&knn)?;
            let first = traj.first().copied().flatten().ok_or("empty first window")?;
            let last = traj.last().copied().flatten().ok_or("empty final window")?;

            let rnd = run(&desk_config(seed, Algorithm::Random, cohorts.clone()), &catalog)?;
            let windows = traj.len();
            let window = (rnd.header.steps as usize).div_ceil(windows);
            let band = permutation_null(&rnd, "base-ctrl", "base-perturbed", window, windows - 1, 200, seed)
                .map_err(err)?;
            Ok((
                last > first,
                band.contains_observed(),
                format!("knn {first:.4}->{last:.4}, random {:.4}<= {:.4}", band.observed, band.upper()),
            ))
        })
        .collect();
    let (mut grew, mut in_band) = (0, 0);
    let mut notes = Vec::new();
    let mut misses = Vec::new();
    for (seed, o) in (1..=10u64).zip(outcomes) {
        let (g, b, note) = o?;
        grew += usize::from(g);
        in_band += usize::from(b);
        if !(g && b) {
            misses.push(format!("seed {seed}: {note}"));
        }
        notes.push(note);
    }
    ensure(
        grew >= 9 && in_band >= 9,
        format!("kNN divergence grew in {grew}/10, random within null band in {in_band}/10; {}", notes.join("; ")),
    )?;
    Ok(format!(
        "kNN divergence grew in {grew}/10 seeds, random within null band in {in_band}/10 ({}){}",
        notes[0],
        if misses.is_empty() { String::new() } else { format!("; misses: {}", misses.join("; ")) }
    ))
}

// ---- 9. pipeline closure and service equivalence ----

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_recaudit")).args(args).output().map_err(err)?;
    ensure(
        out.status.success(),
        format!("`recaudit {}` exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr)),
    )
}

async fn call(state: &recaudit::service::AppState, method: &str, uri: &str, body: Option<Value>) -> Result<(u16, Vec<u8>), String> {
    use http_body_util::BodyExt;
    use tower::ServiceExt;
    let req = axum::http::Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req.header("content-type", "application/json").body(axum::body::Body::from(v.to_string())),
        None => req.body(axum::body::Body::empty()),
    }
    .map_err(err)?;
    let resp = recaudit::service::router(state.clone()).oneshot(req).await.map_err(err)?;
    let status = resp.status().as_u16();
    let bytes = resp.into_body().collect().await.map_err(err)?.to_bytes().to_vec();
    Ok((status, bytes))
}

fn pipeline_and_service() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    let t = |n: &str| toy(n).to_string_lossy().into_owned();

    cli(&["classify", "--catalog", &t("catalog.csv"), "--taxonomy", &t("taxonomy.txt"), "--lexicon", &t("lexicon.csv"), "--labels", &t("labels.csv"), "--out", &p("cls.json")])?;
    let base: Value = serde_json::from_str(&std::fs::read_to_string(toy("config.json")).map_err(err)?).map_err(err)?;
    let specs = base["simulation"]["cohorts"].clone();
    std::fs::write(p("cohorts.json"), specs.to_string()).map_err(err)?;
    let seed = base["simulation"]["seed"].as_u64().ok_or("seed")?;
    cli(&["cohort", "gen", "--spec", &p("cohorts.json"), "--classification", &p("cls.json"), "--seed", &seed.to_string(), "--out", &p("users.json")])?;
    let mut config = base.clone();
    for key in ["catalog", "taxonomy", "lexicon", "labels"] {
        config.as_object_mut().ok_or("config")?.remove(key);
    }
    config["classification"] = json!(p("cls.json"));
    config["interactions"] = json!(t("interactions.csv"));
    config["users"] = json!(p("users.json"));
    std::fs::write(p("config.json"), config.to_string()).map_err(err)?;
    cli(&["simulate", "--config", &p("config.json"), "--seed", &seed.to_string(), "--out", &p("log.jsonl")])?;
    cli(&["evaluate", "--log", &p("log.jsonl"), "--config", &p("config.json"), "--out", &p("report.json")])?;
    cli(&["report", "render", "--report", &p("report.json"), "--out", &p("report.md")])?;
    let cli_log = std::fs::read(p("log.jsonl")).map_err(err)?;
    let cli_report = std::fs::read(p("report.json")).map_err(err)?;

    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(err)?;
    let (log, report) = rt.block_on(async {
        let state = recaudit::service::start(dir.path().join("store"), 1, 8).map_err(err)?;
        let read = |n: &str| std::fs::read_to_string(toy(n)).map_err(err);
        let uploads = [
            ("/datasets", json!({ "name": "toy", "catalog": read("catalog.csv")?, "interactions": read("interactions.csv")?, "labels": read("labels.csv")? })),
            ("/taxonomies", json!({ "name": "toy", "taxonomy": read("taxonomy.txt")?, "lexicon": read("lexicon.csv")? })),
        ];
        for (uri, body) in uploads {
            let (s, b) = call(&state, "POST", uri, Some(body)).await?;
            ensure(s == 201, format!("POST {uri} -> {s}: {}", String::from_utf8_lossy(&b)))?;
        }
        let mut ids = Vec::new();
        for spec in specs.as_array().ok_or("cohorts")? {
            let (s, b) = call(&state, "POST", "/cohorts", Some(spec.clone())).await?;
            ensure(s == 201, format!("POST /cohorts -> {s}: {}", String::from_utf8_lossy(&b)))?;
            ids.push(spec["name"].clone());
        }
        let mut simulation = base["simulation"].clone();
        simulation["cohorts"] = json!([]);
        let body = json!({ "dataset": "toy", "taxonomy": "toy", "cohorts": ids, "simulation": simulation, "report": base["report"] });
        let (s, b) = call(&state, "POST", "/runs", Some(body)).await?;
        ensure(s == 202, format!("POST /runs -> {s}: {}", String::from_utf8_lossy(&b)))?;
        let id = serde_json::from_slice::<Value>(&b).map_err(err)?["run_id"].as_str().ok_or("run_id")?.to_string();
        let deadline = Instant::now() + Duration::from_secs(120);
        loop {
            let (_, b) = call(&state, "GET", &format!("/runs/{id}"), None).await?;
            let rec: Value = serde_json::from_slice(&b).map_err(err)?;
            match rec["status"].as_str() {
                Some("done") => break,
                Some("failed") => return Err(format!("service run failed: {}", rec["error_message"])),
                _ => {}
            }
            ensure(Instant::now() < deadline, "service run timed out")?;
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        let (_, log) = call(&state, "GET", &format!("/runs/{id}/log"), None).await?;
        let (_, report) = call(&state, "GET", &format!("/runs/{id}/report"), None).await?;
        Ok::<_, String>((log, report))
    })?;
    ensure(log == cli_log, "service log differs from cli log")?;
    ensure(report == cli_report, "service report differs from cli report")?;
    let parsed = recaudit::riskeval::RiskReport::from_json(std::str::from_utf8(&report).map_err(err)?).map_err(err)?;
    let _ = ClassificationFile::load(Path::new(&p("cls.json"))).map_err(err)?;
    Ok(format!(
        "classify/cohort gen/simulate/evaluate/render exit 0; service log ({} B) and report ({} B, {} windows) byte-identical",
        log.len(),
        report.len(),
        parsed.metadata.windows
    ))
}

fn main() {
    type Criterion = (u8, &'static str, fn() -> Check, Option<u64>);
    let criteria: [Criterion; 9] = [
        (1, "determinism", determinism, Some(10)),
        (2, "choice-model frequencies", choice_models, Some(5)),
        (3, "MF gradient check", mf_gradient_check, Some(1)),
        (4, "recommender oracles", recommender_oracles, Some(5)),
        (5, "metric units", metric_units, None),
        (6, "normalization suite", normalization_suite, None),
        (7, "feedback-loop direction", feedback_loop_direction, Some(60)),
        (8, "marginal-pair sensitivity", marginal_pair_sensitivity, Some(120)),
        (9, "pipeline closure and service equivalence", pipeline_and_service, None),
    ];
    let filter: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check, budget) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        let over = budget.is_some_and(|b| secs >= b as f64);
        let time = match budget {
            Some(b) => format!("{secs:.2}s of {b}s"),
            None => format!("{secs:.2}s"),
        };
        let (ok, detail) = match outcome {
            Ok(d) if over => (false, format!("{d}; over runtime budget")),
            Ok(d) => (true, d),
            Err(e) => (false, e),
        };
        failed += usize::from(!ok);
        println!("criterion {id} {} {name}: {detail} [{time}]", if ok { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
