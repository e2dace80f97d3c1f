//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the
//! process fails if any criterion fails.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;

use dpsqlp::accountant::{
    calibrate_sigma, group_privacy, tree_levels, tree_rho, zcdp_to_dp_closed, zcdp_to_dp_tight, DpBudget, ZcdpBudget,
};
use dpsqlp::bench::{compare_engines, generate_synthetic, sweep_contribution_bound, EngineKind, SynthParams, UtilityReport};
use dpsqlp::bounding::{bound_contributions, Record, SensitivityConfig, UserBudgetTable};
use dpsqlp::dptree::{honaker_node_variance, prefix_value_from, TreeState};
use dpsqlp::engine::{
    run_pipeline, split_into_batches, Engine, FaultPlan, FaultPoint, JsonLinesSink, MemorySink, NoiseOverrides, PipelineConfig,
    StateStore, WindowSpec,
};
use dpsqlp::keyselect::{spawn_tree_at, KeySelectionState, SelectionParams};
use dpsqlp::noise::{indexed_seed, rng_from};
use dpsqlp::Error;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Random in-order stream inside window `[0, len)`.
fn random_stream(seed: u64, n: usize, keys: u32, users: u32, len: i64, dyadic: bool) -> Vec<Record> {
    let mut rng = rng_from(seed);
    let mut ts: Vec<i64> = (0..n).map(|_| rng.random_range(0..len)).collect();
    ts.sort_unstable();
    ts.into_iter()
        .map(|t| {
            let key = format!("k{}", rng.random_range(0..keys));
            let user = format!("u{}", rng.random_range(0..users));
            let value = if dyadic { rng.random_range(-12i32..=12) as f64 * 0.25 } else { 1.0 };
            Record::new(key, value, t, user)
        })
        .collect()
}

/// Independent model of the noiseless pipeline: per-user admission in
/// arrival order, clamping, running sums, and releases at every trigger a
/// key appears until it has been released `C` times, then at every
/// trigger.
fn noiseless_oracle(records: &[Record], c: u32, clamp: f64, triggers: u64, len: i64) -> Vec<(u64, String, f64)> {
    let mut used: BTreeMap<&str, u32> = BTreeMap::new();
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut releases: BTreeMap<String, u32> = BTreeMap::new();
    let mut out = Vec::new();
    let mut idx = 0;
    for i in 1..=triggers {
        let mut present: BTreeMap<String, ()> = BTreeMap::new();
        while idx < records.len() && ((records[idx].timestamp * triggers as i64 / len) as u64 + 1).min(triggers) == i {
            let r = &records[idx];
            idx += 1;
            let u = used.entry(r.user_id.as_str()).or_insert(0);
            if *u >= c {
                continue;
            }
            *u += 1;
            *sums.entry(r.key.clone()).or_insert(0.0) += r.value.max(-clamp).min(clamp);
            present.insert(r.key.clone(), ());
        }
        for (key, sum) in &sums {
            let n = releases.entry(key.clone()).or_insert(0);
            if *n >= c || present.contains_key(key) {
                if *n < c {
                    *n += 1;
                }
                out.push((i, key.clone(), *sum));
            }
        }
    }
    out
}

fn criterion_1() -> Outcome {
    let mut mismatches = 0;
    let mut releases = 0;
    for s in 0..100u64 {
        let mut rng = rng_from(indexed_seed(11, "c1-config", s));
        let c = rng.random_range(1..6u32);
        let recs = random_stream(indexed_seed(11, "c1-stream", s), 1000, 25, 40, 1000, true);
        let cfg = PipelineConfig {
            c,
            mu: 0.0,
            l_m: 2.0,
            triggers: 10,
            seed: s,
            window: WindowSpec { length: 1000, allowed_lateness: 0 },
            overrides: NoiseOverrides::noiseless(),
            ..PipelineConfig::default()
        };
        let (got, _) = run_pipeline(&recs, &cfg).expect("pipeline");
        let got: Vec<(u64, String, f64)> = got.into_iter().map(|r| (r.trigger, r.key, r.value)).collect();
        let want = noiseless_oracle(&recs, c, 2.0, 10, 1000);
        releases += want.len();
        if got != want {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches}/100 streams differ from the oracle ({releases} releases checked)"))
}

fn criterion_2() -> Outcome {
    let trials = 100_000u64;
    let sigma = 1.0;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    // Height-3 tree: node 8 is a leaf (κ=1), 4 has κ=2, 2 has κ=3, 1 has κ=4.
    for (kappa, node) in [(1u32, 8u64), (2, 4), (3, 2), (4, 1)] {
        let (mut s, mut s2) = (0.0, 0.0);
        for t in 0..trials {
            let tree = TreeState::new(8, sigma, indexed_seed(22, "c2", t)).unwrap();
            let e = tree.node_estimate(node);
            s += e;
            s2 += e * e;
        }
        let mean = s / trials as f64;
        let var = s2 / trials as f64 - mean * mean;
        let want = sigma * sigma / (2.0 * (1.0 - 0.5f64.powi(kappa as i32)));
        assert!((honaker_node_variance(sigma, kappa) - want).abs() < 1e-12);
        let rel = (var - want).abs() / want;
        worst = worst.max(rel);
        parts.push(format!("κ={kappa}: {var:.4} vs {want:.4}"));
    }
    outcome(worst <= 0.05, format!("{}; worst relative error {:.2}%", parts.join(", "), worst * 100.0))
}

fn criterion_3() -> Outcome {
    let n = 64u64;
    let beta = 0.05;
    let trials = 10_000u64;
    let cal = calibrate_sigma(n, DpBudget::new(1.0, 1e-6).unwrap(), 1.0).unwrap();
    let sigma = cal.sigma;
    let lg = (n as f64).log2().ceil();
    let bound = (2.0 * (n as f64 / beta).ln() * lg * sigma * sigma / std::f64::consts::PI).sqrt();
    let mut rng = rng_from(33);
    let inputs: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
    let truth: Vec<f64> = inputs
        .iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect();
    let mut exceed = 0;
    for t in 0..trials {
        let mut tree = TreeState::new(n, sigma, indexed_seed(33, "c3", t)).unwrap();
        for (i, x) in inputs.iter().enumerate() {
            tree.add(i as u64 + 1, *x).unwrap();
        }
        let est = tree.all_node_estimates();
        let over = (1..=n).any(|i| (prefix_value_from(&est, tree.height(), i) - truth[i as usize - 1]).abs() > bound);
        if over {
            exceed += 1;
        }
    }
    let frac = exceed as f64 / trials as f64;
    outcome(frac <= beta + 0.01, format!("σ={sigma:.3}, bound={bound:.3}, exceed fraction {frac:.4} (limit {:.2})", beta + 0.01))
}

fn criterion_4() -> Outcome {
    let t = 64u64;
    let beta = 0.01;
    let trials = 100_000u64;
    // One selection round's tree calibrated on its own; a failure rate this
    // large cannot be paid for out of a small delta budget.
    let sigma = calibrate_sigma(t, DpBudget::new(1.0, 1e-6).unwrap(), 1.0).unwrap().sigma;
    let params = SelectionParams::new(t, sigma, 0.0, beta).unwrap();
    // A key with no data: a zero-input tree tested at every trigger.
    let mut false_releases = 0;
    for s in 0..trials {
        let tree = spawn_tree_at(t, 1, sigma, indexed_seed(44, "c4-null", s)).unwrap();
        let est = tree.all_node_estimates();
        if (1..=t).any(|i| prefix_value_from(&est, tree.height(), i) > params.threshold(i)) {
            false_releases += 1;
        }
    }
    let false_rate = false_releases as f64 / trials as f64;
    // A key whose users reach μ + 2τ in one batch.
    let tau_max = (1..=t).map(|i| params.tau(i)).fold(0.0, f64::max);
    let users: Vec<String> = (0..(2.0 * tau_max).ceil() as usize + 1).map(|u| format!("u{u}")).collect();
    let mut hits = 0;
    let detect_trials = 10_000u64;
    for s in 0..detect_trials {
        let trigger = 1 + s % t;
        let mut st = KeySelectionState::new(indexed_seed(44, "c4-alt", s), 32);
        st.observe(trigger, users.iter().map(String::as_str), &params).unwrap();
        if st.test_threshold(trigger, &params).unwrap().selected {
            hits += 1;
        }
    }
    let hit_rate = hits as f64 / detect_trials as f64;
    outcome(
        false_rate <= beta + 0.005 && hit_rate >= 0.98,
        format!("σ={:.2}, false release {false_rate:.5} (limit 0.015), release at μ+2τ {hit_rate:.4} (limit 0.98)", sigma),
    )
}

fn criterion_5() -> Outcome {
    let closed = zcdp_to_dp_closed(ZcdpBudget::new(0.1).unwrap(), 1e-6).unwrap();
    let ok_closed = (closed - 2.4508).abs() <= 1e-3;
    let mut grid_ok = true;
    for a in 0..10 {
        for b in 0..10 {
            let rho = 10f64.powf(-3.0 + 4.0 * a as f64 / 9.0);
            let delta = 10f64.powf(-12.0 + 10.0 * b as f64 / 9.0);
            let r = ZcdpBudget::new(rho).unwrap();
            grid_ok &= zcdp_to_dp_tight(r, delta).unwrap() <= zcdp_to_dp_closed(r, delta).unwrap() + 1e-12;
        }
    }
    let g = group_privacy(0.1, 1e-9, 2).unwrap();
    let ok_group = (g.epsilon - 0.2).abs() < 1e-12 && (g.delta - 2.1052e-9).abs() <= 1e-13;
    let mut worst: f64 = 0.0;
    for &(t, eps, d, l) in &[(100u64, 3.0, 3e-10, 1.0), (1000, 1.0, 1e-6, 32f64.sqrt()), (16, 0.3, 1e-9, 4.0)] {
        let cal = calibrate_sigma(t, DpBudget::new(eps, d).unwrap(), l).unwrap();
        let back = zcdp_to_dp_tight(ZcdpBudget::new(tree_rho(tree_levels(t), l, cal.sigma)).unwrap(), d).unwrap();
        worst = worst.max((back - eps).abs() / eps);
    }
    outcome(
        ok_closed && grid_ok && ok_group && worst <= 1e-6,
        format!(
            "closed(0.1,1e-6)={closed:.4}, tight<=closed on grid: {grid_ok}, group=({}, {:.4e}), σ round trip rel err {worst:.1e}",
            g.epsilon, g.delta
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut diffs = 0;
    let mut read_violations = 0;
    let (mut reads_pred, mut reads_scan) = (0u64, 0u64);
    for s in 0..50u64 {
        let mut rng = rng_from(indexed_seed(66, "c6-config", s));
        let mut stream_rng = rng_from(indexed_seed(66, "c6-stream", s));
        // Each of 200 keys appears in a handful of random triggers.
        let mut recs = Vec::new();
        for k in 0..200 {
            let bursts = stream_rng.random_range(1..4);
            for _ in 0..bursts {
                let t = stream_rng.random_range(0..3200i64);
                for _ in 0..stream_rng.random_range(1..8) {
                    recs.push(Record::new(format!("k{k}"), 1.0, t, format!("u{}", stream_rng.random_range(0..150))));
                }
            }
        }
        recs.sort_by_key(|r| r.timestamp);
        let cfg = PipelineConfig {
            epsilon: rng.random_range(0.5..8.0),
            c: rng.random_range(1..8),
            mu: rng.random_range(0..3) as f64,
            triggers: 32,
            seed: s,
            window: WindowSpec { length: 3200, allowed_lateness: 0 },
            ..PipelineConfig::default()
        };
        let (a, ra) = run_pipeline(&recs, &cfg).unwrap();
        let (b, rb) = run_pipeline(&recs, &PipelineConfig { prediction: false, ..cfg }).unwrap();
        if serde_json::to_vec(&a).unwrap() != serde_json::to_vec(&b).unwrap() {
            diffs += 1;
        }
        if ra.key_reads > rb.key_reads {
            read_violations += 1;
        }
        reads_pred += ra.key_reads;
        reads_scan += rb.key_reads;
    }
    outcome(
        diffs == 0 && read_violations == 0,
        format!("{diffs}/50 outputs differ, {read_violations}/50 with more reads; key reads {reads_pred} (prediction) vs {reads_scan} (scan)"),
    )
}

fn table_row(seeds: &[u64], triggers: u64) -> BTreeMap<EngineKind, UtilityReport> {
    let mut per: BTreeMap<EngineKind, Vec<UtilityReport>> = BTreeMap::new();
    for &seed in seeds {
        let recs = generate_synthetic(&SynthParams::desk_scale(seed)).unwrap();
        let cfg = PipelineConfig { triggers, seed, ..PipelineConfig::default() };
        for (k, r) in compare_engines(&recs, &cfg, &EngineKind::ALL).unwrap() {
            per.entry(k).or_default().push(r);
        }
    }
    per.into_iter().map(|(k, v)| (k, UtilityReport::mean(&v))).collect()
}

fn criterion_7() -> Outcome {
    let seeds = [1, 2, 3];
    let t100 = table_row(&seeds, 100);
    let t1000 = table_row(&seeds, 1000);
    let dp = &t100[&EngineKind::DpSqlp];
    let b1 = &t100[&EngineKind::Baseline1];
    let b2 = &t100[&EngineKind::Baseline2];
    let keys_ok = dp.retained_keys >= 5.0 * b1.retained_keys && dp.retained_keys >= 5.0 * b2.retained_keys;
    let l2_ok = dp.l2 <= 0.5 * b1.l2 && dp.l2 <= 0.5 * b2.l2;
    let dp_drop = 1.0 - t1000[&EngineKind::DpSqlp].retained_keys / dp.retained_keys;
    let b_drop = |k: EngineKind| {
        let before = t100[&k].retained_keys;
        if before == 0.0 {
            1.0
        } else {
            1.0 - t1000[&k].retained_keys / before
        }
    };
    let collapse_ok = dp_drop < 0.5 && b_drop(EngineKind::Baseline1) > 0.9 && b_drop(EngineKind::Baseline2) > 0.9;
    let fmt = |r: &UtilityReport| format!("{:.1} keys/ℓ2 {:.0}", r.retained_keys, r.l2);
    outcome(
        keys_ok && l2_ok && collapse_ok,
        format!(
            "T=100 dpsqlp {} | baseline1 {} | baseline2 {}; T=1000 keys {:.1} / {:.1} / {:.1}",
            fmt(dp),
            fmt(b1),
            fmt(b2),
            t1000[&EngineKind::DpSqlp].retained_keys,
            t1000[&EngineKind::Baseline1].retained_keys,
            t1000[&EngineKind::Baseline2].retained_keys
        ),
    )
}

fn criterion_8() -> Outcome {
    let c_values = [1u32, 2, 5, 10, 17, 25, 32, 50];
    let mut l2 = vec![0.0; c_values.len()];
    let seeds = [1u64, 2, 3];
    for &seed in &seeds {
        let recs = generate_synthetic(&SynthParams::desk_scale(seed)).unwrap();
        let cfg = PipelineConfig { seed, ..PipelineConfig::default() };
        for (j, row) in sweep_contribution_bound(&recs, &cfg, EngineKind::DpSqlp, &c_values, 1).unwrap().iter().enumerate() {
            l2[j] += row.mean.l2 / seeds.len() as f64;
        }
    }
    let best = (0..l2.len()).min_by(|&a, &b| l2[a].total_cmp(&l2[b])).unwrap();
    let curve: Vec<String> = c_values.iter().zip(&l2).map(|(c, v)| format!("{c}:{v:.0}")).collect();
    outcome(
        best != 0 && best != l2.len() - 1,
        format!("mean ℓ2 by C [{}], minimum at C={}", curve.join(" "), c_values[best]),
    )
}

fn criterion_9() -> Outcome {
    let recs = random_stream(99, 600, 12, 30, 1000, false);
    let cfg = PipelineConfig {
        c: 4,
        epsilon: 4.0,
        triggers: 10,
        seed: 9,
        checkpoint_every: 3,
        window: WindowSpec { length: 1000, allowed_lateness: 0 },
        ..PipelineConfig::default()
    };
    let mut reference_engine = Engine::new(cfg.clone(), StateStore::in_memory(), MemorySink::new()).unwrap();
    reference_engine.run(&recs).unwrap();
    let reference_users: Vec<(String, u32)> = reference_engine
        .store()
        .user_table(0)
        .map(|t| t.iter().map(|(u, n)| (u.to_string(), n)).collect())
        .unwrap_or_default();
    let reference = reference_engine.into_parts().1.into_releases();
    let mut failures = Vec::new();
    let mut runs = 0;
    for point in FaultPoint::ALL {
        for trigger in 1..=10u64 {
            runs += 1;
            let dir = tempfile::tempdir().unwrap();
            let out = dir.path().join("releases.jsonl");
            let state = dir.path().join("state");
            let plan = FaultPlan { point, window_start: None, trigger };
            let mut e = Engine::new(cfg.clone(), StateStore::open(&state).unwrap(), JsonLinesSink::open(&out).unwrap())
                .unwrap()
                .with_fault(plan);
            match e.run(&recs) {
                Err(Error::InjectedFault(p)) if p == point => {}
                other => {
                    failures.push(format!("{point:?}@{trigger}: fault not raised ({:?})", other.map(|r| r.releases)));
                    continue;
                }
            }
            drop(e);
            let mut e = Engine::new(cfg.clone(), StateStore::open(&state).unwrap(), JsonLinesSink::open(&out).unwrap()).unwrap();
            e.run(&recs).unwrap();
            let over_c = e.store().user_table(0).is_some_and(|t| t.iter().any(|(_, n)| n > cfg.c));
            let users: Vec<(String, u32)> =
                e.store().user_table(0).map(|t| t.iter().map(|(u, n)| (u.to_string(), n)).collect()).unwrap_or_default();
            let got = JsonLinesSink::read_all(&out).unwrap();
            if got != reference {
                failures.push(format!("{point:?}@{trigger}: output differs"));
            }
            if over_c || users != reference_users {
                failures.push(format!("{point:?}@{trigger}: user admissions differ or exceed C"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!("{runs} crash/resume runs, {} failures{}", failures.len(), failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()),
    )
}

fn criterion_10() -> Outcome {
    let len = 1000;
    let triggers = 10;
    let recs = random_stream(1010, 2000, 30, 60, len, true);
    let spec = WindowSpec { length: len, allowed_lateness: 0 };
    let sens = SensitivityConfig::new(4, 2.0).unwrap();
    let victim = "u7";
    let without: Vec<Record> = recs.iter().filter(|r| r.user_id != victim).cloned().collect();
    let bound = |rs: &[Record]| {
        let (batches, _) = split_into_batches(rs, &spec, triggers);
        let mut table = UserBudgetTable::new();
        batches
            .iter()
            .map(|b| {
                bound_contributions(&b.records, &mut table, &sens)
                    .into_iter()
                    .filter(|r| r.user_id != victim)
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
    };
    let isolation_ok = bound(&recs) == bound(&without);

    let cfg = PipelineConfig {
        c: sens.c,
        l_m: sens.l_m,
        epsilon: 2.0,
        triggers,
        seed: 10,
        window: spec,
        ..PipelineConfig::default()
    };
    let mut e = Engine::new(cfg, StateStore::in_memory(), MemorySink::new()).unwrap().with_audit();
    e.run(&recs).unwrap();
    let audit = e.audit().unwrap();
    let c = sens.c as usize;
    let max_leaves = audit.selection_rounds.values().map(Vec::len).max().unwrap_or(0);
    let distinct_ok = audit.selection_rounds.values().all(|v| {
        let mut d = v.clone();
        d.sort();
        d.dedup();
        d.len() == v.len()
    });
    let max_admitted = audit.admitted.values().copied().max().unwrap_or(0);
    let max_mass = audit.aggregation_mass.values().copied().fold(0.0, f64::max);
    let ok = isolation_ok && distinct_ok && max_leaves <= c && max_admitted as usize <= c && max_mass <= c as f64 * sens.l_m;
    outcome(
        ok,
        format!(
            "bounding unchanged for others: {isolation_ok}; per user max selection leaves {max_leaves}, admitted records {max_admitted}, |value| mass {max_mass:.2} (C={c}, C·L={})",
            c as f64 * sens.l_m
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 noiseless end-to-end oracle", criterion_1),
        ("2 bottom-up node variance", criterion_2),
        ("3 prefix error bound", criterion_3),
        ("4 key selection soundness", criterion_4),
        ("5 accountant values", criterion_5),
        ("6 prediction equivalence", criterion_6),
        ("7 scaled comparison with baselines", criterion_7),
        ("8 contribution bound sweep shape", criterion_8),
        ("9 crash recovery", criterion_9),
        ("10 user isolation", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        let number = name.split(' ').next().unwrap();
        if !filter.is_empty() && !filter.iter().any(|a| a == number) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {name}: {} ({secs:.1}s) {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
