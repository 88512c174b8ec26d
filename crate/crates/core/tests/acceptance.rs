//! End-to-end acceptance checks. Each test writes one `criterion N: PASS`
//! or `FAIL` line straight to stderr so it shows up without `--nocapture`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::process::Command;
use std::time::{Duration, Instant};

use irsroute::baselines::{best_route_by_search, sequential_beam_search, SearchKind, DEFAULT_MAX_ROUNDS};
use irsroute::channel::{cascaded_channel, synthesize_channels, ChannelConfig};
use irsroute::codebook::Codebooks;
use irsroute::harness::{
    median, parse_edge_list, preset_scenario, run_experiment, summarize, to_db, ExperimentConfig, ResultRow, Scheme,
    Sweep, SweepVariable, PAPER_INDOOR_EDGES,
};
use irsroute::routing::{assemble_beams, enumerate_paths, estimate_path_gain, optimal_route};
use irsroute::scene::{build_los_graph, LoSGraph};
use irsroute::training::{
    train_distributed, BrtSet, BsBrt, BsBrtRow, IrsBrt, IrsBrtRow, MeasurementCounter, TrainingConfig,
};
use irsroute::{Error, NodeId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {verdict} ({detail})");
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

#[test]
fn criterion_1_pure_los_estimate_is_exact() {
    let start = Instant::now();
    let (scene, cfg) = preset_scenario("paper-indoor").unwrap();
    let scene = scene.with_square_irs(cfg.m0.unwrap());
    let c = cfg.codebooks;
    let cb = Codebooks::for_scene(&scene, c.bs, c.horizontal, c.vertical).unwrap();
    let mut worst = 0.0f64;
    let mut paths_checked = 0;
    for user in 0..scene.user_positions.len() {
        let graph = build_los_graph(&scene, user).unwrap();
        let ch_cfg = ChannelConfig { los_only: true, rng_seed: 5, ..cfg.channel.clone() };
        let channels = synthesize_channels(&scene, &graph, &ch_cfg).unwrap();
        let mut counter = MeasurementCounter::default();
        let brts = train_distributed(&channels, &cb, &mut counter, &TrainingConfig::default()).unwrap();
        for path in enumerate_paths(&graph, graph.irs_count()) {
            let est = estimate_path_gain(&brts, channels.q_gains(), &path).unwrap();
            let beams = assemble_beams(&brts, &path).unwrap();
            let truth = cascaded_channel(&channels, &path, &beams, &cb).unwrap().norm_sqr();
            worst = worst.max((est - truth).abs() / truth);
            paths_checked += 1;
        }
    }
    let elapsed = start.elapsed();
    let ok = worst < 1e-6 && paths_checked > 0 && elapsed < Duration::from_secs(10);
    report(1, ok, &format!("{paths_checked} paths, worst relative error {worst:.2e}, {elapsed:.2?}"));
    assert!(paths_checked >= 6);
    assert!(worst < 1e-6, "worst relative error {worst}");
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
}

/// Random DAG over `j` IRSs along a shuffled topological order.
fn random_graph(rng: &mut ChaCha8Rng, j: usize) -> LoSGraph {
    let user = j + 1;
    let mut order: Vec<NodeId> = (1..=j).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for (a, &x) in order.iter().enumerate() {
        if rng.random_bool(0.6) {
            edges.push((0, x));
        }
        if rng.random_bool(0.5) {
            edges.push((x, user));
        }
        for &y in &order[a + 1..] {
            if rng.random_bool(0.45) {
                edges.push((x, y));
            }
        }
    }
    LoSGraph::from_edges(j, 0, edges).unwrap()
}

/// All simple BS-to-user walks, found by brute force over ordered IRS
/// sequences rather than by graph search.
fn brute_force_paths(graph: &LoSGraph) -> Vec<Vec<NodeId>> {
    fn extend(graph: &LoSGraph, seq: &mut Vec<NodeId>, out: &mut Vec<Vec<NodeId>>) {
        let chain_ok = |s: &[NodeId]| {
            let mut nodes = vec![0];
            nodes.extend_from_slice(s);
            nodes.windows(2).all(|p| graph.has_edge(p[0], p[1]))
        };
        if !seq.is_empty() && chain_ok(seq) && graph.has_edge(*seq.last().unwrap(), graph.user()) {
            out.push(seq.clone());
        }
        for k in 1..=graph.irs_count() {
            if !seq.contains(&k) {
                seq.push(k);
                extend(graph, seq, out);
                seq.pop();
            }
        }
    }
    let mut out = Vec::new();
    extend(graph, &mut Vec::new(), &mut out);
    out
}

#[test]
fn criterion_2_dp_matches_enumeration() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut graphs, mut feasible, mut mismatches) = (0, 0, 0);
    while feasible < 120 {
        let j = rng.random_range(1..=6);
        let g = random_graph(&mut rng, j);
        let user = g.user();
        let mut lambda: BTreeMap<(NodeId, NodeId, NodeId), f64> = BTreeMap::new();
        let mut irs = BTreeMap::new();
        for m in 1..=j {
            let mut t = IrsBrt { owner: m, rows: BTreeMap::new() };
            for &i in g.predecessors(m) {
                for &r in g.successors(m) {
                    let gain = 10f64.powf(-rng.random_range(3.0..10.0));
                    lambda.insert((i, m, r), gain);
                    t.rows.insert((i, r), IrsBrtRow { h_index: 0, v_index: 0, gain });
                }
            }
            irs.insert(m, t);
        }
        let bs =
            BsBrt { rows: g.bs_successors().iter().map(|&k| (k, BsBrtRow { beam_index: 0, gain: 1.0 })).collect() };
        let brts = BrtSet { bs, irs, user };
        let q: BTreeMap<(NodeId, NodeId), f64> =
            g.edges().map(|e| (e, 10f64.powf(-rng.random_range(2.0..7.0)))).collect();

        // Oracle: products of Λ over Q evaluated straight from the tables.
        let oracle = brute_force_paths(&g)
            .into_iter()
            .map(|p| {
                let mut chain = vec![0];
                chain.extend(&p);
                chain.push(user);
                let num: f64 = chain.windows(3).map(|w| lambda[&(w[0], w[1], w[2])].ln()).sum();
                let den: f64 = p.windows(2).map(|w| q[&(w[0], w[1])].ln()).sum();
                (num - den, p)
            })
            .fold(None::<(f64, Vec<NodeId>)>, |best, (v, p)| match best {
                Some((bv, _)) if bv >= v => best,
                _ => Some((v, p)),
            });
        match (optimal_route(&g, &brts, &q, j), oracle) {
            (Ok(route), Some((v, _))) => {
                feasible += 1;
                if (route.log_gain - v).abs() > 1e-9 {
                    mismatches += 1;
                }
            }
            (Err(Error::Infeasible), None) => {}
            _ => mismatches += 1,
        }
        graphs += 1;
    }
    let elapsed = start.elapsed();
    let ok = mismatches == 0 && elapsed < Duration::from_secs(30);
    report(2, ok, &format!("{graphs} graphs ({feasible} feasible), {mismatches} mismatches, {elapsed:.2?}"));
    assert_eq!(mismatches, 0);
    assert!(elapsed < Duration::from_secs(30));
}

#[test]
fn criterion_3_measurement_counts() {
    let (scene, cfg) = preset_scenario("paper-indoor").unwrap();
    let scene = scene.with_square_irs(8);
    let graph = build_los_graph(&scene, 0).unwrap();
    let c = cfg.codebooks;
    let cb = Codebooks::for_scene(&scene, c.bs, c.horizontal, c.vertical).unwrap();
    let channels = synthesize_channels(&scene, &graph, &ChannelConfig { rng_seed: 3, ..cfg.channel.clone() }).unwrap();
    let mut counter = MeasurementCounter::default();
    let brts = train_distributed(&channels, &cb, &mut counter, &TrainingConfig::default()).unwrap();

    // Triple and pair counts straight from the committed edge list.
    let edges: BTreeSet<(usize, usize)> = parse_edge_list(PAPER_INDOOR_EDGES).unwrap().into_iter().collect();
    let user = 6;
    let pred = |j: usize| edges.iter().filter(|e| e.1 == j).count();
    let succ_irs = |j: usize| edges.iter().filter(|e| e.0 == j && e.1 != user).count();
    let offline_triples: usize = (1..=5).map(|j| pred(j) * succ_irs(j)).sum();
    let online_pairs: usize = (1..=5).filter(|&j| edges.contains(&(j, user))).map(pred).sum();
    let per_triple = (32 + 32 + 1) as u64;

    let route = optimal_route(&graph, &brts, channels.q_gains(), 5).unwrap();
    let mut seq_counter = MeasurementCounter::default();
    let seq = sequential_beam_search(&channels, &route.path, &cb, &mut seq_counter, DEFAULT_MAX_ROUNDS).unwrap();
    let l = route.path.len() as u64;

    let checks = [
        ("bs", counter.bs_training_transmissions, 16),
        ("offline", counter.passive_offline_measurements, per_triple * offline_triples as u64),
        ("online", counter.passive_online_measurements, per_triple * online_pairs as u64),
        ("sequential per round", seq.per_round_measurements, 16 + l * 1024),
        ("sequential total", seq_counter.sequential_measurements, (16 + l * 1024) * seq.iterations as u64),
    ];
    let ok = checks.iter().all(|(_, got, want)| got == want) && per_triple == 65;
    let detail: Vec<String> = checks.iter().map(|(n, g, w)| format!("{n} {g}/{w}")).collect();
    report(3, ok, &detail.join(", "));
    for (name, got, want) in checks {
        assert_eq!(got, want, "{name}");
    }
}

#[test]
fn criterion_4_dominance_chain() {
    let mut violations = Vec::new();
    let mut rows = 0;
    let mut seq_equals_exh = 0;
    for preset in ["toy-chain", "toy-parallel"] {
        let (scene, cfg) = preset_scenario(preset).unwrap();
        let c = cfg.codebooks;
        let cb = Codebooks::for_scene(&scene, c.bs, c.horizontal, c.vertical).unwrap();
        let graph = build_los_graph(&scene, 0).unwrap();
        let hops = graph.irs_count();
        for seed in 0..50u64 {
            let channels =
                synthesize_channels(&scene, &graph, &ChannelConfig { rng_seed: seed, ..cfg.channel.clone() }).unwrap();
            let mut counter = MeasurementCounter::default();
            let tcfg = TrainingConfig { seed, ..Default::default() };
            let brts = train_distributed(&channels, &cb, &mut counter, &tcfg).unwrap();
            let route = optimal_route(&graph, &brts, channels.q_gains(), hops).unwrap();
            let dist = cascaded_channel(&channels, &route.path, &route.beam_assignment, &cb).unwrap().norm_sqr();
            let seq = best_route_by_search(
                &channels,
                &graph,
                &cb,
                SearchKind::Sequential { max_rounds: 10 },
                hops,
                &mut counter,
            )
            .unwrap();
            let exh = best_route_by_search(&channels, &graph, &cb, SearchKind::Exhaustive, hops, &mut counter).unwrap();
            for p in enumerate_paths(&graph, hops) {
                let r = sequential_beam_search(&channels, &p, &cb, &mut counter, 10).unwrap();
                if r.objective_trace.windows(2).any(|w| w[1] < w[0]) {
                    violations.push(format!("{preset} seed {seed} path {p}: trace decreases"));
                }
            }
            if !(exh.achieved_gain >= seq.achieved_gain && seq.achieved_gain >= dist) {
                violations.push(format!(
                    "{preset} seed {seed}: exh {:.4} seq {:.4} dist {:.4} dB",
                    to_db(exh.achieved_gain),
                    to_db(seq.achieved_gain),
                    to_db(dist)
                ));
            }
            if exh.achieved_gain == seq.achieved_gain {
                seq_equals_exh += 1;
            }
            rows += 1;
        }
    }
    report(
        4,
        violations.is_empty(),
        &format!(
            "{rows} rows, {} violations, sequential hit the exhaustive optimum in {seq_equals_exh}",
            violations.len()
        ),
    );
    assert!(violations.is_empty(), "{violations:#?}");
}

fn gains_by(rows: &[ResultRow], value: f64, scheme: Scheme) -> Vec<f64> {
    let mut v: Vec<(usize, f64)> = rows
        .iter()
        .filter(|r| r.sweep_value == value && r.scheme == scheme)
        .map(|r| (r.realization, r.cascaded_gain.expect("feasible")))
        .collect();
    v.sort_by_key(|x| x.0);
    v.into_iter().map(|x| x.1).collect()
}

#[test]
fn criterion_5_trends() {
    let start = Instant::now();
    let (scene, base) = preset_scenario("paper-indoor").unwrap();
    let schemes = vec![Scheme::Distributed, Scheme::Sequential];
    let m0_cfg = ExperimentConfig {
        realizations: 30,
        seed: 11,
        schemes: schemes.clone(),
        sweep: Sweep { variable: SweepVariable::M0, values: vec![8.0, 12.0, 16.0] },
        ..base.clone()
    };
    let k_cfg = ExperimentConfig {
        realizations: 30,
        seed: 11,
        schemes,
        m0: Some(12),
        sweep: Sweep { variable: SweepVariable::RicianK, values: vec![0.0, 10.0, 20.0] },
        ..base
    };
    let (m0_rows, k_rows) =
        single_threaded(|| (run_experiment(&scene, &m0_cfg).unwrap(), run_experiment(&scene, &k_cfg).unwrap()));
    let elapsed = start.elapsed();

    let summary = summarize(&m0_rows).unwrap();
    let mean = |v: f64, s: Scheme| summary.iter().find(|x| x.sweep_value == v && x.scheme == s).unwrap().mean_gain_db;
    let mut increasing = true;
    let mut means = Vec::new();
    for s in [Scheme::Distributed, Scheme::Sequential] {
        let m: Vec<f64> = [8.0, 12.0, 16.0].iter().map(|&v| mean(v, s)).collect();
        increasing &= m.windows(2).all(|w| w[1] > w[0]);
        means.push(format!("{s} {:.2}/{:.2}/{:.2} dB", m[0], m[1], m[2]));
    }

    let gaps: Vec<f64> = [0.0, 10.0, 20.0]
        .iter()
        .map(|&k| {
            let seq = gains_by(&k_rows, k, Scheme::Sequential);
            let dist = gains_by(&k_rows, k, Scheme::Distributed);
            median(&seq.iter().zip(&dist).map(|(s, d)| to_db(*s) - to_db(*d)).collect::<Vec<_>>())
        })
        .collect();
    let gap_ok = gaps.windows(2).all(|w| w[1] <= w[0]) && gaps[2] < 2.0;
    let ok = increasing && gap_ok && elapsed < Duration::from_secs(600);
    report(
        5,
        ok,
        &format!(
            "{}; median gaps at K=0/10/20 dB: {:.3}/{:.3}/{:.3} dB; {elapsed:.2?}",
            means.join(", "),
            gaps[0],
            gaps[1],
            gaps[2]
        ),
    );
    assert!(increasing, "{means:?}");
    assert!(gap_ok, "{gaps:?}");
    assert!(elapsed < Duration::from_secs(600));
}

#[test]
fn criterion_6_scattered_links_are_weak() {
    let (scene, base) = preset_scenario("paper-indoor").unwrap();
    let cfg = ExperimentConfig {
        realizations: 50,
        seed: 6,
        m0: Some(16),
        schemes: vec![Scheme::Distributed, Scheme::Sequential],
        sweep: Sweep { variable: SweepVariable::RicianK, values: vec![10.0] },
        ..base
    };
    let rows = run_experiment(&scene, &cfg).unwrap();
    let mut medians = Vec::new();
    for s in [Scheme::Distributed, Scheme::Sequential] {
        let diffs: Vec<f64> = rows
            .iter()
            .filter(|r| r.scheme == s)
            .map(|r| (to_db(r.cascaded_gain.unwrap()) - to_db(r.overall_gain.unwrap())).abs())
            .collect();
        assert_eq!(diffs.len(), 50);
        medians.push((s, median(&diffs)));
    }
    let ok = medians.iter().all(|(_, m)| *m < 3.0);
    let detail: Vec<String> = medians.iter().map(|(s, m)| format!("{s} median |diff| {m:.3} dB")).collect();
    report(6, ok, &detail.join(", "));
    assert!(ok, "{medians:?}");
}

#[test]
fn criterion_7_csv_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_irsroute");
    let runs: [(&str, &[&str]); 3] = [
        ("paper-indoor", &["--realizations", "3", "--sweep", "m0=4,6", "--seed", "17"]),
        ("toy-chain", &["--realizations", "10", "--seed", "17"]),
        ("toy-parallel", &["--realizations", "10", "--seed", "17", "--sweep", "rician_k=0,20"]),
    ];
    let mut identical = 0;
    for (preset, extra) in runs {
        let mut outputs = Vec::new();
        for attempt in 0..2 {
            let out = dir.path().join(format!("{preset}-{attempt}.csv"));
            let status = Command::new(bin)
                .args(["run", "--preset", preset, "--out"])
                .arg(&out)
                .args(extra)
                .env("RUST_LOG", "warn")
                .status()
                .unwrap();
            assert!(status.success(), "{preset} run failed");
            outputs.push(std::fs::read(&out).unwrap());
        }
        assert!(outputs[0].len() > 200);
        if outputs[0] == outputs[1] {
            identical += 1;
        }
    }
    report(7, identical == 3, &format!("{identical}/3 presets reproduced byte for byte"));
    assert_eq!(identical, 3);
}

#[test]
fn criterion_8_channel_second_moments() {
    // A clear edge (Rician) and a blocked pair (Rayleigh) of the toy chain.
    let (scene, cfg) = preset_scenario("toy-chain").unwrap();
    let graph = build_los_graph(&scene, 0).unwrap();
    let draws = 10_000;
    let lambda = 299_792_458.0 / cfg.channel.carrier_frequency;
    let beta0 = (lambda / (4.0 * std::f64::consts::PI)).powi(2);
    let k = 10f64.powf(cfg.channel.rician_factor_db / 10.0);

    let mut power: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut mean_entry: BTreeMap<(usize, usize), irsroute::Complex64> = BTreeMap::new();
    let links = [(0usize, 1usize), (1, 2), (0, 2), (0, 3)];
    for seed in 0..draws {
        let ch = synthesize_channels(&scene, &graph, &ChannelConfig { rng_seed: seed, ..cfg.channel.clone() }).unwrap();
        for &(i, j) in &links {
            let h = ch.link(i, j).unwrap().matrix[[0, 0]];
            *power.entry((i, j)).or_default() += h.norm_sqr() / draws as f64;
            *mean_entry.entry((i, j)).or_default() += h / draws as f64;
        }
    }
    let placement = scene.with_user(0).unwrap();
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    for &(i, j) in &links {
        let d = placement.distance(i, j).unwrap();
        let los = graph.has_edge(i, j);
        let pg = beta0 * d.powf(if los { -2.0 } else { -3.5 });
        // |a|² = pg·K/(K+1) and σ² = pg/(K+1), so Var|h|² = σ²(σ² + 2|a|²).
        let sigma2 = if los { pg / (k + 1.0) } else { pg };
        let a2 = if los { pg * k / (k + 1.0) } else { 0.0 };
        let var = sigma2 * (sigma2 + 2.0 * a2);
        let bound = 3.0 * (var / draws as f64).sqrt();
        let err = (power[&(i, j)] - pg).abs();
        if err > bound {
            failures.push(format!("{i}->{j}: E|h|² {:.4e} vs {pg:.4e}", power[&(i, j)]));
        }
        // The scattered part is zero-mean; the LoS part at the reference
        // elements has unit phase.
        let mean_err = (mean_entry[&(i, j)] - a2.sqrt()).norm();
        if mean_err > 3.0 * (sigma2 / draws as f64).sqrt() {
            failures.push(format!("{i}->{j}: mean {:?}", mean_entry[&(i, j)]));
        }
        notes.push(format!("{i}->{j} {} err/σ {:.2}", if los { "rician" } else { "rayleigh" }, err / (bound / 3.0)));
    }
    report(8, failures.is_empty(), &format!("{draws} draws; {}", notes.join(", ")));
    assert!(failures.is_empty(), "{failures:#?}");
}
