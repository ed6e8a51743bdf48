//! Acceptance suite. Prints one PASS/FAIL line per criterion. Failures are
//! reported but only turn into a nonzero exit with `ACCEPTANCE_STRICT=1`.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{l2, oracle_cosine, oracle_task_prototype, random_graph};
use gcl_core::config::RunConfig;
use gcl_core::embed::{cache_key, get_or_embed, EmbeddingCache, EmbeddingProvider, HttpProvider};
use gcl_core::eval::{leakage_diagnostic, summarize, AccuracyMatrix};
use gcl_core::graph::{gcn_normalized_adjacency, load_tag, save_tag, sample_ego_graph, TextAttributedGraph, Weighting};
use gcl_core::numerics::{cross_entropy, finite_diff_check, DEFAULT_STEP, model_backward, model_forward, Arch, DenseMatrix, ModelParams};
use gcl_core::prompt::{emit_instruction_jsonl, node_prompt, render_prompt, PromptTemplate};
use gcl_core::proto::{
    build_prototypes, predict_task_id, query_task_prototype, session_task_prototype, task_prototype, HeadConfig, PrototypeBank,
    TaskProtoConfig, TaskPrototypeSet,
};
use gcl_core::runner::{run_method, Hyper, Method, RunContext};
use gcl_core::session::{plan_fsncil, plan_ncil, EvalEdges, EvalMode, FsncilConfig, NcilConfig, SessionPlan};
use gcl_core::testkit::stub::StubEmbeddingServer;
use gcl_core::testkit::{synth_tag, SynthConfig};
use gcl_core::trainers::{ewc_penalty, fisher_diagonal, lwf_distill, EwcAnchor, SessionData};
use gcl_core::{Error, Exec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// 3 sessions × 2 classes, 50 nodes per class, class_sep 3.
fn leakage_data(seed: u64) -> Result<(TextAttributedGraph, SessionPlan), String> {
    let g = synth_tag(&SynthConfig { num_classes: 6, nodes_per_class: 50, class_sep: 3.0, seed, ..SynthConfig::default() }).map_err(e2s)?;
    let plan = plan_ncil(&g, &NcilConfig { classes_per_session: 2, num_sessions: 3, shots: 10, test_cap: 40 }, seed).map_err(e2s)?;
    Ok((g, plan))
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn leakage_mirror() -> Outcome {
    let start = Instant::now();
    let mut worst_acc: f64 = 1.0;
    let mut worst_af: f64 = 0.0;
    for seed in SEEDS {
        let (g, plan) = leakage_data(seed)?;
        let rep = leakage_diagnostic(&g, &plan, &[1, 2, 4, 8, 16], true, &HeadConfig::default(), seed).map_err(e2s)?;
        for row in rep.rows.iter().filter(|r| r.variant != "mlp") {
            worst_acc = worst_acc.min(row.task_id_accuracy);
            if row.af.abs() > worst_af.abs() {
                worst_af = row.af;
            }
            ensure(
                row.task_id_accuracy == 1.0 && row.af == 0.0,
                format!("seed {seed} {} k={:?}: task-id acc {} AF {}", row.variant, row.k, row.task_id_accuracy, row.af),
            )?;
        }
        ensure(rep.rows.iter().any(|r| r.weighting == Some(Weighting::PlainMean)), "plain-mean row missing")?;
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(60), format!("took {t:.1?}"))?;
    Ok(format!("task-id acc min {worst_acc:.2}, AF {worst_af:.2}, {} seeds, {t:.1?}", SEEDS.len()))
}

fn degradation_mirror() -> Outcome {
    let start = Instant::now();
    let t = PromptTemplate::cora_simgcl();
    let mut sums: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for seed in SEEDS {
        let (g, plan) = leakage_data(seed)?;
        let ctx = RunContext { graph: &g, plan: &plan, mode: EvalMode::Global, eval_edges: EvalEdges::IntraOnly, provider: None, cache: None, template: &t };
        for m in [Method::Gcn, Method::Cosine] {
            let out = run_method(m, &ctx, &Hyper::default(), seed).map_err(e2s)?;
            let s = summarize(&out.matrix).map_err(e2s)?;
            let e = sums.entry(m.as_str()).or_default();
            e.0 += s.mean_acc / SEEDS.len() as f64;
            e.1 += s.final_acc / SEEDS.len() as f64;
        }
    }
    let (g_mean, g_final) = sums["gcn"];
    let (c_mean, c_final) = sums["cosine"];
    let detail = format!(
        "gcn mean {g_mean:.3} final {g_final:.3}; cosine mean {c_mean:.3} final {c_final:.3} (gap {:.3}); {:.1?}",
        c_mean - c_final,
        start.elapsed()
    );
    ensure(g_final < g_mean, format!("gcn shows no forgetting: {detail}"))?;
    ensure(c_mean - c_final <= 0.05, format!("cosine gap too large: {detail}"))?;
    ensure(start.elapsed() < Duration::from_secs(300), format!("too slow: {detail}"))?;
    Ok(detail)
}

fn gradient_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.random_range(4..=16);
        let g = random_graph(n, 3, 4, 0.3, seed);
        let adj = gcn_normalized_adjacency(&g);
        let rows: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.6)).chain([0]).collect::<BTreeSet<_>>().into_iter().collect();
        let labels: Vec<usize> = rows.iter().map(|&v| g.labels()[v]).collect();
        for arch in [Arch::Gcn2Mlp1, Arch::Mlp2] {
            let p = ModelParams::init(arch, 4, 6, 3, 0.0, true, seed).map_err(e2s)?;
            let prop = (arch == Arch::Gcn2Mlp1).then_some(&adj);
            let loss = |q: &ModelParams| {
                let (logits, cache) = model_forward(q, prop, g.features(), None)?;
                let (l, d_rows) = cross_entropy(&logits.gather_rows(&rows)?, &labels, None)?;
                let mut d = DenseMatrix::zeros(logits.rows(), logits.cols());
                for (k, &r) in rows.iter().enumerate() {
                    d.row_mut(r).copy_from_slice(d_rows.row(k));
                }
                Ok((l, model_backward(q, &cache, &d)?))
            };
            let rep = finite_diff_check(loss, &p, 1e-4, DEFAULT_STEP, usize::MAX, seed).map_err(e2s)?;
            worst = worst.max(rep.max_rel_err);
            checked += rep.checked;
            ensure(rep.passed, format!("{arch:?} seed {seed}: max rel err {:.2e}", rep.max_rel_err))?;
        }
    }
    Ok(format!("max rel err {worst:.2e} over {checked} coordinates"))
}

fn prototype_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_cos: f64 = 0.0;
    let mut worst_smooth: f64 = 0.0;
    for inst in 0..100u64 {
        let n = rng.random_range(2..=64);
        let dim = rng.random_range(1..=6);
        let classes = rng.random_range(1..=5);
        let g = random_graph(n, classes, dim, rng.random_range(0.0..0.2), inst);
        let x = g.features();

        let protos = build_prototypes(x, g.labels(), usize::MAX, inst).map_err(e2s)?;
        for (c, p) in &protos {
            let members: Vec<usize> = (0..n).filter(|&v| g.labels()[v] == *c).collect();
            let mut mean = vec![0.0; dim];
            for &v in &members {
                for k in 0..dim {
                    mean[k] += x.get(v, k);
                }
            }
            mean.iter_mut().for_each(|m| *m /= members.len() as f64);
            ensure(*p == mean, format!("instance {inst}: prototype of class {c} differs"))?;
        }

        let tau = rng.random_range(0.1..10.0);
        let mut bank = PrototypeBank::new(dim, tau).map_err(e2s)?;
        bank.insert(protos.clone(), 0).map_err(e2s)?;
        let keys: Vec<usize> = protos.keys().copied().collect();
        for v in 0..n {
            let h = x.row(v);
            let (scores, pred) = bank.classify(h).map_err(e2s)?;
            let mut best = 0;
            for (i, &c) in keys.iter().enumerate() {
                let want = tau * oracle_cosine(h, &protos[&c]);
                worst_cos = worst_cos.max((scores[i].1 - want).abs());
                if want > tau * oracle_cosine(h, &protos[&keys[best]]) {
                    best = i;
                }
            }
            ensure(pred == keys[best], format!("instance {inst}: classify argmax differs at node {v}"))?;
        }
        ensure(worst_cos <= 1e-12, format!("instance {inst}: cosine score error {worst_cos:.2e}"))?;

        let tasks = rng.random_range(1..=4);
        let sets: Vec<Vec<usize>> = (0..tasks)
            .map(|_| {
                let s: BTreeSet<usize> = (0..rng.random_range(1..=n)).map(|_| rng.random_range(0..n)).collect();
                s.into_iter().collect()
            })
            .collect();
        let k = rng.random_range(0..=8);
        let self_loops = rng.random_bool(0.8);
        let cfg = TaskProtoConfig { k, weighting: Weighting::Laplacian, self_loops };
        let mut set = TaskPrototypeSet::new(cfg);
        for nodes in &sets {
            let got = task_prototype(&g, nodes, x, &cfg).map_err(e2s)?;
            let want = oracle_task_prototype(&g, nodes, k, self_loops);
            for (a, b) in got.iter().zip(&want) {
                worst_smooth = worst_smooth.max((a - b).abs() / b.abs().max(1.0));
            }
            let plain = task_prototype(&g, nodes, x, &TaskProtoConfig { weighting: Weighting::PlainMean, ..cfg }).map_err(e2s)?;
            let mut mean = vec![0.0; dim];
            for &v in nodes {
                for c in 0..dim {
                    mean[c] += x.get(v, c);
                }
            }
            mean.iter_mut().for_each(|m| *m /= nodes.len() as f64);
            ensure(plain == mean, format!("instance {inst}: plain-mean task prototype differs"))?;
            set.push(got).map_err(e2s)?;
        }
        ensure(worst_smooth <= 1e-12, format!("instance {inst}: smoothed prototype error {worst_smooth:.2e}"))?;
        for _ in 0..5 {
            let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut best = 0;
            for t in 1..set.len() {
                if l2(&q, &set.prototypes[t]) < l2(&q, &set.prototypes[best]) {
                    best = t;
                }
            }
            ensure(predict_task_id(&q, &set, None).map_err(e2s)? == best, format!("instance {inst}: task-id argmin differs"))?;
        }
    }
    Ok(format!("100 instances; cosine err {worst_cos:.1e}, smoothed err {worst_smooth:.1e}"))
}

fn metric_oracle() -> Outcome {
    let m = AccuracyMatrix::from_local_rows(vec![vec![0.9], vec![0.8, 0.7]]).map_err(e2s)?;
    let s = summarize(&m).map_err(e2s)?;
    let (aa, af) = (s.aa.unwrap_or(f64::NAN), s.af.unwrap_or(f64::NAN));
    ensure((aa - 0.75).abs() <= 1e-12 && (af + 0.05).abs() <= 1e-12, format!("worked example gave AA={aa} AF={af}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=10);
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..=i).map(|_| rng.random_range(0.0..=1.0)).collect()).collect();
        let s = summarize(&AccuracyMatrix::from_local_rows(rows.clone()).map_err(e2s)?).map_err(e2s)?;
        let aa = rows[n - 1].iter().sum::<f64>() / n as f64;
        let af = (0..n - 1).map(|j| rows[n - 1][j] - rows[j][j]).sum::<f64>() / n as f64;
        let acc: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
        let mean = acc.iter().sum::<f64>() / n as f64;
        for (got, want) in [(s.aa.unwrap_or(f64::NAN), aa), (s.af.unwrap_or(f64::NAN), af), (s.mean_acc, mean), (s.final_acc, acc[n - 1])] {
            worst = worst.max((got - want).abs());
        }
    }
    ensure(worst <= 1e-12, format!("max error {worst:.2e}"))?;
    Ok(format!("worked example AA=0.75 AF=-0.05; 1000 matrices, max error {worst:.1e}"))
}

fn scale_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for b in 0..1000 {
        let dim = rng.random_range(1..=16);
        let classes = rng.random_range(1..=12);
        let protos: BTreeMap<usize, Vec<f64>> =
            (0..classes).map(|c| (c, (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())).collect();
        let h: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tau = rng.random_range(0.05..20.0);
        let bank = |t: f64, p: &BTreeMap<usize, Vec<f64>>| {
            let mut bk = PrototypeBank::new(dim, t).unwrap();
            bk.insert(p.clone(), 0).unwrap();
            bk
        };
        let base = bank(tau, &protos).classify(&h).map_err(e2s)?.1;
        let a = rng.random_range(0.01..100.0);
        ensure(bank(a * tau, &protos).classify(&h).map_err(e2s)?.1 == base, format!("bank {b}: τ rescale changed argmax"))?;
        let hs: Vec<f64> = h.iter().map(|x| x * a).collect();
        ensure(bank(tau, &protos).classify(&hs).map_err(e2s)?.1 == base, format!("bank {b}: h rescale changed argmax"))?;
        let mut scaled = protos.clone();
        let which = rng.random_range(0..classes);
        scaled.get_mut(&which).unwrap().iter_mut().for_each(|x| *x *= a);
        ensure(bank(tau, &scaled).classify(&h).map_err(e2s)?.1 == base, format!("bank {b}: prototype rescale changed argmax"))?;
    }
    Ok("1000 banks, argmax unchanged".into())
}

fn plan_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut ncil, mut fsncil) = (0, 0);
    for t in 0..200u64 {
        let n = rng.random_range(30..=150);
        let classes = rng.random_range(3..=8);
        let g = random_graph(n, classes, 3, rng.random_range(0.0..0.15), t);
        let min_class = n / classes;
        let seed = rng.random::<u64>();
        let build = |rng: &mut ChaCha8Rng| -> Result<SessionPlan, Error> {
            if rng.random_bool(0.5) {
                let per = rng.random_range(1..=classes / 2);
                let cfg = NcilConfig {
                    classes_per_session: per,
                    num_sessions: rng.random_range(1..=classes / per),
                    shots: rng.random_range(1..=(min_class - 1).min(5)),
                    test_cap: rng.random_range(1..=10),
                };
                plan_ncil(&g, &cfg, seed)
            } else {
                let base = rng.random_range(1..classes);
                let ways = rng.random_range(1..=(classes - base));
                let cfg = FsncilConfig {
                    base_classes: base,
                    ways,
                    num_sessions: rng.random_range(1..=(classes - base) / ways),
                    shots_base: rng.random_range(1..=(min_class - 1).min(5)),
                    shots_novel: rng.random_range(1..=(min_class - 1).min(3)),
                    test_cap: rng.random_range(1..=10),
                };
                plan_fsncil(&g, &cfg, seed)
            }
        };
        let mut replay = rng.clone();
        let plan = build(&mut rng).map_err(|e| format!("triple {t}: {e}"))?;
        let again = build(&mut replay).map_err(e2s)?;
        match plan.scenario {
            gcl_core::session::Scenario::Ncil => ncil += 1,
            gcl_core::session::Scenario::Fsncil => fsncil += 1,
        }
        ensure(plan.digest(&g).as_bytes() == again.digest(&g).as_bytes(), format!("triple {t}: digest differs on rerun"))?;

        let mut owner: HashMap<usize, usize> = HashMap::new();
        let mut class_seen = BTreeSet::new();
        for (k, s) in plan.sessions.iter().enumerate() {
            for &c in &s.class_ids {
                ensure(class_seen.insert(c), format!("triple {t}: class {c} in two sessions"))?;
            }
            let mut shots: HashMap<usize, usize> = HashMap::new();
            for &v in &s.train_nodes {
                *shots.entry(g.labels()[v]).or_default() += 1;
            }
            for &c in &s.class_ids {
                ensure(shots.get(&c) == Some(&s.shots), format!("triple {t}: session {k} class {c} shot count"))?;
            }
            for &v in s.train_nodes.iter().chain(&s.test_nodes) {
                ensure(owner.insert(v, k).is_none(), format!("triple {t}: node {v} in two places"))?;
            }
        }
        for (k, s) in plan.sessions.iter().enumerate() {
            for &(a, b) in s.subgraph.graph.edges() {
                let (u, v) = (s.subgraph.parent_ids[a], s.subgraph.parent_ids[b]);
                ensure(owner.get(&u) == Some(&k) && owner.get(&v) == Some(&k), format!("triple {t}: inter-session edge ({u}, {v})"))?;
            }
        }
    }
    Ok(format!("200 triples ({ncil} ncil, {fsncil} fsncil)"))
}

fn is_connected(g: &TextAttributedGraph) -> bool {
    let n = g.node_count();
    let mut seen = vec![false; n];
    let mut q = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = q.pop_front() {
        for &w in g.neighbors(u) {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                q.push_back(w);
            }
        }
    }
    count == n
}

fn smoothing_convergence() -> Outcome {
    let ks = [1, 2, 4, 8, 16];
    let (mut cases, mut monotone, mut converged) = (0, 0, 0);
    let mut worst_ratio: f64 = 0.0;
    for seed in 0..4u64 {
        let g = synth_tag(&SynthConfig { num_classes: 6, nodes_per_class: 50, intra_p: 0.2, inter_p: 0.02, seed, ..SynthConfig::default() }).map_err(e2s)?;
        let plan = plan_ncil(&g, &NcilConfig { classes_per_session: 2, num_sessions: 3, shots: 10, test_cap: 40 }, seed).map_err(e2s)?;
        for i in 0..plan.num_sessions() {
            if !is_connected(&plan.sessions[i].subgraph.graph) {
                continue;
            }
            let task = plan.build_eval_task(&g, i, EvalMode::Local, EvalEdges::IntraOnly).map_err(e2s)?;
            let gaps: Vec<f64> = ks
                .iter()
                .map(|&k| {
                    let cfg = TaskProtoConfig { k, weighting: Weighting::Laplacian, self_loops: true };
                    Ok(l2(&session_task_prototype(&plan, i, &cfg)?, &query_task_prototype(&task, &cfg)?))
                })
                .collect::<Result<_, Error>>()
                .map_err(e2s)?;
            cases += 1;
            monotone += usize::from(gaps.windows(2).all(|w| w[1] <= w[0]));
            let ratio = gaps[4] / gaps[0];
            converged += usize::from(ratio < 0.1);
            worst_ratio = worst_ratio.max(ratio);
        }
    }
    let detail = format!(
        "{cases} connected session graphs; non-increasing in {monotone}; below 10% by k=16 in {converged}; worst k=16/k=1 ratio {:.1}%",
        100.0 * worst_ratio
    );
    ensure(cases > 0 && monotone == cases && converged == cases, detail.clone())?;
    Ok(detail)
}

fn trainer_nulls() -> Outcome {
    let (g, plan) = leakage_data(0)?;
    let t = PromptTemplate::cora_simgcl();
    let hp = Hyper { epochs: 60, ..Hyper::default() };
    for mode in [EvalMode::Global, EvalMode::Local] {
        let ctx = RunContext { graph: &g, plan: &plan, mode, eval_edges: EvalEdges::IntraOnly, provider: None, cache: None, template: &t };
        let base = run_method(Method::Gcn, &ctx, &hp, 3).map_err(e2s)?.matrix;
        let ewc = run_method(Method::Ewc, &ctx, &Hyper { strength: 0.0, ..hp.clone() }, 3).map_err(e2s)?.matrix;
        let lwf = run_method(Method::Lwf, &ctx, &Hyper { lambda: 0.0, ..hp.clone() }, 3).map_err(e2s)?.matrix;
        let bits = |m: &AccuracyMatrix| m.rows.iter().flatten().map(|v| v.map(f64::to_bits)).collect::<Vec<_>>();
        ensure(bits(&ewc) == bits(&base), format!("{mode:?}: EWC(0) differs from gcn"))?;
        ensure(bits(&lwf) == bits(&base), format!("{mode:?}: LwF(0) differs from gcn"))?;
    }

    let s = &plan.sessions[0];
    let sub = &s.subgraph.graph;
    let adj = gcn_normalized_adjacency(sub);
    let rows = s.subgraph.to_local_all(&s.train_nodes).map_err(e2s)?;
    let labels: Vec<usize> = rows.iter().map(|&r| if sub.labels()[r] == s.class_ids[0] { 0 } else { 1 }).collect();
    let data = SessionData { propagation: Some(&adj), features: sub.features(), train_rows: &rows, train_labels: &labels };
    let p = ModelParams::init(Arch::Gcn2Mlp1, sub.feature_dim(), 16, 2, 0.5, false, 1).map_err(e2s)?;
    let anchor = EwcAnchor::new(&p, fisher_diagonal(&p, &data, Exec::default()).map_err(e2s)?, 100.0).map_err(e2s)?;
    let (pen, grad) = ewc_penalty(&p, &anchor).map_err(e2s)?;
    ensure(pen == 0.0 && grad.values().all(|x| x == 0.0), format!("EWC penalty at anchor is {pen}"))?;

    let (logits, _) = model_forward(&p, Some(&adj), sub.features(), None).map_err(e2s)?;
    let (loss, dl) = lwf_distill(&logits, &logits, &[0, 1], 2.0, 1.0).map_err(e2s)?;
    ensure(loss == 0.0 && dl.data().iter().all(|&x| x == 0.0), format!("LwF at identical logits is {loss}"))?;
    Ok("EWC(0) and LwF(0) bit-identical to gcn in both modes; penalties exactly 0".into())
}

fn prompt_contracts() -> Outcome {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let cfg: RunConfig = serde_json::from_value(serde_json::json!({
        "dataset_name": "cora",
        "synth": { "num_classes": 7, "nodes_per_class": 160, "feature_dim": 16, "intra_p": 0.02, "inter_p": 0.002, "seed": 10 },
        "ncil": { "classes_per_session": 2, "num_sessions": 3, "shots": 100, "test_cap": 50 },
        "hop": [20, 20]
    }))
    .map_err(e2s)?;
    cfg.validate().map_err(e2s)?;
    let g = cfg.load_graph().map_err(e2s)?;
    let plan = cfg.plan(&g, 0).map_err(e2s)?;
    let template = cfg.prompt_template();
    let mut counts = Vec::new();
    for i in 0..plan.num_sessions() {
        let path = dir.path().join(format!("s{i}.jsonl"));
        let n = emit_instruction_jsonl(&plan, i, &template, &cfg.hop, &path, 0).map_err(e2s)?;
        let lines = std::fs::read_to_string(&path).map_err(e2s)?.lines().count();
        ensure(n == 200 && lines == 200, format!("session {i}: {n} records, {lines} lines"))?;
        counts.push(lines);
    }

    let s = &plan.sessions[1];
    let v = s.train_nodes[3];
    let a = node_prompt(&s.subgraph, v, &plan.cumulative_classes(1), &template, &cfg.hop, 9).map_err(e2s)?;
    let b = node_prompt(&s.subgraph, v, &plan.cumulative_classes(1), &template, &cfg.hop, 9).map_err(e2s)?;
    save_tag(&g, &dir.path().join("data")).map_err(e2s)?;
    let reloaded = load_tag(&dir.path().join("data")).map_err(e2s)?;
    let replan = cfg.plan(&reloaded, 0).map_err(e2s)?;
    let c = node_prompt(&replan.sessions[1].subgraph, v, &replan.cumulative_classes(1), &template, &cfg.hop, 9).map_err(e2s)?;
    ensure(a.as_bytes() == b.as_bytes() && a.as_bytes() == c.as_bytes(), "render_prompt output is not byte-stable")?;
    ensure(a.contains("You are a good graph reasoner"), "system string missing")?;
    let ego = sample_ego_graph(&g, v, &cfg.hop, 9).map_err(e2s)?;
    let names: Vec<(usize, String)> = (0..7).map(|c| (c, g.class_names()[c].clone())).collect();
    ensure(render_prompt(&ego, &template, &names).map_err(e2s)? == render_prompt(&ego, &template, &names).map_err(e2s)?, "render_prompt differs on rerun")?;

    let server = StubEmbeddingServer::start(vec![16]).map_err(e2s)?;
    let provider = HttpProvider::new(&server.endpoint(), "stub", 8, 2, Duration::from_millis(1), None).map_err(e2s)?;
    let path = dir.path().join("cache.bin");
    let nodes: Vec<usize> = s.train_nodes[..20].to_vec();
    let render = |u: usize| node_prompt(&s.subgraph, u, &plan.cumulative_classes(1), &template, &cfg.hop, 9);
    let mut cache = EmbeddingCache::open(&path).map_err(e2s)?;
    let first = get_or_embed(&provider, Some(&mut cache), &nodes, render).map_err(e2s)?;
    let sent = server.inputs_seen();
    let mut reopened = EmbeddingCache::open(&path).map_err(e2s)?;
    let second = get_or_embed(&provider, Some(&mut reopened), &nodes, render).map_err(e2s)?;
    let bits = |m: &DenseMatrix| m.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ensure(bits(&first) == bits(&second) && server.inputs_seen() == sent, "cache round trip is not bit-identical")?;
    let key = cache_key(&provider.source_id(), provider.model(), &render(nodes[0]).map_err(e2s)?);
    let stored = reopened.get(&key).ok_or("cache entry missing")?;
    ensure(stored.iter().zip(first.row(0)).all(|(s, f)| f64::from(*s).to_bits() == f.to_bits()), "cached vector differs")?;

    let drift = StubEmbeddingServer::start(vec![16, 24]).map_err(e2s)?;
    let p2 = HttpProvider::new(&drift.endpoint(), "stub", 4, 1, Duration::from_millis(1), None).map_err(e2s)?;
    let texts: Vec<String> = (0..8).map(|i| format!("t{i}")).collect();
    let err = p2.embed(&(0..8).collect::<Vec<_>>(), &texts);
    ensure(matches!(err, Err(Error::DimensionDrift { .. })), "dimension drift not rejected")?;
    Ok(format!("{counts:?} lines per session; prompts byte-stable; cache bit-identical; drift rejected"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("leakage mirror", leakage_mirror),
        ("degradation mirror", degradation_mirror),
        ("gradient exactness", gradient_exactness),
        ("prototype oracle equivalence", prototype_oracles),
        ("metric oracle", metric_oracle),
        ("score scale invariance", scale_invariance),
        ("session-plan invariants", plan_invariants),
        ("smoothing convergence", smoothing_convergence),
        ("trainer null tests", trainer_nulls),
        ("prompt and data contracts", prompt_contracts),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(detail) => println!("acceptance {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("acceptance {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
