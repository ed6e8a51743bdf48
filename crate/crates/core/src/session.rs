//! Class-incremental session plans and the local/global evaluation tasks
//! derived from them.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{InducedSubgraph, TextAttributedGraph};
use crate::rng::{self, domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Ncil,
    Fsncil,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Ncil => "ncil",
            Scenario::Fsncil => "fsncil",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Each past task on its own subgraph.
    Local,
    /// One cumulative task over the union of all seen subgraphs.
    Global,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Local => "local",
            EvalMode::Global => "global",
        }
    }
}

/// Which edges a global evaluation graph keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalEdges {
    /// Disjoint union of the session subgraphs.
    #[default]
    IntraOnly,
    /// Everything the full graph induces on the union node set.
    FullUnion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NcilConfig {
    pub classes_per_session: usize,
    pub num_sessions: usize,
    pub shots: usize,
    pub test_cap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsncilConfig {
    pub base_classes: usize,
    pub ways: usize,
    pub num_sessions: usize,
    pub shots_base: usize,
    pub shots_novel: usize,
    pub test_cap: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub class_ids: Vec<usize>,
    /// Labeled nodes per class, exactly `shots` each.
    pub shots: usize,
    pub train_nodes: Vec<usize>,
    pub test_nodes: Vec<usize>,
    /// Induced on `train_nodes ∪ test_nodes`; no inter-session edges.
    pub subgraph: InducedSubgraph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionPlan {
    pub scenario: Scenario,
    pub seed: u64,
    /// Seeded permutation of every retained class; sessions consume a prefix.
    pub class_order: Vec<usize>,
    pub sessions: Vec<Session>,
}

/// Classes with at least `min_samples` nodes, ascending.
pub fn filter_classes(g: &TextAttributedGraph, min_samples: usize) -> Vec<usize> {
    g.class_members()
        .iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty() && m.len() >= min_samples)
        .map(|(c, _)| c)
        .collect()
}

fn shuffled_classes(g: &TextAttributedGraph, min_samples: usize, needed: usize, seed: u64) -> Result<Vec<usize>> {
    let mut retained = filter_classes(g, min_samples);
    if retained.len() < needed {
        return Err(Error::InsufficientClasses {
            needed,
            available: retained.len(),
        });
    }
    let mut rng = rng::stream(seed, rng::tag(domain::CLASS_ORDER, 0));
    retained.shuffle(&mut rng);
    Ok(retained)
}

fn sample_class(
    members: &[usize],
    class: usize,
    shots: usize,
    test_cap: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if members.len() < shots + 1 {
        return Err(Error::InsufficientSamples {
            class,
            have: members.len(),
            need: shots + 1,
        });
    }
    let mut rng = rng::stream(seed, rng::tag(domain::TRAIN_SAMPLE, class as u64));
    let picked: BTreeSet<usize> = index::sample(&mut rng, members.len(), shots).into_iter().collect();
    let train: Vec<usize> = picked.iter().map(|&i| members[i]).collect();
    let rest: Vec<usize> = (0..members.len()).filter(|i| !picked.contains(i)).map(|i| members[i]).collect();
    let test = if rest.len() > test_cap {
        let mut rng = rng::stream(seed, rng::tag(domain::TEST_SAMPLE, class as u64));
        let mut idx = index::sample(&mut rng, rest.len(), test_cap).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| rest[i]).collect()
    } else {
        rest
    };
    Ok((train, test))
}

fn build_sessions(
    g: &TextAttributedGraph,
    blocks: &[(Vec<usize>, usize)],
    test_cap: usize,
    seed: u64,
) -> Result<Vec<Session>> {
    let members = g.class_members();
    blocks
        .iter()
        .map(|(classes, shots)| {
            let mut train_nodes = Vec::new();
            let mut test_nodes = Vec::new();
            for &c in classes {
                let (tr, te) = sample_class(&members[c], c, *shots, test_cap, seed)?;
                train_nodes.extend(tr);
                test_nodes.extend(te);
            }
            let all: Vec<usize> = train_nodes.iter().chain(&test_nodes).copied().collect();
            let subgraph = g.induced_subgraph(&all)?;
            Ok(Session {
                class_ids: classes.clone(),
                shots: *shots,
                train_nodes,
                test_nodes,
                subgraph,
            })
        })
        .collect()
}

/// NCIL: `num_sessions` blocks of `classes_per_session` classes, each class
/// with exactly `shots` labeled nodes.
pub fn plan_ncil(g: &TextAttributedGraph, cfg: &NcilConfig, seed: u64) -> Result<SessionPlan> {
    if cfg.classes_per_session == 0 || cfg.num_sessions == 0 {
        return Err(Error::Invalid("classes_per_session and num_sessions must be >= 1".into()));
    }
    let needed = cfg.classes_per_session * cfg.num_sessions;
    let order = shuffled_classes(g, cfg.shots + 1, needed, seed)?;
    let blocks: Vec<(Vec<usize>, usize)> = order[..needed]
        .chunks(cfg.classes_per_session)
        .map(|c| (c.to_vec(), cfg.shots))
        .collect();
    let sessions = build_sessions(g, &blocks, cfg.test_cap, seed)?;
    Ok(SessionPlan {
        scenario: Scenario::Ncil,
        seed,
        class_order: order,
        sessions,
    })
}

/// FSNCIL: a base session of `base_classes` classes with `shots_base` each,
/// then `num_sessions - 1` sessions of `ways` classes with `shots_novel` each.
pub fn plan_fsncil(g: &TextAttributedGraph, cfg: &FsncilConfig, seed: u64) -> Result<SessionPlan> {
    if cfg.base_classes == 0 || cfg.num_sessions == 0 || (cfg.num_sessions > 1 && cfg.ways == 0) {
        return Err(Error::Invalid("base_classes, num_sessions and ways must be >= 1".into()));
    }
    let needed = cfg.base_classes + cfg.ways * (cfg.num_sessions - 1);
    let min_samples = cfg.shots_base.max(cfg.shots_novel) + 1;
    let order = shuffled_classes(g, min_samples, needed, seed)?;
    let mut blocks = vec![(order[..cfg.base_classes].to_vec(), cfg.shots_base)];
    blocks.extend(
        order[cfg.base_classes..needed]
            .chunks(cfg.ways.max(1))
            .map(|c| (c.to_vec(), cfg.shots_novel)),
    );
    let sessions = build_sessions(g, &blocks, cfg.test_cap, seed)?;
    Ok(SessionPlan {
        scenario: Scenario::Fsncil,
        seed,
        class_order: order,
        sessions,
    })
}

/// One evaluation unit.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTask {
    /// 0-based index of the session this task is anchored at.
    pub session_index: usize,
    pub mode: EvalMode,
    pub graph: InducedSubgraph,
    /// Parent-graph node ids to score.
    pub eval_nodes: Vec<usize>,
    /// Cumulative classes of sessions `0..=session_index`, ascending.
    pub class_ids: Vec<usize>,
}

impl EvalTask {
    pub fn eval_local(&self) -> Result<Vec<usize>> {
        self.graph.to_local_all(&self.eval_nodes)
    }

    pub fn eval_labels(&self, g: &TextAttributedGraph) -> Vec<usize> {
        self.eval_nodes.iter().map(|&v| g.labels()[v]).collect()
    }
}

impl SessionPlan {
    pub fn num_sessions(&self) -> usize {
        self.sessions.len()
    }

    /// Classes of sessions `0..=i`, ascending.
    pub fn cumulative_classes(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.sessions[..=i].iter().flat_map(|s| s.class_ids.iter().copied()).collect();
        out.sort_unstable();
        out
    }

    /// All classes the plan uses, ascending.
    pub fn all_classes(&self) -> Vec<usize> {
        self.cumulative_classes(self.sessions.len() - 1)
    }

    /// Evaluation task at 0-based session `i`.
    pub fn build_eval_task(&self, g: &TextAttributedGraph, i: usize, mode: EvalMode, edges: EvalEdges) -> Result<EvalTask> {
        if i >= self.sessions.len() {
            return Err(Error::OutOfRange {
                what: "session index",
                index: i,
                bound: self.sessions.len(),
            });
        }
        let class_ids = self.cumulative_classes(i);
        let (graph, eval_nodes) = match mode {
            EvalMode::Local => {
                let s = &self.sessions[i];
                (s.subgraph.clone(), s.test_nodes.clone())
            }
            EvalMode::Global => {
                let session_of: HashMap<usize, usize> = self.sessions[..=i]
                    .iter()
                    .enumerate()
                    .flat_map(|(k, s)| s.subgraph.parent_ids.iter().map(move |&v| (v, k)))
                    .collect();
                let mut nodes: Vec<usize> = session_of.keys().copied().collect();
                nodes.sort_unstable();
                let graph = match edges {
                    EvalEdges::IntraOnly => g.induced_subgraph_filtered(&nodes, |u, v| session_of[&u] == session_of[&v])?,
                    EvalEdges::FullUnion => g.induced_subgraph(&nodes)?,
                };
                let eval_nodes = self.sessions[..=i].iter().flat_map(|s| s.test_nodes.iter().copied()).collect();
                (graph, eval_nodes)
            }
        };
        Ok(EvalTask {
            session_index: i,
            mode,
            graph,
            eval_nodes,
            class_ids,
        })
    }

    /// Checks every plan invariant against `g`.
    pub fn validate(&self, g: &TextAttributedGraph) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(format!("plan invariant violated: {m}")));
        if self.sessions.is_empty() {
            return bad("no sessions".into());
        }
        let mut seen_classes = BTreeSet::new();
        let mut node_session: HashMap<usize, usize> = HashMap::new();
        for (k, s) in self.sessions.iter().enumerate() {
            for &c in &s.class_ids {
                if c >= g.num_classes() || !seen_classes.insert(c) {
                    return bad(format!("class {c} repeated or out of range in session {k}"));
                }
            }
            let mut per_class: HashMap<usize, usize> = HashMap::new();
            for &v in s.train_nodes.iter().chain(&s.test_nodes) {
                if v >= g.node_count() {
                    return bad(format!("node {v} out of range"));
                }
                if node_session.insert(v, k).is_some() {
                    return bad(format!("node {v} assigned twice"));
                }
                if !s.class_ids.contains(&g.labels()[v]) {
                    return bad(format!("node {v} label outside session {k} classes"));
                }
            }
            for &v in &s.train_nodes {
                *per_class.entry(g.labels()[v]).or_default() += 1;
            }
            for &c in &s.class_ids {
                if per_class.get(&c).copied().unwrap_or(0) != s.shots {
                    return bad(format!("class {c} in session {k} does not have exactly {} shots", s.shots));
                }
            }
            let mut expect: Vec<usize> = s.train_nodes.iter().chain(&s.test_nodes).copied().collect();
            expect.sort_unstable();
            if s.subgraph.parent_ids != expect {
                return bad(format!("session {k} subgraph nodes differ from train ∪ test"));
            }
        }
        for s in &self.sessions {
            for &(a, b) in s.subgraph.graph.edges() {
                let (u, v) = (s.subgraph.parent_ids[a], s.subgraph.parent_ids[b]);
                if node_session.get(&u) != node_session.get(&v) {
                    return bad(format!("inter-session edge ({u}, {v})"));
                }
            }
        }
        Ok(())
    }

    /// Canonical text summary: one header line plus one line per session.
    pub fn digest(&self, g: &TextAttributedGraph) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "plan scenario={} seed={} graph_nodes={} graph_edges={} sessions={} class_order={:?}",
            self.scenario.as_str(),
            self.seed,
            g.node_count(),
            g.edge_count(),
            self.sessions.len(),
            self.class_order
        );
        for (k, s) in self.sessions.iter().enumerate() {
            let names: Vec<String> = s
                .class_ids
                .iter()
                .map(|&c| format!("{c}:{}", g.class_names()[c].replace(['\n', '\r'], " ")))
                .collect();
            let mut h = Sha256::new();
            for v in s.train_nodes.iter().chain(&s.test_nodes) {
                h.update((*v as u64).to_le_bytes());
            }
            let _ = writeln!(
                out,
                "session {k} classes=[{}] shots={} train={} test={} edges={} nodes_sha256={}",
                names.join(", "),
                s.shots,
                s.train_nodes.len(),
                s.test_nodes.len(),
                s.subgraph.graph.edge_count(),
                &hex::encode(h.finalize())[..16]
            );
        }
        out
    }

    pub fn to_json(&self) -> PlanFile {
        PlanFile {
            scenario: self.scenario,
            seed: self.seed,
            class_order: self.class_order.clone(),
            sessions: self
                .sessions
                .iter()
                .map(|s| SessionRecord {
                    class_ids: s.class_ids.clone(),
                    shots: s.shots,
                    train_nodes: s.train_nodes.clone(),
                    test_nodes: s.test_nodes.clone(),
                })
                .collect(),
        }
    }

    /// Rebuilds subgraphs from `file` and validates the result against `g`.
    pub fn from_json(file: &PlanFile, g: &TextAttributedGraph) -> Result<Self> {
        let sessions = file
            .sessions
            .iter()
            .map(|r| {
                let all: Vec<usize> = r.train_nodes.iter().chain(&r.test_nodes).copied().collect();
                Ok(Session {
                    class_ids: r.class_ids.clone(),
                    shots: r.shots,
                    train_nodes: r.train_nodes.clone(),
                    test_nodes: r.test_nodes.clone(),
                    subgraph: g.induced_subgraph(&all)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let plan = SessionPlan {
            scenario: file.scenario,
            seed: file.seed,
            class_order: file.class_order.clone(),
            sessions,
        };
        plan.validate(g)?;
        Ok(plan)
    }
}

/// `plan.json` schema. Subgraphs are rebuilt on load, never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub scenario: Scenario,
    pub seed: u64,
    pub class_order: Vec<usize>,
    pub sessions: Vec<SessionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRecord {
    pub class_ids: Vec<usize>,
    pub shots: usize,
    pub train_nodes: Vec<usize>,
    pub test_nodes: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::test_graphs::simple;
    use crate::testkit::{synth_tag, SynthConfig};

    fn counts_graph() -> TextAttributedGraph {
        let labels: Vec<usize> = std::iter::repeat_n(0, 150)
            .chain(std::iter::repeat_n(1, 80))
            .chain(std::iter::repeat_n(2, 200))
            .collect();
        let n = labels.len();
        TextAttributedGraph::new(
            crate::numerics::DenseMatrix::zeros(n, 1),
            vec![String::new(); n],
            labels,
            vec!["a".into(), "b".into(), "c".into()],
            &[],
        )
        .unwrap()
    }

    #[test]
    fn filtering_by_count() {
        let g = counts_graph();
        assert_eq!(filter_classes(&g, 100), vec![0, 2]);
        assert_eq!(filter_classes(&g, 1), vec![0, 1, 2]);
        assert!(filter_classes(&g, 1000).is_empty());
    }

    fn synth(classes: usize, per_class: usize) -> TextAttributedGraph {
        synth_tag(&SynthConfig {
            num_classes: classes,
            nodes_per_class: per_class,
            feature_dim: classes.max(4),
            intra_p: 0.1,
            inter_p: 0.02,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn ncil_shapes_and_invariants() {
        let g = synth(7, 30);
        let cfg = NcilConfig {
            classes_per_session: 2,
            num_sessions: 3,
            shots: 10,
            test_cap: 500,
        };
        let plan = plan_ncil(&g, &cfg, 1).unwrap();
        plan.validate(&g).unwrap();
        assert_eq!(plan.sessions.len(), 3);
        for s in &plan.sessions {
            assert_eq!(s.class_ids.len(), 2);
            assert_eq!(s.train_nodes.len(), 20);
            assert_eq!(s.test_nodes.len(), 40);
        }
        assert_eq!(plan.class_order.len(), 7);
        assert_eq!(plan.all_classes().len(), 6);

        let other = plan_ncil(&g, &cfg, 2).unwrap();
        assert_ne!(plan.class_order, other.class_order);
        let sizes = |p: &SessionPlan| p.sessions.iter().map(|s| (s.train_nodes.len(), s.test_nodes.len())).collect::<Vec<_>>();
        assert_eq!(sizes(&plan), sizes(&other));
    }

    #[test]
    fn ncil_single_session_and_errors() {
        let g = synth(4, 20);
        let plan = plan_ncil(&g, &NcilConfig { classes_per_session: 4, num_sessions: 1, shots: 5, test_cap: 3 }, 0).unwrap();
        assert_eq!(plan.sessions.len(), 1);
        assert_eq!(plan.sessions[0].test_nodes.len(), 12);
        assert!(matches!(
            plan_ncil(&g, &NcilConfig { classes_per_session: 3, num_sessions: 2, shots: 5, test_cap: 3 }, 0),
            Err(Error::InsufficientClasses { .. })
        ));
        // shots = 20 leaves no test node, so every class is filtered out
        assert!(plan_ncil(&g, &NcilConfig { classes_per_session: 1, num_sessions: 1, shots: 20, test_cap: 3 }, 0).is_err());
    }

    #[test]
    fn fsncil_sizes() {
        let g = synth(7, 30);
        let cfg = FsncilConfig {
            base_classes: 3,
            ways: 2,
            num_sessions: 3,
            shots_base: 10,
            shots_novel: 5,
            test_cap: 500,
        };
        let plan = plan_fsncil(&g, &cfg, 3).unwrap();
        plan.validate(&g).unwrap();
        let sizes: Vec<usize> = plan.sessions.iter().map(|s| s.class_ids.len()).collect();
        assert_eq!(sizes, vec![3, 2, 2]);
        let shots: Vec<usize> = plan.sessions.iter().map(|s| s.shots).collect();
        assert_eq!(shots, vec![10, 5, 5]);
        assert_eq!(plan.sessions[1].train_nodes.len(), 10);
    }

    #[test]
    fn fsncil_arxiv_scale_consumes_forty_classes() {
        let g = synth(40, 8);
        let cfg = FsncilConfig {
            base_classes: 12,
            ways: 4,
            num_sessions: 8,
            shots_base: 4,
            shots_novel: 2,
            test_cap: 10,
        };
        let plan = plan_fsncil(&g, &cfg, 0).unwrap();
        assert_eq!(plan.all_classes().len(), 40);
        assert_eq!(plan.sessions.len(), 8);
    }

    #[test]
    fn eval_tasks_local_and_global() {
        let g = synth(6, 30);
        let plan = plan_ncil(&g, &NcilConfig { classes_per_session: 2, num_sessions: 3, shots: 10, test_cap: 500 }, 5).unwrap();
        let first_local = plan.build_eval_task(&g, 0, EvalMode::Local, EvalEdges::IntraOnly).unwrap();
        let first_global = plan.build_eval_task(&g, 0, EvalMode::Global, EvalEdges::IntraOnly).unwrap();
        assert_eq!(first_local.eval_nodes, first_global.eval_nodes);
        assert_eq!(first_local.graph, first_global.graph);

        let last = plan.build_eval_task(&g, 2, EvalMode::Global, EvalEdges::IntraOnly).unwrap();
        let union: BTreeSet<usize> = plan.sessions.iter().flat_map(|s| s.test_nodes.iter().copied()).collect();
        assert_eq!(last.eval_nodes.len(), union.len());
        assert_eq!(last.eval_nodes.iter().copied().collect::<BTreeSet<_>>(), union);
        assert_eq!(last.class_ids.len(), 6);
        let summed: usize = plan.sessions.iter().map(|s| s.subgraph.graph.edge_count()).sum();
        assert_eq!(last.graph.graph.edge_count(), summed);
        let full = plan.build_eval_task(&g, 2, EvalMode::Global, EvalEdges::FullUnion).unwrap();
        assert!(full.graph.graph.edge_count() > summed);

        let second_local = plan.build_eval_task(&g, 1, EvalMode::Local, EvalEdges::IntraOnly).unwrap();
        assert_eq!(second_local.graph, plan.sessions[1].subgraph);
        assert_eq!(second_local.class_ids, plan.cumulative_classes(1));
        assert_eq!(second_local.class_ids.len(), 4);
        assert!(plan.build_eval_task(&g, 3, EvalMode::Local, EvalEdges::IntraOnly).is_err());
    }

    #[test]
    fn digest_and_json_round_trip() {
        let g = synth(6, 30);
        let cfg = NcilConfig { classes_per_session: 2, num_sessions: 3, shots: 10, test_cap: 500 };
        let a = plan_ncil(&g, &cfg, 9).unwrap();
        let b = plan_ncil(&g, &cfg, 9).unwrap();
        let c = plan_ncil(&g, &cfg, 10).unwrap();
        assert_eq!(a.digest(&g), b.digest(&g));
        assert_ne!(a.digest(&g), c.digest(&g));
        assert_eq!(a.digest(&g).lines().count(), 1 + a.sessions.len());
        let json = serde_json::to_string(&a.to_json()).unwrap();
        let back = SessionPlan::from_json(&serde_json::from_str(&json).unwrap(), &g).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn validation_catches_cross_session_nodes() {
        let g = simple(4, 2, &[(0, 1)]);
        let mut file = PlanFile {
            scenario: Scenario::Ncil,
            seed: 0,
            class_order: vec![0, 1],
            sessions: vec![
                SessionRecord { class_ids: vec![0], shots: 1, train_nodes: vec![0], test_nodes: vec![2] },
                SessionRecord { class_ids: vec![1], shots: 1, train_nodes: vec![1], test_nodes: vec![3] },
            ],
        };
        SessionPlan::from_json(&file, &g).unwrap();
        file.sessions[1].test_nodes = vec![2];
        assert!(SessionPlan::from_json(&file, &g).is_err());
    }
}
