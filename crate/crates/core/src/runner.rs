//! Sequential continual-learning runs: one method over one session plan.

use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embed::{get_or_embed, EmbeddingCache, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::eval::{evaluate, AccuracyMatrix};
use crate::graph::{gcn_normalized_adjacency, InducedSubgraph, TextAttributedGraph, Weighting};
use crate::numerics::{model_forward, Arch, DenseMatrix, ModelParams};
use crate::prompt::{node_prompt, PromptTemplate};
use crate::proto::{
    build_prototypes, fit_task_head, predict_routed, session_task_prototype, HeadConfig, PrototypeBank, TaskHead,
    TaskProtoConfig, TaskPrototypeSet,
};
use crate::rng::{self, domain};
use crate::session::{EvalEdges, EvalMode, EvalTask, SessionPlan};
use crate::trainers::{fisher_diagonal, predict_columns, train_session, DistillSource, EwcAnchor, Regularizer, SessionData};
use crate::Exec;

pub const METHODS: [&str; 9] = [
    "gcn",
    "ewc",
    "lwf",
    "cosine",
    "meanpool_tpp",
    "tpp_heads",
    "simplecil",
    "teen",
    "simgcl_proto",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gcn,
    Ewc,
    Lwf,
    Cosine,
    MeanpoolTpp,
    TppHeads,
    Simplecil,
    Teen,
    SimgclProto,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Gcn,
        Method::Ewc,
        Method::Lwf,
        Method::Cosine,
        Method::MeanpoolTpp,
        Method::TppHeads,
        Method::Simplecil,
        Method::Teen,
        Method::SimgclProto,
    ];

    pub fn as_str(self) -> &'static str {
        METHODS[Self::ALL.iter().position(|&m| m == self).expect("listed")]
    }

    /// Methods whose embeddings come from an external provider.
    pub fn needs_provider(self) -> bool {
        matches!(self, Method::Simplecil | Method::SimgclProto)
    }

    /// Per-class prototype sample cap used when the config leaves it unset.
    pub fn default_sample_num(self) -> usize {
        match self {
            Method::SimgclProto => 50,
            Method::Simplecil => 20,
            _ => 100,
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        METHODS
            .iter()
            .position(|&m| m == s)
            .map(|i| Self::ALL[i])
            .ok_or_else(|| Error::UnknownMethod {
                name: s.to_string(),
                valid: METHODS.to_vec(),
            })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Concrete hyperparameters of a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    pub lr: f64,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub conv_bias: bool,
    /// EWC λ.
    pub strength: f64,
    /// LwF weight.
    pub lambda: f64,
    /// LwF temperature.
    #[serde(rename = "T")]
    pub temperature: f64,
    /// Prototype score scale.
    pub tau: f64,
    pub sample_num: Option<usize>,
    pub k_smooth: usize,
    pub smooth_self_loops: bool,
    #[serde(rename = "softmax_T")]
    pub softmax_t: f64,
    pub shift_weight: f64,
    pub hop: Vec<usize>,
    pub max_node_text_len: usize,
    pub include_label: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            hidden_dim: 64,
            epochs: 200,
            dropout: 0.5,
            conv_bias: false,
            strength: 100.0,
            lambda: 1.0,
            temperature: 2.0,
            tau: 1.0,
            sample_num: None,
            k_smooth: 8,
            smooth_self_loops: true,
            softmax_t: 16.0,
            shift_weight: 0.5,
            hop: vec![20, 20],
            max_node_text_len: 128,
            include_label: false,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.strength < 0.0 || self.lambda < 0.0 {
            return bad("strength and lambda must be >= 0");
        }
        if !(self.temperature > 0.0 && self.tau > 0.0 && self.softmax_t > 0.0) {
            return bad("T, tau and softmax_T must be positive");
        }
        if !(0.0..=1.0).contains(&self.shift_weight) {
            return bad("shift_weight must be in [0, 1]");
        }
        if self.sample_num == Some(0) {
            return bad("sample_num must be >= 1");
        }
        if self.hop.is_empty() || self.max_node_text_len == 0 {
            return bad("hop must be non-empty and max_node_text_len >= 1");
        }
        Ok(())
    }

    fn head_config(&self) -> HeadConfig {
        HeadConfig {
            hidden_dim: self.hidden_dim,
            epochs: self.epochs,
            lr: self.lr,
            dropout: self.dropout,
        }
    }

    fn task_proto(&self, weighting: Weighting) -> TaskProtoConfig {
        TaskProtoConfig {
            k: self.k_smooth,
            weighting,
            self_loops: self.smooth_self_loops,
        }
    }
}

/// Everything a run reads but never mutates.
pub struct RunContext<'a> {
    pub graph: &'a TextAttributedGraph,
    pub plan: &'a SessionPlan,
    pub mode: EvalMode,
    pub eval_edges: EvalEdges,
    pub provider: Option<&'a dyn EmbeddingProvider>,
    pub cache: Option<&'a Mutex<EmbeddingCache>>,
    pub template: &'a PromptTemplate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub matrix: AccuracyMatrix,
    pub session_seconds: Vec<f64>,
}

trait Learner {
    fn learn(&mut self, ctx: &RunContext<'_>, i: usize) -> Result<()>;
    /// Class ids for `task.eval_nodes` after learning session `i`.
    fn predict(&self, ctx: &RunContext<'_>, i: usize, task: &EvalTask) -> Result<Vec<usize>>;
}

/// Trains and evaluates `method` over every session of `ctx.plan`.
pub fn run_method(method: Method, ctx: &RunContext<'_>, hp: &Hyper, seed: u64) -> Result<RunOutput> {
    hp.validate()?;
    if method.needs_provider() && ctx.provider.is_none() {
        return Err(Error::Provider(format!("method {method} requires an embedding provider")));
    }
    let mut learner: Box<dyn Learner> = match method {
        Method::Gcn => Box::new(GcnLearner::new(ctx, hp, seed, Reg::None)),
        Method::Ewc => Box::new(GcnLearner::new(ctx, hp, seed, Reg::Ewc(None))),
        Method::Lwf => Box::new(GcnLearner::new(ctx, hp, seed, Reg::Lwf)),
        Method::Cosine | Method::Teen => Box::new(ProtoLearner::new(method, hp, seed, Embedder::Hidden(GcnLearner::new(ctx, hp, seed, Reg::None)))),
        Method::Simplecil => Box::new(ProtoLearner::new(method, hp, seed, Embedder::Text)),
        Method::SimgclProto => Box::new(ProtoLearner::new(method, hp, seed, Embedder::Prompt)),
        Method::TppHeads => Box::new(RoutedLearner::new(hp, seed, Weighting::Laplacian)),
        Method::MeanpoolTpp => Box::new(RoutedLearner::new(hp, seed, Weighting::PlainMean)),
    };
    let n = ctx.plan.num_sessions();
    let mut matrix = AccuracyMatrix::new(ctx.mode, n);
    let mut session_seconds = Vec::with_capacity(n);
    for i in 0..n {
        let start = Instant::now();
        learner.learn(ctx, i)?;
        let js: Vec<usize> = match ctx.mode {
            EvalMode::Local => (0..=i).collect(),
            EvalMode::Global => vec![i],
        };
        for j in js {
            let mut task = ctx.plan.build_eval_task(ctx.graph, j, ctx.mode, ctx.eval_edges)?;
            task.class_ids = ctx.plan.cumulative_classes(i);
            let acc = evaluate(&task, ctx.graph, |t| learner.predict(ctx, i, t))?;
            matrix.set(i, j, acc)?;
        }
        session_seconds.push(start.elapsed().as_secs_f64());
    }
    Ok(RunOutput { matrix, session_seconds })
}

fn session_seed(seed: u64, i: usize) -> u64 {
    rng::derive(seed, domain::SESSION, i as u64)
}

/// Features, labels and propagation operator of a session for training.
struct Prepared {
    s: crate::numerics::SparseAdjacency,
    train_local: Vec<usize>,
}

enum Reg {
    None,
    Ewc(Option<EwcAnchor>),
    Lwf,
}

/// Two-layer GCN + linear head whose output columns follow the plan's
/// class order and grow at each session.
struct GcnLearner {
    hp: Hyper,
    seed: u64,
    reg: Reg,
    /// Column `c` predicts class `columns[c]`.
    columns: Vec<usize>,
    /// Columns in use after each session.
    cumulative: Vec<usize>,
    params: Option<ModelParams>,
}

impl GcnLearner {
    fn new(ctx: &RunContext<'_>, hp: &Hyper, seed: u64, reg: Reg) -> Self {
        let columns: Vec<usize> = ctx.plan.sessions.iter().flat_map(|s| s.class_ids.iter().copied()).collect();
        let cumulative = ctx
            .plan
            .sessions
            .iter()
            .scan(0, |acc, s| {
                *acc += s.class_ids.len();
                Some(*acc)
            })
            .collect();
        Self {
            hp: hp.clone(),
            seed,
            reg,
            columns,
            cumulative,
            params: None,
        }
    }

    fn prepare(ctx: &RunContext<'_>, i: usize) -> Result<Prepared> {
        let s = &ctx.plan.sessions[i];
        Ok(Prepared {
            s: gcn_normalized_adjacency(&s.subgraph.graph),
            train_local: s.subgraph.to_local_all(&s.train_nodes)?,
        })
    }

    fn train(&mut self, ctx: &RunContext<'_>, i: usize) -> Result<()> {
        let sess = &ctx.plan.sessions[i];
        let prep = Self::prepare(ctx, i)?;
        let x = sess.subgraph.graph.features();
        let labels: Vec<usize> = sess
            .train_nodes
            .iter()
            .map(|&v| self.columns.iter().position(|&c| c == ctx.graph.labels()[v]).expect("class in plan"))
            .collect();
        let total = self.cumulative[i];
        let sseed = session_seed(self.seed, i);
        let previous = match self.params.take() {
            None => {
                self.params = Some(ModelParams::init(
                    Arch::Gcn2Mlp1,
                    x.cols(),
                    self.hp.hidden_dim,
                    total,
                    self.hp.dropout,
                    self.hp.conv_bias,
                    self.seed,
                )?);
                None
            }
            Some(mut p) => {
                let before = p.clone();
                p.grow_classes(total, self.seed)?;
                self.params = Some(p);
                Some(before)
            }
        };
        let p = self.params.as_mut().expect("set above");
        let data = SessionData {
            propagation: Some(&prep.s),
            features: x,
            train_rows: &prep.train_local,
            train_labels: &labels,
        };
        let mut distill;
        let extra: Option<&mut dyn Regularizer> = match (&mut self.reg, previous) {
            (Reg::Ewc(Some(anchor)), _) => Some(anchor),
            (Reg::Lwf, Some(frozen)) => {
                distill = DistillSource::new(frozen, self.hp.temperature, self.hp.lambda)?;
                Some(&mut distill)
            }
            _ => None,
        };
        train_session(p, &data, self.hp.epochs, self.hp.lr, extra, sseed)?;
        if let Reg::Ewc(anchor) = &mut self.reg {
            let fisher = fisher_diagonal(p, &data, Exec::Sequential)?;
            match anchor {
                Some(a) => a.absorb(p, fisher)?,
                None => *anchor = Some(EwcAnchor::new(p, fisher, self.hp.strength)?),
            }
        }
        Ok(())
    }

    fn forward(&self, graph: &InducedSubgraph) -> Result<(DenseMatrix, DenseMatrix)> {
        let p = self.params.as_ref().ok_or(Error::Invalid("model used before training".into()))?;
        let s = gcn_normalized_adjacency(&graph.graph);
        let (logits, cache) = model_forward(p, Some(&s), graph.graph.features(), None)?;
        Ok((logits, cache.hidden().clone()))
    }
}

impl Learner for GcnLearner {
    fn learn(&mut self, ctx: &RunContext<'_>, i: usize) -> Result<()> {
        self.train(ctx, i)
    }

    fn predict(&self, _ctx: &RunContext<'_>, _i: usize, task: &EvalTask) -> Result<Vec<usize>> {
        let (logits, _) = self.forward(&task.graph)?;
        let rows = task.eval_local()?;
        Ok(predict_columns(&logits, &rows).into_iter().map(|c| self.columns[c]).collect())
    }
}

enum Embedder {
    /// Hidden layer of a GCN trained on the first session, then frozen.
    Hidden(GcnLearner),
    /// Provider embedding of each node's raw text.
    Text,
    /// Provider embedding of each node's ego-graph prompt.
    Prompt,
}

struct ProtoLearner {
    method: Method,
    hp: Hyper,
    seed: u64,
    embedder: Embedder,
    bank: Option<PrototypeBank>,
}

impl ProtoLearner {
    fn new(method: Method, hp: &Hyper, seed: u64, embedder: Embedder) -> Self {
        Self {
            method,
            hp: hp.clone(),
            seed,
            embedder,
            bank: None,
        }
    }

    /// Embeddings of parent-graph `nodes` as seen inside `graph`; prompts list
    /// `classes` as the answer options.
    fn embed(&self, ctx: &RunContext<'_>, graph: &InducedSubgraph, nodes: &[usize], classes: &[usize]) -> Result<DenseMatrix> {
        match &self.embedder {
            Embedder::Hidden(gcn) => {
                let (_, hidden) = gcn.forward(graph)?;
                hidden.gather_rows(&graph.to_local_all(nodes)?)
            }
            Embedder::Text => with_cache(ctx, nodes, |v| Ok(ctx.graph.text(v).to_string())),
            Embedder::Prompt => {
                let template = PromptTemplate {
                    max_node_text_len: self.hp.max_node_text_len,
                    include_label: self.hp.include_label,
                    ..ctx.template.clone()
                };
                with_cache(ctx, nodes, |v| node_prompt(graph, v, classes, &template, &self.hp.hop, self.seed))
            }
        }
    }
}

fn with_cache<F>(ctx: &RunContext<'_>, nodes: &[usize], render: F) -> Result<DenseMatrix>
where
    F: Fn(usize) -> Result<String>,
{
    let provider = ctx.provider.ok_or(Error::Provider("no embedding provider configured".into()))?;
    match ctx.cache {
        Some(m) => {
            let mut guard = m.lock().map_err(|_| Error::Provider("embedding cache lock poisoned".into()))?;
            get_or_embed(provider, Some(&mut guard), nodes, render)
        }
        None => get_or_embed(provider, None, nodes, render),
    }
}

impl Learner for ProtoLearner {
    fn learn(&mut self, ctx: &RunContext<'_>, i: usize) -> Result<()> {
        if i == 0 {
            if let Embedder::Hidden(gcn) = &mut self.embedder {
                gcn.train(ctx, 0)?;
            }
        }
        let sess = &ctx.plan.sessions[i];
        let h = self.embed(ctx, &sess.subgraph, &sess.train_nodes, &ctx.plan.cumulative_classes(i))?;
        let labels: Vec<usize> = sess.train_nodes.iter().map(|&v| ctx.graph.labels()[v]).collect();
        let sample_num = self.hp.sample_num.unwrap_or(self.method.default_sample_num());
        let protos = build_prototypes(&h, &labels, sample_num, session_seed(self.seed, i))?;
        let bank = match &mut self.bank {
            Some(b) => b,
            None => self.bank.insert(PrototypeBank::new(h.cols(), self.hp.tau)?),
        };
        bank.insert(protos, i)?;
        if self.method == Method::Teen && i > 0 {
            bank.teen_calibrate(&ctx.plan.sessions[0].class_ids, &sess.class_ids, self.hp.softmax_t, self.hp.shift_weight)?;
        }
        Ok(())
    }

    fn predict(&self, ctx: &RunContext<'_>, _i: usize, task: &EvalTask) -> Result<Vec<usize>> {
        let bank = self.bank.as_ref().ok_or(Error::Empty("prototype bank"))?;
        let h = self.embed(ctx, &task.graph, &task.eval_nodes, &task.class_ids)?;
        bank.predict_batch(&h, Some(&task.class_ids), Exec::Sequential)
    }
}

/// Per-session `mlp2` heads selected by nearest task prototype.
struct RoutedLearner {
    hp: Hyper,
    seed: u64,
    heads: Vec<TaskHead>,
    prototypes: TaskPrototypeSet,
}

impl RoutedLearner {
    fn new(hp: &Hyper, seed: u64, weighting: Weighting) -> Self {
        Self {
            hp: hp.clone(),
            seed,
            heads: Vec::new(),
            prototypes: TaskPrototypeSet::new(hp.task_proto(weighting)),
        }
    }
}

impl Learner for RoutedLearner {
    fn learn(&mut self, ctx: &RunContext<'_>, i: usize) -> Result<()> {
        self.heads.push(fit_task_head(ctx.graph, ctx.plan, i, &self.hp.head_config(), self.seed)?);
        let p = session_task_prototype(ctx.plan, i, &self.prototypes.config)?;
        self.prototypes.push(p)
    }

    fn predict(&self, _ctx: &RunContext<'_>, i: usize, task: &EvalTask) -> Result<Vec<usize>> {
        predict_routed(task, &self.heads, &self.prototypes, i + 1).map(|(_, p)| p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{plan_ncil, NcilConfig};
    use crate::testkit::{synth_tag, SynthConfig};

    fn setup() -> (TextAttributedGraph, SessionPlan) {
        let g = synth_tag(&SynthConfig {
            num_classes: 6,
            nodes_per_class: 30,
            feature_dim: 8,
            ..Default::default()
        })
        .unwrap();
        let plan = plan_ncil(&g, &NcilConfig { classes_per_session: 2, num_sessions: 3, shots: 10, test_cap: 100 }, 0).unwrap();
        (g, plan)
    }

    fn quick() -> Hyper {
        Hyper {
            epochs: 30,
            hidden_dim: 16,
            ..Default::default()
        }
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        let err = "foo".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("gcn") && err.contains("simgcl_proto"), "{err}");
    }

    #[test]
    fn matrix_shapes_per_mode() {
        let (g, plan) = setup();
        let template = PromptTemplate::default();
        for mode in [EvalMode::Local, EvalMode::Global] {
            let ctx = RunContext { graph: &g, plan: &plan, mode, eval_edges: EvalEdges::IntraOnly, provider: None, cache: None, template: &template };
            for m in [Method::Gcn, Method::Cosine, Method::TppHeads] {
                let out = run_method(m, &ctx, &quick(), 1).unwrap();
                assert_eq!(out.matrix.n(), 3);
                out.matrix.validate().unwrap();
                assert_eq!(out.session_seconds.len(), 3);
            }
        }
    }

    #[test]
    fn provider_methods_need_provider() {
        let (g, plan) = setup();
        let template = PromptTemplate::default();
        let ctx = RunContext { graph: &g, plan: &plan, mode: EvalMode::Global, eval_edges: EvalEdges::IntraOnly, provider: None, cache: None, template: &template };
        assert!(matches!(run_method(Method::Simplecil, &ctx, &quick(), 0), Err(Error::Provider(_))));
    }
}
