//! Prototype classifiers: class-prototype banks with cosine scoring, TEEN
//! calibration, and task prototypes for task-ID routing.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::graph::{laplacian_smooth, smoothing_degrees, TextAttributedGraph, Weighting};
use crate::numerics::dense::{dot, euclidean, norm};
use crate::numerics::DenseMatrix;
use crate::numerics::{model_forward, Arch, ModelParams};
use crate::rng::{self, domain};
use crate::session::{EvalTask, SessionPlan};
use crate::trainers::{predict_columns, train_session, SessionData};

/// Cosine similarity; 0 when either side has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

fn l2_normalized(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

/// Index of the largest value; ties go to the first.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-class mean over a seeded sample of at most `sample_num` member rows.
/// Returned in ascending class order.
pub fn build_prototypes(
    embeddings: &DenseMatrix,
    labels: &[usize],
    sample_num: usize,
    seed: u64,
) -> Result<BTreeMap<usize, Vec<f64>>> {
    if labels.len() != embeddings.rows() {
        return Err(Error::shape("build_prototypes labels", embeddings.rows(), labels.len()));
    }
    if sample_num == 0 {
        return Err(Error::Invalid("sample_num must be >= 1".into()));
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (row, &y) in labels.iter().enumerate() {
        members.entry(y).or_default().push(row);
    }
    let mut out = BTreeMap::new();
    for (class, rows) in members {
        let chosen = if rows.len() > sample_num {
            let mut rng = rng::stream(seed, rng::tag(domain::PROTO_SAMPLE, class as u64));
            let mut idx = index::sample(&mut rng, rows.len(), sample_num).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| rows[i]).collect()
        } else {
            rows
        };
        out.insert(class, embeddings.mean_of_rows(&chosen)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub vector: Vec<f64>,
    pub session: usize,
}

/// Class-indexed prototypes scored by `τ · cos`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    temperature: f64,
    dim: usize,
    entries: BTreeMap<usize, BankEntry>,
}

impl PrototypeBank {
    pub fn new(dim: usize, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Invalid(format!("temperature must be positive, got {temperature}")));
        }
        if dim == 0 {
            return Err(Error::Invalid("prototype dimension must be positive".into()));
        }
        Ok(Self {
            temperature,
            dim,
            entries: BTreeMap::new(),
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn classes(&self) -> Vec<usize> {
        self.entries.keys().copied().collect()
    }

    pub fn get(&self, class: usize) -> Option<&BankEntry> {
        self.entries.get(&class)
    }

    /// Adds prototypes from `session`. Classes already present are kept as
    /// they are. Returns the classes actually added.
    pub fn insert(&mut self, protos: BTreeMap<usize, Vec<f64>>, session: usize) -> Result<Vec<usize>> {
        let mut added = Vec::new();
        for (class, vector) in protos {
            if vector.len() != self.dim {
                return Err(Error::shape("prototype", self.dim, vector.len()));
            }
            if self.entries.contains_key(&class) {
                continue;
            }
            self.entries.insert(class, BankEntry { vector, session });
            added.push(class);
        }
        Ok(added)
    }

    /// Scores every class (ascending class order) and predicts the argmax.
    pub fn classify(&self, h: &[f64]) -> Result<(Vec<(usize, f64)>, usize)> {
        self.classify_among(h, None)
    }

    /// As [`classify`](Self::classify), restricted to `allowed` classes when given.
    pub fn classify_among(&self, h: &[f64], allowed: Option<&[usize]>) -> Result<(Vec<(usize, f64)>, usize)> {
        if h.len() != self.dim {
            return Err(Error::shape("classify", self.dim, h.len()));
        }
        let scores: Vec<(usize, f64)> = self
            .entries
            .iter()
            .filter(|(c, _)| allowed.is_none_or(|a| a.contains(c)))
            .map(|(&c, e)| (c, self.temperature * cosine(h, &e.vector)))
            .collect();
        if scores.is_empty() {
            return Err(Error::Empty("prototype bank"));
        }
        let values: Vec<f64> = scores.iter().map(|s| s.1).collect();
        let pred = scores[argmax(&values)].0;
        Ok((scores, pred))
    }

    /// Predicted class for every row of `h`.
    pub fn predict_batch(&self, h: &DenseMatrix, allowed: Option<&[usize]>, exec: Exec) -> Result<Vec<usize>> {
        exec::map_range(exec, h.rows(), |r| self.classify_among(h.row(r), allowed).map(|(_, p)| p))
            .into_iter()
            .collect()
    }

    /// Convex shift of each novel prototype toward a softmax-weighted mix of
    /// base prototypes. All vectors are L2-normalized before the similarity
    /// and the result is normalized again.
    pub fn teen_calibrate(&mut self, base: &[usize], novel: &[usize], softmax_t: f64, alpha: f64) -> Result<()> {
        if base.is_empty() {
            return Err(Error::Empty("TEEN base class set"));
        }
        if let Some(c) = novel.iter().find(|c| base.contains(c)) {
            return Err(Error::Invalid(format!("class {c} is both base and novel")));
        }
        let fetch = |c: &usize| {
            self.entries
                .get(c)
                .map(|e| l2_normalized(&e.vector))
                .ok_or(Error::Invalid(format!("no prototype for class {c}")))
        };
        let base_vecs: Vec<Vec<f64>> = base.iter().map(fetch).collect::<Result<_>>()?;
        let mut updates = Vec::with_capacity(novel.len());
        for c in novel {
            let p = fetch(c)?;
            let sims: Vec<f64> = base_vecs.iter().map(|b| softmax_t * cosine(&p, b)).collect();
            let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = sims.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            let mut shifted: Vec<f64> = p.iter().map(|x| alpha * x).collect();
            for (b, e) in base_vecs.iter().zip(&exps) {
                let w = (1.0 - alpha) * e / z;
                shifted.iter_mut().zip(b).for_each(|(s, x)| *s += w * x);
            }
            updates.push((*c, l2_normalized(&shifted)));
        }
        for (c, v) in updates {
            self.entries.get_mut(&c).expect("checked above").vector = v;
        }
        Ok(())
    }

    /// Writes `<stem>.json` (metadata) and `<stem>.bin` (vectors).
    pub fn save(&self, json_path: &Path, bin_path: &Path) -> Result<()> {
        let meta = BankFile {
            temperature: self.temperature,
            dim: self.dim,
            entries: self.entries.iter().map(|(&class, e)| BankMeta { class, session: e.session }).collect(),
        };
        let json = serde_json::to_vec_pretty(&meta)?;
        std::fs::write(json_path, json).map_err(|e| Error::io(json_path, e))?;
        let mut bin = Vec::with_capacity(self.entries.len() * self.dim * 8);
        for e in self.entries.values() {
            for v in &e.vector {
                bin.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(bin_path, bin).map_err(|e| Error::io(bin_path, e))
    }

    pub fn load(json_path: &Path, bin_path: &Path) -> Result<Self> {
        let text = std::fs::read(json_path).map_err(|e| Error::io(json_path, e))?;
        let meta: BankFile = serde_json::from_slice(&text)?;
        let bin = std::fs::read(bin_path).map_err(|e| Error::io(bin_path, e))?;
        let expect = meta.entries.len() * meta.dim * 8;
        if bin.len() != expect {
            return Err(Error::format(bin_path.display().to_string(), None, format!("expected {expect} bytes, found {}", bin.len())));
        }
        let mut bank = Self::new(meta.dim, meta.temperature)?;
        let mut floats = bin.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for m in meta.entries {
            let vector: Vec<f64> = floats.by_ref().take(meta.dim).collect();
            if bank.entries.insert(m.class, BankEntry { vector, session: m.session }).is_some() {
                return Err(Error::format(json_path.display().to_string(), None, format!("class {} listed twice", m.class)));
            }
        }
        Ok(bank)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankFile {
    temperature: f64,
    dim: usize,
    entries: Vec<BankMeta>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankMeta {
    class: usize,
    session: usize,
}

/// How a task prototype aggregates node features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskProtoConfig {
    pub k: usize,
    pub weighting: Weighting,
    pub self_loops: bool,
}

impl Default for TaskProtoConfig {
    fn default() -> Self {
        Self {
            k: 8,
            weighting: Weighting::Laplacian,
            self_loops: true,
        }
    }
}

/// Task prototype over `nodes` (ids local to `g`).
///
/// `Laplacian`: smooth `X` for `k` steps, then average `z_j · D̂_jj^{-1/2}`.
/// `PlainMean`: plain mean of the raw rows; `k` is ignored.
pub fn task_prototype(g: &TextAttributedGraph, nodes: &[usize], x: &DenseMatrix, cfg: &TaskProtoConfig) -> Result<Vec<f64>> {
    if nodes.is_empty() {
        return Err(Error::Empty("task prototype node set"));
    }
    if x.rows() != g.node_count() {
        return Err(Error::shape("task_prototype features", g.node_count(), x.rows()));
    }
    match cfg.weighting {
        Weighting::PlainMean => x.mean_of_rows(nodes),
        Weighting::Laplacian => {
            let z = laplacian_smooth(x, g, cfg.k, Weighting::Laplacian, cfg.self_loops)?;
            let deg = smoothing_degrees(g, cfg.self_loops);
            let mut acc = vec![0.0; x.cols()];
            for &v in nodes {
                if v >= g.node_count() {
                    return Err(Error::OutOfRange {
                        what: "node id",
                        index: v,
                        bound: g.node_count(),
                    });
                }
                let w = if deg[v] > 0.0 { 1.0 / deg[v].sqrt() } else { 0.0 };
                acc.iter_mut().zip(z.row(v)).for_each(|(a, zv)| *a += zv * w);
            }
            let inv = 1.0 / nodes.len() as f64;
            acc.iter_mut().for_each(|a| *a *= inv);
            Ok(acc)
        }
    }
}

/// Stored per-task prototypes, in plan order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPrototypeSet {
    pub config: TaskProtoConfig,
    pub prototypes: Vec<Vec<f64>>,
}

impl TaskPrototypeSet {
    pub fn new(config: TaskProtoConfig) -> Self {
        Self {
            config,
            prototypes: Vec::new(),
        }
    }

    pub fn push(&mut self, p: Vec<f64>) -> Result<()> {
        if let Some(first) = self.prototypes.first() {
            if first.len() != p.len() {
                return Err(Error::shape("task prototype", first.len(), p.len()));
            }
        }
        self.prototypes.push(p);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }
}

/// 0-based index of the nearest task prototype (Euclidean); ties go to the
/// lowest index. Only the first `candidates` tasks are considered when given.
pub fn predict_task_id(query: &[f64], set: &TaskPrototypeSet, candidates: Option<usize>) -> Result<usize> {
    let n = candidates.unwrap_or(set.len()).min(set.len());
    if n == 0 {
        return Err(Error::Empty("task prototype set"));
    }
    let mut best = (0, f64::INFINITY);
    for (t, p) in set.prototypes[..n].iter().enumerate() {
        if p.len() != query.len() {
            return Err(Error::shape("predict_task_id", p.len(), query.len()));
        }
        let d = euclidean(query, p);
        if d < best.1 {
            best = (t, d);
        }
    }
    Ok(best.0)
}

/// Settings for the per-task `mlp2` heads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            epochs: 200,
            lr: 0.01,
            dropout: 0.5,
        }
    }
}

/// A head trained on one session's classes only.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub params: ModelParams,
    /// Output column `c` predicts `classes[c]`.
    pub classes: Vec<usize>,
}

impl TaskHead {
    /// Class ids for the given feature rows.
    pub fn predict(&self, x: &DenseMatrix) -> Result<Vec<usize>> {
        let (logits, _) = model_forward(&self.params, None, x, None)?;
        let rows: Vec<usize> = (0..x.rows()).collect();
        Ok(predict_columns(&logits, &rows).into_iter().map(|c| self.classes[c]).collect())
    }
}

/// Trains the `mlp2` head for 0-based session `i` on its raw train features.
pub fn fit_task_head(g: &TextAttributedGraph, plan: &SessionPlan, i: usize, cfg: &HeadConfig, seed: u64) -> Result<TaskHead> {
    let s = plan.sessions.get(i).ok_or(Error::OutOfRange {
        what: "session index",
        index: i,
        bound: plan.sessions.len(),
    })?;
    let x = g.features().gather_rows(&s.train_nodes)?;
    let labels: Vec<usize> = s
        .train_nodes
        .iter()
        .map(|&v| s.class_ids.iter().position(|&c| c == g.labels()[v]).expect("plan validated"))
        .collect();
    let rows: Vec<usize> = (0..x.rows()).collect();
    let head_seed = rng::stream(seed, rng::tag(domain::INIT, 1 + i as u64)).next_u64();
    let mut params = ModelParams::init(Arch::Mlp2, x.cols(), cfg.hidden_dim, s.class_ids.len(), cfg.dropout, false, head_seed)?;
    let data = SessionData {
        propagation: None,
        features: &x,
        train_rows: &rows,
        train_labels: &labels,
    };
    train_session(&mut params, &data, cfg.epochs, cfg.lr, None, head_seed)?;
    Ok(TaskHead {
        params,
        classes: s.class_ids.clone(),
    })
}

/// Stored train-side task prototype of 0-based session `i`.
pub fn session_task_prototype(plan: &SessionPlan, i: usize, cfg: &TaskProtoConfig) -> Result<Vec<f64>> {
    let s = &plan.sessions[i];
    let sub = &s.subgraph;
    task_prototype(&sub.graph, &sub.to_local_all(&s.train_nodes)?, sub.graph.features(), cfg)
}

/// Query-side task prototype over the eval nodes of `task`.
pub fn query_task_prototype(task: &EvalTask, cfg: &TaskProtoConfig) -> Result<Vec<f64>> {
    let g = &task.graph.graph;
    task_prototype(g, &task.eval_local()?, g.features(), cfg)
}

/// Routes `task` to the nearest of the first `candidates` stored tasks and
/// classifies its eval nodes with that task's head. Returns the chosen task
/// and the predicted class ids.
pub fn predict_routed(
    task: &EvalTask,
    heads: &[TaskHead],
    prototypes: &TaskPrototypeSet,
    candidates: usize,
) -> Result<(usize, Vec<usize>)> {
    let query = query_task_prototype(task, &prototypes.config)?;
    let t = predict_task_id(&query, prototypes, Some(candidates))?;
    let head = heads.get(t).ok_or(Error::Invalid(format!("no head for predicted task {t}")))?;
    let x = task.graph.graph.features().gather_rows(&task.eval_local()?)?;
    Ok((t, head.predict(&x)?))
}
