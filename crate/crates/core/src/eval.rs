//! Accuracy matrices, summary metrics, the task-ID leakage diagnostic, and
//! report writers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{TextAttributedGraph, Weighting};
use crate::proto::{fit_task_head, predict_routed, query_task_prototype, session_task_prototype, HeadConfig, TaskHead, TaskProtoConfig, TaskPrototypeSet};
use crate::session::{EvalEdges, EvalMode, EvalTask, SessionPlan};

/// Lower-triangular accuracy matrix. Row `i` holds accuracies measured after
/// training session `i`. Local mode fills the whole triangle; global mode
/// only the diagonal (the single cumulative task).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub mode: EvalMode,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(mode: EvalMode, n: usize) -> Self {
        Self {
            mode,
            rows: (0..n).map(|i| vec![None; i + 1]).collect(),
        }
    }

    /// A fully populated local matrix from explicit rows.
    pub fn from_local_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self {
            mode: EvalMode::Local,
            rows: rows.into_iter().map(|r| r.into_iter().map(Some).collect()).collect(),
        };
        m.validate()?;
        Ok(m)
    }

    /// A global matrix from per-session cumulative accuracies.
    pub fn from_global_diagonal(diag: &[f64]) -> Result<Self> {
        let mut m = Self::new(EvalMode::Global, diag.len());
        for (i, &a) in diag.iter().enumerate() {
            m.set(i, i, a)?;
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.rows.get(i).and_then(|r| r.get(j)).copied().flatten()
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) -> Result<()> {
        if j > i || i >= self.n() {
            return Err(Error::OutOfRange {
                what: "accuracy matrix entry",
                index: i * self.n() + j,
                bound: self.n() * self.n(),
            });
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Invalid(format!("accuracy {v} outside [0, 1]")));
        }
        self.rows[i][j] = Some(v);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(format!("malformed accuracy matrix: {m}")));
        if self.rows.is_empty() {
            return bad("no rows".into());
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != i + 1 {
                return bad(format!("row {i} has {} entries, expected {}", r.len(), i + 1));
            }
            for (j, v) in r.iter().enumerate() {
                let needed = self.mode == EvalMode::Local || i == j;
                match v {
                    None if needed => return bad(format!("entry ({i}, {j}) missing")),
                    Some(_) if !needed => return bad(format!("entry ({i}, {j}) set in global mode")),
                    Some(a) if !(0.0..=1.0).contains(a) => return bad(format!("entry ({i}, {j}) = {a}")),
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Per-session accuracy: the diagonal in global mode, the row mean in
    /// local mode.
    pub fn session_accuracies(&self) -> Vec<f64> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| match self.mode {
                EvalMode::Global => r[i].unwrap_or(f64::NAN),
                EvalMode::Local => r.iter().map(|v| v.unwrap_or(f64::NAN)).sum::<f64>() / r.len() as f64,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean_acc: f64,
    pub final_acc: f64,
    /// Local mode only.
    pub aa: Option<f64>,
    /// Local mode only.
    pub af: Option<f64>,
}

pub fn summarize(m: &AccuracyMatrix) -> Result<Summary> {
    m.validate()?;
    let n = m.n();
    let acc = m.session_accuracies();
    let mean_acc = acc.iter().sum::<f64>() / n as f64;
    let final_acc = acc[n - 1];
    let (aa, af) = match m.mode {
        EvalMode::Global => (None, None),
        EvalMode::Local => {
            let last: Vec<f64> = m.rows[n - 1].iter().map(|v| v.expect("validated")).collect();
            let aa = last.iter().sum::<f64>() / n as f64;
            let af = (0..n - 1).map(|j| last[j] - m.get(j, j).expect("validated")).sum::<f64>() / n as f64;
            (Some(aa), Some(af))
        }
    };
    Ok(Summary {
        mean_acc,
        final_acc,
        aa,
        af,
    })
}

/// Fraction of `predictions` equal to `labels`. Every prediction must be in
/// `allowed`.
pub fn accuracy(predictions: &[usize], labels: &[usize], allowed: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("evaluation node set"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::shape("predictions", labels.len(), predictions.len()));
    }
    if let Some(p) = predictions.iter().find(|p| !allowed.contains(p)) {
        return Err(Error::Invalid(format!("prediction {p} is outside the cumulative class set")));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Runs `predict` on `task` and scores it against the true labels.
pub fn evaluate<F>(task: &EvalTask, g: &TextAttributedGraph, predict: F) -> Result<f64>
where
    F: FnOnce(&EvalTask) -> Result<Vec<usize>>,
{
    if task.eval_nodes.is_empty() {
        return Err(Error::Empty("evaluation task"));
    }
    let preds = predict(task)?;
    accuracy(&preds, &task.eval_labels(g), &task.class_ids)
}

/// One row of the leakage comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageRow {
    /// `tpp`, `mean_pooling`, or `mlp` (heads with the true task id).
    pub variant: String,
    pub weighting: Option<Weighting>,
    pub k: Option<usize>,
    /// Per session: whether its test-node query prototype is nearest to its
    /// own stored prototype among all sessions.
    pub task_id_correct: Vec<bool>,
    pub task_id_accuracy: f64,
    pub matrix: AccuracyMatrix,
    pub aa: f64,
    pub af: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub sessions: usize,
    pub rows: Vec<LeakageRow>,
}

impl LeakageReport {
    /// Plain-text table of the comparison.
    pub fn table(&self) -> String {
        let mut out = String::from("variant        k     task-id acc   AA      AF\n");
        for r in &self.rows {
            let k = r.k.map_or("-".to_string(), |k| k.to_string());
            let _ = writeln!(
                out,
                "{:<14} {:<5} {:<13.3} {:<7.1} {:.1}",
                r.variant,
                k,
                r.task_id_accuracy,
                100.0 * r.aa,
                100.0 * r.af
            );
        }
        out
    }
}

/// Local-testing matrix for heads routed by task prototypes. With
/// `prototypes = None` every task uses its own head.
pub fn routed_local_matrix(
    g: &TextAttributedGraph,
    plan: &SessionPlan,
    heads: &[TaskHead],
    prototypes: Option<&TaskPrototypeSet>,
) -> Result<AccuracyMatrix> {
    let n = plan.num_sessions();
    let mut m = AccuracyMatrix::new(EvalMode::Local, n);
    for i in 0..n {
        for j in 0..=i {
            let mut task = plan.build_eval_task(g, j, EvalMode::Local, EvalEdges::IntraOnly)?;
            task.class_ids = plan.cumulative_classes(i);
            let acc = evaluate(&task, g, |t| match prototypes {
                Some(set) => predict_routed(t, heads, set, i + 1).map(|(_, p)| p),
                None => {
                    let x = t.graph.graph.features().gather_rows(&t.eval_local()?)?;
                    heads[j].predict(&x)
                }
            })?;
            m.set(i, j, acc)?;
        }
    }
    Ok(m)
}

/// Task-ID leakage audit under local testing: for each `k` and weighting,
/// task-ID accuracy of test-side query prototypes against all stored
/// train-side prototypes, and AA/AF of prototype-routed heads.
pub fn leakage_diagnostic(
    g: &TextAttributedGraph,
    plan: &SessionPlan,
    k_grid: &[usize],
    self_loops: bool,
    head_cfg: &HeadConfig,
    seed: u64,
) -> Result<LeakageReport> {
    let n = plan.num_sessions();
    let heads: Vec<TaskHead> = (0..n).map(|i| fit_task_head(g, plan, i, head_cfg, seed)).collect::<Result<_>>()?;
    let queries: Vec<EvalTask> = (0..n)
        .map(|j| plan.build_eval_task(g, j, EvalMode::Local, EvalEdges::IntraOnly))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut variants: Vec<(String, TaskProtoConfig)> = k_grid
        .iter()
        .map(|&k| {
            (
                "tpp".to_string(),
                TaskProtoConfig {
                    k,
                    weighting: Weighting::Laplacian,
                    self_loops,
                },
            )
        })
        .collect();
    variants.push((
        "mean_pooling".into(),
        TaskProtoConfig {
            k: 0,
            weighting: Weighting::PlainMean,
            self_loops,
        },
    ));
    for (variant, cfg) in variants {
        let mut set = TaskPrototypeSet::new(cfg);
        for i in 0..n {
            set.push(session_task_prototype(plan, i, &cfg)?)?;
        }
        let task_id_correct = queries
            .iter()
            .enumerate()
            .map(|(j, t)| Ok(crate::proto::predict_task_id(&query_task_prototype(t, &cfg)?, &set, None)? == j))
            .collect::<Result<Vec<bool>>>()?;
        let matrix = routed_local_matrix(g, plan, &heads, Some(&set))?;
        rows.push(leakage_row(variant, Some(cfg.weighting), (cfg.weighting == Weighting::Laplacian).then_some(cfg.k), task_id_correct, matrix)?);
    }
    let oracle = routed_local_matrix(g, plan, &heads, None)?;
    rows.push(leakage_row("mlp".into(), None, None, vec![true; n], oracle)?);
    Ok(LeakageReport { sessions: n, rows })
}

fn leakage_row(
    variant: String,
    weighting: Option<Weighting>,
    k: Option<usize>,
    task_id_correct: Vec<bool>,
    matrix: AccuracyMatrix,
) -> Result<LeakageRow> {
    let s = summarize(&matrix)?;
    let task_id_accuracy = task_id_correct.iter().filter(|&&c| c).count() as f64 / task_id_correct.len() as f64;
    Ok(LeakageRow {
        variant,
        weighting,
        k,
        task_id_correct,
        task_id_accuracy,
        matrix,
        aa: s.aa.expect("local"),
        af: s.af.expect("local"),
    })
}

/// Provenance of one `(method, seed)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub method: String,
    pub dataset: String,
    pub scenario: String,
    pub mode: EvalMode,
    pub eval_edges: EvalEdges,
    pub seed: u64,
    pub config_hash: String,
    pub session_seconds: Vec<f64>,
    pub accuracy_matrix: Vec<Vec<Option<f64>>>,
}

/// The canonical record of a run (`results.json` holds a list of these).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: RunManifest,
    pub matrix: AccuracyMatrix,
    pub summary: Summary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Md,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "md" => Ok(Self::Md),
            other => Err(Error::Invalid(format!("unknown report format {other:?} (json, csv, md)"))),
        }
    }
}

pub fn read_results(path: &Path) -> Result<Vec<RunResult>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Runs averaged over seeds, keyed by `(method, dataset label)`.
struct Group {
    method: String,
    dataset: String,
    session_acc: Vec<f64>,
    mean_acc: f64,
    final_acc: f64,
    aa: Option<f64>,
    af: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let all: Option<Vec<f64>> = v.collect();
    all.map(|a| mean(a.into_iter()))
}

fn groups(results: &[RunResult]) -> Vec<Group> {
    let uniform = results.windows(2).all(|w| w[0].run.scenario == w[1].run.scenario && w[0].run.mode == w[1].run.mode);
    let mut by_key: BTreeMap<(String, String), Vec<&RunResult>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in results {
        let dataset = if uniform {
            r.run.dataset.clone()
        } else {
            format!("{} ({}, {})", r.run.dataset, r.run.scenario, r.run.mode.as_str())
        };
        let key = (r.run.method.clone(), dataset);
        if !by_key.contains_key(&key) {
            order.push(key.clone());
        }
        by_key.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let runs = &by_key[&key];
            let n = runs.iter().map(|r| r.matrix.n()).min().unwrap_or(0);
            let accs: Vec<Vec<f64>> = runs.iter().map(|r| r.matrix.session_accuracies()).collect();
            Group {
                session_acc: (0..n).map(|i| mean(accs.iter().map(|a| a[i]))).collect(),
                mean_acc: mean(runs.iter().map(|r| r.summary.mean_acc)),
                final_acc: mean(runs.iter().map(|r| r.summary.final_acc)),
                aa: mean_opt(runs.iter().map(|r| r.summary.aa)),
                af: mean_opt(runs.iter().map(|r| r.summary.af)),
                method: key.0,
                dataset: key.1,
            }
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Flat `(method, dataset, session, metric, value)` rows. Runs sharing a
/// method and dataset are averaged over seeds.
pub fn results_csv(results: &[RunResult]) -> String {
    let mut out = String::from("method,dataset,session,metric,value\n");
    for g in groups(results) {
        let (m, d) = (csv_field(&g.method), csv_field(&g.dataset));
        for (i, a) in g.session_acc.iter().enumerate() {
            let _ = writeln!(out, "{m},{d},{},accuracy,{a}", i + 1);
        }
        for (name, v) in [("mean_acc", Some(g.mean_acc)), ("final_acc", Some(g.final_acc)), ("aa", g.aa), ("af", g.af)] {
            let _ = writeln!(out, "{m},{d},,{name},{}", opt(v));
        }
    }
    out
}

/// Per-session accuracy curves, one row per `(method, dataset, session)`.
pub fn curve_csv(results: &[RunResult]) -> String {
    let mut out = String::from("method,dataset,session,accuracy\n");
    for g in groups(results) {
        for (i, a) in g.session_acc.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{a}", csv_field(&g.method), csv_field(&g.dataset), i + 1);
        }
    }
    out
}

/// Ranks of `values` (higher is better, rank 1 best); ties share the mean
/// of the ranks they span.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let r = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Markdown table: one row per method, an `(Ā, A_N)` column pair per
/// dataset, and an average rank column. Values are percentages with one
/// decimal.
pub fn results_markdown(results: &[RunResult]) -> String {
    let gs = groups(results);
    let mut methods: Vec<String> = Vec::new();
    let mut datasets: Vec<String> = Vec::new();
    for g in &gs {
        if !methods.contains(&g.method) {
            methods.push(g.method.clone());
        }
        if !datasets.contains(&g.dataset) {
            datasets.push(g.dataset.clone());
        }
    }
    let cell = |m: &str, d: &str| gs.iter().find(|g| g.method == m && g.dataset == d);
    let mut rank_sum = vec![0.0; methods.len()];
    let mut rank_cnt = vec![0usize; methods.len()];
    for d in &datasets {
        let present: Vec<(usize, f64)> = methods
            .iter()
            .enumerate()
            .filter_map(|(mi, m)| cell(m, d).map(|g| (mi, g.mean_acc)))
            .collect();
        let ranks = fractional_ranks(&present.iter().map(|p| p.1).collect::<Vec<_>>());
        for ((mi, _), r) in present.iter().zip(ranks) {
            rank_sum[*mi] += r;
            rank_cnt[*mi] += 1;
        }
    }
    let mut out = String::from("| Method |");
    for d in &datasets {
        let _ = write!(out, " {d} Ā | {d} A_N |");
    }
    out.push_str(" Rank |\n|---|");
    out.push_str(&"---|".repeat(2 * datasets.len() + 1));
    out.push('\n');
    for (mi, m) in methods.iter().enumerate() {
        let _ = write!(out, "| {m} |");
        for d in &datasets {
            match cell(m, d) {
                Some(g) => {
                    let _ = write!(out, " {:.1} | {:.1} |", 100.0 * g.mean_acc, 100.0 * g.final_acc);
                }
                None => out.push_str(" - | - |"),
            }
        }
        let rank = if rank_cnt[mi] > 0 {
            format!("{:.2}", rank_sum[mi] / rank_cnt[mi] as f64)
        } else {
            "-".into()
        };
        let _ = writeln!(out, " {rank} |");
    }
    out.push_str("\nRank: per dataset, methods are ranked by Ā (1 = best, ties share the mean of their ranks); the column is the mean over datasets.\n");
    out
}

pub fn write_report(results: &[RunResult], path: &Path, format: ReportFormat) -> Result<()> {
    let body = match format {
        ReportFormat::Json => serde_json::to_string_pretty(results)? + "\n",
        ReportFormat::Csv => results_csv(results),
        ReportFormat::Md => results_markdown(results),
    };
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}
