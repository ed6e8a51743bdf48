//! Ego-graph prompt rendering and instruction-dataset emission.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{sample_ego_graph, EgoGraph, InducedSubgraph, TextAttributedGraph};
use crate::session::SessionPlan;

/// Placeholder in `question_text` replaced by the class-name list.
pub const LABEL_SLOT: &str = "{labels}";
/// Sentence used in place of the neighbor blocks for an isolated node.
pub const ISOLATED_SENTINEL: &str = "no known neighbors.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub system_text: String,
    pub task_description: String,
    /// Must contain [`LABEL_SLOT`] exactly once.
    pub question_text: String,
    /// One lead-in per hop, e.g. `"known neighbor papers at hop 1:"`.
    pub hop_framing: Vec<String>,
    /// Whitespace-token cap per node text.
    pub max_node_text_len: usize,
    pub include_label: bool,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::cora_simgcl()
    }
}

impl PromptTemplate {
    /// Two-hop citation template for the Cora dataset.
    pub fn cora_simgcl() -> Self {
        Self::citation("Cora", "sub-categories of AI")
    }

    /// Two-hop citation template; `category_kind` names what the labels are.
    pub fn citation(dataset: &str, category_kind: &str) -> Self {
        Self {
            system_text: format!(
                "You are a good graph reasoner. Given a graph description from the {dataset} dataset, understand the structure and answer the question."
            ),
            task_description: String::new(),
            question_text: format!(
                "Please predict which of the following {category_kind} this paper belongs to. Choose from the following categories: {LABEL_SLOT}."
            ),
            hop_framing: vec!["known neighbor papers at hop 1:".into(), "known neighbor papers at hop 2:".into()],
            max_node_text_len: 128,
            include_label: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let slots = self.question_text.matches(LABEL_SLOT).count();
        if slots != 1 {
            return Err(Error::Invalid(format!(
                "question_text must contain {LABEL_SLOT} exactly once, found {slots}"
            )));
        }
        if self.max_node_text_len == 0 {
            return Err(Error::Invalid("max_node_text_len must be >= 1".into()));
        }
        if self.hop_framing.is_empty() {
            return Err(Error::Invalid("hop_framing needs at least one hop".into()));
        }
        Ok(())
    }
}

/// First `max` whitespace-delimited tokens of `text`, joined by single spaces.
pub fn truncate_tokens(text: &str, max: usize) -> String {
    text.split_whitespace().take(max).collect::<Vec<_>>().join(" ")
}

/// Renders `ego` with ego-local ids (center is node 0, neighbors numbered in
/// hop order). `class_names` lists the answer options in class-id order.
pub fn render_prompt(ego: &EgoGraph, template: &PromptTemplate, class_names: &[(usize, String)]) -> Result<String> {
    template.validate()?;
    if class_names.is_empty() {
        return Err(Error::Empty("class list"));
    }
    if ego.hop_nodes.len() > template.hop_framing.len() {
        return Err(Error::Invalid(format!(
            "ego graph has {} hops but the template frames {}",
            ego.hop_nodes.len(),
            template.hop_framing.len()
        )));
    }
    let mut names = class_names.to_vec();
    names.sort_by_key(|(c, _)| *c);
    let label_of = |c: usize| names.iter().find(|(k, _)| *k == c).map(|(_, n)| n.as_str());
    let node = |id: usize, text: &str, label: Option<usize>| {
        let mut s = format!("[Node {id}][{}]", truncate_tokens(text, template.max_node_text_len));
        if template.include_label {
            if let Some(name) = label.and_then(label_of) {
                s.push_str(&format!("[{name}]"));
            }
        }
        s
    };

    let mut out = String::new();
    out.push_str(&template.system_text);
    out.push('\n');
    if !template.task_description.is_empty() {
        out.push_str(&template.task_description);
        out.push('\n');
    }
    out.push_str("Instruction: ");
    out.push_str(&node(0, &ego.center_text, None));
    if ego.is_isolated() {
        out.push_str(", ");
        out.push_str(ISOLATED_SENTINEL);
    } else {
        let mut next_id = 1;
        for (h, nodes) in ego.hop_nodes.iter().enumerate() {
            out.push_str(", ");
            out.push_str(&template.hop_framing[h]);
            out.push(' ');
            if nodes.is_empty() {
                out.push_str("none");
            }
            let rendered: Vec<String> = nodes
                .iter()
                .enumerate()
                .map(|(i, _)| node(next_id + i, &ego.hop_texts[h][i], ego.hop_labels[h].get(i).copied()))
                .collect();
            next_id += nodes.len();
            out.push_str(&rendered.join(", "));
        }
        out.push('.');
    }
    out.push('\n');
    let labels: Vec<&str> = names.iter().map(|(_, n)| n.as_str()).collect();
    out.push_str("Question: ");
    out.push_str(&template.question_text.replace(LABEL_SLOT, &labels.join(", ")));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub node: usize,
    pub prompt: String,
    pub answer: String,
}

/// Settings recorded next to an instruction file for the external tuner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraHints {
    pub r: u32,
    pub alpha: u32,
    pub dropout: f64,
}

impl Default for LoraHints {
    fn default() -> Self {
        Self {
            r: 5,
            alpha: 16,
            dropout: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionMeta {
    pub records: usize,
    pub session: usize,
    pub seed: u64,
    pub fanouts: Vec<usize>,
    pub max_node_text_len: usize,
    pub include_label: bool,
    pub classes: Vec<String>,
    pub lora: LoraHints,
}

/// Sidecar path: `dir/stem.jsonl` → `dir/stem.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

/// Prompt for parent-graph node `v`, with its ego graph sampled inside
/// `graph` and the answer options drawn from `classes`.
pub fn node_prompt(
    graph: &InducedSubgraph,
    v: usize,
    classes: &[usize],
    template: &PromptTemplate,
    fanouts: &[usize],
    seed: u64,
) -> Result<String> {
    let local = graph.to_local(v).ok_or(Error::Invalid(format!("node {v} is not in the prompt graph")))?;
    let ego = sample_ego_graph(&graph.graph, local, fanouts, seed)?;
    render_prompt(&ego, template, &class_subset(&graph.graph, classes))
}

/// Prompt for parent-graph node `v` of session `i`, sampled inside that
/// session's subgraph, listing the cumulative classes up to `i`.
pub fn session_prompt(
    plan: &SessionPlan,
    i: usize,
    v: usize,
    template: &PromptTemplate,
    fanouts: &[usize],
    seed: u64,
) -> Result<String> {
    let s = plan.sessions.get(i).ok_or(Error::OutOfRange {
        what: "session index",
        index: i,
        bound: plan.sessions.len(),
    })?;
    node_prompt(&s.subgraph, v, &plan.cumulative_classes(i), template, fanouts, seed)
}

fn class_subset(g: &TextAttributedGraph, classes: &[usize]) -> Vec<(usize, String)> {
    classes.iter().map(|&c| (c, g.class_names()[c].clone())).collect()
}

/// One JSONL line per train node of 0-based session `i`, plus the sidecar
/// metadata file. Returns the record count.
pub fn emit_instruction_jsonl(
    plan: &SessionPlan,
    i: usize,
    template: &PromptTemplate,
    fanouts: &[usize],
    path: &Path,
    seed: u64,
) -> Result<usize> {
    template.validate()?;
    let s = plan.sessions.get(i).ok_or(Error::OutOfRange {
        what: "session index",
        index: i,
        bound: plan.sessions.len(),
    })?;
    let g = &s.subgraph.graph;
    let mut body = Vec::new();
    for &v in &s.train_nodes {
        let local = s.subgraph.to_local(v).expect("train node in subgraph");
        let record = PromptRecord {
            node: v,
            prompt: session_prompt(plan, i, v, template, fanouts, seed)?,
            answer: g.class_names()[g.labels()[local]].clone(),
        };
        serde_json::to_writer(&mut body, &record)?;
        body.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&body).map_err(|e| Error::io(path, e))?;
    let meta = InstructionMeta {
        records: s.train_nodes.len(),
        session: i,
        seed,
        fanouts: fanouts.to_vec(),
        max_node_text_len: template.max_node_text_len,
        include_label: template.include_label,
        classes: class_subset(g, &plan.cumulative_classes(i)).into_iter().map(|(_, n)| n).collect(),
        lora: LoraHints::default(),
    };
    let mp = meta_path(path);
    std::fs::write(&mp, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&mp, e))?;
    Ok(s.train_nodes.len())
}
