//! Run configuration: one JSON document, with hyperparameter grids that
//! expand to a cross-product of runs.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::{EmbeddingCache, EmbeddingSource};
use crate::error::{Error, Result};
use crate::eval::{summarize, RunManifest, RunResult};
use crate::exec::{self, Exec};
use crate::graph::{load_tag, TextAttributedGraph};
use crate::prompt::PromptTemplate;
use crate::runner::{run_method, Hyper, Method, RunContext};
use crate::session::{plan_fsncil, plan_ncil, EvalEdges, EvalMode, FsncilConfig, NcilConfig, Scenario, SessionPlan};
use crate::testkit::{synth_tag, SynthConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// A single value or a list of values to sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> Grid<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            Grid::One(v) => vec![v.clone()],
            Grid::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Dataset directory. Relative paths resolve against the config file.
    pub dataset: Option<PathBuf>,
    /// Synthetic dataset used when `dataset` is absent.
    pub synth: Option<SynthConfig>,
    /// Label for reports; defaults to the dataset directory name or `synth`.
    pub dataset_name: Option<String>,
    pub scenario: Scenario,
    pub ncil: NcilConfig,
    pub fsncil: FsncilConfig,
    pub mode: EvalMode,
    pub eval_edges: EvalEdges,
    pub methods: Vec<String>,
    pub seeds: Vec<u64>,

    pub lr: Grid<f64>,
    pub hidden_dim: Grid<usize>,
    pub epochs: Grid<usize>,
    pub dropout: Grid<f64>,
    pub strength: Grid<f64>,
    pub lambda: Grid<f64>,
    #[serde(rename = "T")]
    pub temperature: Grid<f64>,
    pub tau: Grid<f64>,
    pub sample_num: Option<Grid<usize>>,
    pub k_smooth: Grid<usize>,
    #[serde(rename = "softmax_T")]
    pub softmax_t: Grid<f64>,
    pub shift_weight: Grid<f64>,

    pub conv_bias: bool,
    pub smooth_self_loops: bool,
    pub hop: Vec<usize>,
    pub max_node_text_len: usize,
    pub include_label: bool,

    pub provider: Option<EmbeddingSource>,
    pub template: Option<PromptTemplate>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let h = Hyper::default();
        Self {
            schema_version: SCHEMA_VERSION,
            dataset: None,
            synth: None,
            dataset_name: None,
            scenario: Scenario::Ncil,
            ncil: NcilConfig {
                classes_per_session: 2,
                num_sessions: 3,
                shots: 100,
                test_cap: 500,
            },
            fsncil: FsncilConfig {
                base_classes: 3,
                ways: 2,
                num_sessions: 3,
                shots_base: 100,
                shots_novel: 5,
                test_cap: 500,
            },
            mode: EvalMode::Global,
            eval_edges: EvalEdges::IntraOnly,
            methods: vec!["gcn".into()],
            seeds: vec![0],
            lr: Grid::One(h.lr),
            hidden_dim: Grid::One(h.hidden_dim),
            epochs: Grid::One(h.epochs),
            dropout: Grid::One(h.dropout),
            strength: Grid::One(h.strength),
            lambda: Grid::One(h.lambda),
            temperature: Grid::One(h.temperature),
            tau: Grid::One(h.tau),
            sample_num: None,
            k_smooth: Grid::One(h.k_smooth),
            softmax_t: Grid::One(h.softmax_t),
            shift_weight: Grid::One(h.shift_weight),
            conv_bias: h.conv_bias,
            smooth_self_loops: h.smooth_self_loops,
            hop: h.hop,
            max_node_text_len: h.max_node_text_len,
            include_label: h.include_label,
            provider: None,
            template: None,
        }
    }
}

fn cross<T: Clone>(acc: Vec<Hyper>, values: Vec<T>, set: impl Fn(&mut Hyper, T)) -> Vec<Hyper> {
    acc.iter()
        .flat_map(|h| {
            values.iter().map(|v| {
                let mut h = h.clone();
                set(&mut h, v.clone());
                h
            })
        })
        .collect()
}

impl RunConfig {
    /// Parses and validates `path`; relative paths inside are resolved
    /// against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_slice(&bytes).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = &mut cfg.dataset {
            rebase(d);
        }
        match &mut cfg.provider {
            Some(EmbeddingSource::File { matrix, index }) => {
                rebase(matrix);
                if let Some(i) = index {
                    rebase(i);
                }
            }
            Some(EmbeddingSource::Http { cache: Some(c), .. }) => rebase(c),
            _ => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Invalid(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.dataset.is_some() && self.synth.is_some() {
            return Err(Error::Invalid("set either dataset or synth, not both".into()));
        }
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::Invalid("methods and seeds must be non-empty".into()));
        }
        for m in self.parsed_methods()? {
            if m.needs_provider() && self.provider.is_none() {
                return Err(Error::Invalid(format!("method {m} requires a provider")));
            }
        }
        if let Some(t) = &self.template {
            t.validate()?;
        }
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        for h in self.expand() {
            h.validate()?;
        }
        Ok(())
    }

    pub fn parsed_methods(&self) -> Result<Vec<Method>> {
        self.methods.iter().map(|m| m.parse()).collect()
    }

    /// Cross-product of every grid, in field order.
    pub fn expand(&self) -> Vec<Hyper> {
        let base = Hyper {
            conv_bias: self.conv_bias,
            smooth_self_loops: self.smooth_self_loops,
            hop: self.hop.clone(),
            max_node_text_len: self.max_node_text_len,
            include_label: self.include_label,
            ..Hyper::default()
        };
        let mut out = vec![base];
        out = cross(out, self.lr.values(), |h, v| h.lr = v);
        out = cross(out, self.hidden_dim.values(), |h, v| h.hidden_dim = v);
        out = cross(out, self.epochs.values(), |h, v| h.epochs = v);
        out = cross(out, self.dropout.values(), |h, v| h.dropout = v);
        out = cross(out, self.strength.values(), |h, v| h.strength = v);
        out = cross(out, self.lambda.values(), |h, v| h.lambda = v);
        out = cross(out, self.temperature.values(), |h, v| h.temperature = v);
        out = cross(out, self.tau.values(), |h, v| h.tau = v);
        let samples = self.sample_num.as_ref().map_or(vec![None], |g| g.values().into_iter().map(Some).collect());
        out = cross(out, samples, |h, v| h.sample_num = v);
        out = cross(out, self.k_smooth.values(), |h, v| h.k_smooth = v);
        out = cross(out, self.softmax_t.values(), |h, v| h.softmax_t = v);
        out = cross(out, self.shift_weight.values(), |h, v| h.shift_weight = v);
        out
    }

    pub fn dataset_label(&self) -> String {
        if let Some(n) = &self.dataset_name {
            return n.clone();
        }
        match &self.dataset {
            Some(d) => d.file_name().map_or("dataset".into(), |f| f.to_string_lossy().into_owned()),
            None => "synth".into(),
        }
    }

    pub fn load_graph(&self) -> Result<TextAttributedGraph> {
        match (&self.dataset, &self.synth) {
            (Some(d), _) => load_tag(d),
            (None, Some(s)) => synth_tag(s),
            (None, None) => synth_tag(&SynthConfig::default()),
        }
    }

    pub fn plan(&self, g: &TextAttributedGraph, seed: u64) -> Result<SessionPlan> {
        match self.scenario {
            Scenario::Ncil => plan_ncil(g, &self.ncil, seed),
            Scenario::Fsncil => plan_fsncil(g, &self.fsncil, seed),
        }
    }

    pub fn prompt_template(&self) -> PromptTemplate {
        let mut t = self.template.clone().unwrap_or_else(|| {
            let name = self.dataset_label();
            if name.eq_ignore_ascii_case("cora") {
                PromptTemplate::cora_simgcl()
            } else {
                PromptTemplate::citation(&name, "categories")
            }
        });
        t.max_node_text_len = self.max_node_text_len;
        t.include_label = self.include_label;
        t
    }

    /// Hash of everything that determines a run's outcome apart from method
    /// and seed.
    pub fn config_hash(&self, hyper: &Hyper) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            schema_version: u32,
            dataset: String,
            dataset_path: &'a Option<PathBuf>,
            synth: &'a Option<SynthConfig>,
            scenario: Scenario,
            ncil: &'a NcilConfig,
            fsncil: &'a FsncilConfig,
            mode: EvalMode,
            eval_edges: EvalEdges,
            hyper: &'a Hyper,
            provider: &'a Option<EmbeddingSource>,
            template: PromptTemplate,
        }
        let h = Hashed {
            schema_version: self.schema_version,
            dataset: self.dataset_label(),
            dataset_path: &self.dataset,
            synth: &self.synth,
            scenario: self.scenario,
            ncil: &self.ncil,
            fsncil: &self.fsncil,
            mode: self.mode,
            eval_edges: self.eval_edges,
            hyper,
            provider: &self.provider,
            template: self.prompt_template(),
        };
        hex::encode(Sha256::digest(serde_json::to_vec(&h).expect("serializable")))
    }
}

/// Executes every `(method, seed, grid point)` run of `cfg`. Independent
/// runs are spread over `exec`; each run is sequential internally.
pub fn run_experiment(cfg: &RunConfig, exec: Exec) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let g = cfg.load_graph()?;
    let methods = cfg.parsed_methods()?;
    let plans: Vec<SessionPlan> = cfg.seeds.iter().map(|&s| cfg.plan(&g, s)).collect::<Result<_>>()?;
    let provider = cfg.provider.as_ref().map(EmbeddingSource::open).transpose()?;
    let cache = match cfg.provider.as_ref().and_then(EmbeddingSource::cache_path) {
        Some(p) => Some(Mutex::new(EmbeddingCache::open(p)?)),
        None => None,
    };
    let template = cfg.prompt_template();
    let hypers = cfg.expand();
    let mut jobs = Vec::new();
    for &m in &methods {
        for (si, &seed) in cfg.seeds.iter().enumerate() {
            for h in &hypers {
                jobs.push((m, si, seed, h));
            }
        }
    }
    let results = exec::map_range(exec, jobs.len(), |k| {
        let (method, si, seed, hyper) = jobs[k];
        let ctx = RunContext {
            graph: &g,
            plan: &plans[si],
            mode: cfg.mode,
            eval_edges: cfg.eval_edges,
            provider: provider.as_deref(),
            cache: cache.as_ref(),
            template: &template,
        };
        log::info!("running {method} seed {seed}");
        let out = run_method(method, &ctx, hyper, seed)?;
        let summary = summarize(&out.matrix)?;
        Ok(RunResult {
            run: RunManifest {
                method: method.as_str().to_string(),
                dataset: cfg.dataset_label(),
                scenario: cfg.scenario.as_str().to_string(),
                mode: cfg.mode,
                eval_edges: cfg.eval_edges,
                seed,
                config_hash: cfg.config_hash(hyper),
                session_seconds: out.session_seconds,
                accuracy_matrix: out.matrix.rows.clone(),
            },
            matrix: out.matrix,
            summary,
            diagnostics: (hypers.len() > 1).then(|| serde_json::json!({ "hyper": hyper })),
        })
    });
    results.into_iter().collect()
}
