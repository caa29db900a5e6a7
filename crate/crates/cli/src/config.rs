//! Run configuration files.
//!
//! Grammar: one `key = value` per line, grouped under `[section]` headers.
//! `#` starts a comment line. Relative paths are resolved against the
//! directory holding the file. Unknown sections or keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use textomic::model::ModelConfig;
use textomic::training::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataFiles {
    pub nodes: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub paths: Option<PathBuf>,
    pub expression: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisSettings {
    pub alpha: f64,
    pub top_k: usize,
    pub target_population: Option<String>,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            alpha: textomic::analysis::DEFAULT_ALPHA,
            top_k: 10,
            target_population: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetEvalSettings {
    pub gold: Option<PathBuf>,
    pub network: Option<PathBuf>,
    pub max_edges: Option<usize>,
    pub undirected: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedSettings {
    pub endpoint: Option<String>,
    pub batch_size: usize,
    pub retries: u32,
    pub timeout_secs: f64,
}

impl Default for EmbedSettings {
    fn default() -> Self {
        Self {
            endpoint: None,
            batch_size: 32,
            retries: 3,
            timeout_secs: 30.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataFiles,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub analysis: AnalysisSettings,
    pub net_eval: NetEvalSettings,
    pub embed: EmbedSettings,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataFiles::default(),
            train: TrainConfig::default(),
            seeds: vec![0],
            analysis: AnalysisSettings::default(),
            net_eval: NetEvalSettings::default(),
            embed: EmbedSettings::default(),
            out: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| anyhow!("`{key}`: cannot parse `{v}`"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("`{key}`: expected true or false, got `{v}`"),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|x| parse_num(key, x.trim())).collect()
}

impl RunConfig {
    pub fn load(file: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
        let base = file.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in {}", file.display()))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        let resolve = |v: &str| -> PathBuf {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = || format!("line {}", no + 1);
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}: expected `key = value`", at()))?;
            let (key, v) = (key.trim(), value.trim());
            match (section.as_str(), key) {
                ("data", "nodes") => cfg.data.nodes = Some(resolve(v)),
                ("data", "edges") => cfg.data.edges = Some(resolve(v)),
                ("data", "paths") => cfg.data.paths = Some(resolve(v)),
                ("data", "expression") => cfg.data.expression = Some(resolve(v)),
                ("data", "labels") => cfg.data.labels = Some(resolve(v)),
                ("data", "embeddings") => cfg.data.embeddings = Some(resolve(v)),
                ("model", "layers") => cfg.train.model.layers = parse_num(key, v)?,
                ("model", "h_emb") => cfg.train.model.h_emb = parse_num(key, v)?,
                ("model", "heads") => cfg.train.model.heads = parse_num(key, v)?,
                ("model", "d_k") => cfg.train.model.d_k = parse_num(key, v)?,
                ("model", "r") => cfg.train.model.r = parse_num(key, v)?,
                ("model", "u") => cfg.train.model.u = parse_num(key, v)?,
                ("model", "d_llm") => cfg.train.model.d_llm = parse_num(key, v)?,
                ("model", "d_expand") => cfg.train.model.d_expand = parse_num(key, v)?,
                ("model", "d_max") => cfg.train.model.d_max = parse_num(key, v)?,
                ("train", "learning_rate") => cfg.train.learning_rate = parse_num(key, v)?,
                ("train", "epochs") => cfg.train.epochs = parse_num(key, v)?,
                ("train", "batch_size") => cfg.train.batch_size = parse_num(key, v)?,
                ("train", "split") => {
                    let r: Vec<f64> = parse_list(key, v)?;
                    cfg.train.split_ratios = r
                        .try_into()
                        .map_err(|_| anyhow!("{}: `split` takes three ratios", at()))?;
                }
                ("train", "seeds") => cfg.seeds = parse_list(key, v)?,
                ("analysis", "alpha") => cfg.analysis.alpha = parse_num(key, v)?,
                ("analysis", "top_k") => cfg.analysis.top_k = parse_num(key, v)?,
                ("analysis", "target_population") => {
                    cfg.analysis.target_population = Some(v.to_string())
                }
                ("net_eval", "gold") => cfg.net_eval.gold = Some(resolve(v)),
                ("net_eval", "network") => cfg.net_eval.network = Some(resolve(v)),
                ("net_eval", "max_edges") => cfg.net_eval.max_edges = Some(parse_num(key, v)?),
                ("net_eval", "undirected") => cfg.net_eval.undirected = parse_bool(key, v)?,
                ("embed", "endpoint") => cfg.embed.endpoint = Some(v.to_string()),
                ("embed", "batch_size") => cfg.embed.batch_size = parse_num(key, v)?,
                ("embed", "retries") => cfg.embed.retries = parse_num(key, v)?,
                ("embed", "timeout_secs") => cfg.embed.timeout_secs = parse_num(key, v)?,
                ("output", "dir") => cfg.out = Some(resolve(v)),
                (s, k) => bail!("{}: unknown key `{k}` in section [{s}]", at()),
            }
        }
        if cfg.seeds.is_empty() {
            bail!("seed list is empty");
        }
        Ok(cfg)
    }

    /// Canonical text of every setting, used for the manifest hash.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let d = &self.data;
        let _ = writeln!(s, "[data]");
        for (k, v) in [
            ("nodes", &d.nodes),
            ("edges", &d.edges),
            ("paths", &d.paths),
            ("expression", &d.expression),
            ("labels", &d.labels),
            ("embeddings", &d.embeddings),
        ] {
            if v.is_some() {
                let _ = writeln!(s, "{k} = {}", path(v));
            }
        }
        let m: &ModelConfig = &self.train.model;
        let _ = writeln!(s, "[model]");
        for (k, v) in [
            ("layers", m.layers),
            ("h_emb", m.h_emb),
            ("heads", m.heads),
            ("d_k", m.d_k),
            ("r", m.r),
            ("u", m.u),
            ("d_llm", m.d_llm),
            ("d_expand", m.d_expand),
            ("d_max", m.d_max),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        let t = &self.train;
        let _ = writeln!(s, "[train]");
        let _ = writeln!(s, "learning_rate = {}", t.learning_rate);
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let r = t.split_ratios;
        let _ = writeln!(s, "split = {}, {}, {}", r[0], r[1], r[2]);
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(", "));
        let a = &self.analysis;
        let _ = writeln!(s, "[analysis]\nalpha = {}\ntop_k = {}", a.alpha, a.top_k);
        if let Some(p) = &a.target_population {
            let _ = writeln!(s, "target_population = {p}");
        }
        let n = &self.net_eval;
        let _ = writeln!(s, "[net_eval]");
        if n.gold.is_some() {
            let _ = writeln!(s, "gold = {}", path(&n.gold));
        }
        if n.network.is_some() {
            let _ = writeln!(s, "network = {}", path(&n.network));
        }
        if let Some(m) = n.max_edges {
            let _ = writeln!(s, "max_edges = {m}");
        }
        let _ = writeln!(s, "undirected = {}", n.undirected);
        let e = &self.embed;
        let _ = writeln!(s, "[embed]");
        if let Some(u) = &e.endpoint {
            let _ = writeln!(s, "endpoint = {u}");
        }
        let _ = writeln!(
            s,
            "batch_size = {}\nretries = {}\ntimeout_secs = {}",
            e.batch_size, e.retries, e.timeout_secs
        );
        s
    }
}
