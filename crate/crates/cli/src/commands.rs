//! One function per subcommand. Every command writes its outputs under the
//! output directory and finishes with a manifest.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use log::{info, warn};
use textomic::analysis::{
    cell_importance, extract_top_paths, infer_trajectory, named_network, network_tsv,
    paths_to_edge_confidence, population_profiles, ranked_paths_tsv, trajectory_tsv,
};
use textomic::graph::{
    load_dataset, load_gene_graph, load_paths, read_expression_header, save_dataset,
    save_gene_graph, save_paths, synthesize_dataset, ExpressionDataset, GeneGraph, PathList,
    SynthConfig,
};
use textomic::model::{Model, Structure};
use textomic::net_eval::{
    evaluate_network, load_gold_standard, load_network, report_tsv, EvalOptions,
};
use textomic::text::{
    fetch_embeddings, load_embedding_store, mock_store, render_texts, EmbedClientConfig,
    EmbeddingStore,
};
use textomic::training::{
    evaluate, history_tsv, load_checkpoint, predictions_tsv, split_dataset, train, Checkpoint,
    Metrics,
};

use crate::config::RunConfig;
use crate::output::{ensure_dir, write_atomic, Manifest, Outputs};
use crate::{
    Cli, Command, EmbedArgs, ExtractArgs, NetEvalArgs, SynthArgs, TrainArgs, TrajectoryArgs, Usage,
};

pub const CONFIG_NAME: &str = "textomic.conf";

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    outputs: Outputs,
    inputs: Vec<(String, PathBuf)>,
}

impl Ctx {
    fn file(&self, configured: &Option<PathBuf>, default: &str) -> PathBuf {
        configured.clone().unwrap_or_else(|| self.out.join(default))
    }

    fn input(&mut self, role: &str, path: PathBuf) -> PathBuf {
        self.inputs.push((role.to_string(), path.clone()));
        path
    }

    fn graph(&mut self) -> Result<GeneGraph> {
        let nodes = self.file(&self.cfg.data.nodes, "nodes.tsv");
        let edges = self.file(&self.cfg.data.edges, "edges.tsv");
        let (nodes, edges) = (self.input("nodes", nodes), self.input("edges", edges));
        Ok(load_gene_graph(&nodes, &edges)?)
    }

    fn paths(&mut self, graph: &GeneGraph) -> Result<PathList> {
        let f = self.file(&self.cfg.data.paths, "paths.tsv");
        let f = self.input("paths", f);
        Ok(load_paths(&f, graph)?)
    }

    fn expression_file(&self) -> PathBuf {
        self.file(&self.cfg.data.expression, "expression.tsv")
    }

    fn dataset(&mut self, graph: &GeneGraph) -> Result<ExpressionDataset> {
        let e = self.expression_file();
        let l = self.file(&self.cfg.data.labels, "labels.tsv");
        let (e, l) = (self.input("expression", e), self.input("labels", l));
        Ok(load_dataset(&e, &l, graph)?)
    }

    fn store_file(&self) -> PathBuf {
        self.file(&self.cfg.data.embeddings, "embeddings.tnge")
    }

    fn store(&mut self) -> Result<EmbeddingStore> {
        let f = self.store_file();
        let f = self.input("embeddings", f);
        Ok(load_embedding_store(&f)?)
    }

    fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed-{seed}"))
    }

    fn model(&mut self, seed: u64, graph: &GeneGraph, paths: &PathList) -> Result<Model> {
        let f = self.seed_dir(seed).join("model.tngm");
        let f = self.input(&format!("model.seed-{seed}"), f);
        load_checkpoint(&f, graph, paths).with_context(|| format!("loading {}", f.display()))
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)
    }

    fn finish(self, command: &str) -> Result<()> {
        Manifest {
            command: command.to_string(),
            config_text: self.cfg.render(),
            seeds: self.cfg.seeds.clone(),
            inputs: self.inputs,
        }
        .write(&self.outputs, &self.out)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let out_flag = cli.out.clone();
    let config_file = match &cli.config {
        Some(f) => Some(f.clone()),
        None => {
            let guess = out_flag
                .clone()
                .unwrap_or_else(|| PathBuf::from("."))
                .join(CONFIG_NAME);
            // synth writes this file, so it must not read one back
            (guess.is_file() && !matches!(cli.command, Command::Synth(_))).then_some(guess)
        }
    };
    let mut cfg = match &config_file {
        Some(f) => RunConfig::load(f)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    let out = out_flag
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let mut ctx = Ctx {
        cfg,
        out,
        outputs: Outputs::new(cli.force),
        inputs: Vec::new(),
    };
    if let Some(f) = config_file {
        ctx.input("config", f);
    }
    ensure_dir(&ctx.out)?;
    let name = match &cli.command {
        Command::Synth(a) => synth(&mut ctx, a).map(|_| "synth"),
        Command::Embed(a) => embed(&mut ctx, a).map(|_| "embed"),
        Command::Train(a) => cmd_train(&mut ctx, a).map(|_| "train"),
        Command::Eval => cmd_eval(&mut ctx).map(|_| "eval"),
        Command::ExtractPaths(a) => extract_paths(&mut ctx, a).map(|_| "extract-paths"),
        Command::Trajectory(a) => trajectory(&mut ctx, a).map(|_| "trajectory"),
        Command::NetEval(a) => net_eval(&mut ctx, a).map(|_| "net-eval"),
    }?;
    ctx.finish(name)
}

fn synth(ctx: &mut Ctx, a: &SynthArgs) -> Result<()> {
    let seed = ctx.cfg.seeds[0];
    let s = synthesize_dataset(&SynthConfig {
        n_genes: a.genes,
        n_paths: a.paths,
        n_cells: a.cells,
        signal_path: a.signal_path,
        effect_size: a.effect_size,
        seed,
        n_populations: a.populations,
        n_edge_types: a.edge_types,
    })?;
    let store = mock_store(&s.graph, &s.paths, a.d_llm, seed)?;
    let names = [
        "nodes.tsv",
        "edges.tsv",
        "paths.tsv",
        "expression.tsv",
        "labels.tsv",
        "embeddings.tnge",
        CONFIG_NAME,
    ];
    let files = names
        .iter()
        .map(|n| ctx.outputs.claim(ctx.out.join(n)))
        .collect::<Result<Vec<_>>>()?;
    save_gene_graph(&s.graph, &files[0], &files[1])?;
    save_paths(&s.paths, &s.graph, &files[2])?;
    save_dataset(&s.dataset, &s.graph, &files[3], &files[4])?;
    ctx.write(&files[5], &store.to_bytes())?;
    let mut conf = String::from("# synthetic fixture\n[data]\n");
    for (key, n) in [
        "nodes",
        "edges",
        "paths",
        "expression",
        "labels",
        "embeddings",
    ]
    .iter()
    .zip(names)
    {
        let _ = writeln!(conf, "{key} = {n}");
    }
    let _ = writeln!(
        conf,
        "[model]\nd_llm = {}\n[train]\nseeds = {seed}",
        a.d_llm
    );
    ctx.write(&files[6], conf.as_bytes())?;
    ctx.cfg.train.model.d_llm = a.d_llm;
    info!(
        "wrote {} genes, {} paths, {} cells to {}",
        s.graph.n(),
        s.paths.len(),
        s.dataset.len(),
        ctx.out.display()
    );
    Ok(())
}

fn embed(ctx: &mut Ctx, a: &EmbedArgs) -> Result<()> {
    let graph = ctx.graph()?;
    let paths = ctx.paths(&graph)?;
    let d_llm = a.d_llm.unwrap_or(ctx.cfg.train.model.d_llm);
    ctx.cfg.train.model.d_llm = d_llm;
    let endpoint = a
        .endpoint
        .clone()
        .or_else(|| ctx.cfg.embed.endpoint.clone());
    if !a.mock && endpoint.is_none() {
        return Err(Usage("embed needs --mock or --endpoint".into()).into());
    }
    let target = a.output.clone().unwrap_or_else(|| ctx.store_file());
    let target = ctx.outputs.claim(target)?;
    let store = match endpoint.filter(|_| !a.mock) {
        None => mock_store(&graph, &paths, d_llm, ctx.cfg.seeds[0])?,
        Some(endpoint) => {
            ctx.cfg.embed.endpoint = Some(endpoint.clone());
            let texts = render_texts(&graph, &paths)?;
            let client = EmbedClientConfig {
                endpoint,
                timeout_secs: ctx.cfg.embed.timeout_secs,
                batch_size: ctx.cfg.embed.batch_size,
                retries: ctx.cfg.embed.retries,
                d_llm,
                ..EmbedClientConfig::default()
            };
            let bodies: Vec<String> = texts.iter().map(|t| t.2.clone()).collect();
            let vectors = fetch_embeddings(&client, &bodies)?;
            let mut store = EmbeddingStore::new(d_llm);
            for ((kind, key, _), v) in texts.into_iter().zip(vectors) {
                store.insert(kind, key, v)?;
            }
            store
        }
    };
    ctx.write(&target, &store.to_bytes())?;
    info!(
        "embedded {} genes and {} paths into {}",
        store.gene_count(),
        store.path_count(),
        target.display()
    );
    Ok(())
}

fn cmd_train(ctx: &mut Ctx, a: &TrainArgs) -> Result<()> {
    let t = &mut ctx.cfg.train;
    if let Some(e) = a.epochs {
        t.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        t.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b;
    }
    let graph = ctx.graph()?;
    let paths = ctx.paths(&graph)?;
    let dataset = ctx.dataset(&graph)?;
    let store = ctx.store()?;
    let seeds = ctx.cfg.seeds.clone();
    let mut plan = Vec::new();
    for &seed in &seeds {
        let dir = ctx.seed_dir(seed);
        let files = [
            "model.tngm",
            "history.tsv",
            "test_predictions.tsv",
            "metrics.tsv",
        ]
        .iter()
        .map(|n| ctx.outputs.claim(dir.join(n)))
        .collect::<Result<Vec<_>>>()?;
        plan.push((seed, files));
    }
    for (seed, files) in plan {
        let mut cfg = ctx.cfg.train.clone();
        cfg.seed = seed;
        info!("training seed {seed} for {} epochs", cfg.epochs);
        let run = train(&cfg, &graph, &paths, &dataset, &store)
            .with_context(|| format!("training seed {seed}"))?;
        let ck = Checkpoint::new(run.outcome.model.clone(), &graph, &paths);
        ctx.write(&files[0], &ck.to_bytes())?;
        ctx.write(&files[1], history_tsv(&run.outcome.history).as_bytes())?;
        ctx.write(&files[2], predictions_tsv(&run.test_predictions).as_bytes())?;
        let metrics = format!(
            "seed\t{}\n{seed}\t{}\n",
            Metrics::HEADER,
            run.test_metrics.tsv_fields()
        );
        ctx.write(&files[3], metrics.as_bytes())?;
        let best = run
            .outcome
            .best_epoch
            .map_or_else(|| "initial".to_string(), |e| e.to_string());
        info!(
            "seed {seed}: best epoch {best}, test accuracy {:.4}",
            run.test_metrics.accuracy
        );
    }
    Ok(())
}

fn metric_values(m: &Metrics) -> [Option<f64>; 6] {
    [
        Some(m.accuracy),
        Some(m.recall),
        Some(m.precision),
        Some(m.specificity),
        Some(m.f1),
        m.auc.value(),
    ]
}

/// Per-seed rows followed by the mean and sample standard deviation of
/// each column. Undefined values are skipped; a column with none is `NA`.
pub fn summary_tsv(rows: &[(u64, Metrics)]) -> String {
    let mut out = format!("seed\t{}\n", Metrics::HEADER);
    for (seed, m) in rows {
        let _ = writeln!(out, "{seed}\t{}", m.tsv_fields());
    }
    let cols: Vec<Vec<f64>> = (0..6)
        .map(|c| {
            rows.iter()
                .filter_map(|(_, m)| metric_values(m)[c])
                .collect()
        })
        .collect();
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let std = |v: &[f64]| {
        mean(v).map(|mu| {
            if v.len() < 2 {
                0.0
            } else {
                (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
            }
        })
    };
    let means: Vec<String> = cols.iter().map(|c| fmt(mean(c))).collect();
    let stds: Vec<String> = cols.iter().map(|c| fmt(std(c))).collect();
    let _ = writeln!(out, "mean\t{}", means.join("\t"));
    let _ = writeln!(out, "std\t{}", stds.join("\t"));
    out
}

fn cmd_eval(ctx: &mut Ctx) -> Result<()> {
    let graph = ctx.graph()?;
    let paths = ctx.paths(&graph)?;
    let dataset = ctx.dataset(&graph)?;
    let store = ctx.store()?;
    let target = ctx.outputs.claim(ctx.out.join("eval.tsv"))?;
    let mut rows = Vec::new();
    for seed in ctx.cfg.seeds.clone() {
        let model = ctx.model(seed, &graph, &paths)?;
        let structure = Structure::new(&graph, &paths, &store, &model.config)?;
        let split = split_dataset(dataset.len(), ctx.cfg.train.split_ratios, seed)?;
        let cells: Vec<_> = split.test.iter().map(|&i| &dataset.cells[i]).collect();
        let (metrics, _) = evaluate(&model, &structure, &cells)?;
        rows.push((seed, metrics));
    }
    let text = summary_tsv(&rows);
    ctx.write(&target, text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn extract_paths(ctx: &mut Ctx, a: &ExtractArgs) -> Result<()> {
    if let Some(k) = a.k {
        ctx.cfg.analysis.top_k = k;
    }
    let k = ctx.cfg.analysis.top_k;
    let graph = ctx.graph()?;
    let paths = ctx.paths(&graph)?;
    let mut plan = Vec::new();
    for seed in ctx.cfg.seeds.clone() {
        let dir = ctx.seed_dir(seed);
        plan.push((
            seed,
            ctx.outputs.claim(dir.join("top_paths.tsv"))?,
            ctx.outputs.claim(dir.join("network.tsv"))?,
        ));
    }
    for (seed, top, net) in plan {
        let model = ctx.model(seed, &graph, &paths)?;
        let ranked = extract_top_paths(&model, &paths, &graph, k)?;
        if let Some(note) = &ranked.note {
            warn!("seed {seed}: {note}");
        }
        ctx.write(&top, ranked_paths_tsv(&ranked, &graph).as_bytes())?;
        let edges = named_network(&paths_to_edge_confidence(&ranked), &graph);
        ctx.write(&net, network_tsv(&edges).as_bytes())?;
    }
    Ok(())
}

fn trajectory(ctx: &mut Ctx, a: &TrajectoryArgs) -> Result<()> {
    if let Some(alpha) = a.alpha {
        ctx.cfg.analysis.alpha = alpha;
    }
    if let Some(t) = &a.target {
        ctx.cfg.analysis.target_population = Some(t.clone());
    }
    let graph = ctx.graph()?;
    let paths = ctx.paths(&graph)?;
    let dataset = ctx.dataset(&graph)?;
    let store = ctx.store()?;
    let mut plan = Vec::new();
    for seed in ctx.cfg.seeds.clone() {
        let dir = ctx.seed_dir(seed);
        plan.push((
            seed,
            ctx.outputs.claim(dir.join("cell_importance.tsv"))?,
            ctx.outputs.claim(dir.join("trajectory.tsv"))?,
        ));
    }
    for (seed, imp_file, traj_file) in plan {
        let model = ctx.model(seed, &graph, &paths)?;
        let structure = Structure::new(&graph, &paths, &store, &model.config)?;
        let profiles = population_profiles(&model, &structure, &dataset)?;
        if profiles.is_empty() {
            return Err(anyhow!("no cell carries a population tag"));
        }
        let mut imp = String::from("population\tcount_diseased\tcount_healthy\tcell_importance\n");
        for p in &profiles {
            let v = cell_importance(p, ctx.cfg.analysis.alpha)?;
            let _ = writeln!(
                imp,
                "{}\t{}\t{}\t{v:.9}",
                p.population, p.count_diseased, p.count_healthy
            );
        }
        ctx.write(&imp_file, imp.as_bytes())?;
        let target = match &ctx.cfg.analysis.target_population {
            Some(t) => t.clone(),
            None => profiles
                .iter()
                .filter_map(|p| p.time.map(|t| (t, &p.population)))
                .fold(None, |best: Option<(f64, &String)>, (t, name)| match best {
                    Some((bt, _)) if bt >= t => best,
                    _ => Some((t, name)),
                })
                .map(|(_, name)| name.clone())
                .ok_or_else(|| Usage("no population has time annotations; pass --target".into()))?,
        };
        let traj = infer_trajectory(&profiles, &target)?;
        ctx.write(&traj_file, trajectory_tsv(&traj).as_bytes())?;
        info!(
            "seed {seed}: {} of {} tree edges kept toward {target}",
            traj.pruned_edges().count(),
            traj.oriented.len()
        );
    }
    Ok(())
}

fn net_eval(ctx: &mut Ctx, a: &NetEvalArgs) -> Result<()> {
    let n = &mut ctx.cfg.net_eval;
    if a.network.is_some() {
        n.network = a.network.clone();
    }
    if a.gold.is_some() {
        n.gold = a.gold.clone();
    }
    if a.max_edges.is_some() {
        n.max_edges = a.max_edges;
    }
    n.undirected |= a.undirected;
    let gold_file = n
        .gold
        .clone()
        .ok_or_else(|| Usage("net-eval needs --gold".into()))?;
    let net_file = match n.network.clone() {
        Some(f) => f,
        None => ctx.seed_dir(ctx.cfg.seeds[0]).join("network.tsv"),
    };
    let opts = EvalOptions {
        max_edges: ctx.cfg.net_eval.max_edges,
        undirected: ctx.cfg.net_eval.undirected,
    };
    let target = ctx.outputs.claim(ctx.out.join("net_eval.tsv"))?;
    let gold = load_gold_standard(&ctx.input("gold", gold_file))?;
    let inferred = load_network(&ctx.input("network", net_file))?;
    let expr = ctx.expression_file();
    let expressed: BTreeSet<String> = read_expression_header(&ctx.input("expression", expr))?
        .into_iter()
        .collect();
    let report = evaluate_network(&inferred, &gold, &expressed, &opts)?;
    ctx.write(&target, report_tsv(&report).as_bytes())?;
    println!("area={:.4}", report.area);
    Ok(())
}
