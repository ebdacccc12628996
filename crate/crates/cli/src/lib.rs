//! Subcommand implementations behind the `attkgcn` binary.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use attkgcn_core::attkg::{AttributeSchema, CooccurrenceGraph};
use attkgcn_core::data::{
    attach_features, feature_cache_of, generate_synthetic, load_annotations, save_annotations,
    split, PersonRecord, Split,
};
use attkgcn_core::eval::rank;
use attkgcn_core::experiment::{
    effective_descriptor, embed_records, entries, evaluate_model, run_ablation, sweep, SweepParam,
};
use attkgcn_core::model::ModelParams;
use attkgcn_core::reid::FeatureCache;
use attkgcn_core::trainer::{build_graph, fit};
use attkgcn_core::{Error, Variant};
use serde::Serialize;

use crate::config::{ConfigError, ExperimentConfig};

pub const THREADS_ENV: &str = "ATTKGCN_THREADS";

/// Command failure with its exit code class.
#[derive(Debug)]
pub enum Failure {
    /// Bad invocation or configuration: exit code 2.
    Usage(anyhow::Error),
    /// Runtime or numeric failure: exit code 1.
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => e,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.into())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

pub type CmdResult<T = ()> = std::result::Result<T, Failure>;

/// Worker cap from the environment; unset means no cap.
pub fn threads_from_env() -> CmdResult<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|e| Failure::Usage(anyhow!("{THREADS_ENV}={v:?}: {e}"))),
        Err(_) => Ok(0),
    }
}

fn load_schema(path: &Path) -> CmdResult<AttributeSchema> {
    AttributeSchema::load(path).map_err(|e| Failure::Usage(e.into()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub struct Dataset {
    pub schema: AttributeSchema,
    pub records: Vec<PersonRecord>,
}

/// Annotations (+ optional feature cache) if configured, else the
/// synthetic generator.
pub fn load_dataset(cfg: &ExperimentConfig) -> CmdResult<Dataset> {
    match &cfg.annotations {
        Some(path) => {
            let schema_path = cfg
                .schema
                .as_ref()
                .ok_or_else(|| Failure::Usage(anyhow!("annotations require a schema")))?;
            let schema = load_schema(schema_path)?;
            let mut records = load_annotations(path, &schema)?;
            if let Some(features) = &cfg.features {
                attach_features(&mut records, &FeatureCache::load(features)?)?;
            }
            Ok(Dataset { schema, records })
        }
        None => {
            let data = generate_synthetic(&cfg.synth.to_config(cfg.train.seed))?;
            Ok(Dataset {
                schema: data.schema,
                records: data.records,
            })
        }
    }
}

fn load_split(cfg: &ExperimentConfig) -> CmdResult<(AttributeSchema, Split)> {
    let data = load_dataset(cfg)?;
    let s = split(&data.records, &cfg.split_protocol())?;
    Ok((data.schema, s))
}

/// Graph from config, else estimated from the training split.
fn graph_for_training(
    cfg: &ExperimentConfig,
    split: &Split,
    schema: &AttributeSchema,
) -> CmdResult<Option<CooccurrenceGraph>> {
    if !cfg.train.variant.uses_attributes() {
        return Ok(None);
    }
    let g = match &cfg.graph {
        Some(path) => CooccurrenceGraph::load(path)?,
        None => build_graph(&split.train, schema.len())?,
    };
    Ok(Some(g))
}

fn graph_summary(g: &CooccurrenceGraph, schema: &AttributeSchema, top_k: usize) -> String {
    let names = schema.names();
    let mut out = String::new();
    let _ = writeln!(out, "attributes: {}", g.num_attributes());
    let _ = writeln!(out, "density: {:.4}", g.density());
    let _ = writeln!(out, "strongest edges:");
    for (i, j, p) in g.strongest_edges(top_k) {
        let _ = writeln!(out, "  P({} -> {}) = {}", names[i], names[j], p);
    }
    out
}

/// Estimates the graph from every non-distractor record of `annotations`.
pub fn cmd_build_graph(
    annotations: &Path,
    schema_path: &Path,
    out: &Path,
    top_k: usize,
) -> CmdResult<String> {
    let schema = load_schema(schema_path)?;
    let records = load_annotations(annotations, &schema)?;
    let g = build_graph(&records, schema.len())?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    g.save(&out.join("graph.bin"))?;
    write_file(&out.join("graph.csv"), g.to_csv(&schema))?;
    Ok(graph_summary(&g, &schema, top_k))
}

pub fn cmd_train(cfg: &ExperimentConfig) -> CmdResult<String> {
    let (schema, s) = load_split(cfg)?;
    let graph = graph_for_training(cfg, &s, &schema)?;
    let (model, mut report) = fit(&s.train, graph.as_ref(), &cfg.train)?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    if let Some(g) = &graph {
        g.save(&out.join("graph.bin"))?;
    }
    let ckpt = out.join("checkpoint.bin");
    model.save(&ckpt)?;
    report.checkpoint = Some(ckpt.clone());
    write_file(&out.join("train_report.csv"), report.to_csv())?;
    let last = report.epochs.last();
    Ok(format!(
        "trained {} for {} epochs on {} images ({} identities)\nfinal loss: {}\ncheckpoint: {}\nwall time: {:.2}s\n",
        cfg.train.variant,
        cfg.train.epochs,
        s.train.len(),
        s.train_identities().len(),
        last.map_or("n/a".into(), |e| format!(
            "l_att {:.6} l_id {:.6} total {:.6}",
            e.l_att, e.l_id, e.l_total
        )),
        ckpt.display(),
        report.wall_time_secs
    ))
}

fn checkpoint_path(cfg: &ExperimentConfig, flag: Option<&Path>) -> CmdResult<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.checkpoint.clone())
        .ok_or_else(|| Failure::Usage(anyhow!("no checkpoint given (--checkpoint or `checkpoint` key)")))
}

pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>, threads: usize) -> CmdResult<String> {
    let model = ModelParams::load(&checkpoint_path(cfg, checkpoint)?)?;
    let (schema, s) = load_split(cfg)?;
    let report = evaluate_model(&model, &s.query, &s.gallery, &schema, &cfg.eval_options(threads))?;
    write_file(&cfg.out_dir.join("eval.json"), report.to_json() + "\n")?;
    let mut text = report.to_table();
    if cfg.oracle {
        text.push_str("oracle: agrees\n");
    }
    Ok(text)
}

/// `lambda`, `layers` or `variant` (the three-way ablation).
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    param: &str,
    values: Option<&str>,
    threads: usize,
) -> CmdResult<String> {
    let usage = |e: String| Failure::Usage(anyhow!(e));
    let (schema, s) = load_split(cfg)?;
    let opts = cfg.eval_options(threads);
    let table = match param {
        "lambda" => {
            let v = match values {
                Some(v) => parse_values(v).map_err(usage)?,
                None => cfg.sweep_lambda.clone(),
            };
            sweep(&s, &schema, &cfg.train, &SweepParam::Lambda(v), &opts)?
        }
        "layers" => {
            let v = match values {
                Some(v) => parse_values(v).map_err(usage)?,
                None => cfg.sweep_layers.clone(),
            };
            sweep(&s, &schema, &cfg.train, &SweepParam::Layers(v), &opts)?
        }
        "variant" => {
            let v: Vec<Variant> = match values {
                Some(v) => parse_values(v).map_err(usage)?,
                None => Variant::ALL.to_vec(),
            };
            run_ablation(&s, &schema, &cfg.train, &v, &opts)?
        }
        other => {
            return Err(usage(format!(
                "unknown sweep parameter {other:?} (expected lambda, layers or variant)"
            )))
        }
    };
    let stem = format!("sweep_{param}");
    write_file(&cfg.out_dir.join(format!("{stem}.csv")), table.to_csv())?;
    write_file(&cfg.out_dir.join(format!("{stem}.json")), table.to_json() + "\n")?;
    Ok(table.to_table())
}

fn parse_values<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|e| format!("{s:?}: {e}")))
        .collect()
}

/// Writes `schema.txt`, `annotations.csv`, `features.bin` and the
/// generative conditional probabilities.
pub fn cmd_synth(cfg: &ExperimentConfig) -> CmdResult<String> {
    let synth = cfg.synth.to_config(cfg.train.seed);
    let data = generate_synthetic(&synth)?;
    let out = &cfg.out_dir;
    write_file(&out.join("schema.txt"), data.schema.to_text())?;
    save_annotations(&out.join("annotations.csv"), &data.records, &data.schema)?;
    feature_cache_of(&data.records)?.save(&out.join("features.bin"))?;
    let c = data.schema.len();
    let mut csv = String::from("from,to,p\n");
    for i in 0..c {
        for j in 0..c {
            let _ = writeln!(
                csv,
                "{},{},{}",
                data.schema.names()[i],
                data.schema.names()[j],
                data.stats.conditional.get(i, j)
            );
        }
    }
    write_file(&out.join("generative_graph.csv"), csv)?;
    Ok(format!(
        "generated {} images of {} identities, c = {}, d = {}\nwritten to {}\n",
        data.records.len(),
        synth.n_identities,
        c,
        synth.d,
        out.display()
    ))
}

#[derive(Debug, Serialize)]
pub struct Match {
    pub image_id: u32,
    pub identity: u32,
    pub camera: u32,
    pub distance: f64,
}

#[derive(Debug, Serialize)]
pub struct Prediction {
    pub image_id: u32,
    pub identity: u32,
    /// Attribute scores `y` by name; empty for the baseline.
    pub attributes: Vec<(String, f64)>,
    pub gates: Vec<f64>,
    pub matches: Vec<Match>,
}

/// Attribute scores and top-k cross-camera gallery matches for query images.
pub fn cmd_predict(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    image_ids: &[u32],
    threads: usize,
) -> CmdResult<String> {
    let model = ModelParams::load(&checkpoint_path(cfg, checkpoint)?)?;
    let (schema, s) = load_split(cfg)?;
    let queries: Vec<&PersonRecord> = if image_ids.is_empty() {
        s.query.iter().collect()
    } else {
        image_ids
            .iter()
            .map(|id| {
                s.query
                    .iter()
                    .chain(&s.gallery)
                    .find(|r| r.image_id == *id)
                    .ok_or_else(|| Failure::Usage(anyhow!("image {id} is not in the test split")))
            })
            .collect::<CmdResult<_>>()?
    };
    let opts = cfg.eval_options(threads);
    let descriptor = effective_descriptor(model.variant, opts.descriptor);
    let gallery: Vec<&PersonRecord> = s.gallery.iter().collect();
    let q_emb = embed_records(&model, &queries, opts.batch_size)?;
    let g_emb = embed_records(&model, &gallery, opts.batch_size)?;
    let g_entries = entries(&gallery, &g_emb, descriptor);
    let q_entries = entries(&queries, &q_emb, descriptor);
    let gates = q_emb
        .gates
        .as_ref()
        .map_or(Vec::new(), |g| g.row(0).to_vec());
    let mut predictions = Vec::new();
    for (i, q) in queries.iter().enumerate() {
        let entry = &q_entries[i];
        let ranked = rank(entry, &g_entries, opts.distance)?;
        let matches = ranked
            .ranked
            .iter()
            .take(cfg.top_k)
            .map(|id| {
                let g = g_entries.iter().find(|g| g.image_id == *id).expect("ranked from gallery");
                Match {
                    image_id: g.image_id,
                    identity: g.identity,
                    camera: g.camera,
                    distance: opts.distance.between(&entry.descriptor, &g.descriptor),
                }
            })
            .collect();
        let attributes = q_emb.y.as_ref().map_or(Vec::new(), |y| {
            schema
                .names()
                .iter()
                .cloned()
                .zip(y.row(i).iter().copied())
                .collect()
        });
        predictions.push(Prediction {
            image_id: q.image_id,
            identity: q.identity,
            attributes,
            gates: gates.clone(),
            matches,
        });
    }
    let json = serde_json::to_string_pretty(&predictions).context("serializing predictions")?;
    write_file(&cfg.out_dir.join("predictions.json"), json.clone() + "\n")?;
    let mut text = String::new();
    for p in &predictions {
        let _ = write!(text, "image {} (identity {}):", p.image_id, p.identity);
        for m in &p.matches {
            let _ = write!(text, " {}[{}]", m.image_id, m.identity);
        }
        text.push('\n');
    }
    Ok(text)
}
