//! Model evaluation, ablation tables and hyper-parameter sweeps.

use std::fmt::Write as _;

use serde::Serialize;

use crate::attkg::{AttributeSchema, CooccurrenceGraph};
use crate::data::{PersonRecord, Split};
use crate::error::{Error, Result};
use crate::eval::{
    attribute_accuracy, evaluate_retrieval, oracle, DecisionRule, Distance, Entry, EvalReport,
};
use crate::model::{Embedding, ModelParams, Variant};
use crate::numerics::Matrix;
use crate::reid::fused_descriptor;
use crate::trainer::{build_graph, fit, Inputs, TrainConfig};

/// What gets compared at retrieval time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Descriptor {
    /// `[z ‖ ŷ]`; falls back to `z` for the baseline.
    #[default]
    Fused,
    /// `z` only.
    Visual,
    /// Identity-head scores.
    IdScores,
}

impl Descriptor {
    pub fn name(self) -> &'static str {
        match self {
            Descriptor::Fused => "fused",
            Descriptor::Visual => "visual",
            Descriptor::IdScores => "id_scores",
        }
    }
}

impl std::str::FromStr for Descriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(Descriptor::Fused),
            "visual" => Ok(Descriptor::Visual),
            "id_scores" | "id-scores" => Ok(Descriptor::IdScores),
            other => Err(Error::Config(format!("unknown descriptor {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub distance: Distance,
    pub descriptor: Descriptor,
    /// Worker threads for ranking; 0 uses the global pool.
    pub threads: usize,
    /// Re-check every metric against the from-definition oracle.
    pub oracle: bool,
    /// Rows per inference forward pass.
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            distance: Distance::Cosine,
            descriptor: Descriptor::Fused,
            threads: 0,
            oracle: false,
            batch_size: 256,
        }
    }
}

/// Forward pass over `records` in chunks, concatenated row-wise.
pub fn embed_records(
    model: &ModelParams,
    records: &[&PersonRecord],
    batch_size: usize,
) -> Result<Embedding> {
    let mut parts = Vec::new();
    for chunk in records.chunks(batch_size.max(1)) {
        let inputs = Inputs::gather(chunk, model.backbone.kind())?;
        parts.push(inputs.with(|input| model.embed(input))?);
    }
    let stack = |f: &dyn Fn(&Embedding) -> Option<&Matrix>| -> Result<Option<Matrix>> {
        if parts.is_empty() || f(&parts[0]).is_none() {
            return Ok(None);
        }
        let mut rows: Vec<&[f64]> = Vec::new();
        for p in &parts {
            let m = f(p).expect("all chunks share variant");
            rows.extend((0..m.rows()).map(|i| m.row(i)));
        }
        Matrix::from_rows(&rows).map(Some)
    };
    let z = stack(&|e| Some(&e.z))?.unwrap_or_else(|| Matrix::zeros(0, model.feature_dim()));
    let y = stack(&|e| e.y.as_ref())?;
    let y_hat = stack(&|e| e.y_hat.as_ref())?;
    let id_scores =
        stack(&|e| Some(&e.id_scores))?.unwrap_or_else(|| Matrix::zeros(0, model.num_identities()));
    Ok(Embedding {
        z,
        y,
        y_hat,
        gates: parts.first().and_then(|p| p.gates.clone()),
        id_scores,
    })
}

/// Descriptor actually used for `variant`; the baseline has no attribute part.
pub fn effective_descriptor(variant: Variant, requested: Descriptor) -> Descriptor {
    match (variant, requested) {
        (Variant::Baseline, Descriptor::Fused) => Descriptor::Visual,
        (_, d) => d,
    }
}

/// Retrieval descriptor of row `i` of `emb`.
pub fn descriptor_of(emb: &Embedding, i: usize, descriptor: Descriptor) -> Vec<f64> {
    match descriptor {
        Descriptor::Visual => emb.z.row(i).to_vec(),
        Descriptor::IdScores => emb.id_scores.row(i).to_vec(),
        Descriptor::Fused => match &emb.y_hat {
            Some(y) => fused_descriptor(emb.z.row(i), y.row(i)),
            None => emb.z.row(i).to_vec(),
        },
    }
}

/// Ranking entries for `records`, whose rows in `emb` are in the same order.
pub fn entries(records: &[&PersonRecord], emb: &Embedding, descriptor: Descriptor) -> Vec<Entry> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| Entry {
            image_id: r.image_id,
            identity: r.identity,
            camera: r.camera,
            distractor: r.distractor,
            descriptor: descriptor_of(emb, i, descriptor),
        })
        .collect()
}

/// Retrieval metrics on query/gallery plus attribute accuracy over the
/// non-distractor test images.
pub fn evaluate_model(
    model: &ModelParams,
    query: &[PersonRecord],
    gallery: &[PersonRecord],
    schema: &AttributeSchema,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let descriptor = effective_descriptor(model.variant, opts.descriptor);
    let q: Vec<&PersonRecord> = query.iter().collect();
    let g: Vec<&PersonRecord> = gallery.iter().collect();
    let q_emb = embed_records(model, &q, opts.batch_size)?;
    let g_emb = embed_records(model, &g, opts.batch_size)?;
    let q_entries = entries(&q, &q_emb, descriptor);
    let g_entries = entries(&g, &g_emb, descriptor);
    let (metrics, _) = evaluate_retrieval(&q_entries, &g_entries, opts.distance, opts.threads)?;

    if opts.oracle {
        let (r1, r5, r10, map, n) = oracle::evaluate(&q_entries, &g_entries, opts.distance);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
        if n != metrics.queries_evaluated
            || !close(r1, metrics.rank1)
            || !close(r5, metrics.rank5)
            || !close(r10, metrics.rank10)
            || !close(map, metrics.map)
        {
            return Err(Error::Protocol(format!(
                "oracle disagrees: fast ({}, {}, {}, {}, {}) vs oracle ({r1}, {r5}, {r10}, {map}, {n})",
                metrics.rank1, metrics.rank5, metrics.rank10, metrics.map, metrics.queries_evaluated
            )));
        }
    }

    let (names, acc, mean) = match (&q_emb.y, &g_emb.y) {
        (Some(qy), Some(gy)) => {
            let mut preds = Vec::new();
            let mut targets = Vec::new();
            for (records, y) in [(&q, qy), (&g, gy)] {
                for (i, r) in records.iter().enumerate() {
                    if !r.distractor {
                        preds.push(y.row(i).to_vec());
                        targets.push(r.attributes.clone());
                    }
                }
            }
            let rule = DecisionRule::for_head(model.head, schema.len());
            let a = attribute_accuracy(&preds, &targets, schema, rule)?;
            (schema.names().to_vec(), a.per_attribute, Some(a.mean))
        }
        _ => (Vec::new(), Vec::new(), None),
    };

    Ok(EvalReport {
        variant: model.variant.name().to_string(),
        descriptor: descriptor.name().to_string(),
        distance: opts.distance,
        rank1: metrics.rank1,
        rank5: metrics.rank5,
        rank10: metrics.rank10,
        map: metrics.map,
        queries_evaluated: metrics.queries_evaluated,
        queries_skipped: metrics.skipped.len(),
        attribute_names: names,
        attribute_accuracy: acc,
        attribute_mean: mean,
    })
}

/// One row of an ablation or sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub label: String,
    pub final_loss: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultTable {
    pub key: String,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn row(&self, label: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    /// `key,rank1,rank5,rank10,mAP,attribute_avg,final_loss`, metrics as fractions.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},rank1,rank5,rank10,mAP,attribute_avg,final_loss\n", self.key);
        for r in &self.rows {
            let e = &r.report;
            let avg = e.attribute_mean.map_or(String::new(), |a| a.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.label, e.rank1, e.rank5, e.rank10, e.map, avg, r.final_loss
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<12} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
            self.key, "rank-1", "rank-5", "rank-10", "mAP", "attAvg"
        );
        for r in &self.rows {
            let e = &r.report;
            let avg = e
                .attribute_mean
                .map_or("-".to_string(), |a| format!("{:.2}", a * 100.0));
            let _ = writeln!(
                out,
                "{:<12} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7}",
                r.label,
                e.rank1 * 100.0,
                e.rank5 * 100.0,
                e.rank10 * 100.0,
                e.map * 100.0,
                avg
            );
        }
        out
    }
}

/// Builds the graph only if some variant needs it.
fn graph_for(split: &Split, schema: &AttributeSchema, needed: bool) -> Result<Option<CooccurrenceGraph>> {
    if needed {
        build_graph(&split.train, schema.len()).map(Some)
    } else {
        Ok(None)
    }
}

fn train_and_eval(
    label: String,
    split: &Split,
    schema: &AttributeSchema,
    graph: Option<&CooccurrenceGraph>,
    cfg: &TrainConfig,
    opts: &EvalOptions,
) -> Result<ResultRow> {
    let (model, report) = fit(&split.train, graph, cfg)?;
    let final_loss = report.epochs.last().map_or(f64::NAN, |e| e.l_total);
    let report = evaluate_model(&model, &split.query, &split.gallery, schema, opts)?;
    Ok(ResultRow {
        label,
        final_loss,
        report,
    })
}

/// Trains each variant from the same seed and evaluates it.
pub fn run_ablation(
    split: &Split,
    schema: &AttributeSchema,
    base: &TrainConfig,
    variants: &[Variant],
    opts: &EvalOptions,
) -> Result<ResultTable> {
    let graph = graph_for(split, schema, variants.iter().any(|v| v.uses_attributes()))?;
    let rows = variants
        .iter()
        .map(|&v| {
            let cfg = TrainConfig {
                variant: v,
                ..base.clone()
            };
            let g = if v.uses_attributes() { graph.as_ref() } else { None };
            train_and_eval(v.name().to_string(), split, schema, g, &cfg, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResultTable {
        key: "variant".into(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepParam {
    Lambda(Vec<f64>),
    Layers(Vec<usize>),
}

impl SweepParam {
    pub fn key(&self) -> &'static str {
        match self {
            SweepParam::Lambda(_) => "lambda",
            SweepParam::Layers(_) => "layers",
        }
    }
}

/// Retrains `base` once per value of the swept parameter.
pub fn sweep(
    split: &Split,
    schema: &AttributeSchema,
    base: &TrainConfig,
    param: &SweepParam,
    opts: &EvalOptions,
) -> Result<ResultTable> {
    let graph = graph_for(split, schema, base.variant.uses_attributes())?;
    let configs: Vec<(String, TrainConfig)> = match param {
        SweepParam::Lambda(values) => values
            .iter()
            .map(|&l| (l.to_string(), TrainConfig { lambda: l, ..base.clone() }))
            .collect(),
        SweepParam::Layers(values) => values
            .iter()
            .map(|&l| (l.to_string(), TrainConfig { gcn_layers: l, ..base.clone() }))
            .collect(),
    };
    let rows = configs
        .into_iter()
        .map(|(label, cfg)| train_and_eval(label, split, schema, graph.as_ref(), &cfg, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(ResultTable {
        key: param.key().into(),
        rows,
    })
}
