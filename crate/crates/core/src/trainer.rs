//! Mini-batch SGD over the joint attribute + identity objective.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attkg::{estimate_cooccurrence, CooccurrenceGraph};
use crate::data::PersonRecord;
use crate::error::{Error, Result};
use crate::gcn::{default_hidden_width, AttributeHead};
use crate::model::{BackboneKind, BatchInput, ModelParams, ModelSpec, ParamGroup, Variant};
use crate::numerics::{Matrix, Sgd, SgdOptions};
use crate::reid::ImageGrid;
use crate::rng::{seeded, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_backbone: f64,
    pub lr_gcn: f64,
    pub lambda: f64,
    pub gcn_layers: usize,
    /// Hidden GCN width; `None` uses `max(c, d/2)`.
    pub hidden_width: Option<usize>,
    /// Output feature dimensionality; `None` keeps the input dimensionality.
    pub feature_dim: Option<usize>,
    pub seed: u64,
    pub variant: Variant,
    pub head: AttributeHead,
    pub shared_gcn: bool,
    pub backbone: BackboneKind,
    pub tiny_kernel: usize,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 90,
            epochs: 120,
            lr_backbone: 0.1,
            lr_gcn: 0.001,
            lambda: 5.0,
            gcn_layers: 2,
            hidden_width: None,
            feature_dim: None,
            seed: 0,
            variant: Variant::Full,
            head: AttributeHead::Softmax,
            shared_gcn: true,
            backbone: BackboneKind::Linear,
            tiny_kernel: 1,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    /// Rates must be nonnegative; a zero rate freezes its group.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.gcn_layers == 0 && self.variant.uses_attributes() {
            return Err(Error::Config("gcn_layers must be >= 1".into()));
        }
        for (name, v) in [
            ("lr_backbone", self.lr_backbone),
            ("lr_gcn", self.lr_gcn),
            ("lambda", self.lambda),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.tiny_kernel == 0 {
            return Err(Error::Config("tiny_kernel must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_att: f64,
    pub l_id: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub epochs: Vec<EpochStats>,
    /// Per-batch total losses of every epoch, in order.
    pub batch_losses: Vec<Vec<f64>>,
    pub wall_time_secs: f64,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    /// Header comment with the settings, then `epoch,l_att,l_id,l_total`.
    /// Wall time is left out so reruns produce identical files.
    pub fn to_csv(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# batch={} epochs={} lambda={} layers={} lr_backbone={} lr_gcn={} variant={} head={} seed={}",
            c.batch_size, c.epochs, c.lambda, c.gcn_layers, c.lr_backbone, c.lr_gcn, c.variant, c.head, c.seed
        );
        out.push_str("epoch,l_att,l_id,l_total\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.l_att, e.l_id, e.l_total);
        }
        out
    }
}

thread_local! {
    static GRAPH_BUILDS: Cell<usize> = const { Cell::new(0) };
}

/// Number of attribute graphs built by [`build_graph`] on this thread.
pub fn graph_builds() -> usize {
    GRAPH_BUILDS.with(Cell::get)
}

/// Estimates the attribute graph from non-distractor training records.
pub fn build_graph(train: &[PersonRecord], c: usize) -> Result<CooccurrenceGraph> {
    GRAPH_BUILDS.with(|n| n.set(n.get() + 1));
    estimate_cooccurrence(
        train.iter().filter(|r| !r.distractor).map(|r| r.attributes.as_slice()),
        c,
    )
}

/// Dense class index per training identity, in ascending identity order.
pub fn identity_classes<'a>(train: impl IntoIterator<Item = &'a PersonRecord>) -> BTreeMap<u32, usize> {
    let mut ids: Vec<u32> = train.into_iter().map(|r| r.identity).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
}

pub(crate) enum Inputs<'a> {
    Features(Matrix),
    Images(Vec<&'a ImageGrid>),
}

impl<'a> Inputs<'a> {
    pub(crate) fn gather(records: &[&'a PersonRecord], backbone: BackboneKind) -> Result<Self> {
        match backbone {
            BackboneKind::Tiny => records
                .iter()
                .map(|r| {
                    r.image.as_ref().ok_or_else(|| {
                        Error::Contract(format!("image {} has no image grid", r.image_id))
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(Inputs::Images),
            _ => {
                let rows = records
                    .iter()
                    .map(|r| {
                        r.feature.as_deref().ok_or_else(|| {
                            Error::Contract(format!("image {} has no feature", r.image_id))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Inputs::Features(Matrix::from_rows(&rows)?))
            }
        }
    }

    pub(crate) fn with<T>(&self, f: impl FnOnce(BatchInput<'_>) -> T) -> T {
        match self {
            Inputs::Features(m) => f(BatchInput::Features(m)),
            Inputs::Images(v) => f(BatchInput::Images(v)),
        }
    }
}

/// Input dimensionality of the records for the chosen backbone.
fn input_dim(first: &PersonRecord, backbone: BackboneKind) -> Result<usize> {
    match backbone {
        BackboneKind::Tiny => first
            .image
            .as_ref()
            .map(|g| g.channels)
            .ok_or_else(|| Error::Contract("tiny backbone needs image grids".into())),
        _ => first
            .feature
            .as_ref()
            .map(Vec::len)
            .ok_or_else(|| Error::Contract("training records carry no features".into())),
    }
}

/// Builds the initial model for `cfg` on `train`.
pub fn init_model(
    train: &[&PersonRecord],
    num_identities: usize,
    graph: Option<&CooccurrenceGraph>,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<ModelParams> {
    let first = train
        .first()
        .ok_or_else(|| Error::Contract("empty training set".into()))?;
    let c = first.attributes.len();
    let in_dim = input_dim(first, cfg.backbone)?;
    let d = cfg.feature_dim.unwrap_or(in_dim);
    let spec = ModelSpec {
        variant: cfg.variant,
        head: cfg.head,
        num_attributes: c,
        input_dim: in_dim,
        feature_dim: d,
        num_identities,
        gcn_layers: cfg.gcn_layers,
        hidden_width: cfg.hidden_width.unwrap_or_else(|| default_hidden_width(c, d)),
        shared_gcn: cfg.shared_gcn,
        backbone: cfg.backbone,
        tiny_kernel: cfg.tiny_kernel,
    };
    let p_norm = if cfg.variant.uses_attributes() {
        let g = graph.ok_or_else(|| {
            Error::Contract(format!("variant {} needs an attribute graph", cfg.variant))
        })?;
        if g.num_attributes() != c {
            return Err(Error::SchemaMismatch {
                record: 0,
                expected: g.num_attributes(),
                found: c,
            });
        }
        Some(&g.p_norm)
    } else {
        None
    };
    ModelParams::init(&spec, p_norm, rng)
}

/// Trains from a fresh seeded initialization. Distractors are skipped.
pub fn fit(
    train: &[PersonRecord],
    graph: Option<&CooccurrenceGraph>,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    let train: Vec<&PersonRecord> = train.iter().filter(|r| !r.distractor).collect();
    let classes = identity_classes(train.iter().copied());
    let mut rng = seeded(cfg.seed);
    let mut model = init_model(&train, classes.len(), graph, cfg, &mut rng)?;
    let report = train_epochs(&mut model, &train, &classes, cfg, &mut rng)?;
    Ok((model, report))
}

/// Runs `cfg.epochs` epochs of SGD on an existing model.
pub fn train_epochs(
    model: &mut ModelParams,
    train: &[&PersonRecord],
    classes: &BTreeMap<u32, usize>,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<TrainReport> {
    let start = Instant::now();
    let groups = model.param_groups();
    let mut opt = Sgd::new(
        SgdOptions {
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        },
        groups.len(),
    );
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut batch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut sums = (0.0, 0.0, 0.0);
        let mut totals = Vec::new();
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PersonRecord> = chunk.iter().map(|&i| train[i]).collect();
            let (l_att, l_id, l_total) = sgd_batch(model, &mut opt, &groups, &batch, classes, cfg)
                .map_err(|e| match e {
                    Error::NonFinite { term, .. } => Error::NonFinite {
                        epoch,
                        batch: batch_idx,
                        term,
                    },
                    other => other,
                })?;
            sums.0 += l_att;
            sums.1 += l_id;
            sums.2 += l_total;
            totals.push(l_total);
        }
        let n = totals.len() as f64;
        epochs.push(EpochStats {
            epoch,
            l_att: sums.0 / n,
            l_id: sums.1 / n,
            l_total: sums.2 / n,
        });
        batch_losses.push(totals);
    }
    Ok(TrainReport {
        config: cfg.clone(),
        epochs,
        batch_losses,
        wall_time_secs: start.elapsed().as_secs_f64(),
        checkpoint: None,
    })
}

/// One forward/backward/update step. Returns `(l_att, l_id, l_total)`.
fn sgd_batch(
    model: &mut ModelParams,
    opt: &mut Sgd,
    groups: &[ParamGroup],
    batch: &[&PersonRecord],
    classes: &BTreeMap<u32, usize>,
    cfg: &TrainConfig,
) -> Result<(f64, f64, f64)> {
    let inputs = Inputs::gather(batch, model.backbone.kind())?;
    let c = batch[0].attributes.len();
    let targets = Matrix::from_fn(batch.len(), c, |i, j| batch[i].attributes[j] as f64);
    let labels = batch
        .iter()
        .map(|r| {
            classes.get(&r.identity).copied().ok_or_else(|| {
                Error::Contract(format!("identity {} has no class", r.identity))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let graph = inputs.with(|input| model.loss(input, &targets, &labels, cfg.lambda))?;
    let l_att = graph.l_att_value();
    let l_id = graph.value(graph.l_id);
    let l_total = graph.value(graph.total);
    for (term, v) in [("attribute", l_att), ("identity", l_id), ("total", l_total)] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                epoch: 0,
                batch: 0,
                term,
            });
        }
    }
    let grads = graph.tape.backward(graph.total)?;
    for (slot, (param, group)) in model.params_mut().into_iter().zip(groups).enumerate() {
        let lr = match group {
            ParamGroup::Backbone => cfg.lr_backbone,
            ParamGroup::Gcn => cfg.lr_gcn,
        };
        opt.step(slot, param, grads.get(graph.params[slot]), lr)?;
    }
    Ok((l_att, l_id, l_total))
}
