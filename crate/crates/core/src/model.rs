//! The full model: backbone, attribute GCN, re-weighting and identity head,
//! plus the checkpoint format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::error::{Error, LoadError, Result};
use crate::gcn::{gcn_forward_tape, AttributeHead, ClassifierBank, GcnParams, ReweightHead};
use crate::numerics::{Matrix, Reduction, Tape, Var};
use crate::reid::{IdHead, ImageGrid, TinyExtractor};
use crate::rng::{uniform_matrix, SeededRng};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ATTKGCN1";

/// Ablation variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// GCN classifiers and attribute re-weighting.
    #[default]
    Full,
    /// GCN classifiers, raw scores fed to the identity head.
    NoReweight,
    /// Visual features only; no attribute modules.
    Baseline,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::NoReweight, Variant::Full];

    pub fn uses_attributes(self) -> bool {
        self != Variant::Baseline
    }

    pub fn code(self) -> u32 {
        match self {
            Variant::Full => 0,
            Variant::NoReweight => 1,
            Variant::Baseline => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Variant::Full),
            1 => Some(Variant::NoReweight),
            2 => Some(Variant::Baseline),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoReweight => "no_reweight",
            Variant::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no_reweight" | "no-reweight" | "norw" => Ok(Variant::NoReweight),
            "baseline" => Ok(Variant::Baseline),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected full, no_reweight or baseline)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Feature extraction stage; trained with the backbone learning rate.
#[derive(Debug, Clone, PartialEq)]
pub enum Backbone {
    /// Cached features used as-is.
    Identity { dim: usize },
    /// Linear adapter over cached features: `z = x W + b`.
    Linear { weight: Matrix, bias: Matrix },
    /// Built-in extractor over image grids.
    Tiny(TinyExtractor),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Identity,
    #[default]
    Linear,
    Tiny,
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(BackboneKind::Identity),
            "linear" => Ok(BackboneKind::Linear),
            "tiny" => Ok(BackboneKind::Tiny),
            other => Err(Error::Config(format!("unknown backbone {other:?}"))),
        }
    }
}

impl Backbone {
    pub fn output_dim(&self) -> usize {
        match self {
            Backbone::Identity { dim } => *dim,
            Backbone::Linear { weight, .. } => weight.cols(),
            Backbone::Tiny(t) => t.output_dim(),
        }
    }

    pub fn kind(&self) -> BackboneKind {
        match self {
            Backbone::Identity { .. } => BackboneKind::Identity,
            Backbone::Linear { .. } => BackboneKind::Linear,
            Backbone::Tiny(_) => BackboneKind::Tiny,
        }
    }
}

/// Which parameters share a learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Feature extraction and identity head.
    Backbone,
    /// GCN layers and re-weighting head.
    Gcn,
}

/// Architecture choices fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub variant: Variant,
    pub head: AttributeHead,
    pub num_attributes: usize,
    pub input_dim: usize,
    pub feature_dim: usize,
    pub num_identities: usize,
    pub gcn_layers: usize,
    pub hidden_width: usize,
    /// Re-weighting reuses the classifier GCN weights.
    pub shared_gcn: bool,
    pub backbone: BackboneKind,
    /// Input channels and kernel size for [`BackboneKind::Tiny`].
    pub tiny_kernel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub variant: Variant,
    pub head: AttributeHead,
    /// Row-normalized attribute graph; absent for the baseline.
    pub p_norm: Option<Matrix>,
    pub gcn: Option<GcnParams>,
    /// Separate re-weighting GCN; `None` means shared with `gcn`.
    pub rw_gcn: Option<GcnParams>,
    pub rw_head: Option<ReweightHead>,
    pub id_head: IdHead,
    pub backbone: Backbone,
}

/// Inputs for one forward pass.
#[derive(Debug, Clone, Copy)]
pub enum BatchInput<'a> {
    /// `B × input_dim` cached features.
    Features(&'a Matrix),
    Images(&'a [&'a ImageGrid]),
}

impl BatchInput<'_> {
    pub fn len(&self) -> usize {
        match self {
            BatchInput::Features(m) => m.rows(),
            BatchInput::Images(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss nodes plus the parameter leaves they depend on.
#[derive(Debug)]
pub struct LossGraph {
    pub tape: Tape,
    pub total: Var,
    pub l_att: Option<Var>,
    pub l_id: Var,
    /// Leaves in [`ModelParams::params`] order.
    pub params: Vec<Var>,
}

impl LossGraph {
    pub fn value(&self, v: Var) -> f64 {
        self.tape.value(v).get(0, 0)
    }

    pub fn l_att_value(&self) -> f64 {
        self.l_att.map_or(0.0, |v| self.value(v))
    }
}

/// Forward outputs for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// `B × d`
    pub z: Matrix,
    /// `B × c` attribute scores (absent for the baseline).
    pub y: Option<Matrix>,
    /// `B × c` re-weighted scores fed to the identity head.
    pub y_hat: Option<Matrix>,
    /// `1 × c` gates.
    pub gates: Option<Matrix>,
    /// `B × n_identities` pre-softmax identity scores.
    pub id_scores: Matrix,
}

struct Nodes {
    z: Var,
    y: Option<Var>,
    y_hat: Option<Var>,
    gates: Option<Var>,
    id_scores: Var,
    att_logits_or_probs: Option<Var>,
}

impl ModelParams {
    pub fn init(spec: &ModelSpec, p_norm: Option<&Matrix>, rng: &mut SeededRng) -> Result<Self> {
        let c = spec.num_attributes;
        let d = spec.feature_dim;
        let backbone = match spec.backbone {
            BackboneKind::Identity => {
                if spec.input_dim != d {
                    return Err(Error::Config(format!(
                        "identity backbone needs input_dim == feature_dim, got {} vs {d}",
                        spec.input_dim
                    )));
                }
                Backbone::Identity { dim: d }
            }
            BackboneKind::Linear => {
                let weight = if spec.input_dim == d {
                    Matrix::identity(d)
                } else {
                    uniform_matrix(rng, spec.input_dim, d, 1.0 / (spec.input_dim as f64).sqrt())
                };
                Backbone::Linear {
                    weight,
                    bias: Matrix::zeros(1, d),
                }
            }
            BackboneKind::Tiny => Backbone::Tiny(TinyExtractor::init(
                spec.input_dim,
                spec.tiny_kernel,
                d,
                rng,
            )),
        };
        if !spec.variant.uses_attributes() {
            return Ok(Self {
                variant: spec.variant,
                head: spec.head,
                p_norm: None,
                gcn: None,
                rw_gcn: None,
                rw_head: None,
                id_head: IdHead::init(d, spec.num_identities, rng),
                backbone,
            });
        }
        let p_norm = p_norm
            .ok_or_else(|| Error::Contract("attribute variants need an attribute graph".into()))?;
        if p_norm.shape() != (c, c) {
            return Err(Error::shape("model graph", (c, c), p_norm.shape()));
        }
        let dims = GcnParams::dims_for(c, d, spec.gcn_layers, spec.hidden_width);
        let gcn = GcnParams::init(&dims, rng)?;
        let (rw_gcn, rw_head) = if spec.variant == Variant::Full {
            let rw_gcn = if spec.shared_gcn {
                None
            } else {
                Some(GcnParams::init(&dims, rng)?)
            };
            (rw_gcn, Some(ReweightHead::init(d, rng)))
        } else {
            (None, None)
        };
        Ok(Self {
            variant: spec.variant,
            head: spec.head,
            p_norm: Some(p_norm.clone()),
            gcn: Some(gcn),
            rw_gcn,
            rw_head,
            id_head: IdHead::init(d + c, spec.num_identities, rng),
            backbone,
        })
    }

    pub fn num_attributes(&self) -> usize {
        self.p_norm.as_ref().map_or(0, |p| p.rows())
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.output_dim()
    }

    pub fn num_identities(&self) -> usize {
        self.id_head.num_identities()
    }

    /// Trainable matrices in a fixed order.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = Vec::new();
        match &self.backbone {
            Backbone::Identity { .. } => {}
            Backbone::Linear { weight, bias } => out.extend([weight, bias]),
            Backbone::Tiny(t) => out.extend([&t.weight, &t.bias]),
        }
        if let Some(g) = &self.gcn {
            out.extend(g.layers.iter());
        }
        if let Some(g) = &self.rw_gcn {
            out.extend(g.layers.iter());
        }
        if let Some(h) = &self.rw_head {
            out.extend([&h.weight, &h.bias]);
        }
        out.extend([&self.id_head.weight, &self.id_head.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        match &mut self.backbone {
            Backbone::Identity { .. } => {}
            Backbone::Linear { weight, bias } => out.extend([weight, bias]),
            Backbone::Tiny(t) => out.extend([&mut t.weight, &mut t.bias]),
        }
        if let Some(g) = &mut self.gcn {
            out.extend(g.layers.iter_mut());
        }
        if let Some(g) = &mut self.rw_gcn {
            out.extend(g.layers.iter_mut());
        }
        if let Some(h) = &mut self.rw_head {
            out.extend([&mut h.weight, &mut h.bias]);
        }
        out.extend([&mut self.id_head.weight, &mut self.id_head.bias]);
        out
    }

    /// Group of each entry of [`params`](Self::params).
    pub fn param_groups(&self) -> Vec<ParamGroup> {
        let mut out = Vec::new();
        let backbone = match self.backbone {
            Backbone::Identity { .. } => 0,
            _ => 2,
        };
        out.extend(std::iter::repeat_n(ParamGroup::Backbone, backbone));
        let gcn = self.gcn.as_ref().map_or(0, |g| g.num_layers())
            + self.rw_gcn.as_ref().map_or(0, |g| g.num_layers())
            + if self.rw_head.is_some() { 2 } else { 0 };
        out.extend(std::iter::repeat_n(ParamGroup::Gcn, gcn));
        out.extend([ParamGroup::Backbone, ParamGroup::Backbone]);
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !matches!(self.backbone, Backbone::Identity { .. }) {
            out.extend(["backbone.weight".to_string(), "backbone.bias".to_string()]);
        }
        if let Some(g) = &self.gcn {
            out.extend((0..g.num_layers()).map(|l| format!("gcn.theta{l}")));
        }
        if let Some(g) = &self.rw_gcn {
            out.extend((0..g.num_layers()).map(|l| format!("rw_gcn.theta{l}")));
        }
        if self.rw_head.is_some() {
            out.extend(["rw.weight".to_string(), "rw.bias".to_string()]);
        }
        out.extend(["id.weight".to_string(), "id.bias".to_string()]);
        out
    }

    /// Classifier bank `U` for the current parameters.
    pub fn classifier_bank(&self) -> Result<Option<ClassifierBank>> {
        match (&self.p_norm, &self.gcn) {
            (Some(p), Some(g)) => Ok(Some(crate::gcn::gcn_forward(p, g, None)?)),
            _ => Ok(None),
        }
    }

    fn build(&self, tape: &mut Tape, params: &[Var], input: BatchInput<'_>) -> Result<Nodes> {
        let mut slot = 0usize;
        let mut next = || {
            let v = params[slot];
            slot += 1;
            v
        };

        let z = match (&self.backbone, input) {
            (Backbone::Identity { dim }, BatchInput::Features(x)) => {
                if x.cols() != *dim {
                    return Err(Error::shape("backbone input", (x.rows(), *dim), x.shape()));
                }
                tape.leaf(x.clone())
            }
            (Backbone::Linear { .. }, BatchInput::Features(x)) => {
                let (w, b) = (next(), next());
                let xv = tape.leaf(x.clone());
                let xw = tape.matmul(xv, w)?;
                tape.add_row(xw, b)?
            }
            (Backbone::Tiny(t), BatchInput::Images(images)) => {
                let (w, b) = (next(), next());
                let rows = images
                    .iter()
                    .map(|img| t.forward_tape(tape, w, b, img))
                    .collect::<Result<Vec<_>>>()?;
                tape.stack_rows(&rows)?
            }
            (Backbone::Tiny(_), BatchInput::Features(_)) => {
                return Err(Error::Contract("tiny backbone needs image inputs".into()))
            }
            (_, BatchInput::Images(_)) => {
                return Err(Error::Contract("feature backbones need cached feature inputs".into()))
            }
        };

        if !self.variant.uses_attributes() {
            let (w, b) = (next(), next());
            let s = tape.matmul(z, w)?;
            let id_scores = tape.add_row(s, b)?;
            return Ok(Nodes {
                z,
                y: None,
                y_hat: None,
                gates: None,
                id_scores,
                att_logits_or_probs: None,
            });
        }

        let p_norm = self
            .p_norm
            .as_ref()
            .ok_or_else(|| Error::Contract("attribute variant without graph".into()))?;
        let gcn = self
            .gcn
            .as_ref()
            .ok_or_else(|| Error::Contract("attribute variant without GCN".into()))?;
        let c = p_norm.rows();
        let p = tape.leaf(p_norm.clone());
        let h0 = tape.leaf(Matrix::identity(c));
        let layers: Vec<Var> = (0..gcn.num_layers()).map(|_| next()).collect();
        let u = gcn_forward_tape(tape, p, &layers, h0)?;
        let u_t = tape.transpose(u);
        let logits = tape.matmul(z, u_t)?;
        let y = match self.head {
            AttributeHead::Softmax => tape.softmax_rows(logits),
            AttributeHead::Sigmoid => tape.sigmoid(logits),
        };

        let (y_hat, gates) = if self.variant == Variant::Full {
            let rw_u = match &self.rw_gcn {
                Some(g) => {
                    let rw_layers: Vec<Var> = (0..g.num_layers()).map(|_| next()).collect();
                    gcn_forward_tape(tape, p, &rw_layers, h0)?
                }
                None => u,
            };
            let (hw, hb) = (next(), next());
            let s = tape.matmul(rw_u, hw)?;
            let ones = tape.leaf(Matrix::filled(c, 1, 1.0));
            let bias = tape.matmul(ones, hb)?;
            let s = tape.add(s, bias)?;
            let s_t = tape.transpose(s);
            let gates = tape.sigmoid(s_t);
            (tape.mul_row(y, gates)?, Some(gates))
        } else {
            (y, None)
        };

        let fused = tape.hconcat(z, y_hat)?;
        let (w, b) = (next(), next());
        let s = tape.matmul(fused, w)?;
        let id_scores = tape.add_row(s, b)?;
        Ok(Nodes {
            z,
            y: Some(y),
            y_hat: Some(y_hat),
            gates,
            id_scores,
            att_logits_or_probs: Some(y),
        })
    }

    /// Records `L = L_att + λ·L_id` for a batch, both terms averaged over rows.
    ///
    /// `targets` is `B × c` (ignored by the baseline) and `labels` holds the
    /// identity class index of each row.
    pub fn loss(
        &self,
        input: BatchInput<'_>,
        targets: &Matrix,
        labels: &[usize],
        lambda: f64,
    ) -> Result<LossGraph> {
        let b = input.len();
        if labels.len() != b {
            return Err(Error::shape("labels", (b, 1), (labels.len(), 1)));
        }
        let n_ids = self.num_identities();
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_ids) {
            return Err(Error::Contract(format!(
                "identity label {bad} outside {n_ids} classes"
            )));
        }
        let mut tape = Tape::new();
        let params: Vec<Var> = self.params().into_iter().map(|m| tape.leaf(m.clone())).collect();
        let nodes = self.build(&mut tape, &params, input)?;

        let l_att = match nodes.att_logits_or_probs {
            Some(y) => {
                if targets.shape() != tape.shape(y) {
                    return Err(Error::shape("attribute targets", tape.shape(y), targets.shape()));
                }
                Some(match self.head {
                    AttributeHead::Softmax => tape.cross_entropy(y, targets, Reduction::MeanRows)?,
                    AttributeHead::Sigmoid => {
                        tape.binary_cross_entropy(y, targets, Reduction::MeanRows)?
                    }
                })
            }
            None => None,
        };
        let onehot = Matrix::from_fn(b, n_ids, |i, j| if labels[i] == j { 1.0 } else { 0.0 });
        let p = tape.softmax_rows(nodes.id_scores);
        let l_id = tape.cross_entropy(p, &onehot, Reduction::MeanRows)?;
        let weighted = tape.scale(l_id, lambda);
        let total = match l_att {
            Some(a) => tape.add(a, weighted)?,
            None => weighted,
        };
        Ok(LossGraph {
            tape,
            total,
            l_att,
            l_id,
            params,
        })
    }

    /// Inference forward pass.
    pub fn embed(&self, input: BatchInput<'_>) -> Result<Embedding> {
        let mut tape = Tape::new();
        let params: Vec<Var> = self.params().into_iter().map(|m| tape.leaf(m.clone())).collect();
        let nodes = self.build(&mut tape, &params, input)?;
        Ok(Embedding {
            z: tape.value(nodes.z).clone(),
            y: nodes.y.map(|v| tape.value(v).clone()),
            y_hat: nodes.y_hat.map(|v| tape.value(v).clone()),
            gates: nodes.gates.map(|v| tape.value(v).clone()),
            id_scores: tape.value(nodes.id_scores).clone(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(CHECKPOINT_MAGIC);
        let layers = self.gcn.as_ref().map_or(&[][..], |g| &g.layers[..]);
        w.u32(layers.len() as u32);
        for m in layers {
            w.matrix(m);
        }
        let empty = Matrix::zeros(0, 0);
        match &self.rw_head {
            Some(h) => {
                w.matrix(&h.weight);
                w.matrix(&h.bias);
            }
            None => {
                w.matrix(&empty);
                w.matrix(&empty);
            }
        }
        w.matrix(&self.id_head.weight);
        w.matrix(&self.id_head.bias);
        w.u32(self.variant.code());
        w.u32(self.head.code());
        let rw_layers = self.rw_gcn.as_ref().map_or(&[][..], |g| &g.layers[..]);
        w.u32(rw_layers.len() as u32);
        for m in rw_layers {
            w.matrix(m);
        }
        w.matrix(self.p_norm.as_ref().unwrap_or(&empty));
        match &self.backbone {
            Backbone::Identity { dim } => {
                w.u32(0);
                w.u32(*dim as u32);
            }
            Backbone::Linear { weight, bias } => {
                w.u32(1);
                w.matrix(weight);
                w.matrix(bias);
            }
            Backbone::Tiny(t) => {
                w.u32(2);
                w.u32(t.in_channels as u32);
                w.u32(t.kernel as u32);
                w.matrix(&t.weight);
                w.matrix(&t.bias);
            }
        }
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, LoadError> {
        let mut r = Reader::new(buf);
        r.magic(CHECKPOINT_MAGIC)?;
        let n_layers = r.u32()? as usize;
        let layers = (0..n_layers).map(|_| r.matrix()).collect::<Result<Vec<_>, _>>()?;
        let rw_weight = r.matrix()?;
        let rw_bias = r.matrix()?;
        let id_weight = r.matrix()?;
        let id_bias = r.matrix()?;
        let variant = r.u32()?;
        let variant = Variant::from_code(variant)
            .ok_or_else(|| LoadError::Invalid(format!("variant code {variant}")))?;
        let head = r.u32()?;
        let head = AttributeHead::from_code(head)
            .ok_or_else(|| LoadError::Invalid(format!("head code {head}")))?;
        let n_rw = r.u32()? as usize;
        let rw_layers = (0..n_rw).map(|_| r.matrix()).collect::<Result<Vec<_>, _>>()?;
        let p_norm = r.matrix()?;
        let backbone = match r.u32()? {
            0 => Backbone::Identity {
                dim: r.u32()? as usize,
            },
            1 => Backbone::Linear {
                weight: r.matrix()?,
                bias: r.matrix()?,
            },
            2 => {
                let in_channels = r.u32()? as usize;
                let kernel = r.u32()? as usize;
                Backbone::Tiny(TinyExtractor {
                    in_channels,
                    kernel,
                    weight: r.matrix()?,
                    bias: r.matrix()?,
                })
            }
            other => return Err(LoadError::Invalid(format!("backbone code {other}"))),
        };
        r.finish(|| format!("{n_layers} GCN layers"))?;

        let params = Self {
            variant,
            head,
            p_norm: (p_norm.rows() > 0).then_some(p_norm),
            gcn: (!layers.is_empty()).then_some(GcnParams { layers }),
            rw_gcn: (!rw_layers.is_empty()).then_some(GcnParams { layers: rw_layers }),
            rw_head: (rw_weight.rows() > 0).then_some(ReweightHead {
                weight: rw_weight,
                bias: rw_bias,
            }),
            id_head: IdHead {
                weight: id_weight,
                bias: id_bias,
            },
            backbone,
        };
        params.check().map_err(|e| LoadError::ShapeMismatch {
            declared: "checkpoint header".into(),
            actual: e.to_string(),
        })?;
        Ok(params)
    }

    /// Cross-checks every dimension against the others.
    pub fn check(&self) -> Result<()> {
        let d = self.feature_dim();
        let n = self.num_identities();
        if self.id_head.bias.shape() != (1, n) {
            return Err(Error::shape("id bias", (1, n), self.id_head.bias.shape()));
        }
        if !self.variant.uses_attributes() {
            if self.gcn.is_some() || self.rw_head.is_some() || self.p_norm.is_some() {
                return Err(Error::Contract("baseline checkpoint carries GCN parameters".into()));
            }
            if self.id_head.input_dim() != d {
                return Err(Error::shape("id head", (d, n), self.id_head.weight.shape()));
            }
            return Ok(());
        }
        let p = self
            .p_norm
            .as_ref()
            .ok_or_else(|| Error::Contract("missing attribute graph".into()))?;
        let c = p.rows();
        if p.cols() != c {
            return Err(Error::shape("graph", (c, c), p.shape()));
        }
        let gcn = self
            .gcn
            .as_ref()
            .ok_or_else(|| Error::Contract("missing GCN layers".into()))?;
        gcn.validate(c)?;
        if gcn.output_dim() != d {
            return Err(Error::shape("gcn output", (c, d), (c, gcn.output_dim())));
        }
        if let Some(rw) = &self.rw_gcn {
            rw.validate(c)?;
            if rw.output_dim() != d {
                return Err(Error::shape("rw gcn output", (c, d), (c, rw.output_dim())));
            }
        }
        match (&self.rw_head, self.variant) {
            (Some(h), Variant::Full) => {
                if h.weight.shape() != (d, 1) || h.bias.shape() != (1, 1) {
                    return Err(Error::shape("rw head", (d, 1), h.weight.shape()));
                }
            }
            (None, Variant::NoReweight) => {}
            _ => return Err(Error::Contract("re-weighting head does not match variant".into())),
        }
        if self.id_head.input_dim() != d + c {
            return Err(Error::shape("id head", (d + c, n), self.id_head.weight.shape()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&buf)?)
    }
}
