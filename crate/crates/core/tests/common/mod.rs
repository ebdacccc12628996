//! Fixtures and from-definition oracles shared by the integration tests.
#![allow(dead_code)]

use attkgcn_core::attkg::normalize_adjacency;
use attkgcn_core::data::{generate_synthetic, split, PersonRecord, Split, SplitProtocol, SynthConfig, SynthDataset};
use attkgcn_core::eval::Entry;
use attkgcn_core::gcn::AttributeHead;
use attkgcn_core::model::{BackboneKind, BatchInput, ModelParams, ModelSpec, Variant};
use attkgcn_core::numerics::Matrix;
use attkgcn_core::reid::ImageGrid;
use attkgcn_core::rng::seeded;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Triple-loop product written independently of the library.
pub fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// `(n_i, m_ij)` by scanning every record for every pair.
pub fn brute_force_counts(records: &[Vec<u8>], c: usize) -> (Vec<u64>, Vec<Vec<u64>>) {
    let mut n = vec![0u64; c];
    let mut m = vec![vec![0u64; c]; c];
    for i in 0..c {
        for j in 0..c {
            for r in records {
                if r[i] == 1 && r[j] == 1 {
                    m[i][j] += 1;
                }
            }
        }
        n[i] = records.iter().filter(|r| r[i] == 1).count() as u64;
    }
    (n, m)
}

pub fn random_attributes(rng: &mut ChaCha8Rng, records: usize, c: usize) -> Vec<Vec<u8>> {
    let density = rng.random_range(0.05..0.95);
    (0..records)
        .map(|_| (0..c).map(|_| u8::from(rng.random_bool(density))).collect())
        .collect()
}

/// Random query/gallery instance with a few identities and cameras, some
/// distractors and duplicated descriptors to exercise tie-breaking.
pub fn random_retrieval(rng: &mut ChaCha8Rng, max_q: usize, max_g: usize) -> (Vec<Entry>, Vec<Entry>) {
    let n_q = rng.random_range(1..=max_q);
    let n_g = rng.random_range(1..=max_g);
    let n_ids = rng.random_range(1..=8u32);
    let dim = rng.random_range(1..=4usize);
    let pool: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut next = 0u32;
    let mut entry = |rng: &mut ChaCha8Rng, distractors: bool| {
        let descriptor = if rng.random_bool(0.3) {
            pool[rng.random_range(0..pool.len())].clone()
        } else {
            (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        next += 1;
        Entry {
            image_id: next * 7 % 1009,
            identity: rng.random_range(0..n_ids),
            camera: rng.random_range(0..3),
            distractor: distractors && rng.random_bool(0.1),
            descriptor,
        }
    };
    let queries = (0..n_q).map(|_| entry(rng, false)).collect();
    let gallery = (0..n_g).map(|_| entry(rng, true)).collect();
    (queries, gallery)
}

// Retrieval reference: linear scan, insertion sort, AP from precision at each hit.

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        1.0 - dot / (na * nb)
    }
}

/// Valid gallery of one query in rank order, flagged with match status.
pub fn reference_ranking(q: &Entry, gallery: &[Entry]) -> Vec<(u32, bool)> {
    let mut valid: Vec<(f64, u32, bool)> = Vec::new();
    for g in gallery {
        let same_person = !g.distractor && g.identity == q.identity;
        if same_person && g.camera == q.camera {
            continue;
        }
        valid.push((cosine(&q.descriptor, &g.descriptor), g.image_id, same_person));
    }
    // insertion sort on (distance, id)
    for i in 1..valid.len() {
        let mut j = i;
        while j > 0 && (valid[j].0, valid[j].1) < (valid[j - 1].0, valid[j - 1].1) {
            valid.swap(j, j - 1);
            j -= 1;
        }
    }
    valid.into_iter().map(|(_, id, m)| (id, m)).collect()
}

pub fn reference_ap(ranking: &[(u32, bool)]) -> Option<f64> {
    let relevant = ranking.iter().filter(|r| r.1).count();
    if relevant == 0 {
        return None;
    }
    let mut sum = 0.0;
    for k in 0..ranking.len() {
        if ranking[k].1 {
            let precision = ranking[..=k].iter().filter(|r| r.1).count() as f64 / (k + 1) as f64;
            sum += precision;
        }
    }
    Some(sum / relevant as f64)
}

/// `(rank1, rank5, rank10, mAP, evaluated)`.
pub fn reference_metrics(queries: &[Entry], gallery: &[Entry]) -> Option<(f64, f64, f64, f64, usize)> {
    let mut n = 0;
    let mut hits = [0.0; 3];
    let mut ap = 0.0;
    for q in queries {
        let r = reference_ranking(q, gallery);
        let Some(a) = reference_ap(&r) else { continue };
        n += 1;
        ap += a;
        let first = r.iter().position(|x| x.1).unwrap();
        for (h, k) in hits.iter_mut().zip([1, 5, 10]) {
            if first < k {
                *h += 1.0;
            }
        }
    }
    (n > 0).then(|| (hits[0] / n as f64, hits[1] / n as f64, hits[2] / n as f64, ap / n as f64, n))
}

/// Tiny end-to-end problem: c = 4, d = 6, 2 identities, L = 2.
pub struct TinyProblem {
    pub model: ModelParams,
    pub features: Matrix,
    pub images: Vec<ImageGrid>,
    pub targets: Matrix,
    pub labels: Vec<usize>,
}

impl TinyProblem {
    pub fn new(variant: Variant, head: AttributeHead, shared: bool, backbone: BackboneKind, seed: u64) -> Self {
        let (c, d, b) = (4, 6, 5);
        let mut r = rng(seed);
        let counts = Matrix::from_fn(c, c, |i, j| if i == j { 1.0 } else { r.random_range(0.0..1.0) });
        let p_norm = normalize_adjacency(&counts).unwrap();
        let input_dim = match backbone {
            BackboneKind::Tiny => 3,
            _ => d,
        };
        let spec = ModelSpec {
            variant,
            head,
            num_attributes: c,
            input_dim,
            feature_dim: d,
            num_identities: 2,
            gcn_layers: 2,
            hidden_width: 5,
            shared_gcn: shared,
            backbone,
            tiny_kernel: 2,
        };
        let mut model = ModelParams::init(&spec, Some(&p_norm), &mut seeded(seed)).unwrap();
        // move off the identity / zero initialization so every path is exercised
        for p in model.params_mut() {
            for v in p.as_mut_slice() {
                *v += r.random_range(-0.3..0.3);
            }
        }
        let features = random_matrix(&mut r, b, d);
        let images = (0..b)
            .map(|_| {
                let data = (0..3 * 3 * 3).map(|_| r.random_range(-1.0..1.0)).collect();
                ImageGrid::new(3, 3, 3, data).unwrap()
            })
            .collect();
        let targets = Matrix::from_fn(b, c, |i, j| f64::from(u8::from((i + j) % 3 == 0)));
        let labels = (0..b).map(|i| i % 2).collect();
        Self {
            model,
            features,
            images,
            targets,
            labels,
        }
    }

    pub fn loss_at(&self, model: &ModelParams, lambda: f64) -> f64 {
        let refs: Vec<&ImageGrid> = self.images.iter().collect();
        let input = match model.backbone.kind() {
            BackboneKind::Tiny => BatchInput::Images(&refs),
            _ => BatchInput::Features(&self.features),
        };
        let g = model.loss(input, &self.targets, &self.labels, lambda).unwrap();
        g.value(g.total)
    }

    pub fn analytic(&self, lambda: f64) -> Vec<Matrix> {
        let refs: Vec<&ImageGrid> = self.images.iter().collect();
        let input = match self.model.backbone.kind() {
            BackboneKind::Tiny => BatchInput::Images(&refs),
            _ => BatchInput::Features(&self.features),
        };
        let g = self.model.loss(input, &self.targets, &self.labels, lambda).unwrap();
        let grads = g.tape.backward(g.total).unwrap();
        g.params.iter().map(|&v| grads.get(v).clone()).collect()
    }

    /// Largest relative error between analytic and central-difference
    /// gradients, with the parameter name where it occurs.
    pub fn max_relative_error(&self, lambda: f64, step: f64) -> (f64, String) {
        let analytic = self.analytic(lambda);
        let names = self.model.param_names();
        let mut worst = (0.0, String::new());
        for (slot, a) in analytic.iter().enumerate() {
            for k in 0..a.len() {
                let mut plus = self.model.clone();
                plus.params_mut()[slot].as_mut_slice()[k] += step;
                let mut minus = self.model.clone();
                minus.params_mut()[slot].as_mut_slice()[k] -= step;
                let numeric = (self.loss_at(&plus, lambda) - self.loss_at(&minus, lambda)) / (2.0 * step);
                let exact = a.as_slice()[k];
                let scale = exact.abs().max(numeric.abs()).max(1e-6);
                let rel = (exact - numeric).abs() / scale;
                if rel > worst.0 {
                    worst = (rel, format!("{}[{k}]", names[slot]));
                }
            }
        }
        worst
    }
}

/// The ablation setup: 200 identities × 6 images, c = 12 in 3 blocks, d = 32.
pub const ABLATION_SEED: u64 = 7;

pub fn ablation_data(seed: u64) -> (SynthDataset, Split) {
    let data = generate_synthetic(&SynthConfig::with_blocks(200, 6, 12, 32, 3, seed)).unwrap();
    let s = split(&data.records, &SplitProtocol::Fraction { train: 0.5, seed }).unwrap();
    (data, s)
}

pub fn small_synthetic(ids: usize, seed: u64) -> Vec<PersonRecord> {
    generate_synthetic(&SynthConfig::with_blocks(ids, 4, 6, 8, 2, seed)).unwrap().records
}
