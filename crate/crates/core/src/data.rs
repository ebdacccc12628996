//! Person records, annotation CSV ingestion, train/query/gallery splits and
//! a synthetic generator with block-correlated attributes.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::attkg::AttributeSchema;
use crate::error::{Error, ParseError, Result};
use crate::numerics::Matrix;
use crate::reid::{FeatureCache, ImageGrid};
use crate::rng::{seeded, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct PersonRecord {
    pub image_id: u32,
    pub identity: u32,
    pub camera: u32,
    /// Identity-level multi-hot vector, replicated to every image.
    pub attributes: Vec<u8>,
    pub feature: Option<Vec<f64>>,
    pub image: Option<ImageGrid>,
    /// Background/junk image: never a query, no attribute evaluation.
    pub distractor: bool,
}

const FIXED_COLUMNS: [&str; 3] = ["image_id", "identity", "camera"];
const DISTRACTOR_COLUMN: &str = "distractor";

fn parse_u32(line: usize, column: &str, value: &str) -> Result<u32, ParseError> {
    value.trim().parse().map_err(|_| ParseError::InvalidValue {
        line,
        column: column.to_string(),
        value: value.to_string(),
    })
}

fn parse_bit(line: usize, column: &str, value: &str) -> Result<u8, ParseError> {
    match value.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(ParseError::NonBinary {
            line,
            column: column.to_string(),
            value: other.to_string(),
        }),
    }
}

/// Parses annotation CSV text. Header must be `image_id,identity,camera`
/// followed by the schema's attributes in order, optionally followed by a
/// `distractor` column. Line numbers in errors are 1-based.
pub fn parse_annotations(text: &str, schema: &AttributeSchema) -> Result<Vec<PersonRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = reader.records();

    let header = match rows.next() {
        Some(h) => h.map_err(|e| ParseError::Malformed {
            line: 1,
            message: e.to_string(),
        })?,
        None => {
            return Err(ParseError::MissingColumn {
                line: 1,
                column: FIXED_COLUMNS[0].into(),
            }
            .into())
        }
    };
    let expected: Vec<&str> = FIXED_COLUMNS
        .iter()
        .copied()
        .chain(schema.names().iter().map(String::as_str))
        .collect();
    let cols: Vec<&str> = header.iter().collect();
    for (i, want) in expected.iter().enumerate() {
        match cols.get(i) {
            None => {
                return Err(ParseError::MissingColumn {
                    line: 1,
                    column: want.to_string(),
                }
                .into())
            }
            Some(got) if got == want => {}
            Some(got) => {
                if !expected.contains(got) && *got != DISTRACTOR_COLUMN {
                    return Err(ParseError::UnknownColumn {
                        line: 1,
                        column: got.to_string(),
                    }
                    .into());
                }
                return Err(ParseError::ColumnOrder {
                    line: 1,
                    column: i,
                    expected: want.to_string(),
                    found: got.to_string(),
                }
                .into());
            }
        }
    }
    let has_distractor = match &cols[expected.len()..] {
        [] => false,
        [d] if *d == DISTRACTOR_COLUMN => true,
        [extra, ..] => {
            return Err(ParseError::UnknownColumn {
                line: 1,
                column: extra.to_string(),
            }
            .into())
        }
    };
    let width = expected.len() + usize::from(has_distractor);
    let c = schema.len();

    let mut records = Vec::new();
    let mut ids = HashSet::new();
    let mut identity_attrs: HashMap<u32, Vec<u8>> = HashMap::new();
    for (offset, row) in rows.enumerate() {
        let line = offset + 2;
        let row = row.map_err(|e| ParseError::Malformed {
            line,
            message: e.to_string(),
        })?;
        if row.len() == 1 && row.get(0) == Some("") {
            continue;
        }
        if row.len() != width {
            return Err(ParseError::FieldCount {
                line,
                expected: width,
                found: row.len(),
            }
            .into());
        }
        let image_id = parse_u32(line, "image_id", &row[0])?;
        let identity = parse_u32(line, "identity", &row[1])?;
        let camera = parse_u32(line, "camera", &row[2])?;
        let mut attributes = Vec::with_capacity(c);
        for (k, name) in schema.names().iter().enumerate() {
            attributes.push(parse_bit(line, name, &row[3 + k])?);
        }
        let distractor = if has_distractor {
            parse_bit(line, DISTRACTOR_COLUMN, &row[3 + c])? == 1
        } else {
            false
        };
        if !ids.insert(image_id) {
            return Err(ParseError::DuplicateImage { line, image_id }.into());
        }
        if !distractor {
            match identity_attrs.get(&identity) {
                Some(prev) if *prev != attributes => {
                    return Err(ParseError::Malformed {
                        line,
                        message: format!(
                            "identity {identity} attributes differ from an earlier image"
                        ),
                    }
                    .into())
                }
                Some(_) => {}
                None => {
                    identity_attrs.insert(identity, attributes.clone());
                }
            }
        }
        records.push(PersonRecord {
            image_id,
            identity,
            camera,
            attributes,
            feature: None,
            image: None,
            distractor,
        });
    }
    Ok(records)
}

pub fn load_annotations(path: &Path, schema: &AttributeSchema) -> Result<Vec<PersonRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, schema)
}

pub fn annotations_to_csv(records: &[PersonRecord], schema: &AttributeSchema) -> String {
    let with_distractor = records.iter().any(|r| r.distractor);
    let mut out = FIXED_COLUMNS.join(",");
    for n in schema.names() {
        out.push(',');
        out.push_str(n);
    }
    if with_distractor {
        out.push(',');
        out.push_str(DISTRACTOR_COLUMN);
    }
    out.push('\n');
    for r in records {
        out.push_str(&format!("{},{},{}", r.image_id, r.identity, r.camera));
        for a in &r.attributes {
            out.push(',');
            out.push(if *a == 1 { '1' } else { '0' });
        }
        if with_distractor {
            out.push_str(if r.distractor { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    out
}

pub fn save_annotations(path: &Path, records: &[PersonRecord], schema: &AttributeSchema) -> Result<()> {
    std::fs::write(path, annotations_to_csv(records, schema)).map_err(|e| Error::io(path, e))
}

/// Fills `feature` on every record from the cache; every record must be covered.
pub fn attach_features(records: &mut [PersonRecord], cache: &FeatureCache) -> Result<()> {
    let by_id: HashMap<u32, &Vec<f64>> = cache.entries.iter().map(|(id, z)| (*id, z)).collect();
    for r in records.iter_mut() {
        let z = by_id.get(&r.image_id).ok_or_else(|| {
            Error::Contract(format!("no cached feature for image {}", r.image_id))
        })?;
        r.feature = Some((*z).clone());
    }
    Ok(())
}

/// Collects record features into a cache.
pub fn feature_cache_of(records: &[PersonRecord]) -> Result<FeatureCache> {
    let dim = records
        .iter()
        .find_map(|r| r.feature.as_ref().map(Vec::len))
        .ok_or_else(|| Error::Contract("records carry no features".into()))?;
    let mut cache = FeatureCache::new(dim);
    for r in records {
        let z = r.feature.as_ref().ok_or_else(|| {
            Error::Contract(format!("image {} has no feature", r.image_id))
        })?;
        cache.push(r.image_id, z.clone())?;
    }
    Ok(cache)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitProtocol {
    /// Fraction of identities assigned to training, chosen by seeded shuffle.
    Fraction { train: f64, seed: u64 },
    /// Exact number of training identities, chosen by seeded shuffle.
    TrainCount { train: usize, seed: u64 },
    /// Explicit identity lists.
    Lists { train: Vec<u32>, test: Vec<u32>, seed: u64 },
}

impl SplitProtocol {
    fn seed(&self) -> u64 {
        match self {
            SplitProtocol::Fraction { seed, .. }
            | SplitProtocol::TrainCount { seed, .. }
            | SplitProtocol::Lists { seed, .. } => *seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<PersonRecord>,
    pub query: Vec<PersonRecord>,
    pub gallery: Vec<PersonRecord>,
}

impl Split {
    pub fn train_identities(&self) -> BTreeSet<u32> {
        self.train.iter().map(|r| r.identity).collect()
    }

    pub fn test_identities(&self) -> BTreeSet<u32> {
        self.query
            .iter()
            .chain(&self.gallery)
            .filter(|r| !r.distractor)
            .map(|r| r.identity)
            .collect()
    }
}

/// Identity-disjoint split. From each test identity one image is drawn as a
/// query provided another image of that identity exists on a different
/// camera; everything else (and all distractors) goes to the gallery.
pub fn split(records: &[PersonRecord], protocol: &SplitProtocol) -> Result<Split> {
    let identities: Vec<u32> = records
        .iter()
        .filter(|r| !r.distractor)
        .map(|r| r.identity)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = seeded(protocol.seed());
    let (train_ids, test_ids): (BTreeSet<u32>, BTreeSet<u32>) = match protocol {
        SplitProtocol::Fraction { train, .. } => {
            if !(0.0..=1.0).contains(train) {
                return Err(Error::Protocol(format!("train fraction {train} outside [0, 1]")));
            }
            let n = (identities.len() as f64 * train).round() as usize;
            take_shuffled(&identities, n, &mut rng)
        }
        SplitProtocol::TrainCount { train, .. } => {
            if *train > identities.len() {
                return Err(Error::Protocol(format!(
                    "requested {train} training identities, only {} exist",
                    identities.len()
                )));
            }
            take_shuffled(&identities, *train, &mut rng)
        }
        SplitProtocol::Lists { train, test, .. } => {
            let tr: BTreeSet<u32> = train.iter().copied().collect();
            let te: BTreeSet<u32> = test.iter().copied().collect();
            if let Some(id) = tr.intersection(&te).next() {
                return Err(Error::Protocol(format!(
                    "identity {id} appears in both train and test lists"
                )));
            }
            (tr, te)
        }
    };

    let mut out = Split {
        train: Vec::new(),
        query: Vec::new(),
        gallery: Vec::new(),
    };
    let mut test_groups: BTreeMap<u32, Vec<&PersonRecord>> = BTreeMap::new();
    for r in records {
        if r.distractor {
            out.gallery.push(r.clone());
        } else if train_ids.contains(&r.identity) {
            out.train.push(r.clone());
        } else if test_ids.contains(&r.identity) {
            test_groups.entry(r.identity).or_default().push(r);
        }
    }
    for group in test_groups.values_mut() {
        group.shuffle(&mut rng);
        let pick = group.iter().position(|q| {
            group.iter().any(|g| g.image_id != q.image_id && g.camera != q.camera)
        });
        for (i, r) in group.iter().enumerate() {
            if Some(i) == pick {
                out.query.push((*r).clone());
            } else {
                out.gallery.push((*r).clone());
            }
        }
    }
    out.query.sort_by_key(|r| r.image_id);
    out.gallery.sort_by_key(|r| r.image_id);
    Ok(out)
}

fn take_shuffled(ids: &[u32], n: usize, rng: &mut SeededRng) -> (BTreeSet<u32>, BTreeSet<u32>) {
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(rng);
    let train = shuffled[..n].iter().copied().collect();
    let test = shuffled[n..].iter().copied().collect();
    (train, test)
}

/// Attributes that tend to switch on together.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeBlock {
    pub members: Vec<usize>,
    /// Probability the block is active for an identity.
    pub activation: f64,
    /// Per-member presence probability when the block is active.
    pub within: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_identities: usize,
    pub images_per_identity: usize,
    pub c: usize,
    pub d: usize,
    pub n_cameras: usize,
    pub blocks: Vec<AttributeBlock>,
    /// Per-member presence probability when the member's block is inactive.
    pub background: f64,
    /// Presence probability of attributes outside every block.
    pub base_rate: f64,
    /// Scale of per-image Gaussian noise added to the features.
    pub noise_scale: f64,
    /// Scale of a per-identity Gaussian offset; 0 keeps `z = M a + ε`.
    pub identity_scale: f64,
    /// When set, also renders an image grid `d × h × w` per record.
    pub grid: Option<(usize, usize)>,
    pub seed: u64,
}

impl SynthConfig {
    /// `c` attributes split into `n_blocks` contiguous correlated blocks of
    /// equal size (remainder ungrouped).
    pub fn with_blocks(
        n_identities: usize,
        images_per_identity: usize,
        c: usize,
        d: usize,
        n_blocks: usize,
        seed: u64,
    ) -> Self {
        let size = c.checked_div(n_blocks).unwrap_or(0);
        let blocks = (0..n_blocks)
            .map(|b| AttributeBlock {
                members: (b * size..(b + 1) * size).collect(),
                activation: 0.5,
                within: 0.85,
            })
            .collect();
        Self {
            n_identities,
            images_per_identity,
            c,
            d,
            n_cameras: 4,
            blocks,
            background: 0.1,
            base_rate: 0.3,
            noise_scale: 0.5,
            identity_scale: 0.0,
            grid: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_identities", self.n_identities),
            ("images_per_identity", self.images_per_identity),
            ("c", self.c),
            ("d", self.d),
            ("n_cameras", self.n_cameras),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        for (name, v) in [("noise_scale", self.noise_scale), ("identity_scale", self.identity_scale)] {
            if v.is_nan() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be >= 0")));
            }
        }
        let probs = [self.background, self.base_rate]
            .into_iter()
            .chain(self.blocks.iter().flat_map(|b| [b.activation, b.within]));
        for p in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        let mut seen = HashSet::new();
        for b in &self.blocks {
            for &m in &b.members {
                if m >= self.c || !seen.insert(m) {
                    return Err(Error::Config(format!(
                        "block member {m} out of range or repeated"
                    )));
                }
            }
        }
        if let Some((h, w)) = self.grid {
            if h == 0 || w == 0 {
                return Err(Error::Config("grid dimensions must be >= 1".into()));
            }
        }
        Ok(())
    }

    fn block_of(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.c];
        for (b, block) in self.blocks.iter().enumerate() {
            for &m in &block.members {
                out[m] = Some(b);
            }
        }
        out
    }

    /// Exact generative marginals, pairwise joints and conditionals.
    pub fn generative_stats(&self) -> GenerativeStats {
        let c = self.c;
        let block_of = self.block_of();
        let marginal: Vec<f64> = (0..c)
            .map(|i| match block_of[i] {
                Some(b) => {
                    let bl = &self.blocks[b];
                    bl.activation * bl.within + (1.0 - bl.activation) * self.background
                }
                None => self.base_rate,
            })
            .collect();
        let joint = Matrix::from_fn(c, c, |i, j| {
            if i == j {
                return marginal[i];
            }
            match (block_of[i], block_of[j]) {
                (Some(a), Some(b)) if a == b => {
                    let bl = &self.blocks[a];
                    bl.activation * bl.within * bl.within
                        + (1.0 - bl.activation) * self.background * self.background
                }
                _ => marginal[i] * marginal[j],
            }
        });
        let conditional = Matrix::from_fn(c, c, |i, j| {
            if marginal[i] == 0.0 {
                0.0
            } else {
                joint.get(i, j) / marginal[i]
            }
        });
        GenerativeStats {
            marginal,
            joint,
            conditional,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeStats {
    pub marginal: Vec<f64>,
    pub joint: Matrix,
    /// `P(j | i)` at row `i`, column `j`.
    pub conditional: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub schema: AttributeSchema,
    pub records: Vec<PersonRecord>,
    /// `d×c` mixing matrix mapping attributes to feature space.
    pub mixing: Matrix,
    pub stats: GenerativeStats,
}

fn normal(rng: &mut SeededRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws identities with block-correlated attributes and features
/// `z = M a + s_id·v + s_noise·ε`, rounded to `f32` precision so they
/// survive the feature cache bit-exactly.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let c = cfg.c;
    let d = cfg.d;
    let block_of = cfg.block_of();
    let scale = 1.0 / (c as f64).sqrt();
    let mixing = Matrix::from_fn(d, c, |_, _| normal(&mut rng) * scale);

    let mut records = Vec::with_capacity(cfg.n_identities * cfg.images_per_identity);
    let mut next_image = 0u32;
    for identity in 0..cfg.n_identities {
        let active: Vec<bool> = cfg
            .blocks
            .iter()
            .map(|b| rng.random_bool(b.activation))
            .collect();
        let attributes: Vec<u8> = (0..c)
            .map(|i| {
                let p = match block_of[i] {
                    Some(b) if active[b] => cfg.blocks[b].within,
                    Some(_) => cfg.background,
                    None => cfg.base_rate,
                };
                u8::from(rng.random_bool(p))
            })
            .collect();
        let a: Vec<f64> = attributes.iter().map(|&v| v as f64).collect();
        let base = mixing.matmul(&Matrix::column(&a))?.into_vec();
        let offset: Vec<f64> = (0..d).map(|_| normal(&mut rng) * cfg.identity_scale).collect();
        let cam_offset = rng.random_range(0..cfg.n_cameras);
        for k in 0..cfg.images_per_identity {
            let feature: Vec<f64> = (0..d)
                .map(|j| {
                    let v = base[j] + offset[j] + cfg.noise_scale * normal(&mut rng);
                    v as f32 as f64
                })
                .collect();
            let image = cfg.grid.map(|(h, w)| render_grid(&feature, h, w, &mut rng));
            records.push(PersonRecord {
                image_id: next_image,
                identity: identity as u32,
                camera: ((cam_offset + k) % cfg.n_cameras) as u32,
                attributes: attributes.clone(),
                feature: Some(feature),
                image,
                distractor: false,
            });
            next_image += 1;
        }
    }
    Ok(SynthDataset {
        schema: AttributeSchema::numbered(c)?,
        records,
        mixing,
        stats: cfg.generative_stats(),
    })
}

/// Spreads a feature over a grid: one random anchor pixel carries the full
/// vector, every other pixel a random fraction of it, plus small noise.
fn render_grid(feature: &[f64], h: usize, w: usize, rng: &mut SeededRng) -> ImageGrid {
    let anchor = rng.random_range(0..h * w);
    let weights: Vec<f64> = (0..h * w)
        .map(|p| if p == anchor { 1.0 } else { rng.random_range(0.0..0.5) })
        .collect();
    let mut data = Vec::with_capacity(feature.len() * h * w);
    for &f in feature {
        for &wt in &weights {
            data.push(f * wt + 0.05 * normal(rng));
        }
    }
    ImageGrid {
        channels: feature.len(),
        height: h,
        width: w,
        data,
    }
}
