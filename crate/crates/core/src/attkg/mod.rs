//! The directed attribute co-occurrence graph.
//!
//! Edge weight `P[i][j]` is the empirical conditional probability that
//! attribute `j` is present given attribute `i` is present. Propagation uses
//! the self-loop-augmented row normalization `D⁻¹(P + I)`.

mod schema;

use std::fmt::Write as _;
use std::path::Path;

pub use schema::{AttributeGroup, AttributeSchema};

use crate::binio::{Reader, Writer};
use crate::error::{Error, LoadError, Result};
use crate::numerics::Matrix;

pub const GRAPH_MAGIC: &[u8; 8] = b"ATTKG\0\0\x01";

#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceGraph {
    /// `n[i]`: number of images carrying attribute `i`.
    pub counts: Vec<u64>,
    /// `m[i][j]` row-major: number of images carrying both `i` and `j`.
    pub pair_counts: Vec<u64>,
    pub p: Matrix,
    pub p_norm: Matrix,
}

impl CooccurrenceGraph {
    pub fn num_attributes(&self) -> usize {
        self.counts.len()
    }

    pub fn pair_count(&self, i: usize, j: usize) -> u64 {
        self.pair_counts[i * self.counts.len() + j]
    }

    /// Fraction of off-diagonal entries of `P` that are nonzero.
    pub fn density(&self) -> f64 {
        let c = self.num_attributes();
        if c < 2 {
            return 0.0;
        }
        let mut nz = 0usize;
        for i in 0..c {
            for j in 0..c {
                if i != j && self.p.get(i, j) > 0.0 {
                    nz += 1;
                }
            }
        }
        nz as f64 / (c * (c - 1)) as f64
    }

    /// The `k` largest off-diagonal edges as `(i, j, P_ij)`, ties broken by
    /// `(i, j)` ascending.
    pub fn strongest_edges(&self, k: usize) -> Vec<(usize, usize, f64)> {
        let c = self.num_attributes();
        let mut edges: Vec<(usize, usize, f64)> = (0..c)
            .flat_map(|i| (0..c).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j)
            .map(|(i, j)| (i, j, self.p.get(i, j)))
            .filter(|e| e.2 > 0.0)
            .collect();
        edges.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        edges.truncate(k);
        edges
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(GRAPH_MAGIC);
        w.u32(self.counts.len() as u32);
        for &n in &self.counts {
            w.u64(n);
        }
        for &m in &self.pair_counts {
            w.u64(m);
        }
        w.f64s(self.p.as_slice());
        w.f64s(self.p_norm.as_slice());
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, LoadError> {
        let mut r = Reader::new(buf);
        r.magic(GRAPH_MAGIC)?;
        let c = r.u32()? as usize;
        let expected = graph_payload_len(c);
        let remaining = r.remaining();
        if remaining != expected {
            // A payload that exactly fits some other attribute count is a
            // shape error; anything else short is a truncation.
            if let Some(actual) = (1..=4096).find(|&k| graph_payload_len(k) == remaining) {
                return Err(LoadError::ShapeMismatch {
                    declared: format!("c={c}"),
                    actual: format!("{actual}x{actual} payload"),
                });
            }
            if remaining < expected {
                return Err(LoadError::Truncated {
                    offset: buf.len(),
                    needed: expected - remaining,
                });
            }
        }
        let mut counts = Vec::with_capacity(c);
        for _ in 0..c {
            counts.push(r.u64()?);
        }
        let mut pair_counts = Vec::with_capacity(c * c);
        for _ in 0..c * c {
            pair_counts.push(r.u64()?);
        }
        let p = Matrix::from_vec(c, c, r.f64s(c * c)?).expect("sized");
        let p_norm = Matrix::from_vec(c, c, r.f64s(c * c)?).expect("sized");
        r.finish(|| format!("c={c}"))?;
        Ok(Self {
            counts,
            pair_counts,
            p,
            p_norm,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&buf)?)
    }

    /// `P` as CSV with a header row of attribute names.
    pub fn to_csv(&self, schema: &AttributeSchema) -> String {
        let mut out = String::from("attribute");
        for n in schema.names() {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (i, n) in schema.names().iter().enumerate() {
            out.push_str(n);
            for j in 0..self.num_attributes() {
                let _ = write!(out, ",{}", self.p.get(i, j));
            }
            out.push('\n');
        }
        out
    }
}

/// Bytes following the `c` field.
fn graph_payload_len(c: usize) -> usize {
    c * 8 + 3 * c * c * 8
}

/// Counts attribute occurrences and co-occurrences over multi-hot vectors
/// and forms `P[i][j] = m_ij / n_i`. Rows with `n_i = 0` stay all-zero.
pub fn estimate_cooccurrence<'a, I>(attributes: I, c: usize) -> Result<CooccurrenceGraph>
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let mut counts = vec![0u64; c];
    let mut pair_counts = vec![0u64; c * c];
    let mut seen = 0usize;
    let mut active = Vec::with_capacity(c);
    for (record, attrs) in attributes.into_iter().enumerate() {
        if attrs.len() != c {
            return Err(Error::SchemaMismatch {
                record,
                expected: c,
                found: attrs.len(),
            });
        }
        active.clear();
        for (i, &a) in attrs.iter().enumerate() {
            match a {
                0 => {}
                1 => active.push(i),
                other => {
                    return Err(Error::Contract(format!(
                        "record {record}: attribute {i} has non-binary value {other}"
                    )))
                }
            }
        }
        for &i in &active {
            counts[i] += 1;
            for &j in &active {
                pair_counts[i * c + j] += 1;
            }
        }
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::Contract(
            "cannot estimate co-occurrence from an empty record list".into(),
        ));
    }
    let p = Matrix::from_fn(c, c, |i, j| {
        if counts[i] == 0 {
            0.0
        } else {
            pair_counts[i * c + j] as f64 / counts[i] as f64
        }
    });
    let p_norm = normalize_adjacency(&p)?;
    Ok(CooccurrenceGraph {
        counts,
        pair_counts,
        p,
        p_norm,
    })
}

/// `D⁻¹(P + I)` where `D` holds the row sums of `P + I`.
pub fn normalize_adjacency(p: &Matrix) -> Result<Matrix> {
    if p.rows() != p.cols() {
        return Err(Error::shape("normalize_adjacency", p.shape(), p.shape()));
    }
    if let Some(v) = p.as_slice().iter().find(|v| v.is_nan() || **v < 0.0) {
        return Err(Error::Contract(format!(
            "adjacency entries must be nonnegative, found {v}"
        )));
    }
    let mut out = p.add(&Matrix::identity(p.rows()))?;
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let total: f64 = row.iter().sum();
        for v in row {
            *v /= total;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_record_example() {
        let recs: [&[u8]; 2] = [&[1, 1], &[1, 0]];
        let g = estimate_cooccurrence(recs, 2).unwrap();
        assert_eq!(g.p.get(0, 1), 0.5);
        assert_eq!(g.p.get(1, 0), 1.0);
        assert_eq!(g.p.get(0, 0), 1.0);
        assert_eq!(g.p.get(1, 1), 1.0);
        // P + I = [[2, .5], [1, 2]] → rows / 2.5 and / 3
        assert_eq!(g.p_norm.row(0), &[2.0 / 2.5, 0.5 / 2.5]);
        assert_eq!(g.p_norm.row(1), &[1.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn all_present_gives_all_ones() {
        let recs: [&[u8]; 1] = [&[1, 1, 1, 1]];
        let g = estimate_cooccurrence(recs, 4).unwrap();
        assert_eq!(g.p, Matrix::filled(4, 4, 1.0));
    }

    #[test]
    fn absent_attribute_row_is_zero() {
        let recs: [&[u8]; 2] = [&[1, 0, 1], &[0, 0, 1]];
        let g = estimate_cooccurrence(recs, 3).unwrap();
        assert_eq!(g.p.row(1), &[0.0, 0.0, 0.0]);
        assert_eq!(g.p_norm.row(1), &[0.0, 1.0, 0.0]);
        // asymmetric: P(2|0)=1, P(0|2)=1/2
        assert_eq!(g.p.get(0, 2), 1.0);
        assert_eq!(g.p.get(2, 0), 0.5);
    }

    #[test]
    fn errors() {
        let empty: [&[u8]; 0] = [];
        assert!(matches!(estimate_cooccurrence(empty, 3), Err(Error::Contract(_))));
        let bad: [&[u8]; 1] = [&[1, 0]];
        assert!(matches!(
            estimate_cooccurrence(bad, 3),
            Err(Error::SchemaMismatch { expected: 3, found: 2, .. })
        ));
        let nonbin: [&[u8]; 1] = [&[1, 2]];
        assert!(estimate_cooccurrence(nonbin, 2).is_err());
    }

    #[test]
    fn normalize_special_cases() {
        assert_eq!(normalize_adjacency(&Matrix::zeros(3, 3)).unwrap(), Matrix::identity(3));
        assert_eq!(normalize_adjacency(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
        assert!(normalize_adjacency(&Matrix::filled(2, 2, -0.1)).is_err());
    }

    #[test]
    fn bytes_round_trip_and_corruption() {
        let recs: [&[u8]; 3] = [&[1, 1, 0], &[1, 0, 0], &[0, 1, 1]];
        let g = estimate_cooccurrence(recs, 3).unwrap();
        let bytes = g.to_bytes();
        assert_eq!(CooccurrenceGraph::from_bytes(&bytes).unwrap(), g);

        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(
            CooccurrenceGraph::from_bytes(cut),
            Err(LoadError::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            CooccurrenceGraph::from_bytes(&bad),
            Err(LoadError::BadMagic { .. })
        ));
    }

    #[test]
    fn declared_27_with_26_payload_is_shape_error() {
        let recs: [&[u8]; 1] = [&[1u8; 26]];
        let g = estimate_cooccurrence(recs, 26).unwrap();
        let mut bytes = g.to_bytes();
        bytes[8..12].copy_from_slice(&27u32.to_le_bytes());
        assert!(matches!(
            CooccurrenceGraph::from_bytes(&bytes),
            Err(LoadError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn strongest_edges_ordering() {
        let recs: [&[u8]; 2] = [&[1, 1], &[1, 0]];
        let g = estimate_cooccurrence(recs, 2).unwrap();
        assert_eq!(g.strongest_edges(5), vec![(1, 0, 1.0), (0, 1, 0.5)]);
        assert_eq!(g.density(), 1.0);
    }
}
