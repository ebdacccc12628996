mod common;

use attkgcn_core::attkg::{estimate_cooccurrence, normalize_adjacency, AttributeSchema, CooccurrenceGraph};
use attkgcn_core::error::LoadError;
use attkgcn_core::numerics::Matrix;
use proptest::prelude::*;

fn dataset() -> impl Strategy<Value = (usize, Vec<Vec<u8>>)> {
    (1usize..=10).prop_flat_map(|c| {
        (Just(c), prop::collection::vec(prop::collection::vec(0u8..=1, c), 1..=50))
    })
}

fn graph(records: &[Vec<u8>], c: usize) -> CooccurrenceGraph {
    estimate_cooccurrence(records.iter().map(Vec::as_slice), c).unwrap()
}

proptest! {
    #[test]
    fn estimator_matches_brute_force((c, records) in dataset()) {
        let g = graph(&records, c);
        let (n, m) = common::brute_force_counts(&records, c);
        prop_assert_eq!(&g.counts, &n);
        for i in 0..c {
            for j in 0..c {
                prop_assert_eq!(g.pair_count(i, j), m[i][j]);
                let expected = if n[i] == 0 { 0.0 } else { m[i][j] as f64 / n[i] as f64 };
                prop_assert_eq!(g.p.get(i, j), expected);
            }
        }
    }

    #[test]
    fn normalized_rows_are_stochastic((c, records) in dataset()) {
        let g = graph(&records, c);
        for i in 0..c {
            prop_assert!((g.p_norm.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(g.p_norm.row(i).iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn permuting_attributes_permutes_the_graph((c, records) in dataset(), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..c).collect();
        let mut r = common::rng(seed);
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let permuted: Vec<Vec<u8>> = records.iter().map(|r| perm.iter().map(|&k| r[k]).collect()).collect();
        let a = graph(&records, c);
        let b = graph(&permuted, c);
        prop_assert_eq!(&b.p, &a.p.permute_symmetric(&perm));
        let expected = a.p_norm.permute_symmetric(&perm);
        for (x, y) in b.p_norm.as_slice().iter().zip(expected.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn diagonal_is_one_where_attribute_occurs((c, records) in dataset()) {
        let g = graph(&records, c);
        for i in 0..c {
            let expected = if g.counts[i] > 0 { 1.0 } else { 0.0 };
            prop_assert_eq!(g.p.get(i, i), expected);
        }
    }

    #[test]
    fn graph_file_round_trips((c, records) in dataset()) {
        let g = graph(&records, c);
        let bytes = g.to_bytes();
        let back = CooccurrenceGraph::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}

#[test]
fn two_record_fixture() {
    let records = vec![vec![1u8, 1], vec![1, 0]];
    let g = graph(&records, 2);
    assert_eq!(g.p.get(0, 1), 0.5);
    assert_eq!(g.p.get(1, 0), 1.0);
}

#[test]
fn never_seen_attribute_gives_zero_row_and_self_loop() {
    let g = graph(&[vec![1, 0, 1], vec![1, 0, 0]], 3);
    assert!(g.p.row(1).iter().all(|&x| x == 0.0));
    assert_eq!(g.p_norm.row(1), &[0.0, 1.0, 0.0]);
}

#[test]
fn estimator_rejects_bad_input() {
    assert!(estimate_cooccurrence(std::iter::empty::<&[u8]>(), 3).is_err());
    assert!(estimate_cooccurrence([&[1u8, 0][..]], 3).is_err());
    assert!(estimate_cooccurrence([&[1u8, 2, 0][..]], 3).is_err());
}

#[test]
fn normalization_adds_self_loops_then_row_normalizes() {
    let p = Matrix::from_vec(2, 2, vec![0.0, 1.0, 0.5, 0.0]).unwrap();
    let n = normalize_adjacency(&p).unwrap();
    assert_eq!(n.row(0), &[0.5, 0.5]);
    assert!((n.get(1, 0) - 0.5 / 1.5).abs() < 1e-15);
    assert!(normalize_adjacency(&Matrix::from_vec(1, 1, vec![-1.0]).unwrap()).is_err());
}

#[test]
fn graph_with_27_attributes_and_header_mismatch() {
    let c = 27;
    let mut r = common::rng(5);
    let records = common::random_attributes(&mut r, 40, c);
    let g = graph(&records, c);
    assert_eq!(g.p.shape(), (27, 27));
    let mut bytes = g.to_bytes();
    // claim 27 attributes but carry a 26-attribute payload
    let g26 = graph(&records.iter().map(|r| r[..26].to_vec()).collect::<Vec<_>>(), 26);
    let payload = g26.to_bytes();
    bytes.truncate(12);
    bytes.extend_from_slice(&payload[12..]);
    assert!(matches!(
        CooccurrenceGraph::from_bytes(&bytes),
        Err(LoadError::ShapeMismatch { .. })
    ));
}

#[test]
fn corrupt_graph_files() {
    let g = graph(&[vec![1, 1, 0]], 3);
    let bytes = g.to_bytes();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(CooccurrenceGraph::from_bytes(&bad), Err(LoadError::BadMagic { .. })));
    assert!(matches!(
        CooccurrenceGraph::from_bytes(&bytes[..bytes.len() - 5]),
        Err(LoadError::Truncated { .. })
    ));
}

#[test]
fn graph_save_load_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let schema = AttributeSchema::parse("hat\nbag\nshorts\n").unwrap();
    let g = graph(&[vec![1, 1, 0], vec![0, 1, 1]], 3);
    let path = dir.path().join("g.bin");
    g.save(&path).unwrap();
    assert_eq!(CooccurrenceGraph::load(&path).unwrap(), g);
    let csv = g.to_csv(&schema);
    assert!(csv.lines().next().unwrap().contains("hat"));
}
