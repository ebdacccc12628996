mod common;

use attkgcn_core::attkg::{estimate_cooccurrence, AttributeSchema};
use attkgcn_core::data::{
    annotations_to_csv, generate_synthetic, load_annotations, parse_annotations, save_annotations, split,
    AttributeBlock, PersonRecord, SplitProtocol, SynthConfig,
};
use attkgcn_core::error::{Error, ParseError};
use proptest::prelude::*;
use rand::Rng;

fn annotation_text(schema: &AttributeSchema, ids: u32, per_id: u32, seed: u64) -> String {
    let mut r = common::rng(seed);
    let c = schema.len();
    let mut out = String::from("image_id,identity,camera");
    for n in schema.names() {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    let mut image = 0;
    for id in 0..ids {
        let attrs: Vec<u8> = (0..c).map(|_| u8::from(r.random_bool(0.3))).collect();
        for k in 0..per_id {
            out.push_str(&format!("{image},{id},{k}"));
            for a in &attrs {
                out.push_str(&format!(",{a}"));
            }
            out.push('\n');
            image += 1;
        }
    }
    out
}

#[test]
fn annotations_with_27_attributes() {
    let schema = AttributeSchema::numbered(27).unwrap();
    let records = parse_annotations(&annotation_text(&schema, 20, 3, 1), &schema).unwrap();
    assert_eq!(records.len(), 60);
    assert!(records.iter().all(|r| r.attributes.len() == 27));
    let g = estimate_cooccurrence(records.iter().map(|r| r.attributes.as_slice()), 27).unwrap();
    assert_eq!(g.p.shape(), (27, 27));
    assert!(g.p.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn annotations_with_23_attributes() {
    let schema = AttributeSchema::numbered(23).unwrap();
    let records = parse_annotations(&annotation_text(&schema, 10, 2, 2), &schema).unwrap();
    assert_eq!(records.len(), 20);
    assert!(records.iter().all(|r| r.attributes.len() == 23));
    // a 23-column file is rejected under the 27-attribute schema
    let wider = AttributeSchema::numbered(27).unwrap();
    assert!(parse_annotations(&annotation_text(&schema, 10, 2, 2), &wider).is_err());
}

fn parse_err(text: &str) -> ParseError {
    let schema = AttributeSchema::parse("hat\nbag\n").unwrap();
    match parse_annotations(text, &schema) {
        Err(Error::Parse(e)) => e,
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn parse_errors_carry_line_numbers() {
    let head = "image_id,identity,camera,hat,bag\n";
    assert!(matches!(
        parse_err("image_id,identity,camera,hat\n1,1,0,1\n"),
        ParseError::MissingColumn { line: 1, .. }
    ));
    assert!(matches!(
        parse_err(&format!("{head}1,1,0,1,0\n2,1,1,1,2\n")),
        ParseError::NonBinary { line: 3, .. }
    ));
    assert!(matches!(
        parse_err(&format!("{head}1,1,0,1,0\n1,1,1,1,0\n")),
        ParseError::DuplicateImage { line: 3, image_id: 1 }
    ));
    assert!(matches!(
        parse_err("image_id,identity,camera,hat,bag,scarf\n"),
        ParseError::UnknownColumn { line: 1, .. }
    ));
    assert!(matches!(
        parse_err("image_id,identity,camera,bag,hat\n"),
        ParseError::ColumnOrder { line: 1, .. }
    ));
}

fn record_strategy() -> impl Strategy<Value = Vec<PersonRecord>> {
    (2usize..6, prop::collection::vec((0u32..5, 0u32..4, any::<bool>()), 1..30)).prop_map(|(c, rows)| {
        let mut attrs = std::collections::HashMap::new();
        rows.iter()
            .enumerate()
            .map(|(i, &(identity, camera, distractor))| {
                let a = attrs
                    .entry(identity)
                    .or_insert_with(|| (0..c).map(|k| ((identity as usize + k) % 2) as u8).collect::<Vec<u8>>())
                    .clone();
                PersonRecord {
                    image_id: i as u32 * 3,
                    identity,
                    camera,
                    attributes: a,
                    feature: None,
                    image: None,
                    distractor,
                }
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn annotations_round_trip(records in record_strategy()) {
        let schema = AttributeSchema::numbered(records[0].attributes.len()).unwrap();
        let text = annotations_to_csv(&records, &schema);
        prop_assert_eq!(parse_annotations(&text, &schema).unwrap(), records);
    }

    #[test]
    fn splits_are_disjoint_with_cross_camera_queries(seed in any::<u64>(), frac in 0.1f64..0.9) {
        let records = common::small_synthetic(12, seed);
        let s = split(&records, &SplitProtocol::Fraction { train: frac, seed }).unwrap();
        prop_assert!(s.train_identities().is_disjoint(&s.test_identities()));
        prop_assert_eq!(s.train.len() + s.query.len() + s.gallery.len(), records.len());
        for q in &s.query {
            prop_assert!(s.gallery.iter().any(|g| g.identity == q.identity && g.camera != q.camera));
        }
        let queried: std::collections::BTreeSet<u32> = s.query.iter().map(|q| q.identity).collect();
        prop_assert_eq!(queried, s.test_identities());
    }
}

#[test]
fn annotations_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let schema = AttributeSchema::parse("hat\nbag\nshorts\n").unwrap();
    let records = parse_annotations(&annotation_text(&schema, 5, 2, 3), &schema).unwrap();
    let path = dir.path().join("a.csv");
    save_annotations(&path, &records, &schema).unwrap();
    assert_eq!(load_annotations(&path, &schema).unwrap(), records);
    assert!(matches!(
        load_annotations(&dir.path().join("missing.csv"), &schema),
        Err(Error::Io { .. })
    ));
}

#[test]
fn ten_identity_half_split() {
    let records = common::small_synthetic(10, 4);
    let s = split(&records, &SplitProtocol::Fraction { train: 0.5, seed: 4 }).unwrap();
    assert_eq!(s.train_identities().len(), 5);
    assert_eq!(s.test_identities().len(), 5);
}

#[test]
fn split_751_train_750_test() {
    let records: Vec<PersonRecord> = (0..1501u32)
        .flat_map(|id| {
            (0..2).map(move |k| PersonRecord {
                image_id: id * 2 + k,
                identity: id,
                camera: k,
                attributes: vec![0, 1],
                feature: None,
                image: None,
                distractor: false,
            })
        })
        .collect();
    let s = split(&records, &SplitProtocol::TrainCount { train: 751, seed: 0 }).unwrap();
    assert_eq!(s.train_identities().len(), 751);
    assert_eq!(s.test_identities().len(), 750);
    assert_eq!(s.query.len(), 750);
}

#[test]
fn overlapping_identity_lists_are_rejected() {
    let records = common::small_synthetic(4, 0);
    let protocol = SplitProtocol::Lists {
        train: vec![0, 1],
        test: vec![1, 2],
        seed: 0,
    };
    assert!(matches!(split(&records, &protocol), Err(Error::Protocol(_))));
}

#[test]
fn zero_noise_gives_identical_features_per_identity() {
    let mut cfg = SynthConfig::with_blocks(6, 4, 6, 8, 2, 3);
    cfg.noise_scale = 0.0;
    let data = generate_synthetic(&cfg).unwrap();
    for id in 0..6 {
        let feats: Vec<&Vec<f64>> = data
            .records
            .iter()
            .filter(|r| r.identity == id)
            .map(|r| r.feature.as_ref().unwrap())
            .collect();
        assert!(feats.windows(2).all(|w| w[0] == w[1]));
    }
}

#[test]
fn certain_block_gives_unit_conditionals() {
    let mut cfg = SynthConfig::with_blocks(300, 2, 4, 4, 0, 9);
    cfg.blocks = vec![AttributeBlock {
        members: vec![0, 1],
        activation: 0.4,
        within: 1.0,
    }];
    cfg.background = 0.0;
    let data = generate_synthetic(&cfg).unwrap();
    let g = estimate_cooccurrence(data.records.iter().map(|r| r.attributes.as_slice()), 4).unwrap();
    assert_eq!(g.p.get(0, 1), 1.0);
    assert_eq!(g.p.get(1, 0), 1.0);
}

#[test]
fn estimate_converges_to_generative_graph() {
    let data = generate_synthetic(&SynthConfig::with_blocks(2000, 1, 12, 4, 3, 11)).unwrap();
    let g = estimate_cooccurrence(data.records.iter().map(|r| r.attributes.as_slice()), 12).unwrap();
    let truth = &data.stats.conditional;
    let worst = g
        .p
        .as_slice()
        .iter()
        .zip(truth.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 0.05, "max deviation {worst}");
}

#[test]
fn generator_is_bit_reproducible() {
    let mut cfg = SynthConfig::with_blocks(8, 3, 6, 5, 2, 21);
    cfg.grid = Some((2, 3));
    assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
    cfg.seed = 22;
    let a = generate_synthetic(&cfg).unwrap();
    cfg.seed = 21;
    assert_ne!(a, generate_synthetic(&cfg).unwrap());
}

#[test]
fn invalid_synth_configs() {
    let mut cfg = SynthConfig::with_blocks(0, 3, 6, 5, 2, 0);
    assert!(generate_synthetic(&cfg).is_err());
    cfg.n_identities = 3;
    cfg.noise_scale = -1.0;
    assert!(generate_synthetic(&cfg).is_err());
}
