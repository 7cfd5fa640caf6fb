//! Generator audits, resolver agreement and the dataset file format.

use std::collections::HashSet;

use cmrin::data_synth::{
    denote, expression_tokens, expression_tree, generate_scene, generate_splits, parse_expression, read_dataset,
    resolve_sample, write_dataset, DataError, Dataset, GeneratorConfig, ObjectAttributes, Sample, SynthError,
    SEMANTIC_CATEGORIES,
};
use cmrin::language::parse_bracketed_tree;
use cmrin::scene_graph::{classify_spatial_relation, iou, Proposal, SpatialRelation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(num_scenes: usize, seed: u64) -> GeneratorConfig {
    GeneratorConfig { num_scenes, seed, ..GeneratorConfig::default() }
}

#[test]
fn ten_thousand_scenes_pass_the_validator() {
    let cfg = GeneratorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10_000 {
        let k = rng.random_range(cfg.k_min..=cfg.k_max);
        let scene = generate_scene(&cfg, k, &mut rng).unwrap();
        assert_eq!(scene.proposals.len(), k);
        assert_eq!(scene.attributes.len(), k);
        for p in &scene.proposals {
            p.validate().unwrap();
            assert!(p.width > 0.0 && p.height > 0.0);
            assert!(p.left() >= 0.0 && p.right() <= 1.0 && p.top() >= 0.0 && p.bottom() <= 1.0, "{p:?}");
            assert_eq!(p.feature.len(), cfg.d_x);
            assert!(p.feature.iter().all(|v| v.is_finite()));
        }
        for i in 0..k {
            for j in 0..i {
                // one object per grid cell
                assert_eq!(iou(&scene.proposals[i], &scene.proposals[j]), 0.0);
            }
        }
        for d in &scene.semantic_edges {
            assert!(d.i != d.j && d.i < k && d.j < k);
            assert_eq!(d.probs.len(), SEMANTIC_CATEGORIES);
            assert_eq!(d.probs.iter().sum::<f64>(), 1.0);
        }
    }
}

#[test]
fn noiseless_features_depend_only_on_attributes() {
    let cfg = GeneratorConfig { noise: 0.0, ..GeneratorConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut seen: Vec<(ObjectAttributes, Vec<f64>)> = Vec::new();
    let mut matched = 0;
    for _ in 0..200 {
        let scene = generate_scene(&cfg, 8, &mut rng).unwrap();
        for (a, p) in scene.attributes.iter().zip(&scene.proposals) {
            match seen.iter().find(|(b, _)| b == a) {
                Some((_, f)) => {
                    assert_eq!(f, &p.feature);
                    matched += 1;
                }
                None => seen.push((a.clone(), p.feature.clone())),
            }
        }
    }
    assert!(matched > 100);
    // distinct attributes give distinct features
    for (i, (_, f)) in seen.iter().enumerate() {
        assert!(seen[..i].iter().all(|(_, g)| g != f));
    }
}

#[test]
fn same_seed_same_bytes() {
    let cfg = small(60, 4);
    let bytes = |c: &GeneratorConfig| {
        let splits = generate_splits(c).unwrap();
        let mut out = Vec::new();
        for s in splits {
            write_dataset(&Dataset::new(c.d_x, SEMANTIC_CATEGORIES, s), &mut out).unwrap();
        }
        out
    };
    assert_eq!(bytes(&cfg), bytes(&cfg));
    assert_ne!(bytes(&cfg), bytes(&small(60, 5)));

    let scene = |seed| generate_scene(&cfg, 6, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    assert_eq!(scene(3), scene(3));
}

/// Independent reading of the templates: walks the tokens directly and
/// checks the direction with the relation classifier.
fn oracle_denotation(tokens: &[String], boxes: &[Proposal], attrs: &[ObjectAttributes], cfg: &GeneratorConfig) -> Vec<usize> {
    // split into noun groups separated by relation words
    let mut groups: Vec<(Option<String>, String)> = Vec::new();
    let mut rels: Vec<SpatialRelation> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        assert_eq!(tokens[i], "the");
        i += 1;
        let color = cfg.colors.contains(&tokens[i]).then(|| tokens[i].clone());
        if color.is_some() {
            i += 1;
        }
        groups.push((color, tokens[i].clone()));
        i += 1;
        if i < tokens.len() {
            let (rel, n) = match tokens[i].as_str() {
                "left" => (SpatialRelation::Left, 2),
                "right" => (SpatialRelation::Right, 2),
                "above" => (SpatialRelation::Top, 1),
                "below" => (SpatialRelation::Bottom, 1),
                other => panic!("unexpected {other}"),
            };
            rels.push(rel);
            i += n;
        }
    }
    let matches = |g: &(Option<String>, String), o: usize| attrs[o].shape == g.1 && g.0.as_ref().is_none_or(|c| &attrs[o].color == c);
    let mut set: Vec<usize> = (0..boxes.len()).filter(|&o| matches(groups.last().unwrap(), o)).collect();
    for level in (0..rels.len()).rev() {
        set = (0..boxes.len())
            .filter(|&o| matches(&groups[level], o))
            .filter(|&o| {
                set.iter().any(|&a| {
                    a != o && classify_spatial_relation(&boxes[o], &boxes[a], &cfg.relation_graph).unwrap() == rels[level]
                })
            })
            .collect();
    }
    set
}

#[test]
fn every_sample_resolves_to_its_ground_truth() {
    let cfg = small(900, 21);
    let splits = generate_splits(&cfg).unwrap();
    assert_eq!(splits.iter().map(Vec::len).collect::<Vec<_>>(), cfg.split_counts().to_vec());
    let mut by_order = [0usize; 3];
    for s in splits.iter().flatten() {
        assert_eq!(resolve_sample(s, &cfg), Some(s.gt_index), "{:?}", s.tokens);
        let attrs = s.attributes.as_ref().unwrap();
        assert_eq!(oracle_denotation(&s.tokens, &s.proposals, attrs, &cfg), vec![s.gt_index], "{:?}", s.tokens);

        let expr = parse_expression(&s.tokens, &cfg.colors, &cfg.shapes).unwrap();
        assert_eq!(expr.order(), s.order);
        assert_eq!(expression_tokens(&expr), s.tokens);
        let tree = parse_bracketed_tree(&s.tree).unwrap();
        assert_eq!(tree, expression_tree(&expr));
        assert_eq!(tree.leaves(), s.tokens);

        // a distractor of the target's shape always exists
        let same_shape = attrs.iter().filter(|a| a.shape == attrs[s.gt_index].shape).count();
        assert!(same_shape >= 2, "{:?}", s.tokens);
        if s.order == 2 {
            let (_, mediator) = expr.relation.as_ref().unwrap();
            let (_, anchor) = mediator.relation.as_ref().unwrap();
            let mediators = denote(mediator, &s.proposals, attrs, &cfg.relation_graph);
            let anchors = denote(anchor, &s.proposals, attrs, &cfg.relation_graph);
            assert_eq!(anchors.len(), 1);
            assert!(!mediators.is_empty());
            assert!(mediators.iter().any(|&m| m != s.gt_index && m != anchors[0]));
        }
        by_order[s.order as usize] += 1;
    }
    // equal weights: each order gets a fair share
    assert!(by_order.iter().all(|&n| n > 240), "{by_order:?}");
}

#[test]
fn splits_partition_the_scenes() {
    let cfg = small(120, 2);
    let splits = generate_splits(&cfg).unwrap();
    let mut ids = HashSet::new();
    for s in splits.iter().flatten() {
        assert!(ids.insert(s.scene_id.clone()));
    }
    assert_eq!(ids.len(), 120);
    assert_eq!(cfg.split_counts(), [80, 20, 20]);
}

#[test]
fn order_one_example() {
    let cfg = GeneratorConfig::default();
    let p = |x, y| Proposal::new(x, y, 0.1, 0.1, vec![0.0; cfg.d_x]).unwrap();
    let a = |c: &str, s: &str| ObjectAttributes { color: c.into(), shape: s.into(), size: "small".into() };
    let boxes = [p(0.2, 0.5), p(0.5, 0.5), p(0.8, 0.5)];
    let attrs = [a("blue", "square"), a("red", "circle"), a("green", "square")];
    let toks: Vec<String> = "the square left of the red circle".split(' ').map(String::from).collect();
    let expr = parse_expression(&toks, &cfg.colors, &cfg.shapes).unwrap();
    assert_eq!(denote(&expr, &boxes, &attrs, &cfg.relation_graph), vec![0]);
    assert_eq!(oracle_denotation(&toks, &boxes, &attrs, &cfg), vec![0]);
    let toks: Vec<String> = "the red circle".split(' ').map(String::from).collect();
    assert_eq!(oracle_denotation(&toks, &boxes, &attrs, &cfg), vec![1]);
}

#[test]
fn bad_configs_are_rejected() {
    let bad_split = GeneratorConfig { split: [0.5, 0.3, 0.3], ..GeneratorConfig::default() };
    assert!(matches!(bad_split.validate(), Err(SynthError::Config(_))));
    let crowded = GeneratorConfig { k_max: 17, ..GeneratorConfig::default() };
    assert!(matches!(crowded.validate(), Err(SynthError::Infeasible { k: 17, grid: 4 })));
    let cfg = GeneratorConfig::default();
    assert!(matches!(
        generate_scene(&cfg, 17, &mut ChaCha8Rng::seed_from_u64(0)),
        Err(SynthError::Infeasible { .. })
    ));
    let one = GeneratorConfig { k_min: 1, ..GeneratorConfig::default() };
    assert!(one.validate().is_err());
    let narrow = GeneratorConfig { d_x: 5, ..GeneratorConfig::default() };
    assert!(narrow.validate().is_err());
}

// ---------- file format ----------

fn dataset(n: usize) -> Dataset {
    let cfg = small(n, 8);
    let [train, _, _] = generate_splits(&GeneratorConfig { split: [1.0, 0.0, 0.0], ..cfg.clone() }).unwrap();
    Dataset::new(cfg.d_x, SEMANTIC_CATEGORIES, train)
}

fn to_text(d: &Dataset) -> String {
    let mut out = Vec::new();
    write_dataset(d, &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

#[test]
fn round_trip_is_lossless() {
    let d = dataset(30);
    let text = to_text(&d);
    assert_eq!(text.lines().count(), 31);
    let header: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["version"], 1);
    assert_eq!(header["d_x"], 32);
    let back = read_dataset(text.as_bytes()).unwrap();
    assert_eq!(back, d);
    // features survive bit for bit
    for (a, b) in d.samples.iter().zip(&back.samples) {
        for (p, q) in a.proposals.iter().zip(&b.proposals) {
            assert!(p.feature.iter().zip(&q.feature).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

#[test]
fn records_follow_the_interchange_schema() {
    let d = dataset(3);
    let text = to_text(&d);
    let rec: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
    for key in ["scene_id", "proposals", "semantic_edges", "tokens", "tree", "gt_index", "order"] {
        assert!(rec.get(key).is_some(), "{key}");
    }
    let p = &rec["proposals"][0];
    assert_eq!(p["box"].as_array().unwrap().len(), 4);
    assert_eq!(p["feature"].as_array().unwrap().len(), 32);
    // attribute annotations are optional
    let mut s: Sample = d.samples[0].clone();
    s.attributes = None;
    let line = serde_json::to_string(&s).unwrap();
    assert!(!line.contains("attributes"));
    let back: Sample = serde_json::from_str(&line).unwrap();
    assert_eq!(back, s);
}

#[test]
fn truncated_file_reports_the_line() {
    let text = to_text(&dataset(5));
    let cut = text.len() - text.lines().last().unwrap().len() / 2 - 1;
    match read_dataset(&text.as_bytes()[..cut]) {
        Err(DataError::Record { line, .. }) => assert_eq!(line, 6),
        other => panic!("{other:?}"),
    }
}

#[test]
fn invalid_records_report_the_line() {
    let d = dataset(4);
    let mut lines: Vec<String> = to_text(&d).lines().map(String::from).collect();
    let mut bad = d.samples[2].clone();
    bad.gt_index = 99;
    lines[3] = serde_json::to_string(&bad).unwrap();
    match read_dataset(lines.join("\n").as_bytes()) {
        Err(DataError::Record { line: 4, reason }) => assert!(reason.contains("gt_index"), "{reason}"),
        other => panic!("{other:?}"),
    }
    let mut bad = d.samples[0].clone();
    bad.tree = "(NP (DT the) (NN nothing))".into();
    lines[3] = serde_json::to_string(&bad).unwrap();
    assert!(matches!(read_dataset(lines.join("\n").as_bytes()), Err(DataError::Record { line: 4, .. })));
}

#[test]
fn header_only_and_version_checks() {
    let empty = Dataset::new(32, 4, vec![]);
    let text = to_text(&empty);
    assert_eq!(text.lines().count(), 1);
    assert_eq!(read_dataset(text.as_bytes()).unwrap(), empty);
    assert!(matches!(read_dataset(&b""[..]), Err(DataError::MissingHeader)));
    assert!(matches!(
        read_dataset(&br#"{"version":2,"d_x":32}"#[..]),
        Err(DataError::Record { line: 1, .. })
    ));
}
