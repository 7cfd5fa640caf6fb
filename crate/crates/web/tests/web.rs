use cmrin_web::{generate_scene_json, ground_json, noun_phrases_json, relation_graph_json};
use serde_json::Value;

fn parse(s: Result<String, String>) -> Value {
    serde_json::from_str(&s.unwrap()).unwrap()
}

#[test]
fn relation_graph_labels_both_directions() {
    let boxes = r#"[{"x":0.25,"y":0.5,"w":0.2,"h":0.2},{"x":0.75,"y":0.5,"w":0.2,"h":0.2}]"#;
    let g = parse(relation_graph_json(boxes, "type11+center-dis(1.4)"));
    let edges = g["edges"].as_array().unwrap();
    assert_eq!(edges.len(), 2);
    let name = |from: u64| {
        edges.iter().find(|e| e["from"] == from).unwrap()["name"].as_str().unwrap().to_string()
    };
    // directions are mirror images of each other
    assert_ne!(name(0), name(1));
    assert!(["left", "right"].contains(&name(0).as_str()));
    assert!(["left", "right"].contains(&name(1).as_str()));
}

#[test]
fn type7_names_are_coarse() {
    let boxes = r#"[{"x":0.2,"y":0.2,"w":0.1,"h":0.1},{"x":0.8,"y":0.8,"w":0.1,"h":0.1}]"#;
    let g = parse(relation_graph_json(boxes, "type7+center-dis(1.4)"));
    for e in g["edges"].as_array().unwrap() {
        let n = e["name"].as_str().unwrap();
        assert!(["right", "top", "left", "bottom"].contains(&n), "{n}");
    }
}

#[test]
fn relation_graph_rejects_bad_input() {
    assert!(relation_graph_json("not json", "type11+center-dis(0.5)").is_err());
    assert!(relation_graph_json(r#"[{"x":0.5,"y":0.5,"w":0,"h":0.1}]"#, "type11+center-dis(0.5)").is_err());
    assert!(relation_graph_json("[]", "type11").is_err());
}

#[test]
fn noun_phrases_of_nested_tree() {
    let tree = "(ROOT (NP (NP (DT the) (NN umbrella)) (PP (IN under) (NP (DT the) (NN tree)))))";
    let r = parse(noun_phrases_json(tree));
    assert_eq!(r["tokens"].as_array().unwrap().len(), 5);
    let cands: Vec<&str> = r["candidates"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(cands, ["the umbrella", "the tree"]);
    assert!(noun_phrases_json("(NP (DT the)").is_err());
}

#[test]
fn generated_scene_grounds_with_untrained_model() {
    let scene = parse(generate_scene_json(7));
    let n = scene["proposals"].as_array().unwrap().len();
    assert!(scene["gt_index"].as_u64().unwrap() < n as u64);
    assert_eq!(scene["attributes"].as_array().unwrap().len(), n);

    let scene_json = serde_json::json!({
        "proposals": scene["proposals"],
        "semantic_edges": scene["semantic_edges"],
    })
    .to_string();
    let expr = scene["expression"].as_str().unwrap();
    let r = parse(ground_json("", &scene_json, expr, ""));
    let ranking = r["ranking"].as_array().unwrap();
    assert_eq!(ranking.len(), n);
    assert_eq!(r["predicted"], ranking[0]["index"]);
    let scores: Vec<f64> = ranking.iter().map(|p| p["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert!(scores.iter().all(|s| (-1.0..=1.0).contains(s)));

    // the template tree and the explicitly supplied one give the same answer
    let explicit = parse(ground_json("", &scene_json, expr, scene["tree"].as_str().unwrap()));
    assert_eq!(explicit["details"]["scores"], r["details"]["scores"]);
}

#[test]
fn ground_needs_a_tree_for_free_text() {
    let scene = parse(generate_scene_json(1));
    let scene_json = serde_json::json!({ "proposals": scene["proposals"] }).to_string();
    let err = ground_json("", &scene_json, "the thing that looks odd", "").unwrap_err();
    assert!(err.contains("tree"), "{err}");
    assert!(ground_json("{", &scene_json, "the red circle", "").is_err());
}

#[test]
fn scenes_are_seeded() {
    assert_eq!(generate_scene_json(3).unwrap(), generate_scene_json(3).unwrap());
    assert_ne!(generate_scene_json(3).unwrap(), generate_scene_json(4).unwrap());
}
