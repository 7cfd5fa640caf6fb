//! Relation labels over many random box pairs.

use cmrin::scene_graph::{
    build_spatial_graph, classify_spatial_relation, iou, Connectivity, EdgeDesign, GraphVariantConfig, Proposal,
    SpatialRelation,
};
use proptest::prelude::*;

fn bx(x: f64, y: f64, w: f64, h: f64) -> Proposal {
    Proposal::new(x, y, w, h, vec![]).unwrap()
}

/// Clamps the centre so the whole box stays inside the image.
fn fit(x: f64, y: f64, w: f64, h: f64) -> Proposal {
    bx(x.clamp(w / 2.0, 1.0 - w / 2.0), y.clamp(h / 2.0, 1.0 - h / 2.0), w, h)
}

fn any_box() -> impl Strategy<Value = Proposal> {
    (0.0..1.0f64, 0.0..1.0f64, 0.02..0.6f64, 0.02..0.6f64).prop_map(|(x, y, w, h)| fit(x, y, w, h))
}

/// Independent pairs plus near-duplicates, nested boxes and shifted copies,
/// so every branch of the cascade is exercised.
fn any_pair() -> impl Strategy<Value = (Proposal, Proposal)> {
    prop_oneof![
        (any_box(), any_box()),
        (any_box(), -0.05..0.05f64, -0.05..0.05f64, 0.8..1.2f64).prop_map(|(a, dx, dy, s)| {
            let b = fit(a.center_x + dx, a.center_y + dy, a.width * s, a.height * s);
            (a, b)
        }),
        (any_box(), 0.1..0.9f64, -0.3..0.3f64, -0.3..0.3f64).prop_map(|(a, s, fx, fy)| {
            let (w, h) = (a.width * s, a.height * s);
            let x = a.center_x + fx * (a.width - w);
            let y = a.center_y + fy * (a.height - h);
            (a.clone(), bx(x, y, w, h))
        }),
    ]
}

fn label(a: &Proposal, b: &Proposal, design: EdgeDesign) -> u8 {
    let cfg = GraphVariantConfig {
        edge_design: design,
        connectivity: Connectivity::CenterDistance(0.5),
    };
    let g = build_spatial_graph(&[a.clone(), b.clone()], &cfg).unwrap();
    g.edge_labels[0][1]
}

/// Direct angle oracle: 45-degree sectors centred on multiples of 45
/// degrees, counter-clockwise from "right", with image y pointing down.
fn sector_oracle(a: &Proposal, b: &Proposal) -> u8 {
    let theta = (-(a.center_y - b.center_y)).atan2(a.center_x - b.center_x).to_degrees();
    let theta = theta.rem_euclid(360.0);
    (((theta + 22.5) / 45.0).floor() as u8) % 8 + 1
}

fn contains(outer: &Proposal, inner: &Proposal) -> bool {
    let t = 1e-9;
    outer.left() <= inner.left() + t
        && outer.top() <= inner.top() + t
        && outer.right() + t >= inner.right()
        && outer.bottom() + t >= inner.bottom()
}

/// type11 -> type7 by table, written independently of the library.
const COARSEN: [u8; 12] = [0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 6, 7];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn labels_are_antisymmetric((a, b) in any_pair()) {
        let ab = SpatialRelation::from_label(label(&a, &b, EdgeDesign::Type11)).unwrap();
        let ba = SpatialRelation::from_label(label(&b, &a, EdgeDesign::Type11)).unwrap();
        prop_assert_eq!(ab.inverse(), ba, "{:?} vs {:?}", ab, ba);
        if ab == SpatialRelation::Inside {
            prop_assert_eq!(ba, SpatialRelation::Cover);
        }
        if ab.is_directional() {
            prop_assert_eq!((ab.label() - 1 + 4) % 8 + 1, ba.label());
        }
        // type7 keeps opposite directions opposite
        let (c, d) = (label(&a, &b, EdgeDesign::Type7), label(&b, &a, EdgeDesign::Type7));
        if (1..=4).contains(&c) {
            prop_assert_eq!((c - 1 + 2) % 4 + 1, d);
        } else {
            prop_assert_eq!(c == 0, d == 0);
            prop_assert_eq!(c == 7, d == 7);
            prop_assert_eq!(c == 5, d == 6);
        }
    }

    #[test]
    fn cascade_matches_direct_rules((a, b) in any_pair()) {
        let got = classify_spatial_relation(&a, &b, &GraphVariantConfig::default()).unwrap();
        let (a_has_b, b_has_a) = (contains(&a, &b), contains(&b, &a));
        let expected = if a_has_b && !b_has_a {
            SpatialRelation::Inside
        } else if b_has_a && !a_has_b {
            SpatialRelation::Cover
        } else if (a_has_b && b_has_a) || iou(&a, &b) > 0.5 {
            SpatialRelation::Overlap
        } else if a.center_distance(&b) / 2f64.sqrt() > 0.5 {
            SpatialRelation::None
        } else {
            SpatialRelation::from_label(sector_oracle(&a, &b)).unwrap()
        };
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn overlap_takes_precedence_over_direction((a, b) in any_pair()) {
        if iou(&a, &b) > 0.5 && !contains(&a, &b) && !contains(&b, &a) {
            prop_assert_eq!(label(&a, &b, EdgeDesign::Type11), SpatialRelation::Overlap.label());
        }
    }

    #[test]
    fn type7_is_a_coarsening_of_type11(boxes in prop::collection::vec(any_box(), 1..7)) {
        let mk = |design| GraphVariantConfig { edge_design: design, connectivity: Connectivity::CenterDistance(0.5) };
        let g11 = build_spatial_graph(&boxes, &mk(EdgeDesign::Type11)).unwrap();
        let g7 = build_spatial_graph(&boxes, &mk(EdgeDesign::Type7)).unwrap();
        for (r11, r7) in g11.edge_labels.iter().zip(&g7.edge_labels) {
            for (&l11, &l7) in r11.iter().zip(r7) {
                prop_assert_eq!(COARSEN[l11 as usize], l7);
            }
        }
    }
}

#[test]
fn every_sector_is_reached() {
    let centre = bx(0.5, 0.5, 0.05, 0.05);
    let mut seen = [false; 9];
    for step in 0..360 {
        let t = (step as f64 + 0.5).to_radians();
        let o = bx(0.5 + 0.2 * t.cos(), 0.5 - 0.2 * t.sin(), 0.05, 0.05);
        let l = label(&o, &centre, EdgeDesign::Type11);
        assert!((1..=8).contains(&l), "angle {step}: label {l}");
        seen[l as usize] = true;
    }
    assert!(seen[1..].iter().all(|&s| s));
}
