//! Rule-based reading of generated expressions, independent of the network.

use crate::scene_graph::{classify_spatial_relation, GraphVariantConfig, Proposal, SpatialRelation};

use super::ObjectAttributes;

/// A parsed referring expression: `the [color] shape [relation ...]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefExpr {
    pub color: Option<String>,
    pub shape: String,
    pub relation: Option<(SpatialRelation, Box<RefExpr>)>,
}

impl RefExpr {
    pub fn order(&self) -> u8 {
        self.relation.as_ref().map_or(0, |(_, sub)| 1 + sub.order())
    }
}

/// Words used for each expressible direction.
pub fn relation_words(rel: SpatialRelation) -> Option<&'static [&'static str]> {
    match rel {
        SpatialRelation::Left => Some(&["left", "of"]),
        SpatialRelation::Right => Some(&["right", "of"]),
        SpatialRelation::Top => Some(&["above"]),
        SpatialRelation::Bottom => Some(&["below"]),
        _ => None,
    }
}

pub const EXPRESSIBLE: [SpatialRelation; 4] = [
    SpatialRelation::Left,
    SpatialRelation::Right,
    SpatialRelation::Top,
    SpatialRelation::Bottom,
];

/// Parses tokens produced by the templates; `None` when they do not fit.
pub fn parse_expression(tokens: &[String], colors: &[String], shapes: &[String]) -> Option<RefExpr> {
    let (expr, rest) = parse_np(tokens, colors, shapes)?;
    rest.is_empty().then_some(expr)
}

fn parse_np<'a>(tokens: &'a [String], colors: &[String], shapes: &[String]) -> Option<(RefExpr, &'a [String])> {
    let (first, mut rest) = tokens.split_first()?;
    if first != "the" {
        return None;
    }
    let mut color = None;
    if let Some(c) = rest.first().filter(|t| colors.contains(t)) {
        color = Some(c.clone());
        rest = &rest[1..];
    }
    let (shape, mut rest) = rest.split_first()?;
    if !shapes.contains(shape) {
        return None;
    }
    let mut relation = None;
    for rel in EXPRESSIBLE {
        let words = relation_words(rel).expect("expressible");
        if rest.len() >= words.len() && rest.iter().zip(words).all(|(a, b)| a == b) {
            let (sub, after) = parse_np(&rest[words.len()..], colors, shapes)?;
            relation = Some((rel, Box::new(sub)));
            rest = after;
            break;
        }
    }
    Some((
        RefExpr {
            color,
            shape: shape.clone(),
            relation,
        },
        rest,
    ))
}

/// Every object the expression can denote: attributes match and, for a
/// relation, some object denoted by the sub-expression is in that direction.
pub fn denote(
    expr: &RefExpr,
    boxes: &[Proposal],
    attrs: &[ObjectAttributes],
    relation_graph: &GraphVariantConfig,
) -> Vec<usize> {
    let anchors = expr
        .relation
        .as_ref()
        .map(|(rel, sub)| (*rel, denote(sub, boxes, attrs, relation_graph)));
    (0..boxes.len())
        .filter(|&i| attrs[i].shape == expr.shape && expr.color.as_ref().is_none_or(|c| &attrs[i].color == c))
        .filter(|&i| match &anchors {
            None => true,
            Some((rel, set)) => set.iter().any(|&j| {
                j != i
                    && classify_spatial_relation(&boxes[i], &boxes[j], relation_graph)
                        .map(|r| r == *rel)
                        .unwrap_or(false)
            }),
        })
        .collect()
}

/// The unique referent of `tokens`, if there is exactly one.
pub fn resolve(
    tokens: &[String],
    boxes: &[Proposal],
    attrs: &[ObjectAttributes],
    colors: &[String],
    shapes: &[String],
    relation_graph: &GraphVariantConfig,
) -> Option<usize> {
    let expr = parse_expression(tokens, colors, shapes)?;
    match denote(&expr, boxes, attrs, relation_graph).as_slice() {
        [only] => Some(*only),
        _ => None,
    }
}
