//! Synthetic relational scenes with templated referring expressions.

mod io;
mod resolver;

pub use io::{DataError, read_dataset, read_dataset_file, write_dataset, write_dataset_file, Dataset, DatasetHeader, DATASET_VERSION};
pub use resolver::{denote, parse_expression, relation_words, resolve, RefExpr, EXPRESSIBLE};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::language::ConstituencyNode;
use crate::scene_graph::{
    classify_spatial_relation, GraphVariantConfig, Proposal, SceneError, SemanticDetection, SpatialRelation,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator configuration: {0}")]
    Config(String),
    #[error("{k} objects do not fit a {grid}x{grid} grid")]
    Infeasible { k: usize, grid: usize },
    #[error("no valid order-{order} expression after {attempts} scenes")]
    Exhausted { order: u8, attempts: usize },
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSpec {
    pub name: String,
    /// Box side length in normalized units.
    pub extent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub grid: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub colors: Vec<String>,
    pub shapes: Vec<String>,
    pub sizes: Vec<SizeSpec>,
    /// Maximum center offset from the cell center.
    pub jitter: f64,
    pub noise: f64,
    pub d_x: usize,
    pub seed: u64,
    pub num_scenes: usize,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    /// Relative frequency of relation orders 0, 1 and 2.
    pub order_weights: [f64; 3],
    /// Share of order-2 samples where a distractor also satisfies the first relation.
    pub hard_fraction: f64,
    /// Predicate behind relation words.
    pub relation_graph: GraphVariantConfig,
    pub max_attempts: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let owned = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect();
        GeneratorConfig {
            grid: 4,
            k_min: 4,
            k_max: 8,
            colors: owned(&["red", "green", "blue", "yellow"]),
            shapes: owned(&["circle", "square", "triangle"]),
            sizes: vec![
                SizeSpec {
                    name: "small".into(),
                    extent: 0.10,
                },
                SizeSpec {
                    name: "large".into(),
                    extent: 0.16,
                },
            ],
            jitter: 0.03,
            noise: 0.01,
            d_x: 32,
            seed: 11,
            num_scenes: 3000,
            split: [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
            order_weights: [1.0, 1.0, 1.0],
            hard_fraction: 0.5,
            relation_graph: GraphVariantConfig::default(),
            max_attempts: 20_000,
        }
    }
}

/// Number of semantic relation categories emitted by the generator.
pub const SEMANTIC_CATEGORIES: usize = 4;

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.grid == 0 {
            return bad("grid must be positive".into());
        }
        if self.k_min < 2 || self.k_min > self.k_max {
            return bad(format!("need 2 <= k_min <= k_max, got {}..{}", self.k_min, self.k_max));
        }
        if self.k_max > self.grid * self.grid {
            return Err(SynthError::Infeasible {
                k: self.k_max,
                grid: self.grid,
            });
        }
        if self.colors.is_empty() || self.shapes.is_empty() || self.sizes.is_empty() {
            return bad("attribute vocabularies must be non-empty".into());
        }
        let mut words: Vec<&String> = self.colors.iter().chain(&self.shapes).collect();
        words.sort();
        if words.windows(2).any(|w| w[0] == w[1]) {
            return bad("colors and shapes must be distinct words".into());
        }
        let needed = self.colors.len() + self.shapes.len() + 3;
        if self.d_x < needed {
            return bad(format!("d_x = {} is below the {needed} feature slots", self.d_x));
        }
        let cell = 1.0 / self.grid as f64;
        for s in &self.sizes {
            if !(s.extent > 0.0 && s.extent + 2.0 * self.jitter <= cell) {
                return bad(format!("size {} does not fit a grid cell", s.name));
            }
        }
        if !(self.jitter >= 0.0 && self.noise >= 0.0) {
            return bad("jitter and noise must be non-negative".into());
        }
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {:?} must lie in [0, 1] and sum to 1", self.split));
        }
        if self.order_weights.iter().any(|w| w.is_nan() || *w < 0.0) || self.order_weights.iter().sum::<f64>() <= 0.0 {
            return bad("order weights must be non-negative with a positive sum".into());
        }
        if self.order_weights[1] > 0.0 && self.k_max < 3 || self.order_weights[2] > 0.0 && self.k_max < 5 {
            return bad("relation orders 1 and 2 need k_max >= 3 and >= 5".into());
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            return bad("hard_fraction must lie in [0, 1]".into());
        }
        if self.num_scenes == 0 || self.max_attempts == 0 {
            return bad("num_scenes and max_attempts must be positive".into());
        }
        self.relation_graph.validate()?;
        Ok(())
    }

    /// Scene counts for train, validation and test.
    pub fn split_counts(&self) -> [usize; 3] {
        let n = self.num_scenes;
        let train = (n as f64 * self.split[0]).round() as usize;
        let val = ((n as f64 * self.split[1]).round() as usize).min(n - train);
        [train, val, n - train - val]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectAttributes {
    pub color: String,
    pub shape: String,
    pub size: String,
}

/// A generated scene before any expression is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub proposals: Vec<Proposal>,
    pub attributes: Vec<ObjectAttributes>,
    pub semantic_edges: Vec<SemanticDetection>,
}

/// One expression–scene pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub scene_id: String,
    pub proposals: Vec<Proposal>,
    #[serde(default)]
    pub semantic_edges: Vec<SemanticDetection>,
    pub tokens: Vec<String>,
    pub tree: String,
    pub gt_index: usize,
    pub order: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<ObjectAttributes>>,
}

fn feature_vector(cfg: &GeneratorConfig, color: usize, shape: usize, size: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut f = vec![0.0; cfg.d_x];
    f[color] = 1.0;
    f[cfg.colors.len() + shape] = 1.0;
    let base = cfg.colors.len() + cfg.shapes.len();
    let largest = cfg.sizes.iter().map(|s| s.extent).fold(0.0, f64::max);
    let extent = cfg.sizes[size].extent;
    f[base] = extent / largest;
    f[base + 1] = extent;
    f[base + 2] = extent;
    if cfg.noise > 0.0 {
        let normal = Normal::new(0.0, cfg.noise).expect("valid sigma");
        for v in f.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    f
}

/// Places `k` objects in distinct grid cells with random attributes.
pub fn generate_scene(cfg: &GeneratorConfig, k: usize, rng: &mut impl Rng) -> Result<Scene, SynthError> {
    let cells = cfg.grid * cfg.grid;
    if k == 0 || k > cells {
        return Err(SynthError::Infeasible { k, grid: cfg.grid });
    }
    let cell = 1.0 / cfg.grid as f64;
    let chosen = rand::seq::index::sample(rng, cells, k).into_vec();
    let mut proposals = Vec::with_capacity(k);
    let mut attributes = Vec::with_capacity(k);
    let mut positions = Vec::with_capacity(k);
    for c in chosen {
        let (col, row) = (c % cfg.grid, c / cfg.grid);
        let color = rng.random_range(0..cfg.colors.len());
        let shape = rng.random_range(0..cfg.shapes.len());
        let size = rng.random_range(0..cfg.sizes.len());
        let jx = if cfg.jitter > 0.0 { rng.random_range(-cfg.jitter..=cfg.jitter) } else { 0.0 };
        let jy = if cfg.jitter > 0.0 { rng.random_range(-cfg.jitter..=cfg.jitter) } else { 0.0 };
        let extent = cfg.sizes[size].extent;
        let feature = feature_vector(cfg, color, shape, size, rng);
        proposals.push(Proposal::new(
            (col as f64 + 0.5) * cell + jx,
            (row as f64 + 0.5) * cell + jy,
            extent,
            extent,
            feature,
        )?);
        attributes.push(ObjectAttributes {
            color: cfg.colors[color].clone(),
            shape: cfg.shapes[shape].clone(),
            size: cfg.sizes[size].name.clone(),
        });
        positions.push((col as i64, row as i64));
    }
    // grid neighbours get a one-hot relation: 0 left-of, 1 right-of, 2 above, 3 below
    let mut semantic_edges = Vec::new();
    for i in 0..k {
        for j in 0..k {
            let (dc, dr) = (positions[i].0 - positions[j].0, positions[i].1 - positions[j].1);
            let cat = match (dc, dr) {
                (-1, 0) => 0,
                (1, 0) => 1,
                (0, -1) => 2,
                (0, 1) => 3,
                _ => continue,
            };
            let mut probs = vec![0.0; SEMANTIC_CATEGORIES];
            probs[cat] = 1.0;
            semantic_edges.push(SemanticDetection { i, j, probs });
        }
    }
    Ok(Scene {
        proposals,
        attributes,
        semantic_edges,
    })
}

/// Tokens of an expression in template order.
pub fn expression_tokens(expr: &RefExpr) -> Vec<String> {
    let mut out = vec!["the".to_string()];
    if let Some(c) = &expr.color {
        out.push(c.clone());
    }
    out.push(expr.shape.clone());
    if let Some((rel, sub)) = &expr.relation {
        out.extend(relation_words(*rel).expect("expressible relation").iter().map(|w| w.to_string()));
        out.extend(expression_tokens(sub));
    }
    out
}

/// Hand-built constituency tree matching [`expression_tokens`].
pub fn expression_tree(expr: &RefExpr) -> ConstituencyNode {
    let mut base = vec![ConstituencyNode::leaf("DT", "the")];
    if let Some(c) = &expr.color {
        base.push(ConstituencyNode::leaf("JJ", c.as_str()));
    }
    base.push(ConstituencyNode::leaf("NN", expr.shape.as_str()));
    let base = ConstituencyNode::internal("NP", base);
    let Some((rel, sub)) = &expr.relation else {
        return base;
    };
    let sub = expression_tree(sub);
    let modifier = match rel {
        SpatialRelation::Left | SpatialRelation::Right => ConstituencyNode::internal(
            "ADVP",
            vec![
                ConstituencyNode::leaf("RB", relation_words(*rel).unwrap()[0]),
                ConstituencyNode::internal("PP", vec![ConstituencyNode::leaf("IN", "of"), sub]),
            ],
        ),
        _ => ConstituencyNode::internal(
            "PP",
            vec![ConstituencyNode::leaf("IN", relation_words(*rel).unwrap()[0]), sub],
        ),
    };
    ConstituencyNode::internal("NP", vec![base, modifier])
}

fn relation(scene: &Scene, i: usize, j: usize, cfg: &GeneratorConfig) -> Option<SpatialRelation> {
    let r = classify_spatial_relation(&scene.proposals[i], &scene.proposals[j], &cfg.relation_graph).ok()?;
    EXPRESSIBLE.contains(&r).then_some(r)
}

fn count_where(scene: &Scene, f: impl Fn(&ObjectAttributes) -> bool) -> usize {
    scene.attributes.iter().filter(|a| f(a)).count()
}

/// Picks a target and an expression of the requested order whose only
/// referent is the target. Returns `None` when the scene admits none.
pub fn generate_expression(
    scene: &Scene,
    order: u8,
    hard: bool,
    cfg: &GeneratorConfig,
    rng: &mut impl Rng,
) -> Option<(usize, RefExpr)> {
    let k = scene.proposals.len();
    let attrs = &scene.attributes;
    let unique = |i: usize| count_where(scene, |a| a.color == attrs[i].color && a.shape == attrs[i].shape) == 1;
    let ambiguous = |i: usize| count_where(scene, |a| a.shape == attrs[i].shape) >= 2;
    let anchor_expr = |a: usize| RefExpr {
        color: Some(attrs[a].color.clone()),
        shape: attrs[a].shape.clone(),
        relation: None,
    };
    let only = |expr: &RefExpr, target: usize| {
        denote(expr, &scene.proposals, attrs, &cfg.relation_graph) == [target]
    };

    let mut options: Vec<(usize, RefExpr)> = Vec::new();
    match order {
        0 => {
            for t in 0..k {
                if unique(t) && ambiguous(t) {
                    options.push((t, anchor_expr(t)));
                }
            }
        }
        1 => {
            for a in (0..k).filter(|&a| unique(a)) {
                for t in (0..k).filter(|&t| t != a && ambiguous(t)) {
                    let Some(rel) = relation(scene, t, a, cfg) else { continue };
                    let expr = RefExpr {
                        color: None,
                        shape: attrs[t].shape.clone(),
                        relation: Some((rel, Box::new(anchor_expr(a)))),
                    };
                    if only(&expr, t) {
                        options.push((t, expr));
                    }
                }
            }
        }
        2 => {
            for a in (0..k).filter(|&a| unique(a)) {
                for m in (0..k).filter(|&m| m != a && ambiguous(m)) {
                    let Some(rel2) = relation(scene, m, a, cfg) else { continue };
                    for t in (0..k).filter(|&t| t != a && t != m && ambiguous(t)) {
                        let Some(rel1) = relation(scene, t, m, cfg) else { continue };
                        let expr = RefExpr {
                            color: None,
                            shape: attrs[t].shape.clone(),
                            relation: Some((
                                rel1,
                                Box::new(RefExpr {
                                    color: None,
                                    shape: attrs[m].shape.clone(),
                                    relation: Some((rel2, Box::new(anchor_expr(a)))),
                                }),
                            )),
                        };
                        if !only(&expr, t) {
                            continue;
                        }
                        // Decoys: same-shape distractors with a mediator-shaped object
                        // in the first direction. Hard samples need one whose object has
                        // no expressible relation to the anchor (one hop cannot separate
                        // it, two can); easy samples need none at all.
                        let mut any_decoy = false;
                        let mut strict_decoy = false;
                        for d in (0..k).filter(|&d| d != t && attrs[d].shape == attrs[t].shape) {
                            for m2 in (0..k).filter(|&m2| m2 != m && m2 != d && attrs[m2].shape == attrs[m].shape) {
                                if relation(scene, d, m2, cfg) == Some(rel1) {
                                    any_decoy = true;
                                    strict_decoy |= m2 != a && relation(scene, m2, a, cfg).is_none();
                                }
                            }
                        }
                        if (hard && strict_decoy) || (!hard && !any_decoy) {
                            options.push((t, expr));
                        }
                    }
                }
            }
        }
        _ => return None,
    }
    options.choose(rng).cloned()
}

/// Draws one sample of the given order from its own random stream.
pub fn generate_sample(cfg: &GeneratorConfig, index: usize) -> Result<Sample, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let total: f64 = cfg.order_weights.iter().sum();
    let mut pick = rng.random_range(0.0..total);
    let mut order = 2u8;
    for (o, w) in cfg.order_weights.iter().enumerate() {
        if pick < *w {
            order = o as u8;
            break;
        }
        pick -= w;
    }
    let hard = order == 2 && rng.random_bool(cfg.hard_fraction);
    let k_lo = match order {
        0 => cfg.k_min,
        1 => cfg.k_min.max(3),
        _ => cfg.k_min.max(5),
    };
    for _ in 0..cfg.max_attempts {
        let k = rng.random_range(k_lo..=cfg.k_max);
        let scene = generate_scene(cfg, k, &mut rng)?;
        if let Some((gt, expr)) = generate_expression(&scene, order, hard, cfg, &mut rng) {
            return Ok(Sample {
                scene_id: format!("scene-{index:06}"),
                tokens: expression_tokens(&expr),
                tree: expression_tree(&expr).to_string(),
                gt_index: gt,
                order,
                proposals: scene.proposals,
                semantic_edges: scene.semantic_edges,
                attributes: Some(scene.attributes),
            });
        }
    }
    Err(SynthError::Exhausted {
        order,
        attempts: cfg.max_attempts,
    })
}

/// Generates every scene and splits them into train, validation and test.
pub fn generate_splits(cfg: &GeneratorConfig) -> Result<[Vec<Sample>; 3], SynthError> {
    cfg.validate()?;
    let [train, val, _] = cfg.split_counts();
    let mut out: [Vec<Sample>; 3] = Default::default();
    for index in 0..cfg.num_scenes {
        let slot = if index < train {
            0
        } else if index < train + val {
            1
        } else {
            2
        };
        out[slot].push(generate_sample(cfg, index)?);
    }
    Ok(out)
}

/// Re-derives the referent of a sample with the symbolic resolver.
pub fn resolve_sample(sample: &Sample, cfg: &GeneratorConfig) -> Option<usize> {
    let attrs = sample.attributes.as_ref()?;
    resolve(&sample.tokens, &sample.proposals, attrs, &cfg.colors, &cfg.shapes, &cfg.relation_graph)
}

impl Sample {
    /// Converts to a model input under the given vocabulary and graph variant.
    pub fn to_example(
        &self,
        vocab: &crate::language::Vocabulary,
        stops: &crate::language::StopLists,
        graph: &GraphVariantConfig,
    ) -> Result<crate::training::Example, crate::model::ModelError> {
        let tree = crate::language::parse_bracketed_tree(&self.tree).map_err(crate::language::LanguageError::from)?;
        let input = crate::model::ModelInput::prepare(
            &self.proposals,
            &self.tokens,
            &tree,
            &self.semantic_edges,
            vocab,
            stops,
            graph,
        )?;
        Ok(crate::training::Example {
            input,
            gt: self.gt_index,
            order: self.order,
        })
    }
}
