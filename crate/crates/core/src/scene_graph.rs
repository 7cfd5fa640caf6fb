//! Spatial relation graphs over object proposals.
//!
//! Every ordered pair of proposals `(i, j)` gets a relation describing `o_i`
//! relative to `o_j`: containment first, then coverage, then overlap, then
//! the connectivity cut, then one of eight 45-degree direction sectors.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

/// Boxes may poke this far outside the unit square.
pub const BORDER_TOLERANCE: f64 = 0.05;
const CONTAINMENT_TOLERANCE: f64 = 1e-9;
/// Diagonal of the unit square; distances are in normalized coordinates.
const IMAGE_DIAGONAL: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid proposal box {0:?}")]
    InvalidBox([f64; 4]),
    #[error("degenerate box (zero area)")]
    Degenerate,
    #[error("a scene needs at least one proposal")]
    Empty,
    #[error("invalid graph variant: {0}")]
    Variant(String),
    #[error("detection {index}: {reason}")]
    Detection { index: usize, reason: String },
    #[error("edge matrix does not match {0} proposals")]
    EdgeShape(usize),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// A candidate object: normalized center/extent plus its visual feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProposalRecord", into = "ProposalRecord")]
pub struct Proposal {
    pub center_x: f64,
    pub center_y: f64,
    pub width: f64,
    pub height: f64,
    pub feature: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ProposalRecord {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    feature: Vec<f64>,
}

impl TryFrom<ProposalRecord> for Proposal {
    type Error = SceneError;

    fn try_from(r: ProposalRecord) -> Result<Self, Self::Error> {
        let [x, y, w, h] = r.bbox;
        Proposal::new(x, y, w, h, r.feature)
    }
}

impl From<Proposal> for ProposalRecord {
    fn from(p: Proposal) -> Self {
        ProposalRecord {
            bbox: [p.center_x, p.center_y, p.width, p.height],
            feature: p.feature,
        }
    }
}

impl Proposal {
    pub fn new(center_x: f64, center_y: f64, width: f64, height: f64, feature: Vec<f64>) -> Result<Self, SceneError> {
        let p = Proposal {
            center_x,
            center_y,
            width,
            height,
            feature,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let b = self.bbox();
        let lo = -BORDER_TOLERANCE;
        let hi = 1.0 + BORDER_TOLERANCE;
        let ok = b.iter().all(|v| v.is_finite())
            && self.width > 0.0
            && self.height > 0.0
            && self.width <= 1.0
            && self.height <= 1.0
            && self.left() >= lo
            && self.right() <= hi
            && self.top() >= lo
            && self.bottom() <= hi
            && self.feature.iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SceneError::InvalidBox(b))
        }
    }

    pub fn bbox(&self) -> [f64; 4] {
        [self.center_x, self.center_y, self.width, self.height]
    }

    pub fn left(&self) -> f64 {
        self.center_x - self.width / 2.0
    }

    pub fn right(&self) -> f64 {
        self.center_x + self.width / 2.0
    }

    pub fn top(&self) -> f64 {
        self.center_y - self.height / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.center_y + self.height / 2.0
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// True when `other` lies within `self` (up to a 1e-9 slack per side).
    pub fn includes(&self, other: &Proposal) -> bool {
        other.left() >= self.left() - CONTAINMENT_TOLERANCE
            && other.right() <= self.right() + CONTAINMENT_TOLERANCE
            && other.top() >= self.top() - CONTAINMENT_TOLERANCE
            && other.bottom() <= self.bottom() + CONTAINMENT_TOLERANCE
    }

    pub fn center_distance(&self, other: &Proposal) -> f64 {
        (self.center_x - other.center_x).hypot(self.center_y - other.center_y)
    }
}

pub fn iou(a: &Proposal, b: &Proposal) -> f64 {
    let iw = (a.right().min(b.right()) - a.left().max(b.left())).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.top().max(b.top())).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// `[x, y, w, h, w*h]`.
pub fn spatial_feature(p: &Proposal) -> [f64; 5] {
    [p.center_x, p.center_y, p.width, p.height, p.width * p.height]
}

/// Relation of `o_i` with respect to `o_j`. Discriminants are the edge labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[repr(u8)]
pub enum SpatialRelation {
    None = 0,
    Right = 1,
    TopRight = 2,
    Top = 3,
    TopLeft = 4,
    Left = 5,
    BottomLeft = 6,
    Bottom = 7,
    BottomRight = 8,
    Inside = 9,
    Cover = 10,
    Overlap = 11,
}

impl SpatialRelation {
    pub const DIRECTIONS: [SpatialRelation; 8] = [
        SpatialRelation::Right,
        SpatialRelation::TopRight,
        SpatialRelation::Top,
        SpatialRelation::TopLeft,
        SpatialRelation::Left,
        SpatialRelation::BottomLeft,
        SpatialRelation::Bottom,
        SpatialRelation::BottomRight,
    ];

    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn from_label(label: u8) -> Option<Self> {
        use SpatialRelation::*;
        Some(match label {
            0 => None,
            9 => Inside,
            10 => Cover,
            11 => Overlap,
            1..=8 => Self::DIRECTIONS[label as usize - 1],
            _ => return Option::None,
        })
    }

    /// Relation of `o_j` w.r.t. `o_i` given this relation of `o_i` w.r.t. `o_j`.
    pub fn inverse(self) -> Self {
        use SpatialRelation::*;
        match self {
            None => None,
            Overlap => Overlap,
            Inside => Cover,
            Cover => Inside,
            d => Self::DIRECTIONS[(d.label() as usize - 1 + 4) % 8],
        }
    }

    pub fn is_directional(self) -> bool {
        (1..=8).contains(&self.label())
    }

    pub fn name(self) -> &'static str {
        use SpatialRelation::*;
        match self {
            None => "none",
            Right => "right",
            TopRight => "top-right",
            Top => "top",
            TopLeft => "top-left",
            Left => "left",
            BottomLeft => "bottom-left",
            Bottom => "bottom",
            BottomRight => "bottom-right",
            Inside => "inside",
            Cover => "cover",
            Overlap => "overlap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeDesign {
    /// 8 directions + inside/cover/overlap.
    Type11,
    /// 4 directions + inside/cover/overlap.
    Type7,
    /// Offset/area-ratio vectors instead of labels.
    Soft,
}

impl EdgeDesign {
    /// Number of discrete edge labels (excluding 0); 0 for [`EdgeDesign::Soft`].
    pub fn num_types(self) -> usize {
        match self {
            EdgeDesign::Type11 => 11,
            EdgeDesign::Type7 => 7,
            EdgeDesign::Soft => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeDesign::Type11 => "type11",
            EdgeDesign::Type7 => "type7",
            EdgeDesign::Soft => "soft",
        }
    }
}

/// Condition for an edge to exist between two proposals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum Connectivity {
    /// No edge when center distance / image diagonal exceeds the threshold.
    CenterDistance(f64),
    /// Edge only when both axis offsets are below the fraction.
    AxisDistance(f64),
    /// Each vertex keeps out-edges to its `n` nearest neighbors.
    EdgeNumber(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphVariantConfig {
    pub edge_design: EdgeDesign,
    pub connectivity: Connectivity,
}

impl Default for GraphVariantConfig {
    fn default() -> Self {
        Self {
            edge_design: EdgeDesign::Type11,
            connectivity: Connectivity::CenterDistance(0.5),
        }
    }
}

impl GraphVariantConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        match self.connectivity {
            Connectivity::CenterDistance(t) if !(t > 0.0 && t <= IMAGE_DIAGONAL) => {
                Err(SceneError::Variant(format!("center distance threshold {t} outside (0, sqrt 2]")))
            }
            Connectivity::AxisDistance(f) if !(f > 0.0 && f <= 1.0) => {
                Err(SceneError::Variant(format!("axis distance fraction {f} outside (0, 1]")))
            }
            Connectivity::EdgeNumber(0) => Err(SceneError::Variant("max out-degree must be >= 1".into())),
            _ => Ok(()),
        }
    }

    /// Parses the compact names used on the command line, e.g.
    /// `type11+center-dis(0.5)`, `type7+axis-dis(0.15)`, `soft+edge-num(5)`.
    pub fn parse(s: &str) -> Result<Self, SceneError> {
        let bad = || SceneError::Variant(format!("cannot parse graph variant {s:?}"));
        let (design, conn) = s.split_once('+').ok_or_else(bad)?;
        let edge_design = match design.trim() {
            "type11" => EdgeDesign::Type11,
            "type7" => EdgeDesign::Type7,
            "soft" => EdgeDesign::Soft,
            _ => return Err(bad()),
        };
        let conn = conn.trim();
        let open = conn.find('(').ok_or_else(bad)?;
        let arg = conn[open + 1..].strip_suffix(')').ok_or_else(bad)?;
        let connectivity = match &conn[..open] {
            "center-dis" => Connectivity::CenterDistance(arg.parse().map_err(|_| bad())?),
            "axis-dis" => Connectivity::AxisDistance(arg.parse().map_err(|_| bad())?),
            "edge-num" => Connectivity::EdgeNumber(arg.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        let cfg = Self {
            edge_design,
            connectivity,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// 45-degree sector index (0 = right, counter-clockwise) of a displacement.
/// Boundary angles go to the counter-clockwise sector. Opposite
/// displacements always land exactly four sectors apart.
fn direction_sector(dx: f64, dy_up: f64) -> usize {
    let upper = dy_up > 0.0 || (dy_up == 0.0 && dx > 0.0);
    let (x, y) = if upper { (dx, dy_up) } else { (-dx, -dy_up) };
    let theta = y.atan2(x).to_degrees(); // in [0, 180]
    let sector = (((theta + 22.5) / 45.0).floor() as usize) % 8;
    if upper {
        sector
    } else {
        (sector + 4) % 8
    }
}

/// Full 11-way relation of `a` (= o_i) relative to `b` (= o_j).
pub fn classify_spatial_relation(
    a: &Proposal,
    b: &Proposal,
    cfg: &GraphVariantConfig,
) -> Result<SpatialRelation, SceneError> {
    if !(a.area() > 0.0 && b.area() > 0.0) {
        return Err(SceneError::Degenerate);
    }
    let a_in_b = b.includes(a);
    let b_in_a = a.includes(b);
    // identical boxes include each other; they are treated as overlapping
    if b_in_a && !a_in_b {
        return Ok(SpatialRelation::Inside);
    }
    if a_in_b && !b_in_a {
        return Ok(SpatialRelation::Cover);
    }
    if (a_in_b && b_in_a) || iou(a, b) > 0.5 {
        return Ok(SpatialRelation::Overlap);
    }
    let dx = a.center_x - b.center_x;
    let dy = a.center_y - b.center_y;
    let connected = match cfg.connectivity {
        Connectivity::CenterDistance(t) => dx.hypot(dy) / IMAGE_DIAGONAL <= t,
        Connectivity::AxisDistance(f) => dx.abs() < f && dy.abs() < f,
        Connectivity::EdgeNumber(_) => true,
    };
    if !connected {
        return Ok(SpatialRelation::None);
    }
    if dx == 0.0 && dy == 0.0 {
        // concentric, neither contains the other: no direction exists
        return Ok(SpatialRelation::Overlap);
    }
    // image y grows downward
    Ok(SpatialRelation::DIRECTIONS[direction_sector(dx, -dy)])
}

/// Edge label of a relation under an edge design.
///
/// `type7` merges each diagonal into its clockwise axis neighbour
/// (top-right -> right, top-left -> top, ...), keeping opposite directions
/// opposite.
pub fn edge_label(rel: SpatialRelation, design: EdgeDesign) -> u8 {
    match design {
        EdgeDesign::Type11 => rel.label(),
        EdgeDesign::Soft => u8::from(rel != SpatialRelation::None),
        EdgeDesign::Type7 => match rel {
            SpatialRelation::None => 0,
            SpatialRelation::Inside => 5,
            SpatialRelation::Cover => 6,
            SpatialRelation::Overlap => 7,
            d => (d.label() - 1) / 2 + 1,
        },
    }
}

/// Relative location of `target` seen from `source`: offsets of the target's
/// corners normalized by the source extent, plus the area ratio.
pub fn soft_edge_feature(source: &Proposal, target: &Proposal) -> [f64; 5] {
    [
        (target.left() - source.center_x) / source.width,
        (target.top() - source.center_y) / source.height,
        (target.right() - source.center_x) / source.width,
        (target.bottom() - source.center_y) / source.height,
        target.area() / source.area(),
    ]
}

/// Externally detected relation between two proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticDetection {
    pub i: usize,
    pub j: usize,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    pub proposals: Vec<Proposal>,
    /// `edge_labels[i][j]` is the label of the edge `i -> j`; 0 means no edge.
    pub edge_labels: Vec<Vec<u8>>,
    pub spatial_features: Vec<[f64; 5]>,
    pub variant: GraphVariantConfig,
    /// Present for the soft design: `soft_features[i][j]` for each edge.
    pub soft_features: Option<Vec<Vec<[f64; 5]>>>,
}

impl SceneGraph {
    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }

    /// Directed edges `(i, j, label)` with non-zero label, row-major.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, u8)> + '_ {
        self.edge_labels
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().filter(|(_, &l)| l > 0).map(move |(j, &l)| (i, j, l)))
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// Replaces every label; the variant must match the labels.
    pub fn with_edge_labels(mut self, labels: Vec<Vec<u8>>) -> Result<Self, SceneError> {
        let k = self.len();
        if labels.len() != k || labels.iter().any(|r| r.len() != k) {
            return Err(SceneError::EdgeShape(k));
        }
        self.edge_labels = labels;
        Ok(self)
    }
}

pub fn build_spatial_graph(proposals: &[Proposal], cfg: &GraphVariantConfig) -> Result<SceneGraph, SceneError> {
    if proposals.is_empty() {
        return Err(SceneError::Empty);
    }
    cfg.validate()?;
    for p in proposals {
        p.validate()?;
    }
    let k = proposals.len();
    let mut labels = vec![vec![0u8; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                let rel = classify_spatial_relation(&proposals[i], &proposals[j], cfg)?;
                labels[i][j] = edge_label(rel, cfg.edge_design);
            }
        }
    }
    if let Connectivity::EdgeNumber(max_out) = cfg.connectivity {
        for (i, row) in labels.iter_mut().enumerate() {
            let mut others: Vec<usize> = (0..k).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| {
                let da = proposals[i].center_distance(&proposals[a]);
                let db = proposals[i].center_distance(&proposals[b]);
                da.total_cmp(&db).then(a.cmp(&b))
            });
            for &j in others.iter().skip(max_out) {
                row[j] = 0;
            }
        }
    }
    let soft_features = (cfg.edge_design == EdgeDesign::Soft).then(|| {
        (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        if labels[i][j] > 0 {
                            soft_edge_feature(&proposals[i], &proposals[j])
                        } else {
                            [0.0; 5]
                        }
                    })
                    .collect()
            })
            .collect()
    });
    Ok(SceneGraph {
        spatial_features: proposals.iter().map(spatial_feature).collect(),
        proposals: proposals.to_vec(),
        edge_labels: labels,
        variant: *cfg,
        soft_features,
    })
}

fn check_detections(k: usize, detections: &[SemanticDetection], categories: usize) -> Result<(), SceneError> {
    let mut seen = std::collections::HashSet::new();
    for (index, d) in detections.iter().enumerate() {
        let fail = |reason: String| Err(SceneError::Detection { index, reason });
        if d.i >= k || d.j >= k {
            return fail(format!("pair ({}, {}) out of range for {k} proposals", d.i, d.j));
        }
        if d.i == d.j {
            return fail(format!("self edge at {}", d.i));
        }
        if d.probs.len() != categories {
            return fail(format!("{} probabilities for {categories} categories", d.probs.len()));
        }
        if d.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return fail("probability outside [0, 1]".into());
        }
        if d.probs.iter().sum::<f64>() > 1.0 + 1e-6 {
            return fail("probabilities sum above 1".into());
        }
        if !seen.insert((d.i, d.j)) {
            return fail(format!("duplicate pair ({}, {})", d.i, d.j));
        }
    }
    Ok(())
}

/// Probability-weighted relation embeddings as a `[K, K, D_r]` tensor;
/// pairs without a detection stay zero.
pub fn ingest_semantic_edges(
    k: usize,
    detections: &[SemanticDetection],
    relation_embedding: &Tensor,
) -> Result<Tensor, SceneError> {
    let (cats, dim) = (relation_embedding.rows(), relation_embedding.cols());
    check_detections(k, detections, cats)?;
    let mut data = vec![0.0; k * k * dim];
    for d in detections {
        let out = &mut data[(d.i * k + d.j) * dim..(d.i * k + d.j + 1) * dim];
        for (c, &p) in d.probs.iter().enumerate() {
            for (o, &e) in out.iter_mut().zip(relation_embedding.row_slice(c)) {
                *o += p * e;
            }
        }
    }
    Ok(Tensor::new(vec![k, k, dim], data).expect("finite inputs"))
}

/// Validates detections against a scene of `k` proposals and `categories`
/// relation categories.
pub fn validate_detections(k: usize, detections: &[SemanticDetection], categories: usize) -> Result<(), SceneError> {
    check_detections(k, detections, categories)
}

/// Reads one `{"i", "j", "probs"}` record per non-empty line.
pub fn read_detections_jsonl(reader: impl BufRead) -> Result<Vec<SemanticDetection>, SceneError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| SceneError::Parse {
            line: n + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SceneError::Parse {
            line: n + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// JSON form: `{"proposals": [...], "edges": [[...]], "edge_design": "type11"}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SceneGraphJson {
    pub proposals: Vec<Proposal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<Vec<u8>>>,
    #[serde(default = "default_design")]
    pub edge_design: EdgeDesign,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connectivity: Option<Connectivity>,
}

fn default_design() -> EdgeDesign {
    EdgeDesign::Type11
}

impl From<&SceneGraph> for SceneGraphJson {
    fn from(g: &SceneGraph) -> Self {
        SceneGraphJson {
            proposals: g.proposals.clone(),
            edges: Some(g.edge_labels.clone()),
            edge_design: g.variant.edge_design,
            connectivity: Some(g.variant.connectivity),
        }
    }
}

impl SceneGraphJson {
    /// Rebuilds the graph; stored edges override the computed ones.
    pub fn into_graph(self) -> Result<SceneGraph, SceneError> {
        let variant = GraphVariantConfig {
            edge_design: self.edge_design,
            connectivity: self.connectivity.unwrap_or(Connectivity::CenterDistance(0.5)),
        };
        let graph = build_spatial_graph(&self.proposals, &variant)?;
        match self.edges {
            Some(e) => {
                let max = variant.edge_design.num_types().max(1) as u8;
                if e.iter().flatten().any(|&l| l > max) {
                    return Err(SceneError::Variant(format!("edge label above {max}")));
                }
                if e.iter().enumerate().any(|(i, r)| r.get(i).is_some_and(|&l| l != 0)) {
                    return Err(SceneError::Variant("self edge in edge matrix".into()));
                }
                graph.with_edge_labels(e)
            }
            None => Ok(graph),
        }
    }
}
