use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::language::MAX_LENGTH;
use crate::params::ParamStore;
use crate::scene_graph::{EdgeDesign, GraphVariantConfig};

use super::ModelError;

/// Which relation graphs feed the scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Spatial,
    Semantic,
    Both,
}

impl Branch {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "spatial" => Some(Branch::Spatial),
            "semantic" => Some(Branch::Semantic),
            "both" => Some(Branch::Both),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::Spatial => "spatial",
            Branch::Semantic => "semantic",
            Branch::Both => "both",
        }
    }

    pub(crate) fn parts(self) -> &'static [BranchKind] {
        match self {
            Branch::Spatial => &[BranchKind::Spatial],
            Branch::Semantic => &[BranchKind::Semantic],
            Branch::Both => &[BranchKind::Spatial, BranchKind::Semantic],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BranchKind {
    Spatial,
    Semantic,
}

impl BranchKind {
    pub(crate) fn prefix(self) -> &'static str {
        match self {
            BranchKind::Spatial => "spatial",
            BranchKind::Semantic => "semantic",
        }
    }
}

/// How a branch's edges are typed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeMode {
    /// Discrete labels `1..=n`.
    Typed(usize),
    /// A feature vector of the given width per edge.
    Features(usize),
}

/// Model dimensions and structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperConfig {
    pub d_x: usize,
    pub d_f: usize,
    pub d_h: usize,
    pub d_n: usize,
    pub d_l0: usize,
    pub d_e0: usize,
    pub d_e: usize,
    pub d_p: usize,
    pub d_s: usize,
    /// Width of the relation-category embedding (semantic branch).
    pub d_r: usize,
    /// Number of semantic relation categories.
    pub relation_categories: usize,
    /// Number of gated graph convolution layers; 0 disables context propagation.
    pub layers: usize,
    pub graph: GraphVariantConfig,
    pub branch: Branch,
    pub max_length: usize,
    pub seed: u64,
}

impl Default for HyperConfig {
    fn default() -> Self {
        HyperConfig {
            d_x: 32,
            d_f: 64,
            d_h: 64,
            d_n: 64,
            d_l0: 64,
            d_e0: 64,
            d_e: 64,
            d_p: 16,
            d_s: 64,
            d_r: 16,
            relation_categories: 4,
            layers: 2,
            graph: GraphVariantConfig::default(),
            branch: Branch::Spatial,
            max_length: MAX_LENGTH,
            seed: 7,
        }
    }
}

impl HyperConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("d_x", self.d_x),
            ("d_f", self.d_f),
            ("d_h", self.d_h),
            ("d_n", self.d_n),
            ("d_l0", self.d_l0),
            ("d_e0", self.d_e0),
            ("d_e", self.d_e),
            ("d_p", self.d_p),
            ("d_s", self.d_s),
            ("d_r", self.d_r),
            ("relation_categories", self.relation_categories),
            ("max_length", self.max_length),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_h.is_multiple_of(2) {
            return Err(ModelError::Config("d_h must be even (two LSTM halves)".into()));
        }
        self.graph.validate().map_err(|e| ModelError::Config(e.to_string()))?;
        Ok(())
    }

    /// Number of edge types of the spatial graph (0 for soft edges).
    pub fn num_edge_types(&self) -> usize {
        self.graph.edge_design.num_types()
    }

    pub(crate) fn edge_mode(&self, kind: BranchKind) -> EdgeMode {
        match (kind, self.graph.edge_design) {
            (BranchKind::Semantic, _) => EdgeMode::Features(self.d_r),
            (BranchKind::Spatial, EdgeDesign::Soft) => EdgeMode::Features(5),
            (BranchKind::Spatial, d) => EdgeMode::Typed(d.num_types()),
        }
    }

    /// Width of the per-vertex context entering the scoring head.
    pub fn context_width(&self) -> usize {
        if self.layers == 0 {
            self.d_x + self.d_h
        } else {
            self.d_e
        }
    }
}

/// Every learnable tensor of the model together with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub config: HyperConfig,
    pub vocab_size: usize,
    pub store: ParamStore,
}

impl ModelParameters {
    /// Seeded initialization; every weight is uniform in ±1/sqrt(fan_in).
    pub fn init(config: &HyperConfig, vocab_size: usize) -> Result<Self, ModelError> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(ModelError::Config("vocabulary must contain the unknown slot".into()));
        }
        let c = config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut s = ParamStore::new();
        let half = c.d_h / 2;

        s.init_uniform("embedding", &[vocab_size, c.d_f], 1, &mut rng);
        for dir in ["lstm.fwd", "lstm.bwd"] {
            s.init_uniform(format!("{dir}.w_x"), &[c.d_f, 4 * half], half, &mut rng);
            s.init_uniform(format!("{dir}.w_h"), &[half, 4 * half], half, &mut rng);
            s.init_uniform(format!("{dir}.b"), &[1, 4 * half], half, &mut rng);
        }
        s.init_uniform("word_type.w0", &[c.d_h, c.d_l0], c.d_h, &mut rng);
        s.init_uniform("word_type.b0", &[1, c.d_l0], c.d_h, &mut rng);
        s.init_uniform("word_type.w1", &[c.d_l0, 4], c.d_l0, &mut rng);
        s.init_uniform("word_type.b1", &[1, 4], c.d_l0, &mut rng);
        for att in ["word_attn", "phrase_attn"] {
            s.init_uniform(format!("{att}.w_v"), &[c.d_x, c.d_n], c.d_x, &mut rng);
            s.init_uniform(format!("{att}.w_f"), &[c.d_f, c.d_n], c.d_f, &mut rng);
            s.init_uniform(format!("{att}.w_n"), &[c.d_n, 1], c.d_n, &mut rng);
        }

        for &kind in c.branch.parts() {
            let b = kind.prefix();
            let mode = c.edge_mode(kind);
            if kind == BranchKind::Semantic {
                s.init_uniform(format!("{b}.relation_embedding"), &[c.relation_categories, c.d_r], 1, &mut rng);
            }
            if c.layers > 0 {
                match mode {
                    EdgeMode::Typed(n_e) => {
                        s.init_uniform(format!("{b}.edge_type.w0"), &[c.d_h, c.d_e0], c.d_h, &mut rng);
                        s.init_uniform(format!("{b}.edge_type.b0"), &[1, c.d_e0], c.d_h, &mut rng);
                        s.init_uniform(format!("{b}.edge_type.w1"), &[c.d_e0, n_e], c.d_e0, &mut rng);
                        s.init_uniform(format!("{b}.edge_type.b1"), &[1, n_e], c.d_e0, &mut rng);
                    }
                    EdgeMode::Features(width) => {
                        s.init_uniform(format!("{b}.edge_attn.w_r"), &[width, c.d_n], width, &mut rng);
                        s.init_uniform(format!("{b}.edge_attn.w_h"), &[c.d_h, c.d_n], c.d_h, &mut rng);
                        s.init_uniform(format!("{b}.edge_attn.w_n"), &[c.d_n, 1], c.d_n, &mut rng);
                    }
                }
            }
            for n in 1..=c.layers {
                let input = if n == 1 { c.d_x + c.d_h } else { c.d_e };
                let l = format!("{b}.ggcn{n}");
                s.init_uniform(format!("{l}.w_out"), &[input, c.d_e], input, &mut rng);
                s.init_uniform(format!("{l}.w_in"), &[input, c.d_e], input, &mut rng);
                s.init_uniform(format!("{l}.w_self"), &[input, c.d_e], input, &mut rng);
                s.init_uniform(format!("{l}.b_self"), &[1, c.d_e], input, &mut rng);
                match mode {
                    EdgeMode::Typed(n_e) => s.init_uniform(format!("{l}.edge_bias"), &[n_e, c.d_e], input, &mut rng),
                    EdgeMode::Features(width) => {
                        s.init_uniform(format!("{l}.edge_bias_w"), &[width, c.d_e], width, &mut rng);
                        s.init_uniform(format!("{l}.edge_bias_b"), &[1, c.d_e], width, &mut rng);
                    }
                }
            }
            let ctx = c.d_p + c.context_width();
            s.init_uniform(format!("{b}.w_p"), &[5, c.d_p], 5, &mut rng);
            s.init_uniform(format!("{b}.w_s0"), &[ctx, c.d_s], ctx, &mut rng);
            s.init_uniform(format!("{b}.w_s1"), &[c.d_h, c.d_s], c.d_h, &mut rng);
        }
        Ok(ModelParameters {
            config: config.clone(),
            vocab_size,
            store: s,
        })
    }

    /// Checks every tensor against the shapes implied by the configuration.
    pub fn validate_shapes(&self) -> Result<(), ModelError> {
        let reference = ModelParameters::init(&self.config, self.vocab_size)?;
        if reference.store.names() != self.store.names() {
            return Err(ModelError::Config(format!(
                "parameter set {:?} does not match configuration {:?}",
                self.store.names(),
                reference.store.names()
            )));
        }
        for (name, t) in reference.store.iter() {
            let got = self.store.get(name).expect("same names");
            if got.shape() != t.shape() {
                return Err(ModelError::Config(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}
