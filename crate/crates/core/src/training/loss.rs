use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Tape, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Triplet,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mining {
    RandomHard,
    Hardest,
    #[serde(alias = "random-semi-hard")]
    SemiHard,
}

impl Mining {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random-hard" => Some(Mining::RandomHard),
            "hardest" => Some(Mining::Hardest),
            "semi-hard" | "random-semi-hard" => Some(Mining::SemiHard),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mining::RandomHard => "random-hard",
            Mining::Hardest => "hardest",
            Mining::SemiHard => "semi-hard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    pub margin: f64,
    pub negatives: usize,
    pub mining: Mining,
    /// Softmax temperature.
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Triplet,
            margin: 0.1,
            negatives: 1,
            mining: Mining::RandomHard,
            temperature: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.kind == LossKind::Triplet && !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(format!("triplet margin must be positive, got {}", self.margin));
        }
        if !(1..=2).contains(&self.negatives) {
            return Err(format!("negatives must be 1 or 2, got {}", self.negatives));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(format!("temperature must be positive, got {}", self.temperature));
        }
        Ok(())
    }
}

/// Proposals other than `gt` with `s_j + margin - s_gt > 0`.
pub fn hard_negative_set(scores: &[f64], gt: usize, margin: f64) -> Vec<usize> {
    (0..scores.len())
        .filter(|&j| j != gt && scores[j] + margin - scores[gt] > 0.0)
        .collect()
}

/// Hard negatives that still score below the ground truth.
pub fn semi_hard_set(scores: &[f64], gt: usize, margin: f64) -> Vec<usize> {
    hard_negative_set(scores, gt, margin)
        .into_iter()
        .filter(|&j| scores[j] < scores[gt])
        .collect()
}

/// Picks up to `cfg.negatives` indices by the configured strategy. Empty
/// when no proposal violates the margin.
pub fn mine_negatives(scores: &[f64], gt: usize, cfg: &LossConfig, rng: &mut impl Rng) -> Vec<usize> {
    let hard = hard_negative_set(scores, gt, cfg.margin);
    if hard.is_empty() {
        return hard;
    }
    let n = cfg.negatives.min(hard.len());
    match cfg.mining {
        Mining::Hardest => {
            let mut sorted = hard;
            // descending score, lower index first on ties
            sorted.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            sorted.truncate(n);
            sorted
        }
        Mining::RandomHard => hard.choose_multiple(rng, n).copied().collect(),
        Mining::SemiHard => {
            let semi = semi_hard_set(scores, gt, cfg.margin);
            let pool = if semi.is_empty() { hard } else { semi };
            let n = cfg.negatives.min(pool.len());
            pool.choose_multiple(rng, n).copied().collect()
        }
    }
}

/// `Σ max(s_neg + margin - s_gt, 0)`.
pub fn triplet_loss(s_gt: f64, negatives: &[f64], margin: f64) -> f64 {
    negatives.iter().map(|&s| (s + margin - s_gt).max(0.0)).sum()
}

/// `-log softmax(scores / temperature)[gt]`, computed stably.
pub fn softmax_loss(scores: &[f64], gt: usize, temperature: f64) -> f64 {
    let z: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - z[gt]
}

/// Loss node for one sample's `[K, 1]` scores, or `None` when mining finds
/// no violating negative.
pub fn sample_loss(
    tape: &mut Tape,
    scores: Var,
    gt: usize,
    cfg: &LossConfig,
    rng: &mut impl Rng,
) -> Result<Option<Var>, TensorError> {
    let values = tape.value(scores).data().to_vec();
    match cfg.kind {
        LossKind::Triplet => {
            let negs = mine_negatives(&values, gt, cfg, rng);
            if negs.is_empty() {
                return Ok(None);
            }
            let s_gt = tape.slice(scores, 0, gt, gt + 1)?;
            let mut total: Option<Var> = None;
            for j in negs {
                let s_j = tape.slice(scores, 0, j, j + 1)?;
                let d = tape.sub(s_j, s_gt)?;
                let d = tape.add_scalar(d, cfg.margin)?;
                let hinge = tape.relu(d)?;
                total = Some(match total {
                    None => hinge,
                    Some(t) => tape.add(t, hinge)?,
                });
            }
            let total = total.expect("non-empty");
            Ok(Some(tape.sum(total, None)?))
        }
        LossKind::Softmax => {
            let k = values.len();
            let z = tape.scale(scores, 1.0 / cfg.temperature)?;
            let z = tape.reshape(z, &[1, k])?;
            let p = tape.softmax(z, 1)?;
            let p_gt = tape.slice(p, 1, gt, gt + 1)?;
            let lp = tape.log(p_gt)?;
            let lp = tape.scale(lp, -1.0)?;
            Ok(Some(tape.sum(lp, None)?))
        }
    }
}
