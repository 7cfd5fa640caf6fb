use crate::params::BoundParams;
use crate::tensor::{Tape, Tensor, Var};

use super::LanguageError;

pub(crate) const EMBEDDING: &str = "embedding";
pub(crate) const LSTM_DIRECTIONS: [&str; 2] = ["lstm.fwd", "lstm.bwd"];
pub(crate) const WORD_TYPE: &str = "word_type";

/// Tape handles for one encoded expression.
#[derive(Debug, Clone)]
pub struct EncodedExpression {
    pub tokens: Vec<String>,
    pub ids: Vec<usize>,
    /// Member word indices of each valid noun phrase.
    pub phrases: Vec<Vec<usize>>,
    /// `[T, D_f]`
    pub embeddings: Var,
    /// `[T, D_h]`, forward half first.
    pub contexts: Var,
    /// `[T, 4]` over entity, relation, absolute location, unnecessary.
    pub type_weights: Var,
    /// `[M, D_f]`, absent when there are no phrases.
    pub phrase_features: Option<Var>,
    /// `[M, D_h]`
    pub phrase_contexts: Option<Var>,
}

impl EncodedExpression {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_phrases(&self) -> usize {
        self.phrases.len()
    }
}

/// `[M, T]` matrix whose rows average each phrase's member words.
pub fn phrase_average_matrix(phrases: &[Vec<usize>], len: usize) -> Result<Tensor, LanguageError> {
    let mut data = vec![0.0; phrases.len() * len];
    for (m, members) in phrases.iter().enumerate() {
        for &w in members {
            if w >= len {
                return Err(LanguageError::PhraseIndex { index: w, len });
            }
            data[m * len + w] = 1.0 / members.len() as f64;
        }
    }
    Ok(Tensor::new(vec![phrases.len(), len], data)?)
}

/// One direction of a standard LSTM over the rows of `inputs`; returns the
/// hidden states `[T, H]` in input order.
fn lstm_pass(tape: &mut Tape, params: &BoundParams, prefix: &str, projected: Var, reverse: bool) -> Result<Var, LanguageError> {
    let w_h = params.var(&format!("{prefix}.w_h"));
    let hidden = tape.shape(w_h)[0];
    let steps = tape.shape(projected)[0];
    let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
    let mut c = tape.constant(Tensor::zeros(&[1, hidden]));
    let mut states = vec![h; steps];
    let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
    for t in order {
        let x = tape.slice(projected, 0, t, t + 1)?;
        let rec = tape.matmul(h, w_h)?;
        let gates = tape.add(x, rec)?;
        let i = tape.slice(gates, 1, 0, hidden)?;
        let i = tape.sigmoid(i)?;
        let f = tape.slice(gates, 1, hidden, 2 * hidden)?;
        let f = tape.sigmoid(f)?;
        let g = tape.slice(gates, 1, 2 * hidden, 3 * hidden)?;
        let g = tape.tanh(g)?;
        let o = tape.slice(gates, 1, 3 * hidden, 4 * hidden)?;
        let o = tape.sigmoid(o)?;
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        c = tape.add(keep, write)?;
        let squashed = tape.tanh(c)?;
        h = tape.mul(o, squashed)?;
        states[t] = h;
    }
    Ok(tape.concat(&states, 0)?)
}

/// Softmax over the 4 word types from a two-layer head on `contexts` `[T, D_h]`.
pub fn word_type_weights(tape: &mut Tape, params: &BoundParams, contexts: Var) -> Result<Var, LanguageError> {
    let w0 = params.var(&format!("{WORD_TYPE}.w0"));
    let b0 = params.var(&format!("{WORD_TYPE}.b0"));
    let w1 = params.var(&format!("{WORD_TYPE}.w1"));
    let b1 = params.var(&format!("{WORD_TYPE}.b1"));
    let z = tape.matmul(contexts, w0)?;
    let z = tape.add(z, b0)?;
    let z = tape.relu(z)?;
    let z = tape.matmul(z, w1)?;
    let z = tape.add(z, b1)?;
    Ok(tape.softmax(z, 1)?)
}

/// Embeds `ids`, runs the bidirectional LSTM, the word-type head, and
/// averages phrase members.
pub fn encode_expression(
    tape: &mut Tape,
    params: &BoundParams,
    tokens: &[String],
    ids: &[usize],
    phrases: &[Vec<usize>],
    max_length: usize,
) -> Result<EncodedExpression, LanguageError> {
    if ids.is_empty() {
        return Err(LanguageError::EmptyExpression);
    }
    if ids.len() > max_length {
        return Err(LanguageError::TooLong {
            len: ids.len(),
            max: max_length,
        });
    }
    let table = params.var(EMBEDDING);
    let embeddings = tape.gather_rows(table, ids)?;

    let mut halves = Vec::with_capacity(2);
    for (d, prefix) in LSTM_DIRECTIONS.iter().enumerate() {
        let w_x = params.var(&format!("{prefix}.w_x"));
        let b = params.var(&format!("{prefix}.b"));
        let projected = tape.matmul(embeddings, w_x)?;
        let projected = tape.add(projected, b)?;
        halves.push(lstm_pass(tape, params, prefix, projected, d == 1)?);
    }
    let contexts = tape.concat(&halves, 1)?;
    let type_weights = word_type_weights(tape, params, contexts)?;

    let (phrase_features, phrase_contexts) = if phrases.is_empty() {
        (None, None)
    } else {
        let avg = tape.constant(phrase_average_matrix(phrases, ids.len())?);
        (Some(tape.matmul(avg, embeddings)?), Some(tape.matmul(avg, contexts)?))
    };
    Ok(EncodedExpression {
        tokens: tokens.to_vec(),
        ids: ids.to_vec(),
        phrases: phrases.to_vec(),
        embeddings,
        contexts,
        type_weights,
        phrase_features,
        phrase_contexts,
    })
}
