//! Browser bindings for the chatmt demo page.
//!
//! Each operation has a plain Rust function returning JSON (tested
//! natively) and a thin `#[wasm_bindgen]` wrapper.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use chatmt::attention::reference::random_matrix;
use chatmt::attention::{talking_heads_scores, Matrix};
use chatmt::bsce::{select_ensemble, ScoreSet};
use chatmt::chatprep::{prepare_corpus, ContextConfig, ContextMode};
use chatmt::corpus::{parse_chat, BitextRecord};
use chatmt::denoise::{denoise_corpus, DenoiseConfig};

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

/// Ensemble selection on a `{"models", "comet", "pairwise"}` document.
pub fn bsce_select_json(scores_json: &str, ensemble_size: usize) -> Result<String, String> {
    let scores: ScoreSet = serde_json::from_str(scores_json).map_err(|e| e.to_string())?;
    let selection = select_ensemble(&scores, ensemble_size).map_err(|e| e.to_string())?;
    to_json(&selection)
}

#[derive(Serialize)]
struct AttentionMaps {
    /// Per-head maps with identity mixing, i.e. plain multi-head attention.
    standard: Vec<Vec<Vec<f64>>>,
    talking: Vec<Vec<Vec<f64>>>,
    logit_mixer: Vec<Vec<f64>>,
    score_mixer: Vec<Vec<f64>>,
}

/// Random self-attention maps, with and without head mixing.
///
/// `mix` blends the mixers from identity (0) to fully random (1).
pub fn attention_maps_json(
    seed: u32,
    heads: usize,
    len: usize,
    dim: usize,
    mix: f64,
) -> Result<String, String> {
    if !(1..=8).contains(&heads) || !(1..=32).contains(&len) || !(1..=64).contains(&dim) {
        return Err("heads must be 1-8, length 1-32, dim 1-64".into());
    }
    if !(0.0..=1.0).contains(&mix) {
        return Err("mix must be in [0, 1]".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(seed));
    let q: Vec<Matrix> = (0..heads)
        .map(|_| random_matrix(&mut rng, len, dim).scale(2.0))
        .collect();
    let k: Vec<Matrix> = (0..heads)
        .map(|_| random_matrix(&mut rng, len, dim).scale(2.0))
        .collect();
    let eye = Matrix::identity(heads);
    let blend = |r: Matrix| {
        Matrix::from_fn(heads, heads, |i, j| {
            (1.0 - mix) * eye.get(i, j) + mix * r.get(i, j)
        })
    };
    let w_l = blend(random_matrix(&mut rng, heads, heads));
    // Softmax outputs are non-negative; keep the score mixer non-negative too
    // so mixed maps stay readable as weights.
    let w_a = blend(random_matrix(&mut rng, heads, heads));
    let w_a = Matrix::from_fn(heads, heads, |i, j| w_a.get(i, j).abs());

    let standard = talking_heads_scores(&q, &k, &eye, &eye).map_err(|e| e.to_string())?;
    let talking = talking_heads_scores(&q, &k, &w_l, &w_a).map_err(|e| e.to_string())?;
    to_json(&AttentionMaps {
        standard: standard.iter().map(Matrix::to_rows).collect(),
        talking: talking.iter().map(Matrix::to_rows).collect(),
        logit_mixer: w_l.to_rows(),
        score_mixer: w_a.to_rows(),
    })
}

#[derive(Serialize)]
struct PreviewRow {
    dialogue_id: String,
    turn_index: usize,
    source: String,
    target: String,
    noised_target: String,
}

/// Context preparation followed by target denoising on chat JSONL.
pub fn chat_preview_json(
    chat_jsonl: &str,
    n_prev: usize,
    mode: &str,
    speaker_tags: bool,
    seed: u32,
    pair_fraction: f64,
    token_prob: f64,
) -> Result<String, String> {
    let mode: ContextMode = mode.parse()?;
    let cfg = ContextConfig::new(n_prev, mode)
        .map_err(|e| e.to_string())?
        .with_speaker_tags(speaker_tags);
    let dialogues = parse_chat(chat_jsonl.as_bytes()).map_err(|e| e.to_string())?;
    let prepared = prepare_corpus(&dialogues, &cfg).map_err(|e| e.to_string())?;
    let records: Vec<BitextRecord> = prepared
        .iter()
        .enumerate()
        .map(|(i, p)| BitextRecord {
            line: i + 1,
            pair: p.pair.clone(),
            payload_span: Some(p.target_payload_span),
        })
        .collect();
    let dcfg = DenoiseConfig {
        pair_fraction,
        token_replace_prob: token_prob,
        seed: u64::from(seed),
    };
    let (noised, _) = denoise_corpus(&records, &dcfg).map_err(|e| e.to_string())?;
    let turns = dialogues.iter().flat_map(|d| d.turns());
    let rows: Vec<PreviewRow> = turns
        .zip(prepared)
        .zip(noised)
        .map(|((turn, p), n)| PreviewRow {
            dialogue_id: turn.dialogue_id.clone(),
            turn_index: turn.turn_index,
            source: p.pair.source,
            target: p.pair.target,
            noised_target: n.pair.target,
        })
        .collect();
    to_json(&rows)
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = bsceSelect)]
pub fn bsce_select(scores_json: &str, ensemble_size: usize) -> Result<String, JsError> {
    js(bsce_select_json(scores_json, ensemble_size))
}

#[wasm_bindgen(js_name = attentionMaps)]
pub fn attention_maps(
    seed: u32,
    heads: usize,
    len: usize,
    dim: usize,
    mix: f64,
) -> Result<String, JsError> {
    js(attention_maps_json(seed, heads, len, dim, mix))
}

#[wasm_bindgen(js_name = chatPreview)]
pub fn chat_preview(
    chat_jsonl: &str,
    n_prev: usize,
    mode: &str,
    speaker_tags: bool,
    seed: u32,
    pair_fraction: f64,
    token_prob: f64,
) -> Result<String, JsError> {
    js(chat_preview_json(
        chat_jsonl,
        n_prev,
        mode,
        speaker_tags,
        seed,
        pair_fraction,
        token_prob,
    ))
}
