//! Boosted Self-COMET-based Ensemble selection.
//!
//! Each candidate gets a weighted score that trades validation COMET
//! (performance) against its average similarity to the other candidates
//! (diversity). The best-scoring model seeds the pool; the pool then grows
//! greedily by the remaining model least similar, on average, to the models
//! already selected.
//!
//! The similarity matrix is pluggable: Self-COMET, Self-BLEU or anything
//! else where larger means "more alike". It is used as given (row `i` holds
//! model `i`'s similarity to each other model) and need not be symmetric.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BsceError {
    #[error("need at least 2 candidate models, got {0}")]
    TooFewModels(usize),
    #[error("{what} has length {got}, expected {expected}")]
    Shape {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("duplicate model id `{0}`")]
    DuplicateId(String),
    #[error("ensemble size {e} is outside 1..={n}")]
    EnsembleSize { e: usize, n: usize },
}

/// Candidate models with their validation COMET and pairwise similarity.
///
/// Deserializes from `{"models": [...], "comet": [...], "pairwise": [[...]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScoreSetFile", into = "ScoreSetFile")]
pub struct ScoreSet {
    model_ids: Vec<String>,
    comet: Vec<f64>,
    pairwise: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ScoreSetFile {
    models: Vec<String>,
    comet: Vec<f64>,
    pairwise: Vec<Vec<f64>>,
}

impl TryFrom<ScoreSetFile> for ScoreSet {
    type Error = BsceError;

    fn try_from(f: ScoreSetFile) -> Result<Self, Self::Error> {
        ScoreSet::new(f.models, f.comet, f.pairwise)
    }
}

impl From<ScoreSet> for ScoreSetFile {
    fn from(s: ScoreSet) -> Self {
        ScoreSetFile {
            models: s.model_ids,
            comet: s.comet,
            pairwise: s.pairwise,
        }
    }
}

impl ScoreSet {
    /// Validates shapes, finiteness (diagonal excluded) and id uniqueness.
    pub fn new(
        model_ids: Vec<String>,
        comet: Vec<f64>,
        pairwise: Vec<Vec<f64>>,
    ) -> Result<Self, BsceError> {
        let n = model_ids.len();
        if n < 2 {
            return Err(BsceError::TooFewModels(n));
        }
        let shape = |what, got| {
            if got == n {
                Ok(())
            } else {
                Err(BsceError::Shape {
                    what,
                    got,
                    expected: n,
                })
            }
        };
        shape("comet", comet.len())?;
        shape("pairwise", pairwise.len())?;
        for row in &pairwise {
            shape("pairwise row", row.len())?;
        }
        if comet.iter().any(|c| !c.is_finite()) {
            return Err(BsceError::NonFinite("comet"));
        }
        let off_diagonal = pairwise
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().filter(move |(j, _)| *j != i));
        if off_diagonal.into_iter().any(|(_, v)| !v.is_finite()) {
            return Err(BsceError::NonFinite("pairwise"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = model_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(BsceError::DuplicateId(dup.clone()));
        }
        Ok(Self {
            model_ids,
            comet,
            pairwise,
        })
    }

    pub fn len(&self) -> usize {
        self.model_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model_ids.is_empty()
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn comet(&self) -> &[f64] {
        &self.comet
    }

    pub fn pairwise(&self) -> &[Vec<f64>] {
        &self.pairwise
    }

    pub fn similarity(&self, i: usize, j: usize) -> f64 {
        self.pairwise[i][j]
    }
}

/// Sum that does not depend on the order the values arrive in.
fn order_free_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.into_iter().sum()
}

/// Row means of the pairwise matrix, diagonal excluded.
pub fn avg_self_similarity(s: &ScoreSet) -> Vec<f64> {
    let n = s.len();
    (0..n)
        .map(|i| {
            let row = (0..n)
                .filter(|&j| j != i)
                .map(|j| s.similarity(i, j))
                .collect();
            order_free_sum(row) / (n - 1) as f64
        })
        .collect()
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

/// The diversity-per-COMET exchange rate, `(max S - min S) / (max C - min C)`.
///
/// Returns 0 when either range is empty.
pub fn score_weight(comet: &[f64], self_sim: &[f64]) -> f64 {
    let (c_lo, c_hi) = min_max(comet);
    let (s_lo, s_hi) = min_max(self_sim);
    if c_hi == c_lo || s_hi == s_lo {
        0.0
    } else {
        (s_hi - s_lo) / (c_hi - c_lo)
    }
}

/// `score_i = (c_i - min C) * weight + (max S - s_i)`.
///
/// A flat COMET range zeroes the performance term; a flat similarity range
/// zeroes both the weight and the diversity term.
pub fn weighted_scores(comet: &[f64], self_sim: &[f64]) -> Vec<f64> {
    assert_eq!(
        comet.len(),
        self_sim.len(),
        "comet and self-similarity lengths differ"
    );
    let weight = score_weight(comet, self_sim);
    let (c_lo, _) = min_max(comet);
    let (_, s_hi) = min_max(self_sim);
    comet
        .iter()
        .zip(self_sim)
        .map(|(&c, &s)| (c - c_lo) * weight + (s_hi - s))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSimilarity {
    pub model: String,
    pub avg_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub chosen: String,
    pub avg_similarity: f64,
    /// Every remaining candidate at this step, in input order.
    pub candidates: Vec<CandidateSimilarity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSelection {
    pub selected: Vec<String>,
    pub weight: f64,
    pub avg_self_similarity: Vec<f64>,
    pub weighted_scores: Vec<f64>,
    pub step_diagnostics: Vec<SelectionStep>,
}

/// Tie-break: higher COMET wins, then the lexicographically smaller id.
fn tie_break(s: &ScoreSet, a: usize, b: usize) -> Ordering {
    s.comet[b]
        .total_cmp(&s.comet[a])
        .then_with(|| s.model_ids[a].cmp(&s.model_ids[b]))
}

/// Values this close (relative to the largest magnitude) count as tied, so
/// ties that hold exactly in real arithmetic are settled by [`tie_break`]
/// rather than by rounding.
const TIE_TOLERANCE: f64 = 1e-12;

/// The extreme entry of `values` in direction `want`, ties broken by
/// [`tie_break`]. `values` must be non-empty.
fn pick(s: &ScoreSet, values: &[(usize, f64)], want: Ordering) -> (usize, f64) {
    let extreme = values
        .iter()
        .map(|&(_, v)| v)
        .reduce(|a, b| if b.total_cmp(&a) == want { b } else { a })
        .expect("non-empty candidate list");
    let scale = values.iter().fold(0.0f64, |m, &(_, v)| m.max(v.abs()));
    let tol = TIE_TOLERANCE * scale;
    values
        .iter()
        .copied()
        .filter(|&(_, v)| (v - extreme).abs() <= tol)
        .min_by(|&(a, _), &(b, _)| tie_break(s, a, b))
        .expect("the extreme itself qualifies")
}

/// Mean similarity of candidate `i` to the already selected models.
pub fn avg_similarity_to(s: &ScoreSet, i: usize, selected: &[usize]) -> f64 {
    let values = selected.iter().map(|&j| s.similarity(i, j)).collect();
    order_free_sum(values) / selected.len() as f64
}

/// Greedy selection of `e` models.
pub fn select_ensemble(s: &ScoreSet, e: usize) -> Result<EnsembleSelection, BsceError> {
    let n = s.len();
    if e == 0 || e > n {
        return Err(BsceError::EnsembleSize { e, n });
    }
    let self_sim = avg_self_similarity(s);
    let weight = score_weight(&s.comet, &self_sim);
    let scores = weighted_scores(&s.comet, &self_sim);

    let all: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    let (top, _) = pick(s, &all, Ordering::Greater);
    let mut selected = vec![top];
    let mut remaining: Vec<usize> = (0..n).filter(|&i| i != top).collect();
    let mut steps = Vec::with_capacity(e - 1);

    while selected.len() < e {
        let sims: Vec<(usize, f64)> = remaining
            .iter()
            .map(|&i| (i, avg_similarity_to(s, i, &selected)))
            .collect();
        let (best, best_sim) = pick(s, &sims, Ordering::Less);
        steps.push(SelectionStep {
            chosen: s.model_ids[best].clone(),
            avg_similarity: best_sim,
            candidates: sims
                .iter()
                .map(|&(i, v)| CandidateSimilarity {
                    model: s.model_ids[i].clone(),
                    avg_similarity: v,
                })
                .collect(),
        });
        selected.push(best);
        remaining.retain(|&i| i != best);
    }

    Ok(EnsembleSelection {
        selected: selected.iter().map(|&i| s.model_ids[i].clone()).collect(),
        weight,
        avg_self_similarity: self_sim,
        weighted_scores: scores,
        step_diagnostics: steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("m{i}")).collect()
    }

    fn worked() -> ScoreSet {
        ScoreSet::new(
            ids(3),
            vec![0.70, 0.80, 0.75],
            vec![
                vec![0.0, 1.00, 0.80],
                vec![1.00, 0.0, 0.90],
                vec![0.80, 0.90, 0.0],
            ],
        )
        .unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn self_similarity_examples() {
        assert!(close(
            &avg_self_similarity(&worked()),
            &[0.90, 0.95, 0.85],
            1e-12
        ));
        let flat = ScoreSet::new(ids(4), vec![0.0; 4], vec![vec![0.3; 4]; 4]).unwrap();
        assert!(close(&avg_self_similarity(&flat), &[0.3; 4], 1e-15));
        let two =
            ScoreSet::new(ids(2), vec![0.0; 2], vec![vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        assert_eq!(avg_self_similarity(&two), vec![0.5, 0.5]);
    }

    #[test]
    fn weighted_score_examples() {
        let s = [0.90, 0.95, 0.85];
        assert!((score_weight(&[0.70, 0.80, 0.75], &s) - 1.0).abs() < 1e-12);
        assert!(close(
            &weighted_scores(&[0.70, 0.80, 0.75], &s),
            &[0.05, 0.10, 0.15],
            1e-12
        ));
        assert!(close(
            &weighted_scores(&[7.0, 8.0, 7.5], &s),
            &[0.05, 0.10, 0.15],
            1e-12
        ));
        assert!(close(
            &weighted_scores(&[0.5, 0.5], &[0.9, 0.8]),
            &[0.0, 0.1],
            1e-12
        ));
    }

    #[test]
    fn flat_similarity_falls_back_to_tie_break() {
        let s = ScoreSet::new(
            vec!["b".into(), "a".into(), "c".into()],
            vec![0.7, 0.7, 0.6],
            vec![vec![0.5; 3]; 3],
        )
        .unwrap();
        let sel = select_ensemble(&s, 3).unwrap();
        assert_eq!(sel.weighted_scores, vec![0.0, 0.0, 0.0]);
        // Equal scores: higher COMET first, then smaller id.
        assert_eq!(sel.selected, ["a", "b", "c"]);
    }

    #[test]
    fn worked_trace() {
        let sel = select_ensemble(&worked(), 2).unwrap();
        assert_eq!(sel.selected, ["m3", "m1"]);
        let step = &sel.step_diagnostics[0];
        assert_eq!(step.chosen, "m1");
        assert!((step.avg_similarity - 0.80).abs() < 1e-12);
        assert_eq!(step.candidates.len(), 2);
        assert!((step.candidates[1].avg_similarity - 0.90).abs() < 1e-12);
    }

    #[test]
    fn single_and_full_ensembles() {
        assert_eq!(select_ensemble(&worked(), 1).unwrap().selected, ["m3"]);
        let mut all = select_ensemble(&worked(), 3).unwrap().selected;
        all.sort();
        assert_eq!(all, ids(3));
    }

    #[test]
    fn ensemble_size_out_of_range() {
        assert_eq!(
            select_ensemble(&worked(), 0),
            Err(BsceError::EnsembleSize { e: 0, n: 3 })
        );
        assert_eq!(
            select_ensemble(&worked(), 4),
            Err(BsceError::EnsembleSize { e: 4, n: 3 })
        );
    }

    #[test]
    fn score_set_validation() {
        assert_eq!(
            ScoreSet::new(ids(1), vec![0.0], vec![vec![0.0]]),
            Err(BsceError::TooFewModels(1))
        );
        assert!(matches!(
            ScoreSet::new(ids(2), vec![0.0], vec![vec![0.0; 2]; 2]),
            Err(BsceError::Shape { what: "comet", .. })
        ));
        assert!(matches!(
            ScoreSet::new(ids(2), vec![0.0; 2], vec![vec![0.0; 2], vec![0.0]]),
            Err(BsceError::Shape { .. })
        ));
        assert_eq!(
            ScoreSet::new(
                ids(2),
                vec![0.0; 2],
                vec![vec![0.0, f64::NAN], vec![0.0; 2]]
            ),
            Err(BsceError::NonFinite("pairwise"))
        );
        // The diagonal is ignored, so a NaN there is fine.
        assert!(ScoreSet::new(
            ids(2),
            vec![0.0; 2],
            vec![vec![f64::NAN, 0.1], vec![0.1, 0.0]]
        )
        .is_ok());
        assert_eq!(
            ScoreSet::new(
                vec!["a".into(), "a".into()],
                vec![0.0; 2],
                vec![vec![0.0; 2]; 2]
            ),
            Err(BsceError::DuplicateId("a".into()))
        );
    }

    #[test]
    fn scores_file_round_trip() {
        let json = r#"{"models":["m1","m2","m3"],"comet":[0.7,0.8,0.75],"pairwise":[[0,1.0,0.8],[1.0,0,0.9],[0.8,0.9,0]]}"#;
        let s: ScoreSet = serde_json::from_str(json).unwrap();
        assert_eq!(s, worked());
        let bad = r#"{"models":["m1"],"comet":[0.7],"pairwise":[[0]]}"#;
        assert!(serde_json::from_str::<ScoreSet>(bad).is_err());
    }

    #[test]
    fn exact_ties_go_to_higher_comet_despite_rounding() {
        // m1 holds max COMET and max self-similarity, m3 both minimums:
        // both score exactly max S - min S.
        let s = ScoreSet::new(
            ids(3),
            vec![0.9, 0.31, 0.3],
            vec![
                vec![1.0, 0.9, 0.7],
                vec![0.9, 1.0, 0.2],
                vec![0.7, 0.2, 1.0],
            ],
        )
        .unwrap();
        let sel = select_ensemble(&s, 1).unwrap();
        assert!((sel.weighted_scores[0] - sel.weighted_scores[2]).abs() < 1e-12);
        assert_eq!(sel.selected, ["m1"]);
    }
}
