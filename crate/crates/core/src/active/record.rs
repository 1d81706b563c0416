use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{ActiveError, StrategyKind, Weights};
use crate::dataset::SampleId;
use crate::kernels::KernelKind;
use crate::svm::GridPoint;

/// State after one retrain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub labeled: usize,
    pub selected: Vec<SampleId>,
    pub labels: Vec<usize>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub components: usize,
    pub support_vectors: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Weights>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

/// One finished run on one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlRunRecord {
    pub dataset: String,
    pub fold: usize,
    pub strategy: StrategyKind,
    pub kernel: KernelKind,
    pub hyperparameters: Option<GridPoint>,
    pub rounds: Vec<RoundRecord>,
}

impl AlRunRecord {
    /// `(|L|, test accuracy)` per retrain.
    pub fn curve(&self) -> Vec<(usize, f64)> {
        self.rounds.iter().map(|r| (r.labeled, r.test_accuracy)).collect()
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.test_accuracy)
    }
}

/// Writes one JSON object per round.
pub fn write_jsonl(rounds: &[RoundRecord], mut w: impl Write) -> Result<(), ActiveError> {
    for r in rounds {
        writeln!(w, "{}", crate::json::to_line_precise(r)?)?;
    }
    Ok(())
}

pub fn read_jsonl(r: impl BufRead) -> Result<Vec<RoundRecord>, ActiveError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let rounds = vec![
            RoundRecord {
                round: 1,
                labeled: 8,
                selected: vec![1, 5],
                labels: vec![0, 1],
                train_accuracy: 1.0,
                test_accuracy: 0.1 + 0.2,
                components: 3,
                support_vectors: 4,
                converged: true,
                weights: Some(Weights::default()),
                elapsed_ms: None,
            },
            RoundRecord {
                round: 2,
                labeled: 9,
                selected: vec![7],
                labels: vec![1],
                train_accuracy: 0.9,
                test_accuracy: 0.8,
                components: 3,
                support_vectors: 5,
                converged: false,
                weights: None,
                elapsed_ms: Some(12),
            },
        ];
        let mut buf = Vec::new();
        write_jsonl(&rounds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(!text.lines().next().unwrap().contains("elapsed_ms"));
        assert_eq!(read_jsonl(&buf[..]).unwrap(), rounds);
    }
}
