use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ModelKind;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub relevant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run: usize,
    pub seed: u64,
    pub q: usize,
    pub recall: f64,
    pub ndcg: f64,
    /// Users with at least one relevant test item.
    pub users_evaluated: usize,
    /// Users skipped because they have no relevant test item.
    pub users_skipped: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_user: Option<Vec<UserMetrics>>,
}

/// Per-run and averaged recall@n and NDCG@n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: ModelKind,
    pub n: usize,
    pub runs: Vec<RunMetrics>,
    pub avg_recall: f64,
    pub avg_ndcg: f64,
}

impl MetricsReport {
    pub fn from_runs(model: ModelKind, n: usize, runs: Vec<RunMetrics>) -> Self {
        let mean = |f: fn(&RunMetrics) -> f64| {
            if runs.is_empty() {
                0.0
            } else {
                runs.iter().map(f).sum::<f64>() / runs.len() as f64
            }
        };
        let avg_recall = mean(|r| r.recall);
        let avg_ndcg = mean(|r| r.ndcg);
        MetricsReport {
            model,
            n,
            runs,
            avg_recall,
            avg_ndcg,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One row per run plus a final `AVG` row.
    ///
    /// Columns: `run seed q recall@n ndcg@n users skipped`.
    pub fn to_tsv(&self) -> String {
        let n = self.n;
        let mut out = format!("run\tseed\tq\trecall@{n}\tndcg@{n}\tusers\tskipped\n");
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.run, r.seed, r.q, r.recall, r.ndcg, r.users_evaluated, r.users_skipped
            );
        }
        let users: usize = self.runs.iter().map(|r| r.users_evaluated).sum();
        let skipped: usize = self.runs.iter().map(|r| r.users_skipped).sum();
        let _ = writeln!(
            out,
            "AVG\t-\t-\t{}\t{}\t{users}\t{skipped}",
            self.avg_recall, self.avg_ndcg
        );
        out
    }
}
