//! Gradient-based discriminative-feature extraction: rank input feature
//! columns of the dominant modality by how strongly they drive each
//! subject's own predicted-class logit, and emit normalized top-K
//! reports.

use crate::autodiff::Tape;
use crate::data::{Dataset, SplitRound};
use crate::error::{Error, Result};
use crate::train::{Model, Prepared};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

/// Per-feature saliency: the mean over subjects of the absolute
/// gradient of subject i's predicted-class fusion logit with respect to
/// subject i's own dominant-modality features. One backward pass per
/// subject isolates the diagonal of the input Jacobian; cross-subject
/// graph coupling never contaminates the score.
pub fn compute_saliency(model: &Model, dataset: &Dataset) -> Result<Vec<f64>> {
    let n = dataset.subjects();
    // Losses are irrelevant here; a full-train round satisfies the
    // forward pass's reference-graph plumbing.
    let round = SplitRound {
        train: (0..n).collect(),
        val: Vec::new(),
        test: Vec::new(),
    };
    let prepared = Prepared::build(dataset, &round, &model.config)?;
    let d = prepared.x_dom.dim().1;

    let tape = Tape::new();
    let features = tape.param(prepared.x_dom.clone());
    // Parameters stay frozen: only the input transports gradient.
    let pass = model.forward_from(&tape, &prepared, features, false)?;
    let probs = tape.value(pass.probs);

    let mut scores = vec![0.0f64; d];
    for subject in 0..n {
        let row = probs.row(subject);
        let predicted = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(c, _)| c)
            .unwrap();
        let target = tape.entry(pass.logits, subject, predicted)?;
        tape.backward(target)?;
        let grad = tape.grad(features).expect("input gradient");
        for f in 0..d {
            scores[f] += grad[[subject, f]].abs();
        }
        tape.reset();
    }
    for s in &mut scores {
        *s /= n as f64;
    }
    Ok(scores)
}

/// One line of a saliency report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaliencyEntry {
    /// 1-based rank.
    pub rank: usize,
    /// Feature column in the dominant modality.
    pub index: usize,
    /// Optional human label from a mapping file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub raw: f64,
    /// Share of the report's total raw score, in percent.
    pub percent: f64,
}

/// Ranked top-K features with weights normalized to percentages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaliencyReport {
    pub k: usize,
    pub entries: Vec<SaliencyEntry>,
}

/// Build the top-K report: features sorted by score descending (ties
/// broken by lower index), percentages normalized over the reported K.
pub fn top_k_report(
    scores: &[f64],
    k: usize,
    mapping: Option<&HashMap<usize, String>>,
) -> Result<SaliencyReport> {
    if k == 0 {
        return Err(Error::Config("top-k must be positive".into()));
    }
    if k > scores.len() {
        return Err(Error::Config(format!(
            "top-k {k} exceeds feature count {}",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let top = &order[..k];
    let total: f64 = top.iter().map(|&i| scores[i]).sum();
    let entries = top
        .iter()
        .enumerate()
        .map(|(rank, &index)| SaliencyEntry {
            rank: rank + 1,
            index,
            label: mapping.and_then(|m| m.get(&index).cloned()),
            raw: scores[index],
            // All-zero scores degrade to a uniform split so the
            // percentages still total 100.
            percent: if total == 0.0 {
                100.0 / k as f64
            } else {
                100.0 * scores[index] / total
            },
        })
        .collect();
    Ok(SaliencyReport { k, entries })
}

impl SaliencyReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// CSV form: `rank,index,label,raw,percent` with an empty label
    /// column when no mapping was supplied.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,index,label,raw,percent\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.rank,
                e.index,
                e.label.as_deref().unwrap_or(""),
                e.raw,
                e.percent
            ));
        }
        out
    }

    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.json")), self.to_json()?)?;
        let mut f = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Read an `index,label` mapping file (no header).
pub fn read_mapping(path: impl AsRef<Path>) -> Result<HashMap<usize, String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
        file: path.display().to_string(),
        row: None,
        detail: e.to_string(),
    })?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (idx, label) = line.split_once(',').ok_or_else(|| Error::Load {
            file: path.display().to_string(),
            row: Some(i),
            detail: "expected 'index,label'".into(),
        })?;
        let idx: usize = idx.trim().parse().map_err(|_| Error::Load {
            file: path.display().to_string(),
            row: Some(i),
            detail: format!("non-integer index '{idx}'"),
        })?;
        map.insert(idx, label.trim().to_string());
    }
    Ok(map)
}
