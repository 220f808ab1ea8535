//! Dataset representation, file ingestion, synthetic data generation,
//! and stratified K-fold splitting.

mod io;
mod splits;
mod synth;

pub use io::{load_dataset, save_dataset};
pub use splits::{make_splits, SplitPlan, SplitRound};
pub use synth::{generate_synthetic, SynthConfig, SyntheticDataset, PLANTED_FEATURES};

use crate::error::{Error, Result};
use ndarray::Array2;

/// Whether a modality carries real-valued measurements or matchable
/// discrete attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModalityKind {
    Continuous,
    Discrete,
}

/// How one discrete attribute column decides that two subjects match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchRule {
    /// Match when the values are equal.
    Exact,
    /// Match when `|a - b| < theta` (strict).
    Threshold(f64),
}

/// One modality: a subjects-by-features matrix plus its kind. Discrete
/// modalities carry one [`MatchRule`] per column.
#[derive(Debug, Clone)]
pub struct ModalityMatrix {
    pub name: String,
    pub kind: ModalityKind,
    pub data: Array2<f64>,
    pub match_rules: Vec<MatchRule>,
}

impl ModalityMatrix {
    pub fn continuous(name: impl Into<String>, data: Array2<f64>) -> Self {
        ModalityMatrix {
            name: name.into(),
            kind: ModalityKind::Continuous,
            data,
            match_rules: Vec::new(),
        }
    }

    pub fn discrete(
        name: impl Into<String>,
        data: Array2<f64>,
        match_rules: Vec<MatchRule>,
    ) -> Self {
        ModalityMatrix {
            name: name.into(),
            kind: ModalityKind::Discrete,
            data,
            match_rules,
        }
    }

    fn validate(&self, subjects: usize) -> Result<()> {
        if self.data.dim().0 != subjects {
            return Err(Error::Load {
                file: self.name.clone(),
                row: None,
                detail: format!(
                    "row-count mismatch: modality has {} rows, dataset has {subjects} subjects",
                    self.data.dim().0
                ),
            });
        }
        match self.kind {
            ModalityKind::Continuous => {
                if let Some(((i, j), _)) =
                    self.data.indexed_iter().find(|(_, v)| !v.is_finite())
                {
                    return Err(Error::Load {
                        file: self.name.clone(),
                        row: Some(i),
                        detail: format!("non-finite value in column {j}"),
                    });
                }
            }
            ModalityKind::Discrete => {
                if self.match_rules.len() != self.data.dim().1 {
                    return Err(Error::Config(format!(
                        "discrete modality '{}' has {} columns but {} match rules",
                        self.name,
                        self.data.dim().1,
                        self.match_rules.len()
                    )));
                }
                for (c, rule) in self.match_rules.iter().enumerate() {
                    if let MatchRule::Threshold(theta) = rule {
                        if !(theta.is_finite() && *theta > 0.0) {
                            return Err(Error::Config(format!(
                                "threshold rule on column {c} of '{}' needs a finite positive theta, got {theta}",
                                self.name
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// The full multi-modal dataset: N subjects, their modalities, and a
/// class label per subject. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    subjects: usize,
    class_count: usize,
    modalities: Vec<ModalityMatrix>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        modalities: Vec<ModalityMatrix>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        let subjects = labels.len();
        if subjects == 0 {
            return Err(Error::Config("dataset has no subjects".into()));
        }
        if !modalities
            .iter()
            .any(|m| m.kind == ModalityKind::Continuous)
        {
            return Err(Error::Config(
                "dataset needs at least one continuous modality".into(),
            ));
        }
        for m in &modalities {
            m.validate(subjects)?;
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::Load {
                file: "labels".into(),
                row: Some(i),
                detail: format!("label {l} out of range for {class_count} classes"),
            });
        }
        Ok(Dataset {
            subjects,
            class_count,
            modalities,
            labels,
        })
    }

    pub fn subjects(&self) -> usize {
        self.subjects
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn modalities(&self) -> &[ModalityMatrix] {
        &self.modalities
    }

    pub fn modality(&self, name: &str) -> Option<&ModalityMatrix> {
        self.modalities.iter().find(|m| m.name == name)
    }

    /// Dataset restricted to a subset of modalities (for ablations).
    pub fn with_modalities(&self, names: &[String]) -> Result<Dataset> {
        let mut kept = Vec::new();
        for name in names {
            let m = self
                .modality(name)
                .ok_or_else(|| Error::Config(format!("unknown modality '{name}'")))?;
            kept.push(m.clone());
        }
        Dataset::new(kept, self.labels.clone(), self.class_count)
    }

    /// Per-class subject counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}
