//! Dataset interchange: a JSON manifest referencing headerless CSV
//! files, one row per subject. Values are written with Rust's shortest
//! round-trip float formatting, so save/load preserves every bit.

use super::{Dataset, MatchRule, ModalityKind, ModalityMatrix};
use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    subjects: usize,
    classes: usize,
    labels: String,
    modalities: Vec<ManifestModality>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestModality {
    name: String,
    kind: String,
    file: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    r#match: Vec<ManifestMatch>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestMatch {
    col: usize,
    r#type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
}

fn read_csv_matrix(path: &Path) -> Result<Array2<f64>> {
    let file = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::Load {
        file: file.clone(),
        row: None,
        detail: e.to_string(),
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Load {
                file: file.clone(),
                row: Some(i),
                detail: format!("non-numeric cell '{}'", cell.trim()),
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Load {
                    file,
                    row: Some(i),
                    detail: format!(
                        "ragged row: {} cells where previous rows had {}",
                        row.len(),
                        first.len()
                    ),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Load {
            file,
            row: None,
            detail: "empty file".into(),
        });
    }
    let (n, d) = (rows.len(), rows[0].len());
    Ok(Array2::from_shape_fn((n, d), |(i, j)| rows[i][j]))
}

fn read_labels(path: &Path, classes: usize) -> Result<Vec<usize>> {
    let file = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::Load {
        file: file.clone(),
        row: None,
        detail: e.to_string(),
    })?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: usize = line.trim().parse().map_err(|_| Error::Load {
            file: file.clone(),
            row: Some(i),
            detail: format!("non-integer label '{}'", line.trim()),
        })?;
        if l >= classes {
            return Err(Error::Load {
                file: file.clone(),
                row: Some(i),
                detail: format!("label {l} out of range for {classes} classes"),
            });
        }
        labels.push(l);
    }
    Ok(labels)
}

/// Load a dataset from its JSON manifest. Row order follows the files;
/// every validation failure names the offending file and row.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::Load {
        file: manifest_path.display().to_string(),
        row: None,
        detail: e.to_string(),
    })?;
    let manifest: Manifest = serde_json::from_str(&text)?;

    let labels = read_labels(&dir.join(&manifest.labels), manifest.classes)?;
    if labels.len() != manifest.subjects {
        return Err(Error::Load {
            file: manifest.labels.clone(),
            row: None,
            detail: format!(
                "row-count mismatch: {} labels for {} subjects",
                labels.len(),
                manifest.subjects
            ),
        });
    }

    let mut modalities = Vec::new();
    for m in &manifest.modalities {
        let data = read_csv_matrix(&dir.join(&m.file))?;
        if data.dim().0 != manifest.subjects {
            return Err(Error::Load {
                file: m.file.clone(),
                row: None,
                detail: format!(
                    "row-count mismatch: {} rows for {} subjects",
                    data.dim().0,
                    manifest.subjects
                ),
            });
        }
        let modality = match m.kind.as_str() {
            "continuous" => ModalityMatrix::continuous(&m.name, data),
            "discrete" => {
                let cols = data.dim().1;
                let mut rules = vec![None; cols];
                for entry in &m.r#match {
                    if entry.col >= cols {
                        return Err(Error::Config(format!(
                            "match rule for column {} but '{}' has {cols} columns",
                            entry.col, m.name
                        )));
                    }
                    let rule = match entry.r#type.as_str() {
                        "exact" => MatchRule::Exact,
                        "threshold" => MatchRule::Threshold(entry.theta.ok_or_else(|| {
                            Error::Config(format!(
                                "threshold rule on column {} of '{}' is missing theta",
                                entry.col, m.name
                            ))
                        })?),
                        other => {
                            return Err(Error::Config(format!(
                                "unknown match type '{other}' in '{}'",
                                m.name
                            )))
                        }
                    };
                    rules[entry.col] = Some(rule);
                }
                let rules: Vec<MatchRule> = rules
                    .into_iter()
                    .enumerate()
                    .map(|(c, r)| {
                        r.ok_or_else(|| {
                            Error::Config(format!(
                                "column {c} of discrete modality '{}' has no match rule",
                                m.name
                            ))
                        })
                    })
                    .collect::<Result<_>>()?;
                ModalityMatrix::discrete(&m.name, data, rules)
            }
            other => {
                return Err(Error::Load {
                    file: m.file.clone(),
                    row: None,
                    detail: format!("unknown modality kind '{other}'"),
                })
            }
        };
        modalities.push(modality);
    }

    Dataset::new(modalities, labels, manifest.classes)
}

fn write_csv_matrix(path: &Path, data: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for row in data.rows() {
        let mut first = true;
        for v in row {
            if !first {
                write!(w, ",")?;
            }
            write!(w, "{v}")?;
            first = false;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Write a dataset as `manifest.json` plus one CSV per modality and a
/// labels file, into `dir`.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;

    let mut entries = Vec::new();
    for m in dataset.modalities() {
        let file = format!("{}.csv", m.name);
        write_csv_matrix(&dir.join(&file), &m.data)?;
        let match_entries = match m.kind {
            ModalityKind::Continuous => Vec::new(),
            ModalityKind::Discrete => m
                .match_rules
                .iter()
                .enumerate()
                .map(|(col, rule)| match rule {
                    MatchRule::Exact => ManifestMatch {
                        col,
                        r#type: "exact".into(),
                        theta: None,
                    },
                    MatchRule::Threshold(theta) => ManifestMatch {
                        col,
                        r#type: "threshold".into(),
                        theta: Some(*theta),
                    },
                })
                .collect(),
        };
        entries.push(ManifestModality {
            name: m.name.clone(),
            kind: match m.kind {
                ModalityKind::Continuous => "continuous".into(),
                ModalityKind::Discrete => "discrete".into(),
            },
            file,
            r#match: match_entries,
        });
    }

    let mut w = BufWriter::new(fs::File::create(dir.join("labels.csv"))?);
    for l in dataset.labels() {
        writeln!(w, "{l}")?;
    }
    drop(w);

    let manifest = Manifest {
        subjects: dataset.subjects(),
        classes: dataset.class_count(),
        labels: "labels.csv".into(),
        modalities: entries,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(())
}
