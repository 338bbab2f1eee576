//! File formats: `procmat-v1` process matrices and DAG specifications.
//!
//! `procmat-v1` is JSON (UTF-8). Entries are row-major `[re, im]` pairs in
//! the layout's flat factor order with the "left factor is most significant"
//! Kronecker convention. Values are serialized with full round-trip
//! precision, so save/load reproduces every entry bit-exactly.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generate::{DagEdge, DagSpec};
use crate::mat::ComplexMatrix;
use crate::process::{PartySpec, ProcessMatrix, SubsystemRef, SystemLayout};

pub const PROCMAT_FORMAT: &str = "procmat-v1";

#[derive(Serialize, Deserialize)]
struct ProcmatFile {
    format: String,
    parties: Vec<PartySpec>,
    matrix: MatrixSection,
}

#[derive(Serialize, Deserialize)]
struct MatrixSection {
    dim: usize,
    layout: String,
    entries: Vec<(f64, f64)>,
}

fn parse_err(context: &str, detail: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{context}: {detail}"))
}

/// Serializes a process matrix to the `procmat-v1` JSON string.
pub fn procmat_to_string(w: &ProcessMatrix) -> String {
    let file = ProcmatFile {
        format: PROCMAT_FORMAT.to_string(),
        parties: w.layout().parties().to_vec(),
        matrix: MatrixSection {
            dim: w.total_dim(),
            layout: "row-major".to_string(),
            entries: w.matrix().data().iter().map(|z| (z.re, z.im)).collect(),
        },
    };
    serde_json::to_string(&file).expect("procmat serialization cannot fail")
}

/// Parses a `procmat-v1` JSON string.
pub fn procmat_from_str(text: &str) -> Result<ProcessMatrix> {
    let file: ProcmatFile =
        serde_json::from_str(text).map_err(|e| parse_err("invalid procmat JSON", e))?;
    if file.format != PROCMAT_FORMAT {
        return Err(parse_err("format field", format!("expected \"{PROCMAT_FORMAT}\", got \"{}\"", file.format)));
    }
    if file.matrix.layout != "row-major" {
        return Err(parse_err("matrix.layout field", format!("unsupported layout \"{}\"", file.matrix.layout)));
    }
    let layout = SystemLayout::new(file.parties)
        .map_err(|e| parse_err("parties section", e))?;
    if layout.total_dim() != file.matrix.dim {
        return Err(parse_err(
            "matrix.dim field",
            format!(
                "dim {} does not match layout product {}",
                file.matrix.dim,
                layout.total_dim()
            ),
        ));
    }
    let expected = file.matrix.dim * file.matrix.dim;
    if file.matrix.entries.len() != expected {
        return Err(parse_err(
            "matrix.entries field",
            format!("expected {expected} entries, got {}", file.matrix.entries.len()),
        ));
    }
    let mut data = Vec::with_capacity(expected);
    for (i, &(re, im)) in file.matrix.entries.iter().enumerate() {
        if !re.is_finite() || !im.is_finite() {
            return Err(parse_err("matrix.entries field", format!("non-finite entry at index {i}")));
        }
        data.push(Complex64::new(re, im));
    }
    let matrix = ComplexMatrix::new(file.matrix.dim, file.matrix.dim, data)
        .map_err(|e| parse_err("matrix section", e))?;
    ProcessMatrix::new(layout, matrix).map_err(|e| parse_err("matrix section", e))
}

/// Writes a process matrix to a `procmat-v1` file.
pub fn save_procmat(w: &ProcessMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, procmat_to_string(w))?;
    Ok(())
}

/// Loads a process matrix from a `procmat-v1` file.
pub fn load_procmat(path: impl AsRef<Path>) -> Result<ProcessMatrix> {
    let text = fs::read_to_string(&path)?;
    procmat_from_str(&text)
}

#[derive(Serialize, Deserialize)]
struct DagSpecFile {
    parties: Vec<PartySpec>,
    edges: Vec<EdgeEntry>,
}

#[derive(Serialize, Deserialize)]
struct EdgeEntry {
    from: (String, usize),
    to: String,
}

/// Serializes a DAG specification to JSON.
pub fn dag_spec_to_string(spec: &DagSpec) -> String {
    let file = DagSpecFile {
        parties: spec.layout.parties().to_vec(),
        edges: spec
            .edges
            .iter()
            .map(|e| EdgeEntry {
                from: (e.from.party.clone(), e.from.subsystem),
                to: e.to.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("dag spec serialization cannot fail")
}

/// Parses a DAG specification from JSON and validates it.
pub fn dag_spec_from_str(text: &str) -> Result<DagSpec> {
    let file: DagSpecFile =
        serde_json::from_str(text).map_err(|e| parse_err("invalid DAG spec JSON", e))?;
    let layout = SystemLayout::new(file.parties)
        .map_err(|e| parse_err("parties section", e))?;
    let edges = file
        .edges
        .into_iter()
        .map(|e| DagEdge {
            from: SubsystemRef::new(e.from.0, e.from.1),
            to: e.to,
        })
        .collect();
    let spec = DagSpec::new(layout, edges)?;
    Ok(spec)
}

pub fn save_dag_spec(spec: &DagSpec, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, dag_spec_to_string(spec))?;
    Ok(())
}

pub fn load_dag_spec(path: impl AsRef<Path>) -> Result<DagSpec> {
    let text = fs::read_to_string(&path)?;
    dag_spec_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::PartySpec;

    fn sample_process() -> ProcessMatrix {
        let layout = SystemLayout::new(vec![
            PartySpec::new("A", 2, vec![2]),
            PartySpec::new("B", 1, vec![2, 3]),
        ])
        .unwrap();
        let side = layout.total_dim();
        let m = ComplexMatrix::from_fn(side, side, |i, j| {
            Complex64::new(
                (i as f64 + 1.0) / 7.0 + j as f64 * 1e-3,
                ((i * 31 + j * 17) % 13) as f64 / 11.0 - 0.5,
            )
        });
        ProcessMatrix::new(layout, m).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let w = sample_process();
        let text = procmat_to_string(&w);
        let back = procmat_from_str(&text).unwrap();
        assert_eq!(back.layout(), w.layout());
        assert_eq!(back.matrix().data(), w.matrix().data());
    }

    #[test]
    fn dim_mismatch_is_parse_error() {
        let w = sample_process();
        let text = procmat_to_string(&w).replace("\"dim\":24", "\"dim\":12");
        match procmat_from_str(&text) {
            Err(Error::Parse(msg)) => assert!(msg.contains("dim"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn nan_entry_is_parse_error() {
        // JSON has no NaN literal; the parser must reject it outright.
        let text = r#"{"format":"procmat-v1",
            "parties":[{"name":"A","input_dim":1,"output_subdims":[2]}],
            "matrix":{"dim":2,"layout":"row-major",
                      "entries":[[NaN,0.0],[0.0,0.0],[0.0,0.0],[1.0,0.0]]}}"#;
        assert!(matches!(procmat_from_str(text), Err(Error::Parse(_))));
    }

    #[test]
    fn truncated_entries_are_rejected() {
        let layout = SystemLayout::new(vec![PartySpec::new("A", 1, vec![2])]).unwrap();
        let w = ProcessMatrix::new(layout, ComplexMatrix::identity(2)).unwrap();
        let text = procmat_to_string(&w).replace("[1.0,0.0],", "");
        assert!(matches!(procmat_from_str(&text), Err(Error::Parse(_))));
    }
}
