//! Plain-text persistence for assignments and dense matrices.
//!
//! Matrices are one comma-separated row per line. Assignments start with a
//! `# domain=<id> clusters=<c>` line followed by `user_index,cluster` rows.
//! Floats use the shortest representation that reads back exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::ClusterAssignment;
use crate::error::{Error, Result};

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn write_matrix_csv(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, i + 1, format!("bad number `{c}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(path, i + 1, "ragged matrix row"));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

pub fn write_assignment_csv(path: impl AsRef<Path>, a: &ClusterAssignment) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("# domain={} clusters={}\n", a.domain_id(), a.n_clusters());
    for (u, c) in a.assignment().iter().enumerate() {
        let _ = writeln!(out, "{u},{c}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_assignment_csv(path: impl AsRef<Path>) -> Result<ClusterAssignment> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(path, 1, "missing header"))?;
    let mut domain = String::new();
    let mut clusters = None;
    for field in header.trim_start_matches('#').split_whitespace() {
        match field.split_once('=') {
            Some(("domain", v)) => domain = v.to_string(),
            Some(("clusters", v)) => {
                clusters = Some(
                    v.parse::<usize>()
                        .map_err(|_| parse_err(path, 1, "bad cluster count"))?,
                )
            }
            _ => return Err(parse_err(path, 1, format!("unexpected header field `{field}`"))),
        }
    }
    let clusters = clusters.ok_or_else(|| parse_err(path, 1, "header lacks clusters="))?;
    let mut assignment = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (u, c) = line
            .split_once(',')
            .ok_or_else(|| parse_err(path, i + 1, "expected `user,cluster`"))?;
        let u: usize = u.trim().parse().map_err(|_| parse_err(path, i + 1, "bad user index"))?;
        let c: usize = c
            .trim()
            .parse()
            .map_err(|_| parse_err(path, i + 1, "bad cluster index"))?;
        if u != assignment.len() {
            return Err(parse_err(path, i + 1, "user indices must be consecutive from 0"));
        }
        assignment.push(c);
    }
    ClusterAssignment::new(domain, clusters, assignment)
}
