//! Text formats.
//!
//! Point sets: a header line `d m`, then `m` lines of `d` whitespace-separated
//! coordinates. Matchings and ground truth: one `i j` line per source node,
//! 0-based. Blank lines and lines starting with `#` are ignored everywhere.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::assignment::Matching;
use crate::error::{Error, Result};
use crate::geometry::PointSet;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines<R: BufRead>(reader: R) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            out.push((k + 1, t.to_string()));
        }
    }
    Ok(out)
}

fn parse_usize(tok: &str, line: usize, what: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("{what} must be a non-negative integer, got {tok:?}")))
}

pub fn read_points<R: BufRead>(reader: R) -> Result<PointSet> {
    let lines = content_lines(reader)?;
    let (hline, header) = lines.first().ok_or_else(|| parse_err(1, "empty file, expected header \"d m\""))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 2 {
        return Err(parse_err(*hline, format!("header must be \"d m\", got {header:?}")));
    }
    let d = parse_usize(fields[0], *hline, "dimension")?;
    let m = parse_usize(fields[1], *hline, "point count")?;
    if d == 0 {
        return Err(parse_err(*hline, "dimension must be positive"));
    }
    let body = &lines[1..];
    if body.len() != m {
        let line = body.get(m).map_or(lines.last().map_or(1, |l| l.0), |l| l.0);
        return Err(parse_err(line, format!("header announces {m} points, found {}", body.len())));
    }
    let mut coords = DMatrix::zeros(m, d);
    for (i, (line, text)) in body.iter().enumerate() {
        let vals: Vec<&str> = text.split_whitespace().collect();
        if vals.len() != d {
            return Err(parse_err(*line, format!("expected {d} coordinates, found {}", vals.len())));
        }
        for (k, tok) in vals.iter().enumerate() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(*line, format!("not a number: {tok:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(*line, format!("coordinate is not finite: {tok:?}")));
            }
            coords[(i, k)] = v;
        }
    }
    PointSet::new(coords)
}

pub fn parse_points(text: &str) -> Result<PointSet> {
    read_points(text.as_bytes())
}

pub fn write_points<W: Write>(mut out: W, points: &PointSet) -> Result<()> {
    writeln!(out, "{} {}", points.dim(), points.len())?;
    for row in points.coords().row_iter() {
        let vals: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", vals.join(" "))?;
    }
    Ok(())
}

/// Reads `i j` pairs. Every source `0..sources` must appear exactly once and
/// every target must be below `targets`.
pub fn read_matching<R: BufRead>(reader: R, sources: usize, targets: usize) -> Result<Matching> {
    let mut assignment = vec![usize::MAX; sources];
    let mut owner = vec![usize::MAX; targets];
    let mut last = 0;
    for (line, text) in content_lines(reader)? {
        last = line;
        let f: Vec<&str> = text.split_whitespace().collect();
        if f.len() != 2 {
            return Err(parse_err(line, format!("expected \"i j\", got {text:?}")));
        }
        let i = parse_usize(f[0], line, "source index")?;
        let j = parse_usize(f[1], line, "target index")?;
        if i >= sources {
            return Err(parse_err(line, format!("source {i} out of range (m = {sources})")));
        }
        if j >= targets {
            return Err(parse_err(line, format!("target {j} out of range (n = {targets})")));
        }
        if assignment[i] != usize::MAX {
            return Err(parse_err(line, format!("source {i} listed twice")));
        }
        if owner[j] != usize::MAX {
            return Err(parse_err(line, format!("target {j} already matched to source {}", owner[j])));
        }
        assignment[i] = j;
        owner[j] = i;
    }
    if let Some(i) = assignment.iter().position(|&j| j == usize::MAX) {
        return Err(parse_err(last.max(1), format!("source {i} has no entry")));
    }
    Matching::new(assignment, targets)
}

pub fn parse_matching(text: &str, sources: usize, targets: usize) -> Result<Matching> {
    read_matching(text.as_bytes(), sources, targets)
}

pub fn write_matching<W: Write>(mut out: W, matching: &Matching) -> Result<()> {
    for (i, &j) in matching.assignment().iter().enumerate() {
        writeln!(out, "{i} {j}")?;
    }
    Ok(())
}

/// One index per line.
pub fn write_indices<W: Write>(mut out: W, indices: &[usize]) -> Result<()> {
    for j in indices {
        writeln!(out, "{j}")?;
    }
    Ok(())
}
