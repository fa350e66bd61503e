//! Plain-text field files and dataset directories.
//!
//! A field file starts with `FIELD v1 <ny> <nx>` followed by `ny` lines of
//! `nx` values; line `j` holds cells `(0..nx, j)`. Values are written in the
//! shortest form that parses back to the identical `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{FieldDataset, Grid2D, ScalarField};

pub const META_FILE: &str = "meta.txt";

/// Round-trip formatting used by every numeric text format in the crate.
pub fn format_value(v: f64) -> String {
    format!("{v:?}")
}

pub fn field_to_string(field: &ScalarField) -> String {
    let g = field.grid();
    let mut out = String::with_capacity(g.len() * 24 + 32);
    let _ = writeln!(out, "FIELD v1 {} {}", g.ny(), g.nx());
    for row in field.values().chunks(g.nx()) {
        let line: Vec<String> = row.iter().map(|&v| format_value(v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_field(path: impl AsRef<Path>, field: &ScalarField) -> Result<()> {
    fs::write(path, field_to_string(field))?;
    Ok(())
}

pub fn read_field(path: impl AsRef<Path>) -> Result<ScalarField> {
    let text = fs::read_to_string(path)?;
    parse_field(&text)
}

/// Splits `text` into whitespace-separated tokens with their byte offsets.
pub(crate) fn tokens(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split_ascii_whitespace()
        .map(move |t| (t.as_ptr() as usize - text.as_ptr() as usize, t))
}

pub(crate) fn parse_number(offset: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(format!("byte {offset}"), format!("invalid number `{tok}`")))?;
    if !v.is_finite() {
        return Err(Error::parse(
            format!("byte {offset}"),
            format!("non-finite value `{tok}`"),
        ));
    }
    Ok(v)
}

pub(crate) fn parse_count(offset: usize, tok: Option<&str>, what: &str) -> Result<usize> {
    let tok = tok.ok_or_else(|| Error::parse(format!("byte {offset}"), format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::parse(format!("byte {offset}"), format!("invalid {what} `{tok}`")))
}

pub fn parse_field(text: &str) -> Result<ScalarField> {
    let header_end = text.find('\n').unwrap_or(text.len());
    let mut head = text[..header_end].split_ascii_whitespace();
    match head.next() {
        Some("FIELD") => {}
        other => {
            return Err(Error::parse(
                "byte 0",
                format!("expected `FIELD` header, found {:?}", other.unwrap_or("")),
            ))
        }
    }
    match head.next() {
        Some("v1") => {}
        Some(v) => return Err(Error::Version(v.to_string())),
        None => return Err(Error::parse("byte 6", "missing version")),
    }
    let ny = parse_count(0, head.next(), "row count")?;
    let nx = parse_count(0, head.next(), "column count")?;
    if let Some(extra) = head.next() {
        return Err(Error::parse("header", format!("unexpected token `{extra}`")));
    }
    let grid = Grid2D::new(nx, ny)?;
    let body = &text[header_end..];
    let mut values = Vec::with_capacity(grid.len());
    for (off, tok) in tokens(body) {
        let offset = header_end + off;
        if values.len() == grid.len() {
            return Err(Error::parse(
                format!("byte {offset}"),
                format!("length mismatch: more than {} values", grid.len()),
            ));
        }
        values.push(parse_number(offset, tok)?);
    }
    if values.len() != grid.len() {
        return Err(Error::parse(
            format!("byte {}", text.len()),
            format!(
                "length mismatch: header declares {} values, found {}",
                grid.len(),
                values.len()
            ),
        ));
    }
    ScalarField::new(grid, values)
}

pub fn write_meta(path: impl AsRef<Path>, entries: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in entries {
        let _ = writeln!(out, "{k}={v}");
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn parse_meta(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(format!("line {}", n + 1), format!("expected key=value, got `{line}`")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_meta(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    parse_meta(&fs::read_to_string(path)?)
}

pub fn field_file_name(index: usize) -> String {
    format!("field_{index:06}.txt")
}

pub fn write_dataset(dir: impl AsRef<Path>, dataset: &FieldDataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (i, f) in dataset.fields.iter().enumerate() {
        write_field(dir.join(field_file_name(i)), f)?;
    }
    let mut meta = dataset.metadata.clone();
    if !meta.iter().any(|(k, _)| k == "count") {
        meta.push(("count".into(), dataset.len().to_string()));
    }
    write_meta(dir.join(META_FILE), &meta)
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<FieldDataset> {
    let dir = dir.as_ref();
    let metadata = read_meta(dir.join(META_FILE))?;
    let mut fields = Vec::new();
    loop {
        let path = dir.join(field_file_name(fields.len()));
        if !path.exists() {
            break;
        }
        fields.push(read_field(&path)?);
    }
    let grid = fields
        .first()
        .map(|f| f.grid())
        .ok_or_else(|| Error::parse(dir.display().to_string(), "dataset contains no fields"))?;
    FieldDataset::new(grid, fields, metadata)
}
