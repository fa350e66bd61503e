//! Flat parameter vectors with a named block table, and their text format.
//!
//! ```text
//! PARAMS v1 <nblocks> <total>
//! <name> <offset> <length> <rows> <cols>     (one line per block)
//! <values, eight per line>
//! META <tag> <count>                         (optional, repeatable)
//! key=value                                  (count lines)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{EngineError, Tensor};
use crate::error::{Error, Result};
use crate::fieldio::{format_value, parse_count, parse_number};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    blocks: Vec<Block>,
}

impl ParamVector {
    /// Lays out `(name, rows, cols)` blocks contiguously in the given order.
    pub fn from_blocks<S: Into<String>>(
        shapes: Vec<(S, usize, usize)>,
        values: Vec<f64>,
    ) -> std::result::Result<Self, EngineError> {
        let mut blocks = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for (name, rows, cols) in shapes {
            let name = name.into();
            if blocks.iter().any(|b: &Block| b.name == name) {
                return Err(EngineError::Params(format!("duplicate block `{name}`")));
            }
            blocks.push(Block {
                name,
                offset,
                rows,
                cols,
            });
            offset += rows * cols;
        }
        if offset != values.len() {
            return Err(EngineError::Params(format!(
                "blocks cover {offset} values but {} were supplied",
                values.len()
            )));
        }
        Ok(Self { values, blocks })
    }

    pub fn zeros<S: Into<String>>(shapes: Vec<(S, usize, usize)>) -> Self {
        let n = shapes.iter().map(|(_, r, c)| r * c).sum();
        Self::from_blocks(shapes, vec![0.0; n]).expect("consistent layout")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len(), "layout length");
        Self {
            values,
            blocks: self.blocks.clone(),
        }
    }

    pub fn block_index(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.block_index(name).map(|i| {
            let b = &self.blocks[i];
            &self.values[b.offset..b.offset + b.len()]
        })
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let i = self.block_index(name)?;
        let b = &self.blocks[i];
        Some(&mut self.values[b.offset..b.offset + b.len()])
    }

    pub fn block_tensor(&self, i: usize) -> Tensor {
        let b = &self.blocks[i];
        Array2::from_shape_vec((b.rows, b.cols), self.values[b.offset..b.offset + b.len()].to_vec())
            .expect("block shape")
    }

    pub fn to_text(&self, meta: &[(&str, Vec<(String, String)>)]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "PARAMS v1 {} {}", self.blocks.len(), self.values.len());
        for b in &self.blocks {
            let _ = writeln!(out, "{} {} {} {} {}", b.name, b.offset, b.len(), b.rows, b.cols);
        }
        for chunk in self.values.chunks(8) {
            let line: Vec<String> = chunk.iter().map(|&v| format_value(v)).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        for (tag, entries) in meta {
            let _ = writeln!(out, "META {tag} {}", entries.len());
            for (k, v) in entries {
                let _ = writeln!(out, "{k}={v}");
            }
        }
        out
    }

    /// Parses a parameter file; returns the vector and its metadata sections.
    pub fn from_text(text: &str) -> Result<(Self, Vec<(String, Vec<(String, String)>)>)> {
        let mut lines = LineReader { lines: text.lines(), offset: 0 };
        let (_, header) = lines.next_line().ok_or_else(|| Error::parse("byte 0", "empty parameter file"))?;
        let mut head = header.split_ascii_whitespace();
        if head.next() != Some("PARAMS") {
            return Err(Error::parse("byte 0", "expected `PARAMS` header"));
        }
        match head.next() {
            Some("v1") => {}
            Some(v) => return Err(Error::Version(v.to_string())),
            None => return Err(Error::parse("byte 7", "missing version")),
        }
        let nblocks = parse_count(0, head.next(), "block count")?;
        let total = parse_count(0, head.next(), "value count")?;

        let mut shapes = Vec::with_capacity(nblocks);
        let mut expected_offset = 0;
        for _ in 0..nblocks {
            let (at, line) = lines.next_line().ok_or_else(|| Error::parse("end of file", "truncated block table"))?;
            let f: Vec<&str> = line.split_ascii_whitespace().collect();
            if f.len() != 5 {
                return Err(Error::parse(format!("byte {at}"), format!("bad block line `{line}`")));
            }
            let off = parse_count(at, Some(f[1]), "offset")?;
            let len = parse_count(at, Some(f[2]), "length")?;
            let rows = parse_count(at, Some(f[3]), "rows")?;
            let cols = parse_count(at, Some(f[4]), "cols")?;
            if off != expected_offset || len != rows * cols {
                return Err(Error::parse(format!("byte {at}"), format!("inconsistent block `{}`", f[0])));
            }
            expected_offset += len;
            shapes.push((f[0].to_string(), rows, cols));
        }
        if expected_offset != total {
            return Err(Error::parse("block table", format!("blocks cover {expected_offset} of {total} values")));
        }

        let mut values = Vec::with_capacity(total);
        let mut meta = Vec::new();
        while values.len() < total {
            let (at, line) = lines.next_line().ok_or_else(|| {
                Error::parse("end of file", format!("length mismatch: expected {total} values"))
            })?;
            for (o, tok) in crate::fieldio::tokens(line) {
                if values.len() == total {
                    return Err(Error::parse(format!("byte {}", at + o), "length mismatch: extra value"));
                }
                values.push(parse_number(at + o, tok)?);
            }
        }
        while let Some((at, line)) = lines.next_line() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_ascii_whitespace().collect();
            if f.len() != 3 || f[0] != "META" {
                return Err(Error::parse(format!("byte {at}"), format!("expected META section, got `{line}`")));
            }
            let count = parse_count(at, Some(f[2]), "entry count")?;
            let mut entries = Vec::with_capacity(count);
            for _ in 0..count {
                let (at, l) = lines.next_line().ok_or_else(|| Error::parse("end of file", "truncated META section"))?;
                let (k, v) = l
                    .split_once('=')
                    .ok_or_else(|| Error::parse(format!("byte {at}"), format!("expected key=value, got `{l}`")))?;
                entries.push((k.to_string(), v.to_string()));
            }
            meta.push((f[1].to_string(), entries));
        }
        let pv = ParamVector::from_blocks(shapes, values)?;
        Ok((pv, meta))
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &[(&str, Vec<(String, String)>)]) -> Result<()> {
        fs::write(path, self.to_text(meta))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Vec<(String, Vec<(String, String)>)>)> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

struct LineReader<'a> {
    lines: std::str::Lines<'a>,
    offset: usize,
}

impl<'a> LineReader<'a> {
    /// Next line with its starting byte offset.
    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        let l = self.lines.next()?;
        let at = self.offset;
        self.offset += l.len() + 1;
        Some((at, l))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_and_lookup() {
        let p = ParamVector::from_blocks(vec![("a", 2, 2), ("b", 1, 3)], (0..7).map(f64::from).collect()).unwrap();
        assert_eq!(p.block("b").unwrap(), &[4.0, 5.0, 6.0]);
        assert_eq!(p.blocks()[1].offset, 4);
        assert!(ParamVector::from_blocks(vec![("a", 2, 2)], vec![0.0; 3]).is_err());
        assert!(ParamVector::from_blocks(vec![("a", 1, 1), ("a", 1, 1)], vec![0.0; 2]).is_err());
    }

    #[test]
    fn meta_sections_survive() {
        let p = ParamVector::zeros(vec![("w", 3, 1)]);
        let text = p.to_text(&[("vaeconfig", vec![("latent_dim".into(), "4".into())])]);
        let (q, meta) = ParamVector::from_text(&text).unwrap();
        assert_eq!(q, p);
        assert_eq!(meta[0].0, "vaeconfig");
        assert_eq!(meta[0].1[0], ("latent_dim".to_string(), "4".to_string()));
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(ParamVector::from_text("PARAMS v9 0 0\n"), Err(Error::Version(_))));
        assert!(ParamVector::from_text("PARAMS v1 1 2\nw 0 2 1 2\n1.0\n").is_err());
        assert!(ParamVector::from_text("PARAMS v1 1 2\nw 0 3 1 2\n1.0 2.0\n").is_err());
        assert!(ParamVector::from_text("PARAMS v1 1 1\nw 0 1 1 1\nnan\n").is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip(vals in proptest::collection::vec(-1e6f64..1e6, 1..40), split in 0usize..40) {
            let split = split.min(vals.len());
            let n = vals.len();
            let p = ParamVector::from_blocks(vec![("a", 1, split), ("b", n - split, 1)], vals).unwrap();
            let (q, _) = ParamVector::from_text(&p.to_text(&[])).unwrap();
            prop_assert_eq!(q, p);
        }
    }
}
