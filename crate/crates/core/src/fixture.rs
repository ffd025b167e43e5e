//! Versioned plain-text matrix fixtures.
//!
//! ```text
//! coda-fixture v1 name=<name> dims=A:2x2,b:2x1 crc32=<hex>
//! A
//! 1.0000000000000000e0 0.0000000000000000e0
//! ...
//! ```
//!
//! The checksum covers every line after the header, newline-terminated.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CodaError, Result};
use crate::types::Matrix;

const MAGIC: &str = "coda-fixture";
const VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub name: String,
    pub entries: Vec<(String, Matrix)>,
}

fn data_err(msg: impl Into<String>) -> CodaError {
    CodaError::Data(msg.into())
}

fn check_token(s: &str, what: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == ',' || c == ':' || c == '=') {
        return Err(data_err(format!("invalid fixture {what} '{s}'")));
    }
    Ok(())
}

impl Fixture {
    pub fn new(name: &str) -> Self {
        Self { name: name.into(), entries: Vec::new() }
    }

    pub fn push(&mut self, key: &str, m: Matrix) {
        self.entries.push((key.into(), m));
    }

    pub fn get(&self, key: &str) -> Result<&Matrix> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, m)| m)
            .ok_or_else(|| data_err(format!("fixture '{}' has no entry '{key}'", self.name)))
    }

    fn body(&self) -> String {
        let mut out = String::new();
        for (key, m) in &self.entries {
            out.push_str(key);
            out.push('\n');
            for r in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:.16e}", m[(r, c)])).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let body = self.body();
        let dims: Vec<String> =
            self.entries.iter().map(|(k, m)| format!("{k}:{}x{}", m.nrows(), m.ncols())).collect();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{MAGIC} {VERSION} name={} dims={} crc32={:08x}",
            self.name,
            dims.join(","),
            crc32fast::hash(body.as_bytes())
        );
        out + &body
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (header, body) = text.split_once('\n').ok_or_else(|| data_err("empty fixture"))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(MAGIC) {
            return Err(data_err("not a coda fixture"));
        }
        match fields.next() {
            Some(VERSION) => {}
            other => return Err(data_err(format!("unsupported fixture version {other:?}"))),
        }
        let mut name = None;
        let mut dims = None;
        let mut crc = None;
        for f in fields {
            match f.split_once('=') {
                Some(("name", v)) => name = Some(v.to_string()),
                Some(("dims", v)) => dims = Some(v.to_string()),
                Some(("crc32", v)) => {
                    crc = Some(u32::from_str_radix(v, 16).map_err(|_| data_err(format!("bad checksum '{v}'")))?)
                }
                _ => return Err(data_err(format!("unknown header field '{f}'"))),
            }
        }
        let name = name.ok_or_else(|| data_err("fixture header lacks name"))?;
        let dims = dims.ok_or_else(|| data_err("fixture header lacks dims"))?;
        let crc = crc.ok_or_else(|| data_err("fixture header lacks crc32"))?;
        if crc32fast::hash(body.as_bytes()) != crc {
            return Err(data_err(format!("fixture '{name}' failed its checksum")));
        }

        let mut lines = body.lines();
        let mut entries = Vec::new();
        for spec in dims.split(',').filter(|s| !s.is_empty()) {
            let (key, shape) = spec.split_once(':').ok_or_else(|| data_err(format!("bad dims entry '{spec}'")))?;
            let (r, c) = shape.split_once('x').ok_or_else(|| data_err(format!("bad shape '{shape}'")))?;
            let parse_dim = |s: &str| s.parse::<usize>().map_err(|_| data_err(format!("bad dimension '{s}'")));
            let (r, c) = (parse_dim(r)?, parse_dim(c)?);
            if lines.next() != Some(key) {
                return Err(data_err(format!("expected entry '{key}'")));
            }
            let mut m = Matrix::zeros(r, c);
            // Rows of a zero-column entry are written as empty lines.
            for i in 0..r {
                let line = lines.next().ok_or_else(|| data_err(format!("entry '{key}' is truncated")))?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| data_err(format!("bad number '{t}'"))))
                    .collect::<Result<_>>()?;
                if vals.len() != c {
                    return Err(data_err(format!("entry '{key}' row {i} has {} values, expected {c}", vals.len())));
                }
                for (j, v) in vals.into_iter().enumerate() {
                    m[(i, j)] = v;
                }
            }
            entries.push((key.to_string(), m));
        }
        Ok(Self { name, entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        check_token(&self.name, "name")?;
        for (k, _) in &self.entries {
            check_token(k, "key")?;
        }
        std::fs::write(path, self.to_text()).map_err(|source| CodaError::Io { path: path.into(), source })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CodaError::Io { path: path.into(), source })?;
        Self::parse(&text)
    }
}
