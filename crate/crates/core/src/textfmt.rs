//! Plain-text vector serialization: first line `V D`, then one row per
//! word, `word v1 ... vD`, fixed-point with six decimals. Character and
//! radical rows use the reserved `#CHAR:<pos>:` and `#RAD:` prefixes.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{parse_err, Error, Result};

/// Writes rows in text format. `rows` supplies `(name, vector)` pairs;
/// every vector must have length `dims`.
pub fn save_vectors<'a>(
    rows: impl Iterator<Item = (&'a str, &'a [f64])> + Clone,
    dims: usize,
    path: &Path,
) -> Result<()> {
    let count = rows.clone().count();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{count} {dims}")?;
    for (name, vec) in rows {
        assert_eq!(vec.len(), dims, "row {name} has wrong dimension");
        write!(out, "{name}")?;
        for v in vec {
            write!(out, " {v:.6}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// In-memory result of loading a text-format vector file.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFile {
    pub dims: usize,
    names: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl VectorFile {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.index
            .get(name)
            .map(|&i| &self.data[i * self.dims..(i + 1) * self.dims])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    /// Word rows only: skips the reserved `#CHAR:`/`#RAD:` prefixes.
    pub fn words(&self) -> impl Iterator<Item = (&str, &[f64])> {
        (0..self.len())
            .filter(|&i| {
                let n = self.name(i);
                !n.starts_with("#CHAR:") && !n.starts_with("#RAD:")
            })
            .map(|i| (self.name(i), self.row(i)))
    }
}

pub fn load_vectors(path: &Path) -> Result<VectorFile> {
    let file = std::fs::File::open(path)?;
    load_vectors_from(std::io::BufReader::new(file))
}

pub fn load_vectors_from(reader: impl BufRead) -> Result<VectorFile> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header"))?
        .map_err(Error::from)?;
    let (count, dims) = header
        .split_once(' ')
        .ok_or_else(|| parse_err(1, "expected `count dims` header"))?;
    let count: usize = count.parse().map_err(|e| parse_err(1, e))?;
    let dims: usize = dims.parse().map_err(|e| parse_err(1, e))?;
    let mut names = Vec::with_capacity(count);
    let mut index = HashMap::with_capacity(count);
    let mut data = Vec::with_capacity(count * dims);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let name = fields
            .next()
            .ok_or_else(|| parse_err(lineno, "empty row"))?;
        let mut row = Vec::with_capacity(dims);
        for f in fields {
            row.push(f.parse::<f64>().map_err(|e| parse_err(lineno, e))?);
        }
        if row.len() != dims {
            return Err(parse_err(
                lineno,
                format!("expected {dims} values, got {}", row.len()),
            ));
        }
        if index.contains_key(name) {
            return Err(Error::DuplicateWord(name.to_string()));
        }
        index.insert(name.to_string(), names.len());
        names.push(name.to_string());
        data.extend_from_slice(&row);
    }
    if names.len() != count {
        return Err(Error::Config(format!(
            "header promised {count} rows, file has {}",
            names.len()
        )));
    }
    Ok(VectorFile {
        dims,
        names,
        index,
        data,
    })
}
