use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::Liveness;
use crate::error::{Error, Result};

/// Feature rows with their labels, as exported for offline plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub dim: usize,
    /// Row-major `len x dim`.
    pub features: Vec<f64>,
    pub identity: Vec<usize>,
    pub liveness: Vec<Liveness>,
    pub domain: Vec<usize>,
}

impl Embeddings {
    pub fn len(&self) -> usize {
        self.identity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identity.is_empty()
    }

    pub fn to_csv(&self) -> Result<String> {
        let n = self.len();
        if self.features.len() != n * self.dim || self.liveness.len() != n || self.domain.len() != n {
            return Err(Error::invalid("embedding columns have mismatched lengths"));
        }
        let mut out: Vec<String> = (0..self.dim).map(|i| format!("dim_{i}")).collect();
        out.extend(["identity", "liveness", "domain"].map(String::from));
        let mut s = out.join(",");
        s.push('\n');
        for i in 0..n {
            for v in &self.features[i * self.dim..(i + 1) * self.dim] {
                let _ = write!(s, "{v},");
            }
            let _ = writeln!(s, "{},{},{}", self.identity[i], self.liveness[i], self.domain[i]);
        }
        Ok(s)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty embedding file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[cols.len() - 3..] != ["identity", "liveness", "domain"] {
            return Err(Error::Format(format!("unexpected embedding header `{header}`")));
        }
        let dim = cols.len() - 3;
        let mut e =
            Embeddings { dim, features: Vec::new(), identity: Vec::new(), liveness: Vec::new(), domain: Vec::new() };
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(Error::Format(format!("row {} has {} fields, expected {}", n + 1, f.len(), cols.len())));
            }
            let bad = |v: &str| Error::Format(format!("row {}: cannot parse `{v}`", n + 1));
            for v in &f[..dim] {
                e.features.push(v.parse().map_err(|_| bad(v))?);
            }
            e.identity.push(f[dim].parse().map_err(|_| bad(f[dim]))?);
            e.liveness.push(f[dim + 1].parse()?);
            e.domain.push(f[dim + 2].parse().map_err(|_| bad(f[dim + 2]))?);
        }
        Ok(e)
    }
}

pub fn export_embeddings(e: &Embeddings, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, e.to_csv()?)?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Embeddings> {
    Embeddings::from_csv(&fs::read_to_string(path)?)
}
