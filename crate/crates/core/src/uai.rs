//! Reading and writing the UAI model and evidence formats.
//!
//! Model files hold probability tables; they are converted to log-space on
//! read (`p = 0` becomes `-inf`) and exponentiated on write. Only binary
//! variables are accepted.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pgm::{Assignment, GraphicalModel, LogPotential};

struct Tokens<'a> {
    inner: std::str::SplitWhitespace<'a>,
    position: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.split_whitespace(),
            position: 0,
        }
    }

    fn next(&mut self, what: &str) -> Result<&'a str> {
        let tok = self.inner.next().ok_or_else(|| {
            Error::parse(
                self.position,
                format!("unexpected end of input, expected {what}"),
            )
        })?;
        self.position += 1;
        Ok(tok)
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let tok = self.next(what)?;
        tok.parse()
            .map_err(|_| Error::parse(self.position - 1, format!("expected {what}, found {tok:?}")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let tok = self.next(what)?;
        tok.parse()
            .map_err(|_| Error::parse(self.position - 1, format!("expected {what}, found {tok:?}")))
    }

    fn finish(mut self) -> Result<()> {
        match self.inner.next() {
            Some(tok) => Err(Error::parse(
                self.position,
                format!("trailing token {tok:?}"),
            )),
            None => Ok(()),
        }
    }
}

/// Parses a UAI model document.
pub fn parse_uai(text: &str) -> Result<GraphicalModel> {
    parse_uai_named(text, "model")
}

fn read_artifact(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => e.into(),
    })
}

/// Reads a model file, naming the model after the file stem.
pub fn load_uai(path: &Path) -> Result<GraphicalModel> {
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    parse_uai_named(&read_artifact(path)?, name)
}

pub fn load_evidence(path: &Path, num_vars: usize) -> Result<Assignment> {
    parse_evidence(&read_artifact(path)?, num_vars)
}

pub fn parse_uai_named(text: &str, name: &str) -> Result<GraphicalModel> {
    let mut toks = Tokens::new(text);
    let kind = toks.next("model type")?;
    if !matches!(kind.to_ascii_uppercase().as_str(), "MARKOV" | "BAYES") {
        return Err(Error::parse(0, format!("unknown model type {kind:?}")));
    }
    let num_vars = toks.usize("variable count")?;
    for v in 0..num_vars {
        let card = toks.usize("cardinality")?;
        if card != 2 {
            return Err(Error::parse(
                toks.position - 1,
                format!("variable {v} has cardinality {card}; only binary variables are supported"),
            ));
        }
    }
    let num_factors = toks.usize("factor count")?;
    let mut scopes = Vec::with_capacity(num_factors);
    for i in 0..num_factors {
        let size = toks.usize("scope size")?;
        let mut scope = Vec::with_capacity(size);
        for _ in 0..size {
            let v = toks.usize("scope variable")?;
            if v >= num_vars {
                return Err(Error::parse(
                    toks.position - 1,
                    format!("factor {i} references variable {v} outside 0..{num_vars}"),
                ));
            }
            scope.push(v);
        }
        scopes.push(scope);
    }
    let mut factors = Vec::with_capacity(num_factors);
    for (i, scope) in scopes.into_iter().enumerate() {
        let count = toks.usize("table size")?;
        let expected = 1usize << scope.len();
        if count != expected {
            return Err(Error::parse(
                toks.position - 1,
                format!("factor {i} declares {count} entries but its scope needs {expected}"),
            ));
        }
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let p = toks.f64("probability")?;
            if !(p >= 0.0) || p.is_infinite() {
                return Err(Error::parse(
                    toks.position - 1,
                    format!("factor {i} has invalid probability {p}"),
                ));
            }
            table.push(if p == 0.0 { f64::NEG_INFINITY } else { p.ln() });
        }
        factors.push(LogPotential::new(scope, table)?);
    }
    toks.finish()?;
    GraphicalModel::new(name, num_vars, factors)
}

fn write_prob(out: &mut String, p: f64) {
    if p == 0.0 || (1e-4..1e15).contains(&p) {
        let _ = write!(out, "{p}");
    } else {
        let _ = write!(out, "{p:e}");
    }
}

/// Writes a model as a MARKOV-type UAI document. Output is deterministic.
pub fn serialize_uai(model: &GraphicalModel) -> String {
    let mut out = String::new();
    out.push_str("MARKOV\n");
    let _ = writeln!(out, "{}", model.num_vars());
    let cards: Vec<String> = model
        .cardinalities()
        .iter()
        .map(ToString::to_string)
        .collect();
    let _ = writeln!(out, "{}", cards.join(" "));
    let _ = writeln!(out, "{}", model.factors().len());
    for f in model.factors() {
        let _ = write!(out, "{}", f.arity());
        for v in f.scope() {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    for f in model.factors() {
        out.push('\n');
        let _ = writeln!(out, "{}", f.table().len());
        for &t in f.table() {
            out.push(' ');
            write_prob(&mut out, t.exp());
        }
        out.push('\n');
    }
    out
}

/// Parses an evidence document: a count followed by `index value` pairs.
///
/// Every pair present is validated before the count is checked, so a
/// repeated index is reported as such even when the count is also wrong.
pub fn parse_evidence(text: &str, num_vars: usize) -> Result<Assignment> {
    let mut toks = Tokens::new(text);
    let count = toks.usize("evidence count")?;
    let mut pairs = Vec::with_capacity(count);
    let mut seen = vec![false; num_vars];
    while let Some(tok) = toks.inner.next() {
        toks.position += 1;
        let var: usize = tok.parse().map_err(|_| {
            Error::parse(
                toks.position - 1,
                format!("expected evidence index, found {tok:?}"),
            )
        })?;
        let val = toks.usize("evidence value")?;
        if var >= num_vars {
            return Err(Error::InvalidAssignment(format!(
                "index {var} out of range for {num_vars} variables"
            )));
        }
        if val > 1 {
            return Err(Error::InvalidAssignment(format!(
                "value {val} for variable {var} is not binary"
            )));
        }
        if std::mem::replace(&mut seen[var], true) {
            return Err(Error::InvalidAssignment(format!("duplicate index {var}")));
        }
        pairs.push((var, val as u8));
    }
    if pairs.len() != count {
        return Err(Error::parse(
            0,
            format!("evidence declares {count} pairs but lists {}", pairs.len()),
        ));
    }
    Assignment::try_from_pairs(pairs)
}

pub fn serialize_evidence(evidence: &Assignment) -> String {
    let mut out = evidence.len().to_string();
    for (v, x) in evidence.iter() {
        let _ = write!(out, " {v} {x}");
    }
    out.push('\n');
    out
}
