//! Text serialization of [`SvmModel`].
//!
//! ```text
//! icp-svm-model 1
//! kernel tanimoto-rbf 0.5
//! c 10
//! class_weights 19 1
//! bias -0.25
//! objective -3.5
//! iterations 120
//! converged true
//! support_vectors 2
//! 0.5 17 +1 3:2 9:1
//! -0.5 40 -1 2:1
//! sha256 <hex digest of every preceding byte>
//! ```
//!
//! Each support-vector line is `coef train_index label entries...`, entries
//! in the 1-based `index:value` form of the dataset format.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ClassWeights, SvmModel};
use crate::data::{Label, SparseVector};
use crate::kernel::KernelSpec;

const MAGIC: &str = "icp-svm-model 1";

#[derive(Debug, Error)]
pub enum ModelFormatError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checksum mismatch: model file is corrupt or was modified")]
    Checksum,
    #[error("malformed model file at line {line}: {message}")]
    Malformed { line: usize, message: String },
}

pub fn model_to_string(model: &SvmModel) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "kernel {}", model.kernel);
    let _ = writeln!(out, "c {}", model.c);
    let _ = writeln!(
        out,
        "class_weights {} {}",
        model.class_weights.active, model.class_weights.inactive
    );
    let _ = writeln!(out, "bias {}", model.bias);
    let _ = writeln!(out, "objective {}", model.objective);
    let _ = writeln!(out, "iterations {}", model.iterations);
    let _ = writeln!(out, "converged {}", model.converged);
    let _ = writeln!(out, "support_vectors {}", model.support_vectors.len());
    for i in 0..model.support_vectors.len() {
        let label = if model.sv_labels[i] == Label::Active { "+1" } else { "-1" };
        let _ = write!(out, "{} {} {}", model.dual_coefs[i], model.sv_indices[i], label);
        for (idx, v) in model.support_vectors[i].iter() {
            let _ = write!(out, " {}:{}", idx + 1, v);
        }
        out.push('\n');
    }
    let digest = hex::encode(Sha256::digest(out.as_bytes()));
    let _ = writeln!(out, "sha256 {digest}");
    out
}

pub fn write_model(path: &Path, model: &SvmModel) -> Result<(), ModelFormatError> {
    fs::write(path, model_to_string(model))?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<SvmModel, ModelFormatError> {
    model_from_str(&fs::read_to_string(path)?)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str, ModelFormatError> {
        let (n, l) = self.inner.next().ok_or(ModelFormatError::Malformed {
            line: self.line + 1,
            message: "unexpected end of file".into(),
        })?;
        self.line = n + 1;
        Ok(l)
    }

    fn err(&self, message: impl Into<String>) -> ModelFormatError {
        ModelFormatError::Malformed {
            line: self.line,
            message: message.into(),
        }
    }

    fn field(&mut self, key: &str) -> Result<&'a str, ModelFormatError> {
        let l = self.next()?;
        l.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| self.err(format!("expected `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, ModelFormatError> {
        let v = self.field(key)?;
        v.trim().parse().map_err(|_| self.err(format!("bad value for `{key}`: {v:?}")))
    }
}

pub fn model_from_str(text: &str) -> Result<SvmModel, ModelFormatError> {
    let body_end = text
        .rfind("sha256 ")
        .ok_or(ModelFormatError::Checksum)?;
    let (body, trailer) = text.split_at(body_end);
    let expected = trailer.trim_end().strip_prefix("sha256 ").unwrap_or("");
    if hex::encode(Sha256::digest(body.as_bytes())) != expected {
        return Err(ModelFormatError::Checksum);
    }

    let mut lines = Lines {
        inner: body.lines().enumerate(),
        line: 0,
    };
    if lines.next()? != MAGIC {
        return Err(lines.err("not an SVM model file"));
    }
    let kernel_text = lines.field("kernel")?;
    let kernel: KernelSpec = kernel_text
        .parse()
        .map_err(|e| lines.err(format!("bad kernel: {e}")))?;
    let c: f64 = lines.parse("c")?;
    let weights = lines.field("class_weights")?;
    let (wa, wi) = weights
        .split_once(' ')
        .and_then(|(a, i)| Some((a.parse::<f64>().ok()?, i.parse::<f64>().ok()?)))
        .ok_or_else(|| lines.err("bad class weights"))?;
    let bias: f64 = lines.parse("bias")?;
    let objective: f64 = lines.parse("objective")?;
    let iterations: usize = lines.parse("iterations")?;
    let converged: bool = lines.parse("converged")?;
    let count: usize = lines.parse("support_vectors")?;

    let mut support_vectors = Vec::with_capacity(count);
    let mut sv_labels = Vec::with_capacity(count);
    let mut dual_coefs = Vec::with_capacity(count);
    let mut sv_indices = Vec::with_capacity(count);
    for _ in 0..count {
        let l = lines.next()?;
        let mut tokens = l.split_whitespace();
        let coef = tokens
            .next()
            .and_then(|t| t.parse::<f64>().ok())
            .ok_or_else(|| lines.err("bad coefficient"))?;
        let index = tokens
            .next()
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| lines.err("bad training index"))?;
        let label = match tokens.next() {
            Some("+1") => Label::Active,
            Some("-1") => Label::Inactive,
            _ => return Err(lines.err("bad label")),
        };
        let mut pairs = Vec::new();
        for t in tokens {
            let (i, v) = t
                .split_once(':')
                .and_then(|(i, v)| Some((i.parse::<u32>().ok()?, v.parse::<f64>().ok()?)))
                .filter(|(i, _)| *i >= 1)
                .ok_or_else(|| lines.err(format!("bad entry {t:?}")))?;
            pairs.push((i - 1, v));
        }
        let sv = SparseVector::from_pairs(pairs).map_err(|e| lines.err(e.to_string()))?;
        support_vectors.push(sv);
        sv_labels.push(label);
        dual_coefs.push(coef);
        sv_indices.push(index);
    }
    if lines.inner.next().is_some() {
        return Err(lines.err("trailing data after support vectors"));
    }

    let model = SvmModel {
        kernel,
        support_vectors,
        sv_labels,
        dual_coefs,
        bias,
        c,
        class_weights: ClassWeights {
            active: wa,
            inactive: wi,
        },
        sv_indices,
        objective,
        iterations,
        converged,
    };
    model.validate().map_err(|e| ModelFormatError::Malformed {
        line: 0,
        message: e.to_string(),
    })?;
    Ok(model)
}
