//! Named parameter storage and its text checkpoint format.
//!
//! Checkpoint layout, one parameter per line after a header:
//!
//! ```text
//! # noisyact checkpoint v1
//! <name> <dims joined by ','> <value> <value> ...
//! ```
//!
//! Values are written with 17 significant digits (`{:.16e}`), which round-trips
//! every finite `f64` exactly. Names may not contain whitespace.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::{Gradients, Tape, VarId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const HEADER: &str = "# noisyact checkpoint v1";

/// Gradients keyed by parameter name.
pub type Grads = BTreeMap<String, Tensor>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("bad parameter name {name:?}")));
        }
        if self.params.insert(name.clone(), value).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for (name, t) in &self.params {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let dims = if dims.is_empty() { "-".to_string() } else { dims.join(",") };
            write!(out, "{name} {dims}").unwrap();
            for v in t.data() {
                write!(out, " {v:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(HEADER) {
            return Err(Error::parse("checkpoint", "missing header"));
        }
        let mut store = Self::new();
        for (lineno, line) in lines.enumerate() {
            let ctx = || format!("checkpoint line {}", lineno + 2);
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_ascii_whitespace();
            let name = fields.next().ok_or_else(|| Error::parse(ctx(), "empty line"))?;
            let dims = fields.next().ok_or_else(|| Error::parse(ctx(), "missing shape"))?;
            let shape = if dims == "-" {
                Vec::new()
            } else {
                dims.split(',')
                    .map(|d| d.parse::<usize>().map_err(|e| Error::parse(ctx(), e.to_string())))
                    .collect::<Result<Vec<_>>>()?
            };
            let data = fields
                .map(|v| v.parse::<f64>().map_err(|e| Error::parse(ctx(), e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            let t = Tensor::new(shape, data).map_err(|e| Error::parse(ctx(), e.to_string()))?;
            store.insert(name, t)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Parameter name to tape variable mapping for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, VarId>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<VarId> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn try_get(&self, name: &str) -> Option<VarId> {
        self.vars.get(name).copied()
    }

    /// Pulls each parameter's gradient out of a backward pass.
    pub fn grads(&self, gradients: &Gradients) -> Result<Grads> {
        self.vars
            .iter()
            .map(|(k, &v)| Ok((k.clone(), gradients.get(v)?.clone())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let mut s = ParamStore::new();
        s.insert("a.weight", Tensor::matrix(2, 2, vec![0.1, -1.0 / 3.0, 1e-300, 6.02e23]).unwrap())
            .unwrap();
        s.insert("a.p", Tensor::vector(vec![std::f64::consts::PI])).unwrap();
        s.insert("s", Tensor::scalar(-0.0)).unwrap();
        let back = ParamStore::from_text(&s.to_text()).unwrap();
        for (k, v) in s.iter() {
            let w = back.get(k).unwrap();
            assert_eq!(v.shape(), w.shape());
            for (a, b) in v.data().iter().zip(w.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(ParamStore::from_text("nope").is_err());
        assert!(ParamStore::from_text(&format!("{HEADER}\nw 2 1.0")).is_err());
        let mut s = ParamStore::new();
        assert!(s.insert("bad name", Tensor::scalar(0.0)).is_err());
    }
}
