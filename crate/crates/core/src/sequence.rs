use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// Which side of a prompt/response pair a sequence belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Role {
    #[default]
    Prompt,
    Response,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Prompt => "prompt",
            Role::Response => "response",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prompt" => Ok(Role::Prompt),
            "response" => Ok(Role::Response),
            other => Err(Error::input(format!("unknown role {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Modality {
    #[default]
    Text,
    Image,
    Other,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Other => "other",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            "other" => Ok(Modality::Other),
            other => Err(Error::input(format!("unknown modality {other:?}"))),
        }
    }
}

/// An ordered set of `n` finite vectors of dimension `d`, stored row-major.
///
/// `layer == None` denotes the raw embedding layer (before the first block).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    data: Vec<f64>,
    n: usize,
    d: usize,
    pub id: String,
    pub role: Role,
    pub modality: Modality,
    pub layer: Option<u32>,
}

impl EmbeddingSequence {
    /// Builds a sequence from a row-major buffer of `n * d` values.
    pub fn from_flat(data: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::input(format!("empty sequence shape [{n}, {d}]")));
        }
        if data.len() != n * d {
            return Err(Error::input(format!(
                "buffer holds {} values, shape [{n}, {d}] needs {}",
                data.len(),
                n * d
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "non-finite component at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self {
            data,
            n,
            d,
            id: String::new(),
            role: Role::Prompt,
            modality: Modality::Text,
            layer: None,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::input(format!(
                "row {i} has dimension {}, expected {d}",
                rows[i].len()
            )));
        }
        Self::from_flat(rows.into_iter().flatten().collect(), n, d)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    pub fn with_layer(mut self, layer: Option<u32>) -> Self {
        self.layer = layer;
        self
    }

    /// Number of vectors.
    pub fn len(&self) -> usize {
        self.n
    }

    /// Always false: a valid sequence holds at least one vector.
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Vector dimension.
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    /// Rows of `self` followed by rows of `other`; metadata is taken from `self`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.d != other.d {
            return Err(Error::input(format!(
                "dimension mismatch: {} vs {}",
                self.d, other.d
            )));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Self {
            data,
            n: self.n + other.n,
            ..self.clone_meta()
        })
    }

    /// Keeps the rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::input("cannot select zero rows"));
        }
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(Error::input(format!("row index {i} out of range {}", self.n)));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self {
            data,
            n: indices.len(),
            ..self.clone_meta()
        })
    }

    /// Scales every row to unit Euclidean norm. Zero rows are left as-is.
    pub fn normalize_rows(&self) -> Self {
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.d) {
            let norm = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>());
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        out
    }

    fn clone_meta(&self) -> Self {
        Self {
            data: Vec::new(),
            n: 0,
            d: self.d,
            id: self.id.clone(),
            role: self.role,
            modality: self.modality,
            layer: self.layer,
        }
    }
}
