use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::GraphError;

/// What to return for a token missing from the table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OovPolicy {
    /// Unit-norm vector derived from a seeded hash of the token.
    Hashed { seed: u64 },
    Zero,
    Error,
}

impl Default for OovPolicy {
    fn default() -> Self {
        OovPolicy::Hashed { seed: 0 }
    }
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token to vector map with a fixed dimensionality.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    oov: OovPolicy,
}

impl EmbeddingTable {
    pub fn new(dim: usize, oov: OovPolicy) -> Result<Self, GraphError> {
        if dim == 0 {
            return Err(GraphError::ZeroDimension("embedding"));
        }
        Ok(Self {
            dim,
            vectors: HashMap::new(),
            oov,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<(), GraphError> {
        if vector.len() != self.dim {
            return Err(GraphError::FeatureDim {
                what: "embedding",
                expected: self.dim,
                actual: vector.len(),
            });
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    pub fn lookup(&self, token: &str) -> Result<Vec<f64>, GraphError> {
        if let Some(v) = self.vectors.get(token) {
            return Ok(v.clone());
        }
        match self.oov {
            OovPolicy::Hashed { seed } => Ok(hashed_unit_vector(token, seed, self.dim)),
            OovPolicy::Zero => Ok(vec![0.0; self.dim]),
            OovPolicy::Error => Err(GraphError::OutOfVocabulary(token.to_string())),
        }
    }

    /// Mean of the token vectors.
    pub fn embed_phrase<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<f64>, GraphError> {
        if tokens.is_empty() {
            return Err(GraphError::EmptyPhrase);
        }
        let mut acc = vec![0.0; self.dim];
        for t in tokens {
            for (a, v) in acc.iter_mut().zip(self.lookup(t.as_ref())?) {
                *a += v;
            }
        }
        let n = tokens.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    /// Reads whitespace-separated `token v1 .. vd` lines (GloVe text layout).
    pub fn read_text<R: BufRead>(reader: R, oov: OovPolicy) -> Result<Self, GraphError> {
        let mut table: Option<Self> = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| GraphError::Io(e.to_string()))?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values = parts
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| GraphError::Parse {
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
            let t = match &mut table {
                Some(t) => t,
                None => table.insert(Self::new(values.len(), oov)?),
            };
            t.insert(token, values).map_err(|e| GraphError::Parse {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        }
        table.ok_or(GraphError::Parse {
            line: 0,
            message: "embedding file has no vectors".into(),
        })
    }

    /// Writes the table sorted by token so output is deterministic.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut tokens: Vec<&String> = self.vectors.keys().collect();
        tokens.sort();
        for t in tokens {
            write!(out, "{t}")?;
            for v in &self.vectors[t] {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Deterministic pseudo-embedding: FNV-1a hash of the token seeds a
/// Gaussian draw that is then normalized to unit length.
pub fn hashed_unit_vector(token: &str, seed: u64, dim: usize) -> Vec<f64> {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}
