//! Absolute norms on coordinate blocks and their sup-norm equivalence constants.

use crate::error::{Error, Result};
use crate::rational::{serde_rational, to_f64};
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub enum NormKind {
    Sup,
    Euclidean,
    /// ℓ_p with rational `p ≥ 1`.
    P(BigRational),
    /// `max_i w_i |x_i|` with strictly positive rational weights.
    WeightedSup(Vec<BigRational>),
}

/// An absolute norm on `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormSpec {
    pub kind: NormKind,
    pub dim: usize,
    fast: Vec<f64>,
}

impl NormSpec {
    pub fn new(kind: NormKind, dim: usize) -> Result<Self> {
        let fast = match &kind {
            NormKind::P(p) => vec![to_f64(p)],
            NormKind::WeightedSup(w) => w.iter().map(to_f64).collect(),
            _ => Vec::new(),
        };
        let s = NormSpec { kind, dim, fast };
        s.validate()?;
        Ok(s)
    }

    pub fn sup(dim: usize) -> Self {
        NormSpec { kind: NormKind::Sup, dim, fast: Vec::new() }
    }

    pub fn euclidean(dim: usize) -> Self {
        NormSpec { kind: NormKind::Euclidean, dim, fast: Vec::new() }
    }

    pub fn p(p: BigRational, dim: usize) -> Result<Self> {
        NormSpec::new(NormKind::P(p), dim)
    }

    pub fn weighted_sup(weights: Vec<BigRational>) -> Result<Self> {
        let dim = weights.len();
        NormSpec::new(NormKind::WeightedSup(weights), dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("norm dimension must be positive".into()));
        }
        match &self.kind {
            NormKind::P(p) if *p < BigRational::from_integer(1.into()) => {
                Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")))
            }
            NormKind::WeightedSup(w) if w.len() != self.dim => {
                Err(Error::DimensionMismatch { expected: self.dim, got: w.len() })
            }
            NormKind::WeightedSup(w) if w.iter().any(|x| !x.is_positive()) => {
                Err(Error::InvalidArgument("weightedSup weights must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.eval_unchecked(x))
    }

    /// Evaluation without the length check, for hot enumeration loops.
    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match &self.kind {
            NormKind::Sup => x.iter().fold(0.0_f64, |a, v| a.max(v.abs())),
            NormKind::WeightedSup(_) => x
                .iter()
                .zip(&self.fast)
                .fold(0.0_f64, |a, (v, wi)| a.max(wi * v.abs())),
            NormKind::Euclidean => scaled_p(x, 2.0),
            NormKind::P(_) => scaled_p(x, self.fast[0]),
        }
    }

    /// Exact evaluation on rational input; `None` for kinds that are not rational-valued.
    pub fn eval_exact(&self, x: &[BigRational]) -> Result<Option<BigRational>> {
        check_dim(self.dim, x.len())?;
        Ok(match &self.kind {
            NormKind::Sup => Some(x.iter().map(|v| v.abs()).fold(BigRational::zero(), max_q)),
            NormKind::WeightedSup(w) => {
                Some(x.iter().zip(w).map(|(v, wi)| v.abs() * wi).fold(BigRational::zero(), max_q))
            }
            _ => None,
        })
    }

    /// `(c_low, c_high)` with `c_low·‖x‖_∞ ≤ ‖x‖ ≤ c_high·‖x‖_∞`, tight for every kind.
    pub fn equivalence_constants(&self) -> (f64, f64) {
        let d = self.dim as f64;
        match &self.kind {
            NormKind::Sup => (1.0, 1.0),
            NormKind::Euclidean => (1.0, d.sqrt()),
            NormKind::P(p) => (1.0, d.powf(1.0 / to_f64(p))),
            NormKind::WeightedSup(w) => {
                let ws: Vec<f64> = w.iter().map(to_f64).collect();
                (
                    ws.iter().cloned().fold(f64::INFINITY, f64::min),
                    ws.iter().cloned().fold(0.0, f64::max),
                )
            }
        }
    }

    /// Smallest norm of a nonzero integer vector; for absolute norms this is a unit vector.
    pub fn min_integer_norm(&self) -> f64 {
        (0..self.dim)
            .map(|i| {
                let mut e = vec![0.0; self.dim];
                e[i] = 1.0;
                self.eval_unchecked(&e)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_sup_like(&self) -> bool {
        matches!(self.kind, NormKind::Sup | NormKind::WeightedSup(_))
    }
}

fn max_q(a: BigRational, b: BigRational) -> BigRational {
    if b > a {
        b
    } else {
        a
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn scaled_p(x: &[f64], p: f64) -> f64 {
    let m = x.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    if p == 2.0 {
        return m * x.iter().map(|v| (v / m) * (v / m)).sum::<f64>().sqrt();
    }
    if p == 1.0 {
        return x.iter().map(|v| v.abs()).sum();
    }
    m * x.iter().map(|v| (v.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p)
}

/// `max(‖x‖_left, ‖y‖_right)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductNormSpec {
    pub left: NormSpec,
    pub right: NormSpec,
}

impl ProductNormSpec {
    pub fn new(left: NormSpec, right: NormSpec) -> Self {
        ProductNormSpec { left, right }
    }

    pub fn sup(m: usize, n: usize) -> Self {
        ProductNormSpec::new(NormSpec::sup(m), NormSpec::sup(n))
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.left.eval(x)?.max(self.right.eval(y)?))
    }

    pub fn equivalence_constants(&self) -> (f64, f64) {
        let (l0, l1) = self.left.equivalence_constants();
        let (r0, r1) = self.right.equivalence_constants();
        (l0.min(r0), l1.max(r1))
    }
}

/// The norm used on `R^{m+n}`: either a product of block norms or one norm on the whole space.
#[derive(Debug, Clone, PartialEq)]
pub enum AmbientNorm {
    Product(ProductNormSpec),
    Full(NormSpec),
}

impl AmbientNorm {
    pub fn sup_product(m: usize, n: usize) -> Self {
        AmbientNorm::Product(ProductNormSpec::sup(m, n))
    }

    pub fn dim(&self) -> usize {
        match self {
            AmbientNorm::Product(p) => p.left.dim + p.right.dim,
            AmbientNorm::Full(s) => s.dim,
        }
    }

    /// Evaluates on the concatenation `(x, y)`; `x` has length `m`.
    pub fn eval_split(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            AmbientNorm::Product(p) => p.left.eval_unchecked(x).max(p.right.eval_unchecked(y)),
            AmbientNorm::Full(s) => {
                let mut v = Vec::with_capacity(x.len() + y.len());
                v.extend_from_slice(x);
                v.extend_from_slice(y);
                s.eval_unchecked(&v)
            }
        }
    }

    pub fn eval(&self, v: &[f64]) -> Result<f64> {
        check_dim(self.dim(), v.len())?;
        Ok(match self {
            AmbientNorm::Product(p) => {
                let (x, y) = v.split_at(p.left.dim);
                self.eval_split(x, y)
            }
            AmbientNorm::Full(s) => s.eval_unchecked(v),
        })
    }

    pub fn equivalence_constants(&self) -> (f64, f64) {
        match self {
            AmbientNorm::Product(p) => p.equivalence_constants(),
            AmbientNorm::Full(s) => s.equivalence_constants(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AmbientNorm::Product(p) => {
                p.left.validate()?;
                p.right.validate()
            }
            AmbientNorm::Full(s) => s.validate(),
        }
    }

    pub fn is_sup(&self) -> bool {
        match self {
            AmbientNorm::Product(p) => {
                matches!(p.left.kind, NormKind::Sup) && matches!(p.right.kind, NormKind::Sup)
            }
            AmbientNorm::Full(s) => matches!(s.kind, NormKind::Sup),
        }
    }
}

/// JSON form `{"kind": ..., "p": ..., "weights": [...], "dim": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSpecJson {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<serde_json::Value>>,
    pub dim: usize,
}

impl TryFrom<&NormSpecJson> for NormSpec {
    type Error = Error;

    fn try_from(j: &NormSpecJson) -> Result<NormSpec> {
        let kind = match j.kind.as_str() {
            "sup" => NormKind::Sup,
            "euclidean" => NormKind::Euclidean,
            "p" => {
                let p = j.p.as_ref().ok_or_else(|| Error::InvalidArgument("norm.p is required for kind p".into()))?;
                NormKind::P(serde_rational::from_value(p)?)
            }
            "weightedSup" => {
                let w = j
                    .weights
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("norm.weights is required for kind weightedSup".into()))?;
                NormKind::WeightedSup(w.iter().map(serde_rational::from_value).collect::<Result<_>>()?)
            }
            other => return Err(Error::InvalidArgument(format!("unknown norm kind {other:?}"))),
        };
        NormSpec::new(kind, j.dim)
    }
}

impl From<&NormSpec> for NormSpecJson {
    fn from(s: &NormSpec) -> Self {
        let q = |r: &BigRational| serde_json::Value::String(crate::rational::format_rational(r));
        match &s.kind {
            NormKind::Sup => NormSpecJson { kind: "sup".into(), p: None, weights: None, dim: s.dim },
            NormKind::Euclidean => NormSpecJson { kind: "euclidean".into(), p: None, weights: None, dim: s.dim },
            NormKind::P(p) => NormSpecJson { kind: "p".into(), p: Some(q(p)), weights: None, dim: s.dim },
            NormKind::WeightedSup(w) => NormSpecJson {
                kind: "weightedSup".into(),
                p: None,
                weights: Some(w.iter().map(q).collect()),
                dim: s.dim,
            },
        }
    }
}
