//! Parsing of the textual arguments shared by all commands, and the JSON config overlay.

use crate::CliError;
use dirichlet_core::approx::{preset, PsiSpec};
use dirichlet_core::lattice_flow::{MatrixPoint, Weights};
use dirichlet_core::norms::{NormSpec, NormSpecJson, ProductNormSpec};
use dirichlet_core::rational::parse_rational;
use num_rational::BigRational;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const PRESETS: [&str; 3] = ["golden", "sqrt2", "e"];

/// Reads `path` as a JSON object and lays its keys over `effective`. Keys not already
/// present in `effective` are rejected, so typos never pass silently.
pub fn overlay(effective: &mut Map<String, Value>, path: &std::path::Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let file: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
    let Value::Object(obj) = file else {
        return Err(CliError::Config("config must be a JSON object".into()));
    };
    for (k, v) in obj {
        if !effective.contains_key(&k) {
            return Err(CliError::Config(format!("unknown config key {k:?}")));
        }
        effective.insert(k, v);
    }
    Ok(())
}

pub fn to_map<T: Serialize>(v: &T) -> Map<String, Value> {
    match serde_json::to_value(v).expect("argument records serialize") {
        Value::Object(m) => m,
        _ => unreachable!("argument records are structs"),
    }
}

pub fn from_map<T: DeserializeOwned>(m: &Map<String, Value>) -> Result<T, CliError> {
    serde_json::from_value(Value::Object(m.clone())).map_err(|e| CliError::Config(format!("config: {e}")))
}

pub fn required<T: Clone>(v: &Option<T>, name: &str) -> Result<T, CliError> {
    v.clone().ok_or_else(|| CliError::Config(format!("missing required field {name:?}")))
}

fn rational(s: &str, what: &str) -> Result<BigRational, CliError> {
    parse_rational(s).map_err(|e| CliError::Config(format!("{what}: {e}")))
}

fn rational_list(s: &str, what: &str) -> Result<Vec<BigRational>, CliError> {
    s.split(',').map(|x| rational(x, what)).collect()
}

/// A preset name, or `m·n` comma-separated rationals in row-major order.
pub fn theta(spec: &str, m: usize, n: usize, precision: u32) -> Result<MatrixPoint, CliError> {
    if PRESETS.contains(&spec) {
        if (m, n) != (1, 1) {
            return Err(CliError::Config(format!("preset {spec:?} is a single number; use m = n = 1")));
        }
        let x = preset(spec, precision).map_err(|e| CliError::Config(e.to_string()))?;
        return Ok(MatrixPoint::scalar(x));
    }
    let entries = rational_list(spec, "theta")?;
    if entries.len() != m * n {
        return Err(CliError::Config(format!("theta has {} entries, expected m*n = {}", entries.len(), m * n)));
    }
    MatrixPoint::new(m, n, entries).map_err(|e| CliError::Config(e.to_string()))
}

/// A norm on `R^dim` given as a name (`sup`, `euclidean`, `p:<p>`, `weightedSup:<w1,w2,...>`)
/// or as a JSON object `{"kind": ..., "p": ..., "weights": [...]}`.
pub fn norm(v: &Value, dim: usize, field: &str) -> Result<NormSpec, CliError> {
    let bad = |e: String| CliError::Config(format!("{field}: {e}"));
    match v {
        Value::String(s) => {
            let (kind, arg) = s.split_once(':').unwrap_or((s.as_str(), ""));
            let spec = match kind {
                "sup" => Ok(NormSpec::sup(dim)),
                "euclidean" => Ok(NormSpec::euclidean(dim)),
                "p" => NormSpec::p(rational(arg, field)?, dim),
                "weightedSup" => NormSpec::weighted_sup(rational_list(arg, field)?),
                other => return Err(bad(format!("unknown norm {other:?}"))),
            };
            let spec = spec.map_err(|e| bad(e.to_string()))?;
            if spec.dim != dim {
                return Err(bad(format!("norm has dimension {}, expected {dim}", spec.dim)));
            }
            Ok(spec)
        }
        Value::Object(obj) => {
            let mut obj = obj.clone();
            obj.entry("dim").or_insert(Value::from(dim));
            let j: NormSpecJson = serde_json::from_value(Value::Object(obj)).map_err(|e| bad(e.to_string()))?;
            let spec = NormSpec::try_from(&j).map_err(|e| bad(e.to_string()))?;
            if spec.dim != dim {
                return Err(bad(format!("norm has dimension {}, expected {dim}", spec.dim)));
            }
            Ok(spec)
        }
        _ => Err(bad("expected a name or an object".into())),
    }
}

/// The product norm: `norm` on the `m` error coordinates, `qnorm` (defaulting to the same
/// kind) on the `n` coordinates of `q`.
pub fn product_norm(norm_v: &Value, qnorm_v: &Option<Value>, m: usize, n: usize) -> Result<ProductNormSpec, CliError> {
    let left = norm(norm_v, m, "norm")?;
    let right = norm(qnorm_v.as_ref().unwrap_or(norm_v), n, "qnorm")?;
    Ok(ProductNormSpec::new(left, right))
}

/// `ψ(t) = C·t^{−γ}·log(e+t)^{−s}` written as `[C*]t^-γ[*log^-s]`, e.g. `t^-1`, `2*t^-3/2`.
pub fn psi(s: &str) -> Result<PsiSpec, CliError> {
    let bad = || CliError::Config(format!("psi: expected [C*]t^-gamma[*log^-s], got {s:?}"));
    let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let mut c = BigRational::from_integer(1.into());
    let mut gamma = None;
    let mut log_s = BigRational::from_integer(0.into());
    for part in compact.split('*') {
        if let Some(g) = part.strip_prefix("t^-") {
            gamma = Some(rational(g, "psi")?);
        } else if let Some(l) = part.strip_prefix("log^-") {
            log_s = rational(l, "psi")?;
        } else if gamma.is_none() {
            c = rational(part, "psi").map_err(|_| bad())?;
        } else {
            return Err(bad());
        }
    }
    PsiSpec::new(c, gamma.ok_or_else(bad)?, log_s).map_err(|e| CliError::Config(e.to_string()))
}

/// `a1,...,am;b1,...,bn`, each block summing to one.
pub fn weights(s: &Option<String>, m: usize, n: usize) -> Result<Weights, CliError> {
    let Some(s) = s else { return Ok(Weights::equal(m, n)) };
    let (a, b) = s.split_once(';').ok_or_else(|| CliError::Config("weights: expected a1,...,am;b1,...,bn".into()))?;
    let (a, b) = (rational_list(a, "weights")?, rational_list(b, "weights")?);
    if a.len() != m || b.len() != n {
        return Err(CliError::Config(format!("weights: expected {m} and {n} entries")));
    }
    Weights::new(a, b).map_err(|e| CliError::Config(e.to_string()))
}

pub fn times(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .ok()
                .filter(|t| *t > 0.0 && t.is_finite())
                .ok_or_else(|| CliError::Config(format!("t: not a positive time: {x:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use dirichlet_core::rational::ratio;

    #[test]
    fn psi_forms() {
        assert_eq!(psi("t^-1").unwrap(), PsiSpec::inverse_t());
        let p = psi("2 * t^-3/2 * log^-1").unwrap();
        assert_eq!((p.c, p.gamma, p.s), (ratio(2, 1), ratio(3, 2), ratio(1, 1)));
        assert!(psi("t^2").is_err());
        assert!(psi("t^-0").is_err());
    }

    #[test]
    fn norm_forms() {
        assert_eq!(norm(&Value::from("sup"), 2, "norm").unwrap(), NormSpec::sup(2));
        assert!(norm(&Value::from("p:3/2"), 3, "norm").is_ok());
        assert!(norm(&Value::from("weightedSup:1,2"), 3, "norm").is_err());
        let missing = norm(&serde_json::json!({"kind": "p"}), 2, "norm").unwrap_err();
        assert!(missing.to_string().contains("norm.p"), "{missing}");
        let no_kind = norm(&serde_json::json!({"p": 2}), 2, "norm").unwrap_err();
        assert!(no_kind.to_string().contains("kind"), "{no_kind}");
    }

    #[test]
    fn theta_forms() {
        assert_eq!(theta("1/2,1/3", 2, 1, 40).unwrap().entries(), &[ratio(1, 2), ratio(1, 3)]);
        assert!(theta("1/2", 2, 1, 40).is_err());
        assert!(theta("golden", 2, 1, 40).is_err());
        assert!(theta("golden", 1, 1, 10).is_ok());
    }

    #[test]
    fn weight_forms() {
        assert!(weights(&None, 2, 1).unwrap().is_equal());
        assert!(weights(&Some("2/3,1/3;1".into()), 2, 1).is_ok());
        assert!(weights(&Some("1/2,1/3;1".into()), 2, 1).is_err());
    }
}
