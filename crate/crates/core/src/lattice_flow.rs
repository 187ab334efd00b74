//! Lattices `Λ_Θ`, diagonal flows and certified first-minimum enumeration.

use crate::approx::PsiSpec;
use crate::error::{Error, Result};
use crate::norms::AmbientNorm;
use crate::rational::{round_half_even, serde_rational_vec, to_f64};
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Default cap on enumerated candidate vectors.
pub const ENUM_BUDGET: u64 = 100_000_000;

/// Above this many `q` candidates the flowed first minimum switches from scanning `q` to a
/// reduced-basis enumeration.
const DIRECT_Q_RANGE: f64 = 32768.0;

fn dot_i128(nums: &[i128], q: &[i64]) -> Option<i128> {
    let mut s: i128 = 0;
    for (a, &qj) in nums.iter().zip(q) {
        s = s.checked_add(a.checked_mul(qj as i128)?)?;
    }
    Some(s)
}

/// One row of `Θ` over a common denominator: `Θ_ij = nums[j] / den`.
#[derive(Debug, Clone)]
struct ExactRow {
    den: BigInt,
    nums: Vec<BigInt>,
    small: Option<(i128, Vec<i128>)>,
}

impl ExactRow {
    fn new(entries: &[BigRational]) -> Self {
        let den = entries.iter().fold(BigInt::one(), |acc, e| acc.lcm(e.denom()));
        let nums: Vec<BigInt> = entries.iter().map(|e| e.numer() * (&den / e.denom())).collect();
        let limit = BigInt::one() << 120;
        let small = if den < limit && nums.iter().all(|a| a.abs() < limit) {
            Some((den.to_i128().unwrap(), nums.iter().map(|a| a.to_i128().unwrap()).collect()))
        } else {
            None
        };
        ExactRow { den, nums, small }
    }

    /// `(p, (Θq)_i − p)` with `p` the nearest integer (ties to even).
    fn round(&self, q: &[i64]) -> (i64, f64) {
        if let Some((den, nums)) = &self.small {
            let s = dot_i128(nums, q);
            if let Some(s) = s {
                let fl = s.div_euclid(*den);
                let rem = s - fl * den;
                // rem ∈ [0, den); compare 2·rem with den without overflow.
                let half = den - rem;
                let p = if rem < half {
                    fl
                } else if rem > half {
                    fl + 1
                } else if fl % 2 == 0 {
                    fl
                } else {
                    fl + 1
                };
                let r = s - p * den;
                return (p as i64, r as f64 / *den as f64);
            }
        }
        let (p, r) = self.round_big(q);
        (p.to_i64().expect("integer part fits in i64"), to_f64(&r))
    }

    fn round_big(&self, q: &[i64]) -> (BigInt, BigRational) {
        let s: BigInt = self.nums.iter().zip(q).map(|(a, &qj)| a * BigInt::from(qj)).sum();
        let x = BigRational::new(s, self.den.clone());
        let p = round_half_even(&x);
        let r = x - BigRational::from_integer(p.clone());
        (p, r)
    }

    /// `(Θq)_i − p` for a given `p`.
    fn offset(&self, q: &[i64], p: i64) -> f64 {
        if let Some((den, nums)) = &self.small {
            let s = dot_i128(nums, q);
            if let Some(r) = s.and_then(|s| (p as i128).checked_mul(*den).and_then(|pd| s.checked_sub(pd))) {
                return r as f64 / *den as f64;
            }
        }
        to_f64(&self.offset_exact(q, p))
    }

    fn offset_exact(&self, q: &[i64], p: i64) -> BigRational {
        let s: BigInt = self.nums.iter().zip(q).map(|(a, &qj)| a * BigInt::from(qj)).sum();
        BigRational::new(s - BigInt::from(p) * &self.den, self.den.clone())
    }
}

/// An `m×n` matrix with exact rational entries, stored row-major.
#[derive(Debug, Clone)]
pub struct MatrixPoint {
    m: usize,
    n: usize,
    entries: Vec<BigRational>,
    rows: Vec<ExactRow>,
}

impl PartialEq for MatrixPoint {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m && self.n == other.n && self.entries == other.entries
    }
}

impl MatrixPoint {
    pub fn new(m: usize, n: usize, entries: Vec<BigRational>) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidArgument("m and n must be positive".into()));
        }
        if entries.len() != m * n {
            return Err(Error::DimensionMismatch { expected: m * n, got: entries.len() });
        }
        let rows = (0..m).map(|i| ExactRow::new(&entries[i * n..(i + 1) * n])).collect();
        Ok(MatrixPoint { m, n, entries, rows })
    }

    pub fn zero(m: usize, n: usize) -> Self {
        MatrixPoint::new(m, n, vec![BigRational::zero(); m * n]).unwrap()
    }

    /// A 1×1 matrix.
    pub fn scalar(x: BigRational) -> Self {
        MatrixPoint::new(1, 1, vec![x]).unwrap()
    }

    /// Random matrix with entries `k / den`, `k` uniform so that entries lie in `[0, 1)`.
    pub fn random<R: Rng>(m: usize, n: usize, den: i64, rng: &mut R) -> Self {
        let entries = (0..m * n)
            .map(|_| BigRational::new(BigInt::from(rng.gen_range(0..den)), BigInt::from(den)))
            .collect();
        MatrixPoint::new(m, n, entries).unwrap()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.m + self.n
    }

    pub fn entries(&self) -> &[BigRational] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> &BigRational {
        &self.entries[i * self.n + j]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.entries.iter().map(to_f64).collect()
    }

    /// Nearest integer vector `p` to `Θq` (ties to even) and the offsets `Θq − p`.
    pub fn round_residual(&self, q: &[i64]) -> (Vec<i64>, Vec<f64>) {
        debug_assert_eq!(q.len(), self.n);
        self.rows.iter().map(|r| r.round(q)).unzip()
    }

    /// Offsets `Θq − p` for a given `p`, computed exactly then rounded to `f64`.
    pub fn offsets(&self, q: &[i64], p: &[i64]) -> Vec<f64> {
        self.rows.iter().zip(p).map(|(r, &pi)| r.offset(q, pi)).collect()
    }

    pub fn offsets_exact(&self, q: &[i64], p: &[i64]) -> Vec<BigRational> {
        self.rows.iter().zip(p).map(|(r, &pi)| r.offset_exact(q, pi)).collect()
    }

    /// `Θ·v` for a rational vector `v`.
    pub fn mul_vec(&self, v: &[BigRational]) -> Vec<BigRational> {
        (0..self.m)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * &v[j]).fold(BigRational::zero(), |a, b| a + b))
            .collect()
    }
}

/// Serialized form: `{"m": .., "n": .., "entries": ["a/b", ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixPointJson {
    pub m: usize,
    pub n: usize,
    #[serde(with = "serde_rational_vec")]
    pub entries: Vec<BigRational>,
}

impl From<&MatrixPoint> for MatrixPointJson {
    fn from(x: &MatrixPoint) -> Self {
        MatrixPointJson { m: x.m, n: x.n, entries: x.entries.clone() }
    }
}

impl TryFrom<MatrixPointJson> for MatrixPoint {
    type Error = Error;
    fn try_from(j: MatrixPointJson) -> Result<Self> {
        MatrixPoint::new(j.m, j.n, j.entries)
    }
}

/// Flow weights; each block sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub alpha: Vec<BigRational>,
    pub beta: Vec<BigRational>,
}

impl Weights {
    pub fn new(alpha: Vec<BigRational>, beta: Vec<BigRational>) -> Result<Self> {
        let one = BigRational::one();
        let ok = |v: &[BigRational]| {
            !v.is_empty() && v.iter().all(|x| x.is_positive()) && v.iter().fold(BigRational::zero(), |a, b| a + b) == one
        };
        if !ok(&alpha) || !ok(&beta) {
            return Err(Error::InvalidArgument("weights must be positive and sum to 1 in each block".into()));
        }
        Ok(Weights { alpha, beta })
    }

    pub fn equal(m: usize, n: usize) -> Self {
        let a = BigRational::new(BigInt::one(), BigInt::from(m));
        let b = BigRational::new(BigInt::one(), BigInt::from(n));
        Weights { alpha: vec![a; m], beta: vec![b; n] }
    }

    pub fn is_equal(&self) -> bool {
        self.alpha.iter().all(|a| *a == self.alpha[0]) && self.beta.iter().all(|b| *b == self.beta[0])
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha.iter().map(to_f64).fold(0.0, f64::max)
    }

    pub fn beta_min(&self) -> f64 {
        self.beta.iter().map(to_f64).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowSpec {
    /// `diag(t^{α_1}, …, t^{α_m}, t^{−β_1}, …, t^{−β_n})`.
    G(Weights),
    /// `diag(ψ(t)^{−1/m}·1_m, t^{−1/n}·1_n)`.
    APsi(PsiSpec),
}

impl FlowSpec {
    /// Diagonal entries at time `t`, split into the expanding and contracting blocks.
    pub fn scales(&self, t: f64, m: usize, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if !(t > 0.0) {
            return Err(Error::NonPositiveTime(t));
        }
        Ok(match self {
            FlowSpec::G(w) => {
                if w.alpha.len() != m {
                    return Err(Error::DimensionMismatch { expected: m, got: w.alpha.len() });
                }
                if w.beta.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: w.beta.len() });
                }
                (
                    w.alpha.iter().map(|a| t.powf(to_f64(a))).collect(),
                    w.beta.iter().map(|b| t.powf(-to_f64(b))).collect(),
                )
            }
            FlowSpec::APsi(psi) => {
                let e = psi.eval(t).powf(-1.0 / m as f64);
                (vec![e; m], vec![t.powf(-1.0 / n as f64); n])
            }
        })
    }
}

/// Unit-triangular basis `[[I_m, Θ], [0, I_n]]` of `Λ_Θ`, in exact arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeBasis {
    pub d: usize,
    /// Column vectors.
    pub columns: Vec<Vec<BigRational>>,
    pub det: BigRational,
}

impl LatticeBasis {
    pub fn new(columns: Vec<Vec<BigRational>>) -> Result<Self> {
        let d = columns.len();
        if columns.iter().any(|c| c.len() != d) {
            return Err(Error::InvalidArgument("basis must be square".into()));
        }
        let det = det_exact(&columns);
        if det.is_zero() {
            return Err(Error::InvalidArgument("basis is degenerate".into()));
        }
        Ok(LatticeBasis { d, columns, det })
    }

    pub fn to_real(&self) -> RealBasis {
        RealBasis { columns: self.columns.iter().map(|c| c.iter().map(to_f64).collect()).collect() }
    }
}

fn det_exact(columns: &[Vec<BigRational>]) -> BigRational {
    let d = columns.len();
    let mut a: Vec<Vec<BigRational>> = (0..d).map(|i| (0..d).map(|j| columns[j][i].clone()).collect()).collect();
    let mut det = BigRational::one();
    for k in 0..d {
        let Some(piv) = (k..d).find(|&r| !a[r][k].is_zero()) else {
            return BigRational::zero();
        };
        if piv != k {
            a.swap(piv, k);
            det = -det;
        }
        det *= a[k][k].clone();
        for r in k + 1..d {
            if a[r][k].is_zero() {
                continue;
            }
            let f = &a[r][k] / &a[k][k];
            for c in k..d {
                let v = &f * &a[k][c];
                a[r][c] -= v;
            }
        }
    }
    det
}

pub fn lattice_of(theta: &MatrixPoint) -> LatticeBasis {
    let (m, n) = (theta.m, theta.n);
    let d = m + n;
    let mut columns = vec![vec![BigRational::zero(); d]; d];
    for i in 0..m {
        columns[i][i] = BigRational::one();
    }
    for j in 0..n {
        for i in 0..m {
            columns[m + j][i] = theta.get(i, j).clone();
        }
        columns[m + j][m + j] = BigRational::one();
    }
    LatticeBasis { d, columns, det: BigRational::one() }
}

/// Image of the lattice vector `(Θq − p, q)` under the flow at time `t`.
pub fn flowed_vector(theta: &MatrixPoint, flow: &FlowSpec, t: f64, q: &[i64], p: &[i64]) -> Result<Vec<f64>> {
    if q.len() != theta.n {
        return Err(Error::DimensionMismatch { expected: theta.n, got: q.len() });
    }
    if p.len() != theta.m {
        return Err(Error::DimensionMismatch { expected: theta.m, got: p.len() });
    }
    let (e, c) = flow.scales(t, theta.m, theta.n)?;
    let off = theta.offsets(q, p);
    let mut v: Vec<f64> = off.iter().zip(&e).map(|(x, s)| x * s).collect();
    v.extend(q.iter().zip(&c).map(|(&qj, s)| qj as f64 * s));
    Ok(v)
}

/// A lattice vector attaining (or bounding) a first minimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowedVectorWitness {
    pub q: Vec<i64>,
    pub p: Vec<i64>,
    pub value: f64,
    pub t: f64,
}

/// A real basis given by its columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RealBasis {
    pub columns: Vec<Vec<f64>>,
}

impl RealBasis {
    pub fn d(&self) -> usize {
        self.columns.len()
    }

    pub fn identity(d: usize) -> Self {
        RealBasis {
            columns: (0..d)
                .map(|j| (0..d).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    pub fn apply(&self, c: &[i64]) -> Vec<f64> {
        let d = self.d();
        let mut v = vec![0.0; d];
        for (col, &cj) in self.columns.iter().zip(c) {
            if cj != 0 {
                for i in 0..d {
                    v[i] += cj as f64 * col[i];
                }
            }
        }
        v
    }

    pub fn det(&self) -> f64 {
        let d = self.d();
        let mut a: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| self.columns[j][i]).collect()).collect();
        let mut det = 1.0;
        for k in 0..d {
            let piv = (k..d).max_by(|&x, &y| a[x][k].abs().total_cmp(&a[y][k].abs())).unwrap();
            if a[piv][k] == 0.0 {
                return 0.0;
            }
            if piv != k {
                a.swap(piv, k);
                det = -det;
            }
            det *= a[k][k];
            for r in k + 1..d {
                let f = a[r][k] / a[k][k];
                for c in k..d {
                    a[r][c] -= f * a[k][c];
                }
            }
        }
        det
    }

    /// Rows of the inverse of the column matrix.
    fn inverse(&self) -> Option<Vec<Vec<f64>>> {
        let d = self.d();
        let mut a: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                let mut row: Vec<f64> = (0..d).map(|j| self.columns[j][i]).collect();
                row.extend((0..d).map(|j| if i == j { 1.0 } else { 0.0 }));
                row
            })
            .collect();
        for k in 0..d {
            let piv = (k..d).max_by(|&x, &y| a[x][k].abs().total_cmp(&a[y][k].abs()))?;
            if a[piv][k] == 0.0 {
                return None;
            }
            a.swap(piv, k);
            let p = a[k][k];
            for v in a[k].iter_mut() {
                *v /= p;
            }
            for r in 0..d {
                if r != k {
                    let f = a[r][k];
                    if f != 0.0 {
                        for c in 0..2 * d {
                            a[r][c] -= f * a[k][c];
                        }
                    }
                }
            }
        }
        Some(a.into_iter().map(|row| row[d..].to_vec()).collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pairwise size reduction; returns the reduced basis and the integer change of basis
/// (`reduced column j = Σ_i u[j][i]·original column i`).
fn size_reduce(basis: &RealBasis) -> (RealBasis, Vec<Vec<i64>>) {
    let d = basis.d();
    let mut cols = basis.columns.clone();
    let mut u: Vec<Vec<i64>> = (0..d).map(|j| (0..d).map(|i| (i == j) as i64).collect()).collect();
    for _ in 0..200 {
        let mut changed = false;
        for i in 0..d {
            for j in 0..d {
                if i == j {
                    continue;
                }
                let nj = dot(&cols[j], &cols[j]);
                if nj == 0.0 {
                    continue;
                }
                let k = (dot(&cols[i], &cols[j]) / nj).round();
                if k == 0.0 || !k.is_finite() || k.abs() > 1e12 {
                    continue;
                }
                let cand: Vec<f64> = cols[i].iter().zip(&cols[j]).map(|(a, b)| a - k * b).collect();
                if dot(&cand, &cand) < dot(&cols[i], &cols[i]) * (1.0 - 1e-12) {
                    cols[i] = cand;
                    let ki = k as i64;
                    let uj = u[j].clone();
                    for (a, b) in u[i].iter_mut().zip(uj) {
                        *a -= ki * b;
                    }
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    (RealBasis { columns: cols }, u)
}

fn canonical_sign(c: &[i64]) -> bool {
    match c.iter().find(|&&x| x != 0) {
        Some(&x) => x > 0,
        None => false,
    }
}

/// Calls `f` on every integer vector in the box `|c_i| ≤ bounds[i]` whose first nonzero
/// coordinate is positive, in lexicographic order.
fn for_each_half_box(bounds: &[i64], mut f: impl FnMut(&[i64])) {
    let d = bounds.len();
    if d == 0 {
        return;
    }
    let mut c: Vec<i64> = bounds.iter().map(|b| -b).collect();
    loop {
        if canonical_sign(&c) {
            f(&c);
        }
        let mut i = d;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if c[i] < bounds[i] {
                c[i] += 1;
                for k in i + 1..d {
                    c[k] = -bounds[k];
                }
                break;
            }
        }
    }
}

fn box_count(bounds: &[i64]) -> f64 {
    bounds.iter().map(|&b| (2 * b + 1) as f64).product::<f64>()
}

fn check_budget(count: f64, cap: u64) -> Result<()> {
    if count > cap as f64 {
        return Err(Error::Budget { needed: count, cap });
    }
    Ok(())
}

/// Shortest nonzero vector of a general lattice; returns its value, its coefficients in the
/// given basis (canonical sign) and the vector itself.
pub fn first_minimum(basis: &RealBasis, norm: &AmbientNorm) -> Result<(f64, Vec<i64>, Vec<f64>)> {
    first_minimum_with_budget(basis, norm, ENUM_BUDGET)
}

pub fn first_minimum_with_budget(
    basis: &RealBasis,
    norm: &AmbientNorm,
    cap: u64,
) -> Result<(f64, Vec<i64>, Vec<f64>)> {
    let d = basis.d();
    if norm.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: norm.dim() });
    }
    let (reduced, u) = size_reduce(basis);
    let inv = reduced
        .inverse()
        .ok_or_else(|| Error::InvalidArgument("basis is degenerate".into()))?;
    let (c_low, _) = norm.equivalence_constants();
    let radius = reduced
        .columns
        .iter()
        .map(|c| norm.eval(c).unwrap())
        .fold(f64::INFINITY, f64::min);
    let reach = radius / c_low * (1.0 + 1e-9);
    let bounds: Vec<i64> = inv
        .iter()
        .map(|row| (row.iter().map(|x| x.abs()).sum::<f64>() * reach).floor() as i64)
        .collect();
    check_budget(box_count(&bounds) / 2.0, cap)?;
    let mut best: Option<(f64, Vec<i64>, Vec<f64>)> = None;
    for_each_half_box(&bounds, |c| {
        let v = reduced.apply(c);
        let val = norm.eval(&v).unwrap();
        // Coefficients in the caller's basis.
        let mut orig = vec![0_i64; d];
        for (cj, uj) in c.iter().zip(&u) {
            for (o, x) in orig.iter_mut().zip(uj) {
                *o += cj * x;
            }
        }
        if !canonical_sign(&orig) {
            orig.iter_mut().for_each(|x| *x = -*x);
        }
        let better = match &best {
            None => true,
            Some((bv, bc, _)) => val < *bv || (val == *bv && orig < *bc),
        };
        if better {
            let v = basis.apply(&orig);
            best = Some((val, orig, v));
        }
    });
    best.ok_or_else(|| Error::InvalidArgument("empty enumeration".into()))
}

/// Visits every nonzero lattice vector with norm at most `radius` (one of each ± pair),
/// passing its coefficients in the given basis and the vector.
pub fn enumerate_ball(
    basis: &RealBasis,
    norm: &AmbientNorm,
    radius: f64,
    cap: u64,
    mut f: impl FnMut(&[i64], &[f64]),
) -> Result<()> {
    let d = basis.d();
    let (reduced, u) = size_reduce(basis);
    let inv = reduced
        .inverse()
        .ok_or_else(|| Error::InvalidArgument("basis is degenerate".into()))?;
    let (c_low, _) = norm.equivalence_constants();
    let reach = radius / c_low;
    let bounds: Vec<i64> = inv
        .iter()
        .map(|row| (row.iter().map(|x| x.abs()).sum::<f64>() * reach).floor() as i64)
        .collect();
    check_budget(box_count(&bounds) / 2.0, cap)?;
    let mut orig = vec![0_i64; d];
    for_each_half_box(&bounds, |c| {
        let v = reduced.apply(c);
        if norm.eval(&v).unwrap() <= radius {
            orig.iter_mut().for_each(|x| *x = 0);
            for (cj, uj) in c.iter().zip(&u) {
                for (o, x) in orig.iter_mut().zip(uj) {
                    *o += cj * x;
                }
            }
            f(&orig, &v);
        }
    });
    Ok(())
}

/// Blocks of the norm: `(right-block norm of q)` for tie-breaking.
fn q_norm_for_ties(norm: &AmbientNorm, q: &[i64]) -> f64 {
    let qf: Vec<f64> = q.iter().map(|&x| x as f64).collect();
    match norm {
        AmbientNorm::Product(p) => p.right.eval_unchecked(&qf),
        AmbientNorm::Full(_) => qf.iter().fold(0.0_f64, |a, v| a.max(v.abs())),
    }
}

/// `λ₁` of the flowed lattice `flow(t)·Λ_Θ`, exploiting the unit-triangular structure.
pub fn first_minimum_flowed(
    theta: &MatrixPoint,
    flow: &FlowSpec,
    t: f64,
    norm: &AmbientNorm,
) -> Result<(f64, FlowedVectorWitness)> {
    first_minimum_flowed_with_budget(theta, flow, t, norm, ENUM_BUDGET)
}

pub fn first_minimum_flowed_with_budget(
    theta: &MatrixPoint,
    flow: &FlowSpec,
    t: f64,
    norm: &AmbientNorm,
    cap: u64,
) -> Result<(f64, FlowedVectorWitness)> {
    let (m, n) = (theta.m, theta.n);
    if norm.dim() != m + n {
        return Err(Error::DimensionMismatch { expected: m + n, got: norm.dim() });
    }
    let (e, c) = flow.scales(t, m, n)?;
    let (c_low, c_high) = norm.equivalence_constants();
    let zeros_m = vec![0.0; m];
    let zeros_n = vec![0.0; n];

    // Upper bound: the rounded basis columns, and Minkowski's cube bound on the covolume.
    let mut bound = f64::INFINITY;
    for i in 0..m {
        let mut x = zeros_m.clone();
        x[i] = e[i];
        bound = bound.min(norm.eval_split(&x, &zeros_n));
    }
    for j in 0..n {
        let mut q = vec![0_i64; n];
        q[j] = 1;
        let (_, off) = theta.round_residual(&q);
        let x: Vec<f64> = off.iter().zip(&e).map(|(a, s)| a * s).collect();
        let mut y = zeros_n.clone();
        y[j] = c[j];
        bound = bound.min(norm.eval_split(&x, &y));
    }
    let covol: f64 = e.iter().chain(&c).map(|s| s.ln()).sum::<f64>();
    bound = bound.min(c_high * (covol / (m + n) as f64).exp() * (1.0 + 1e-9));
    let reach = bound / c_low * (1.0 + 1e-9);

    let q_bounds: Vec<i64> = c.iter().map(|s| (reach / s).floor() as i64).collect();
    let p_bounds: Vec<i64> = e.iter().map(|s| (reach / s).floor() as i64).collect();
    let wide = box_count(&q_bounds) / 2.0 > DIRECT_Q_RANGE || box_count(&p_bounds) / 2.0 > DIRECT_Q_RANGE;
    if !wide {
        check_budget(box_count(&q_bounds) / 2.0 + box_count(&p_bounds) / 2.0, cap)?;
    }

    // (value, ‖q‖, q, p)
    let mut best: Option<(f64, f64, Vec<i64>, Vec<i64>)> = None;
    let mut consider = |val: f64, q: &[i64], p: &[i64]| {
        let better = match &best {
            None => true,
            Some((bv, bqn, bq, bp)) => {
                if val != *bv {
                    val < *bv
                } else {
                    let qn = q_norm_for_ties(norm, q);
                    (qn, q, p) < (*bqn, bq.as_slice(), bp.as_slice())
                }
            }
        };
        if better {
            best = Some((val, q_norm_for_ties(norm, q), q.to_vec(), p.to_vec()));
        }
    };

    let mut x = vec![0.0; m];
    let mut y = vec![0.0; n];
    if wide {
        // Long boxes: enumerate through a reduced basis instead of scanning q.
        let qbox: Vec<f64> = c.iter().map(|s| reach / s).collect();
        let ebox: Vec<f64> = e.iter().map(|s| reach / s).collect();
        for (q, p) in box_points(theta, &qbox, &ebox, cap)? {
            let (p, off) = if q.iter().all(|&v| v == 0) { let off = theta.offsets(&q, &p); (p, off) } else { theta.round_residual(&q) };
            for j in 0..n {
                y[j] = c[j] * q[j] as f64;
            }
            for i in 0..m {
                x[i] = e[i] * off[i];
            }
            consider(norm.eval_split(&x, &y), &q, &p);
        }
        let (value, _, q, p) = best.ok_or_else(|| Error::InvalidArgument("empty enumeration".into()))?;
        return Ok((value, FlowedVectorWitness { q, p, value, t }));
    }

    // q = 0: vectors (−flow·p, 0).
    let zero_q = vec![0_i64; n];
    for_each_half_box(&p_bounds, |p| {
        for i in 0..m {
            x[i] = e[i] * p[i] as f64;
        }
        let val = norm.eval_split(&x, &zeros_n);
        consider(val, &zero_q, p);
    });

    for_each_half_box(&q_bounds, |q| {
        for j in 0..n {
            y[j] = c[j] * q[j] as f64;
        }
        if norm.eval_split(&zeros_m, &y) > bound * (1.0 + 1e-9) {
            return;
        }
        let (p, off) = theta.round_residual(q);
        for i in 0..m {
            x[i] = e[i] * off[i];
        }
        let val = norm.eval_split(&x, &y);
        consider(val, q, &p);
    });

    let (value, _, q, p) = best.expect("the unit vectors are always enumerated");
    Ok((value, FlowedVectorWitness { q, p, value, t }))
}

/// Scaled image of `(q, p)` for box enumeration: `((Θq − p)_i / ebox_i, q_j / qbox_j)`.
fn box_image(theta: &MatrixPoint, c: &[i64], qbox: &[f64], ebox: &[f64]) -> Vec<f64> {
    let (q, p) = c.split_at(theta.n);
    let off = theta.offsets(q, p);
    off.iter().zip(ebox).map(|(x, s)| x / s).chain(q.iter().zip(qbox).map(|(&x, s)| x as f64 / s)).collect()
}

fn gram_schmidt(images: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = images.len();
    let mut stars: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut norms = vec![0.0; d];
    let mut mu = vec![vec![0.0; d]; d];
    for i in 0..d {
        let mut v = images[i].clone();
        for j in 0..i {
            mu[i][j] = if norms[j] > 0.0 { dot(&images[i], &stars[j]) / norms[j] } else { 0.0 };
            for (a, b) in v.iter_mut().zip(&stars[j]) {
                *a -= mu[i][j] * b;
            }
        }
        norms[i] = dot(&v, &v);
        stars.push(v);
    }
    (norms, mu)
}

fn sub_multiple(a: &[i64], k: f64, b: &[i64]) -> Result<Vec<i64>> {
    let k = k as i128;
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            k.checked_mul(y as i128)
                .and_then(|ky| (x as i128).checked_sub(ky))
                .and_then(|v| i64::try_from(v).ok())
                .ok_or_else(|| Error::InvalidArgument("lattice reduction overflowed 64-bit coefficients".into()))
        })
        .collect()
}

/// LLL reduction of `Λ_Θ` in the box metric. The basis is kept as exact integer
/// coefficient vectors and every image is recomputed from them, so rounding never
/// accumulates.
fn reduce_for_box(theta: &MatrixPoint, qbox: &[f64], ebox: &[f64]) -> Result<(Vec<Vec<i64>>, Vec<Vec<f64>>)> {
    let (m, n) = (theta.m, theta.n);
    let d = m + n;
    let mut coeffs: Vec<Vec<i64>> = Vec::with_capacity(d);
    for j in 0..n {
        let mut q = vec![0_i64; n];
        q[j] = 1;
        let (p, _) = theta.round_residual(&q);
        coeffs.push(q.into_iter().chain(p).collect());
    }
    for i in 0..m {
        let mut c = vec![0_i64; d];
        c[n + i] = 1;
        coeffs.push(c);
    }
    let mut images: Vec<Vec<f64>> = coeffs.iter().map(|c| box_image(theta, c, qbox, ebox)).collect();
    let mut k = 1;
    let mut steps = 0;
    while k < d && steps < 20_000 {
        steps += 1;
        for _ in 0..8 {
            let (_, mu) = gram_schmidt(&images);
            let mut changed = false;
            for j in (0..k).rev() {
                let r = mu[k][j].round();
                if r != 0.0 && r.is_finite() {
                    coeffs[k] = sub_multiple(&coeffs[k], r, &coeffs[j])?;
                    images[k] = box_image(theta, &coeffs[k], qbox, ebox);
                    changed = true;
                    break;
                }
            }
            if !changed {
                break;
            }
        }
        let (norms, mu) = gram_schmidt(&images);
        if norms[k] >= (0.99 - mu[k][k - 1] * mu[k][k - 1]) * norms[k - 1] {
            k += 1;
        } else {
            coeffs.swap(k, k - 1);
            images.swap(k, k - 1);
            k = (k - 1).max(1);
        }
    }
    Ok((coeffs, images))
}

/// Every nonzero `(q, p)` (one of each ± pair, first nonzero coordinate of `(q, p)`
/// positive) with `|q_j| ≤ qbox_j` and `|(Θq − p)_i| ≤ ebox_i`. The enumeration runs over a
/// reduced basis, so its cost tracks the box volume rather than the range of `q`; the
/// residual test carries a `1e-9` relative slack, so callers see a superset.
pub fn box_points(theta: &MatrixPoint, qbox: &[f64], ebox: &[f64], cap: u64) -> Result<Vec<(Vec<i64>, Vec<i64>)>> {
    let (m, n) = (theta.m, theta.n);
    if qbox.len() != n || ebox.len() != m {
        return Err(Error::DimensionMismatch { expected: m + n, got: qbox.len() + ebox.len() });
    }
    if qbox.iter().chain(ebox).any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument("box half-widths must be positive and finite".into()));
    }
    let (coeffs, images) = reduce_for_box(theta, qbox, ebox)?;
    let inv = RealBasis { columns: images }
        .inverse()
        .ok_or_else(|| Error::InvalidArgument("reduced basis is degenerate".into()))?;
    let bounds: Vec<i64> = inv
        .iter()
        .map(|row| (row.iter().map(|x| x.abs()).sum::<f64>() * (1.0 + 1e-9) + 1e-9).floor() as i64)
        .collect();
    check_budget(box_count(&bounds) / 2.0, cap)?;
    let d = m + n;
    let mut out = Vec::new();
    let mut err: Option<Error> = None;
    for_each_half_box(&bounds, |a| {
        if err.is_some() {
            return;
        }
        let mut c = vec![0_i128; d];
        for (ai, ci) in a.iter().zip(&coeffs) {
            for (x, &y) in c.iter_mut().zip(ci) {
                *x += *ai as i128 * y as i128;
            }
        }
        let Some(mut c) = c.into_iter().map(|v| i64::try_from(v).ok()).collect::<Option<Vec<i64>>>() else {
            err = Some(Error::InvalidArgument("box point overflowed 64-bit coefficients".into()));
            return;
        };
        if !canonical_sign(&c) {
            c.iter_mut().for_each(|x| *x = -*x);
        }
        let (q, p) = c.split_at(n);
        if q.iter().zip(qbox).any(|(&x, s)| x.unsigned_abs() as f64 > *s) {
            return;
        }
        let off = theta.offsets(q, p);
        if off.iter().zip(ebox).all(|(x, s)| x.abs() <= s * (1.0 + 1e-9)) {
            out.push((q.to_vec(), p.to_vec()));
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Brute-force `λ₁` over all `|q_j|, |p_i| ≤ range`, used as a reference.
pub fn first_minimum_flowed_naive(
    theta: &MatrixPoint,
    flow: &FlowSpec,
    t: f64,
    norm: &AmbientNorm,
    range: i64,
) -> Result<f64> {
    let (m, n) = (theta.m, theta.n);
    let (e, c) = flow.scales(t, m, n)?;
    let bounds = vec![range; m + n];
    let mut v = vec![0.0; m + n];
    let mut best = f64::INFINITY;
    let mut failure = None;
    for_each_half_box(&bounds, |x| {
        let (q, p) = x.split_at(n);
        for (i, row) in theta.rows.iter().enumerate() {
            v[i] = row.offset(q, p[i]) * e[i];
        }
        for j in 0..n {
            v[m + j] = q[j] as f64 * c[j];
        }
        match norm.eval(&v) {
            Ok(x) => best = best.min(x),
            Err(err) => failure = Some(err),
        }
    });
    match failure {
        Some(err) => Err(err),
        None => Ok(best),
    }
}

/// Random unimodular lattice: a Gaussian matrix scaled to determinant one (its QR
/// factorization gives the same lattice up to rotation).
pub fn random_unimodular<R: Rng>(d: usize, rng: &mut R) -> RealBasis {
    loop {
        let mut columns: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let det = RealBasis { columns: columns.clone() }.det();
        if det.abs() < 1e-6 {
            continue;
        }
        if det < 0.0 {
            columns[0].iter_mut().for_each(|x| *x = -*x);
        }
        let s = det.abs().powf(-1.0 / d as f64);
        for col in columns.iter_mut() {
            col.iter_mut().for_each(|x| *x *= s);
        }
        return RealBasis { columns };
    }
}

/// Unimodular hexagonal basis `(a, 0), (a/2, a√3/2)` with `a = (2/√3)^{1/2}`.
pub fn hexagonal_basis() -> RealBasis {
    let a = (2.0 / 3f64.sqrt()).sqrt();
    RealBasis { columns: vec![vec![a, 0.0], vec![a / 2.0, a * 3f64.sqrt() / 2.0]] }
}

fn scaled_to_unit(mut b: RealBasis) -> RealBasis {
    let d = b.d();
    let s = b.det().abs().powf(-1.0 / d as f64);
    for col in b.columns.iter_mut() {
        col.iter_mut().for_each(|x| *x *= s);
    }
    b
}

/// Named dense lattices of covolume one in dimension `d`.
pub fn known_lattices(d: usize) -> Vec<(&'static str, RealBasis)> {
    let mut out = vec![("integer", RealBasis::identity(d))];
    let h = 3f64.sqrt() / 2.0;
    match d {
        2 => out.push(("hexagonal", hexagonal_basis())),
        3 => {
            out.push((
                "hexagonal-prism",
                scaled_to_unit(RealBasis {
                    columns: vec![vec![1.0, 0.0, 0.0], vec![0.5, h, 0.0], vec![0.0, 0.0, 1.0]],
                }),
            ));
            out.push((
                "prism-hexagonal",
                scaled_to_unit(RealBasis {
                    columns: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.5, h]],
                }),
            ));
            out.push((
                "face-centred-cubic",
                scaled_to_unit(RealBasis {
                    columns: vec![vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]],
                }),
            ));
            out.push((
                "body-centred-cubic",
                scaled_to_unit(RealBasis {
                    columns: vec![vec![2.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![1.0, 1.0, 1.0]],
                }),
            ));
        }
        4 => {
            out.push((
                "checkerboard-d4",
                scaled_to_unit(RealBasis {
                    columns: vec![
                        vec![1.0, 1.0, 0.0, 0.0],
                        vec![1.0, -1.0, 0.0, 0.0],
                        vec![0.0, 1.0, -1.0, 0.0],
                        vec![0.0, 0.0, 1.0, -1.0],
                    ],
                }),
            ));
            out.push((
                "hexagonal-square",
                scaled_to_unit(RealBasis {
                    columns: vec![
                        vec![1.0, 0.0, 0.0, 0.0],
                        vec![0.5, h, 0.0, 0.0],
                        vec![0.0, 0.0, 1.0, 0.0],
                        vec![0.0, 0.0, 0.5, h],
                    ],
                }),
            ));
        }
        _ => {}
    }
    out
}

/// Result of a sampled search for the largest first minimum among unimodular lattices.
#[derive(Debug, Clone, PartialEq)]
pub struct REstimate {
    /// A lower bound for the true constant.
    pub value: f64,
    /// Which lattice attained it (`"random#k"` or a library name).
    pub attained_by: String,
    pub random_best: f64,
    pub skipped: usize,
}

/// Lower bound for `sup λ₁` over unimodular lattices: seeded random lattices plus the library.
pub fn r_estimate(norm: &AmbientNorm, d: usize, sample_count: usize, seed: u64) -> Result<REstimate> {
    use rand::SeedableRng;
    if d < 2 || norm.dim() != d {
        return Err(Error::InvalidArgument(format!("r_estimate needs d >= 2 matching the norm, got {d}")));
    }
    let mut best = REstimate { value: 0.0, attained_by: String::new(), random_best: 0.0, skipped: 0 };
    for (name, b) in known_lattices(d) {
        let (v, _, _) = first_minimum(&b, norm)?;
        if v > best.value {
            best.value = v;
            best.attained_by = name.to_string();
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for k in 0..sample_count {
        let b = random_unimodular(d, &mut rng);
        match first_minimum_with_budget(&b, norm, 1_000_000) {
            Ok((v, _, _)) => {
                best.random_best = best.random_best.max(v);
                if v > best.value {
                    best.value = v;
                    best.attained_by = format!("random#{k}");
                }
            }
            Err(Error::Budget { .. }) => best.skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(best)
}
