//! Finite-depth nested-box construction of matrices whose `f(Θ, t)` oscillates just below a
//! target level, with a replayable certificate.
//!
//! Each round finds an excursion above `c` near the current centre, bisects along the
//! segment back to the centre until the window maximum sits just below `c`, snaps the result
//! to a nearby rational point (its own best approximation), and shrinks the box around it.
//! The rational centres decay exactly after their final record, which is what makes the
//! "stays below `c − ε`" half of each round checkable.

use crate::approx::{lambda_psi, realizing_sequence, PsiSpec, RealizingSequence};
use crate::error::{Error, Result};
use crate::exhaustion::{sample_rng, ExhaustionSpec};
use crate::lattice_flow::{box_points, flowed_vector, FlowSpec, MatrixPoint, Weights};
use crate::norms::{AmbientNorm, ProductNormSpec};
use crate::rational::{abs, from_i64, serde_rational, serde_rational_vec, to_f64};
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

mod serde_bigint {
    use num_bigint::BigInt;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigInt, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BigInt, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn common_denominator(v: &[BigRational]) -> BigInt {
    v.iter().fold(BigInt::one(), |acc, x| acc.lcm(x.denom()))
}

fn sup_dist(a: &[BigRational], b: &[BigRational]) -> BigRational {
    a.iter().zip(b).map(|(x, y)| abs(&(x - y))).fold(BigRational::zero(), |m, v| if v > m { v } else { m })
}

fn to_i64(v: &BigInt) -> Result<i64> {
    v.to_i64().ok_or_else(|| Error::InvalidArgument(format!("integer {v} does not fit in 64 bits")))
}

fn dyadic(exp: i64) -> BigRational {
    if exp >= 0 {
        BigRational::from_integer(BigInt::one() << exp as usize)
    } else {
        BigRational::new(BigInt::one(), BigInt::one() << (-exp) as usize)
    }
}

/// Largest power of two not exceeding `r > 0`, as its exponent.
fn floor_log2(r: &BigRational) -> i64 {
    let mut e = (r.numer().bits() as i64) - (r.denom().bits() as i64);
    while dyadic(e) > *r {
        e -= 1;
    }
    while dyadic(e + 1) <= *r {
        e += 1;
    }
    e
}

// ---------------------------------------------------------------------------------------
// Families

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "camelCase")]
pub enum FamilyKind {
    /// `{y·i + z : y ∈ R}` in `M_{m,1}`.
    Line {
        i: Vec<i64>,
        #[serde(with = "serde_rational_vec")]
        z: Vec<BigRational>,
    },
    /// `{Θ : Θi = z}` in `M_{m,n}`.
    Plane {
        #[serde(with = "serde_rational_vec")]
        i: Vec<BigRational>,
        #[serde(with = "serde_rational_vec")]
        z: Vec<BigRational>,
    },
}

/// A family slice together with the common denominator `z0` that makes its data integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMember {
    #[serde(flatten)]
    pub kind: FamilyKind,
    #[serde(with = "serde_bigint")]
    pub z0: BigInt,
}

impl FamilyMember {
    pub fn line(i: Vec<i64>, z: Vec<BigRational>) -> Result<Self> {
        if i.iter().all(|&v| v == 0) || i.len() != z.len() {
            return Err(Error::InvalidArgument("a line needs a nonzero direction of matching length".into()));
        }
        let z0 = common_denominator(&z);
        Ok(FamilyMember { kind: FamilyKind::Line { i, z }, z0 })
    }

    pub fn plane(i: Vec<BigRational>, z: Vec<BigRational>) -> Result<Self> {
        if i.iter().all(|v| v.is_zero()) || i.len() < 2 {
            return Err(Error::InvalidArgument("a plane needs a nonzero i with n >= 2".into()));
        }
        let z0 = common_denominator(&i).lcm(&common_denominator(&z));
        Ok(FamilyMember { kind: FamilyKind::Plane { i, z }, z0 })
    }

    pub fn shape(&self) -> (usize, usize) {
        match &self.kind {
            FamilyKind::Line { i, .. } => (i.len(), 1),
            FamilyKind::Plane { i, z } => (z.len(), i.len()),
        }
    }

    /// `max_j |i_j|`.
    pub fn i_max(&self) -> f64 {
        match &self.kind {
            FamilyKind::Line { i, .. } => i.iter().map(|v| v.unsigned_abs() as f64).fold(0.0, f64::max),
            FamilyKind::Plane { i, .. } => i.iter().map(|v| to_f64(&abs(v))).fold(0.0, f64::max),
        }
    }

    /// The point `y·i + z` of a line.
    pub fn point(&self, y: &BigRational) -> Result<MatrixPoint> {
        match &self.kind {
            FamilyKind::Line { i, z } => {
                let entries = i.iter().zip(z).map(|(a, b)| y * from_i64(*a) + b).collect();
                MatrixPoint::new(i.len(), 1, entries)
            }
            FamilyKind::Plane { .. } => Err(Error::InvalidArgument("planes are not parameterized by one number".into())),
        }
    }

    /// The line parameter of `x`, or `None` when `x` is off the line (always `None` for planes).
    pub fn parameter(&self, x: &MatrixPoint) -> Option<BigRational> {
        let FamilyKind::Line { i, z } = &self.kind else { return None };
        if x.n() != 1 || x.m() != i.len() {
            return None;
        }
        let k = i.iter().position(|&v| v != 0)?;
        let y = (x.get(k, 0) - &z[k]) / from_i64(i[k]);
        (0..i.len()).all(|r| *x.get(r, 0) == &y * from_i64(i[r]) + &z[r]).then_some(y)
    }

    pub fn contains(&self, x: &MatrixPoint) -> bool {
        match &self.kind {
            FamilyKind::Line { .. } => self.parameter(x).is_some(),
            FamilyKind::Plane { i, z } => x.n() == i.len() && x.m() == z.len() && x.mul_vec(i) == *z,
        }
    }
}

/// Continued-fraction convergents `(q_k, p_k)` of a rational `y`, ending at `y` itself.
fn convergents(y: &BigRational) -> Vec<(BigInt, BigInt)> {
    let mut out = Vec::new();
    let (mut h0, mut h1) = (BigInt::zero(), BigInt::one());
    let (mut k0, mut k1) = (BigInt::one(), BigInt::zero());
    let mut x = y.clone();
    loop {
        let a = x.floor().to_integer();
        let h2 = &a * &h1 + &h0;
        let k2 = &a * &k1 + &k0;
        out.push((k2.clone(), h2.clone()));
        let frac = &x - BigRational::from_integer(a);
        if frac.is_zero() {
            return out;
        }
        x = frac.recip();
        h0 = h1;
        h1 = h2;
        k0 = k1;
        k1 = k2;
    }
}

/// An explicit short vector of `Λ_x` for a point on a family slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyWitness {
    pub q: Vec<i64>,
    pub p: Vec<i64>,
    /// `‖flow(t)·(Θq − p, q)‖_∞`.
    pub value: f64,
    /// Convergent index used on a line; zero for planes.
    pub index: usize,
}

/// The family's flow-shrinking vector at time `t`. On a line `y·i + z` it is
/// `z0·((q_k y − p_k)·i, q_k)` with `k` chosen by the crossing rule
/// `c(t)·q_{k+1} ≤ e_max(t)·i_max·|q_k y − p_k|`; on a plane it is `z0·(0, i)`.
pub fn witness_vector(member: &FamilyMember, x: &MatrixPoint, flow: &FlowSpec, t: f64) -> Result<FamilyWitness> {
    if !member.contains(x) {
        return Err(Error::NotOnMember);
    }
    let (m, n) = (x.m(), x.n());
    let (e, c) = flow.scales(t, m, n)?;
    let z0 = BigRational::from_integer(member.z0.clone());
    let (q, p, index) = match &member.kind {
        FamilyKind::Line { i, z } => {
            let y = member.parameter(x).expect("membership checked");
            let conv = convergents(&y);
            let e_max = e.iter().cloned().fold(0.0, f64::max);
            let i_max = member.i_max();
            let mut k = 0;
            while k + 1 < conv.len() {
                let (qk, pk) = &conv[k];
                let dev = to_f64(&abs(&(&y * BigRational::from_integer(qk.clone()) - BigRational::from_integer(pk.clone()))));
                let next_q = conv[k + 1].0.to_f64().unwrap_or(f64::INFINITY);
                if c[0] * next_q <= e_max * i_max * dev {
                    k += 1;
                } else {
                    break;
                }
            }
            let (qk, pk) = &conv[k];
            let (qk, pk) = (BigRational::from_integer(qk.clone()), BigRational::from_integer(pk.clone()));
            let q = vec![to_i64(&(&z0 * &qk).to_integer())?];
            let p = i
                .iter()
                .zip(z)
                .map(|(a, b)| to_i64(&(&z0 * (&qk * b + &pk * from_i64(*a))).to_integer()))
                .collect::<Result<Vec<i64>>>()?;
            (q, p, k)
        }
        FamilyKind::Plane { i, z } => {
            let q = i.iter().map(|v| to_i64(&(&z0 * v).to_integer())).collect::<Result<Vec<i64>>>()?;
            let p = z.iter().map(|v| to_i64(&(&z0 * v).to_integer())).collect::<Result<Vec<i64>>>()?;
            (q, p, 0)
        }
    };
    let v = flowed_vector(x, flow, t, &q, &p)?;
    let value = v.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    Ok(FamilyWitness { q, p, value, index })
}

/// Upper envelope of the witness value on a family slice: `z0·√(i_max·e_max(t)·c(t))` on a
/// line (for `g_t` this is `z0·√i_max·t^{(α_max−1)/2}`) and `z0·i_max·c_max(t)` on a plane.
pub fn family_envelope(member: &FamilyMember, flow: &FlowSpec, t: f64) -> Result<f64> {
    let (m, n) = member.shape();
    let (e, c) = flow.scales(t, m, n)?;
    let z0 = member.z0.to_f64().unwrap_or(f64::INFINITY);
    let i_max = member.i_max();
    Ok(match member.kind {
        FamilyKind::Line { .. } => {
            let e_max = e.iter().cloned().fold(0.0, f64::max);
            z0 * (i_max * e_max * c[0]).sqrt()
        }
        FamilyKind::Plane { .. } => z0 * i_max * c.iter().cloned().fold(0.0, f64::max),
    })
}

/// A time after which every point of a family slice stays below `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityWitness {
    pub member: FamilyMember,
    pub c: f64,
    #[serde(rename = "T0")]
    pub t0: f64,
    pub bound_curve: String,
}

/// Safe time for a family slice: from `T0` on the envelope keeps `‖v_t‖_N < c`, where the
/// ambient norm is bounded by `c_high` times the sup norm.
pub fn uniformity_time(member: &FamilyMember, c: f64, flow: &FlowSpec, norm: &AmbientNorm) -> Result<UniformityWitness> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument("the level must be positive".into()));
    }
    let (m, n) = member.shape();
    let (_, c_high) = norm.equivalence_constants();
    let level = c / c_high;
    let z0 = member.z0.to_f64().unwrap_or(f64::INFINITY);
    let i_max = member.i_max();
    let (t0, curve) = match (&member.kind, flow) {
        (FamilyKind::Line { .. }, FlowSpec::G(w)) => {
            let a = w.alpha_max();
            if a >= 1.0 {
                return Err(Error::InvalidArgument("a line family needs alpha_max < 1".into()));
            }
            let t1 = (level / (z0 * i_max.sqrt())).powf(2.0 / (a - 1.0));
            (t1.max(z0 / level), format!("{z0}*sqrt({i_max})*t^(({a}-1)/2)"))
        }
        (FamilyKind::Line { .. }, FlowSpec::APsi(psi)) => {
            if !psi.inverse_root_is_o_t(m) {
                return Err(Error::InvalidArgument("a line family needs psi^(-1/m) = o(t)".into()));
            }
            let g = |t: f64| z0 * (i_max * psi.eval(t).powf(-1.0 / m as f64) / t).sqrt();
            (decreasing_crossing(g, level)?.max(z0 / level), format!("{z0}*sqrt({i_max}*psi(t)^(-1/{m})/t)"))
        }
        (FamilyKind::Plane { .. }, FlowSpec::G(w)) => {
            let b = w.beta_min();
            ((z0 * i_max / level).powf(1.0 / b), format!("{z0}*{i_max}*t^(-{b})"))
        }
        (FamilyKind::Plane { .. }, FlowSpec::APsi(_)) => {
            ((z0 * i_max / level).powf(n as f64), format!("{z0}*{i_max}*t^(-1/{n})"))
        }
    };
    Ok(UniformityWitness { member: member.clone(), c, t0: t0.max(1.0), bound_curve: curve })
}

/// Smallest `T` (up to bisection accuracy, rounded up) with `g < level` on `[T, ∞)`, for a
/// `g` that is eventually decreasing to zero.
fn decreasing_crossing(g: impl Fn(f64) -> f64, level: f64) -> Result<f64> {
    let mut t = 1.0_f64;
    for _ in 0..4000 {
        let t2 = t * 2.0;
        if g(t2) < level && g(t2 * 2.0) < g(t2) {
            if g(t) < level {
                return Ok(t2);
            }
            let (mut lo, mut hi) = (t.ln(), t2.ln());
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if g(mid.exp()) < level {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(hi.exp());
        }
        t = t2;
        if !t.is_finite() {
            break;
        }
    }
    Err(Error::Bracketing("the envelope never drops below the level".into()))
}

// ---------------------------------------------------------------------------------------
// Connecting segments

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectResult {
    pub member: FamilyMember,
    /// Line case: `z̄₁ − z̄₀ = i₀ / scaling`. Plane case: one.
    #[serde(with = "serde_rational")]
    pub scaling: BigRational,
    /// A point of the new member that also lies on the previous one.
    #[serde(with = "serde_rational_vec")]
    pub junction: Vec<BigRational>,
}

/// Line through `from` and `to` in `M_{m,1}` with primitive integral direction.
pub fn connect_line(from: &[BigRational], to: &[BigRational]) -> Result<ConnectResult> {
    let diff: Vec<BigRational> = to.iter().zip(from).map(|(a, b)| a - b).collect();
    if diff.iter().all(|v| v.is_zero()) {
        return Err(Error::InvalidArgument("the two points coincide; resample".into()));
    }
    let den = common_denominator(&diff);
    let ints: Vec<BigInt> = diff.iter().map(|v| (v * BigRational::from_integer(den.clone())).to_integer()).collect();
    let g = ints.iter().fold(BigInt::zero(), |acc, v| acc.gcd(v));
    let i = ints.iter().map(|v| to_i64(&(v / &g))).collect::<Result<Vec<i64>>>()?;
    let scaling = BigRational::new(den, g);
    Ok(ConnectResult { member: FamilyMember::line(i, from.to_vec())?, scaling, junction: to.to_vec() })
}

/// Connects a point `z̄₀` of the excursion neighbourhood to the previous family slice.
/// Lines: the line through `z̄₀` and a point `z̄₁` of the previous line (the previous line
/// itself when it already passes through `z̄₀`). Planes: `{Θ : Θi = z̄₀ i}` for an integral
/// `i` independent of the previous plane's, together with a junction point solving both
/// systems, closest to `z̄₁`.
pub fn connect_segment(
    z_bar0: &MatrixPoint,
    z_bar1: &MatrixPoint,
    prev: &FamilyMember,
) -> Result<ConnectResult> {
    if !prev.contains(z_bar1) {
        return Err(Error::NotOnMember);
    }
    match &prev.kind {
        FamilyKind::Line { .. } => {
            if prev.contains(z_bar0) {
                return Ok(ConnectResult {
                    member: prev.clone(),
                    scaling: BigRational::one(),
                    junction: z_bar1.entries().to_vec(),
                });
            }
            connect_line(z_bar0.entries(), z_bar1.entries())
        }
        FamilyKind::Plane { i: ip, .. } => {
            let (m, n) = (z_bar0.m(), z_bar0.n());
            // An integral i not parallel to the previous one: the first unit vector that works.
            let i: Vec<BigRational> = (0..n)
                .map(|j| {
                    let mut v = vec![BigRational::zero(); n];
                    v[j] = BigRational::one();
                    v
                })
                .chain(std::iter::once(vec![BigRational::one(); n]))
                .find(|v| !parallel(v, ip))
                .expect("n >= 2 admits a non-parallel unit vector");
            let z = z_bar0.mul_vec(&i);
            // Junction: z̄₁ + u vᵀ with v·i' = 0, v·i = 1 and u = (z̄₀ − z̄₁) i.
            let ipp = dot_q(ip, ip);
            let proj: Vec<BigRational> = i.iter().zip(ip).map(|(a, b)| a - b * (dot_q(&i, ip) / &ipp)).collect();
            let scale = dot_q(&proj, &i);
            let v: Vec<BigRational> = proj.iter().map(|x| x / &scale).collect();
            let u: Vec<BigRational> = z.iter().zip(z_bar1.mul_vec(&i)).map(|(a, b)| a - b).collect();
            let junction: Vec<BigRational> = (0..m * n).map(|k| z_bar1.entries()[k].clone() + &u[k / n] * &v[k % n]).collect();
            Ok(ConnectResult { member: FamilyMember::plane(i, z)?, scaling: BigRational::one(), junction })
        }
    }
}

fn dot_q(a: &[BigRational], b: &[BigRational]) -> BigRational {
    a.iter().zip(b).map(|(x, y)| x * y).fold(BigRational::zero(), |s, v| s + v)
}

fn parallel(a: &[BigRational], b: &[BigRational]) -> bool {
    let ab = dot_q(a, b);
    &ab * &ab == dot_q(a, a) * dot_q(b, b)
}

// ---------------------------------------------------------------------------------------
// Objective and exact window evaluation

/// Which function the construction drives.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstructMode {
    /// Height of `g_t Λ_Θ` in an exhaustion; needs equal weights and a product norm, where
    /// the height coincides with `λ_{Θ,ψ}` for `ψ = 1/t`.
    Exhaustion { weights: Weights, ex: ExhaustionSpec },
    /// `λ_{Θ,ψ}` itself, unbounded above.
    PsiDirichlet { psi: PsiSpec, norms: ProductNormSpec },
}

/// The resolved objective `f(Θ, t) = λ_{Θ,ψ}(t)` with its upper end `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub psi: PsiSpec,
    pub norms: ProductNormSpec,
    pub b: f64,
    pub label: &'static str,
}

impl Objective {
    pub fn new(mode: &ConstructMode) -> Result<Self> {
        match mode {
            ConstructMode::Exhaustion { weights, ex } => {
                let AmbientNorm::Product(norms) = &ex.norm else {
                    return Err(Error::InvalidArgument("the exhaustion mode needs a product norm".into()));
                };
                if !weights.is_equal() {
                    return Err(Error::InvalidArgument(
                        "the exhaustion mode needs equal weights, where exact switch times exist".into(),
                    ));
                }
                Ok(Objective { psi: PsiSpec::inverse_t(), norms: norms.clone(), b: ex.b, label: "exhaustion" })
            }
            ConstructMode::PsiDirichlet { psi, norms } => {
                Ok(Objective { psi: psi.clone(), norms: norms.clone(), b: f64::INFINITY, label: "psi" })
            }
        }
    }

    pub fn flow(&self) -> FlowSpec {
        FlowSpec::APsi(self.psi.clone())
    }

    /// `f(x, t)` by direct enumeration.
    pub fn eval(&self, x: &MatrixPoint, t: f64) -> Result<f64> {
        lambda_psi(x, t, &self.psi, &self.norms)
    }

    pub fn sequence(&self, x: &MatrixPoint, tmax: f64) -> Result<RealizingSequence> {
        realizing_sequence(x, &self.psi, &self.norms, tmax)
    }
}

/// `(max, argmax)` of `λ` over `[a, b]`: the endpoints and every peak in between are the
/// only candidates, because `λ` falls then rises on each segment.
pub fn window_max(seq: &RealizingSequence, a: f64, b: f64) -> (f64, f64) {
    let mut best = (seq.lambda_at(a), a);
    for (t, v) in seq.peaks() {
        if t >= a && t <= b && v > best.0 {
            best = (v, t);
        }
    }
    let vb = seq.lambda_at(b);
    if vb > best.0 {
        best = (vb, b);
    }
    best
}

/// `(max, argmax)` of `λ` over `[a, ∞)` for a terminated sequence.
fn sup_from(seq: &RealizingSequence, a: f64) -> (f64, f64) {
    let end = seq.t_times.last().copied().unwrap_or(a).max(a);
    window_max(seq, a, end)
}

/// For a terminated sequence, the first time after which `λ` stays strictly below `level`.
pub fn settle_time(seq: &RealizingSequence, level: f64) -> Option<f64> {
    if !seq.terminated {
        return None;
    }
    for k in (0..seq.records.len()).rev() {
        if seq.lambda_at(seq.t_times[k]) >= level {
            // λ decreases as ‖q_k‖·t^{−1/n} from t_k until it drops below the level.
            return Some((seq.records[k].qnorm / level).powi(seq.n as i32).max(seq.t_times[k]));
        }
    }
    Some(seq.t0)
}

// ---------------------------------------------------------------------------------------
// Boxes, excursions, bisection

/// An open sup-metric box `{x : |x − center|_∞ < radius}` in `M_{m,n}` (row-major entries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub m: usize,
    pub n: usize,
    #[serde(with = "serde_rational_vec")]
    pub center: Vec<BigRational>,
    #[serde(with = "serde_rational")]
    pub radius: BigRational,
}

impl BoxRegion {
    pub fn new(m: usize, n: usize, center: Vec<BigRational>, radius: BigRational) -> Result<Self> {
        if center.len() != m * n {
            return Err(Error::DimensionMismatch { expected: m * n, got: center.len() });
        }
        if !radius.is_positive() {
            return Err(Error::InvalidArgument("the box radius must be positive".into()));
        }
        Ok(BoxRegion { m, n, center, radius })
    }

    pub fn center_point(&self) -> MatrixPoint {
        MatrixPoint::new(self.m, self.n, self.center.clone()).expect("shape checked on construction")
    }

    /// `closure(other) ⊂ self`, exactly.
    pub fn contains_closure_of(&self, other: &BoxRegion) -> bool {
        sup_dist(&self.center, &other.center) + &other.radius < self.radius
    }

    pub fn contains(&self, x: &[BigRational]) -> bool {
        sup_dist(&self.center, x) < self.radius
    }
}

/// Point of `box` (shrunk to a quarter of its radius) with the smallest common denominator.
fn small_denominator_point(bx: &BoxRegion) -> Vec<BigRational> {
    let quarter = &bx.radius / from_i64(4);
    let mut d = BigInt::one();
    loop {
        let dq = BigRational::from_integer(d.clone());
        let pt: Vec<BigRational> =
            bx.center.iter().map(|c| BigRational::new((c * &dq).round().to_integer(), d.clone())).collect();
        if sup_dist(&pt, &bx.center) <= quarter {
            return pt;
        }
        d += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excursion {
    #[serde(with = "serde_rational_vec")]
    pub y: Vec<BigRational>,
    pub s: f64,
    pub value: f64,
    pub attempts: usize,
}

/// Seeded search for `y` in the box (at sup distance between a quarter and a half of the
/// radius from its centre) and an exact peak time `s > t_min` with `f(y, s) > c`. The
/// search horizon grows with the attempt count.
pub fn find_excursion<R: Rng>(
    obj: &Objective,
    bx: &BoxRegion,
    t_min: f64,
    c: f64,
    budget: usize,
    rng: &mut R,
) -> Result<Excursion> {
    if c >= obj.b {
        return Err(Error::InvalidArgument(format!("level {c} is not below the upper end {}", obj.b)));
    }
    if c <= 0.0 {
        let x = bx.center_point();
        let s = t_min.max(obj.norms.right.min_integer_norm());
        return Ok(Excursion { y: bx.center.clone(), s, value: obj.eval(&x, s)?, attempts: 0 });
    }
    let bits = 32_usize;
    let unit = BigRational::new(BigInt::one(), BigInt::one() << bits);
    for attempt in 0..budget {
        let y: Vec<BigRational> = bx
            .center
            .iter()
            .map(|c0| {
                let u = BigRational::from_integer(BigInt::from(rng.gen_range(0_u64..(1_u64 << bits)))) * &unit;
                let mag = &bx.radius * (BigRational::one() + u) / from_i64(4);
                if rng.gen::<bool>() {
                    c0 + mag
                } else {
                    c0 - mag
                }
            })
            .collect();
        let horizon = t_min * 4f64.powf(3.0 + attempt as f64 / 2.0).min(1e24);
        let x = MatrixPoint::new(bx.m, bx.n, y.clone())?;
        let seq = match obj.sequence(&x, horizon) {
            Ok(s) => s,
            Err(Error::Budget { .. }) => continue,
            Err(e) => return Err(e),
        };
        if let Some(&(s, value)) = seq.peaks().iter().find(|(s, v)| *s > t_min && *v > c) {
            return Ok(Excursion { y, s, value, attempts: attempt + 1 });
        }
    }
    Err(Error::SearchExhausted(format!("no excursion above {c} after {budget} samples")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bisection {
    pub w: MatrixPoint,
    /// Position of `w` on the segment, as a dyadic rational in `[0, 1]`.
    pub u: BigRational,
    /// Window maximum of `f(w, ·)` and its location.
    pub h: f64,
    pub s: f64,
    pub steps: usize,
    pub sequence: RealizingSequence,
}

fn on_segment(from: &MatrixPoint, to: &MatrixPoint, u: &BigRational) -> Result<MatrixPoint> {
    let entries = from.entries().iter().zip(to.entries()).map(|(a, b)| a + (b - a) * u).collect();
    MatrixPoint::new(from.m(), from.n(), entries)
}

/// Bisection on the segment `from → to` for the window maximum `h(x) = max_{t∈window} f(x,t)`,
/// which is continuous in `x`; stops once `h(w) ∈ (c − 3ε/4, c − ε/4)`.
pub fn segment_bisect(
    obj: &Objective,
    from: &MatrixPoint,
    to: &MatrixPoint,
    window: (f64, f64),
    c: f64,
    eps: f64,
) -> Result<Bisection> {
    let (lo_band, hi_band) = (c - 0.75 * eps, c - 0.25 * eps);
    let h = |x: &MatrixPoint| -> Result<(f64, f64, RealizingSequence)> {
        let seq = obj.sequence(x, window.1)?;
        let (v, s) = window_max(&seq, window.0, window.1);
        Ok((v, s, seq))
    };
    let (h_from, _, _) = h(from)?;
    if h_from > lo_band {
        return Err(Error::Bracketing(format!("start point has window maximum {h_from} above {lo_band}")));
    }
    let (h_to, _, _) = h(to)?;
    if h_to < c {
        return Err(Error::Bracketing(format!("end point has window maximum {h_to} below {c}")));
    }
    let (mut lo, mut hi) = (BigRational::zero(), BigRational::one());
    for step in 1..=96 {
        let mid = (&lo + &hi) / from_i64(2);
        let x = on_segment(from, to, &mid)?;
        let (v, s, seq) = h(&x)?;
        if v > lo_band && v < hi_band {
            return Ok(Bisection { w: x, u: mid, h: v, s, steps: step, sequence: seq });
        }
        if v <= lo_band {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Bracketing("no point of the segment landed in the target band".into()))
}

// ---------------------------------------------------------------------------------------
// The construction

#[derive(Debug, Clone, PartialEq)]
pub struct ConstructParams {
    pub rounds: usize,
    /// `ε₀`; `None` picks `min(c, b − c)/4` (or `c/4` when `b = ∞`). `ε_k = ε₀·2^{−k}`.
    pub eps0: Option<f64>,
    pub seed: u64,
    /// Excursion samples per attempt.
    pub excursion_budget: usize,
    /// Interior samples used to re-verify each new box.
    pub box_samples: usize,
}

impl Default for ConstructParams {
    fn default() -> Self {
        ConstructParams { rounds: 4, eps0: None, seed: 0, excursion_budget: 64, box_samples: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

impl Check {
    fn below(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value, bound, passed: value < bound }
    }

    fn above(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value, bound, passed: value > bound }
    }
}

/// One completed round `k ≥ 1`: the box `Ω_k`, the family slice `j_k` through its centre
/// (the safe point), the window `[t_{k−1}, t_k]` and the near-peak time `s_k` inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub k: usize,
    #[serde(flatten)]
    pub region: BoxRegion,
    pub family: FamilyMember,
    pub t_k: f64,
    pub s_k: f64,
    pub excursion: Excursion,
    #[serde(with = "serde_rational_vec")]
    pub w: Vec<BigRational>,
    pub bisection_steps: usize,
    /// Envelope safe time of the slice at level `c − ε_k`, when the envelope applies.
    pub uniformity: Option<UniformityWitness>,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub passed: bool,
    pub nesting: bool,
    pub times: bool,
    pub stays_below: bool,
    pub near_peaks: bool,
    pub safe_points: bool,
    pub details: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionCertificate {
    pub mode: String,
    pub psi: PsiSpec,
    pub norms: [crate::norms::NormSpecJson; 2],
    pub c: f64,
    pub b: f64,
    pub eps: Vec<f64>,
    pub seed: u64,
    pub domain: BoxRegion,
    /// `Ω_0`, its safe slice and `t_0`.
    pub start: BoxRegion,
    pub start_family: FamilyMember,
    pub t0: f64,
    pub rounds: Vec<Round>,
    pub theta: crate::lattice_flow::MatrixPointJson,
    pub complete: bool,
    pub failure: Option<String>,
    pub failure_round: Option<usize>,
    pub replay: Option<ReplayReport>,
}

impl ConstructionCertificate {
    pub fn objective(&self) -> Result<Objective> {
        let left = crate::norms::NormSpec::try_from(&self.norms[0])?;
        let right = crate::norms::NormSpec::try_from(&self.norms[1])?;
        let label = if self.mode == "exhaustion" { "exhaustion" } else { "psi" };
        Ok(Objective { psi: self.psi.clone(), norms: ProductNormSpec::new(left, right), b: self.b, label })
    }

    pub fn theta_point(&self) -> Result<MatrixPoint> {
        MatrixPoint::try_from(self.theta.clone())
    }

    fn last_box(&self) -> &BoxRegion {
        self.rounds.last().map_or(&self.start, |r| &r.region)
    }

    /// `(t, s, ε)` per completed round.
    fn schedule(&self) -> Vec<(f64, f64, f64)> {
        self.rounds.iter().map(|r| (r.t_k, r.s_k, self.eps[r.k])).collect()
    }
}

/// Slice through a safe point: for one column the line through it along `direction`
/// (made primitive), otherwise the plane `{Θ : Θq = p}` of its exact hit.
fn family_through(point: &MatrixPoint, direction: &[BigRational], hit: Option<(&[i64], &[i64])>) -> Result<FamilyMember> {
    if point.n() == 1 {
        let mut dir = direction.to_vec();
        if dir.iter().all(|v| v.is_zero()) {
            dir = vec![BigRational::zero(); point.m()];
            dir[0] = BigRational::one();
        }
        let to: Vec<BigRational> = point.entries().iter().zip(&dir).map(|(a, b)| a + b).collect();
        return Ok(connect_line(point.entries(), &to)?.member);
    }
    let (q, p) = match hit {
        Some(h) => h,
        None => return Err(Error::InvalidArgument("a plane slice needs an exact hit".into())),
    };
    FamilyMember::plane(q.iter().map(|&v| from_i64(v)).collect(), p.iter().map(|&v| from_i64(v)).collect())
}

/// Exact hit `(q, p)` (with `Θq = p`) closing a terminated sequence.
fn final_hit(seq: &RealizingSequence) -> Option<(Vec<i64>, Vec<i64>)> {
    seq.terminated.then(|| {
        let r = seq.records.last().expect("terminated sequences have records");
        (r.q.clone(), r.p.clone())
    })
}

/// `w − (wq − p)qᵀ/(qᵀq)`: the point of `{Θ : Θq = p}` nearest to `w` (for one column, `p/q`).
fn snap(w: &MatrixPoint, q: &[i64], p: &[i64]) -> Result<MatrixPoint> {
    let qr: Vec<BigRational> = q.iter().map(|&v| from_i64(v)).collect();
    let qq = dot_q(&qr, &qr);
    let wq = w.mul_vec(&qr);
    let (m, n) = (w.m(), w.n());
    let entries = (0..m * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            w.get(i, j) - (&wq[i] - from_i64(p[i])) * &qr[j] / &qq
        })
        .collect();
    MatrixPoint::new(m, n, entries)
}

/// Sequence long enough to reach its own exact hit.
fn terminated_sequence(obj: &Objective, x: &MatrixPoint) -> Result<RealizingSequence> {
    let den = common_denominator(x.entries()).to_f64().unwrap_or(f64::INFINITY);
    let q_unit = obj.norms.right.eval_unchecked(&vec![1.0; x.n()]);
    // The hit at q = den·e_1 is a record candidate, and every inexact error is at least
    // c_low/den, so it takes over by the time φ(t) reaches den²·‖e_1‖/c_low.
    let (c_low, _) = obj.norms.left.equivalence_constants();
    let tmax = obj.psi.solve_phi(2.0 * den * den * q_unit / c_low, x.m(), x.n())?;
    let seq = obj.sequence(x, tmax.max(2.0))?;
    if !seq.terminated {
        return Err(Error::InvalidArgument("rational point did not reach its exact hit".into()));
    }
    Ok(seq)
}

struct State {
    bx: BoxRegion,
    t: f64,
}

fn sample_points<R: Rng>(bx: &BoxRegion, extra: usize, rng: &mut R) -> Vec<Vec<BigRational>> {
    let d = bx.center.len();
    let mut pts = Vec::new();
    let corners: Vec<u64> = if d <= 4 { (0..1_u64 << d).collect() } else { (0..16).map(|_| rng.gen()).collect() };
    for mask in corners {
        pts.push(
            bx.center
                .iter()
                .enumerate()
                .map(|(i, c)| if mask >> i & 1 == 1 { c + &bx.radius } else { c - &bx.radius })
                .collect(),
        );
    }
    let unit = BigRational::new(BigInt::one(), BigInt::one() << 32_usize);
    for _ in 0..extra {
        pts.push(
            bx.center
                .iter()
                .map(|c| {
                    let u = from_i64(rng.gen_range(-(1_i64 << 32)..=(1_i64 << 32))) * &unit;
                    c + &bx.radius * u
                })
                .collect(),
        );
    }
    pts
}

/// Verifies one sample point of a candidate box: below `c` on `[t_start, t_end]` and above
/// `c − ε_j` at every recorded `s_j`.
fn point_ok(obj: &Objective, x: &MatrixPoint, c: f64, t_start: f64, t_end: f64, marks: &[(f64, f64)]) -> Result<bool> {
    let seq = obj.sequence(x, t_end)?;
    if window_max(&seq, t_start, t_end).0 >= c {
        return Ok(false);
    }
    Ok(marks.iter().all(|&(s, level)| seq.lambda_at(s) > level))
}

/// Output of [`construct_theta`]: the matrix and its certificate (replayed).
#[derive(Debug, Clone, PartialEq)]
pub struct Construction {
    pub theta: MatrixPoint,
    pub certificate: ConstructionCertificate,
}

/// Runs the nested-box induction for `params.rounds` rounds inside `domain`.
///
/// Every round: an excursion `f(y, s) > c` near the centre; bisection along the segment from
/// the centre (the previous safe point, already below `c − ε_k` after `t_k`) to `y` until the
/// window maximum is in `(c − 3ε/4, c − ε/4)`; the bisection point `w` is snapped to the record
/// `p/q` taking over at its maximizing peak (or at the next switch when the maximum sits on a
/// rising branch at the window end), which inherits `w`'s peaks up to there and then decays
/// exactly. When snapping fails, exact hits cutting the centre's own rising branch at the
/// target level serve instead, the seed choosing among them. The new box is centred on the
/// accepted point and shrunk until its corners, centre and interior samples pass.
/// Failures are reported inside the certificate rather than as an error.
pub fn construct_theta(mode: &ConstructMode, c: f64, domain: &BoxRegion, params: &ConstructParams) -> Result<Construction> {
    let obj = Objective::new(mode)?;
    let (m, n) = (domain.m, domain.n);
    if m.max(n) < 2 {
        return Err(Error::InvalidArgument("the construction needs max(m, n) > 1".into()));
    }
    if obj.norms.left.dim != m || obj.norms.right.dim != n {
        return Err(Error::DimensionMismatch { expected: m + n, got: obj.norms.left.dim + obj.norms.right.dim });
    }
    if !(c >= 0.0) || c >= obj.b {
        return Err(Error::InvalidArgument(format!("target {c} must lie in [0, {})", obj.b)));
    }
    let eps0 = params.eps0.unwrap_or(if obj.b.is_finite() { c.min(obj.b - c) / 4.0 } else { c / 4.0 });
    let eps: Vec<f64> = (0..=params.rounds).map(|k| eps0 * 0.5f64.powi(k as i32)).collect();

    // Round 0: a small-denominator point of the domain and a dyadic box around it.
    let z = MatrixPoint::new(m, n, small_denominator_point(domain))?;
    let r0 = dyadic(floor_log2(&(&domain.radius / from_i64(2))));
    let start = BoxRegion::new(m, n, z.entries().to_vec(), r0)?;
    let seq0 = terminated_sequence(&obj, &z)?;
    let hit0 = final_hit(&seq0);
    let unit_dir: Vec<BigRational> = (0..m * n).map(|k| if k == 0 { BigRational::one() } else { BigRational::zero() }).collect();
    let start_family = family_through(&z, &unit_dir, hit0.as_ref().map(|(q, p)| (q.as_slice(), p.as_slice())))?;
    let t0 = if c > 0.0 { settle_time(&seq0, c - eps[0]).expect("terminated") * (1.0 + 1e-9) } else { seq0.t0 };
    let mut cert = ConstructionCertificate {
        mode: obj.label.into(),
        psi: obj.psi.clone(),
        norms: [(&obj.norms.left).into(), (&obj.norms.right).into()],
        c,
        b: obj.b,
        eps: eps.clone(),
        seed: params.seed,
        domain: domain.clone(),
        start: start.clone(),
        start_family: start_family.clone(),
        t0,
        rounds: Vec::new(),
        theta: (&z).into(),
        complete: true,
        failure: None,
        failure_round: None,
        replay: None,
    };
    if c > 0.0 {
        let mut state = State { bx: start, t: t0 };
        for k in 0..params.rounds {
            match run_round(&obj, c, &eps, &cert, &state, k, params) {
                Ok(round) => {
                    state = State { bx: round.region.clone(), t: round.t_k };
                    cert.theta = (&round.region.center_point()).into();
                    cert.rounds.push(round);
                }
                Err(e) => {
                    cert.complete = false;
                    cert.failure = Some(e.to_string());
                    cert.failure_round = Some(k + 1);
                    break;
                }
            }
        }
    }
    let theta = cert.theta_point()?;
    cert.replay = Some(replay(&cert)?);
    Ok(Construction { theta, certificate: cert })
}

fn run_round(
    obj: &Objective,
    c: f64,
    eps: &[f64],
    cert: &ConstructionCertificate,
    state: &State,
    k: usize,
    params: &ConstructParams,
) -> Result<Round> {
    let e_next = eps[k + 1];
    let mut rng = sample_rng(params.seed, k as u64);
    let centre = state.bx.center_point();
    let centre_hit = final_hit(&terminated_sequence(obj, &centre)?);
    let mut marks: Vec<(f64, f64)> = cert.schedule().iter().map(|&(_, s, e)| (s, c - e)).collect();
    let mut last_err = Error::SearchExhausted("no attempt made".into());
    for _attempt in 0..8 {
        let exc = find_excursion(obj, &state.bx, state.t, c, params.excursion_budget, &mut rng)?;
        let y = MatrixPoint::new(centre.m(), centre.n(), exc.y.clone())?;
        let direction: Vec<BigRational> = exc.y.iter().zip(centre.entries()).map(|(a, b)| a - b).collect();
        let window = (state.t, exc.s * (1.0 + 1e-9));
        let bis = match segment_bisect(obj, &centre, &y, window, c, e_next) {
            Ok(b) => b,
            Err(e) => {
                last_err = e;
                continue;
            }
        };
        // A safe point follows `w` up to its window maximum and then decays: the record taking
        // over at the maximizing peak, or at the next switch when the maximum sits on a rising
        // branch at the window end. Failing those, exact hits cutting the centre's own rising
        // branch at the target level.
        let mut cands = Vec::new();
        if bis.s < window.1 {
            if let Some(i) = bis.sequence.t_times.iter().position(|&t| t == bis.s) {
                let rec = &bis.sequence.records[i];
                cands.push(snap(&bis.w, &rec.q, &rec.p)?);
            }
        } else if let Some((seq, i)) = next_switch(obj, &bis.w, window.1)? {
            if seq.lambda_at(seq.t_times[i]) < c {
                let rec = &seq.records[i];
                cands.push(snap(&bis.w, &rec.q, &rec.p)?);
            }
        }
        if let Some(hit) = &centre_hit {
            let keep = |x: &MatrixPoint| -> Result<bool> {
                // Cuts in the inner half of the box leave room for the next one.
                if sup_dist(x.entries(), &state.bx.center) * from_i64(2) >= state.bx.radius {
                    return Ok(false);
                }
                let seq = terminated_sequence(obj, x)?;
                let peak = sup_from(&seq, state.t).0;
                Ok(sup_from(&seq, cert.t0).0 < c && peak > c - 0.75 * e_next && peak < c - 0.25 * e_next)
            };
            // Cuts of similar size are interchangeable; the seed picks among them.
            let mut cuts = lattice_cuts(obj, &centre, hit, c - 0.5 * e_next, 0.5 * to_f64(&state.bx.radius), keep)?;
            cuts.shuffle(&mut rng);
            cands.extend(cuts);
        }
        for cand in &cands {
            match accept_candidate(obj, c, eps, cert, state, k, cand, &marks, &mut rng, params) {
                Ok(Some((region, t_next, s_next, checks, hit))) => {
                    marks.push((s_next, c - e_next));
                    let family = family_through(cand, &direction, hit.as_ref().map(|(q, p)| (q.as_slice(), p.as_slice())))?;
                    let uniformity =
                        uniformity_time(&family, c - e_next, &obj.flow(), &AmbientNorm::Product(obj.norms.clone())).ok();
                    return Ok(Round {
                        k: k + 1,
                        region,
                        family,
                        t_k: t_next,
                        s_k: s_next,
                        excursion: exc,
                        w: bis.w.entries().to_vec(),
                        bisection_steps: bis.steps,
                        uniformity,
                        checks,
                    });
                }
                Ok(None) => {}
                Err(e) => last_err = e,
            }
        }
    }
    Err(last_err)
}

/// Exact hits near a one-column centre `x = p₀/D` that cut its rising branch at `level`.
///
/// For an error class `e = q_e·x − p_e` of the centre's lattice, every `r = (p_e + j·p₀)/(q_e + j·D)`
/// is an exact hit at `q_r = q_e + j·D` with `‖D·r − p₀‖ = D·‖e‖/q_r`; its hit takes over from the
/// centre's rising vector at `φ(t') = q_r²/(D·‖e‖)` with value `‖q_r‖·contract(t')`, so `j` is
/// solved for that value to equal `level`. Longer classes land closer to `x`, so the search
/// starts at the shortest class size whose cut lies within `room`; `keep` screens each point
/// exactly.
fn lattice_cuts(
    obj: &Objective,
    centre: &MatrixPoint,
    hit: &(Vec<i64>, Vec<i64>),
    level: f64,
    room: f64,
    mut keep: impl FnMut(&MatrixPoint) -> Result<bool>,
) -> Result<Vec<MatrixPoint>> {
    let (m, n) = (centre.m(), centre.n());
    if n != 1 {
        return Ok(Vec::new());
    }
    let (d, p0) = (hit.0[0], &hit.1);
    let qn = |q: f64| obj.norms.right.eval_unchecked(&[q]);
    // Peak of the cut at `q_r` for an error class of size `e`; it falls as `q_r` grows.
    let peak = |qr: f64, e: f64| -> Option<f64> {
        let t = obj.psi.solve_phi(qn(qr) * qr / (d as f64 * e), m, n).ok()?;
        Some(qn(qr) * t.powf(-1.0 / n as f64))
    };
    // Distance from `x` of the cut for class size `e`.
    let reach = |e: f64| -> f64 {
        let (mut lo, mut hi) = (1.0_f64.ln(), 1e19_f64.ln());
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if peak(mid.exp(), e).is_some_and(|v| v >= level) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        e / lo.exp()
    };
    let mut inner = 1.0 / d as f64;
    while reach(inner) > room {
        inner *= 2.0;
        if inner > 1e6 {
            return Ok(Vec::new());
        }
    }
    // Shells of doubling radius, shortest classes first. Any class serves, so `q_e` only ranges
    // as far as needed for the shell to hold a few hundred of them.
    let mut found = Vec::new();
    let mut radius = 2.0 * inner;
    while found.len() < 8 && inner < 1e6 {
        let qbox = (512.0 / (2.0 * radius).powi(m as i32)).clamp(1.0, (d - 1).max(1) as f64);
        let Ok(points) = box_points(centre, &[qbox], &vec![radius; m], 1 << 16) else { break };
        let mut classes: Vec<(f64, i64, Vec<i64>)> = points
            .into_iter()
            .flat_map(|(q, p)| {
                let neg = (-q[0], p.iter().map(|v| -v).collect::<Vec<i64>>());
                [(q[0], p), neg]
            })
            .filter(|(q, _)| q.abs() < d)
            .map(|(q, p)| (obj.norms.left.eval_unchecked(&centre.offsets(&[q], &p)), q, p))
            .filter(|c| c.0 > inner && c.0 <= radius)
            .collect();
        classes.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (e, qe, pe) in classes {
            for (qr, pr) in cut_hits(d, p0, qe, &pe, |qr| peak(qr, e).is_some_and(|v| v >= level)) {
                if e / qr as f64 > room {
                    continue;
                }
                let x = MatrixPoint::new(m, n, pr.iter().map(|&v| BigRational::new(BigInt::from(v), BigInt::from(qr))).collect())?;
                if keep(&x)? {
                    found.push(x);
                }
            }
            if found.len() >= 8 {
                break;
            }
        }
        (inner, radius) = (radius, radius * 2.0);
    }
    Ok(found)
}

/// The two primitive hits `(q_e + j·D, p_e + j·p₀)` around the last `j ≥ 1` with `reaches`.
fn cut_hits(d: i64, p0: &[i64], qe: i64, pe: &[i64], reaches: impl Fn(f64) -> bool) -> Vec<(i64, Vec<i64>)> {
    let at = |j: i64| -> Option<(i64, Vec<i64>)> {
        let qr = i64::try_from(qe as i128 + j as i128 * d as i128).ok()?;
        let pr = pe
            .iter()
            .zip(p0)
            .map(|(&a, &b)| i64::try_from(a as i128 + j as i128 * b as i128).ok())
            .collect::<Option<Vec<i64>>>()?;
        Some((qr, pr))
    };
    if !reaches((qe + d) as f64) {
        return Vec::new();
    }
    let (mut lo, mut hi) = (1_i64, 2_i64);
    while reaches(qe as f64 + hi as f64 * d as f64) {
        lo = hi;
        hi = match hi.checked_mul(2) {
            Some(h) if at(h).is_some() => h,
            _ => return Vec::new(),
        };
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if reaches(qe as f64 + mid as f64 * d as f64) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    [lo, hi]
        .into_iter()
        .filter_map(at)
        .filter(|(qr, pr)| pr.iter().fold(*qr, |g, &v| g.gcd(&v)) == 1)
        .collect()
}

/// The first switch of `x` strictly after `t`, with a sequence certified past it.
fn next_switch(obj: &Objective, x: &MatrixPoint, t: f64) -> Result<Option<(RealizingSequence, usize)>> {
    let mut horizon = t * 4.0;
    for _ in 0..12 {
        let seq = obj.sequence(x, horizon)?;
        if let Some(i) = seq.t_times.iter().position(|&s| s > t) {
            return Ok(Some((seq, i)));
        }
        if seq.terminated {
            return Ok(None);
        }
        horizon *= 16.0;
    }
    Ok(None)
}

type Accepted = (BoxRegion, f64, f64, Vec<Check>, Option<(Vec<i64>, Vec<i64>)>);

#[allow(clippy::too_many_arguments)]
fn accept_candidate<R: Rng>(
    obj: &Objective,
    c: f64,
    eps: &[f64],
    cert: &ConstructionCertificate,
    state: &State,
    k: usize,
    cand: &MatrixPoint,
    marks: &[(f64, f64)],
    rng: &mut R,
    params: &ConstructParams,
) -> Result<Option<Accepted>> {
    let e_next = eps[k + 1];
    let dist = sup_dist(cand.entries(), &state.bx.center);
    let room = (&state.bx.radius - &dist) * (BigRational::one() - dyadic(-10));
    if !room.is_positive() {
        return Err(Error::SearchExhausted("snapped centre left the box".into()));
    }
    let seq = terminated_sequence(obj, cand)?;
    let mut checks = Vec::new();
    let (sup_all, _) = sup_from(&seq, cert.t0);
    checks.push(Check::below("centre below c from t_0 on", sup_all, c));
    let (peak, s_next) = sup_from(&seq, state.t);
    checks.push(Check::above("centre near-peak after t_{k-1}", peak, c - e_next));
    for (j, &(s, level)) in marks.iter().enumerate() {
        checks.push(Check::above(format!("centre at s_{}", j + 1), seq.lambda_at(s), level));
    }
    if let Some(ch) = checks.iter().find(|ch| !ch.passed) {
        return Err(Error::SearchExhausted(format!("snapped centre failed {:?}: {} vs {}", ch.name, ch.value, ch.bound)));
    }
    let t_next = settle_time(&seq, c - e_next).expect("terminated") * (1.0 + 1e-9);
    let mut all_marks = marks.to_vec();
    all_marks.push((s_next, c - e_next));

    let mut radius = dyadic(floor_log2(&(&state.bx.radius / from_i64(2))).min(floor_log2(&room)));
    for _ in 0..200 {
        let region = BoxRegion::new(cand.m(), cand.n(), cand.entries().to_vec(), radius.clone())?;
        let pts = sample_points(&region, params.box_samples, rng);
        let mut ok = true;
        for pt in &pts {
            let x = MatrixPoint::new(cand.m(), cand.n(), pt.clone())?;
            if !point_ok(obj, &x, c, cert.t0, t_next, &all_marks)? {
                ok = false;
                break;
            }
        }
        if ok {
            checks.push(Check { name: format!("{} box samples", pts.len()), value: pts.len() as f64, bound: 0.0, passed: true });
            return Ok(Some((region, t_next, s_next, checks, final_hit(&seq))));
        }
        radius /= from_i64(2);
    }
    Err(Error::SearchExhausted("no verified box radius".into()))
}

// ---------------------------------------------------------------------------------------
// Replay

fn log_samples(a: f64, b: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| a * (b / a).powf(i as f64 / (count - 1).max(1) as f64)).collect()
}

/// Re-checks a certificate from its data alone:
/// nesting of the boxes (exact), increasing times with `s_k ∈ [t_{k−1}, t_k]`,
/// `f(Θ*, ·) < c` at every exact peak and window end in `[t_0, t_K]`,
/// `f(Θ*, s_k) > c − ε_k` by direct enumeration, and each round's safe point below
/// `c − ε_k` at 20 log-spaced times in `[t_k, 100·t_k]`, also by direct enumeration.
pub fn replay(cert: &ConstructionCertificate) -> Result<ReplayReport> {
    let obj = cert.objective()?;
    let theta = cert.theta_point()?;
    let mut details = Vec::new();
    let c = cert.c;

    let mut nesting = cert.domain.contains_closure_of(&cert.start);
    let mut prev = &cert.start;
    for r in &cert.rounds {
        if !prev.contains_closure_of(&r.region) {
            nesting = false;
            details.push(format!("round {}: box not nested", r.k));
        }
        prev = &r.region;
    }
    if cert.last_box().center != theta.entries() {
        nesting = false;
        details.push("theta is not the last centre".into());
    }

    let mut times = true;
    let mut t_prev = cert.t0;
    for r in &cert.rounds {
        if !(r.s_k >= t_prev && r.s_k <= r.t_k && r.t_k > t_prev) {
            times = false;
            details.push(format!("round {}: s_k = {} outside [{}, {}]", r.k, r.s_k, t_prev, r.t_k));
        }
        t_prev = r.t_k;
    }

    let mut stays_below = true;
    if c > 0.0 && !cert.rounds.is_empty() {
        let t_end = t_prev;
        let seq = obj.sequence(&theta, t_end)?;
        let (v, at) = window_max(&seq, cert.t0, t_end);
        if v >= c {
            stays_below = false;
        }
        details.push(format!("max f(theta, t) over [{:e}, {:e}] = {v:.6} at t = {at:e}", cert.t0, t_end));
    }

    let mut near_peaks = true;
    for r in &cert.rounds {
        let v = obj.eval(&theta, r.s_k)?;
        let level = c - cert.eps[r.k];
        if v <= level {
            near_peaks = false;
        }
        details.push(format!("round {}: f(theta, s_k) = {v:.6} vs {level:.6}", r.k));
    }

    let mut safe_points = true;
    let mut safes: Vec<(usize, &BoxRegion, f64)> = vec![(0, &cert.start, cert.t0)];
    safes.extend(cert.rounds.iter().map(|r| (r.k, &r.region, r.t_k)));
    for (k, bx, t_k) in safes {
        if c <= 0.0 {
            break;
        }
        let x = bx.center_point();
        let level = c - cert.eps[k];
        let worst = log_samples(t_k, 100.0 * t_k, 20)
            .into_iter()
            .map(|t| obj.eval(&x, t))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        if worst >= level {
            safe_points = false;
        }
        details.push(format!("safe point {k}: max sampled f = {worst:.6} vs {level:.6}"));
    }
    let passed = nesting && times && stays_below && near_peaks && safe_points && cert.complete;
    Ok(ReplayReport { passed, nesting, times, stays_below, near_peaks, safe_points, details })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::ratio;

    fn exhaustion_mode() -> ConstructMode {
        ConstructMode::Exhaustion { weights: Weights::equal(2, 1), ex: ExhaustionSpec::sup_product(2, 1) }
    }

    fn unit_box() -> BoxRegion {
        BoxRegion::new(2, 1, vec![ratio(1, 2), ratio(1, 2)], ratio(1, 2)).unwrap()
    }

    fn half_weights(m: usize, n: usize) -> FlowSpec {
        FlowSpec::G(Weights::equal(m, n))
    }

    #[test]
    fn plane_witness_decays_like_inverse_root() {
        let member = FamilyMember::plane(vec![ratio(1, 1), ratio(1, 1)], vec![ratio(0, 1)]).unwrap();
        let x = MatrixPoint::new(1, 2, vec![ratio(1, 3), ratio(-1, 3)]).unwrap();
        let w = witness_vector(&member, &x, &half_weights(1, 2), 100.0).unwrap();
        assert_eq!((w.q.clone(), w.p.clone()), (vec![1, 1], vec![0]));
        assert!((w.value - 0.1).abs() < 1e-12);
    }

    #[test]
    fn witness_rejects_points_off_the_member() {
        let member = FamilyMember::line(vec![1, 0], vec![ratio(0, 1), ratio(1, 2)]).unwrap();
        let x = MatrixPoint::new(2, 1, vec![ratio(1, 3), ratio(1, 3)]).unwrap();
        assert!(matches!(witness_vector(&member, &x, &half_weights(2, 1), 10.0), Err(Error::NotOnMember)));
    }

    #[test]
    fn line_witness_lies_in_the_lattice() {
        let member = FamilyMember::line(vec![1, 0], vec![ratio(0, 1), ratio(1, 2)]).unwrap();
        let x = member.point(&ratio(55, 34)).unwrap();
        for t in [1.5, 10.0, 1e3, 1e6] {
            let w = witness_vector(&member, &x, &half_weights(2, 1), t).unwrap();
            let off = x.offsets_exact(&w.q, &w.p);
            // Θq − p is z0·(q_k y − p_k)·i, so the second coordinate vanishes exactly.
            assert!(off[1].is_zero());
            assert!(w.value <= family_envelope(&member, &half_weights(2, 1), t).unwrap() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn line_uniformity_time() {
        let member = FamilyMember::line(vec![1, 0], vec![ratio(0, 1), ratio(0, 1)]).unwrap();
        let u = uniformity_time(&member, 0.1, &half_weights(2, 1), &AmbientNorm::sup_product(2, 1)).unwrap();
        assert!((u.t0 - 1e4).abs() < 1e-6 * 1e4);
    }

    #[test]
    fn plane_uniformity_time() {
        let member = FamilyMember::plane(vec![ratio(1, 1), ratio(1, 1)], vec![ratio(0, 1)]).unwrap();
        let u = uniformity_time(&member, 0.1, &half_weights(1, 2), &AmbientNorm::sup_product(1, 2)).unwrap();
        assert!((u.t0 - 100.0).abs() < 1e-9);
    }

    #[test]
    fn uniformity_time_grows_as_the_level_falls() {
        let member = FamilyMember::line(vec![2, 1], vec![ratio(1, 3), ratio(0, 1)]).unwrap();
        let norm = AmbientNorm::sup_product(2, 1);
        let times: Vec<f64> =
            [0.5, 0.1, 0.01].iter().map(|&c| uniformity_time(&member, c, &half_weights(2, 1), &norm).unwrap().t0).collect();
        assert!(times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn line_uniformity_needs_contraction() {
        let member = FamilyMember::line(vec![1], vec![ratio(0, 1)]).unwrap();
        assert!(uniformity_time(&member, 0.1, &half_weights(1, 1), &AmbientNorm::sup_product(1, 1)).is_err());
    }

    #[test]
    fn connect_scales_to_an_integral_direction() {
        let r = connect_line(&[ratio(0, 1), ratio(0, 1)], &[ratio(1, 2), ratio(1, 3)]).unwrap();
        assert_eq!(r.member.kind, FamilyKind::Line { i: vec![3, 2], z: vec![ratio(0, 1), ratio(0, 1)] });
        assert_eq!(r.scaling, ratio(6, 1));
    }

    #[test]
    fn connect_keeps_a_line_already_through_the_point() {
        let prev = FamilyMember::line(vec![1, 1], vec![ratio(0, 1), ratio(0, 1)]).unwrap();
        let a = prev.point(&ratio(1, 5)).unwrap();
        let b = prev.point(&ratio(2, 7)).unwrap();
        assert_eq!(connect_segment(&a, &b, &prev).unwrap().member, prev);
    }

    #[test]
    fn connect_planes_meet_at_the_junction() {
        let prev = FamilyMember::plane(vec![ratio(1, 1), ratio(0, 1)], vec![ratio(1, 4)]).unwrap();
        let on_prev = MatrixPoint::new(1, 2, vec![ratio(1, 4), ratio(2, 3)]).unwrap();
        let other = MatrixPoint::new(1, 2, vec![ratio(1, 3), ratio(1, 5)]).unwrap();
        let r = connect_segment(&other, &on_prev, &prev).unwrap();
        let j = MatrixPoint::new(1, 2, r.junction.clone()).unwrap();
        assert!(prev.contains(&j) && r.member.contains(&j) && r.member.contains(&other));
    }

    #[test]
    fn zero_target_stops_on_a_rational_point() {
        let out = construct_theta(&exhaustion_mode(), 0.0, &unit_box(), &ConstructParams::default()).unwrap();
        assert!(out.certificate.rounds.is_empty() && out.certificate.complete);
        let seq = terminated_sequence(&Objective::new(&exhaustion_mode()).unwrap(), &out.theta).unwrap();
        assert!(final_hit(&seq).is_some());
        assert!(seq.lambda_at(1e12) < 1e-6);
    }

    #[test]
    fn target_at_the_upper_end_is_rejected() {
        assert!(construct_theta(&exhaustion_mode(), 1.0, &unit_box(), &ConstructParams::default()).is_err());
        assert!(construct_theta(&exhaustion_mode(), -0.1, &unit_box(), &ConstructParams::default()).is_err());
    }

    #[test]
    fn one_by_one_is_out_of_scope() {
        let mode = ConstructMode::Exhaustion { weights: Weights::equal(1, 1), ex: ExhaustionSpec::sup_product(1, 1) };
        let dom = BoxRegion::new(1, 1, vec![ratio(1, 2)], ratio(1, 2)).unwrap();
        assert!(construct_theta(&mode, 0.5, &dom, &ConstructParams::default()).is_err());
    }

    #[test]
    fn exhaustion_mode_needs_equal_weights() {
        let weights = Weights::new(vec![ratio(1, 3), ratio(2, 3)], vec![ratio(1, 1)]).unwrap();
        let mode = ConstructMode::Exhaustion { weights, ex: ExhaustionSpec::sup_product(2, 1) };
        assert!(construct_theta(&mode, 0.5, &unit_box(), &ConstructParams::default()).is_err());
    }

    #[test]
    fn two_rounds_replay_and_seeds_differ() {
        let params = |seed| ConstructParams { rounds: 2, seed, ..Default::default() };
        let a = construct_theta(&exhaustion_mode(), 0.5, &unit_box(), &params(1)).unwrap();
        let b = construct_theta(&exhaustion_mode(), 0.5, &unit_box(), &params(2)).unwrap();
        for out in [&a, &b] {
            assert!(out.certificate.complete, "{:?}", out.certificate.failure);
            assert!(out.certificate.replay.as_ref().unwrap().passed);
        }
        assert_ne!(a.theta, b.theta);
    }

    #[test]
    fn tampered_certificate_fails_replay() {
        let params = ConstructParams { rounds: 2, seed: 3, ..Default::default() };
        let mut cert = construct_theta(&exhaustion_mode(), 0.5, &unit_box(), &params).unwrap().certificate;
        cert.rounds[1].s_k = cert.rounds[0].s_k * 0.5;
        assert!(!replay(&cert).unwrap().passed);
    }

    #[test]
    fn certificate_round_trips_through_json() {
        let params = ConstructParams { rounds: 1, seed: 5, ..Default::default() };
        let cert = construct_theta(&exhaustion_mode(), 0.5, &unit_box(), &params).unwrap().certificate;
        let back: ConstructionCertificate = serde_json::from_str(&serde_json::to_string(&cert).unwrap()).unwrap();
        assert_eq!(back, cert);
        assert!(replay(&back).unwrap().passed);
    }
}
