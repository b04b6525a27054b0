//! Exact multivariate polynomials with rational coefficients, and the
//! polynomial vector fields built on top of them.
//!
//! Everything symbolic (partial derivatives, Lie brackets, Jacobians) is
//! computed exactly over `BigRational`. Floating point only appears when a
//! polynomial is evaluated, through the [`CompiledPoly`] form that converts the
//! coefficients once.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use nalgebra::DMatrix;
use num::{BigInt, BigRational, One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub type Rational = BigRational;

/// Exponent multi-index, ordered graded-lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(dim: usize) -> Self {
        Monomial(vec![0; dim])
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    fn mul(&self, other: &Monomial) -> Monomial {
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One term of the JSON polynomial literal: `{"coeff": "p/q", "exponents": [..]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermLiteral {
    pub coeff: String,
    pub exponents: Vec<u32>,
}

/// A polynomial in `dim` variables. Zero coefficients are never stored, so
/// structural equality is mathematical equality.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Poly {
    dim: usize,
    terms: BTreeMap<Monomial, Rational>,
}

fn rat(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

impl Poly {
    pub fn zero(dim: usize) -> Self {
        Poly {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, c: Rational) -> Self {
        let mut p = Poly::zero(dim);
        p.add_term(Monomial::one(dim), c);
        p
    }

    pub fn from_int(dim: usize, c: i64) -> Self {
        Poly::constant(dim, rat(c))
    }

    /// The coordinate function `x_{axis}` (zero-based axis).
    pub fn var(dim: usize, axis: usize) -> Self {
        assert!(axis < dim, "axis {axis} out of range for dimension {dim}");
        let mut e = vec![0; dim];
        e[axis] = 1;
        let mut p = Poly::zero(dim);
        p.add_term(Monomial(e), Rational::one());
        p
    }

    /// Builds a polynomial from `(coefficient, exponents)` pairs; like terms are
    /// merged and cancelled terms dropped.
    pub fn from_terms<I>(dim: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Rational, Vec<u32>)>,
    {
        let mut p = Poly::zero(dim);
        for (c, e) in terms {
            check_dim(dim, e.len())?;
            p.add_term(Monomial(e), c);
        }
        Ok(p)
    }

    pub fn from_literal(dim: usize, terms: &[TermLiteral]) -> Result<Self> {
        let parsed = terms
            .iter()
            .map(|t| {
                let c = parse_rational(&t.coeff)?;
                if t.exponents.len() != dim {
                    return Err(Error::Literal(format!(
                        "term `{}` has {} exponents, expected {dim}",
                        t.coeff,
                        t.exponents.len()
                    )));
                }
                Ok((c, t.exponents.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Poly::from_terms(dim, parsed)
    }

    pub fn to_literal(&self) -> Vec<TermLiteral> {
        self.terms
            .iter()
            .map(|(m, c)| TermLiteral {
                coeff: c.to_string(),
                exponents: m.0.clone(),
            })
            .collect()
    }

    fn add_term(&mut self, m: Monomial, c: Rational) {
        if c.is_zero() {
            return;
        }
        let remove = match self.terms.get_mut(&m) {
            Some(existing) => {
                *existing += &c;
                existing.is_zero()
            }
            None => {
                self.terms.insert(m, c);
                false
            }
        };
        if remove {
            self.terms.retain(|_, v| !v.is_zero());
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Rational)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn scale(&self, c: &Rational) -> Poly {
        if c.is_zero() {
            return Poly::zero(self.dim);
        }
        Poly {
            dim: self.dim,
            terms: self.terms.iter().map(|(m, v)| (m.clone(), v * c)).collect(),
        }
    }

    pub fn pow(&self, e: u32) -> Poly {
        let mut out = Poly::from_int(self.dim, 1);
        for _ in 0..e {
            out = &out * self;
        }
        out
    }

    /// Formal partial derivative with respect to `x_{axis}`.
    pub fn partial(&self, axis: usize) -> Result<Poly> {
        if axis >= self.dim {
            return Err(Error::AxisOutOfRange {
                axis,
                dim: self.dim,
            });
        }
        let mut out = Poly::zero(self.dim);
        for (m, c) in &self.terms {
            let e = m.0[axis];
            if e == 0 {
                continue;
            }
            let mut em = m.0.clone();
            em[axis] -= 1;
            out.add_term(Monomial(em), c * rat(e as i64));
        }
        Ok(out)
    }

    pub fn gradient(&self) -> Vec<Poly> {
        (0..self.dim)
            .map(|i| self.partial(i).expect("axis in range"))
            .collect()
    }

    /// Evaluates the polynomial as a direct sum of monomials in `f64`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self
            .terms
            .iter()
            .map(|(m, c)| rational_to_f64(c) * monomial_value(&m.0, x))
            .sum())
    }

    pub fn eval_exact(&self, x: &[Rational]) -> Result<Rational> {
        check_dim(self.dim, x.len())?;
        let mut acc = Rational::zero();
        for (m, c) in &self.terms {
            let mut t = c.clone();
            for (xi, &e) in x.iter().zip(&m.0) {
                for _ in 0..e {
                    t *= xi;
                }
            }
            acc += t;
        }
        Ok(acc)
    }

    pub fn compile(&self) -> CompiledPoly {
        CompiledPoly {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .map(|(m, c)| (rational_to_f64(c), m.0.clone()))
                .collect(),
        }
    }
}

pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    Rational::from_str(s).map_err(|_| Error::Literal(format!("cannot parse `{s}` as a rational")))
}

pub fn rational_to_f64(c: &Rational) -> f64 {
    c.to_f64().unwrap_or_else(|| {
        // numerator/denominator too large for direct conversion
        let n = c.numer().to_f64().unwrap_or(f64::NAN);
        let d = c.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

#[inline]
fn monomial_value(e: &[u32], x: &[f64]) -> f64 {
    let mut v = 1.0;
    for (xi, &k) in x.iter().zip(e) {
        if k != 0 {
            v *= xi.powi(k as i32);
        }
    }
    v
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (m, c)) in self.terms.iter().rev().enumerate() {
            let neg = c.is_negative();
            let a = c.abs();
            if k == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {} ", if neg { "-" } else { "+" })?;
            }
            let vars: Vec<String> =
                m.0.iter()
                    .enumerate()
                    .filter(|(_, &e)| e > 0)
                    .map(|(i, &e)| {
                        if e == 1 {
                            format!("x{}", i + 1)
                        } else {
                            format!("x{}^{}", i + 1, e)
                        }
                    })
                    .collect();
            if vars.is_empty() {
                write!(f, "{a}")?;
            } else if a.is_one() {
                write!(f, "{}", vars.join("*"))?;
            } else {
                write!(f, "{a}*{}", vars.join("*"))?;
            }
        }
        Ok(())
    }
}

impl<'a> Add<&'a Poly> for &'a Poly {
    type Output = Poly;
    fn add(self, rhs: &'a Poly) -> Poly {
        assert_eq!(self.dim, rhs.dim, "polynomial dimension mismatch");
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }
}

impl<'a> Sub<&'a Poly> for &'a Poly {
    type Output = Poly;
    fn sub(self, rhs: &'a Poly) -> Poly {
        assert_eq!(self.dim, rhs.dim, "polynomial dimension mismatch");
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }
}

impl<'a> Mul<&'a Poly> for &'a Poly {
    type Output = Poly;
    fn mul(self, rhs: &'a Poly) -> Poly {
        assert_eq!(self.dim, rhs.dim, "polynomial dimension mismatch");
        let mut out = Poly::zero(self.dim);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &rhs.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        Poly {
            dim: self.dim,
            terms: self.terms.iter().map(|(m, c)| (m.clone(), -c)).collect(),
        }
    }
}

macro_rules! forward_owned_binop {
    ($tr:ident, $f:ident) => {
        impl $tr<Poly> for Poly {
            type Output = Poly;
            fn $f(self, rhs: Poly) -> Poly {
                (&self).$f(&rhs)
            }
        }
    };
}
forward_owned_binop!(Add, add);
forward_owned_binop!(Sub, sub);
forward_owned_binop!(Mul, mul);

impl Neg for Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        -&self
    }
}

/// Floating-point evaluation form of a [`Poly`].
#[derive(Clone, Debug)]
pub struct CompiledPoly {
    dim: usize,
    terms: Vec<(f64, Vec<u32>)>,
}

impl CompiledPoly {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.terms
            .iter()
            .map(|(c, e)| c * monomial_value(e, x))
            .sum()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
}

/// `X = Σ f_i ∂_{x_i}` with polynomial coefficients.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolyVectorField {
    dim: usize,
    components: Vec<Poly>,
}

impl PolyVectorField {
    pub fn new(components: Vec<Poly>) -> Result<Self> {
        let dim = components.len();
        if dim == 0 {
            return Err(Error::InvalidSystem("vector field with no components".into()));
        }
        for c in &components {
            check_dim(dim, c.dim())?;
        }
        Ok(PolyVectorField { dim, components })
    }

    pub fn zero(dim: usize) -> Self {
        PolyVectorField {
            dim,
            components: vec![Poly::zero(dim); dim],
        }
    }

    /// The coordinate field `∂_{x_{axis}}`.
    pub fn coordinate(dim: usize, axis: usize) -> Self {
        let mut f = PolyVectorField::zero(dim);
        f.components[axis] = Poly::from_int(dim, 1);
        f
    }

    pub fn from_literal(dim: usize, comps: &[Vec<TermLiteral>]) -> Result<Self> {
        if comps.len() != dim {
            return Err(Error::Literal(format!(
                "vector field has {} components, expected {dim}",
                comps.len()
            )));
        }
        let components = comps
            .iter()
            .map(|c| Poly::from_literal(dim, c))
            .collect::<Result<Vec<_>>>()?;
        PolyVectorField::new(components)
    }

    pub fn to_literal(&self) -> Vec<Vec<TermLiteral>> {
        self.components.iter().map(Poly::to_literal).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Poly] {
        &self.components
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Poly::is_zero)
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    /// Entry `(i, k)` is `∂_{x_k}` of component `i`, evaluated at `x`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(self.dim, x.len())?;
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (i, c) in self.components.iter().enumerate() {
            for k in 0..self.dim {
                m[(i, k)] = c.partial(k)?.eval(x)?;
            }
        }
        Ok(m)
    }

    pub fn scale(&self, c: &Rational) -> PolyVectorField {
        PolyVectorField {
            dim: self.dim,
            components: self.components.iter().map(|p| p.scale(c)).collect(),
        }
    }

    pub fn add(&self, other: &PolyVectorField) -> Result<PolyVectorField> {
        check_dim(self.dim, other.dim)?;
        Ok(PolyVectorField {
            dim: self.dim,
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// Derivative of the polynomial `g` along this field, `Σ f_j ∂_j g`.
    pub fn apply(&self, g: &Poly) -> Result<Poly> {
        check_dim(self.dim, g.dim())?;
        let mut out = Poly::zero(self.dim);
        for (j, f) in self.components.iter().enumerate() {
            if f.is_zero() {
                continue;
            }
            let d = g.partial(j)?;
            if !d.is_zero() {
                out = &out + &(f * &d);
            }
        }
        Ok(out)
    }

    pub fn compile(&self) -> CompiledField {
        CompiledField {
            components: self.components.iter().map(Poly::compile).collect(),
        }
    }
}

impl fmt::Display for PolyVectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, c) in self.components.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({c})∂{}", i + 1)?;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// Exact Lie bracket `[X, Y]` with components `h_i = Σ_j (f_j ∂_j g_i − g_j ∂_j f_i)`.
pub fn lie_bracket(x: &PolyVectorField, y: &PolyVectorField) -> Result<PolyVectorField> {
    check_dim(x.dim, y.dim)?;
    let components = (0..x.dim)
        .map(|i| Ok(&x.apply(&y.components[i])? - &y.apply(&x.components[i])?))
        .collect::<Result<Vec<_>>>()?;
    Ok(PolyVectorField {
        dim: x.dim,
        components,
    })
}

#[derive(Clone, Debug)]
pub struct CompiledField {
    components: Vec<CompiledPoly>,
}

impl CompiledField {
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(x);
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }
}

/// The ordered family `{X_1, …, X_N}`, `N ≥ 2`, all on `ℝ^n`.
///
/// Construction precompiles the fields and their Jacobians for fast
/// floating-point evaluation; the value is immutable afterwards.
#[derive(Clone, Debug)]
pub struct VectorFieldSystem {
    dim: usize,
    fields: Vec<PolyVectorField>,
    compiled: Vec<CompiledField>,
    // jacobians[j][i * dim + k] = ∂_k (X_j)_i
    jacobians: Vec<Vec<CompiledPoly>>,
}

impl VectorFieldSystem {
    pub fn new(fields: Vec<PolyVectorField>) -> Result<Self> {
        if fields.len() < 2 {
            return Err(Error::InvalidSystem(format!(
                "need at least 2 vector fields, got {}",
                fields.len()
            )));
        }
        let dim = fields[0].dim();
        for f in &fields {
            check_dim(dim, f.dim())?;
        }
        let compiled = fields.iter().map(PolyVectorField::compile).collect();
        let jacobians = fields
            .iter()
            .map(|f| {
                let mut v = Vec::with_capacity(dim * dim);
                for c in f.components() {
                    for k in 0..dim {
                        v.push(c.partial(k).expect("axis in range").compile());
                    }
                }
                v
            })
            .collect();
        Ok(VectorFieldSystem {
            dim,
            fields,
            compiled,
            jacobians,
        })
    }

    /// `{∂_1, …, ∂_n}`.
    pub fn riemannian(dim: usize) -> Result<Self> {
        VectorFieldSystem::new(
            (0..dim)
                .map(|i| PolyVectorField::coordinate(dim, i))
                .collect(),
        )
    }

    pub fn from_literal(dim: usize, fields: &[Vec<Vec<TermLiteral>>]) -> Result<Self> {
        VectorFieldSystem::new(
            fields
                .iter()
                .map(|f| PolyVectorField::from_literal(dim, f))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn to_literal(&self) -> Vec<Vec<Vec<TermLiteral>>> {
        self.fields.iter().map(PolyVectorField::to_literal).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn fields(&self) -> &[PolyVectorField] {
        &self.fields
    }

    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        VectorFieldSystem::new(order.iter().map(|&i| self.fields[i].clone()).collect())
    }

    /// Writes `X_j(x)` into `out[j*n .. (j+1)*n]`.
    #[inline]
    pub fn eval_all_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim;
        for (j, f) in self.compiled.iter().enumerate() {
            f.eval_into(x, &mut out[j * n..(j + 1) * n]);
        }
    }

    /// `X_j(x)` as an `n × N` matrix whose columns are the fields.
    pub fn eval_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        let mut buf = vec![0.0; n * self.len()];
        self.eval_all_into(x, &mut buf);
        DMatrix::from_column_slice(n, self.len(), &buf)
    }

    pub fn eval_field(&self, j: usize, x: &[f64]) -> Vec<f64> {
        self.compiled[j].eval(x)
    }

    /// `∂_k (X_j)_i` at `x`, row `i`, column `k`.
    pub fn jacobian(&self, j: usize, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        DMatrix::from_fn(n, n, |i, k| self.jacobians[j][i * n + k].eval(x))
    }

    /// `Σ_i ∂_k (X_j)_i p_i` for every `k`, i.e. `DX_j(x)ᵀ p`.
    #[inline]
    pub fn jacobian_t_dot_into(&self, j: usize, x: &[f64], p: &[f64], out: &mut [f64]) {
        let n = self.dim;
        for (k, o) in out.iter_mut().enumerate().take(n) {
            let mut s = 0.0;
            for (i, pi) in p.iter().enumerate() {
                if *pi != 0.0 {
                    s += self.jacobians[j][i * n + k].eval(x) * pi;
                }
            }
            *o = s;
        }
    }

    /// `⟨X_j(x), p⟩` for every `j`.
    pub fn pairings(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut buf = vec![0.0; n * self.len()];
        self.eval_all_into(x, &mut buf);
        buf.chunks(n)
            .map(|xj| xj.iter().zip(p).map(|(a, b)| a * b).sum())
            .collect()
    }
}
