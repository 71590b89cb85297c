//! Constrained binary quadratic problems and the auxiliary-field energy.
//!
//! A [`ConstrainedProblem`] is a quadratic objective `f0(x)` over binary
//! variables together with `m` affine equality constraints `a_k . x = C_k`.
//! The penalty formulation folds the constraints into
//! `L(x) = f0(x) + lambda * sum_k (a_k . x - C_k)^2`, while the
//! auxiliary-field formulation samples from `exp(-beta * E_v(x))` with
//! `E_v(x) = f0(x) - sum_k v_k * a_k . x`, which stays quadratic no matter how
//! many constraints there are.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A configuration `x` in `{0,1}^N`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct BinaryVector(Vec<u8>);

impl BinaryVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(Error::InvalidValue(format!(
                "bit {pos} has value {}, expected 0 or 1",
                bits[pos]
            )));
        }
        Ok(Self(bits))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1; n])
    }

    /// The configuration whose bit `i` is bit `i` of `index`.
    pub fn from_index(index: u64, n: usize) -> Self {
        Self((0..n).map(|i| ((index >> i) & 1) as u8).collect())
    }

    pub fn from_bools(bits: impl IntoIterator<Item = bool>) -> Self {
        Self(bits.into_iter().map(u8::from).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    pub fn complement(&self) -> Self {
        Self(self.0.iter().map(|&b| 1 - b).collect())
    }

    pub fn flip(&mut self, i: usize) {
        self.0[i] ^= 1;
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }
}

impl TryFrom<Vec<u8>> for BinaryVector {
    type Error = Error;

    fn try_from(bits: Vec<u8>) -> Result<Self> {
        Self::new(bits)
    }
}

impl From<BinaryVector> for Vec<u8> {
    fn from(x: BinaryVector) -> Self {
        x.0
    }
}

impl fmt::Debug for BinaryVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

fn check_finite(what: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidValue(format!("{what} is not finite: {value}")))
    }
}

/// Sparse quadratic-or-lower polynomial over binary variables.
///
/// A term `(i, i, w)` is linear since `x_i^2 = x_i`. Terms are kept sorted by
/// `(i, j)` with `i <= j`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    n_vars: usize,
    terms: Vec<(usize, usize, f64)>,
}

impl QuadraticObjective {
    /// Pairs given as `(j, i)` with `j > i` are normalized to `(i, j)`.
    /// Duplicate pairs are rejected rather than merged.
    pub fn new(n_vars: usize, terms: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(terms.len());
        let mut normalized = Vec::with_capacity(terms.len());
        for (i, j, w) in terms {
            if i >= n_vars || j >= n_vars {
                return Err(Error::InvalidValue(format!(
                    "term ({i}, {j}) out of range for {n_vars} variables"
                )));
            }
            check_finite("objective weight", w)?;
            let key = (i.min(j), i.max(j));
            if !seen.insert(key) {
                return Err(Error::InvalidValue(format!(
                    "duplicate objective term ({}, {})",
                    key.0, key.1
                )));
            }
            normalized.push((key.0, key.1, w));
        }
        normalized.sort_by_key(|t| (t.0, t.1));
        Ok(Self {
            n_vars,
            terms: normalized,
        })
    }

    pub fn zero(n_vars: usize) -> Self {
        Self {
            n_vars,
            terms: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn terms(&self) -> &[(usize, usize, f64)] {
        &self.terms
    }

    pub fn evaluate(&self, x: &BinaryVector) -> Result<f64> {
        Error::check_len("objective evaluation", self.n_vars, x.len())?;
        Ok(self.eval_unchecked(x.bits()))
    }

    pub(crate) fn eval_unchecked(&self, x: &[u8]) -> f64 {
        self.terms
            .iter()
            .filter(|&&(i, j, _)| x[i] == 1 && x[j] == 1)
            .map(|&(_, _, w)| w)
            .sum()
    }
}

/// Affine equality constraint `coeffs . x = target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub coeffs: Vec<f64>,
    pub target: f64,
}

impl LinearConstraint {
    pub fn new(coeffs: Vec<f64>, target: f64) -> Result<Self> {
        for &c in &coeffs {
            check_finite("constraint coefficient", c)?;
        }
        check_finite("constraint target", target)?;
        Ok(Self { coeffs, target })
    }

    /// `f_k(x) = coeffs . x`
    pub fn value(&self, x: &BinaryVector) -> Result<f64> {
        Error::check_len("constraint evaluation", self.coeffs.len(), x.len())?;
        Ok(self.value_unchecked(x.bits()))
    }

    #[inline]
    pub(crate) fn value_unchecked(&self, x: &[u8]) -> f64 {
        self.coeffs
            .iter()
            .zip(x)
            .filter(|(_, &b)| b == 1)
            .map(|(c, _)| c)
            .sum()
    }
}

/// Minimize `f0(x)` subject to `f_k(x) = C_k` for every constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedProblem {
    objective: QuadraticObjective,
    constraints: Vec<LinearConstraint>,
}

impl ConstrainedProblem {
    pub fn new(objective: QuadraticObjective, constraints: Vec<LinearConstraint>) -> Result<Self> {
        let n = objective.n_vars();
        for c in &constraints {
            Error::check_len("constraint coefficients", n, c.coeffs.len())?;
        }
        Ok(Self {
            objective,
            constraints,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.objective.n_vars()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective(&self) -> &QuadraticObjective {
        &self.objective
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    pub fn targets(&self) -> Vec<f64> {
        self.constraints.iter().map(|c| c.target).collect()
    }

    pub fn check_dims(&self, x: &BinaryVector) -> Result<()> {
        Error::check_len("binary vector", self.n_vars(), x.len())
    }

    /// All `f_k(x)` values.
    pub fn constraint_values(&self, x: &BinaryVector) -> Result<Vec<f64>> {
        self.check_dims(x)?;
        Ok(self.constraint_values_unchecked(x.bits()))
    }

    pub(crate) fn constraint_values_unchecked(&self, x: &[u8]) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| c.value_unchecked(x))
            .collect()
    }

    /// `f_k(x) - C_k` for every constraint.
    pub fn constraint_residuals(&self, x: &BinaryVector) -> Result<Vec<f64>> {
        self.check_dims(x)?;
        Ok(self
            .constraints
            .iter()
            .map(|c| c.value_unchecked(x.bits()) - c.target)
            .collect())
    }

    /// `f0(x) + lambda * sum_k (f_k(x) - C_k)^2`
    pub fn penalty_loss(&self, x: &BinaryVector, lambda: f64) -> Result<f64> {
        self.check_dims(x)?;
        Ok(self.penalty_loss_unchecked(x.bits(), lambda))
    }

    pub(crate) fn penalty_loss_unchecked(&self, x: &[u8], lambda: f64) -> f64 {
        let penalty: f64 = self
            .constraints
            .iter()
            .map(|c| {
                let r = c.value_unchecked(x) - c.target;
                r * r
            })
            .sum();
        self.objective.eval_unchecked(x) + lambda * penalty
    }

    /// The QUBO `E_v(x) = f0(x) - sum_k v_k f_k(x)` whose Boltzmann
    /// distribution the auxiliary-field method samples.
    pub fn effective_qubo(&self, v: &AuxiliaryState) -> Result<EffectiveQubo> {
        Error::check_len("auxiliary variables", self.n_constraints(), v.len())?;
        let n = self.n_vars();
        let mut linear = vec![0.0; n];
        let mut quadratic = Vec::new();
        for &(i, j, w) in self.objective.terms() {
            if i == j {
                linear[i] += w;
            } else {
                quadratic.push((i, j, w));
            }
        }
        for (c, &vk) in self.constraints.iter().zip(v.values()) {
            if vk == 0.0 {
                continue;
            }
            for (l, &a) in linear.iter_mut().zip(&c.coeffs) {
                *l -= vk * a;
            }
        }
        Ok(EffectiveQubo {
            n_vars: n,
            linear,
            quadratic,
            offset: 0.0,
        })
    }

    pub fn to_json(&self) -> ProblemFile {
        ProblemFile {
            n_vars: self.n_vars(),
            objective: ObjectiveFile {
                terms: self.objective.terms().to_vec(),
            },
            constraints: self.constraints.clone(),
        }
    }
}

/// On-disk problem layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    pub n_vars: usize,
    pub objective: ObjectiveFile,
    pub constraints: Vec<LinearConstraint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectiveFile {
    pub terms: Vec<(usize, usize, f64)>,
}

impl TryFrom<ProblemFile> for ConstrainedProblem {
    type Error = Error;

    fn try_from(file: ProblemFile) -> Result<Self> {
        let objective = QuadraticObjective::new(file.n_vars, file.objective.terms)?;
        let constraints = file
            .constraints
            .into_iter()
            .map(|c| LinearConstraint::new(c.coeffs, c.target))
            .collect::<Result<Vec<_>>>()?;
        ConstrainedProblem::new(objective, constraints)
    }
}

impl Serialize for ConstrainedProblem {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ConstrainedProblem {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = ProblemFile::deserialize(d)?;
        ConstrainedProblem::try_from(file).map_err(serde::de::Error::custom)
    }
}

/// Penalty strength and sampling inverse temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub lambda: f64,
    pub beta: f64,
}

impl PenaltyParams {
    pub fn new(lambda: f64, beta: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidValue(format!("lambda must be > 0, got {lambda}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidValue(format!("beta must be > 0, got {beta}")));
        }
        Ok(Self { lambda, beta })
    }
}

/// Auxiliary variables `v^(t)` and the iteration they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryState {
    v: Vec<f64>,
    iteration: usize,
}

impl AuxiliaryState {
    pub fn zeros(m: usize) -> Self {
        Self {
            v: vec![0.0; m],
            iteration: 0,
        }
    }

    pub fn new(v: Vec<f64>, iteration: usize) -> Result<Self> {
        for &x in &v {
            check_finite("auxiliary variable", x)?;
        }
        Ok(Self { v, iteration })
    }

    /// Internal constructor for states produced by the update rule; finiteness
    /// is checked by the caller's divergence guard.
    pub(crate) fn from_parts(v: Vec<f64>, iteration: usize) -> Self {
        Self { v, iteration }
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn max_abs(&self) -> f64 {
        self.v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }
}

/// `offset + sum_i linear_i x_i + sum_{i<j} w_ij x_i x_j`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveQubo {
    pub(crate) n_vars: usize,
    pub(crate) linear: Vec<f64>,
    pub(crate) quadratic: Vec<(usize, usize, f64)>,
    pub(crate) offset: f64,
}

impl EffectiveQubo {
    /// Validates indices (`i < j < n_vars`, no duplicates) and finiteness.
    pub fn new(
        linear: Vec<f64>,
        quadratic: Vec<(usize, usize, f64)>,
        offset: f64,
    ) -> Result<Self> {
        let n = linear.len();
        for &l in &linear {
            check_finite("linear coefficient", l)?;
        }
        check_finite("offset", offset)?;
        let mut seen = HashSet::with_capacity(quadratic.len());
        for &(i, j, w) in &quadratic {
            if i >= j || j >= n {
                return Err(Error::InvalidValue(format!(
                    "quadratic term ({i}, {j}) must satisfy i < j < {n}"
                )));
            }
            check_finite("quadratic coefficient", w)?;
            if !seen.insert((i, j)) {
                return Err(Error::InvalidValue(format!("duplicate quadratic term ({i}, {j})")));
            }
        }
        Ok(Self {
            n_vars: n,
            linear,
            quadratic,
            offset,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn quadratic(&self) -> &[(usize, usize, f64)] {
        &self.quadratic
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn energy(&self, x: &BinaryVector) -> Result<f64> {
        Error::check_len("qubo energy", self.n_vars, x.len())?;
        Ok(self.energy_unchecked(x.bits()))
    }

    pub(crate) fn energy_unchecked(&self, x: &[u8]) -> f64 {
        let lin: f64 = self
            .linear
            .iter()
            .zip(x)
            .filter(|(_, &b)| b == 1)
            .map(|(h, _)| h)
            .sum();
        let quad: f64 = self
            .quadratic
            .iter()
            .filter(|&&(i, j, _)| x[i] == 1 && x[j] == 1)
            .map(|&(_, _, w)| w)
            .sum();
        self.offset + lin + quad
    }

    /// Spin form under `x = (s + 1) / 2`.
    pub fn ising_view(&self) -> IsingModel {
        let mut h: Vec<f64> = self.linear.iter().map(|l| l / 2.0).collect();
        let mut offset = self.offset + self.linear.iter().sum::<f64>() / 2.0;
        let mut couplings = Vec::with_capacity(self.quadratic.len());
        for &(i, j, w) in &self.quadratic {
            let q = w / 4.0;
            h[i] += q;
            h[j] += q;
            offset += q;
            couplings.push((i, j, q));
        }
        IsingModel {
            h,
            couplings,
            offset,
        }
    }

    /// Symmetric adjacency: for every variable, its `(neighbor, weight)` list.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n_vars];
        for &(i, j, w) in &self.quadratic {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        adj
    }
}

/// `offset + sum_i h_i s_i + sum_{i<j} J_ij s_i s_j` over `s` in `{-1,+1}^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingModel {
    pub h: Vec<f64>,
    pub couplings: Vec<(usize, usize, f64)>,
    pub offset: f64,
}

impl IsingModel {
    pub fn energy(&self, s: &[i8]) -> Result<f64> {
        Error::check_len("ising energy", self.h.len(), s.len())?;
        let field: f64 = self.h.iter().zip(s).map(|(h, &si)| h * f64::from(si)).sum();
        let coupling: f64 = self
            .couplings
            .iter()
            .map(|&(i, j, w)| w * f64::from(s[i]) * f64::from(s[j]))
            .sum();
        Ok(self.offset + field + coupling)
    }

    pub fn spins_of(x: &BinaryVector) -> Vec<i8> {
        x.bits().iter().map(|&b| 2 * b as i8 - 1).collect()
    }

    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.h.len()];
        for &(i, j, w) in &self.couplings {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        adj
    }
}
