//! Atomistic energy, forces, linearization and phonon symbols.
//!
//! Everything is assembled from *clusters*: a term anchored at a site `x`
//! that depends on the bond vectors `r_k = D⁺_{ε,s_k} y(x)` for a fixed
//! tuple of stencil offsets `s_1..s_m`. Two-body terms are clusters with
//! one bond, three-body terms have two bonds and weight `1/3!`, and the
//! finite-element potential of [`crate::cauchy_born`] uses `d` bonds.
//!
//! Fields passed in are displacements `u` with `y = x + u`; forces follow
//! the energy-gradient convention `F[y](x) = ε^{-d} ∂E/∂y(x)` so that the
//! equilibrium equations read `F[y] = f`.

use std::collections::{BTreeSet, HashMap};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{dot, lambda0_sq, FieldKind, LatticeField, LatticeSpec, Offset, Vector};
use crate::potentials::{PairTerm, PotentialModel, TripleTerm};

pub type Mat3 = [[f64; 3]; 3];

/// Complex `d × d` symbol matrix.
pub type SymbolMatrix = DMatrix<Complex64>;

/// Value of one cluster with gradients per bond and the bond-bond Hessian
/// blocks (`hess[k * m + l] = ∂²e/∂r_k∂r_l`).
#[derive(Clone, Debug)]
pub struct ClusterEval {
    pub value: f64,
    pub grads: Vec<Vector>,
    pub hess: Vec<Mat3>,
}

pub trait Cluster: Send + Sync {
    fn bonds(&self) -> &[Offset];
    fn weight(&self) -> f64;
    /// `reference` holds the undeformed Cartesian bond vectors, `r` the
    /// deformed ones.
    fn eval(&self, reference: &[Vector], r: &[Vector], hessian: bool) -> Result<ClusterEval>;
}

struct PairCluster<'a> {
    model: &'a PotentialModel,
    term: &'a PairTerm,
    bond: [Offset; 1],
}

impl Cluster for PairCluster<'_> {
    fn bonds(&self) -> &[Offset] {
        &self.bond
    }

    fn weight(&self) -> f64 {
        1.0
    }

    fn eval(&self, reference: &[Vector], r: &[Vector], hessian: bool) -> Result<ClusterEval> {
        let r = r[0];
        let q = dot(&r, &r);
        let e = self.model.eval_pair(self.term, q, dot(&reference[0], &reference[0]))?;
        let grads = vec![r.map(|x| 2.0 * e.d1 * x)];
        let mut hess = Vec::new();
        if hessian {
            let mut h = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    h[i][j] = 4.0 * e.d2 * r[i] * r[j];
                }
                h[i][i] += 2.0 * e.d1;
            }
            hess.push(h);
        }
        Ok(ClusterEval {
            value: e.value,
            grads,
            hess,
        })
    }
}

struct TripleCluster<'a> {
    model: &'a PotentialModel,
    term: &'a TripleTerm,
    bonds: [Offset; 2],
}

impl Cluster for TripleCluster<'_> {
    fn bonds(&self) -> &[Offset] {
        &self.bonds
    }

    fn weight(&self) -> f64 {
        1.0 / 6.0
    }

    fn eval(&self, reference: &[Vector], r: &[Vector], hessian: bool) -> Result<ClusterEval> {
        let (r1, r2) = (r[0], r[1]);
        let (s1, s2) = (reference[0], reference[1]);
        let q = [dot(&r1, &r1), dot(&r2, &r2), dot(&r1, &r2)];
        let q_ref = [dot(&s1, &s1), dot(&s2, &s2), dot(&s1, &s2)];
        let e = self.model.eval_triple(self.term, q, q_ref)?;
        let g = e.grad;
        let mut g1 = [0.0; 3];
        let mut g2 = [0.0; 3];
        for i in 0..3 {
            g1[i] = 2.0 * g[0] * r1[i] + g[2] * r2[i];
            g2[i] = 2.0 * g[1] * r2[i] + g[2] * r1[i];
        }
        let mut hess = Vec::new();
        if hessian {
            // ∂q/∂r₁ = (2r₁, 0, r₂), ∂q/∂r₂ = (0, 2r₂, r₁).
            let dq = |k: usize, a: usize| -> Vector {
                match (k, a) {
                    (0, 0) => r1.map(|x| 2.0 * x),
                    (0, 2) => r2,
                    (1, 1) => r2.map(|x| 2.0 * x),
                    (1, 2) => r1,
                    _ => [0.0; 3],
                }
            };
            for k in 0..2 {
                for l in 0..2 {
                    let mut h = [[0.0; 3]; 3];
                    for a in 0..3 {
                        let da = dq(k, a);
                        for b in 0..3 {
                            let db = dq(l, b);
                            let hab = e.hess[a][b];
                            if hab == 0.0 {
                                continue;
                            }
                            for i in 0..3 {
                                for j in 0..3 {
                                    h[i][j] += hab * da[i] * db[j];
                                }
                            }
                        }
                    }
                    let diag = match (k, l) {
                        (0, 0) => 2.0 * g[0],
                        (1, 1) => 2.0 * g[1],
                        _ => g[2],
                    };
                    for (i, row) in h.iter_mut().enumerate() {
                        row[i] += diag;
                    }
                    hess.push(h);
                }
            }
        }
        Ok(ClusterEval {
            value: e.value,
            grads: vec![g1, g2],
            hess,
        })
    }
}

/// All clusters of a potential model.
pub fn model_clusters(model: &PotentialModel) -> Vec<Box<dyn Cluster + '_>> {
    let mut out: Vec<Box<dyn Cluster + '_>> = Vec::new();
    for term in &model.pair_terms {
        for s in &term.stencils {
            out.push(Box::new(PairCluster {
                model,
                term,
                bond: [*s],
            }));
        }
    }
    for term in &model.triple_terms {
        for (s1, s2) in &term.stencils {
            out.push(Box::new(TripleCluster {
                model,
                term,
                bonds: [*s1, *s2],
            }));
        }
    }
    out
}

/// A set of clusters placed at every site of one lattice.
pub struct Assembly<'a> {
    spec: LatticeSpec,
    clusters: Vec<Box<dyn Cluster + 'a>>,
    refs: Vec<Vec<Vector>>,
}

impl<'a> Assembly<'a> {
    pub fn new(spec: &LatticeSpec, clusters: Vec<Box<dyn Cluster + 'a>>) -> Self {
        let refs = clusters
            .iter()
            .map(|c| c.bonds().iter().map(|s| spec.lattice_vector(s)).collect())
            .collect();
        Self {
            spec: *spec,
            clusters,
            refs,
        }
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn clusters(&self) -> &[Box<dyn Cluster + 'a>] {
        &self.clusters
    }

    fn check_field(&self, u: &LatticeField) -> Result<()> {
        if u.spec() != &self.spec {
            return Err(Error::Constraint("field lives on a different lattice".into()));
        }
        Ok(())
    }

    fn bond_vectors(&self, u: &LatticeField, site: usize, c: usize) -> Vec<Vector> {
        let inv = self.spec.n() as f64;
        let u0 = u.vector(site);
        self.clusters[c]
            .bonds()
            .iter()
            .zip(&self.refs[c])
            .map(|(s, r0)| {
                let us = u.vector(self.spec.shift(site, s));
                [
                    r0[0] + (us[0] - u0[0]) * inv,
                    r0[1] + (us[1] - u0[1]) * inv,
                    r0[2] + (us[2] - u0[2]) * inv,
                ]
            })
            .collect()
    }

    fn site_evals(&self, u: &LatticeField, hessian: bool) -> Result<Vec<Vec<ClusterEval>>> {
        self.check_field(u)?;
        (0..self.spec.site_count())
            .into_par_iter()
            .map(|site| {
                (0..self.clusters.len())
                    .map(|c| {
                        let r = self.bond_vectors(u, site, c);
                        self.clusters[c].eval(&self.refs[c], &r, hessian)
                    })
                    .collect()
            })
            .collect()
    }

    /// `ε^d Σ_x Σ_c w_c e_c(r(x))`.
    pub fn energy(&self, u: &LatticeField) -> Result<f64> {
        let evals = self.site_evals(u, false)?;
        let mut total = 0.0;
        for site in &evals {
            for (c, e) in self.clusters.iter().zip(site) {
                total += c.weight() * e.value;
            }
        }
        Ok(total * self.spec.eps().powi(self.spec.dim() as i32))
    }

    /// `F(z) = ε^{-1} Σ_c w_c Σ_k [g_k(z − εs_k) − g_k(z)]`.
    pub fn force(&self, u: &LatticeField) -> Result<LatticeField> {
        let evals = self.site_evals(u, false)?;
        let d = self.spec.dim();
        let inv = self.spec.n() as f64;
        let mut out = LatticeField::zeros(&self.spec, FieldKind::Force);
        let vals = out.values_mut();
        for (site, site_evals) in evals.iter().enumerate() {
            for (c, e) in self.clusters.iter().zip(site_evals) {
                let w = c.weight() * inv;
                for (s, g) in c.bonds().iter().zip(&e.grads) {
                    let t = self.spec.shift(site, s);
                    for i in 0..d {
                        vals[site * d + i] -= w * g[i];
                        vals[t * d + i] += w * g[i];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Offsets `o_b − o_a` between any two nodes of any cluster.
    fn offsets(&self) -> Vec<Offset> {
        let mut set = BTreeSet::new();
        for c in &self.clusters {
            let mut nodes = vec![[0i64; 3]];
            nodes.extend_from_slice(c.bonds());
            for a in &nodes {
                for b in &nodes {
                    set.insert([b[0] - a[0], b[1] - a[1], b[2] - a[2]]);
                }
            }
        }
        set.into_iter().collect()
    }

    /// Linearization of [`Assembly::force`] at `u`.
    pub fn linearize(&self, u: &LatticeField) -> Result<StencilOperator> {
        let evals = self.site_evals(u, true)?;
        let d = self.spec.dim();
        let offsets = self.offsets();
        let lookup: HashMap<Offset, usize> =
            offsets.iter().enumerate().map(|(i, o)| (*o, i)).collect();
        let no = offsets.len();
        let mut coeffs = vec![0.0; self.spec.site_count() * no * d * d];
        let inv2 = (self.spec.n() * self.spec.n()) as f64;
        for (site, site_evals) in evals.iter().enumerate() {
            for (c, e) in self.clusters.iter().zip(site_evals) {
                let m = c.bonds().len();
                let w = c.weight() * inv2;
                let mut nodes = vec![[0i64; 3]];
                nodes.extend_from_slice(c.bonds());
                // c_{ak} = [a = k] − [a = 0], nodes a = 0..m, bonds k = 1..m.
                let coef = |a: usize, k: usize| -> f64 {
                    (if a == k + 1 { 1.0 } else { 0.0 }) - (if a == 0 { 1.0 } else { 0.0 })
                };
                for a in 0..=m {
                    let z = self.spec.shift(site, &nodes[a]);
                    for b in 0..=m {
                        let o = nodes[b];
                        let oa = nodes[a];
                        let mu = [o[0] - oa[0], o[1] - oa[1], o[2] - oa[2]];
                        let slot = (z * no + lookup[&mu]) * d * d;
                        for k in 0..m {
                            let cak = coef(a, k);
                            if cak == 0.0 {
                                continue;
                            }
                            for l in 0..m {
                                let cbl = coef(b, l);
                                if cbl == 0.0 {
                                    continue;
                                }
                                let h = &e.hess[k * m + l];
                                let f = w * cak * cbl;
                                for i in 0..d {
                                    for j in 0..d {
                                        coeffs[slot + i * d + j] += f * h[i][j];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(StencilOperator {
            spec: self.spec,
            offsets,
            coeffs,
        })
    }
}

/// A pseudo-difference operator `(Hw)(x) = Σ_μ h(x, μ) w(x + εμ)` with
/// `d × d` matrix coefficients stored per site and offset.
#[derive(Clone, Debug, PartialEq)]
pub struct StencilOperator {
    spec: LatticeSpec,
    offsets: Vec<Offset>,
    coeffs: Vec<f64>,
}

impl StencilOperator {
    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn offsets(&self) -> &[Offset] {
        &self.offsets
    }

    /// Row-major `d × d` block `h(site, offsets[k])`.
    pub fn block(&self, site: usize, k: usize) -> &[f64] {
        let dd = self.spec.dim() * self.spec.dim();
        let start = (site * self.offsets.len() + k) * dd;
        &self.coeffs[start..start + dd]
    }

    pub fn coefficient(&self, site: usize, mu: &Offset) -> Option<DMatrix<f64>> {
        let d = self.spec.dim();
        let k = self.offsets.iter().position(|o| o == mu)?;
        Some(DMatrix::from_row_slice(d, d, self.block(site, k)))
    }

    /// `max_x Σ_μ max|h(x, μ)|`, a bound on every symbol entry.
    pub fn scale(&self) -> f64 {
        let stride = self.offsets.len() * self.spec.dim() * self.spec.dim();
        let dd = self.spec.dim() * self.spec.dim();
        self.coeffs
            .chunks(stride)
            .map(|c| c.chunks(dd).map(|b| b.iter().fold(0.0f64, |m, v| m.max(v.abs()))).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest coefficient difference between any site and site 0.
    pub fn nonuniformity(&self) -> f64 {
        let stride = self.offsets.len() * self.spec.dim() * self.spec.dim();
        let first = &self.coeffs[..stride];
        self.coeffs
            .chunks(stride)
            .flat_map(|c| c.iter().zip(first).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }

    pub fn apply(&self, w: &LatticeField) -> Result<LatticeField> {
        if w.spec() != &self.spec {
            return Err(Error::Constraint("field lives on a different lattice".into()));
        }
        let d = self.spec.dim();
        let vals: Vec<Vec<f64>> = (0..self.spec.site_count())
            .into_par_iter()
            .map(|site| {
                let mut acc = vec![0.0; d];
                for (k, mu) in self.offsets.iter().enumerate() {
                    let h = self.block(site, k);
                    let t = w.at(self.spec.shift(site, mu));
                    for i in 0..d {
                        for j in 0..d {
                            acc[i] += h[i * d + j] * t[j];
                        }
                    }
                }
                acc
            })
            .collect();
        LatticeField::from_values(&self.spec, FieldKind::Force, vals.concat())
    }

    /// Dense matrix in the field's storage order (`site · d + component`).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.spec.dim();
        let n = self.spec.dof();
        let mut m = DMatrix::zeros(n, n);
        for site in 0..self.spec.site_count() {
            for (k, mu) in self.offsets.iter().enumerate() {
                let t = self.spec.shift(site, mu);
                let h = self.block(site, k);
                for i in 0..d {
                    for j in 0..d {
                        m[(site * d + i, t * d + j)] += h[i * d + j];
                    }
                }
            }
        }
        m
    }

    /// `h̃(x, ξ) = Σ_μ h(x, μ) e^{iεξ·s_μ}` at frequency coefficients `freq`.
    pub fn symbol(&self, site: usize, freq: &Offset) -> SymbolMatrix {
        let d = self.spec.dim();
        let mut out = SymbolMatrix::zeros(d, d);
        for (k, mu) in self.offsets.iter().enumerate() {
            let ph = Complex64::from_polar(1.0, self.spec.stencil_phase(freq, mu));
            let h = self.block(site, k);
            for i in 0..d {
                for j in 0..d {
                    out[(i, j)] += ph * h[i * d + j];
                }
            }
        }
        out
    }

    /// Sitewise combination `(1 − ϱ(x)) A + ϱ(x) B`.
    pub fn blend(a: &StencilOperator, b: &StencilOperator, rho: &[f64]) -> Result<StencilOperator> {
        if a.spec != b.spec || rho.len() != a.spec.site_count() {
            return Err(Error::Constraint("blend operands do not share a lattice".into()));
        }
        let offsets: Vec<Offset> = a
            .offsets
            .iter()
            .chain(&b.offsets)
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let d = a.spec.dim();
        let dd = d * d;
        let no = offsets.len();
        let mut coeffs = vec![0.0; a.spec.site_count() * no * dd];
        for (op, sel) in [(a, false), (b, true)] {
            let pos: Vec<usize> = op
                .offsets
                .iter()
                .map(|o| offsets.binary_search(o).unwrap_or_default())
                .collect();
            for (site, &r) in rho.iter().enumerate() {
                let wgt = if sel { r } else { 1.0 - r };
                if wgt == 0.0 {
                    continue;
                }
                for (k, &p) in pos.iter().enumerate() {
                    let src = op.block(site, k);
                    let dst = &mut coeffs[(site * no + p) * dd..(site * no + p + 1) * dd];
                    for (x, y) in dst.iter_mut().zip(src) {
                        *x += wgt * y;
                    }
                }
            }
        }
        Ok(StencilOperator {
            spec: a.spec,
            offsets,
            coeffs,
        })
    }
}

/// `max |h̃ − h̃*|` entrywise.
pub fn hermitian_defect(m: &SymbolMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Smallest eigenvalue of the Hermitian part.
pub fn min_eigenvalue(m: &SymbolMatrix) -> f64 {
    let h = (m + m.adjoint()).scale(0.5);
    h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Real determinant of the Hermitian part.
pub fn hermitian_det(m: &SymbolMatrix) -> f64 {
    let h = (m + m.adjoint()).scale(0.5);
    h.determinant().re
}

pub fn atomistic_assembly<'a>(spec: &LatticeSpec, model: &'a PotentialModel) -> Assembly<'a> {
    Assembly::new(spec, model_clusters(model))
}

fn check_model_dim(spec: &LatticeSpec, model: &PotentialModel) -> Result<()> {
    if spec.dim() != model.dim {
        return Err(Error::Constraint(format!(
            "model `{}` is {}-dimensional, lattice is {}-dimensional",
            model.name,
            model.dim,
            spec.dim()
        )));
    }
    Ok(())
}

/// Interaction energy of `y = x + u`, without the load term.
pub fn interaction_energy(u: &LatticeField, model: &PotentialModel) -> Result<f64> {
    check_model_dim(u.spec(), model)?;
    atomistic_assembly(u.spec(), model).energy(u)
}

/// `I_at(y) = E_int(y) − ε^d Σ_x f(x)·u(x)` over mean-zero displacements.
pub fn energy_at(u: &LatticeField, f: &LatticeField, model: &PotentialModel) -> Result<f64> {
    if !u.is_mean_zero(1e-10) {
        return Err(Error::Constraint("displacement is not mean-zero".into()));
    }
    if !f.is_mean_zero(1e-10) {
        return Err(Error::Constraint("load is not mean-zero".into()));
    }
    let e = interaction_energy(u, model)?;
    let load: f64 = u.values().iter().zip(f.values()).map(|(a, b)| a * b).sum();
    Ok(e - load * u.spec().eps().powi(u.dim() as i32))
}

pub fn force_at(u: &LatticeField, model: &PotentialModel) -> Result<LatticeField> {
    check_model_dim(u.spec(), model)?;
    atomistic_assembly(u.spec(), model).force(u)
}

pub fn linearize_at(u: &LatticeField, model: &PotentialModel) -> Result<StencilOperator> {
    check_model_dim(u.spec(), model)?;
    atomistic_assembly(u.spec(), model).linearize(u)
}

/// Symbol of a position-independent operator (read at site 0).
pub fn symbol_at(op: &StencilOperator, freq: &Offset) -> SymbolMatrix {
    op.symbol(0, freq)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityRow {
    pub n: usize,
    /// `min_{ξ≠0} det h̃(ξ) / Λ_{0,ε}^{2d}(ξ)`.
    pub min_ratio: f64,
    pub argmin: Vec<i64>,
    pub min_eigenvalue: f64,
    pub positive_definite: bool,
    /// Defects below are relative to [`StencilOperator::scale`].
    pub max_hermitian_defect: f64,
    pub zero_symbol_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub label: String,
    pub rows: Vec<StabilityRow>,
    pub a_estimate: f64,
    /// `(max − min) / min` of the per-n ratios.
    pub variation: f64,
    pub max_variation: f64,
    pub offending: Option<Vec<i64>>,
    pub pass: bool,
}

/// Scans every nonzero frequency of a position-independent operator.
pub fn scan_symbol(op: &StencilOperator) -> StabilityRow {
    let spec = op.spec();
    let d = spec.dim();
    let scale = op.scale().max(f64::MIN_POSITIVE);
    let mut row = StabilityRow {
        n: spec.n(),
        min_ratio: f64::INFINITY,
        argmin: vec![0; d],
        min_eigenvalue: f64::INFINITY,
        positive_definite: true,
        max_hermitian_defect: 0.0,
        zero_symbol_norm: symbol_at(op, &[0; 3]).iter().map(|z| z.norm()).fold(0.0, f64::max) / scale,
    };
    let mut worst_eig = f64::INFINITY;
    for mu in spec.frequencies() {
        let h = symbol_at(op, &mu);
        row.max_hermitian_defect = row.max_hermitian_defect.max(hermitian_defect(&h) / scale);
        if mu.iter().all(|&m| m == 0) {
            continue;
        }
        let l0 = lambda0_sq(spec, &mu);
        let ratio = hermitian_det(&h) / l0.powi(d as i32);
        let eig = min_eigenvalue(&h);
        if eig <= 0.0 && row.positive_definite {
            row.positive_definite = false;
            row.argmin = mu[..d].to_vec();
            worst_eig = eig;
        }
        row.min_eigenvalue = row.min_eigenvalue.min(eig);
        if ratio < row.min_ratio {
            row.min_ratio = ratio;
            if row.positive_definite {
                row.argmin = mu[..d].to_vec();
            }
        }
    }
    if !row.positive_definite {
        row.min_eigenvalue = row.min_eigenvalue.min(worst_eig);
    }
    row
}

/// Runs [`scan_symbol`] on the operator produced for each `n` and
/// summarizes it against the positivity and 50% uniformity rule.
pub fn scan_stability<F>(label: &str, geometry: &LatticeSpec, n_list: &[usize], build: F) -> Result<StabilityReport>
where
    F: Fn(&LatticeSpec) -> Result<StencilOperator>,
{
    let mut rows = Vec::new();
    for &n in n_list {
        let spec = geometry.with_n(n)?;
        rows.push(scan_symbol(&build(&spec)?));
    }
    let offending = rows
        .iter()
        .find(|r| !r.positive_definite || r.min_ratio <= 0.0)
        .map(|r| r.argmin.clone());
    let lo = rows.iter().map(|r| r.min_ratio).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.min_ratio).fold(f64::NEG_INFINITY, f64::max);
    let variation = if lo > 0.0 { (hi - lo) / lo } else { f64::INFINITY };
    let max_variation = 0.5;
    Ok(StabilityReport {
        label: label.to_string(),
        pass: offending.is_none() && !rows.is_empty() && variation <= max_variation,
        rows,
        a_estimate: lo,
        variation,
        max_variation,
        offending,
    })
}

/// Phonon stability of the undeformed lattice over the given refinements.
pub fn check_phonon_stability(
    model: &PotentialModel,
    geometry: &LatticeSpec,
    n_list: &[usize],
) -> Result<StabilityReport> {
    scan_stability("atomistic", geometry, n_list, |spec| {
        linearize_at(&LatticeField::zeros(spec, FieldKind::Displacement), model)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{build_model, ModelSpec};
    use std::f64::consts::PI;

    fn smooth_u(spec: &LatticeSpec, amp: f64) -> LatticeField {
        LatticeField::sample(spec, FieldKind::Displacement, |x| {
            let mut v = [0.0; 3];
            for i in 0..spec.dim() {
                let arg: f64 = (0..spec.dim()).map(|j| (j + i + 1) as f64 * x[j]).sum();
                v[i] = amp * (2.0 * PI * arg).sin();
            }
            v
        })
    }

    #[test]
    fn reference_state_is_force_free() {
        for dim in 1..=3 {
            let spec = LatticeSpec::cubic(dim, 6).unwrap();
            for name in crate::potentials::CATALOG {
                let m = build_model(&ModelSpec::named(name), dim).unwrap();
                let f = force_at(&LatticeField::zeros(&spec, FieldKind::Displacement), &m).unwrap();
                assert!(f.max_norm() < 1e-12, "{name} {dim}: {}", f.max_norm());
            }
        }
    }

    #[test]
    fn harmonic_chain_symbol() {
        let spec = LatticeSpec::cubic(1, 8).unwrap();
        let m = build_model(&ModelSpec::named("harmonic-nn").with("k", 2.0), 1).unwrap();
        let op = linearize_at(&LatticeField::zeros(&spec, FieldKind::Displacement), &m).unwrap();
        for mu in spec.frequencies() {
            let h = symbol_at(&op, &mu);
            let expected = 2.0 * lambda0_sq(&spec, &mu);
            assert!((h[(0, 0)].re - expected).abs() < 1e-10);
            assert!(h[(0, 0)].im.abs() < 1e-10);
        }
    }

    #[test]
    fn force_is_energy_gradient() {
        let spec = LatticeSpec::cubic(2, 4).unwrap();
        let m = build_model(&ModelSpec::named("pair-angular"), 2).unwrap();
        let u = smooth_u(&spec, 0.01);
        let f = force_at(&u, &m).unwrap();
        let scale = spec.eps().powi(-2);
        let h = 1e-6;
        for idx in 0..spec.dof() {
            let mut up = u.clone();
            up.values_mut()[idx] += h;
            let mut um = u.clone();
            um.values_mut()[idx] -= h;
            let fd = scale
                * (interaction_energy(&up, &m).unwrap() - interaction_energy(&um, &m).unwrap())
                / (2.0 * h);
            let an = f.values()[idx];
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-2), "{fd} vs {an}");
        }
    }

    #[test]
    fn linearization_is_directional_derivative() {
        let spec = LatticeSpec::cubic(2, 5).unwrap();
        let m = build_model(&ModelSpec::named("pair-angular"), 2).unwrap();
        let u = smooth_u(&spec, 0.01);
        let w = LatticeField::sample(&spec, FieldKind::Displacement, |x| {
            [(2.0 * PI * x[0]).cos() * 0.01, (2.0 * PI * (x[0] + x[1])).sin() * 0.01, 0.0]
        });
        let op = linearize_at(&u, &m).unwrap();
        let hw = op.apply(&w).unwrap();
        let t = 1e-5;
        let fp = force_at(&u.add(&w.scaled(t)), &m).unwrap();
        let fm = force_at(&u.sub(&w.scaled(t)), &m).unwrap();
        let fd = fp.sub(&fm).scaled(0.5 / t);
        let err = fd.sub(&hw).max_norm() / hw.max_norm();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn symbols_at_rest_are_hermitian_and_vanish_at_zero() {
        for dim in 1..=2 {
            let spec = LatticeSpec::cubic(dim, 8).unwrap();
            for name in crate::potentials::CATALOG {
                let m = build_model(&ModelSpec::named(name), dim).unwrap();
                let op = linearize_at(&LatticeField::zeros(&spec, FieldKind::Displacement), &m).unwrap();
                let row = scan_symbol(&op);
                assert!(row.max_hermitian_defect < 1e-10, "{name} {dim} {}", row.max_hermitian_defect);
                assert!(row.zero_symbol_norm < 1e-12, "{name} {dim} {}", row.zero_symbol_norm);
                let scale = (0..op.offsets().len())
                    .flat_map(|k| op.block(0, k).to_vec())
                    .fold(0.0, |a: f64, b| a.max(b.abs()));
                assert!(op.nonuniformity() < 1e-13 * scale);
            }
        }
    }

    #[test]
    fn negative_spring_is_unstable() {
        let geometry = LatticeSpec::cubic(1, 8).unwrap();
        let bad = build_model(&ModelSpec::named("harmonic-nn").with("k", -1.0), 1).unwrap();
        let r = check_phonon_stability(&bad, &geometry, &[8, 16]).unwrap();
        assert!(!r.pass);
        assert!(r.offending.is_some());
        let good = build_model(&ModelSpec::named("harmonic-nn"), 1).unwrap();
        let r = check_phonon_stability(&good, &geometry, &[8, 16, 32]).unwrap();
        assert!(r.pass);
        assert!((r.a_estimate - 1.0).abs() < 1e-10);
    }
}
