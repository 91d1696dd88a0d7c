//! Short-range two- and three-body interatomic potentials.
//!
//! Each potential is written in the invariant arguments of its bonds:
//! a pair term depends on `q = |r|²`, a three-body term on
//! `(q₁, q₂, q₃) = (|r₁|², |r₂|², ⟨r₁, r₂⟩)`. Every evaluation also
//! receives the reference arguments of the undeformed stencil, so one
//! potential can serve several neighbor shells or bond angles while
//! keeping the perfect lattice stress-free.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Debug;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Offset;

/// Value, first and second derivative of a pair potential in `q`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairEval {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Value, gradient and Hessian of a three-body potential in `(q₁, q₂, q₃)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripleEval {
    pub value: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
}

pub trait PairPotential: Debug + Send + Sync {
    fn name(&self) -> &str;
    /// `V₂(q)` around the reference squared length `q_ref`.
    fn eval(&self, q: f64, q_ref: f64) -> PairEval;
}

pub trait TriplePotential: Debug + Send + Sync {
    fn name(&self) -> &str;
    fn eval(&self, q: [f64; 3], q_ref: [f64; 3]) -> TripleEval;
}

/// `V₂(q) = φ(√q)`, converted from a radial function `φ`.
fn radial_to_q(q: f64, phi: (f64, f64, f64)) -> PairEval {
    let r = q.sqrt();
    let (v, dp, ddp) = phi;
    PairEval {
        value: v,
        d1: dp / (2.0 * r),
        d2: (ddp - dp / r) / (4.0 * q),
    }
}

/// Linear spring in the bond length, `½k(r − r₀)²`.
#[derive(Clone, Debug)]
pub struct HarmonicBond {
    pub k: f64,
}

impl PairPotential for HarmonicBond {
    fn name(&self) -> &str {
        "harmonic-bond"
    }

    fn eval(&self, q: f64, q_ref: f64) -> PairEval {
        let r = q.sqrt();
        let dr = r - q_ref.sqrt();
        radial_to_q(q, (0.5 * self.k * dr * dr, self.k * dr, self.k))
    }
}

/// Morse bond `D (1 − e^{−α(r − r₀)})²`.
#[derive(Clone, Debug)]
pub struct MorseBond {
    pub depth: f64,
    pub alpha: f64,
}

impl PairPotential for MorseBond {
    fn name(&self) -> &str {
        "morse-bond"
    }

    fn eval(&self, q: f64, q_ref: f64) -> PairEval {
        let r = q.sqrt();
        let e = (-self.alpha * (r - q_ref.sqrt())).exp();
        let (d, a) = (self.depth, self.alpha);
        radial_to_q(
            q,
            (
                d * (1.0 - e) * (1.0 - e),
                2.0 * d * a * e * (1.0 - e),
                2.0 * d * a * a * e * (2.0 * e - 1.0),
            ),
        )
    }
}

/// Quadratic in the squared length, `¼k(q − q_ref)²`.
#[derive(Clone, Debug)]
pub struct SquaredLengthSpring {
    pub k: f64,
}

impl PairPotential for SquaredLengthSpring {
    fn name(&self) -> &str {
        "squared-length-spring"
    }

    fn eval(&self, q: f64, q_ref: f64) -> PairEval {
        let dq = q - q_ref;
        PairEval {
            value: 0.25 * self.k * dq * dq,
            d1: 0.5 * self.k * dq,
            d2: 0.5 * self.k,
        }
    }
}

/// `½k(q₁ − q₁⁰)² + ½k(q₂ − q₂⁰)²`.
#[derive(Clone, Debug)]
pub struct HarmonicTriple {
    pub k: f64,
}

impl TriplePotential for HarmonicTriple {
    fn name(&self) -> &str {
        "harmonic-triple"
    }

    fn eval(&self, q: [f64; 3], q_ref: [f64; 3]) -> TripleEval {
        let a = q[0] - q_ref[0];
        let b = q[1] - q_ref[1];
        TripleEval {
            value: 0.5 * self.k * (a * a + b * b),
            grad: [self.k * a, self.k * b, 0.0],
            hess: [[self.k, 0.0, 0.0], [0.0, self.k, 0.0], [0.0, 0.0, 0.0]],
        }
    }
}

/// `c = q₃ / √(q₁q₂)` with its gradient and Hessian.
fn cosine_terms(q: [f64; 3]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
    let ab = 1.0 / (q[0] * q[1]).sqrt();
    let c = q[2] * ab;
    let g = [-c / (2.0 * q[0]), -c / (2.0 * q[1]), ab];
    let h12 = c / (4.0 * q[0] * q[1]);
    let h13 = -ab / (2.0 * q[0]);
    let h23 = -ab / (2.0 * q[1]);
    let h = [
        [0.75 * c / (q[0] * q[0]), h12, h13],
        [h12, 0.75 * c / (q[1] * q[1]), h23],
        [h13, h23, 0.0],
    ];
    (c, g, h)
}

/// Stillinger-Weber style angular term `λ(cos θ − cos θ₀)²`, with `θ₀`
/// taken from the reference stencil.
#[derive(Clone, Debug)]
pub struct AngularTriple {
    pub lambda: f64,
}

impl TriplePotential for AngularTriple {
    fn name(&self) -> &str {
        "angular"
    }

    fn eval(&self, q: [f64; 3], q_ref: [f64; 3]) -> TripleEval {
        let (c, g, h) = cosine_terms(q);
        let c0 = q_ref[2] / (q_ref[0] * q_ref[1]).sqrt();
        let dc = c - c0;
        let mut out = TripleEval {
            value: self.lambda * dc * dc,
            grad: [0.0; 3],
            hess: [[0.0; 3]; 3],
        };
        for i in 0..3 {
            out.grad[i] = 2.0 * self.lambda * dc * g[i];
            for j in 0..3 {
                out.hess[i][j] = 2.0 * self.lambda * (g[i] * g[j] + dc * h[i][j]);
            }
        }
        out
    }
}

/// Angular term plus a bond-stretch coupling,
/// `λ_θ(cos θ − cos θ₀)² + ½λ_r(δ₁ + δ₂)²` with `δ_i = |r_i| − |r_i⁰|`.
#[derive(Clone, Debug)]
pub struct BondAngleTriple {
    pub lambda_theta: f64,
    pub lambda_r: f64,
}

impl TriplePotential for BondAngleTriple {
    fn name(&self) -> &str {
        "bond-angle"
    }

    fn eval(&self, q: [f64; 3], q_ref: [f64; 3]) -> TripleEval {
        let mut out = AngularTriple {
            lambda: self.lambda_theta,
        }
        .eval(q, q_ref);
        let r = [q[0].sqrt(), q[1].sqrt()];
        let s = (r[0] - q_ref[0].sqrt()) + (r[1] - q_ref[1].sqrt());
        let gs = [0.5 / r[0], 0.5 / r[1], 0.0];
        let hs = [-0.25 / (q[0] * r[0]), -0.25 / (q[1] * r[1])];
        out.value += 0.5 * self.lambda_r * s * s;
        for i in 0..3 {
            out.grad[i] += self.lambda_r * s * gs[i];
            for j in 0..3 {
                out.hess[i][j] += self.lambda_r * gs[i] * gs[j];
            }
        }
        out.hess[0][0] += self.lambda_r * s * hs[0];
        out.hess[1][1] += self.lambda_r * s * hs[1];
        out
    }
}

/// Two-body channel: one potential applied to a half-set of bond
/// directions (each bond counted once per site).
#[derive(Clone, Debug)]
pub struct PairTerm {
    pub stencils: Vec<Offset>,
    pub potential: Arc<dyn PairPotential>,
}

/// Three-body channel over ordered stencil pairs; energies carry `1/3!`.
#[derive(Clone, Debug)]
pub struct TripleTerm {
    pub stencils: Vec<(Offset, Offset)>,
    pub potential: Arc<dyn TriplePotential>,
}

/// The finite stencil set `S` of a model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StencilSet {
    pub pairs: Vec<(Offset, Offset)>,
    pub pair_range: Vec<Offset>,
    /// Largest Euclidean length of any stencil vector, in lattice units.
    pub cutoff: f64,
}

fn neg(s: &Offset) -> Offset {
    [-s[0], -s[1], -s[2]]
}

fn sub(a: &Offset, b: &Offset) -> Offset {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn length(s: &Offset) -> f64 {
    ((s[0] * s[0] + s[1] * s[1] + s[2] * s[2]) as f64).sqrt()
}

/// Smallest set containing `seeds` that is closed under swapping the two
/// legs, moving the base atom to either other vertex, and lattice
/// inversion. Output is sorted.
pub fn close_triangles(seeds: &[(Offset, Offset)]) -> Vec<(Offset, Offset)> {
    let mut seen: BTreeSet<(Offset, Offset)> = BTreeSet::new();
    let mut queue: VecDeque<(Offset, Offset)> = seeds.iter().copied().collect();
    while let Some((s1, s2)) = queue.pop_front() {
        if !seen.insert((s1, s2)) {
            continue;
        }
        for next in [
            (s2, s1),
            (neg(&s1), sub(&s2, &s1)),
            (neg(&s2), sub(&s1, &s2)),
            (neg(&s1), neg(&s2)),
        ] {
            if !seen.contains(&next) {
                queue.push_back(next);
            }
        }
    }
    seen.into_iter().collect()
}

/// A complete model: two- and three-body channels over their stencils.
#[derive(Clone, Debug)]
pub struct PotentialModel {
    pub name: String,
    pub dim: usize,
    pub pair_terms: Vec<PairTerm>,
    pub triple_terms: Vec<TripleTerm>,
    /// Allowed relative deviation of every bond length from its reference.
    pub smoothness: f64,
}

impl PotentialModel {
    pub fn stencil(&self) -> StencilSet {
        let pairs: Vec<_> = self
            .triple_terms
            .iter()
            .flat_map(|t| t.stencils.iter().copied())
            .collect();
        let pair_range: Vec<_> = self
            .pair_terms
            .iter()
            .flat_map(|t| t.stencils.iter().copied())
            .collect();
        let cutoff = pairs
            .iter()
            .flat_map(|(a, b)| [length(a), length(b), length(&sub(a, b))])
            .chain(pair_range.iter().map(length))
            .fold(0.0, f64::max);
        StencilSet {
            pairs,
            pair_range,
            cutoff,
        }
    }

    /// Largest integer coordinate reached by any stencil; lattices need
    /// `n > 2·reach` for clusters not to wrap onto themselves.
    pub fn reach(&self) -> i64 {
        let st = self.stencil();
        st.pairs
            .iter()
            .flat_map(|(a, b)| [*a, *b])
            .chain(st.pair_range.iter().copied())
            .flat_map(|s| s.into_iter())
            .map(i64::abs)
            .max()
            .unwrap_or(0)
    }

    /// Fails if a squared bond length strays outside the smoothness region.
    pub fn check_bond(&self, q: f64, q_ref: f64) -> Result<()> {
        if q.is_finite() && q > 0.0 {
            let r = q.sqrt();
            let r0 = q_ref.sqrt();
            if (r - r0).abs() <= self.smoothness * r0 {
                return Ok(());
            }
        }
        Err(Error::Domain(format!(
            "bond length² {q:.6e} outside ±{:.0}% of reference {q_ref:.6e} ({})",
            self.smoothness * 100.0,
            self.name
        )))
    }

    pub fn eval_pair(&self, term: &PairTerm, q: f64, q_ref: f64) -> Result<PairEval> {
        self.check_bond(q, q_ref)?;
        Ok(term.potential.eval(q, q_ref))
    }

    pub fn eval_triple(&self, term: &TripleTerm, q: [f64; 3], q_ref: [f64; 3]) -> Result<TripleEval> {
        self.check_bond(q[0], q_ref[0])?;
        self.check_bond(q[1], q_ref[1])?;
        Ok(term.potential.eval(q, q_ref))
    }

    pub fn grad_triple(&self, term: &TripleTerm, q: [f64; 3], q_ref: [f64; 3]) -> Result<[f64; 3]> {
        Ok(self.eval_triple(term, q, q_ref)?.grad)
    }

    pub fn hess_triple(
        &self,
        term: &TripleTerm,
        q: [f64; 3],
        q_ref: [f64; 3],
    ) -> Result<[[f64; 3]; 3]> {
        Ok(self.eval_triple(term, q, q_ref)?.hess)
    }
}

fn unit(j: usize) -> Offset {
    let mut e = [0; 3];
    e[j] = 1;
    e
}

fn add(a: &Offset, b: &Offset) -> Offset {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Nearest-neighbor half set `{e_j}`.
fn nearest(dim: usize) -> Vec<Offset> {
    (0..dim).map(unit).collect()
}

/// Second shell half set: `{2}` in 1D, face diagonals `e_i ± e_j` otherwise.
fn second_shell(dim: usize) -> Vec<Offset> {
    if dim == 1 {
        return vec![[2, 0, 0]];
    }
    let mut out = Vec::new();
    for i in 0..dim {
        for j in i + 1..dim {
            out.push(add(&unit(i), &unit(j)));
            out.push(sub(&unit(i), &unit(j)));
        }
    }
    out
}

/// Seeds for the bond-angle channel: collinear triple in 1D, all
/// right-angle corners `(±e_i, ±e_j)` otherwise.
fn angle_seeds(dim: usize) -> Vec<(Offset, Offset)> {
    if dim == 1 {
        return vec![([1, 0, 0], [-1, 0, 0])];
    }
    let mut out = Vec::new();
    for i in 0..dim {
        for j in 0..dim {
            if i == j {
                continue;
            }
            for si in [1, -1] {
                for sj in [1, -1] {
                    let a = unit(i).map(|x| x * si);
                    let b = unit(j).map(|x| x * sj);
                    out.push((a, b));
                }
            }
        }
    }
    out
}

/// Run-configuration form of a model selection.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl ModelSpec {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    fn get(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }

    pub fn build(&self, dim: usize) -> Result<PotentialModel> {
        build_model(self, dim)
    }
}

pub const CATALOG: [&str; 3] = ["harmonic-nn", "morse", "pair-angular"];

/// The builtin catalog in dimension `dim` with default parameters.
pub fn builtin_models(dim: usize) -> Result<Vec<PotentialModel>> {
    CATALOG
        .iter()
        .map(|name| build_model(&ModelSpec::named(name), dim))
        .collect()
}

pub fn build_model(spec: &ModelSpec, dim: usize) -> Result<PotentialModel> {
    if !(1..=3).contains(&dim) {
        return Err(Error::UnsupportedDimension(dim));
    }
    let smoothness = spec.get("smoothness", 0.4);
    let mut model = PotentialModel {
        name: spec.name.clone(),
        dim,
        pair_terms: Vec::new(),
        triple_terms: Vec::new(),
        smoothness,
    };
    match spec.name.as_str() {
        // Springs on nearest neighbors; in 2D/3D face diagonals are added
        // since the nearest-neighbor square/cubic net has no shear stiffness.
        "harmonic-nn" => {
            let k = spec.get("k", 1.0);
            model.pair_terms.push(PairTerm {
                stencils: nearest(dim),
                potential: Arc::new(HarmonicBond { k }),
            });
            if dim > 1 {
                model.pair_terms.push(PairTerm {
                    stencils: second_shell(dim),
                    potential: Arc::new(HarmonicBond {
                        k: spec.get("k2", 0.5 * k),
                    }),
                });
            }
        }
        "morse" => {
            let alpha = spec.get("alpha", 1.5);
            let depth = spec.get("depth", 1.0);
            model.pair_terms.push(PairTerm {
                stencils: nearest(dim),
                potential: Arc::new(MorseBond { depth, alpha }),
            });
            model.pair_terms.push(PairTerm {
                stencils: second_shell(dim),
                potential: Arc::new(MorseBond {
                    depth: spec.get("depth2", 0.5 * depth),
                    alpha,
                }),
            });
        }
        "pair-angular" => {
            let alpha = spec.get("alpha", 1.5);
            let depth = spec.get("depth", 1.0);
            model.pair_terms.push(PairTerm {
                stencils: nearest(dim),
                potential: Arc::new(MorseBond { depth, alpha }),
            });
            model.pair_terms.push(PairTerm {
                stencils: second_shell(dim),
                potential: Arc::new(MorseBond {
                    depth: spec.get("depth2", 0.25 * depth),
                    alpha,
                }),
            });
            model.triple_terms.push(TripleTerm {
                stencils: close_triangles(&angle_seeds(dim)),
                potential: Arc::new(BondAngleTriple {
                    lambda_theta: spec.get("lambda_theta", 0.5),
                    lambda_r: spec.get("lambda_r", 0.5),
                }),
            });
        }
        other => return Err(Error::UnknownModel(other.to_string())),
    }
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DerivativeReport {
    pub model: String,
    pub samples: usize,
    pub step: f64,
    pub max_grad_discrepancy: f64,
    pub max_hess_discrepancy: f64,
    pub tol: f64,
    pub pass: bool,
}

fn discrepancy(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / an.abs().max(1.0)
}

fn perturb<R: Rng>(rng: &mut R, q_ref: [f64; 3], spread: f64) -> [f64; 3] {
    let scale = (q_ref[0] * q_ref[1]).sqrt();
    [
        q_ref[0] * (1.0 + rng.random_range(-spread..spread)),
        q_ref[1] * (1.0 + rng.random_range(-spread..spread)),
        q_ref[2] + scale * rng.random_range(-spread..spread),
    ]
}

/// Central-difference check of every channel's gradient and Hessian at
/// random arguments within 5% of the reference stencil arguments.
pub fn check_derivatives(
    model: &PotentialModel,
    samples: usize,
    tol: f64,
    step: f64,
    seed: u64,
) -> DerivativeReport {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut g_err: f64 = 0.0;
    let mut h_err: f64 = 0.0;
    let samples = samples.max(1);
    let q_of = |s: &Offset| (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]) as f64;
    for term in &model.pair_terms {
        for s in &term.stencils {
            let q_ref = q_of(s);
            for _ in 0..samples {
                let q = q_ref * (1.0 + rng.random_range(-0.05..0.05));
                let h = step * q.abs().max(1.0);
                let e = term.potential.eval(q, q_ref);
                let ep = term.potential.eval(q + h, q_ref);
                let em = term.potential.eval(q - h, q_ref);
                g_err = g_err.max(discrepancy((ep.value - em.value) / (2.0 * h), e.d1));
                h_err = h_err.max(discrepancy((ep.d1 - em.d1) / (2.0 * h), e.d2));
            }
        }
    }
    for term in &model.triple_terms {
        for (s1, s2) in &term.stencils {
            let q_ref = [
                q_of(s1),
                q_of(s2),
                (s1[0] * s2[0] + s1[1] * s2[1] + s1[2] * s2[2]) as f64,
            ];
            for _ in 0..samples {
                let q = perturb(&mut rng, q_ref, 0.05);
                let e = term.potential.eval(q, q_ref);
                for i in 0..3 {
                    let h = step * q[i].abs().max(1.0);
                    let mut qp = q;
                    let mut qm = q;
                    qp[i] += h;
                    qm[i] -= h;
                    let ep = term.potential.eval(qp, q_ref);
                    let em = term.potential.eval(qm, q_ref);
                    g_err = g_err.max(discrepancy((ep.value - em.value) / (2.0 * h), e.grad[i]));
                    for j in 0..3 {
                        h_err = h_err.max(discrepancy(
                            (ep.grad[j] - em.grad[j]) / (2.0 * h),
                            e.hess[i][j],
                        ));
                    }
                }
            }
        }
    }
    DerivativeReport {
        model: model.name.clone(),
        samples,
        step,
        max_grad_discrepancy: g_err,
        max_hess_discrepancy: h_err,
        tol,
        pass: g_err <= tol && h_err <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_triple_at_equilibrium() {
        let t = HarmonicTriple { k: 2.0 };
        let q_ref = [1.0, 2.0, 0.0];
        let e = t.eval(q_ref, q_ref);
        assert_eq!(e.grad, [0.0; 3]);
        assert_eq!(e.hess, [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 0.0]]);
    }

    #[test]
    fn angular_gradient_matches_central_differences() {
        let t = AngularTriple { lambda: 1.3 };
        let q_ref = [1.0, 1.0, 0.0];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let q = perturb(&mut rng, q_ref, 0.1);
            let e = t.eval(q, q_ref);
            for i in 0..3 {
                let h = 1e-6;
                let mut qp = q;
                let mut qm = q;
                qp[i] += h;
                qm[i] -= h;
                let fd = (t.eval(qp, q_ref).value - t.eval(qm, q_ref).value) / (2.0 * h);
                assert!((fd - e.grad[i]).abs() < 1e-8, "{fd} vs {}", e.grad[i]);
            }
        }
    }

    #[test]
    fn hessians_are_symmetric() {
        let t = BondAngleTriple {
            lambda_theta: 0.7,
            lambda_r: 0.3,
        };
        let e = t.eval([1.1, 0.95, 0.2], [1.0, 1.0, 0.0]);
        for i in 0..3 {
            for j in 0..3 {
                assert!((e.hess[i][j] - e.hess[j][i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn catalog_stencils() {
        let m = build_model(&ModelSpec::named("harmonic-nn"), 1).unwrap();
        let st = m.stencil();
        assert_eq!(st.pair_range, vec![[1, 0, 0]]);
        assert!(st.pairs.is_empty());

        let m = build_model(&ModelSpec::named("pair-angular"), 2).unwrap();
        let st = m.stencil();
        assert!(st.pairs.contains(&([1, 0, 0], [0, 1, 0])));
        assert!(st.pairs.contains(&([0, 1, 0], [1, 0, 0])));
        let closed = close_triangles(&st.pairs);
        assert_eq!(closed, st.pairs);
        for (s1, s2) in &st.pairs {
            assert_ne!(*s1, [0, 0, 0]);
            assert_ne!(*s2, [0, 0, 0]);
        }
        assert!((st.cutoff - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn closure_of_a_single_triangle() {
        let s = close_triangles(&[([1, 0, 0], [0, 1, 0])]);
        // 6 labelings of the triangle plus 6 of its inversion image.
        assert_eq!(s.len(), 12);
        assert!(s.contains(&([-1, 0, 0], [-1, 1, 0])));
        assert!(s.contains(&([-1, 0, 0], [0, -1, 0])));
    }

    #[test]
    fn unknown_model_is_rejected() {
        let err = build_model(&ModelSpec::named("lennard-jones"), 2).unwrap_err();
        assert_eq!(err, Error::UnknownModel("lennard-jones".into()));
    }

    #[test]
    fn domain_violation_is_reported() {
        let m = build_model(&ModelSpec::named("morse"), 1).unwrap();
        let term = m.pair_terms[0].clone();
        assert!(m.eval_pair(&term, 1.0, 1.0).is_ok());
        assert!(matches!(m.eval_pair(&term, 4.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(m.eval_pair(&term, -1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn harmonic_derivatives_are_near_exact() {
        for dim in 1..=3 {
            let m = build_model(&ModelSpec::named("harmonic-nn"), dim).unwrap();
            let r = check_derivatives(&m, 20, 1e-6, 1e-5, 1);
            assert!(r.pass);
            assert!(r.max_grad_discrepancy <= 1e-9, "{r:?}");
        }
    }

    #[test]
    fn catalog_passes_derivative_check() {
        for dim in 1..=3 {
            for m in builtin_models(dim).unwrap() {
                let r = check_derivatives(&m, 10, 1e-6, 1e-5, 9);
                assert!(r.pass, "{r:?}");
            }
        }
    }

    #[derive(Debug)]
    struct WrongGradient;

    impl TriplePotential for WrongGradient {
        fn name(&self) -> &str {
            "wrong"
        }

        fn eval(&self, q: [f64; 3], _q_ref: [f64; 3]) -> TripleEval {
            TripleEval {
                value: q[0] * q[1],
                grad: [q[1], 2.0 * q[0], 0.0],
                hess: [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0; 3]],
            }
        }
    }

    #[test]
    fn wrong_gradient_fails_the_check() {
        let model = PotentialModel {
            name: "fixture".into(),
            dim: 2,
            pair_terms: vec![],
            triple_terms: vec![TripleTerm {
                stencils: close_triangles(&[([1, 0, 0], [0, 1, 0])]),
                potential: Arc::new(WrongGradient),
            }],
            smoothness: 0.4,
        };
        assert!(!check_derivatives(&model, 3, 1e-6, 1e-5, 0).pass);
    }
}
