//! Blended force-based coupling `F_qc = (1 − ϱ) F_at + ϱ F_ε`, its
//! linearization and symbol, and the stability diagnostics built on them.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::atomistic::{
    check_phonon_stability, force_at, hermitian_defect, hermitian_det, linearize_at, StabilityReport,
    StencilOperator, SymbolMatrix,
};
use crate::cauchy_born::{check_fe_stability, force_fe, linearize_fe};
use crate::error::{Error, Result};
use crate::lattice::{multi_diff, multi_indices, FieldKind, LatticeField, LatticeSpec, Offset, lambda0_sq};
use crate::potentials::PotentialModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendShape {
    Ball,
    Box,
}

/// Geometry of the atomistic core and the buffer, in fractional cell
/// coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionSpec {
    pub shape: BlendShape,
    /// Center in fractional coordinates; missing entries default to ½.
    pub center: Vec<f64>,
    pub r0: f64,
    pub r1: f64,
    /// `k` of the `C^k` smoothstep of degree `2k + 1`.
    pub order: usize,
}

impl Default for RegionSpec {
    fn default() -> Self {
        Self {
            shape: BlendShape::Ball,
            center: vec![0.5; 3],
            r0: 0.15,
            r1: 0.35,
            order: 2,
        }
    }
}

/// Configuration form of a blend: a region, or a constant `ϱ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BlendConfig {
    Constant { constant: f64 },
    Region(RegionSpec),
}

impl Default for BlendConfig {
    fn default() -> Self {
        BlendConfig::Region(RegionSpec::default())
    }
}

impl BlendConfig {
    pub fn build(&self) -> Result<BlendFunction> {
        match self {
            BlendConfig::Constant { constant } => BlendFunction::constant(*constant),
            BlendConfig::Region(r) => make_blend(r.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlendFunction {
    Constant(f64),
    Region(RegionSpec),
}

/// `S_k(t) = t^{k+1} Σ_{j=0}^{k} C(k+j, j) C(2k+1, k−j) (−t)^j`, the
/// degree `2k+1` polynomial with `k` vanishing derivatives at 0 and 1.
pub fn smoothstep(k: usize, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let binom = |n: usize, r: usize| -> f64 {
        (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    };
    let mut acc = 0.0;
    for j in 0..=k {
        acc += binom(k + j, j) * binom(2 * k + 1, k - j) * (-t).powi(j as i32);
    }
    t.powi(k as i32 + 1) * acc
}

pub fn make_blend(region: RegionSpec) -> Result<BlendFunction> {
    let RegionSpec { r0, r1, order, .. } = region;
    if !(r0 > 0.0 && r0 < r1 && r1 < 0.5) {
        return Err(Error::InvalidGeometry(format!(
            "need 0 < r0 < r1 < 1/2, got r0 = {r0}, r1 = {r1}"
        )));
    }
    if order < 1 {
        return Err(Error::InvalidGeometry("smoothness order must be at least 1".into()));
    }
    Ok(BlendFunction::Region(region))
}

impl BlendFunction {
    pub fn constant(c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::InvalidGeometry(format!("constant blend {c} outside [0, 1]")));
        }
        Ok(BlendFunction::Constant(c))
    }

    /// Periodic distance from the center in cell units.
    fn distance(region: &RegionSpec, frac: &[f64]) -> f64 {
        let delta = frac.iter().enumerate().map(|(j, c)| {
            let center = region.center.get(j).copied().unwrap_or(0.5);
            let t = c - center;
            t - t.round()
        });
        match region.shape {
            BlendShape::Ball => delta.map(|t| t * t).sum::<f64>().sqrt(),
            BlendShape::Box => delta.map(f64::abs).fold(0.0, f64::max),
        }
    }

    /// `ϱ` at a point given in fractional coordinates.
    pub fn eval_fractional(&self, frac: &[f64]) -> f64 {
        match self {
            BlendFunction::Constant(c) => *c,
            BlendFunction::Region(r) => {
                let dist = Self::distance(r, frac);
                smoothstep(r.order, (dist - r.r0) / (r.r1 - r.r0))
            }
        }
    }

    /// `ϱ(x)` at every site of the lattice.
    pub fn at_sites(&self, spec: &LatticeSpec) -> Vec<f64> {
        let eps = spec.eps();
        (0..spec.site_count())
            .map(|site| {
                let m = spec.multi_index(site);
                let frac: Vec<f64> = (0..spec.dim()).map(|j| m[j] as f64 * eps).collect();
                self.eval_fractional(&frac)
            })
            .collect()
    }
}

/// `F_qc[y](x) = (1 − ϱ(x)) F_at[y](x) + ϱ(x) F_ε[y](x)`.
pub fn force_qc(u: &LatticeField, model: &PotentialModel, blend: &BlendFunction) -> Result<LatticeField> {
    let rho = blend.at_sites(u.spec());
    let fa = force_at(u, model)?;
    let fe = force_fe(u, model)?;
    Ok(combine(&fa, &fe, &rho))
}

/// Sitewise `(1 − ϱ) a + ϱ b`.
pub fn combine(a: &LatticeField, b: &LatticeField, rho: &[f64]) -> LatticeField {
    let d = a.dim();
    let mut out = a.clone().with_kind(FieldKind::Force);
    for (site, &r) in rho.iter().enumerate() {
        let (x, y) = (a.at(site), b.at(site));
        if r == 0.0 {
            continue;
        }
        for c in 0..d {
            out.at_mut(site)[c] = (1.0 - r) * x[c] + r * y[c];
        }
    }
    out
}

pub fn linearize_qc(u: &LatticeField, model: &PotentialModel, blend: &BlendFunction) -> Result<StencilOperator> {
    let rho = blend.at_sites(u.spec());
    StencilOperator::blend(&linearize_at(u, model)?, &linearize_fe(u, model)?, &rho)
}

/// `h̃_qc(x, ξ)` at a site.
pub fn symbol_qc(op: &StencilOperator, site: usize, freq: &Offset) -> SymbolMatrix {
    op.symbol(site, freq)
}

/// `(H_qc w)(x) = Σ_μ h_qc(x, μ) (T^μ w)(x)`.
pub fn apply_hqc(op: &StencilOperator, w: &LatticeField) -> Result<LatticeField> {
    op.apply(w)
}

/// `det(λA + (1−λ)B) − det(A)^λ det(B)^{1−λ}`, relative to the right side.
pub fn kyfan_slack(a: &DMatrix<f64>, b: &DMatrix<f64>, lambda: f64) -> f64 {
    let lhs = (a.scale(lambda) + b.scale(1.0 - lambda)).determinant();
    let rhs = a.determinant().powf(lambda) * b.determinant().powf(1.0 - lambda);
    (lhs - rhs) / rhs.abs().max(f64::MIN_POSITIVE)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KyFanSample {
    pub dim: usize,
    pub lambda: f64,
    pub slack: f64,
}

/// Ky Fan's inequality on random SPD pairs; returns the worst sample.
pub fn kyfan_random_check(samples: usize, seed: u64) -> KyFanSample {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = KyFanSample {
        dim: 1,
        lambda: 0.0,
        slack: f64::INFINITY,
    };
    for t in 0..samples {
        let dim = 1 + t % 3;
        let mut spd = || {
            let m = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
            &m * m.transpose() + DMatrix::identity(dim, dim).scale(0.1)
        };
        let (a, b) = (spd(), spd());
        let lambda = rng.random_range(0.0..=1.0);
        let slack = kyfan_slack(&a, &b, lambda);
        if slack < worst.slack {
            worst = KyFanSample { dim, lambda, slack };
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KyFanRow {
    pub n: usize,
    /// `min det h̃_qc(x,ξ) / Λ_{0,ε}^{2d}(ξ)` over sites and `ξ ≠ 0`.
    pub min_blended_ratio: f64,
    /// Smallest relative slack of `det h̃_qc ≥ det h̃_at^{1−ϱ} det h̃_ε^ϱ`.
    pub min_interpolation_slack: f64,
    pub worst_site: usize,
    pub worst_frequency: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KyFanReport {
    pub atomistic: StabilityReport,
    pub finite_element: StabilityReport,
    pub rows: Vec<KyFanRow>,
    /// `min(a, a_at)` over the constituent scans.
    pub bound: f64,
    pub bound_factor: f64,
    pub min_blended_ratio: f64,
    pub attempted: bool,
    pub pass: bool,
}

/// Checks the blended symbol determinant against the constituent bound
/// at every site with a distinct blend value and every `ξ ≠ 0`.
pub fn kyfan_bound_check(
    model: &PotentialModel,
    blend: &BlendFunction,
    geometry: &LatticeSpec,
    n_list: &[usize],
) -> Result<KyFanReport> {
    let atomistic = check_phonon_stability(model, geometry, n_list)?;
    let finite_element = check_fe_stability(model, geometry, n_list)?;
    let bound = atomistic.a_estimate.min(finite_element.a_estimate);
    let bound_factor = 0.99;
    let mut report = KyFanReport {
        bound,
        bound_factor,
        min_blended_ratio: f64::INFINITY,
        attempted: atomistic.pass && finite_element.pass,
        pass: false,
        rows: Vec::new(),
        atomistic,
        finite_element,
    };
    if !report.attempted {
        return Ok(report);
    }
    for &n in n_list {
        let spec = geometry.with_n(n)?;
        let d = spec.dim();
        let zero = LatticeField::zeros(&spec, FieldKind::Displacement);
        let ha = linearize_at(&zero, model)?;
        let he = linearize_fe(&zero, model)?;
        let rho = blend.at_sites(&spec);
        let hq = StencilOperator::blend(&ha, &he, &rho)?;
        // Sites sharing a blend value share a symbol.
        let mut sites: Vec<usize> = Vec::new();
        let mut seen: Vec<f64> = Vec::new();
        for (site, &r) in rho.iter().enumerate() {
            if !seen.iter().any(|&s| (s - r).abs() < 1e-14) {
                seen.push(r);
                sites.push(site);
            }
        }
        let mut row = KyFanRow {
            n,
            min_blended_ratio: f64::INFINITY,
            min_interpolation_slack: f64::INFINITY,
            worst_site: 0,
            worst_frequency: vec![0; d],
        };
        for mu in spec.frequencies() {
            if mu.iter().all(|&m| m == 0) {
                continue;
            }
            let l = lambda0_sq(&spec, &mu).powi(d as i32);
            let da = hermitian_det(&ha.symbol(0, &mu));
            let de = hermitian_det(&he.symbol(0, &mu));
            for &site in &sites {
                let r = rho[site];
                let dq = hermitian_det(&hq.symbol(site, &mu));
                let interp = da.powf(1.0 - r) * de.powf(r);
                let slack = (dq - interp) / interp;
                row.min_interpolation_slack = row.min_interpolation_slack.min(slack);
                if dq / l < row.min_blended_ratio {
                    row.min_blended_ratio = dq / l;
                    row.worst_site = site;
                    row.worst_frequency = mu[..d].to_vec();
                }
            }
        }
        report.min_blended_ratio = report.min_blended_ratio.min(row.min_blended_ratio);
        report.rows.push(row);
    }
    report.pass = report.min_blended_ratio >= bound_factor * bound
        && report.rows.iter().all(|r| r.min_interpolation_slack >= -1e-10);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SymbolAudit {
    pub n: usize,
    /// Defects are relative to the blended operator's coefficient scale.
    pub max_hermitian_defect: f64,
    pub max_zero_symbol: f64,
    /// Largest entry of `h̃_qc − (1−ϱ)h̃_at − ϱh̃_ε`.
    pub max_convex_defect: f64,
}

/// Hermiticity, `h̃(x, 0) = 0` and the convex-combination identity of the
/// blended symbol at rest, over every site and frequency.
pub fn audit_qc_symbol(model: &PotentialModel, blend: &BlendFunction, spec: &LatticeSpec) -> Result<SymbolAudit> {
    let zero = LatticeField::zeros(spec, FieldKind::Displacement);
    let ha = linearize_at(&zero, model)?;
    let he = linearize_fe(&zero, model)?;
    let rho = blend.at_sites(spec);
    let hq = StencilOperator::blend(&ha, &he, &rho)?;
    let mut audit = SymbolAudit {
        n: spec.n(),
        max_hermitian_defect: 0.0,
        max_zero_symbol: 0.0,
        max_convex_defect: 0.0,
    };
    let scale = hq.scale().max(f64::MIN_POSITIVE);
    let freqs: Vec<Offset> = spec.frequencies().collect();
    let sym_a: Vec<SymbolMatrix> = freqs.iter().map(|mu| ha.symbol(0, mu)).collect();
    let sym_e: Vec<SymbolMatrix> = freqs.iter().map(|mu| he.symbol(0, mu)).collect();
    for (site, &r) in rho.iter().enumerate() {
        for (k, mu) in freqs.iter().enumerate() {
            let h = hq.symbol(site, mu);
            audit.max_hermitian_defect = audit.max_hermitian_defect.max(hermitian_defect(&h) / scale);
            let mix = sym_a[k].scale(1.0 - r) + sym_e[k].scale(r);
            let gap = (&h - mix).iter().map(|z| z.norm()).fold(0.0, f64::max);
            audit.max_convex_defect = audit.max_convex_defect.max(gap / scale);
            if mu.iter().all(|&m| m == 0) {
                let z = h.iter().map(|z| z.norm()).fold(0.0, f64::max);
                audit.max_zero_symbol = audit.max_zero_symbol.max(z / scale);
            }
        }
    }
    Ok(audit)
}

/// Dense `(ε,2)` Gram matrix `ε^d Σ_{|α|≤2} D_αᵀ D_α`.
pub fn sobolev_gram(spec: &LatticeSpec, k: usize) -> Result<DMatrix<f64>> {
    let n = spec.dof();
    let mut g = DMatrix::zeros(n, n);
    for alpha in multi_indices(spec.dim(), k) {
        let mut da = DMatrix::zeros(n, n);
        for col in 0..n {
            let mut e = LatticeField::zeros(spec, FieldKind::Generic);
            e.values_mut()[col] = 1.0;
            let v = multi_diff(&e, &alpha);
            da.set_column(col, &nalgebra::DVector::from_column_slice(v.values()));
        }
        g += da.transpose() * &da;
    }
    Ok(g.scale(spec.eps().powi(spec.dim() as i32)))
}

/// Restriction `Qᵀ M Q` to mean-zero fields with basis columns
/// `e_(j,c) − e_(0,c)`, `j ≥ 1`.
fn restrict_mean_zero(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let sites = m.nrows() / d;
    let k = (sites - 1) * d;
    let idx = |a: usize| -> (usize, usize) {
        let (j, c) = (a / d + 1, a % d);
        (j * d + c, c)
    };
    DMatrix::from_fn(k, k, |a, b| {
        let (ia, ca) = idx(a);
        let (ib, cb) = idx(b);
        m[(ia, ib)] - m[(ca, ib)] - m[(ia, cb)] + m[(ca, cb)]
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityConstant {
    pub n: usize,
    pub c_est: f64,
    /// Smallest generalized eigenvalue `σ²` of `(ε^d HᵀH, G)`.
    pub sigma_min_sq: f64,
}

/// Best `C` in `‖v‖_{ε,2} ≤ C ‖H v‖_{ε,0}` over mean-zero `v`.
pub fn stability_constant(op: &StencilOperator) -> Result<StabilityConstant> {
    let spec = *op.spec();
    let d = spec.dim();
    if spec.site_count() < 2 {
        return Err(Error::Constraint("lattice too small".into()));
    }
    let h = op.to_dense();
    let a = (h.transpose() * &h).scale(spec.eps().powi(d as i32));
    let g = sobolev_gram(&spec, 2)?;
    let a = restrict_mean_zero(&a, d);
    let g = restrict_mean_zero(&g, d);
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::Singular("Sobolev Gram matrix not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("Gram factor not invertible".into()))?;
    let k = &linv * a * linv.transpose();
    let k = (&k + k.transpose()).scale(0.5);
    let eig = SymmetricEigen::new(k);
    let sigma = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if sigma <= 1e-13 * scale {
        return Err(Error::Singular(format!(
            "operator is singular on mean-zero fields (σ² = {sigma:.3e})"
        )));
    }
    Ok(StabilityConstant {
        n: spec.n(),
        c_est: 1.0 / sigma.sqrt(),
        sigma_min_sq: sigma,
    })
}

/// `Σ_{|α|≤2} Π_j |(e^{iεξ·a_j} − 1)/ε|^{2α_j}`.
fn sobolev_weight(spec: &LatticeSpec, mu: &Offset) -> f64 {
    let eps = spec.eps();
    let d = spec.dim();
    let f: Vec<f64> = (0..d)
        .map(|j| {
            let z = Complex64::from_polar(1.0, spec.stencil_phase(mu, &{
                let mut e = [0; 3];
                e[j] = 1;
                e
            })) - 1.0;
            z.norm_sqr() / (eps * eps)
        })
        .collect();
    multi_indices(d, 2)
        .iter()
        .map(|a| (0..d).map(|j| f[j].powi(a[j] as i32)).product::<f64>())
        .sum()
}

/// Closed-form constant for a position-independent operator:
/// `max_{ξ≠0} √w(ξ) / σ_min(h̃(ξ))`.
pub fn circulant_stability_constant(op: &StencilOperator) -> Result<f64> {
    let spec = *op.spec();
    if op.nonuniformity() > 1e-9 {
        return Err(Error::Constraint("operator is position-dependent".into()));
    }
    let mut worst: f64 = 0.0;
    for mu in spec.frequencies() {
        if mu.iter().all(|&m| m == 0) {
            continue;
        }
        let h = op.symbol(0, &mu);
        let sv = h.singular_values();
        let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
        if smin <= 0.0 {
            return Err(Error::Singular(format!("symbol singular at {:?}", &mu[..spec.dim()])));
        }
        worst = worst.max(sobolev_weight(&spec, &mu).sqrt() / smin);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{build_model, ModelSpec};

    #[test]
    fn smoothstep_profiles() {
        for t in [0.1f64, 0.3, 0.8] {
            let q = 6.0 * t.powi(5) - 15.0 * t.powi(4) + 10.0 * t.powi(3);
            assert!((smoothstep(2, t) - q).abs() < 1e-14);
            assert!((smoothstep(1, t) - (3.0 * t * t - 2.0 * t * t * t)).abs() < 1e-14);
        }
        for k in 1..5 {
            assert!((smoothstep(k, 0.5) - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn blend_regions() {
        let b = make_blend(RegionSpec::default()).unwrap();
        assert_eq!(b.eval_fractional(&[0.5, 0.5]), 0.0);
        assert_eq!(b.eval_fractional(&[0.0, 0.0]), 1.0);
        assert!((b.eval_fractional(&[0.75, 0.5]) - 0.5).abs() < 1e-12);
        let bad = RegionSpec {
            r0: 0.3,
            r1: 0.2,
            ..RegionSpec::default()
        };
        assert!(matches!(make_blend(bad), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn blend_seams_are_smooth() {
        let b = make_blend(RegionSpec::default()).unwrap();
        let h = 1e-4;
        for r in [0.15, 0.35] {
            let x = 0.5 + r;
            let f = |t: f64| b.eval_fractional(&[t]);
            let d1 = (f(x + h) - f(x - h)) / (2.0 * h);
            let d2 = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
            // A C¹ cubic would show a second-derivative jump of order 6/(r1 − r0)² here.
            assert!(d1.abs() < 1e-4 && d2.abs() < 1.0, "{d1} {d2}");
        }
    }

    #[test]
    fn degenerate_blends_recover_constituents() {
        let spec = LatticeSpec::cubic(1, 8).unwrap();
        let m = build_model(&ModelSpec::named("morse"), 1).unwrap();
        let u = LatticeField::sample(&spec, FieldKind::Displacement, |x| {
            [0.01 * (2.0 * std::f64::consts::PI * x[0]).sin(), 0.0, 0.0]
        });
        let f0 = force_qc(&u, &m, &BlendFunction::constant(0.0).unwrap()).unwrap();
        let f1 = force_qc(&u, &m, &BlendFunction::constant(1.0).unwrap()).unwrap();
        assert_eq!(f0.values(), force_at(&u, &m).unwrap().values());
        assert_eq!(f1.values(), force_fe(&u, &m).unwrap().values());
    }

    #[test]
    fn kyfan_on_random_pairs() {
        let w = kyfan_random_check(100, 3);
        assert!(w.slack >= -1e-12, "{w:?}");
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert!(kyfan_slack(&a, &a, 0.3).abs() < 1e-14);
    }

    #[test]
    fn stability_constant_matches_circulant_oracle() {
        let m = build_model(&ModelSpec::named("harmonic-nn"), 1).unwrap();
        for n in [8, 16] {
            let spec = LatticeSpec::cubic(1, n).unwrap();
            let op = linearize_at(&LatticeField::zeros(&spec, FieldKind::Displacement), &m).unwrap();
            let c = stability_constant(&op).unwrap().c_est;
            let c0 = circulant_stability_constant(&op).unwrap();
            assert!((c - c0).abs() <= 1e-8 * c0, "{c} {c0}");
        }
    }
}
