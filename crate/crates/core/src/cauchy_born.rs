//! Cauchy-Born continuum model and its translation-invariant P1
//! finite-element discretization.
//!
//! Deformation gradients act on column vectors: a stencil vector `s`
//! deforms to `s + A s`, with `A_ij = ∂u_i/∂x_j`. Tensors are padded to
//! three dimensions; only the leading `d × d` block is meaningful.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::atomistic::{
    model_clusters, scan_stability, Assembly, Cluster, ClusterEval, Mat3, StabilityReport,
    StencilOperator, SymbolMatrix,
};
use crate::error::{Error, Result};
use crate::lattice::{spectral_derivative, FieldKind, LatticeField, LatticeSpec, Offset, Vector};
use crate::potentials::PotentialModel;

/// `∂²W/∂A_ij∂A_lm` stored at `((i·3 + j)·3 + l)·3 + m`.
pub type Tensor4 = [f64; 81];

pub fn t4(i: usize, j: usize, l: usize, m: usize) -> usize {
    ((i * 3 + j) * 3 + l) * 3 + m
}

#[derive(Clone, Debug)]
pub struct CbEval {
    pub value: f64,
    pub stress: Mat3,
    pub moduli: Option<Box<Tensor4>>,
}

/// Cauchy-Born stored-energy density of a model on a given lattice geometry.
pub struct CauchyBorn<'a> {
    dim: usize,
    clusters: Vec<Box<dyn Cluster + 'a>>,
    refs: Vec<Vec<Vector>>,
}

impl<'a> CauchyBorn<'a> {
    pub fn new(model: &'a PotentialModel, geometry: &LatticeSpec) -> Result<Self> {
        if model.dim != geometry.dim() {
            return Err(Error::Constraint(format!(
                "model `{}` is {}-dimensional, lattice is {}-dimensional",
                model.name,
                model.dim,
                geometry.dim()
            )));
        }
        let clusters = model_clusters(model);
        let refs = clusters
            .iter()
            .map(|c| c.bonds().iter().map(|s| geometry.lattice_vector(s)).collect())
            .collect();
        Ok(Self {
            dim: geometry.dim(),
            clusters,
            refs,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, a: &Mat3, moduli: bool) -> Result<CbEval> {
        let d = self.dim;
        let mut out = CbEval {
            value: 0.0,
            stress: [[0.0; 3]; 3],
            moduli: moduli.then(|| Box::new([0.0; 81])),
        };
        for (c, refs) in self.clusters.iter().zip(&self.refs) {
            let r: Vec<Vector> = refs
                .iter()
                .map(|s| {
                    let mut v = *s;
                    for i in 0..d {
                        for j in 0..d {
                            v[i] += a[i][j] * s[j];
                        }
                    }
                    v
                })
                .collect();
            let e = c.eval(refs, &r, moduli)?;
            let w = c.weight();
            let m = refs.len();
            out.value += w * e.value;
            for (g, s) in e.grads.iter().zip(refs) {
                for i in 0..d {
                    for j in 0..d {
                        out.stress[i][j] += w * g[i] * s[j];
                    }
                }
            }
            if let Some(cm) = out.moduli.as_mut() {
                for k in 0..m {
                    for kk in 0..m {
                        let h = &e.hess[k * m + kk];
                        let (sk, skk) = (&refs[k], &refs[kk]);
                        for i in 0..d {
                            for l in 0..d {
                                let hil = w * h[i][l];
                                if hil == 0.0 {
                                    continue;
                                }
                                for j in 0..d {
                                    for mm in 0..d {
                                        cm[t4(i, j, l, mm)] += hil * sk[j] * skk[mm];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn to_mat3(a: &DMatrix<f64>) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..a.nrows().min(3) {
        for j in 0..a.ncols().min(3) {
            m[i][j] = a[(i, j)];
        }
    }
    m
}

fn from_mat3(m: &Mat3, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| m[i][j])
}

fn check_square(a: &DMatrix<f64>, d: usize) -> Result<()> {
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::Constraint(format!(
            "deformation gradient is {}×{}, expected {d}×{d}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

/// `W_CB(A)`.
pub fn wcb(a: &DMatrix<f64>, model: &PotentialModel, geometry: &LatticeSpec) -> Result<f64> {
    check_square(a, geometry.dim())?;
    Ok(CauchyBorn::new(model, geometry)?.eval(&to_mat3(a), false)?.value)
}

/// `D_A W_CB(A)`.
pub fn dwcb(a: &DMatrix<f64>, model: &PotentialModel, geometry: &LatticeSpec) -> Result<DMatrix<f64>> {
    check_square(a, geometry.dim())?;
    let e = CauchyBorn::new(model, geometry)?.eval(&to_mat3(a), false)?;
    Ok(from_mat3(&e.stress, geometry.dim()))
}

/// `D²_A W_CB(A)` as a `d² × d²` matrix with row `i·d + j`, column `l·d + m`.
pub fn d2wcb(a: &DMatrix<f64>, model: &PotentialModel, geometry: &LatticeSpec) -> Result<DMatrix<f64>> {
    let d = geometry.dim();
    check_square(a, d)?;
    let e = CauchyBorn::new(model, geometry)?.eval(&to_mat3(a), true)?;
    let c = e.moduli.expect("moduli requested");
    Ok(DMatrix::from_fn(d * d, d * d, |r, s| {
        c[t4(r / d, r % d, s / d, s % d)]
    }))
}

/// Spectral displacement gradient `A(x)_ij = ∂_j u_i(x)` at every site.
pub fn spectral_gradient(u: &LatticeField) -> Vec<Mat3> {
    let d = u.dim();
    let parts: Vec<LatticeField> = (0..d).map(|j| spectral_derivative(u, j)).collect();
    (0..u.spec().site_count())
        .map(|site| {
            let mut a = [[0.0; 3]; 3];
            for (j, p) in parts.iter().enumerate() {
                for (i, v) in p.at(site).iter().enumerate() {
                    a[i][j] = *v;
                }
            }
            a
        })
        .collect()
}

/// `F_CB[y] = −div D_A W_CB(∇u)` with spectral differentiation.
pub fn force_cb(u: &LatticeField, model: &PotentialModel) -> Result<LatticeField> {
    let spec = *u.spec();
    let d = spec.dim();
    let cb = CauchyBorn::new(model, &spec)?;
    let grads = spectral_gradient(u);
    let stress: Vec<Mat3> = grads
        .par_iter()
        .map(|a| cb.eval(a, false).map(|e| e.stress))
        .collect::<Result<_>>()?;
    let mut out = LatticeField::zeros(&spec, FieldKind::Force);
    for j in 0..d {
        let mut col = vec![0.0; spec.dof()];
        for (site, p) in stress.iter().enumerate() {
            for i in 0..d {
                col[site * d + i] = p[i][j];
            }
        }
        let pj = LatticeField::from_values(&spec, FieldKind::Generic, col)?;
        out.axpy(-1.0, &spectral_derivative(&pj, j));
    }
    Ok(out)
}

/// One cell's decomposition into `d`-simplices with integer corner vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct Triangulation {
    pub dim: usize,
    pub simplices: Vec<Vec<Offset>>,
    /// Volume of each simplex as a fraction of the cell.
    pub volumes: Vec<f64>,
}

fn corner(bits: &[usize]) -> Offset {
    let mut o = [0; 3];
    for &b in bits {
        o[b] += 1;
    }
    o
}

/// 1D intervals, 2D two triangles along the `(0,0)–(1,1)` diagonal,
/// 3D Kuhn decomposition into six tetrahedra along the main diagonal.
pub fn build_triangulation(dim: usize) -> Result<Triangulation> {
    let simplices: Vec<Vec<Offset>> = match dim {
        1 => vec![vec![[0, 0, 0], [1, 0, 0]]],
        2 => vec![
            vec![[0, 0, 0], [1, 0, 0], [1, 1, 0]],
            vec![[0, 0, 0], [1, 1, 0], [0, 1, 0]],
        ],
        3 => {
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            perms
                .iter()
                .map(|p| (0..=3).map(|k| corner(&p[..k])).collect())
                .collect()
        }
        _ => return Err(Error::UnsupportedDimension(dim)),
    };
    let volumes = simplices
        .iter()
        .map(|s| {
            let m = DMatrix::from_fn(dim, dim, |i, k| (s[k + 1][i] - s[0][i]) as f64);
            m.determinant().abs() / (1..=dim).product::<usize>() as f64
        })
        .collect();
    Ok(Triangulation {
        dim,
        simplices,
        volumes,
    })
}

/// Solves `s_k + A s_k = D⁺_{ε,s_k} y(x₀)` for the simplex
/// `x₀ = site + ε v₀, x₀ + ε(v_k − v₀)`.
pub fn fe_gradient(u: &LatticeField, site: usize, simplex: &[Offset]) -> Result<DMatrix<f64>> {
    let spec = u.spec();
    let d = spec.dim();
    if simplex.len() != d + 1 {
        return Err(Error::Constraint(format!("simplex needs {} vertices", d + 1)));
    }
    let base = spec.shift(site, &simplex[0]);
    let u0 = u.vector(base);
    let inv = spec.n() as f64;
    let mut s = DMatrix::zeros(d, d);
    let mut du = DMatrix::zeros(d, d);
    for k in 0..d {
        let off = [
            simplex[k + 1][0] - simplex[0][0],
            simplex[k + 1][1] - simplex[0][1],
            simplex[k + 1][2] - simplex[0][2],
        ];
        let sv = spec.lattice_vector(&off);
        let uk = u.vector(spec.shift(base, &off));
        for i in 0..d {
            s[(i, k)] = sv[i];
            du[(i, k)] = (uk[i] - u0[i]) * inv;
        }
    }
    // A S = ΔU  ⇔  Sᵀ Aᵀ = ΔUᵀ.
    let lu = s.transpose().lu();
    let at = lu
        .solve(&du.transpose())
        .ok_or_else(|| Error::Singular("degenerate simplex".into()))?;
    Ok(at.transpose())
}

/// The FE energy density of one simplex written as a cluster potential
/// `V_FE(r_1..r_d) = w · W_CB(A(r))`.
struct SimplexCluster<'a> {
    cb: Arc<CauchyBorn<'a>>,
    bonds: Vec<Offset>,
    weight: f64,
    s_inv: Mat3,
}

impl<'a> SimplexCluster<'a> {
    fn new(cb: Arc<CauchyBorn<'a>>, geometry: &LatticeSpec, bonds: Vec<Offset>, weight: f64) -> Result<Self> {
        let d = geometry.dim();
        let s = DMatrix::from_fn(d, d, |i, k| geometry.lattice_vector(&bonds[k])[i]);
        let inv = s
            .try_inverse()
            .ok_or_else(|| Error::Singular("degenerate simplex".into()))?;
        Ok(Self {
            cb,
            bonds,
            weight,
            s_inv: to_mat3(&inv),
        })
    }
}

impl Cluster for SimplexCluster<'_> {
    fn bonds(&self) -> &[Offset] {
        &self.bonds
    }

    fn weight(&self) -> f64 {
        self.weight
    }

    fn eval(&self, reference: &[Vector], r: &[Vector], hessian: bool) -> Result<ClusterEval> {
        let d = self.cb.dim();
        let si = &self.s_inv;
        let mut a = [[0.0; 3]; 3];
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    a[i][j] += (r[k][i] - reference[k][i]) * si[k][j];
                }
            }
        }
        let e = self.cb.eval(&a, hessian)?;
        let grads = (0..d)
            .map(|k| {
                let mut g = [0.0; 3];
                for (i, gi) in g.iter_mut().enumerate().take(d) {
                    for j in 0..d {
                        *gi += e.stress[i][j] * si[k][j];
                    }
                }
                g
            })
            .collect();
        let mut hess = Vec::new();
        if let Some(c) = e.moduli.as_ref() {
            for k in 0..d {
                for m in 0..d {
                    let mut h = [[0.0; 3]; 3];
                    for i in 0..d {
                        for l in 0..d {
                            let mut acc = 0.0;
                            for j in 0..d {
                                for p in 0..d {
                                    acc += c[t4(i, j, l, p)] * si[k][j] * si[m][p];
                                }
                            }
                            h[i][l] = acc;
                        }
                    }
                    hess.push(h);
                }
            }
        }
        Ok(ClusterEval {
            value: e.value,
            grads,
            hess,
        })
    }
}

fn edges(simplex: &[Offset], base: usize, order: &[usize]) -> Vec<Offset> {
    order
        .iter()
        .map(|&k| {
            let (v, b) = (simplex[k], simplex[base]);
            [v[0] - b[0], v[1] - b[1], v[2] - b[2]]
        })
        .collect()
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &x) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

/// Which stencil family represents the FE energy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeForm {
    /// One cluster per simplex of the cell.
    Element,
    /// Every ordered `d`-tuple `S_FE` of edges out of a common vertex,
    /// weighted by `|T| / (d+1)!`.
    Atomistic,
}

/// FE assembly as a cluster sum over the lattice.
pub fn fe_assembly<'a>(spec: &LatticeSpec, model: &'a PotentialModel, form: FeForm) -> Result<Assembly<'a>> {
    let tri = build_triangulation(spec.dim())?;
    let cb = Arc::new(CauchyBorn::new(model, spec)?);
    let d = spec.dim();
    let factorial = (1..=d + 1).product::<usize>() as f64;
    let mut clusters: Vec<Box<dyn Cluster + 'a>> = Vec::new();
    for (simplex, vol) in tri.simplices.iter().zip(&tri.volumes) {
        match form {
            FeForm::Element => {
                let order: Vec<usize> = (1..=d).collect();
                clusters.push(Box::new(SimplexCluster::new(
                    cb.clone(),
                    spec,
                    edges(simplex, 0, &order),
                    *vol,
                )?));
            }
            FeForm::Atomistic => {
                for base in 0..=d {
                    let others: Vec<usize> = (0..=d).filter(|&k| k != base).collect();
                    for order in permutations(&others) {
                        clusters.push(Box::new(SimplexCluster::new(
                            cb.clone(),
                            spec,
                            edges(simplex, base, &order),
                            vol / factorial,
                        )?));
                    }
                }
            }
        }
    }
    Ok(Assembly::new(spec, clusters))
}

/// The `S_FE` stencil tuples used by [`FeForm::Atomistic`].
pub fn fe_stencil(dim: usize) -> Result<Vec<Vec<Offset>>> {
    let tri = build_triangulation(dim)?;
    let mut out = Vec::new();
    for simplex in &tri.simplices {
        for base in 0..=dim {
            let others: Vec<usize> = (0..=dim).filter(|&k| k != base).collect();
            for order in permutations(&others) {
                out.push(edges(simplex, base, &order));
            }
        }
    }
    Ok(out)
}

/// Element-loop FE energy `ε^d Σ_x Σ_T |T| W_CB(A_T)`, with `A_T` from
/// [`fe_gradient`].
pub fn fe_energy(u: &LatticeField, model: &PotentialModel) -> Result<f64> {
    let spec = *u.spec();
    let tri = build_triangulation(spec.dim())?;
    let cb = CauchyBorn::new(model, &spec)?;
    let per_site: Vec<f64> = (0..spec.site_count())
        .into_par_iter()
        .map(|site| {
            let mut acc = 0.0;
            for (simplex, vol) in tri.simplices.iter().zip(&tri.volumes) {
                let a = fe_gradient(u, site, simplex)?;
                acc += vol * cb.eval(&to_mat3(&a), false)?.value;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(per_site.iter().sum::<f64>() * spec.eps().powi(spec.dim() as i32))
}

/// FE energy evaluated through the atomistic-form potential over `S_FE`.
pub fn fe_energy_atomistic_form(u: &LatticeField, model: &PotentialModel) -> Result<f64> {
    fe_assembly(u.spec(), model, FeForm::Atomistic)?.energy(u)
}

/// `F_ε[y]`, the nodal gradient of the FE energy scaled by `ε^{-d}`.
pub fn force_fe(u: &LatticeField, model: &PotentialModel) -> Result<LatticeField> {
    fe_assembly(u.spec(), model, FeForm::Element)?.force(u)
}

pub fn linearize_fe(u: &LatticeField, model: &PotentialModel) -> Result<StencilOperator> {
    fe_assembly(u.spec(), model, FeForm::Element)?.linearize(u)
}

/// `h̃_ε(ξ)` at the undeformed state.
pub fn symbol_fe(model: &PotentialModel, spec: &LatticeSpec, freq: &Offset) -> Result<SymbolMatrix> {
    let op = linearize_fe(&LatticeField::zeros(spec, FieldKind::Displacement), model)?;
    Ok(op.symbol(0, freq))
}

/// Acoustic tensor `h̃_CB(ξ)_il = Σ_jm C_ijlm ξ_j ξ_m` at a Cartesian `ξ`.
pub fn symbol_cb_moduli(moduli: &DMatrix<f64>, xi: &Vector) -> SymbolMatrix {
    let d = (moduli.nrows() as f64).sqrt().round() as usize;
    SymbolMatrix::from_fn(d, d, |i, l| {
        let mut acc = 0.0;
        for j in 0..d {
            for m in 0..d {
                acc += moduli[(i * d + j, l * d + m)] * xi[j] * xi[m];
            }
        }
        Complex64::new(acc, 0.0)
    })
}

pub fn symbol_cb(model: &PotentialModel, geometry: &LatticeSpec, xi: &Vector) -> Result<SymbolMatrix> {
    let d = geometry.dim();
    let c = d2wcb(&DMatrix::zeros(d, d), model, geometry)?;
    Ok(symbol_cb_moduli(&c, xi))
}

/// Ellipticity scan of `h̃_ε` over the given refinements.
pub fn check_fe_stability(
    model: &PotentialModel,
    geometry: &LatticeSpec,
    n_list: &[usize],
) -> Result<StabilityReport> {
    scan_stability("finite-element", geometry, n_list, |spec| {
        linearize_fe(&LatticeField::zeros(spec, FieldKind::Displacement), model)
    })
}
