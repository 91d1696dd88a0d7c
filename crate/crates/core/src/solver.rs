//! Nonlinear solvers for `F_at[y] = f`, `F_qc[y] = f` and the continuum
//! Cauchy-Born problem over mean-zero displacements.
//!
//! The blended force does not sum to zero over the lattice, so the hybrid
//! equations are imposed modulo constants: the residual is measured after
//! removing its mean, and every linear solve includes the constant modes as
//! Lagrange multipliers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::atomistic::{force_at, linearize_at, StencilOperator};
use crate::cauchy_born::{force_cb, spectral_gradient, t4, CauchyBorn, Tensor4};
use crate::error::{Error, Result};
use crate::hybrid::{force_qc, linearize_qc, BlendFunction};
use crate::lattice::{
    dft, fft_grid, idft, spectral_derivative, trig_interpolate_real, FieldKind, LatticeField,
    LatticeSpec, SpectralField,
};
use crate::potentials::PotentialModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    Newton,
    FixedPointT,
}

/// How the averaged operator of the fixed-point map is approximated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    /// `H[ỹ]` at the base point only.
    Endpoint,
    /// Three-point Gauss rule on the segment from `ỹ` to the iterate.
    Gauss3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearMethod {
    Auto,
    Dense,
    Gmres,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub residual_tol: f64,
    pub max_iters: usize,
    pub damping: f64,
    pub min_damping: f64,
    pub mode: SolveMode,
    pub quadrature: Quadrature,
    pub linear: LinearMethod,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            residual_tol: 1e-10,
            max_iters: 50,
            damping: 1.0,
            min_damping: 1e-4,
            mode: SolveMode::Newton,
            quadrature: Quadrature::Endpoint,
            linear: LinearMethod::Auto,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tol > 0.0) {
            return Err(Error::Config("residual_tol must be positive".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config("damping must lie in (0, 1]".into()));
        }
        if !(self.min_damping > 0.0 && self.min_damping <= self.damping) {
            return Err(Error::Config("min_damping must lie in (0, damping]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub final_residual: f64,
    pub step_lengths: Vec<f64>,
    pub failure: Option<String>,
}

/// `‖f‖_{ε,0}` after removing the componentwise mean.
pub fn projected_residual(r: &LatticeField) -> f64 {
    let mut p = r.clone();
    p.project_mean_zero();
    l2_norm(&p)
}

fn l2_norm(f: &LatticeField) -> f64 {
    let w = f.spec().eps().powi(f.dim() as i32);
    (w * f.values().iter().map(|v| v * v).sum::<f64>()).sqrt()
}

fn require_mean_zero(f: &LatticeField) -> Result<()> {
    if !f.is_mean_zero(1e-10) {
        return Err(Error::Constraint(
            "load does not sum to zero over the lattice".into(),
        ));
    }
    Ok(())
}

/// Mean-zero copy of a load, for callers that want explicit projection.
pub fn project_load(f: &LatticeField) -> LatticeField {
    let mut p = f.clone();
    p.project_mean_zero();
    p
}

/// Restarted, right-preconditioned GMRES for `A x = b`.
pub fn gmres<A, M>(apply: A, precond: M, b: &[f64], rel_tol: f64, restart: usize, max_iters: usize) -> Result<(Vec<f64>, usize)>
where
    A: Fn(&[f64]) -> Vec<f64>,
    M: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let target = rel_tol * bnorm;
    let mut total = 0;
    let mut r = b.to_vec();
    while total < max_iters {
        let beta = norm(&r);
        if beta <= target {
            return Ok((x, total));
        }
        let m = restart.min(max_iters - total);
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|x| x / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::new();
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            let zk = precond(&v[k]);
            let mut w = apply(&zk);
            z.push(zk);
            for (i, vi) in v.iter().enumerate() {
                let hik: f64 = w.iter().zip(vi).map(|(a, b)| a * b).sum();
                h[i][k] = hik;
                w.iter_mut().zip(vi).for_each(|(a, b)| *a -= hik * b);
            }
            let wn = norm(&w);
            h[k + 1][k] = wn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let den = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if den == 0.0 {
                return Err(Error::Singular("GMRES breakdown".into()));
            }
            cs[k] = h[k][k] / den;
            sn[k] = h[k + 1][k] / den;
            h[k][k] = den;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            total += 1;
            if g[k + 1].abs() <= target || wn == 0.0 {
                break;
            }
            v.push(w.iter().map(|x| x / wn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (yi, zi) in y.iter().zip(&z) {
            x.iter_mut().zip(zi).for_each(|(a, b)| *a += yi * b);
        }
        let ax = apply(&x);
        r = b.iter().zip(&ax).map(|(a, b)| a - b).collect();
    }
    if norm(&r) <= target {
        Ok((x, total))
    } else {
        Err(Error::NonConvergence(format!(
            "GMRES reached {} iterations with relative residual {:.3e}",
            total,
            norm(&r) / bnorm
        )))
    }
}

/// Inverse of a constant-coefficient symbol applied in Fourier space; the
/// zero mode (and optionally the unpaired Nyquist modes) are annihilated.
pub struct FourierPreconditioner {
    spec: LatticeSpec,
    inv: Vec<DMatrix<Complex64>>,
}

impl FourierPreconditioner {
    pub fn from_symbols<F>(spec: &LatticeSpec, drop_nyquist: bool, symbol: F) -> Self
    where
        F: Fn(&[i64; 3]) -> DMatrix<Complex64>,
    {
        let d = spec.dim();
        let half = (spec.n() / 2) as i64;
        let even = spec.n() % 2 == 0;
        let inv = spec
            .frequencies()
            .map(|mu| {
                let zero = mu.iter().all(|&m| m == 0);
                let nyq = even && (0..d).any(|j| mu[j] == -half);
                if zero || (drop_nyquist && nyq) {
                    return DMatrix::zeros(d, d);
                }
                symbol(&mu).try_inverse().unwrap_or_else(|| DMatrix::zeros(d, d))
            })
            .collect();
        Self { spec: *spec, inv }
    }

    /// Uses the site-averaged coefficients of `op`.
    pub fn for_operator(op: &StencilOperator) -> Self {
        let spec = *op.spec();
        let sites = spec.site_count() as f64;
        let d = spec.dim();
        let no = op.offsets().len();
        let mut mean = vec![0.0; no * d * d];
        for site in 0..spec.site_count() {
            for k in 0..no {
                for (m, b) in mean[k * d * d..(k + 1) * d * d].iter_mut().zip(op.block(site, k)) {
                    *m += b / sites;
                }
            }
        }
        Self::from_symbols(&spec, false, |mu| {
            let mut s = DMatrix::zeros(d, d);
            for (k, o) in op.offsets().iter().enumerate() {
                let ph = Complex64::from_polar(1.0, spec.stencil_phase(mu, o));
                for i in 0..d {
                    for j in 0..d {
                        s[(i, j)] += ph * mean[(k * d + i) * d + j];
                    }
                }
            }
            s
        })
    }

    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let d = self.spec.dim();
        let mut data: Vec<Complex64> = r.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        fft_grid(&self.spec, &mut data, d, false);
        let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
        for (k, m) in self.inv.iter().enumerate() {
            for i in 0..d {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..d {
                    acc += m[(i, j)] * data[k * d + j];
                }
                out[k * d + i] = acc;
            }
        }
        fft_grid(&self.spec, &mut out, d, true);
        let scale = 1.0 / self.spec.site_count() as f64;
        out.iter().map(|c| c.re * scale).collect()
    }
}

fn project(v: &mut [f64], d: usize) {
    let sites = (v.len() / d) as f64;
    for c in 0..d {
        let m: f64 = v.iter().skip(c).step_by(d).sum::<f64>() / sites;
        v.iter_mut().skip(c).step_by(d).for_each(|x| *x -= m);
    }
}

/// Solves `P H v = P rhs` for mean-zero `v` (`P` removes the mean).
fn solve_projected(op: &StencilOperator, rhs: &LatticeField, method: LinearMethod) -> Result<LatticeField> {
    let spec = *op.spec();
    let d = spec.dim();
    let n = spec.dof();
    let method = match method {
        LinearMethod::Auto if n <= 1024 => LinearMethod::Dense,
        LinearMethod::Auto => LinearMethod::Gmres,
        m => m,
    };
    let values = match method {
        LinearMethod::Dense => {
            let h = op.to_dense();
            let mut a = DMatrix::zeros(n + d, n + d);
            a.view_mut((0, 0), (n, n)).copy_from(&h);
            for site in 0..spec.site_count() {
                for c in 0..d {
                    a[(site * d + c, n + c)] = 1.0;
                    a[(n + c, site * d + c)] = 1.0;
                }
            }
            let lu = a.lu();
            let u = lu.u();
            let diag: Vec<f64> = (0..n + d).map(|i| u[(i, i)].abs()).collect();
            let big = diag.iter().copied().fold(0.0, f64::max);
            if let Some((i, small)) = diag
                .iter()
                .copied()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))
            {
                if small <= 1e-13 * big {
                    return Err(Error::Singular(format!(
                        "near-null direction at unknown {i} (pivot ratio {:.3e})",
                        small / big
                    )));
                }
            }
            let mut b = DVector::zeros(n + d);
            b.rows_mut(0, n).copy_from_slice(rhs.values());
            let x = lu
                .solve(&b)
                .ok_or_else(|| Error::Singular("linear system is singular".into()))?;
            let mut v = x.rows(0, n).iter().copied().collect::<Vec<_>>();
            project(&mut v, d);
            v
        }
        _ => {
            let pre = FourierPreconditioner::for_operator(op);
            let mut b = rhs.values().to_vec();
            project(&mut b, d);
            let apply = |x: &[f64]| {
                let w = LatticeField::from_values(&spec, FieldKind::Generic, x.to_vec())
                    .expect("sized by dof");
                let mut out = op.apply(&w).expect("same lattice").into_values();
                project(&mut out, d);
                out
            };
            let (mut v, _) = gmres(apply, |r| pre.apply(r), &b, 1e-11, 80, 2000)?;
            project(&mut v, d);
            v
        }
    };
    LatticeField::from_values(&spec, FieldKind::Displacement, values)
}

/// Solves `H v = rhs` for mean-zero `v` and mean-zero `rhs`.
pub fn linear_solve(op: &StencilOperator, rhs: &LatticeField, method: LinearMethod) -> Result<LatticeField> {
    if !rhs.is_mean_zero(1e-10) {
        return Err(Error::Constraint("right-hand side is not mean-zero".into()));
    }
    solve_projected(op, rhs, method)
}

/// Shared damped Newton / fixed-point driver. `force` returns `F[u]`,
/// `jacobian` the linearization at a given state.
fn drive<F, J>(f: &LatticeField, u0: &LatticeField, opts: &SolveOptions, force: F, jacobian: J) -> Result<(LatticeField, SolveReport)>
where
    F: Fn(&LatticeField) -> Result<LatticeField>,
    J: Fn(&LatticeField) -> Result<StencilOperator>,
{
    opts.validate()?;
    require_mean_zero(f)?;
    let spec = *f.spec();
    let mut u = u0.clone().with_kind(FieldKind::Displacement);
    u.project_mean_zero();
    let base = u.clone();
    let residual = |u: &LatticeField| -> Result<(LatticeField, f64)> {
        let r = f.sub(&force(u)?);
        let norm = projected_residual(&r);
        Ok((r, norm))
    };
    let (mut r, mut norm) = residual(&u)?;
    let mut report = SolveReport {
        residual_history: vec![norm],
        ..SolveReport::default()
    };
    let chord = match opts.mode {
        SolveMode::FixedPointT if opts.quadrature == Quadrature::Endpoint => Some(jacobian(&base)?),
        _ => None,
    };
    while norm > opts.residual_tol {
        if report.iterations >= opts.max_iters {
            report.failure = Some(format!("reached max_iters = {}", opts.max_iters));
            break;
        }
        let op = match (&chord, opts.mode) {
            (Some(op), _) => op.clone(),
            (None, SolveMode::Newton) => jacobian(&u)?,
            (None, SolveMode::FixedPointT) => {
                // (5 H(t₁) + 8 H(t₂) + 5 H(t₃)) / 18 on the segment ỹ → y.
                let nodes = [0.5 - 0.15f64.sqrt(), 0.5, 0.5 + 0.15f64.sqrt()];
                let weights = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
                let mut acc: Option<StencilOperator> = None;
                let mut wsum = 0.0;
                for (t, w) in nodes.iter().zip(weights) {
                    let mut ut = base.scaled(1.0 - t);
                    ut.axpy(*t, &u);
                    let h = jacobian(&ut)?;
                    wsum += w;
                    acc = Some(match acc {
                        None => h,
                        Some(a) => StencilOperator::blend(&a, &h, &vec![w / wsum; spec.site_count()])?,
                    });
                }
                acc.expect("three nodes")
            }
        };
        let step = match solve_projected(&op, &r, opts.linear) {
            Ok(s) => s,
            Err(e) => {
                report.failure = Some(format!("linear solve failed at iteration {}: {e}", report.iterations));
                break;
            }
        };
        let mut t = opts.damping;
        let accepted = loop {
            let mut trial = u.clone();
            trial.axpy(t, &step);
            trial.project_mean_zero();
            match residual(&trial) {
                Ok((rt, nt)) if nt < norm || nt <= opts.residual_tol => break Some((trial, rt, nt)),
                _ => {}
            }
            t *= 0.5;
            if t < opts.min_damping {
                break None;
            }
        };
        report.iterations += 1;
        match accepted {
            Some((trial, rt, nt)) => {
                u = trial;
                r = rt;
                norm = nt;
                report.residual_history.push(nt);
                report.step_lengths.push(t);
            }
            None => {
                report.failure = Some(format!(
                    "damping exhausted at iteration {} (residual {norm:.3e})",
                    report.iterations
                ));
                break;
            }
        }
    }
    report.final_residual = norm;
    report.converged = norm <= opts.residual_tol;
    if report.converged {
        report.failure = None;
    }
    Ok((u, report))
}

/// Solves `F_at[x + u] = f` for mean-zero `u`.
pub fn solve_atomistic(f: &LatticeField, model: &PotentialModel, opts: &SolveOptions) -> Result<(LatticeField, SolveReport)> {
    solve_atomistic_from(f, model, opts, &LatticeField::zeros(f.spec(), FieldKind::Displacement))
}

pub fn solve_atomistic_from(
    f: &LatticeField,
    model: &PotentialModel,
    opts: &SolveOptions,
    u0: &LatticeField,
) -> Result<(LatticeField, SolveReport)> {
    drive(f, u0, opts, |u| force_at(u, model), |u| linearize_at(u, model))
}

/// Solves `F_qc[x + u] = f` modulo constants for mean-zero `u`.
pub fn solve_hybrid(
    f: &LatticeField,
    model: &PotentialModel,
    blend: &BlendFunction,
    opts: &SolveOptions,
) -> Result<(LatticeField, SolveReport)> {
    solve_hybrid_from(f, model, blend, opts, &LatticeField::zeros(f.spec(), FieldKind::Displacement))
}

/// As [`solve_hybrid`], starting from `u0`; `u0` is also the base point
/// `ỹ` of the fixed-point map.
pub fn solve_hybrid_from(
    f: &LatticeField,
    model: &PotentialModel,
    blend: &BlendFunction,
    opts: &SolveOptions,
    u0: &LatticeField,
) -> Result<(LatticeField, SolveReport)> {
    drive(f, u0, opts, |u| force_qc(u, model, blend), |u| linearize_qc(u, model, blend))
}

/// Continuum solution on a fine grid, resampled on demand.
#[derive(Clone, Debug)]
pub struct CbReference {
    pub u: LatticeField,
    pub report: SolveReport,
    spectral: SpectralField,
}

impl CbReference {
    pub fn n_ref(&self) -> usize {
        self.u.spec().n()
    }

    /// Displacement on `spec`: subsampled when `n` divides `n_ref`,
    /// trigonometric interpolation otherwise.
    pub fn sample(&self, spec: &LatticeSpec) -> Result<LatticeField> {
        let fine = self.u.spec();
        if spec.dim() != fine.dim() {
            return Err(Error::Constraint("dimension mismatch".into()));
        }
        let d = spec.dim();
        let mut values = vec![0.0; spec.dof()];
        if fine.n() % spec.n() == 0 {
            let ratio = (fine.n() / spec.n()) as i64;
            for site in 0..spec.site_count() {
                let m = spec.multi_index(site);
                let mut mf = [0i64; 3];
                for j in 0..d {
                    mf[j] = m[j] as i64 * ratio;
                }
                let v = self.u.vector(fine.index_of(&mf));
                values[site * d..(site + 1) * d].copy_from_slice(&v[..d]);
            }
        } else {
            for site in 0..spec.site_count() {
                let v = trig_interpolate_real(&self.spectral, &spec.site_position(site));
                values[site * d..(site + 1) * d].copy_from_slice(&v[..d]);
            }
        }
        let mut out = LatticeField::from_values(spec, FieldKind::Displacement, values)?;
        out.project_mean_zero();
        Ok(out)
    }
}

/// Removes the mean and the unpaired Nyquist modes.
fn spectral_project(f: &LatticeField) -> LatticeField {
    let spec = *f.spec();
    let d = spec.dim();
    let half = (spec.n() / 2) as i64;
    let even = spec.n() % 2 == 0;
    let mut s = dft(f);
    for (k, mu) in spec.frequencies().enumerate() {
        if mu.iter().all(|&m| m == 0) || (even && (0..d).any(|j| mu[j] == -half)) {
            for c in 0..d {
                s.coeffs_mut()[k * d + c] = Complex64::new(0.0, 0.0);
            }
        }
    }
    idft(&s, f.kind())
}

/// `−div(C(x) : ∇v)` with pointwise moduli.
fn cb_jacobian_apply(moduli: &[Tensor4], v: &LatticeField) -> LatticeField {
    let spec = *v.spec();
    let d = spec.dim();
    let grads = spectral_gradient(v);
    let mut out = LatticeField::zeros(&spec, FieldKind::Force);
    for j in 0..d {
        let mut col = vec![0.0; spec.dof()];
        for (site, (g, c)) in grads.iter().zip(moduli).enumerate() {
            for i in 0..d {
                let mut acc = 0.0;
                for l in 0..d {
                    for m in 0..d {
                        acc += c[t4(i, j, l, m)] * g[l][m];
                    }
                }
                col[site * d + i] = acc;
            }
        }
        let p = LatticeField::from_values(&spec, FieldKind::Generic, col).expect("sized by dof");
        out.axpy(-1.0, &spectral_derivative(&p, j));
    }
    out
}

/// Newton on the spectral collocation of `F_CB[y] = f` at the grid of
/// `f_ref`, with GMRES preconditioned by the reference acoustic tensor.
pub fn solve_cb_reference(f_ref: &LatticeField, model: &PotentialModel, opts: &SolveOptions) -> Result<CbReference> {
    opts.validate()?;
    require_mean_zero(f_ref)?;
    let spec = *f_ref.spec();
    let d = spec.dim();
    let cb = CauchyBorn::new(model, &spec)?;
    let c0 = cb.eval(&[[0.0; 3]; 3], true)?.moduli.expect("requested");
    let pre = FourierPreconditioner::from_symbols(&spec, true, |mu| {
        let xi = spec.wavevector(mu);
        DMatrix::from_fn(d, d, |i, l| {
            let mut acc = 0.0;
            for j in 0..d {
                for m in 0..d {
                    acc += c0[t4(i, j, l, m)] * xi[j] * xi[m];
                }
            }
            Complex64::new(acc, 0.0)
        })
    });
    let f = spectral_project(f_ref);
    let residual = |u: &LatticeField| -> Result<(LatticeField, f64)> {
        let r = spectral_project(&f.sub(&force_cb(u, model)?));
        let n = l2_norm(&r);
        Ok((r, n))
    };
    let mut u = LatticeField::zeros(&spec, FieldKind::Displacement);
    let (mut r, mut norm) = residual(&u)?;
    let mut report = SolveReport {
        residual_history: vec![norm],
        ..SolveReport::default()
    };
    while norm > opts.residual_tol {
        if report.iterations >= opts.max_iters {
            report.failure = Some(format!("reached max_iters = {}", opts.max_iters));
            break;
        }
        let moduli: Vec<Tensor4> = spectral_gradient(&u)
            .iter()
            .map(|a| cb.eval(a, true).map(|e| *e.moduli.expect("requested")))
            .collect::<Result<_>>()?;
        let apply = |x: &[f64]| {
            let v = LatticeField::from_values(&spec, FieldKind::Displacement, x.to_vec()).expect("sized");
            spectral_project(&cb_jacobian_apply(&moduli, &v)).into_values()
        };
        let (step, _) = match gmres(apply, |x| pre.apply(x), r.values(), 1e-10, 60, 1200) {
            Ok(s) => s,
            Err(e) => {
                report.failure = Some(format!("linear solve failed at iteration {}: {e}", report.iterations));
                break;
            }
        };
        let step = LatticeField::from_values(&spec, FieldKind::Displacement, step)?;
        let mut t = opts.damping;
        let accepted = loop {
            let mut trial = u.clone();
            trial.axpy(t, &step);
            match residual(&trial) {
                Ok((rt, nt)) if nt < norm || nt <= opts.residual_tol => break Some((trial, rt, nt)),
                _ => {}
            }
            t *= 0.5;
            if t < opts.min_damping {
                break None;
            }
        };
        report.iterations += 1;
        match accepted {
            Some((trial, rt, nt)) => {
                u = trial;
                r = rt;
                norm = nt;
                report.residual_history.push(nt);
                report.step_lengths.push(t);
            }
            None => {
                report.failure = Some(format!("damping exhausted at iteration {}", report.iterations));
                break;
            }
        }
    }
    report.final_residual = norm;
    report.converged = norm <= opts.residual_tol;
    if !report.converged {
        return Err(Error::NonConvergence(format!(
            "continuum reference: {}",
            report.failure.clone().unwrap_or_default()
        )));
    }
    let spectral = dft(&u);
    Ok(CbReference { u, report, spectral })
}
