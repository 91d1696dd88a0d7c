//! Periodic Bravais-lattice geometry and the discrete calculus on the
//! ε-grid `Ω_ε = Ω ∩ εL`.
//!
//! Sites are indexed row-major by their integer multi-index
//! `m ∈ {0..n-1}^d` (last coordinate fastest). Frequencies use the same
//! storage order; storage index `k` maps to the signed coefficient
//! `μ ∈ [-n/2, n/2)` so that `εΣμ_j b_j` lies in the centered reciprocal
//! cell `Γ*` (the boundary coefficient `-n/2` is included for even `n`).
//!
//! Vector-valued fields store their `d` components interleaved per site.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer lattice coordinates, padded with zeros beyond `dim`.
pub type Offset = [i64; 3];
/// Cartesian vector, padded with zeros beyond `dim`.
pub type Vector = [f64; 3];

pub(crate) fn dot(a: &Vector, b: &Vector) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Returns `b_j` with `a_j · b_k = 2π δ_jk`.
///
/// `basis` holds the `d` lattice vectors; only their first `d`
/// components are read.
pub fn reciprocal_basis(basis: &[Vector]) -> Result<Vec<Vector>> {
    let d = basis.len();
    if !(1..=3).contains(&d) {
        return Err(Error::UnsupportedDimension(d));
    }
    let a = DMatrix::from_fn(d, d, |i, j| basis[j][i]);
    let det = a.determinant();
    let scale: f64 = basis
        .iter()
        .map(|v| v[..d].iter().map(|x| x * x).sum::<f64>().sqrt())
        .product();
    if !det.is_finite() || scale == 0.0 || det.abs() <= 1e-12 * scale {
        return Err(Error::DegenerateLattice(det));
    }
    let inv = a.try_inverse().ok_or(Error::DegenerateLattice(det))?;
    // B = 2π A^{-T}: column k of B is b_k, i.e. b_k[i] = 2π inv[k][i].
    Ok((0..d)
        .map(|k| {
            let mut b = [0.0; 3];
            for (i, bi) in b.iter_mut().enumerate().take(d) {
                *bi = 2.0 * PI * inv[(k, i)];
            }
            b
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeSpec {
    dim: usize,
    basis: [Vector; 3],
    reciprocal: [Vector; 3],
    n: usize,
}

impl LatticeSpec {
    pub fn new(basis: &[Vector], n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidRefinement(n));
        }
        let dim = basis.len();
        let recip = reciprocal_basis(basis)?;
        let mut b = [[0.0; 3]; 3];
        let mut r = [[0.0; 3]; 3];
        for j in 0..dim {
            for i in 0..dim {
                b[j][i] = basis[j][i];
                r[j][i] = recip[j][i];
            }
        }
        Ok(Self {
            dim,
            basis: b,
            reciprocal: r,
            n,
        })
    }

    /// Unit cubic lattice `a_j = e_j`.
    pub fn cubic(dim: usize, n: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        let basis: Vec<Vector> = (0..dim)
            .map(|j| {
                let mut e = [0.0; 3];
                e[j] = 1.0;
                e
            })
            .collect();
        Self::new(&basis, n)
    }

    /// Same geometry, different refinement.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidRefinement(n));
        }
        Ok(Self { n, ..*self })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eps(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn basis(&self) -> &[Vector] {
        &self.basis[..self.dim]
    }

    pub fn reciprocal(&self) -> &[Vector] {
        &self.reciprocal[..self.dim]
    }

    pub fn site_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Unknowns of a vector field: `d · n^d`.
    pub fn dof(&self) -> usize {
        self.site_count() * self.dim
    }

    /// Volume of the unit cell `Γ`, `|det[a_1 … a_d]|`.
    pub fn cell_volume(&self) -> f64 {
        let d = self.dim;
        DMatrix::from_fn(d, d, |i, j| self.basis[j][i])
            .determinant()
            .abs()
    }

    pub fn multi_index(&self, site: usize) -> [usize; 3] {
        let mut m = [0usize; 3];
        let mut rem = site;
        for j in (0..self.dim).rev() {
            m[j] = rem % self.n;
            rem /= self.n;
        }
        m
    }

    /// Site index of an arbitrary integer multi-index, wrapped periodically.
    pub fn index_of(&self, m: &Offset) -> usize {
        let n = self.n as i64;
        let mut idx = 0usize;
        for &mj in m.iter().take(self.dim) {
            idx = idx * self.n + mj.rem_euclid(n) as usize;
        }
        idx
    }

    /// Index of `site + μ` with periodic wrap.
    pub fn shift(&self, site: usize, mu: &Offset) -> usize {
        let m = self.multi_index(site);
        let mut t = [0i64; 3];
        for j in 0..self.dim {
            t[j] = m[j] as i64 + mu[j];
        }
        self.index_of(&t)
    }

    /// `Σ_j μ_j a_j` in Cartesian coordinates.
    pub fn lattice_vector(&self, mu: &Offset) -> Vector {
        let mut v = [0.0; 3];
        for j in 0..self.dim {
            for (i, vi) in v.iter_mut().enumerate().take(self.dim) {
                *vi += mu[j] as f64 * self.basis[j][i];
            }
        }
        v
    }

    /// Fractional coordinates `c` of a Cartesian point, `x = Σ c_j a_j`.
    pub fn fractional(&self, x: &Vector) -> Vector {
        let mut c = [0.0; 3];
        for (j, cj) in c.iter_mut().enumerate().take(self.dim) {
            *cj = dot(&self.reciprocal[j], x) / (2.0 * PI);
        }
        c
    }

    pub fn cartesian(&self, c: &Vector) -> Vector {
        let mut v = [0.0; 3];
        for j in 0..self.dim {
            for (i, vi) in v.iter_mut().enumerate().take(self.dim) {
                *vi += c[j] * self.basis[j][i];
            }
        }
        v
    }

    /// Cartesian position `x = ε Σ m_j a_j` of a site.
    pub fn site_position(&self, site: usize) -> Vector {
        let m = self.multi_index(site);
        let mut c = [0.0; 3];
        for j in 0..self.dim {
            c[j] = m[j] as f64 * self.eps();
        }
        self.cartesian(&c)
    }

    /// Signed frequency coefficients `μ ∈ K_ε` stored at index `k`.
    pub fn frequency(&self, k: usize) -> Offset {
        let m = self.multi_index(k);
        let mut mu = [0i64; 3];
        for j in 0..self.dim {
            mu[j] = signed_mode(m[j], self.n);
        }
        mu
    }

    /// Storage index of the signed frequency `μ` (folded periodically).
    pub fn frequency_index(&self, mu: &Offset) -> usize {
        self.index_of(mu)
    }

    /// Enumerates `K_ε` in storage order.
    pub fn frequencies(&self) -> impl Iterator<Item = Offset> + '_ {
        (0..self.site_count()).map(move |k| self.frequency(k))
    }

    /// Cartesian reciprocal vector `ξ = Σ_j μ_j b_j`.
    pub fn wavevector(&self, mu: &Offset) -> Vector {
        let mut v = [0.0; 3];
        for j in 0..self.dim {
            for (i, vi) in v.iter_mut().enumerate().take(self.dim) {
                *vi += mu[j] as f64 * self.reciprocal[j][i];
            }
        }
        v
    }

    /// `ξ · x` for a frequency `μ` and site multi-index `m`, computed
    /// from integers as `2π ε Σ μ_j m_j`.
    pub fn phase(&self, mu: &Offset, m: &[usize; 3]) -> f64 {
        let mut acc: i64 = 0;
        let n = self.n as i64;
        for j in 0..self.dim {
            acc = (acc + (mu[j] * m[j] as i64).rem_euclid(n)).rem_euclid(n);
        }
        2.0 * PI * acc as f64 / self.n as f64
    }

    /// `ε ξ · s` for `s = Σ ν_j a_j`, which equals `2π ε Σ μ_j ν_j`.
    pub fn stencil_phase(&self, mu: &Offset, nu: &Offset) -> f64 {
        let mut acc: i64 = 0;
        for j in 0..self.dim {
            acc += mu[j] * nu[j];
        }
        2.0 * PI * acc as f64 * self.eps()
    }
}

pub(crate) fn signed_mode(k: usize, n: usize) -> i64 {
    // [-n/2, n/2): even n keeps -n/2, drops +n/2.
    if k < (n + 1) / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Displacement,
    PositionOffset,
    Force,
    Generic,
}

/// A `d`-vector valued, `Ω_ε`-periodic lattice function.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeField {
    spec: LatticeSpec,
    kind: FieldKind,
    values: Vec<f64>,
}

impl LatticeField {
    pub fn zeros(spec: &LatticeSpec, kind: FieldKind) -> Self {
        Self {
            spec: *spec,
            kind,
            values: vec![0.0; spec.dof()],
        }
    }

    pub fn from_values(spec: &LatticeSpec, kind: FieldKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.dof() {
            return Err(Error::Constraint(format!(
                "field has {} values, lattice needs {}",
                values.len(),
                spec.dof()
            )));
        }
        Ok(Self {
            spec: *spec,
            kind,
            values,
        })
    }

    /// Samples `g` at every site position.
    pub fn sample<F: Fn(&Vector) -> Vector>(spec: &LatticeSpec, kind: FieldKind, g: F) -> Self {
        let d = spec.dim();
        let mut values = vec![0.0; spec.dof()];
        for site in 0..spec.site_count() {
            let v = g(&spec.site_position(site));
            values[site * d..(site + 1) * d].copy_from_slice(&v[..d]);
        }
        Self {
            spec: *spec,
            kind,
            values,
        }
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn with_kind(mut self, kind: FieldKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn at(&self, site: usize) -> &[f64] {
        let d = self.dim();
        &self.values[site * d..(site + 1) * d]
    }

    pub fn at_mut(&mut self, site: usize) -> &mut [f64] {
        let d = self.dim();
        &mut self.values[site * d..(site + 1) * d]
    }

    /// Vector at site, padded to three components.
    pub fn vector(&self, site: usize) -> Vector {
        let mut v = [0.0; 3];
        v[..self.dim()].copy_from_slice(self.at(site));
        v
    }

    /// Value at an arbitrary multi-index, wrapped periodically.
    pub fn get_wrapped(&self, m: &Offset) -> Vector {
        self.vector(self.spec.index_of(m))
    }

    pub fn site_sum(&self) -> Vector {
        let d = self.dim();
        let mut s = [0.0; 3];
        for chunk in self.values.chunks(d) {
            for c in 0..d {
                s[c] += chunk[c];
            }
        }
        s
    }

    pub fn mean(&self) -> Vector {
        let n = self.spec.site_count() as f64;
        let mut s = self.site_sum();
        for v in s.iter_mut() {
            *v /= n;
        }
        s
    }

    /// True when every component's site-sum is within `tol` of zero,
    /// relative to the field's magnitude.
    pub fn is_mean_zero(&self, tol: f64) -> bool {
        let scale = self.values.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        self.site_sum().iter().all(|s| s.abs() <= tol * scale)
    }

    /// Subtracts the componentwise mean.
    pub fn project_mean_zero(&mut self) {
        let m = self.mean();
        let d = self.dim();
        for chunk in self.values.chunks_mut(d) {
            for c in 0..d {
                chunk[c] -= m[c];
            }
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= a);
        out
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: f64, other: &LatticeField) {
        for (v, w) in self.values.iter_mut().zip(&other.values) {
            *v += a * w;
        }
    }

    pub fn sub(&self, other: &LatticeField) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn add(&self, other: &LatticeField) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    /// Maximum Euclidean norm over sites (`L^∞_ε`).
    pub fn max_norm(&self) -> f64 {
        self.values
            .chunks(self.dim())
            .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Writes one CSV row per site: multi-index columns, then values.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim();
        let idx = ["m0", "m1", "m2"];
        let val = ["v0", "v1", "v2"];
        let header: Vec<&str> = idx[..d].iter().chain(&val[..d]).copied().collect();
        writeln!(w, "{}", header.join(","))?;
        for site in 0..self.spec.site_count() {
            let m = self.spec.multi_index(site);
            let mut cols: Vec<String> = m[..d].iter().map(|x| x.to_string()).collect();
            cols.extend(self.at(site).iter().map(|v| format!("{v:.17e}")));
            writeln!(w, "{}", cols.join(","))?;
        }
        Ok(())
    }
}

/// `(T^μ f)(x) = f(x + ε Σ μ_j a_j)`.
pub fn translate(f: &LatticeField, mu: &Offset) -> LatticeField {
    let spec = f.spec;
    let d = spec.dim();
    let mut out = LatticeField::zeros(&spec, f.kind);
    for site in 0..spec.site_count() {
        let src = spec.shift(site, mu);
        out.values[site * d..(site + 1) * d].copy_from_slice(&f.values[src * d..(src + 1) * d]);
    }
    out
}

/// `D⁺_{ε,s} f = ε⁻¹ (T^μ − I) f` with `s = Σ μ_j a_j`.
pub fn forward_diff(f: &LatticeField, mu: &Offset) -> LatticeField {
    let inv = f.spec.n() as f64;
    let mut out = translate(f, mu);
    for (o, v) in out.values.iter_mut().zip(&f.values) {
        *o = (*o - v) * inv;
    }
    out.kind = FieldKind::Generic;
    out
}

/// `D⁻_{ε,s} f = ε⁻¹ (I − T^{−μ}) f`, so that `D⁺_{ε,−s} = −D⁻_{ε,s}`.
pub fn backward_diff(f: &LatticeField, mu: &Offset) -> LatticeField {
    let inv = f.spec.n() as f64;
    let neg = [-mu[0], -mu[1], -mu[2]];
    let mut out = translate(f, &neg);
    for (o, v) in out.values.iter_mut().zip(&f.values) {
        *o = (v - *o) * inv;
    }
    out.kind = FieldKind::Generic;
    out
}

/// `D^α = Π_j (D⁺_{ε,a_j})^{α_j}`.
pub fn multi_diff(f: &LatticeField, alpha: &[usize; 3]) -> LatticeField {
    let mut out = f.clone();
    for j in 0..f.dim() {
        let mut e = [0i64; 3];
        e[j] = 1;
        for _ in 0..alpha[j] {
            out = forward_diff(&out, &e);
        }
    }
    out
}

/// All multi-indices with `|α| ≤ k` in `d` dimensions.
pub fn multi_indices(dim: usize, k: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    let r = k + 1;
    for a0 in 0..r {
        for a1 in 0..if dim > 1 { r } else { 1 } {
            for a2 in 0..if dim > 2 { r } else { 1 } {
                if a0 + a1 + a2 <= k {
                    out.push([a0, a1, a2]);
                }
            }
        }
    }
    out
}

/// Squared discrete Sobolev norm `‖f‖²_{ε,k}`.
pub fn sobolev_norm_sq(f: &LatticeField, k: usize) -> f64 {
    let w = f.spec.eps().powi(f.dim() as i32);
    multi_indices(f.dim(), k)
        .iter()
        .map(|a| {
            let g = multi_diff(f, a);
            w * g.values.iter().map(|x| x * x).sum::<f64>()
        })
        .sum()
}

pub fn sobolev_norm(f: &LatticeField, k: usize) -> f64 {
    sobolev_norm_sq(f, k).sqrt()
}

/// `Σ_{|α|≤k} max_x |D^α f(x)|`.
pub fn uniform_norm(f: &LatticeField, k: usize) -> f64 {
    multi_indices(f.dim(), k)
        .iter()
        .map(|a| multi_diff(f, a).max_norm())
        .sum()
}

/// `Λ²_{0,ε}(ξ) = Σ_j 4ε⁻² sin²(ε ξ·a_j / 2)`, with `εξ·a_j = 2πεμ_j`.
pub fn lambda0_sq(spec: &LatticeSpec, mu: &Offset) -> f64 {
    let eps = spec.eps();
    (0..spec.dim())
        .map(|j| {
            let s = (PI * eps * mu[j] as f64).sin();
            4.0 * s * s / (eps * eps)
        })
        .sum()
}

/// `Λ²_ε(ξ) = 1 + Λ²_{0,ε}(ξ)`.
pub fn lambda_symbol(spec: &LatticeSpec, mu: &Offset) -> f64 {
    1.0 + lambda0_sq(spec, mu)
}

/// Continuum counterpart `Λ²(ξ) = 1 + |ξ|²`.
pub fn lambda_continuum(spec: &LatticeSpec, mu: &Offset) -> f64 {
    let xi = spec.wavevector(mu);
    1.0 + dot(&xi, &xi)
}

/// Fourier coefficients of a lattice field, indexed like sites, with
/// components interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    spec: LatticeSpec,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn from_coeffs(spec: &LatticeSpec, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != spec.dof() {
            return Err(Error::Constraint("coefficient count mismatch".into()));
        }
        Ok(Self {
            spec: *spec,
            coeffs,
        })
    }

    /// Coefficient vector at signed frequency `μ`.
    pub fn at(&self, mu: &Offset) -> &[Complex64] {
        let d = self.spec.dim();
        let k = self.spec.frequency_index(mu);
        &self.coeffs[k * d..(k + 1) * d]
    }
}

/// In-place unnormalized multi-dimensional FFT over the site grid.
pub(crate) fn fft_grid(spec: &LatticeSpec, data: &mut [Complex64], comps: usize, inverse: bool) {
    let n = spec.n();
    let d = spec.dim();
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let total = spec.site_count();
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        for start in 0..total {
            // `start` must have zero coordinate along `axis`.
            if (start / stride) % n != 0 {
                continue;
            }
            for c in 0..comps {
                for (t, l) in line.iter_mut().enumerate() {
                    *l = data[(start + t * stride) * comps + c];
                }
                fft.process(&mut line);
                for (t, l) in line.iter().enumerate() {
                    data[(start + t * stride) * comps + c] = *l;
                }
            }
        }
    }
}

/// `f̂(ξ) = ε^d (2π)^{−d/2} Σ_x e^{−iξ·x} f(x)`.
pub fn dft(f: &LatticeField) -> SpectralField {
    let spec = f.spec;
    let d = spec.dim();
    let mut data: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_grid(&spec, &mut data, d, false);
    let scale = spec.eps().powi(d as i32) * (2.0 * PI).powf(-(d as f64) / 2.0);
    data.iter_mut().for_each(|c| *c *= scale);
    SpectralField {
        spec,
        coeffs: data,
    }
}

/// Complex inverse `f(x) = (2π)^{d/2} Σ_ξ e^{iξ·x} f̂(ξ)`.
pub fn idft_complex(s: &SpectralField) -> Vec<Complex64> {
    let spec = s.spec;
    let d = spec.dim();
    let mut data = s.coeffs.clone();
    fft_grid(&spec, &mut data, d, true);
    let scale = (2.0 * PI).powf(d as f64 / 2.0);
    data.iter_mut().for_each(|c| *c *= scale);
    data
}

/// Real part of the inverse transform as a lattice field.
pub fn idft(s: &SpectralField, kind: FieldKind) -> LatticeField {
    let values = idft_complex(s).into_iter().map(|c| c.re).collect();
    LatticeField {
        spec: s.spec,
        kind,
        values,
    }
}

/// `(2π)^d Σ_ξ Λ_ε^{2k}(ξ) |f̂(ξ)|²`, the Fourier form of `‖f‖²_{ε,k}`.
pub fn fourier_sobolev_norm_sq(f: &LatticeField, k: usize) -> f64 {
    let spec = f.spec;
    let d = spec.dim();
    let s = dft(f);
    let mut acc = 0.0;
    for (idx, mu) in spec.frequencies().enumerate() {
        let w = lambda_symbol(&spec, &mu).powi(k as i32);
        let m2: f64 = s.coeffs[idx * d..(idx + 1) * d]
            .iter()
            .map(|c| c.norm_sqr())
            .sum();
        acc += w * m2;
    }
    (2.0 * PI).powi(d as i32) * acc
}

/// `(Q_ε f)(x) = (2π)^{d/2} Σ_ξ e^{ix·ξ} f̂(ξ)` at an arbitrary point.
pub fn trig_interpolate(f: &LatticeField, x: &Vector) -> Vec<Complex64> {
    trig_interpolate_spectral(&dft(f), x)
}

pub fn trig_interpolate_spectral(s: &SpectralField, x: &Vector) -> Vec<Complex64> {
    let spec = s.spec;
    let d = spec.dim();
    let c = spec.fractional(x);
    let scale = (2.0 * PI).powf(d as f64 / 2.0);
    let mut out = vec![Complex64::new(0.0, 0.0); d];
    for (idx, mu) in spec.frequencies().enumerate() {
        let ph: f64 = 2.0 * PI * (0..d).map(|j| mu[j] as f64 * c[j]).sum::<f64>();
        let e = Complex64::from_polar(scale, ph);
        for (comp, o) in out.iter_mut().enumerate() {
            *o += e * s.coeffs[idx * d + comp];
        }
    }
    out
}

/// Real part of [`trig_interpolate`], padded to three components.
pub fn trig_interpolate_real(s: &SpectralField, x: &Vector) -> Vector {
    let mut v = [0.0; 3];
    for (i, c) in trig_interpolate_spectral(s, x).into_iter().enumerate() {
        v[i] = c.re;
    }
    v
}

/// Spectral derivative `∂f/∂x_axis` (Cartesian axis) of a periodic field.
///
/// The unpaired `μ_j = −n/2` modes are dropped so the result stays real.
pub fn spectral_derivative(f: &LatticeField, axis: usize) -> LatticeField {
    let spec = f.spec;
    let d = spec.dim();
    let mut s = dft(f);
    let even = spec.n() % 2 == 0;
    let half = (spec.n() / 2) as i64;
    for k in 0..spec.site_count() {
        let mu = spec.frequency(k);
        let nyquist = even && (0..d).any(|j| mu[j] == -half);
        let xi = spec.wavevector(&mu)[axis];
        let factor = if nyquist {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, xi)
        };
        for c in 0..d {
            s.coeffs[k * d + c] *= factor;
        }
    }
    idft(&s, FieldKind::Generic)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_field(spec: &LatticeSpec, seed: u64) -> LatticeField {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values = (0..spec.dof()).map(|_| rng.random_range(-1.0..1.0)).collect();
        LatticeField::from_values(spec, FieldKind::Generic, values).unwrap()
    }

    #[test]
    fn reciprocal_of_cubic_and_scalar() {
        let b = reciprocal_basis(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        for (j, bj) in b.iter().enumerate() {
            for i in 0..3 {
                let want = if i == j { 2.0 * PI } else { 0.0 };
                assert!((bj[i] - want).abs() < 1e-14);
            }
        }
        let b = reciprocal_basis(&[[2.0, 0.0, 0.0]]).unwrap();
        assert!((b[0][0] - PI).abs() < 1e-15);
    }

    #[test]
    fn reciprocal_of_triangular_basis() {
        let basis = [[1.0, 0.0, 0.0], [0.5, 3f64.sqrt() / 2.0, 0.0]];
        let b = reciprocal_basis(&basis).unwrap();
        for j in 0..2 {
            for k in 0..2 {
                let want = if j == k { 2.0 * PI } else { 0.0 };
                assert!((dot(&basis[j], &b[k]) - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn singular_basis_is_rejected() {
        let err = reciprocal_basis(&[[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::DegenerateLattice(_)));
    }

    #[test]
    fn enumeration_is_distinct_and_centered() {
        for n in [4usize, 5] {
            let spec = LatticeSpec::cubic(2, n).unwrap();
            let mut freqs: Vec<Offset> = spec.frequencies().collect();
            freqs.sort();
            freqs.dedup();
            assert_eq!(freqs.len(), n * n);
            for mu in &freqs {
                for &m in &mu[..2] {
                    // εμ ∈ [-1/2, 1/2)
                    let c = m as f64 / n as f64;
                    assert!((-0.5..0.5).contains(&c));
                }
            }
            let mut sites: Vec<_> = (0..spec.site_count()).map(|s| spec.multi_index(s)).collect();
            sites.dedup();
            assert_eq!(sites.len(), n * n);
        }
    }

    #[test]
    fn translate_identities() {
        let spec = LatticeSpec::cubic(2, 5).unwrap();
        let f = random_field(&spec, 1);
        assert_eq!(translate(&f, &[0, 0, 0]), f);
        assert_eq!(translate(&f, &[5, 0, 0]), f);

        let mut delta = LatticeField::zeros(&spec, FieldKind::Generic);
        delta.at_mut(0)[0] = 1.0;
        let t = translate(&delta, &[1, 0, 0]);
        // (T f)(x) = f(x + εa_1) is 1 where x + εa_1 = 0, i.e. x = -e_1.
        let target = spec.index_of(&[-1, 0, 0]);
        for site in 0..spec.site_count() {
            let want = if site == target { 1.0 } else { 0.0 };
            assert_eq!(t.at(site)[0], want);
        }
    }

    #[test]
    fn differences_on_constants_and_linears() {
        let spec = LatticeSpec::cubic(2, 6).unwrap();
        let c = LatticeField::sample(&spec, FieldKind::Generic, |_| [3.0, -1.0, 0.0]);
        assert!(forward_diff(&c, &[1, 1, 0]).max_norm() < 1e-12);

        // A linear map is exact away from the periodic seam.
        let b = [[0.3, -0.2], [0.1, 0.5]];
        let u = LatticeField::sample(&spec, FieldKind::Generic, |x| {
            [
                b[0][0] * x[0] + b[0][1] * x[1],
                b[1][0] * x[0] + b[1][1] * x[1],
                0.0,
            ]
        });
        let s = [1i64, 1, 0];
        let du = forward_diff(&u, &s);
        for site in 0..spec.site_count() {
            let m = spec.multi_index(site);
            if m[0] < spec.n() - 1 && m[1] < spec.n() - 1 {
                assert!((du.at(site)[0] - (b[0][0] + b[0][1])).abs() < 1e-12);
                assert!((du.at(site)[1] - (b[1][0] + b[1][1])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_of_negated_stencil_is_minus_backward() {
        let spec = LatticeSpec::cubic(3, 4).unwrap();
        let f = random_field(&spec, 7);
        for mu in [[1i64, 0, 0], [1, -1, 2], [0, 2, 1]] {
            let lhs = forward_diff(&f, &[-mu[0], -mu[1], -mu[2]]);
            let rhs = backward_diff(&f, &mu).scaled(-1.0);
            let scale = rhs.max_norm().max(1.0);
            assert!(lhs.sub(&rhs).max_norm() <= 1e-14 * scale);
        }
    }

    #[test]
    fn multi_diff_quadratic_and_commutation() {
        let spec = LatticeSpec::cubic(2, 8).unwrap();
        let eps = spec.eps();
        let u = LatticeField::sample(&spec, FieldKind::Generic, |x| [x[0] * x[0], x[1] * x[1], 0.0]);
        let d1 = multi_diff(&u, &[1, 0, 0]);
        for site in 0..spec.site_count() {
            let m = spec.multi_index(site);
            if m[0] < spec.n() - 1 {
                let x = spec.site_position(site);
                assert!((d1.at(site)[0] - (2.0 * x[0] + eps)).abs() < 1e-12);
            }
        }
        let f = random_field(&spec, 3);
        let a = multi_diff(&multi_diff(&f, &[1, 0, 0]), &[0, 1, 0]);
        let b = multi_diff(&multi_diff(&f, &[0, 1, 0]), &[1, 0, 0]);
        assert!(a.sub(&b).max_norm() < 1e-10);
        assert_eq!(multi_diff(&f, &[0, 0, 0]), f);
    }

    #[test]
    fn dft_constant_and_single_mode() {
        let spec = LatticeSpec::cubic(2, 6).unwrap();
        let c = LatticeField::sample(&spec, FieldKind::Generic, |_| [2.0, -1.0, 0.0]);
        let s = dft(&c);
        let norm = (2.0 * PI).powf(-1.0);
        for mu in spec.frequencies() {
            let v = s.at(&mu);
            if mu == [0, 0, 0] {
                assert!((v[0].re - 2.0 * norm).abs() < 1e-13);
                assert!((v[1].re + norm).abs() < 1e-13);
            } else {
                assert!(v[0].norm() < 1e-13 && v[1].norm() < 1e-13);
            }
        }
    }

    #[test]
    fn cosine_mode_splits_onto_plus_minus_frequency() {
        // cos(ξ0·x) = (e^{iξ0·x} + e^{-iξ0·x})/2, so each of ±ξ0 carries (2π)^{-d/2}/2.
        let spec = LatticeSpec::cubic(1, 8).unwrap();
        let f = LatticeField::sample(&spec, FieldKind::Generic, |x| [(2.0 * PI * 3.0 * x[0]).cos(), 0.0, 0.0]);
        let s = dft(&f);
        let want = 0.5 * (2.0 * PI).powf(-0.5);
        for mu in spec.frequencies() {
            let c = s.at(&mu)[0];
            if mu[0].abs() == 3 {
                assert!((c.re - want).abs() < 1e-14 && c.im.abs() < 1e-14);
            } else {
                assert!(c.norm() < 1e-14);
            }
        }
    }

    #[test]
    fn round_trip_and_conjugate_symmetry() {
        let spec = LatticeSpec::cubic(2, 7).unwrap();
        let f = random_field(&spec, 11);
        let s = dft(&f);
        let back = idft(&s, FieldKind::Generic);
        assert!(back.sub(&f).max_norm() <= 1e-12 * f.max_norm());
        for mu in spec.frequencies() {
            let neg = [-mu[0], -mu[1], -mu[2]];
            for (a, b) in s.at(&mu).iter().zip(s.at(&neg)) {
                assert!((a - b.conj()).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn lambda_at_zero_and_one_d_nyquist() {
        let spec = LatticeSpec::cubic(1, 2).unwrap();
        assert_eq!(lambda_symbol(&spec, &[0, 0, 0]), 1.0);
        // ε = 1/2, μ = -1: 1 + 16 sin²(π/2) = 17.
        assert!((lambda_symbol(&spec, &[-1, 0, 0]) - 17.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_sandwich_is_uniform() {
        let mut worst: f64 = 1.0;
        for n in [4usize, 8, 16, 32] {
            let spec = LatticeSpec::cubic(2, n).unwrap();
            for mu in spec.frequencies() {
                let le = lambda_symbol(&spec, &mu);
                let lc = lambda_continuum(&spec, &mu);
                assert!(le <= lc * (1.0 + 1e-14));
                worst = worst.min(le / lc);
            }
        }
        // sin(x)/x ≥ 2/π on [0, π/2].
        assert!(worst >= 4.0 / (PI * PI) - 1e-12);
    }

    #[test]
    fn interpolation_hits_grid_values() {
        let spec = LatticeSpec::cubic(2, 5).unwrap();
        let f = random_field(&spec, 5);
        let s = dft(&f);
        for site in [0usize, 3, 12, 24] {
            let v = trig_interpolate_spectral(&s, &spec.site_position(site));
            for c in 0..2 {
                assert!((v[c].re - f.at(site)[c]).abs() < 1e-10);
                assert!(v[c].im.abs() < 1e-10);
            }
        }
        let c = LatticeField::sample(&spec, FieldKind::Generic, |_| [1.5, 0.5, 0.0]);
        let v = trig_interpolate(&c, &[0.123, 0.777, 0.0]);
        assert!((v[0].re - 1.5).abs() < 1e-12 && (v[1].re - 0.5).abs() < 1e-12);
    }

    #[test]
    fn interpolation_of_a_mode_off_grid() {
        let spec = LatticeSpec::cubic(1, 8).unwrap();
        let f = LatticeField::sample(&spec, FieldKind::Generic, |x| {
            [(2.0 * PI * 2.0 * x[0]).cos(), 0.0, 0.0]
        });
        let s = dft(&f);
        for x in [0.01, 0.3, 0.61803] {
            let v = trig_interpolate_real(&s, &[x, 0.0, 0.0]);
            assert!((v[0] - (4.0 * PI * x).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_derivative_of_mode() {
        let spec = LatticeSpec::cubic(2, 8).unwrap();
        let f = LatticeField::sample(&spec, FieldKind::Generic, |x| {
            [(2.0 * PI * (x[0] + 2.0 * x[1])).sin(), 0.0, 0.0]
        });
        let g = spectral_derivative(&f, 1);
        for site in 0..spec.site_count() {
            let x = spec.site_position(site);
            let want = 4.0 * PI * (2.0 * PI * (x[0] + 2.0 * x[1])).cos();
            assert!((g.at(site)[0] - want).abs() < 1e-11);
        }
    }

    #[test]
    fn norms_of_simple_fields() {
        let spec = LatticeSpec::cubic(2, 6).unwrap();
        let z = LatticeField::zeros(&spec, FieldKind::Generic);
        assert_eq!(sobolev_norm(&z, 3), 0.0);
        let c = LatticeField::sample(&spec, FieldKind::Generic, |_| [3.0, 4.0, 0.0]);
        assert!((uniform_norm(&c, 0) - 5.0).abs() < 1e-14);
        let mut spike = LatticeField::zeros(&spec, FieldKind::Generic);
        spike.at_mut(7).copy_from_slice(&[0.0, -2.0]);
        assert!((uniform_norm(&spike, 0) - 2.0).abs() < 1e-14);
        let f = random_field(&spec, 2);
        let l2: f64 = spec.eps().powi(2) * f.values().iter().map(|x| x * x).sum::<f64>();
        assert!((sobolev_norm_sq(&f, 0) - l2).abs() < 1e-14);
    }

    #[test]
    fn multi_index_count() {
        assert_eq!(multi_indices(1, 2).len(), 3);
        assert_eq!(multi_indices(2, 2).len(), 6);
        assert_eq!(multi_indices(3, 2).len(), 10);
    }
}
