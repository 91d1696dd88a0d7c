//! Study harness: consistency, convergence, stability and derivative
//! studies driven by a JSON configuration, with CSV and JSON reports.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::atomistic::{force_at, interaction_energy, linearize_at};
use crate::cauchy_born::{fe_energy, fe_energy_atomistic_form, force_cb, force_fe};
use crate::error::{Error, Result};
use crate::hybrid::{
    audit_qc_symbol, circulant_stability_constant, force_qc, kyfan_bound_check, kyfan_random_check,
    linearize_qc, stability_constant, BlendConfig, BlendFunction,
};
use crate::lattice::{sobolev_norm, FieldKind, LatticeField, LatticeSpec, Vector};
use crate::potentials::{check_derivatives, ModelSpec, PotentialModel};
use crate::solver::{solve_atomistic, solve_cb_reference, solve_hybrid, SolveOptions};

pub const CSV_VERSION: &str = "latblend-csv v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Consistency,
    Convergence,
    Stability,
    StabilityConstant,
    DerivativeCheck,
}

impl StudyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StudyKind::Consistency => "consistency",
            StudyKind::Convergence => "convergence",
            StudyKind::Stability => "stability",
            StudyKind::StabilityConstant => "stability_constant",
            StudyKind::DerivativeCheck => "derivative_check",
        }
    }
}

/// One term `coeffs · sin(ξ·x + phase)` with `ξ = Σ_j wave_j b_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub wave: Vec<i64>,
    pub coeffs: Vec<f64>,
    #[serde(default)]
    pub phase: f64,
}

/// A finite Fourier sum, mean-zero by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierSum {
    pub modes: Vec<Mode>,
}

impl FourierSum {
    pub fn default_for(dim: usize) -> Self {
        let modes = match dim {
            1 => vec![Mode { wave: vec![1], coeffs: vec![1.0], phase: 0.0 }],
            2 => vec![
                Mode { wave: vec![1, 0], coeffs: vec![1.0, 0.5], phase: 0.0 },
                Mode { wave: vec![0, 1], coeffs: vec![-0.4, 0.8], phase: 0.3 },
                Mode { wave: vec![1, 1], coeffs: vec![0.3, -0.2], phase: 1.1 },
            ],
            _ => vec![
                Mode { wave: vec![1, 0, 0], coeffs: vec![1.0, 0.3, -0.2], phase: 0.0 },
                Mode { wave: vec![0, 1, 1], coeffs: vec![0.2, 0.6, 0.4], phase: 0.7 },
            ],
        };
        Self { modes }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        for m in &self.modes {
            if m.wave.len() != dim || m.coeffs.len() != dim {
                return Err(Error::Config(format!(
                    "mode {:?} must have {dim} wave and coefficient entries",
                    m.wave
                )));
            }
            if m.wave.iter().all(|&w| w == 0) {
                return Err(Error::Config("zero wave vector would add a mean".into()));
            }
        }
        Ok(())
    }

    /// Samples `amplitude · Σ` on a lattice.
    pub fn sample(&self, spec: &LatticeSpec, kind: FieldKind, amplitude: f64) -> LatticeField {
        let d = spec.dim();
        let waves: Vec<Vector> = self
            .modes
            .iter()
            .map(|m| {
                let mut mu = [0i64; 3];
                mu[..d].copy_from_slice(&m.wave);
                spec.wavevector(&mu)
            })
            .collect();
        LatticeField::sample(spec, kind, |x| {
            let mut v = [0.0; 3];
            for (m, xi) in self.modes.iter().zip(&waves) {
                let s = (xi[0] * x[0] + xi[1] * x[1] + xi[2] * x[2] + m.phase).sin();
                for c in 0..d {
                    v[c] += amplitude * m.coeffs[c] * s;
                }
            }
            v
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DerivativeOptions {
    pub samples: usize,
    pub tol: f64,
    pub step: f64,
}

impl Default for DerivativeOptions {
    fn default() -> Self {
        Self {
            samples: 20,
            tol: 1e-6,
            step: 1e-5,
        }
    }
}

fn default_amplitude() -> f64 {
    1e-2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub study: StudyKind,
    pub dim: usize,
    pub model: ModelSpec,
    /// Lattice basis vectors; the unit cubic lattice when absent.
    #[serde(default)]
    pub basis: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub blend: BlendConfig,
    pub n_list: Vec<usize>,
    /// Manufactured displacement (consistency) or load (convergence).
    #[serde(default)]
    pub load: Option<FourierSum>,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub drop_coarsest: bool,
    /// Continuum reference resolution; `2 · max(n_list)` (at least 64) when absent.
    #[serde(default)]
    pub n_ref: Option<usize>,
    #[serde(default = "yes")]
    pub reference: bool,
    #[serde(default)]
    pub derivatives: DerivativeOptions,
}

fn yes() -> bool {
    true
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(Error::Config(format!("dim must be 1, 2 or 3, got {}", self.dim)));
        }
        if self.n_list.is_empty() {
            return Err(Error::Config("n_list is empty".into()));
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_list must be strictly ascending".into()));
        }
        if self.n_list[0] < 2 {
            return Err(Error::Config("grid sizes must be at least 2".into()));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::Config("amplitude must be finite".into()));
        }
        self.model.build(self.dim).map_err(|e| Error::Config(e.to_string()))?;
        self.blend.build().map_err(|e| Error::Config(e.to_string()))?;
        self.solver.validate()?;
        self.geometry()?;
        self.fourier().validate(self.dim)?;
        Ok(())
    }

    pub fn geometry(&self) -> Result<LatticeSpec> {
        let n = self.n_list[0];
        match &self.basis {
            None => LatticeSpec::cubic(self.dim, n),
            Some(rows) => {
                if rows.len() != self.dim || rows.iter().any(|r| r.len() != self.dim) {
                    return Err(Error::Config(format!("basis must be {0} vectors of length {0}", self.dim)));
                }
                let basis: Vec<Vector> = rows
                    .iter()
                    .map(|r| {
                        let mut v = [0.0; 3];
                        v[..self.dim].copy_from_slice(r);
                        v
                    })
                    .collect();
                LatticeSpec::new(&basis, n).map_err(|e| Error::Config(e.to_string()))
            }
        }
    }

    pub fn fourier(&self) -> FourierSum {
        self.load.clone().unwrap_or_else(|| FourierSum::default_for(self.dim))
    }

    fn fit_sizes(&self) -> &[usize] {
        if self.drop_coarsest && self.n_list.len() > 1 {
            &self.n_list[1..]
        } else {
            &self.n_list
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeFit {
    pub quantity: String,
    pub slope: Option<f64>,
    pub threshold: Option<f64>,
    pub rows_used: Vec<usize>,
    pub floor: f64,
    /// Every fitted row sits at or below `floor`: the gap vanishes identically.
    pub exact: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// `"<="` or `">="`: how `value` must compare with `threshold`.
    pub relation: String,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            relation: "<=".into(),
            pass: value <= threshold,
        }
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            relation: ">=".into(),
            pass: value >= threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyResult {
    pub version: String,
    pub csv_schema: String,
    pub study: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub slopes: Vec<SlopeFit>,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub notes: Vec<String>,
    pub details: Value,
    pub config: StudyConfig,
}

impl StudyResult {
    fn new(cfg: &StudyConfig, columns: &[&str]) -> Self {
        Self {
            version: format!("latblend {}", env!("CARGO_PKG_VERSION")),
            csv_schema: CSV_VERSION.into(),
            study: cfg.study.name().into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            slopes: Vec::new(),
            checks: Vec::new(),
            passed: false,
            notes: Vec::new(),
            details: Value::Null,
            config: cfg.clone(),
        }
    }

    fn column(&self, name: &str) -> Vec<f64> {
        let k = self.columns.iter().position(|c| c == name).expect("known column");
        self.rows.iter().map(|r| r[k]).collect()
    }

    fn finish(&mut self) {
        self.passed = self.slopes.iter().all(|s| s.pass || s.threshold.is_none())
            && self.checks.iter().all(|c| c.pass)
            && (!self.slopes.is_empty() || !self.checks.is_empty());
    }

    pub fn slope(&self, quantity: &str) -> Option<f64> {
        self.slopes.iter().find(|s| s.quantity == quantity).and_then(|s| s.slope)
    }

    /// Versioned CSV: a `#` header comment, column names, one row per `n`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {} study={}", CSV_VERSION, self.study)?;
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .zip(&self.columns)
                .map(|(v, c)| {
                    if c == "n" || c == "samples" {
                        format!("{}", *v as i64)
                    } else {
                        format!("{v:.16e}")
                    }
                })
                .collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Least-squares slope of `log(err)` against `log(ε)`.
pub fn fit_slope(eps: &[f64], err: &[f64]) -> Option<f64> {
    if eps.len() < 3 || eps.len() != err.len() {
        return None;
    }
    let x: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = err.iter().map(|e| e.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    Some(sxy / sxx)
}

fn slope_fit(res: &StudyResult, cfg: &StudyConfig, quantity: &str, threshold: Option<f64>, floor: f64) -> SlopeFit {
    let ns = res.column("n");
    let errs = res.column(quantity);
    let keep: Vec<usize> = (0..ns.len())
        .filter(|&i| cfg.fit_sizes().contains(&(ns[i] as usize)) && errs[i] > floor)
        .collect();
    let eps: Vec<f64> = keep.iter().map(|&i| 1.0 / ns[i]).collect();
    let e: Vec<f64> = keep.iter().map(|&i| errs[i]).collect();
    let slope = fit_slope(&eps, &e);
    let fitted = (0..ns.len()).filter(|&i| cfg.fit_sizes().contains(&(ns[i] as usize))).count();
    let exact = keep.is_empty() && fitted >= 3;
    SlopeFit {
        quantity: quantity.into(),
        slope,
        threshold,
        rows_used: keep.iter().map(|&i| ns[i] as usize).collect(),
        floor,
        exact,
        pass: match (slope, threshold) {
            (Some(s), Some(t)) => s >= t,
            _ => exact,
        },
    }
}

fn domain_as_config(n: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Domain(msg) => Error::Config(format!(
            "amplitude too large at n = {n}: {msg}"
        )),
        other => other,
    }
}

fn lattice(cfg: &StudyConfig, n: usize) -> Result<LatticeSpec> {
    cfg.geometry()?.with_n(n)
}

/// Sup-norm gaps between the force operators for a manufactured `u`.
pub fn run_consistency(cfg: &StudyConfig) -> Result<StudyResult> {
    let model = cfg.model.build(cfg.dim)?;
    let blend = cfg.blend.build()?;
    let fourier = cfg.fourier();
    let mut res = StudyResult::new(cfg, &["n", "eps", "at_cb", "fe_cb", "qc_at", "qc_cb"]);
    let rows: Vec<Vec<f64>> = cfg
        .n_list
        .par_iter()
        .map(|&n| -> Result<Vec<f64>> {
            let spec = lattice(cfg, n)?;
            let u = fourier.sample(&spec, FieldKind::Displacement, cfg.amplitude);
            let wrap = domain_as_config(n);
            let fa = force_at(&u, &model).map_err(&wrap)?;
            let fe = force_fe(&u, &model).map_err(&wrap)?;
            let fc = force_cb(&u, &model).map_err(&wrap)?;
            let fq = force_qc(&u, &model, &blend).map_err(&wrap)?;
            Ok(vec![
                n as f64,
                spec.eps(),
                fa.sub(&fc).max_norm(),
                fe.sub(&fc).max_norm(),
                fq.sub(&fa).max_norm(),
                fq.sub(&fc).max_norm(),
            ])
        })
        .collect::<Result<_>>()?;
    res.rows = rows;
    let floor = 1e-13;
    for q in ["at_cb", "fe_cb", "qc_at", "qc_cb"] {
        res.slopes.push(slope_fit(&res, cfg, q, Some(1.9), floor));
    }
    for s in &res.slopes {
        if s.exact {
            res.notes.push(format!("{} vanishes to within {:e} on every grid", s.quantity, floor));
        }
    }
    res.finish();
    Ok(res)
}

/// Hybrid versus atomistic solutions, plus the continuum reference.
pub fn run_convergence(cfg: &StudyConfig) -> Result<StudyResult> {
    let model = cfg.model.build(cfg.dim)?;
    let blend = cfg.blend.build()?;
    let fourier = cfg.fourier();
    let opts = &cfg.solver;
    let columns: &[&str] = if cfg.reference {
        &["n", "eps", "err_eps2", "ref_at_eps2", "ref_qc_eps2", "iters_at", "iters_qc", "residual_at", "residual_qc"]
    } else {
        &["n", "eps", "err_eps2", "iters_at", "iters_qc", "residual_at", "residual_qc"]
    };
    let mut res = StudyResult::new(cfg, columns);
    let reference = if cfg.reference {
        let finest = *cfg.n_list.last().expect("validated");
        let n_ref = cfg.n_ref.unwrap_or((2 * finest).max(64));
        if n_ref < 2 * finest {
            return Err(Error::Config(format!("n_ref = {n_ref} must be at least twice the finest grid")));
        }
        let spec = lattice(cfg, n_ref)?;
        let f = fourier.sample(&spec, FieldKind::Force, cfg.amplitude);
        Some(solve_cb_reference(&f, &model, opts)?)
    } else {
        None
    };
    let outcomes: Vec<(Vec<f64>, Value)> = cfg
        .n_list
        .par_iter()
        .map(|&n| -> Result<(Vec<f64>, Value)> {
            let spec = lattice(cfg, n)?;
            let f = fourier.sample(&spec, FieldKind::Force, cfg.amplitude);
            let (ya, ra) = solve_atomistic(&f, &model, opts)?;
            if !ra.converged {
                return Err(Error::NonConvergence(format!(
                    "atomistic solve at n = {n}: {}",
                    ra.failure.clone().unwrap_or_default()
                )));
            }
            let (yq, rq) = solve_hybrid(&f, &model, &blend, opts)?;
            if !rq.converged {
                return Err(Error::NonConvergence(format!(
                    "hybrid solve at n = {n}: {}",
                    rq.failure.clone().unwrap_or_default()
                )));
            }
            let mut row = vec![n as f64, spec.eps(), sobolev_norm(&yq.sub(&ya), 2)];
            if let Some(r) = &reference {
                let yr = r.sample(&spec)?;
                row.push(sobolev_norm(&yr.sub(&ya), 2));
                row.push(sobolev_norm(&yr.sub(&yq), 2));
            }
            row.extend([ra.iterations as f64, rq.iterations as f64, ra.final_residual, rq.final_residual]);
            Ok((row, json!({ "n": n, "atomistic": ra, "hybrid": rq })))
        })
        .collect::<Result<_>>()?;
    let (rows, reports): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    res.rows = rows;
    let floor = 100.0 * opts.residual_tol;
    res.slopes.push(slope_fit(&res, cfg, "err_eps2", Some(1.8), floor));
    if let Some(r) = &reference {
        res.slopes.push(slope_fit(&res, cfg, "ref_at_eps2", Some(1.8), floor));
        res.slopes.push(slope_fit(&res, cfg, "ref_qc_eps2", None, floor));
        res.details = json!({ "solves": reports, "reference": { "n_ref": r.n_ref(), "report": r.report } });
    } else {
        res.details = json!({ "solves": reports });
    }
    if res.slope("err_eps2").is_none() {
        res.notes.push("degenerate: fewer than three rows above the fit floor".into());
    }
    res.finish();
    Ok(res)
}

/// Constituent symbol scans, the blended determinant bound and Ky Fan's
/// inequality on random SPD pairs.
pub fn run_stability(cfg: &StudyConfig) -> Result<StudyResult> {
    let model = cfg.model.build(cfg.dim)?;
    let blend = cfg.blend.build()?;
    let geometry = cfg.geometry()?;
    let mut res = StudyResult::new(
        cfg,
        &["n", "eps", "a_at", "a_fe", "min_blended_ratio", "hermitian_defect", "zero_symbol", "convex_defect"],
    );
    let kyfan = kyfan_bound_check(&model, &blend, &geometry, &cfg.n_list)?;
    let random = kyfan_random_check(100, cfg.seed);
    for (i, &n) in cfg.n_list.iter().enumerate() {
        let spec = lattice(cfg, n)?;
        let audit = audit_qc_symbol(&model, &blend, &spec)?;
        let a = &kyfan.atomistic.rows[i];
        let e = &kyfan.finite_element.rows[i];
        let blended = kyfan.rows.get(i).map(|r| r.min_blended_ratio).unwrap_or(f64::NAN);
        res.rows.push(vec![
            n as f64,
            spec.eps(),
            a.min_ratio,
            e.min_ratio,
            blended,
            audit.max_hermitian_defect.max(a.max_hermitian_defect).max(e.max_hermitian_defect),
            audit.max_zero_symbol.max(a.zero_symbol_norm).max(e.zero_symbol_norm),
            audit.max_convex_defect,
        ]);
    }
    res.checks.push(Check::at_least("a_at", kyfan.atomistic.a_estimate, f64::MIN_POSITIVE));
    res.checks.push(Check::at_most("a_at_variation", kyfan.atomistic.variation, kyfan.atomistic.max_variation));
    res.checks.push(Check::at_least("a_fe", kyfan.finite_element.a_estimate, f64::MIN_POSITIVE));
    res.checks.push(Check::at_most(
        "a_fe_variation",
        kyfan.finite_element.variation,
        kyfan.finite_element.max_variation,
    ));
    if kyfan.attempted {
        res.checks.push(Check::at_least(
            "min_blended_ratio",
            kyfan.min_blended_ratio,
            kyfan.bound_factor * kyfan.bound,
        ));
    } else {
        res.notes.push("constituent scan failed; blended check not attempted".into());
    }
    let herm = res.column("hermitian_defect").into_iter().fold(0.0, f64::max);
    let zero = res.column("zero_symbol").into_iter().fold(0.0, f64::max);
    let convex = res.column("convex_defect").into_iter().fold(0.0, f64::max);
    res.checks.push(Check::at_most("hermitian_defect", herm, 1e-10));
    res.checks.push(Check::at_most("zero_symbol", zero, 1e-12));
    res.checks.push(Check::at_most("convex_defect", convex, 1e-12));
    res.checks.push(Check::at_least("kyfan_random_slack", random.slack, -1e-12));
    res.details = json!({ "kyfan": kyfan, "kyfan_random_worst": random });
    res.finish();
    Ok(res)
}

fn dense_cap(dim: usize) -> usize {
    match dim {
        1 => 64,
        2 => 32,
        _ => 8,
    }
}

/// `C_est(n)` from the dense generalized eigenproblem at the rest state.
pub fn run_stability_constant(cfg: &StudyConfig) -> Result<StudyResult> {
    let model = cfg.model.build(cfg.dim)?;
    let blend = cfg.blend.build()?;
    let cap = dense_cap(cfg.dim);
    if let Some(&n) = cfg.n_list.iter().find(|&&n| n > cap) {
        return Err(Error::Config(format!(
            "n = {n} exceeds the dense-solve cap {cap} for d = {}",
            cfg.dim
        )));
    }
    let mut res = StudyResult::new(cfg, &["n", "eps", "c_est", "c_oracle", "oracle_rel_gap"]);
    for &n in &cfg.n_list {
        let spec = lattice(cfg, n)?;
        let op = linearize_qc(&LatticeField::zeros(&spec, FieldKind::Displacement), &model, &blend)?;
        let c = stability_constant(&op)?;
        let uniform = matches!(blend, BlendFunction::Constant(_));
        let (oracle, gap) = if uniform {
            let o = circulant_stability_constant(&op)?;
            (o, (c.c_est - o).abs() / o)
        } else {
            (f64::NAN, f64::NAN)
        };
        res.rows.push(vec![n as f64, spec.eps(), c.c_est, oracle, gap]);
    }
    let cs = res.column("c_est");
    let lo = cs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = cs.iter().copied().fold(0.0, f64::max);
    res.checks.push(Check::at_most("c_est_max_over_min", hi / lo, 2.0));
    let gaps: Vec<f64> = res.column("oracle_rel_gap").into_iter().filter(|g| g.is_finite()).collect();
    if !gaps.is_empty() {
        let worst = gaps.iter().copied().fold(0.0, f64::max);
        res.checks.push(Check::at_most("circulant_oracle_gap", worst, 1e-8));
    }
    res.finish();
    Ok(res)
}

fn random_field(spec: &LatticeSpec, seed: u64, amp: f64) -> LatticeField {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let values = (0..spec.dof()).map(|_| rng.random_range(-amp..amp)).collect();
    let mut f = LatticeField::from_values(spec, FieldKind::Displacement, values).expect("sized");
    f.project_mean_zero();
    f
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Energy/force/Hessian consistency for one model on the first grid size.
pub fn derivative_audit(model: &PotentialModel, spec: &LatticeSpec, seed: u64, step: f64) -> Result<Value> {
    let u = random_field(spec, seed, 2e-3 * spec.eps());
    let w = random_field(spec, seed + 1, 1.0);
    let scale = spec.eps().powi(-(spec.dim() as i32));
    let forces = force_at(&u, model)?;
    let fmax = forces.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut force_err: f64 = 0.0;
    for idx in 0..spec.dof() {
        let h = step * spec.eps();
        let mut up = u.clone();
        up.values_mut()[idx] += h;
        let mut um = u.clone();
        um.values_mut()[idx] -= h;
        let fd = scale * (interaction_energy(&up, model)? - interaction_energy(&um, model)?) / (2.0 * h);
        force_err = force_err.max((fd - forces.values()[idx]).abs() / fmax.max(1e-300));
    }
    let op = linearize_at(&u, model)?;
    let hw = op.apply(&w)?;
    let t = step;
    let fp = force_at(&u.add(&w.scaled(t)), model)?;
    let fm = force_at(&u.sub(&w.scaled(t)), model)?;
    let fd = fp.sub(&fm).scaled(0.5 / t);
    let hess_err = fd.sub(&hw).max_norm() / hw.max_norm().max(1e-300);
    let fe_a = fe_energy(&u, model)?;
    let fe_b = fe_energy_atomistic_form(&u, model)?;
    Ok(json!({
        "n": spec.n(),
        "force_vs_energy": force_err,
        "hessian_vs_force": hess_err,
        "fe_energy_identity": rel(fe_b, fe_a),
    }))
}

pub fn run_derivative_check(cfg: &StudyConfig) -> Result<StudyResult> {
    let model = cfg.model.build(cfg.dim)?;
    let opts = &cfg.derivatives;
    if opts.samples < 1 {
        return Err(Error::Config("derivatives.samples must be at least 1".into()));
    }
    let report = check_derivatives(&model, opts.samples, opts.tol, opts.step, cfg.seed);
    let mut res = StudyResult::new(
        cfg,
        &["n", "samples", "grad_discrepancy", "hess_discrepancy", "force_vs_energy", "hessian_vs_force", "fe_energy_identity"],
    );
    let mut audits = Vec::new();
    for &n in &cfg.n_list {
        let spec = lattice(cfg, n)?;
        let a = derivative_audit(&model, &spec, cfg.seed, opts.step)?;
        res.rows.push(vec![
            n as f64,
            opts.samples as f64,
            report.max_grad_discrepancy,
            report.max_hess_discrepancy,
            a["force_vs_energy"].as_f64().unwrap_or(f64::NAN),
            a["hessian_vs_force"].as_f64().unwrap_or(f64::NAN),
            a["fe_energy_identity"].as_f64().unwrap_or(f64::NAN),
        ]);
        audits.push(a);
    }
    let worst = |c: &str| res.column(c).into_iter().fold(0.0, f64::max);
    let checks = vec![
        Check::at_most("grad_discrepancy", report.max_grad_discrepancy, opts.tol),
        Check::at_most("hess_discrepancy", report.max_hess_discrepancy, opts.tol),
        Check::at_most("force_vs_energy", worst("force_vs_energy"), opts.tol),
        Check::at_most("hessian_vs_force", worst("hessian_vs_force"), opts.tol),
        Check::at_most("fe_energy_identity", worst("fe_energy_identity"), 1e-12),
    ];
    res.checks = checks;
    res.details = json!({ "potential": report, "lattice": audits });
    res.finish();
    Ok(res)
}

pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult> {
    match cfg.study {
        StudyKind::Consistency => run_consistency(cfg),
        StudyKind::Convergence => run_convergence(cfg),
        StudyKind::Stability => run_stability(cfg),
        StudyKind::StabilityConstant => run_stability_constant(cfg),
        StudyKind::DerivativeCheck => run_derivative_check(cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let eps = [0.125, 0.0625, 0.03125];
        let err: Vec<f64> = eps.iter().map(|e: &f64| 3.0 * e * e).collect();
        assert!((fit_slope(&eps, &err).unwrap() - 2.0).abs() < 1e-12);
        assert!(fit_slope(&eps[..2], &err[..2]).is_none());
    }

    #[test]
    fn fourier_sum_is_mean_zero() {
        for d in 1..=3 {
            let spec = LatticeSpec::cubic(d, 6).unwrap();
            let f = FourierSum::default_for(d).sample(&spec, FieldKind::Force, 1.0);
            assert!(f.is_mean_zero(1e-12));
        }
    }

    #[test]
    fn config_validation() {
        let bad = r#"{"study":"consistency","dim":1,"model":{"name":"morse"},"n_list":[16,8]}"#;
        assert!(matches!(StudyConfig::from_json(bad), Err(Error::Config(_))));
        let unknown = r#"{"study":"consistency","dim":1,"model":{"name":"nope"},"n_list":[8]}"#;
        assert!(matches!(StudyConfig::from_json(unknown), Err(Error::Config(_))));
        let ok = r#"{"study":"consistency","dim":1,"model":{"name":"morse"},"n_list":[8,16]}"#;
        assert!(StudyConfig::from_json(ok).is_ok());
    }

    #[test]
    fn zero_displacement_gaps_vanish() {
        let cfg = StudyConfig::from_json(
            r#"{"study":"consistency","dim":1,"model":{"name":"morse"},"n_list":[8,16,32],"amplitude":0.0}"#,
        )
        .unwrap();
        let r = run_consistency(&cfg).unwrap();
        assert!(r.rows.iter().all(|row| row[2..].iter().all(|&v| v == 0.0)));
        assert!(r.slopes.iter().all(|s| s.slope.is_none() && s.exact));
    }
}
