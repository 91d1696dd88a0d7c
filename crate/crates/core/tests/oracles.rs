use std::collections::HashSet;

use latblend::atomistic::{force_at, interaction_energy, linearize_at};
use latblend::cauchy_born::{dwcb, fe_energy, force_fe, wcb};
use latblend::lattice::{FieldKind, LatticeField, LatticeSpec, Offset, Vector};
use latblend::potentials::{builtin_models, PotentialModel};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_u(spec: &LatticeSpec, seed: u64, amp: f64) -> LatticeField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals = (0..spec.dof()).map(|_| rng.random_range(-amp..amp)).collect();
    let mut u = LatticeField::from_values(spec, FieldKind::Displacement, vals).unwrap();
    u.project_mean_zero();
    u
}

fn lex_positive(o: &Offset) -> bool {
    o.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0)
}

fn sub(a: &Offset, b: &Offset) -> Offset {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &Vector, b: &Vector) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Energy by enumerating unordered bonds and unordered triangles.
fn brute_force_energy(u: &LatticeField, model: &PotentialModel) -> f64 {
    let spec = *u.spec();
    let d = spec.dim();
    let reach = model.reach();
    let mut offsets = Vec::new();
    let r = 2 * reach;
    for i in -r..=r {
        for j in if d > 1 { -r..=r } else { 0..=0 } {
            for k in if d > 2 { -r..=r } else { 0..=0 } {
                let o = [i, j, k];
                if lex_positive(&o) {
                    offsets.push(o);
                }
            }
        }
    }
    let bond = |site: usize, from: &Offset, to: &Offset| -> Vector {
        let a = u.vector(spec.shift(site, from));
        let b = u.vector(spec.shift(site, to));
        let s = spec.lattice_vector(&sub(to, from));
        let n = spec.n() as f64;
        [s[0] + (b[0] - a[0]) * n, s[1] + (b[1] - a[1]) * n, s[2] + (b[2] - a[2]) * n]
    };
    let mut total = 0.0;
    for site in 0..spec.site_count() {
        let zero = [0; 3];
        for term in &model.pair_terms {
            let set: HashSet<Offset> = term.stencils.iter().copied().collect();
            for a in &offsets {
                let neg = [-a[0], -a[1], -a[2]];
                for (from, to, s) in [(&zero, a, *a), (a, &zero, neg)] {
                    if set.contains(&s) {
                        let rv = bond(site, from, to);
                        let sv = spec.lattice_vector(&s);
                        total += term.potential.eval(dot(&rv, &rv), dot(&sv, &sv)).value;
                    }
                }
            }
        }
        for term in &model.triple_terms {
            let set: HashSet<(Offset, Offset)> = term.stencils.iter().copied().collect();
            for (ia, a) in offsets.iter().enumerate() {
                for b in &offsets[ia + 1..] {
                    let p = [zero, *a, *b];
                    for (i, j, k) in [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)] {
                        let s1 = sub(&p[j], &p[i]);
                        let s2 = sub(&p[k], &p[i]);
                        if !set.contains(&(s1, s2)) {
                            continue;
                        }
                        let r1 = bond(site, &p[i], &p[j]);
                        let r2 = bond(site, &p[i], &p[k]);
                        let (c1, c2) = (spec.lattice_vector(&s1), spec.lattice_vector(&s2));
                        let q = [dot(&r1, &r1), dot(&r2, &r2), dot(&r1, &r2)];
                        let q_ref = [dot(&c1, &c1), dot(&c2, &c2), dot(&c1, &c2)];
                        total += term.potential.eval(q, q_ref).value / 6.0;
                    }
                }
            }
        }
    }
    total * spec.eps().powi(d as i32)
}

#[test]
fn energy_matches_triangle_enumeration() {
    for d in 1..=3 {
        let n = if d == 3 { 4 } else { 6 };
        let spec = LatticeSpec::cubic(d, n).unwrap();
        for model in builtin_models(d).unwrap() {
            let u = random_u(&spec, 3 + d as u64, 0.02 * spec.eps());
            let e = interaction_energy(&u, &model).unwrap();
            let oracle = brute_force_energy(&u, &model);
            assert!((e - oracle).abs() <= 1e-12 * oracle.abs(), "{} d={d}: {e} vs {oracle}", model.name);
        }
    }
}

#[test]
fn dense_hessian_matches_force_differences() {
    for model in builtin_models(1).unwrap() {
        let spec = LatticeSpec::cubic(1, 8).unwrap();
        let u = random_u(&spec, 5, 0.03 * spec.eps());
        let dense = linearize_at(&u, &model).unwrap().to_dense();
        let h = 1e-6 * spec.eps();
        let mut worst: f64 = 0.0;
        for j in 0..spec.dof() {
            let mut up = u.clone();
            up.values_mut()[j] += h;
            let mut um = u.clone();
            um.values_mut()[j] -= h;
            let fp = force_at(&up, &model).unwrap();
            let fm = force_at(&um, &model).unwrap();
            for i in 0..spec.dof() {
                let fd = (fp.values()[i] - fm.values()[i]) / (2.0 * h);
                worst = worst.max((fd - dense[(i, j)]).abs() / dense.abs().max());
            }
        }
        assert!(worst < 1e-6, "{}: {worst}", model.name);
        assert!((&dense - dense.transpose()).abs().max() <= 1e-9 * dense.abs().max());
    }
}

#[test]
fn stencil_coefficients_satisfy_transpose_relation() {
    for d in 1..=2 {
        let spec = LatticeSpec::cubic(d, 6).unwrap();
        for model in builtin_models(d).unwrap() {
            let u = random_u(&spec, 9, 0.02 * spec.eps());
            let op = linearize_at(&u, &model).unwrap();
            let scale = op.scale();
            for site in 0..spec.site_count() {
                for mu in op.offsets() {
                    let neg = [-mu[0], -mu[1], -mu[2]];
                    let a = op.coefficient(site, mu).unwrap();
                    let b = op.coefficient(spec.shift(site, mu), &neg).unwrap();
                    assert!((a.transpose() - b).abs().max() <= 1e-13 * scale, "{} d={d}", model.name);
                }
            }
        }
    }
}

#[test]
fn energy_decreases_along_negative_force() {
    for d in 1..=2 {
        let spec = LatticeSpec::cubic(d, 8).unwrap();
        for model in builtin_models(d).unwrap() {
            let u = random_u(&spec, 21, 0.03 * spec.eps());
            let f = force_at(&u, &model).unwrap();
            let e0 = interaction_energy(&u, &model).unwrap();
            let t = 1e-3 * spec.eps().powi(2) / model.reach() as f64;
            let e1 = interaction_energy(&u.sub(&f.scaled(t)), &model).unwrap();
            assert!(e1 < e0, "{} d={d}", model.name);
        }
    }
}

#[test]
fn rigid_translations_change_nothing() {
    for d in 1..=3 {
        let spec = LatticeSpec::cubic(d, 4).unwrap();
        for model in builtin_models(d).unwrap() {
            let u = random_u(&spec, 2, 0.02 * spec.eps());
            let shifted = LatticeField::sample(&spec, FieldKind::Displacement, |_| [0.3, -0.7, 0.45]);
            let v = u.add(&shifted);
            let e = interaction_energy(&u, &model).unwrap();
            assert!((e - interaction_energy(&v, &model).unwrap()).abs() <= 1e-12 * e.abs().max(1.0));
            let gap = force_at(&u, &model).unwrap().sub(&force_at(&v, &model).unwrap()).max_norm();
            assert!(gap <= 1e-9, "{} d={d}: {gap}", model.name);
        }
    }
}

#[test]
fn fe_force_is_gradient_of_fe_energy() {
    for d in 1..=2 {
        let spec = LatticeSpec::cubic(d, 4).unwrap();
        for model in builtin_models(d).unwrap() {
            let u = random_u(&spec, 13, 0.02 * spec.eps());
            let f = force_fe(&u, &model).unwrap();
            let scale = spec.eps().powi(-(d as i32));
            let h = 1e-6 * spec.eps();
            for j in 0..spec.dof() {
                let mut up = u.clone();
                up.values_mut()[j] += h;
                let mut um = u.clone();
                um.values_mut()[j] -= h;
                let fd = scale * (fe_energy(&up, &model).unwrap() - fe_energy(&um, &model).unwrap()) / (2.0 * h);
                assert!((fd - f.values()[j]).abs() <= 1e-6 * f.max_norm().max(1.0), "{} d={d}", model.name);
            }
        }
    }
}

#[test]
fn cauchy_born_stress_is_density_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for d in 1..=3 {
        let geometry = LatticeSpec::cubic(d, 4).unwrap();
        for model in builtin_models(d).unwrap() {
            let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.03..0.03));
            let stress = dwcb(&a, &model, &geometry).unwrap();
            let h = 1e-6;
            for i in 0..d {
                for j in 0..d {
                    let mut ap = a.clone();
                    ap[(i, j)] += h;
                    let mut am = a.clone();
                    am[(i, j)] -= h;
                    let fd = (wcb(&ap, &model, &geometry).unwrap() - wcb(&am, &model, &geometry).unwrap()) / (2.0 * h);
                    assert!((fd - stress[(i, j)]).abs() <= 1e-6 * stress.abs().max().max(1.0), "{} d={d}", model.name);
                }
            }
        }
    }
}

/// On a homogeneous state the lattice energy per unit volume is
/// `W_CB(A)`; with periodic cells a zero gradient is the only affine state.
#[test]
fn energy_density_at_rest_matches_cauchy_born() {
    for d in 1..=3 {
        let spec = LatticeSpec::cubic(d, 4).unwrap();
        for model in builtin_models(d).unwrap() {
            let zero = LatticeField::zeros(&spec, FieldKind::Displacement);
            let w = wcb(&DMatrix::zeros(d, d), &model, &spec).unwrap();
            let e = interaction_energy(&zero, &model).unwrap();
            let fe = fe_energy(&zero, &model).unwrap();
            assert!((e - w).abs() <= 1e-12 * w.abs().max(1.0), "{} d={d}", model.name);
            assert!((fe - w).abs() <= 1e-12 * w.abs().max(1.0), "{} d={d}", model.name);
        }
    }
}
