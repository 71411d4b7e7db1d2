use approx::assert_relative_eq;
use geoflow_core::curve::{frenet, geometry, ramp_height, resample_arclength, DiscreteCurve};
use geoflow_core::generators;
use geoflow_core::manifold::{sphere_to_stereo, FPolicy, MetricModel, Vector};
use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

fn e(i: usize) -> Vector {
    let mut v = Vector::zeros();
    v[i] = 1.0;
    v
}

#[test]
fn conformal_inner_product_scales_by_exp_f() {
    let m = MetricModel::conformal(MetricModel::euclidean(2).unwrap(), FPolicy::Linear { rate: 2.0 }).unwrap();
    let p = Vector::new(0.3, -0.2, 0.0, 0.0);
    assert_relative_eq!(m.metric_at(&p, 0.0).unwrap(), MetricModel::euclidean(2).unwrap().metric_at(&p, 0.0).unwrap(), epsilon = 1e-15);
    assert_relative_eq!(m.inner(&p, &e(0), &e(0), 1.0).unwrap(), 2.0f64.exp(), max_relative = 1e-12);
    assert_relative_eq!(m.inner(&p, &e(0), &e(1), 1.0).unwrap(), 0.0, epsilon = 1e-15);
}

#[test]
fn christoffels_match_finite_differences() {
    let models = [
        MetricModel::sphere3(),
        MetricModel::hyperbolic3(),
        MetricModel::product(MetricModel::sphere(2).unwrap(), 0.7).unwrap(),
        MetricModel::warped_circle(MetricModel::sphere(2).unwrap(), 1.0, FPolicy::Linear { rate: 0.5 }).unwrap(),
    ];
    let p = Vector::new(0.2, -0.3, 0.1, 0.0);
    for m in &models {
        let a = m.christoffel(&p, 0.4).unwrap();
        let f = m.christoffel_fd(&p, 0.4).unwrap();
        for k in 0..4 {
            assert!((a[k] - f[k]).amax() < 1e-6, "{}: Γ^{k} differs by {:e}", m.family_name(), (a[k] - f[k]).amax());
        }
    }
}

#[test]
fn space_form_curvature_operator() {
    for (m, big_k) in [(MetricModel::sphere3(), 1.0), (MetricModel::hyperbolic3(), -1.0)] {
        let p = Vector::new(0.1, 0.25, -0.2, 0.0);
        let g = m.metric_at(&p, 0.0).unwrap();
        let c = 1.0 / g[(0, 0)].sqrt();
        let (t, n) = (e(0) * c, e(1) * c);
        let rt = m.riemann_apply(&p, &t, &n, &t, 0.0).unwrap();
        let rn = m.riemann_apply(&p, &t, &n, &n, 0.0).unwrap();
        assert!((rt - n * big_k).amax() < 1e-9);
        assert!((rn + t * big_k).amax() < 1e-9);
        assert_relative_eq!(m.sectional(&p, &e(0), &e(2), 0.0).unwrap(), big_k, epsilon = 1e-9);
        // the analytic operator agrees with the one built from differentiated Christoffels
        let fd = m.riemann_fd(&p, &t, &n, &t, 0.0).unwrap();
        assert!((fd - rt).amax() < 1e-5);
    }
}

#[test]
fn first_bianchi_identity() {
    let m = MetricModel::product(MetricModel::sphere(2).unwrap(), 1.3).unwrap();
    let p = Vector::new(0.4, 0.1, 2.0, 0.0);
    let (x, y, z) = (Vector::new(1.0, 0.2, 0.3, 0.0), Vector::new(-0.5, 1.0, 0.7, 0.0), Vector::new(0.3, 0.3, -1.0, 0.0));
    let s = m.riemann_apply(&p, &x, &y, &z, 0.0).unwrap() + m.riemann_apply(&p, &y, &z, &x, 0.0).unwrap() + m.riemann_apply(&p, &z, &x, &y, 0.0).unwrap();
    assert!(s.amax() < 1e-9, "{s}");
}

#[test]
fn metric_compatibility() {
    // ∂_k g_ij = g_lj Γ^l_ki + g_il Γ^l_kj
    let m = MetricModel::hyperbolic3();
    let p = Vector::new(0.3, -0.1, 0.2, 0.0);
    let gam = m.christoffel(&p, 0.0).unwrap();
    let g = m.metric_at(&p, 0.0).unwrap();
    let h = 1e-6;
    for k in 0..3 {
        let dg = (m.metric_at(&(p + e(k) * h), 0.0).unwrap() - m.metric_at(&(p - e(k) * h), 0.0).unwrap()) / (2.0 * h);
        for i in 0..3 {
            for j in 0..3 {
                let rhs: f64 = (0..3).map(|l| g[(l, j)] * gam[l][(k, i)] + g[(i, l)] * gam[l][(k, j)]).sum();
                assert!((dg[(i, j)] - rhs).abs() < 1e-7);
            }
        }
    }
}

#[test]
fn circle_curvature_and_length() {
    let c = generators::circle(512, 2, 1.0).unwrap();
    let g = geometry(&c, &MetricModel::euclidean(2).unwrap(), 0.0, 3).unwrap();
    assert!(g.curvature.iter().all(|k| (k - 1.0).abs() < 1e-3));
    assert_relative_eq!(g.length, TAU, epsilon = 1e-4);
}

#[test]
fn ellipse_curvature_extremes() {
    let c = generators::ellipse(1024, 2, 2.0, 1.0).unwrap();
    let g = geometry(&c, &MetricModel::euclidean(2).unwrap(), 0.0, 3).unwrap();
    let max = g.curvature.iter().cloned().fold(f64::MIN, f64::max);
    let min = g.curvature.iter().cloned().fold(f64::MAX, f64::min);
    assert!((max - 2.0).abs() < 1e-2, "max k {max}");
    assert!((min - 0.25).abs() < 1e-2, "min k {min}");
}

#[test]
fn helix_frenet_invariants() {
    // (cos u, sin u, u) closes up under a vertical screw shift of 2π.
    let c = DiscreteCurve::from_fn(512, 3, Vector::new(0.0, 0.0, TAU, 0.0), |u| Vector::new(u.cos(), u.sin(), u, 0.0)).unwrap();
    let g = geometry(&c, &MetricModel::euclidean(3).unwrap(), 0.0, 3).unwrap();
    let fr = frenet(&g).unwrap();
    for i in 0..g.len() {
        assert!((g.curvature[i] - 0.5).abs() < 1e-2);
        assert!((fr.torsion[i].unwrap().abs() - 0.5).abs() < 1e-2);
        let (t, n, b) = (g.tangent[i], fr.normal[i], fr.binormal[i]);
        for (x, y, want) in [(t, t, 1.0), (n, n, 1.0), (b, b, 1.0), (t, n, 0.0), (t, b, 0.0), (n, b, 0.0)] {
            assert!((g.inner_at(i, &x, &y) - want).abs() < 1e-9);
        }
    }
}

#[test]
fn planar_curve_has_no_torsion() {
    let c = generators::ellipse(256, 3, 1.5, 1.0).unwrap();
    let g = geometry(&c, &MetricModel::euclidean(3).unwrap(), 0.0, 3).unwrap();
    let fr = frenet(&g).unwrap();
    assert!(fr.torsion.iter().flatten().all(|tau| tau.abs() < 1e-9));
}

#[test]
fn great_circle_is_geodesic() {
    let c = DiscreteCurve::from_fn(256, 3, Vector::zeros(), |u| sphere_to_stereo([u.cos(), 0.0, u.sin(), 0.0])).unwrap();
    let g = geometry(&c, &MetricModel::sphere3(), 0.0, 3).unwrap();
    assert!(g.max_k() < 1e-3);
    assert_relative_eq!(g.length, TAU, epsilon = 1e-4);
}

#[test]
fn resample_equalises_spacing() {
    let m = MetricModel::euclidean(2).unwrap();
    let n = 512;
    let c = DiscreteCurve::from_fn(n, 2, Vector::zeros(), |u| {
        let th = u + 0.3 * u.sin();
        Vector::new(th.cos(), th.sin(), 0.0, 0.0)
    })
    .unwrap();
    let before = geometry(&c, &m, 0.0, 3).unwrap();
    let r = resample_arclength(&c, &m, 0.0).unwrap();
    let after = geometry(&r, &m, 0.0, 3).unwrap();
    let (lo, hi) = after.ds.iter().fold((f64::MAX, f64::MIN), |(a, b), d| (a.min(*d), b.max(*d)));
    assert!((hi - lo) / (hi + lo) * 2.0 < 1e-2);
    assert!((after.length - before.length).abs() < 1e-6);
    let dk = (after.bending_energy - before.bending_energy).abs();
    assert!(dk < 1e-4, "∫k² moved by {dk:e}");
}

#[test]
fn ramp_height_examples() {
    let torus = MetricModel::product(MetricModel::circle(1.0).unwrap(), 1.0).unwrap();
    let shift = Vector::new(TAU, TAU, 0.0, 0.0);
    let diag = DiscreteCurve::from_fn(256, 2, shift, |u| Vector::new(u, u, 0.0, 0.0)).unwrap();
    let g = geometry(&diag, &torus, 0.0, 3).unwrap();
    let r = ramp_height(&diag, &g, &torus).unwrap();
    assert!(r.is_ramp);
    assert!(r.heights.iter().all(|h| (h - FRAC_1_SQRT_2).abs() < 1e-9));

    let vertical = DiscreteCurve::from_fn(256, 2, Vector::new(0.0, TAU, 0.0, 0.0), |u| Vector::new(1.0, u, 0.0, 0.0)).unwrap();
    let g = geometry(&vertical, &torus, 0.0, 3).unwrap();
    let r = ramp_height(&vertical, &g, &torus).unwrap();
    assert!(r.heights.iter().all(|h| (h - 1.0).abs() < 1e-9));

    let flat_fiber = DiscreteCurve::from_fn(256, 2, Vector::new(TAU, 0.0, 0.0, 0.0), |u| Vector::new(u, PI, 0.0, 0.0)).unwrap();
    let g = geometry(&flat_fiber, &torus, 0.0, 3).unwrap();
    assert!(!ramp_height(&flat_fiber, &g, &torus).unwrap().is_ramp);
}
