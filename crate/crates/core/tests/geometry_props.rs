use std::f64::consts::PI;

use caliper::geometry::{
    conic_to_geometric, fit_ellipse, geometric_to_conic, measure, ramanujan_perimeter, sample_points, Ellipse,
};
use proptest::prelude::*;

/// Arc length `∫₀^{2π} √(a² sin² t + b² cos² t) dt` by adaptive Simpson.
fn arc_length(a: f64, b: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, l: f64, r: f64, fl: f64, fm: f64, fr: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (l + r);
        let (lm, rm) = (0.5 * (l + m), 0.5 * (m + r));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - l) / 6.0 * (fl + 4.0 * flm + fm);
        let right = (r - m) / 6.0 * (fm + 4.0 * frm + fr);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        simpson(f, l, m, fl, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, r, fm, frm, fr, right, tol / 2.0, depth - 1)
    }
    let f = |t: f64| ((a * t.sin()).powi(2) + (b * t.cos()).powi(2)).sqrt();
    let (l, r) = (0.0, PI / 2.0);
    let (fl, fm, fr) = (f(l), f(0.25 * PI), f(r));
    let whole = (r - l) / 6.0 * (fl + 4.0 * fm + fr);
    4.0 * simpson(&f, l, r, fl, fm, fr, whole, 1e-15 * a, 40)
}

fn angle_diff(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

fn assert_close(fit: &Ellipse, truth: &Ellipse, rel: f64) {
    let scale = truth.a();
    assert!((fit.cx() - truth.cx()).abs() <= rel * truth.cx().abs().max(scale), "cx {fit:?} vs {truth:?}");
    assert!((fit.cy() - truth.cy()).abs() <= rel * truth.cy().abs().max(scale), "cy {fit:?} vs {truth:?}");
    assert!((fit.a() - truth.a()).abs() <= rel * truth.a(), "a {fit:?} vs {truth:?}");
    assert!((fit.b() - truth.b()).abs() <= rel * truth.b(), "b {fit:?} vs {truth:?}");
    if truth.a() != truth.b() {
        assert!(angle_diff(fit.alpha(), truth.alpha(), PI) <= rel.max(1e-9) * 10.0, "alpha {fit:?} vs {truth:?}");
    }
}

fn ellipse_strategy() -> impl Strategy<Value = Ellipse> {
    (-500.0..500.0f64, -500.0..500.0f64, 1.0..200.0f64, 1.0..3.0f64, 0.0..PI)
        .prop_map(|(cx, cy, a, r, al)| Ellipse::new(cx, cy, a, a / r, al).unwrap())
}

proptest! {
    #[test]
    fn fit_recovers_sampled_ellipse(e in ellipse_strategy(), n in 8usize..64) {
        let fit = fit_ellipse(&sample_points(&e, n)).unwrap();
        assert_close(&fit, &e, 1e-6);
    }

    #[test]
    fn fit_is_similarity_equivariant(e in ellipse_strategy(), dx in -50.0..50.0f64, dy in -50.0..50.0f64,
                                     theta in 0.0..(2.0 * PI), k in 0.2..5.0f64) {
        let pts = sample_points(&e, 24);
        let base = fit_ellipse(&pts).unwrap();
        let (s, c) = theta.sin_cos();
        let moved: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (c * x - s * y + dx, s * x + c * y + dy)).collect();
        let fm = fit_ellipse(&moved).unwrap();
        let (ecx, ecy) = (c * base.cx() - s * base.cy() + dx, s * base.cx() + c * base.cy() + dy);
        let tol = 1e-9 * (1.0 + base.cx().abs() + base.cy().abs() + base.a());
        prop_assert!((fm.cx() - ecx).abs() < tol && (fm.cy() - ecy).abs() < tol);
        prop_assert!((fm.a() - base.a()).abs() < tol && (fm.b() - base.b()).abs() < tol);
        if base.a() / base.b() > 1.0 + 1e-6 {
            prop_assert!(angle_diff(fm.alpha(), base.alpha() + theta, PI) < 1e-7);
        }
        let scaled: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (k * x, k * y)).collect();
        let fs = fit_ellipse(&scaled).unwrap();
        let tol = 1e-9 * k * (1.0 + base.cx().abs() + base.cy().abs() + base.a());
        prop_assert!((fs.cx() - k * base.cx()).abs() < tol && (fs.cy() - k * base.cy()).abs() < tol);
        prop_assert!((fs.a() - k * base.a()).abs() < tol && (fs.b() - k * base.b()).abs() < tol);
    }

    #[test]
    fn conic_roundtrip(cx in -100.0..100.0f64, cy in -100.0..100.0f64, a in 0.5..100.0f64, r in 1.0..10.0f64, al in 0.0..PI) {
        let e = Ellipse::new(cx, cy, a, a / r, al).unwrap();
        let back = conic_to_geometric(&geometric_to_conic(&e)).unwrap();
        prop_assert!((back.a() - e.a()).abs() <= 1e-9 * e.a());
        prop_assert!((back.b() - e.b()).abs() <= 1e-9 * e.b());
        prop_assert!((back.cx() - e.cx()).abs() <= 1e-9 * e.cx().abs().max(e.a()));
        prop_assert!((back.cy() - e.cy()).abs() <= 1e-9 * e.cy().abs().max(e.a()));
        if r > 1.0 + 1e-6 {
            prop_assert!(angle_diff(back.alpha(), e.alpha(), PI) <= 1e-9 * r * r);
        }
    }

    #[test]
    fn perimeter_monotone(a in 1.0..100.0f64, b in 1.0..100.0f64, da in 0.0..10.0f64) {
        let p = |a: f64, b: f64| ramanujan_perimeter(&Ellipse::new(0.0, 0.0, a, b, 0.0).unwrap());
        prop_assert!(p(a + da, b) >= p(a, b));
        prop_assert!(p(a, b + da) >= p(a, b));
    }

    #[test]
    fn measure_linear_in_pixel_size(e in ellipse_strategy(), s in 0.01..5.0f64) {
        let m1 = measure(&e, s).unwrap();
        let m2 = measure(&e, 2.0 * s).unwrap();
        prop_assert_eq!(m2.hc_mm, 2.0 * m1.hc_mm);
        prop_assert_eq!(m2.bpd_mm, 2.0 * m1.bpd_mm);
    }
}

#[test]
fn perimeter_matches_quadrature() {
    let mut worst = 0.0f64;
    for i in 0..10 {
        for j in 0..10 {
            let b = 1.0 + 9.0 * i as f64;
            let a = b * (1.0 + j as f64 / 9.0);
            let e = Ellipse::new(0.0, 0.0, a, b, 0.0).unwrap();
            let rel = (ramanujan_perimeter(&e) - arc_length(a, b)).abs() / arc_length(a, b);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-9, "worst relative error {worst:e}");
    let e = Ellipse::new(0.0, 0.0, 2.0, 1.0, 0.0).unwrap();
    assert!((ramanujan_perimeter(&e) - arc_length(2.0, 1.0)).abs() / arc_length(2.0, 1.0) < 1e-7);
}

#[test]
fn quadrature_oracle_is_accurate() {
    // circle and a degenerate segment have closed forms
    assert!((arc_length(3.0, 3.0) - 6.0 * PI).abs() < 1e-12);
    assert!((arc_length(1.0, 1e-12) - 4.0).abs() < 1e-9);
}

#[test]
fn circle_perimeter_exact() {
    for r in [0.5, 1.0, 10.0, 123.456] {
        let e = Ellipse::circle(0.0, 0.0, r).unwrap();
        assert!((ramanujan_perimeter(&e) - 2.0 * PI * r).abs() <= 1e-12 * 2.0 * PI * r);
    }
}

#[test]
fn measure_worked_values() {
    let m = measure(&Ellipse::circle(5.0, 5.0, 10.0).unwrap(), 1.0).unwrap();
    assert!((m.hc_mm - 62.8319).abs() < 1e-4);
    assert_eq!(m.bpd_mm, 20.0);
    let e = Ellipse::new(0.0, 0.0, 60.0, 45.0, 0.3).unwrap();
    let m = measure(&e, 0.26).unwrap();
    assert!((m.hc_mm - 0.26 * arc_length(60.0, 45.0)).abs() < 1e-9 * m.hc_mm);
    assert!((m.bpd_mm - 23.4).abs() < 1e-12);
}
