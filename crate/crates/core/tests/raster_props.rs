use std::f64::consts::PI;

use caliper::geometry::{fit_ellipse, Ellipse};
use caliper::pipeline::fit_mask;
use caliper::raster::{connected_components, dice, extract_contour, rasterize_ellipse, Mask};
use proptest::prelude::*;

fn curve_distance(e: &Ellipse, x: f64, y: f64) -> f64 {
    (0..2048)
        .map(|k| {
            let (px, py) = e.point_at(2.0 * PI * k as f64 / 2048.0);
            (px - x).hypot(py - y)
        })
        .fold(f64::INFINITY, f64::min)
}

fn mask_strategy() -> impl Strategy<Value = Mask> {
    (1usize..12, 1usize..12)
        .prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(0u8..2, w * h)))
        .prop_map(|(w, h, d)| Mask::new(w, h, d).unwrap())
}

fn is_neighbor(p: (i64, i64), q: (i64, i64)) -> bool {
    (p.0 - q.0).abs() <= 1 && (p.1 - q.1).abs() <= 1
}

proptest! {
    #[test]
    fn contour_points_are_boundary_pixels(m in mask_strategy()) {
        prop_assume!(!m.is_empty());
        let c = extract_contour(&m).unwrap();
        let pts = c.points();
        prop_assert!(!pts.is_empty());
        for (i, &p) in pts.iter().enumerate() {
            prop_assert!(m.get_signed(p.0, p.1));
            let open = [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|&(dx, dy)| !m.get_signed(p.0 + dx, p.1 + dy));
            prop_assert!(open, "interior pixel {:?} on contour", p);
            let q = pts[(i + 1) % pts.len()];
            prop_assert!(is_neighbor(p, q));
        }
        let comps = connected_components(&m);
        let label = comps.largest().unwrap();
        prop_assert!(pts.iter().all(|&(x, y)| comps.label_at(x as usize, y as usize) == label));
    }

    #[test]
    fn dice_symmetric_and_reflexive(a in mask_strategy(), seed in any::<u64>()) {
        let mut s = seed;
        let b = Mask::from_fn(a.width(), a.height(), |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 63) == 1
        });
        prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
        prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn speckle_does_not_move_contour(cx in 30.0..34.0f64, cy in 30.0..34.0f64, a in 10.0..20.0f64,
                                      al in 0.0..PI, specks in prop::collection::vec((0usize..64, 0usize..64), 0..8)) {
        let e = Ellipse::new(cx, cy, a, a * 0.7, al).unwrap();
        let clean = rasterize_ellipse(&e, 64, 64);
        let before = extract_contour(&clean).unwrap();
        let mut noisy = clean.clone();
        for (x, y) in specks {
            // isolated specks only: keep a moat of background around each
            let clear = (-2i64..=2).all(|dy| (-2i64..=2).all(|dx| !clean.get_signed(x as i64 + dx, y as i64 + dy)));
            if clear {
                noisy.set(x, y, true);
            }
        }
        prop_assert_eq!(extract_contour(&noisy).unwrap(), before);
    }

    #[test]
    fn closure_within_half_pixel(a in 15.0..120.0f64, ratio in 0.0..1.0f64, al in 0.0..PI,
                                 jx in -0.5..0.5f64, jy in -0.5..0.5f64) {
        let b = 15.0 + ratio * (a - 15.0);
        let size = (2.0 * a + 12.0).ceil() as usize;
        let c = size as f64 / 2.0;
        let e = Ellipse::new(c + jx, c + jy, a, b, al).unwrap();
        let (fit, _) = fit_mask(&rasterize_ellipse(&e, size, size)).unwrap();
        prop_assert!((fit.a() - e.a()).abs() < 0.5, "a {} vs {}", fit.a(), e.a());
        prop_assert!((fit.b() - e.b()).abs() < 0.5, "b {} vs {}", fit.b(), e.b());
        prop_assert!((fit.cx() - e.cx()).hypot(fit.cy() - e.cy()) < 0.5);
    }
}

#[test]
fn contour_of_rasterized_ellipse_hugs_curve() {
    let e = Ellipse::new(50.0, 50.0, 30.0, 20.0, 0.5).unwrap();
    let c = extract_contour(&rasterize_ellipse(&e, 101, 101)).unwrap();
    assert!(c.len() > 100);
    for &(x, y) in c.points() {
        assert!(curve_distance(&e, x as f64, y as f64) <= 1.0);
    }
    // pixel centers alone are biased inward but still a valid fit
    let raw = fit_ellipse(&c.to_f64()).unwrap();
    assert!(raw.a() < e.a() && raw.b() < e.b());
}

#[test]
fn rasterized_area_converges() {
    let errs: Vec<f64> = [10.0, 40.0, 160.0]
        .iter()
        .map(|&r| {
            let size = (2.0 * r + 4.0) as usize;
            let c = size as f64 / 2.0 + 0.3;
            let m = rasterize_ellipse(&Ellipse::circle(c, c, r).unwrap(), size, size);
            (m.count() as f64 / (PI * r * r) - 1.0).abs()
        })
        .collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn rasterize_area_oracle() {
    let e = Ellipse::new(160.0, 192.0, 80.0, 60.0, 0.4).unwrap();
    let m = rasterize_ellipse(&e, 320, 384);
    assert!((m.count() as f64 / (PI * 80.0 * 60.0) - 1.0).abs() < 0.01);
}
