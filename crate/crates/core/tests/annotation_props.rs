use caliper::annotation::{
    crop_and_scale, extract_ground_truth, render_overlay, AnnotationError, CropRect, Detector, OverlayStyle,
};
use caliper::geometry::{measure, Ellipse};
use caliper::image::{GrayImage, RgbImage};
use caliper::pipeline::fit_mask;
use caliper::raster::{rasterize_ellipse, Mask};
use proptest::prelude::*;

fn filled(e: &Ellipse, w: usize, h: usize, s: f64) -> GrayImage {
    let m = rasterize_ellipse(e, w, h);
    GrayImage::new(w, h, m.data().iter().map(|&v| v as f64).collect(), s).unwrap()
}

#[test]
fn half_scale_conserves_physical_size() {
    for (i, alpha) in [0.0, 0.4, 1.2, 2.5].into_iter().enumerate() {
        let e = Ellipse::new(300.0 + 3.3 * i as f64, 250.0, 180.0 - 10.0 * i as f64, 130.0, alpha).unwrap();
        let img = filled(&e, 600, 500, 0.26);
        let before_mask = Mask::from_fn(600, 500, |x, y| img.get(x, y) > 0.5);
        let (before, _) = fit_mask(&before_mask).unwrap();
        let half = crop_and_scale(&img, CropRect::full(600, 500), 0.5).unwrap();
        assert_eq!(half.s_xy(), 0.52);
        let after_mask = Mask::from_fn(half.width(), half.height(), |x, y| half.get(x, y) > 0.5);
        let (after, _) = fit_mask(&after_mask).unwrap();
        let (mb, ma) = (measure(&before, 0.26).unwrap(), measure(&after, 0.52).unwrap());
        assert!((mb.hc_mm - ma.hc_mm).abs() <= 1.0, "HC {} vs {}", mb.hc_mm, ma.hc_mm);
        assert!((mb.bpd_mm - ma.bpd_mm).abs() <= 0.3, "BPD {} vs {}", mb.bpd_mm, ma.bpd_mm);
    }
}

#[test]
fn extraction_is_a_fixed_point() {
    let gray = GrayImage::filled(320, 384, 0.35, 0.26).unwrap();
    let e = Ellipse::new(161.2, 190.7, 90.0, 66.0, 0.7).unwrap();
    let style = OverlayStyle::default();
    let (first, _) = extract_ground_truth(&render_overlay(&gray, &e, &style), &Detector::default()).unwrap();
    let (second, _) = extract_ground_truth(&render_overlay(&gray, &first, &style), &Detector::default()).unwrap();
    for (x, y) in [(first.cx(), second.cx()), (first.cy(), second.cy()), (first.a(), second.a()), (first.b(), second.b())] {
        assert!((x - y).abs() < 0.1, "{first:?} vs {second:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gray_images_have_no_annotation(w in 1usize..40, h in 1usize..40, seed in any::<u64>()) {
        let mut s = seed;
        let data: Vec<[u8; 3]> = (0..w * h).map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            let v = (s >> 56) as u8;
            [v, v, v]
        }).collect();
        let img = RgbImage::new(w, h, data, 1.0).unwrap();
        prop_assert!(matches!(extract_ground_truth(&img, &Detector::default()), Err(AnnotationError::NoAnnotationFound)));
    }
}
