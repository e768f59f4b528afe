use biasforge_core::image::{to_grayscale, Image, RangeTag};
use biasforge_core::metrics::{psnr, ssim, Psnr};
use proptest::prelude::*;

fn image(h: usize, w: usize, c: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f64..=1.0, h * w * c).prop_map(move |px| Image::new(h, w, c, px, RangeTag::Unit).unwrap())
}

fn pair(c: usize) -> impl Strategy<Value = (Image, Image)> {
    (11usize..20, 11usize..20).prop_flat_map(move |(h, w)| (image(h, w, c), image(h, w, c)))
}

/// Per-window evaluation on the luma plane with explicit weights, no
/// separable filtering.
fn brute_ssim(a: &Image, b: &Image) -> f64 {
    let (a, b) = (&to_grayscale(a).unwrap(), &to_grayscale(b).unwrap());
    let half = 5.0;
    let mut w = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (-((i as f64 - half).powi(2) + (j as f64 - half).powi(2)) / 4.5).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (h, wd, ch) = a.dims();
    let mut acc = 0.0;
    for k in 0..ch {
        for r in 0..=h - 11 {
            for c in 0..=wd - 11 {
                let mut m = [0.0f64; 5];
                for (i, row) in w.iter().enumerate() {
                    for (j, wt) in row.iter().enumerate() {
                        let (x, y, wt) = (a.get(r + i, c + j, k), b.get(r + i, c + j, k), wt / total);
                        m[0] += wt * x;
                        m[1] += wt * y;
                        m[2] += wt * x * x;
                        m[3] += wt * y * y;
                        m[4] += wt * x * y;
                    }
                }
                let (va, vb, cov) = (m[2] - m[0] * m[0], m[3] - m[1] * m[1], m[4] - m[0] * m[1]);
                acc += (2.0 * m[0] * m[1] + c1) * (2.0 * cov + c2)
                    / ((m[0] * m[0] + m[1] * m[1] + c1) * (va + vb + c2));
            }
        }
    }
    acc / ((h - 10) * (wd - 10) * ch) as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]
    #[test]
    fn ssim_stays_in_range((a, b) in pair(1)) {
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s), "{}", s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn ssim_matches_brute_force((a, b) in pair(3)) {
        let d = (ssim(&a, &b).unwrap() - brute_ssim(&a, &b)).abs();
        prop_assert!(d <= 1e-9, "{}", d);
    }

    #[test]
    fn metrics_are_symmetric((a, b) in pair(3)) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn self_similarity_is_perfect(a in image(12, 13, 3)) {
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() <= 1e-9);
        prop_assert_eq!(psnr(&a, &a).unwrap(), Psnr::Infinite);
    }

    #[test]
    fn psnr_falls_as_the_offset_grows(base in 0.2f64..0.5, d1 in 0.001f64..0.2, extra in 0.001f64..0.2) {
        let at = |d: f64| {
            let a = Image::filled(8, 8, &[base], RangeTag::Unit).unwrap();
            let b = Image::filled(8, 8, &[base + d], RangeTag::Unit).unwrap();
            match psnr(&a, &b).unwrap() {
                Psnr::Finite(v) => v,
                Psnr::Infinite => f64::INFINITY,
            }
        };
        prop_assert!(at(d1) > at(d1 + extra));
    }
}
