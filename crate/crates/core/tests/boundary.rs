use bfanet_core::boundary::match_fraction;
use bfanet_core::data::synthetic_sample;
use bfanet_core::{canny_boundary, morph_boundary_oracle, BinaryMask, CannyParams};
use proptest::prelude::*;

fn square(size: usize, at: usize, side: usize) -> BinaryMask {
    BinaryMask::from_fn(size, size, |y, x| {
        (at..at + side).contains(&y) && (at..at + side).contains(&x)
    })
}

#[test]
fn centered_square_within_one_pixel() {
    let m = square(8, 2, 4);
    let edges = canny_boundary(&m, &CannyParams::default()).unwrap();
    let oracle = morph_boundary_oracle(&m);
    assert_eq!(oracle.count(), 12);
    assert_eq!(match_fraction(&edges, &oracle, 1), 1.0);
    assert!(match_fraction(&oracle, &edges, 1) >= 0.95);
}

#[test]
fn hundred_synthetic_masks_mutual_one_pixel() {
    let p = CannyParams::default();
    let (mut worst_p, mut worst_r) = (1.0f64, 1.0f64);
    for i in 0..100 {
        let s = synthetic_sample(64, 7, i).unwrap();
        let oracle = morph_boundary_oracle(&s.mask);
        let edges = canny_boundary(&s.mask, &p).unwrap();
        assert_eq!(edges, s.boundary);
        worst_p = worst_p.min(match_fraction(&edges, &oracle, 1));
        worst_r = worst_r.min(match_fraction(&oracle, &edges, 1));
        assert!(edges.coverage() <= 0.25);
    }
    assert!(worst_p >= 0.95, "precision {worst_p}");
    assert!(worst_r >= 0.95, "recall {worst_r}");
}

// Two shapes one pixel apart: smoothing merges their responses and a
// suppressed-ridge pixel two steps from either boundary survives.
#[test]
fn near_touching_shapes_can_stray_two_pixels() {
    let m = BinaryMask::from_fn(24, 24, |y, x| {
        ((5..10).contains(&y) && x >= 22) || ((10..12).contains(&y) && (17..21).contains(&x))
    });
    assert!(!edges_within(&m, 1));
    assert!(edges_within(&m, 2));
}

// An enclosed one-pixel hole has an 8-pixel morphological ring, but at
// sigma 1 its smoothed dip never reaches the low threshold.
#[test]
fn single_pixel_hole_is_smoothed_away() {
    let solid = square(16, 3, 10);
    let mut m = solid.clone();
    m.set(8, 8, false);
    assert_eq!(
        morph_boundary_oracle(&m).count(),
        morph_boundary_oracle(&solid).count() + 8
    );
    let edges = canny_boundary(&m, &CannyParams::default()).unwrap();
    assert!((6..=10).all(|y| (6..=10).all(|x| !edges.get(y, x))));
    assert!(match_fraction(&morph_boundary_oracle(&m), &edges, 1) < 1.0);

    let s = synthetic_sample(64, 2024, 75).unwrap();
    let recall = match_fraction(&morph_boundary_oracle(&s.mask), &s.boundary, 1);
    assert!(recall < 0.95, "recall {recall}");
    assert_eq!(match_fraction(&s.boundary, &morph_boundary_oracle(&s.mask), 1), 1.0);
}

#[test]
fn gray_round_trip() {
    let m = square(6, 1, 3);
    let back = BinaryMask::from_gray(6, 6, &m.to_gray()).unwrap();
    assert_eq!(back, m);
    assert!(m.to_gray().iter().all(|&v| v == 0 || v == 255));
}

#[test]
fn non_binary_mask_rejected() {
    let err = BinaryMask::new(1, 2, vec![0, 2]).unwrap_err();
    assert_eq!(err.module(), "boundary-gt");
}

fn shape_mask() -> impl Strategy<Value = BinaryMask> {
    (any::<bool>(), 0usize..24, 0usize..24, 1usize..14, 1usize..14).prop_map(|(ellipse, y0, x0, h, w)| {
        BinaryMask::from_fn(24, 24, |y, x| {
            if ellipse {
                let dy = (y as f64 - y0 as f64) / h as f64;
                let dx = (x as f64 - x0 as f64) / w as f64;
                dy * dy + dx * dx <= 1.0
            } else {
                (y0..y0 + h).contains(&y) && (x0..x0 + w).contains(&x)
            }
        })
    })
}

fn separated_shapes() -> impl Strategy<Value = BinaryMask> {
    (
        0usize..4,
        0usize..4,
        2usize..12,
        2usize..12,
        0usize..4,
        0usize..4,
        2usize..12,
        2usize..12,
    )
        .prop_map(|(ay, ax, ah, aw, by, bx, bh, bw)| {
            // The second rectangle starts 4 pixels past the first one's bottom-right reach.
            let (by, bx) = (by + 20, bx + 20);
            BinaryMask::from_fn(40, 40, |y, x| {
                ((ay..ay + ah).contains(&y) && (ax..ax + aw).contains(&x))
                    || ((by..by + bh).contains(&y) && (bx..bx + bw).contains(&x))
            })
        })
}

fn edges_within(m: &BinaryMask, r: usize) -> bool {
    let edges = canny_boundary(m, &CannyParams::default()).unwrap();
    let near = morph_boundary_oracle(m).dilate(r);
    edges.data().iter().zip(near.data()).all(|(e, n)| *e == 0 || *n == 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn single_shape_edges_within_one_pixel(m in shape_mask()) {
        prop_assert!(edges_within(&m, 1));
    }

    #[test]
    fn separated_shapes_edges_within_one_pixel(m in separated_shapes()) {
        prop_assert!(edges_within(&m, 1));
    }

    #[test]
    fn noise_mask_edges_within_two_pixels(bits in prop::collection::vec(0u8..2, 16 * 16)) {
        let m = BinaryMask::new(16, 16, bits).unwrap();
        prop_assert!(edges_within(&m, 2));
    }

    #[test]
    fn translation_equivariance(
        y0 in 5usize..12, x0 in 5usize..12, h in 2usize..8, w in 2usize..8,
        dy in 0usize..5, dx in 0usize..5,
    ) {
        let size = 32;
        let make = |oy: usize, ox: usize| BinaryMask::from_fn(size, size, |y, x| {
            (y0 + oy..y0 + oy + h).contains(&y) && (x0 + ox..x0 + ox + w).contains(&x)
        });
        let p = CannyParams::default();
        let a = canny_boundary(&make(0, 0), &p).unwrap();
        let b = canny_boundary(&make(dy, dx), &p).unwrap();
        for y in 0..size - dy {
            for x in 0..size - dx {
                prop_assert_eq!(a.get(y, x), b.get(y + dy, x + dx));
            }
        }
    }

    #[test]
    fn output_depends_only_on_values(bits in prop::collection::vec(0u8..2, 12 * 12)) {
        let a = BinaryMask::new(12, 12, bits.clone()).unwrap();
        let b = BinaryMask::from_gray(12, 12, &bits.iter().map(|v| v * 255).collect::<Vec<_>>()).unwrap();
        let p = CannyParams::default();
        prop_assert_eq!(canny_boundary(&a, &p).unwrap(), canny_boundary(&b, &p).unwrap());
    }
}
