use faceshield::editor::{fuse, map_perturbation};
use faceshield::graph::Mat;
use faceshield::image::{ImageTensor, Mask};
use faceshield::metrics::att_id_from_cosines;
use faceshield::optimize::{curve_stats, pgd_ascend, project_to_ball};
use faceshield::util::linf;
use proptest::collection::vec;
use proptest::prelude::*;

const SHAPES: [(usize, usize); 3] = [(2, 2), (4, 4), (16, 16)];

fn row(v: Vec<f64>) -> Mat {
    let n = v.len();
    Mat::from_shape_vec((1, n), v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noise_mapping_is_linear(
        a in vec(-1.0f64..1.0, 64),
        b in vec(-1.0f64..1.0, 64),
        s in -3.0f64..3.0,
    ) {
        let shape = (4, 4, 4);
        let combo = row(a.iter().zip(&b).map(|(x, y)| s * x + y).collect());
        let ma = map_perturbation(&row(a), shape, &SHAPES).unwrap();
        let mb = map_perturbation(&row(b), shape, &SHAPES).unwrap();
        let mc = map_perturbation(&combo, shape, &SHAPES).unwrap();
        for ((x, y), z) in ma.maps.iter().zip(&mb.maps).zip(&mc.maps) {
            for ((p, q), r) in x.values.iter().zip(&y.values).zip(&z.values) {
                prop_assert!((s * p + q - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fused_pixels_lie_between_inputs(
        src in vec(0.0f64..1.0, 48),
        edit in vec(0.0f64..1.0, 48),
        m in vec(0.0f64..1.0, 16),
    ) {
        let a = ImageTensor::new(4, 4, 3, src).unwrap();
        let b = ImageTensor::new(4, 4, 3, edit).unwrap();
        let mask = Mask::new(4, 4, m).unwrap();
        let out = fuse(&a, &b, &mask).unwrap();
        for ((o, x), y) in out.data().iter().zip(a.data()).zip(b.data()) {
            prop_assert!(*o >= x.min(*y) - 1e-12 && *o <= x.max(*y) + 1e-12);
        }
    }

    #[test]
    fn projection_is_idempotent_and_inside(
        z in vec(-2.0f64..2.0, 16),
        r in vec(-2.0f64..2.0, 16),
        eps in 0.0f64..1.0,
    ) {
        let (z, r) = (row(z), row(r));
        let p = project_to_ball(&z, &r, eps);
        prop_assert!(linf(&p, &r) <= eps + 1e-12);
        prop_assert_eq!(project_to_ball(&p, &r, eps), p);
    }

    #[test]
    fn pgd_never_leaves_the_budget(
        r in vec(-1.0f64..1.0, 12),
        offset in vec(-1.0f64..1.0, 12),
        grads in vec(vec(-1.0f64..1.0, 12), 1..12),
        eps in 0.0f64..0.5,
        eta in 0.001f64..0.3,
    ) {
        let z_ref = row(r);
        let z0 = &z_ref + &row(offset).mapv(|v| v * eps);
        let mut k = 0;
        let steps = grads.len();
        let out = pgd_ascend(
            &z0,
            &z_ref,
            eps,
            eta,
            steps,
            |_| {
                let g = row(grads[k].clone());
                k += 1;
                Ok((0.0, g))
            },
            |_, _, z, _| {
                assert!(linf(z, &z_ref) <= eps + 1e-9);
                Ok(())
            },
        )
        .unwrap();
        prop_assert!(linf(&out.z, &z_ref) <= eps + 1e-9);
        prop_assert_eq!(out.values.len(), steps);
    }

    #[test]
    fn curve_windows_are_bounded_by_the_series(s in vec(-10.0f64..10.0, 1..80)) {
        let st = curve_stats(&s).unwrap();
        let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(st.len, s.len());
        prop_assert!(st.head_mean >= lo - 1e-12 && st.head_mean <= hi + 1e-12);
        prop_assert!(st.tail_mean >= lo - 1e-12 && st.tail_mean <= hi + 1e-12);
        prop_assert!(st.tail_variance >= 0.0 || st.tail_variance.is_nan());
    }

    #[test]
    fn identity_loss_rate_falls_with_adversarial_similarity(
        base in 0.01f64..1.0,
        a in -1.0f64..1.0,
        b in -1.0f64..1.0,
    ) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let x = att_id_from_cosines(base, lo).unwrap();
        let y = att_id_from_cosines(base, hi).unwrap();
        prop_assert!(x.value >= y.value);
        prop_assert!(!x.clamped && !y.clamped);
    }
}

#[test]
fn empty_curve_is_rejected() {
    assert!(curve_stats(&[]).is_err());
}
