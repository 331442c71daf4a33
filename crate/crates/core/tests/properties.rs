//! Randomized invariants over the tensor engine, geometry, losses, and
//! metrics.

use afgeo_core::boxes::{giou, iou, GtBox};
use afgeo_core::cvoam::normalize_scores;
use afgeo_core::gpe;
use afgeo_core::head::{argmax_tied, assign_targets, HeadConfig};
use afgeo_core::loss::{bce_loss, focal_loss};
use afgeo_core::tensor::{logistic, softplus, Tensor};
use afgeo_core::train::accuracy_from_ious;
use proptest::prelude::*;

fn leaf(data: Vec<f64>, shape: &[usize]) -> Tensor<f64> {
    Tensor::leaf(data, shape, true).unwrap()
}

/// Shape pairs where the right side broadcasts over the left's trailing axes.
fn broadcast_pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..=3, proptest::collection::vec(1usize..=4, 1..=3)).prop_map(|(keep, full)| {
        let tail = full[full.len() - keep.min(full.len())..].to_vec();
        (full, tail)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn broadcast_product_gradient_reduces_to_shape(
        (big, small) in broadcast_pair(),
        seed in 0u64..1000,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n_big: usize = big.iter().product();
        let n_small: usize = small.iter().product();
        let a = leaf((0..n_big).map(|_| rng.random_range(-2.0..2.0)).collect(), &big);
        let b = leaf((0..n_small).map(|_| rng.random_range(-2.0..2.0)).collect(), &small);
        a.mul(&b).unwrap().sum_all().unwrap().backward().unwrap();

        // d/da sum(a*b) broadcasts b; d/db reduces a over the leading axes.
        let ga = a.grad().unwrap();
        let gb = b.grad().unwrap();
        let bv = b.to_vec();
        let av = a.to_vec();
        let inner = n_small;
        for (i, g) in ga.iter().enumerate() {
            prop_assert!((g - bv[i % inner]).abs() < 1e-12);
        }
        let mut expect = vec![0.0; inner];
        for (i, v) in av.iter().enumerate() {
            expect[i % inner] += v;
        }
        for (g, e) in gb.iter().zip(&expect) {
            prop_assert!((g - e).abs() < 1e-9);
        }
    }

    #[test]
    fn softplus_and_logistic_identities_hold(x in -500.0f64..500.0) {
        let sp = softplus(x);
        prop_assert!(sp >= 0.0);
        prop_assert!(sp >= x);
        prop_assert!((sp - softplus(-x) - x).abs() < 1e-9);
        let p = logistic(x);
        prop_assert!((0.0..=1.0).contains(&p));
        // The open interval only survives where exp doesn't saturate f64.
        if x.abs() < 30.0 {
            prop_assert!(p > 0.0 && p < 1.0);
        }
        prop_assert!((p + logistic(-x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iou_is_symmetric_and_transform_invariant(
        ax in -50.0f64..50.0, ay in -50.0f64..50.0,
        aw in 0.5f64..40.0, ah in 0.5f64..40.0,
        bx in -50.0f64..50.0, by in -50.0f64..50.0,
        bw in 0.5f64..40.0, bh in 0.5f64..40.0,
        dx in -20.0f64..20.0, dy in -20.0f64..20.0,
        scale in 0.1f64..8.0,
    ) {
        let a = GtBox::new(ax, ay, ax + aw, ay + ah).unwrap();
        let b = GtBox::new(bx, by, bx + bw, by + bh).unwrap();
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((v - iou(&b, &a)).abs() < 1e-12);
        prop_assert!(giou(&a, &b) <= v + 1e-12);
        prop_assert!((-1.0..=1.0).contains(&giou(&a, &b)));

        let moved = |r: &GtBox| {
            GtBox::new(
                (r.x_min + dx) * scale,
                (r.y_min + dy) * scale,
                (r.x_max + dx) * scale,
                (r.y_max + dy) * scale,
            )
            .unwrap()
        };
        prop_assert!((iou(&moved(&a), &moved(&b)) - v).abs() < 1e-9);
    }

    #[test]
    fn identical_boxes_have_unit_iou(
        x in -50.0f64..50.0, y in -50.0f64..50.0,
        w in 0.5f64..40.0, h in 0.5f64..40.0,
    ) {
        let a = GtBox::new(x, y, x + w, y + h).unwrap();
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        prop_assert!((giou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn focal_with_unit_weights_halves_bce(
        logit in -30.0f64..30.0,
        target in 0u8..=1,
    ) {
        let t = f64::from(target);
        let focal = focal_loss(logit, t, 0.5, 0.0);
        let bce = bce_loss(logit, t);
        prop_assert!((focal - 0.5 * bce).abs() < 1e-9 * bce.max(1.0));
    }

    #[test]
    fn bce_is_label_flip_symmetric(logit in -30.0f64..30.0, t in 0.0f64..=1.0) {
        let lhs = bce_loss(logit, t);
        let rhs = bce_loss(-logit, 1.0 - t);
        prop_assert!((lhs - rhs).abs() < 1e-9);
        prop_assert!(lhs >= -1e-12);
    }

    #[test]
    fn gpe_decays_with_distance_and_peaks_at_click(
        h in 2usize..10, w in 2usize..10,
        row_frac in 0.0f64..1.0, col_frac in 0.0f64..1.0,
        sigma in 0.6f64..6.0,
    ) {
        let click = gpe::ClickPoint {
            row: row_frac * (h as f64 - 1e-3),
            col: col_frac * (w as f64 - 1e-3),
        };
        let raw = gpe::raw_for_sigma(sigma, 0.5).unwrap();
        let sigma_t = Tensor::<f64>::leaf(vec![raw], &[1], false).unwrap();
        let map = gpe::gpe_map(h, w, click, &sigma_t, 0.5).unwrap().to_vec();

        let d2 = |i: usize, j: usize| {
            let dy = i as f64 - click.row;
            let dx = j as f64 - click.col;
            dx * dx + dy * dy
        };
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for i in 0..h {
            for j in 0..w {
                let p = map[i * w + j];
                prop_assert!(p > 0.0 && p <= 1.0);
                pairs.push((d2(i, j), p));
            }
        }
        // Closer cells never score lower.
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for win in pairs.windows(2) {
            prop_assert!(win[0].1 >= win[1].1 - 1e-12);
        }
    }

    #[test]
    fn sigma_map_is_positive_above_floor(raw in -40.0f64..40.0) {
        let t = Tensor::<f64>::leaf(vec![raw], &[1], true).unwrap();
        let sigma = gpe::effective_sigma(&t, 0.5).to_vec()[0];
        // softplus(raw) underflows to an absorbed ~1e-17 near raw = -40, so
        // the exact-arithmetic strict bound relaxes to >= at the floor.
        prop_assert!(sigma >= 0.5 && sigma.is_finite());
        if raw > -30.0 {
            prop_assert!(sigma > 0.5);
        }
    }

    #[test]
    fn sigma_parameterization_roundtrips(target in 0.5001f64..80.0) {
        let raw = gpe::raw_for_sigma(target, 0.5).unwrap();
        let t = Tensor::<f64>::leaf(vec![raw], &[1], false).unwrap();
        let sigma = gpe::effective_sigma(&t, 0.5).to_vec()[0];
        prop_assert!((sigma - target).abs() < 1e-9 * target.max(1.0));
    }

    #[test]
    fn normalized_scores_preserve_order(
        values in proptest::collection::vec(-100.0f64..100.0, 2..24),
    ) {
        let n = values.len();
        let t = leaf(values.clone(), &[n]);
        let out = normalize_scores(&t).unwrap().to_vec();
        for i in 0..n {
            prop_assert!(out[i] > 0.0 && out[i] < 1.0);
            for j in 0..n {
                if values[i] < values[j] {
                    prop_assert!(out[i] <= out[j] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn accuracy_thresholds_are_monotone(
        ious in proptest::collection::vec(0.0f64..=1.0, 1..40),
        lo in 0.0f64..0.5, hi in 0.5f64..=1.0,
    ) {
        let a_lo = accuracy_from_ious(&ious, lo);
        let a_hi = accuracy_from_ious(&ious, hi);
        prop_assert!(a_hi <= a_lo);
        prop_assert!((0.0..=100.0).contains(&a_lo));
        prop_assert!((0.0..=100.0).contains(&a_hi));
    }

    #[test]
    fn positive_cells_have_valid_targets(
        stride_pick in 0usize..3,
        h in 4usize..14, w in 4usize..14,
        bx in 0.0f64..20.0, by in 0.0f64..20.0,
        bw in 2.0f64..40.0, bh in 2.0f64..40.0,
        rho in 0.5f64..3.0,
    ) {
        let stride = [2usize, 4, 8][stride_pick];
        let cfg = HeadConfig {
            strides: vec![stride],
            scale_breaks: vec![],
            radius_rho: rho,
        };
        let gt = GtBox::new(bx, by, bx + bw, by + bh).unwrap();
        let targets = assign_targets(&[(h, w)], &[gt], &cfg).unwrap();
        let level = &targets.levels[0];
        let mut count = 0;
        for cell in 0..h * w {
            if level.positive[cell] {
                count += 1;
                prop_assert_eq!(level.cls[cell], 1.0);
                let s = level.ctr[cell];
                prop_assert!(s > 0.0 && s <= 1.0);
                for plane in 0..4 {
                    prop_assert!(level.boxes[plane * h * w + cell] > 0.0);
                }
            } else {
                prop_assert_eq!(level.cls[cell], 0.0);
                prop_assert_eq!(level.ctr[cell], 0.0);
            }
        }
        prop_assert_eq!(count, targets.n_pos);
    }

    #[test]
    fn argmax_returns_a_maximal_cell(
        scores in proptest::collection::vec(-10.0f64..10.0, 6..36),
    ) {
        let w = 3;
        let h = scores.len() / w;
        let flat = &scores[..h * w];
        let (level, y, x) = argmax_tied(&[(h, w, flat.to_vec())]).unwrap();
        prop_assert_eq!(level, 0);
        let picked = flat[y * w + x];
        for &v in flat {
            prop_assert!(picked >= v);
        }
    }

    #[test]
    fn resize_stays_within_input_range(
        h in 1usize..6, w in 1usize..6,
        oh in 1usize..9, ow in 1usize..9,
        seed in 0u64..500,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..h * w).map(|_| rng.random_range(-3.0..3.0)).collect();
        let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let t = leaf(data, &[1, h, w]);
        let out = t.resize_bilinear(oh, ow).unwrap().to_vec();
        for v in out {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn sum_axes_of_everything_equals_sum_all(
        shape in proptest::collection::vec(1usize..5, 1..4),
        seed in 0u64..500,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t = leaf(data, &shape);
        let axes: Vec<usize> = (0..shape.len()).collect();
        let lhs = t.sum_axes(&axes, false).unwrap().to_vec()[0];
        let rhs = t.sum_all().unwrap().to_vec()[0];
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }
}
