mod common;

use common::{centered_image, random_bank, random_image, texture};
use proptest::prelude::*;
use texsynth::conv::forward;
use texsynth::filterbank::{build_random, FilterBank};
use texsynth::gram::{gram, gram_distance, loss_and_grad, pixel_distance, synthesis_loss, GramMatrix};
use texsynth::image::{extract_patch, Image};
use texsynth::rng::Rng;

fn naive_gram(bank: &FilterBank, img: &Image) -> Vec<Vec<f64>> {
    let f = forward(bank, img);
    let m = f.n_positions() as f64;
    let d = f.data();
    (0..d.nrows())
        .map(|i| (0..d.nrows()).map(|j| d.row(i).dot(&d.row(j)) / m).collect())
        .collect()
}

#[test]
fn matches_naive_products_across_block_boundaries() {
    let mut rng = Rng::new(5);
    // more filters than one block, so off-diagonal blocks are exercised
    let sizes = vec![3; 150];
    let bank = random_bank(&sizes, &mut rng);
    let img = centered_image(9, 8, &mut rng);
    let g = gram(&forward(&bank, &img));
    let want = naive_gram(&bank, &img);
    for i in 0..150 {
        for j in 0..150 {
            assert!((g.get(i, j) - want[i][j]).abs() <= 1e-12 * want[i][i].max(1.0));
            assert_eq!(g.get(i, j), g.get(j, i));
        }
    }
}

#[test]
fn sub_bank_gives_leading_block() {
    let mut rng = Rng::new(6);
    let sizes: Vec<usize> = (0..140).map(|i| [1, 3, 5][i % 3]).collect();
    let bank = random_bank(&sizes, &mut rng);
    let head = FilterBank::custom(bank.filters()[..30].to_vec()).unwrap();
    let img = centered_image(10, 10, &mut rng);
    let full = gram(&forward(&bank, &img));
    let part = gram(&forward(&head, &img));
    for i in 0..30 {
        for j in 0..30 {
            assert!((full.get(i, j) - part.get(i, j)).abs() <= 1e-13 * full.get(i, i).max(1e-300));
        }
    }
}

#[test]
fn gram_is_positive_semidefinite() {
    let mut rng = Rng::new(7);
    let bank = random_bank(&[3, 3, 5, 5, 7, 7, 1, 1], &mut rng);
    let img = centered_image(12, 12, &mut rng);
    let g = gram(&forward(&bank, &img));
    let n = g.n();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| g.get(i, j));
    let eig = nalgebra::SymmetricEigen::new(m);
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-10 * top.max(1.0)));
}

#[test]
fn filter_permutation_permutes_gram() {
    let mut rng = Rng::new(8);
    let bank = random_bank(&[3, 5, 7, 1, 3], &mut rng);
    let perm = [3, 0, 4, 2, 1];
    let shuffled = FilterBank::custom(perm.iter().map(|&p| bank.filters()[p].clone()).collect()).unwrap();
    let img = centered_image(8, 9, &mut rng);
    let g = gram(&forward(&bank, &img));
    let gp = gram(&forward(&shuffled, &img));
    for (a, &pa) in perm.iter().enumerate() {
        for (b, &pb) in perm.iter().enumerate() {
            assert!((gp.get(a, b) - g.get(pa, pb)).abs() <= 1e-14 * g.get(pa, pa).max(1.0));
        }
    }
}

#[test]
fn distance_is_symmetric_and_loss_is_not() {
    let mut rng = Rng::new(9);
    let bank = random_bank(&[3, 5, 3], &mut rng);
    let a = gram(&forward(&bank, &random_image(8, 8, &mut rng)));
    let b = gram(&forward(&bank, &random_image(8, 8, &mut rng).map(|v| 3.0 * v)));
    assert_eq!(gram_distance(&a, &b).unwrap(), gram_distance(&b, &a).unwrap());
    assert_eq!(gram_distance(&a, &a).unwrap(), 0.0);
    let (ab, ba) = (synthesis_loss(&a, &b).unwrap(), synthesis_loss(&b, &a).unwrap());
    assert!((ab - ba).abs() > 1e-3 * ab.max(ba));
}

#[test]
fn degenerate_inputs_are_rejected() {
    let zero = GramMatrix::from_matrix(ndarray::Array2::zeros((2, 2))).unwrap();
    let one = GramMatrix::from_matrix(ndarray::Array2::eye(2)).unwrap();
    assert!(gram_distance(&zero, &one).is_err());
    assert!(synthesis_loss(&zero, &one).is_err());
    assert!(synthesis_loss(&one, &zero).is_ok());
    let three = GramMatrix::from_matrix(ndarray::Array2::eye(3)).unwrap();
    assert!(gram_distance(&one, &three).is_err());
    let black = Image::filled(2, 2, 0.0);
    assert!(pixel_distance(&black, &Image::filled(2, 2, 1.0)).is_err());
    assert!(pixel_distance(&Image::filled(2, 3, 1.0), &Image::filled(2, 2, 1.0)).is_err());
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut checked = 0;
    let mut total = 0;
    for seed in 0..4 {
        let mut rng = Rng::new(40 + seed);
        let bank = random_bank(&[3, 5, 3, 1], &mut rng);
        let reference = centered_image(6, 6, &mut rng);
        let g_ref = gram(&forward(&bank, &reference));
        let y = centered_image(6, 6, &mut rng);
        let (loss, grad) = loss_and_grad(&bank, &y, &g_ref, 1.0).unwrap();
        let direct = synthesis_loss(&g_ref, &gram(&forward(&bank, &y))).unwrap();
        assert!((loss - direct).abs() <= 1e-14 * direct);
        let mask: Vec<bool> = forward(&bank, &y).data().iter().map(|&v| v > 0.0).collect();
        let h = 1e-5;
        let mut probe = y.clone();
        for i in 0..y.data().len() {
            total += 1;
            let x0 = y.data()[i];
            let mut eval = |v: f64| {
                probe.data_mut()[i] = v;
                let f = forward(&bank, &probe);
                let kink = f.data().iter().zip(&mask).any(|(&a, &m)| (a > 0.0) != m);
                (synthesis_loss(&g_ref, &gram(&f)).unwrap(), kink)
            };
            let (up, ku) = eval(x0 + h);
            let (down, kd) = eval(x0 - h);
            probe.data_mut()[i] = x0;
            if ku || kd {
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-5, "seed {seed} coordinate {i}: {a:e} vs {numeric:e}");
            checked += 1;
        }
    }
    assert!(checked * 10 >= total * 9, "{checked} of {total} checked");
}

#[test]
fn loss_scale_only_scales() {
    let mut rng = Rng::new(11);
    let bank = random_bank(&[3, 5], &mut rng);
    let g_ref = gram(&forward(&bank, &centered_image(7, 7, &mut rng)));
    let y = centered_image(7, 7, &mut rng);
    let (l1, g1) = loss_and_grad(&bank, &y, &g_ref, 1.0).unwrap();
    let (l2, g2) = loss_and_grad(&bank, &y, &g_ref, 1e7).unwrap();
    assert!((l2 - 1e7 * l1).abs() <= 1e-12 * l2);
    for (a, b) in g1.data().iter().zip(g2.data()) {
        assert!((b - 1e7 * a).abs() <= 1e-9 * b.abs().max(1e-300) + 1e-300);
    }
    assert!(loss_and_grad(&bank, &y, &g_ref, 0.0).is_err());
}

fn roll(img: &Image, dy: usize, dx: usize) -> Image {
    let (h, w) = (img.height(), img.width());
    Image::from_fn(h, w, |y, x, c| img.get((y + dy) % h, (x + dx) % w, c))
}

#[test]
fn circular_shift_barely_moves_the_statistics() {
    let bank = build_random(363, 11, &mut Rng::new(0)).unwrap();
    let tex = texture(2, 256, 256, 1);
    let g = gram(&forward(&bank, &tex));
    let shifted = gram(&forward(&bank, &roll(&tex, 8, 8)));
    let d_shift = gram_distance(&g, &shifted).unwrap();
    let corners = [(0, 0), (0, 128), (128, 0), (128, 128)];
    let patch_grams: Vec<GramMatrix> = corners
        .iter()
        .map(|&(t, l)| gram(&forward(&bank, &extract_patch(&tex, t, l, 128).unwrap())))
        .collect();
    let mut within = Vec::new();
    for i in 0..4 {
        for j in i + 1..4 {
            within.push(gram_distance(&patch_grams[i], &patch_grams[j]).unwrap());
        }
    }
    within.sort_by(f64::total_cmp);
    let median = within[(within.len() - 1) / 2];
    assert!(
        d_shift < 10.0 * median,
        "shift {d_shift:e}, within-texture median {median:e}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pixel_distance_is_scale_invariant(seed in any::<u64>(), a in 0.1f64..10.0) {
        let mut rng = Rng::new(seed);
        let x = random_image(5, 4, &mut rng);
        let y = random_image(5, 4, &mut rng);
        let d = pixel_distance(&x, &y).unwrap();
        let ds = pixel_distance(&x.map(|v| a * v), &y.map(|v| a * v)).unwrap();
        prop_assert!((d - ds).abs() <= 1e-12 * d.max(1e-300));
        prop_assert_eq!(d, pixel_distance(&y, &x).unwrap());
    }

    #[test]
    fn distances_are_nonnegative_and_symmetric(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let bank = random_bank(&[1, 3, 5], &mut rng);
        let a = gram(&forward(&bank, &random_image(6, 6, &mut rng)));
        let b = gram(&forward(&bank, &random_image(6, 6, &mut rng)));
        let d = gram_distance(&a, &b).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d, gram_distance(&b, &a).unwrap());
        prop_assert!(synthesis_loss(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn gram_is_exactly_symmetric(seed in any::<u64>(), n in 1usize..20) {
        let mut rng = Rng::new(seed);
        let sizes: Vec<usize> = (0..n).map(|i| [1, 3, 5][i % 3]).collect();
        let bank = random_bank(&sizes, &mut rng);
        let g = gram(&forward(&bank, &centered_image(5, 6, &mut rng)));
        for i in 0..n {
            prop_assert!(g.get(i, i) >= 0.0);
            for j in 0..n {
                prop_assert_eq!(g.get(i, j), g.get(j, i));
            }
        }
    }
}
