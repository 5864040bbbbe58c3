use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqedit_core::frequency::{
    dct2, dwt_haar, extract_frequency_map, fft2_magnitude_highpass, idct2, idwt_haar,
    FrequencyMethod,
};
use seqedit_core::Tensor;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn checkerboard(c: usize, h: usize, w: usize) -> Tensor {
    let mut t = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                t.set(&[ch, y, x], if (x + y) % 2 == 0 { 1.0 } else { -1.0 });
            }
        }
    }
    t
}

/// Direct double-sum orthonormal DCT-II of one channel.
fn naive_dct(x: &Tensor) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let alpha = |k: usize, n: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
    let mut out = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        for u in 0..h {
            for v in 0..w {
                let mut s = 0.0;
                for y in 0..h {
                    for xx in 0..w {
                        s += x.at(&[ch, y, xx])
                            * (PI * (2 * y + 1) as f64 * u as f64 / (2 * h) as f64).cos()
                            * (PI * (2 * xx + 1) as f64 * v as f64 / (2 * w) as f64).cos();
                    }
                }
                out.set(&[ch, u, v], alpha(u, h) * alpha(v, w) * s);
            }
        }
    }
    out
}

#[test]
fn haar_round_trip_and_energy_on_1000_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let c = rng.random_range(1..4);
        let h = 2 * rng.random_range(1..10);
        let w = 2 * rng.random_range(1..10);
        let x = random(&mut rng, &[c, h, w]);
        let b = dwt_haar(&x).unwrap();
        assert!(idwt_haar(&b).unwrap().max_abs_diff(&x) <= 1e-9);
        let energy = b.ll.norm_sq() + b.lh.norm_sq() + b.hl.norm_sq() + b.hh.norm_sq();
        assert!((energy - x.norm_sq()).abs() <= 1e-9);
    }
}

#[test]
fn haar_examples() {
    let hh = extract_frequency_map(&Tensor::full(&[3, 8, 8], 0.3), FrequencyMethod::Dwt).unwrap();
    assert!(hh.data().iter().all(|&v| v == 0.0));
    assert_eq!(hh.shape(), &[3, 4, 4]);

    let zero = dwt_haar(&Tensor::zeros(&[1, 4, 4])).unwrap();
    assert_eq!(idwt_haar(&zero).unwrap(), Tensor::zeros(&[1, 4, 4]));

    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = random(&mut rng, &[1, 8, 8]);
    assert!(idwt_haar(&dwt_haar(&x).unwrap()).unwrap().max_abs_diff(&x) <= 1e-12);
}

#[test]
fn single_pixel_touches_one_hh_position() {
    let mut x = Tensor::zeros(&[1, 16, 16]);
    x.set(&[0, 7, 10], 1.0);
    let hh = extract_frequency_map(&x, FrequencyMethod::Dwt).unwrap();
    let nonzero: Vec<usize> = (0..hh.len()).filter(|&i| hh.data()[i] != 0.0).collect();
    assert_eq!(nonzero, vec![3 * 8 + 5]);
}

#[test]
fn hh_is_covariant_under_even_shifts() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..20 {
        let x = random(&mut rng, &[2, 12, 12]);
        let mut shifted = Tensor::zeros(&[2, 12, 12]);
        for c in 0..2 {
            for y in 2..12 {
                for xx in 2..12 {
                    shifted.set(&[c, y, xx], x.at(&[c, y - 2, xx - 2]));
                }
            }
        }
        let a = extract_frequency_map(&x, FrequencyMethod::Dwt).unwrap();
        let b = extract_frequency_map(&shifted, FrequencyMethod::Dwt).unwrap();
        for c in 0..2 {
            for i in 1..6 {
                for j in 1..6 {
                    assert_eq!(b.at(&[c, i, j]), a.at(&[c, i - 1, j - 1]));
                }
            }
        }
    }
}

#[test]
fn dct_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..20 {
        let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
        let x = random(&mut rng, &[2, h, w]);
        assert!(dct2(&x).unwrap().max_abs_diff(&naive_dct(&x)) <= 1e-12);
    }
}

#[test]
fn dct_examples() {
    let d = dct2(&Tensor::full(&[1, 4, 4], 1.0)).unwrap();
    assert!((d.at(&[0, 0, 0]) - 4.0).abs() <= 1e-12);
    assert!(d.data()[1..].iter().all(|v| v.abs() <= 1e-12));

    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..100 {
        let x = random(&mut rng, &[3, 16, 12]);
        let d = dct2(&x).unwrap();
        assert!((d.norm_sq() - x.norm_sq()).abs() <= 1e-9);
        assert!(idct2(&d).unwrap().max_abs_diff(&x) <= 1e-10);
    }
}

#[test]
fn fft_highpass_examples() {
    for r in [0.05, 0.25, 0.5, 0.95] {
        let out = fft2_magnitude_highpass(&Tensor::full(&[3, 16, 16], 0.7), r).unwrap();
        assert!(out.data().iter().all(|v| v.abs() <= 1e-10));
    }
    let board = checkerboard(1, 16, 16);
    let out = fft2_magnitude_highpass(&board, 0.5).unwrap();
    assert!(out.max_abs_diff(&board) <= 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let x = random(&mut rng, &[2, 16, 16]);
    assert!(fft2_magnitude_highpass(&x, 0.3).unwrap().norm_sq() <= x.norm_sq());
    assert!(fft2_magnitude_highpass(&x, 0.0).is_err());
    assert!(fft2_magnitude_highpass(&x, 1.0).is_err());
}

#[test]
fn frequency_map_shapes_and_constants() {
    let img = Tensor::full(&[3, 64, 64], 0.42);
    let methods = [
        (FrequencyMethod::Dwt, 32),
        (FrequencyMethod::default_dct(64), 64),
        (FrequencyMethod::default_fft(), 64),
    ];
    for (m, size) in methods {
        let map = extract_frequency_map(&img, m).unwrap();
        assert_eq!(map.shape(), &[3, size, size], "{}", m.label());
        assert!(map.data().iter().all(|v| v.abs() <= 1e-9), "{}", m.label());
    }
    assert!(extract_frequency_map(&img, FrequencyMethod::Dct { block: 64 }).is_err());
    assert!(extract_frequency_map(&Tensor::zeros(&[3, 63, 64]), FrequencyMethod::Dwt).is_err());
}

proptest! {
    #[test]
    fn highpass_residuals_never_add_energy(seed in any::<u64>(), r in 0.01f64..0.99, b in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[1, 8, 8]);
        let e = x.norm_sq() + 1e-9;
        let fft = extract_frequency_map(&x, FrequencyMethod::Fft { radius: r }).unwrap();
        let dct = extract_frequency_map(&x, FrequencyMethod::Dct { block: b }).unwrap();
        prop_assert!(fft.norm_sq() <= e);
        prop_assert!(dct.norm_sq() <= e);
    }
}
