use std::time::Duration;

use movidnn_core::metrics::{
    aggregate, compare_frames, psnr_frame, ssim_frame, FrameMetrics, PlaneMode, Psnr, SsimParams,
};
use movidnn_core::video_io::Frame;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_frame(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Frame {
    let mut plane = |n: usize| (0..n).map(|_| rng.gen::<u8>()).collect::<Vec<_>>();
    Frame::new(w, h, plane(w * h), plane(w * h / 4), plane(w * h / 4)).unwrap()
}

/// Smooth gradient content so SSIM responds gradually to noise.
fn gradient_frame(w: usize, h: usize) -> Frame {
    let y = (0..h).flat_map(|r| (0..w).map(move |c| ((r * 3 + c * 5) % 200 + 20) as u8)).collect();
    let (cw, ch) = (w / 2, h / 2);
    let u = (0..ch).flat_map(|r| (0..cw).map(move |c| (100 + r + c) as u8)).collect();
    let v = (0..ch).flat_map(|r| (0..cw).map(move |c| (150 - r + c / 2) as u8)).collect();
    Frame::new(w, h, y, u, v).unwrap()
}

fn add_noise(frame: &Frame, sigma: f64, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut noisy = |p: &[u8]| {
        p.iter()
            .map(|&v| (v as f64 + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
            .collect::<Vec<_>>()
    };
    let (y, u, v) = (noisy(frame.y()), noisy(frame.u()), noisy(frame.v()));
    Frame::new(frame.width(), frame.height(), y, u, v).unwrap()
}

fn brute_psnr(a: &Frame, b: &Frame, y_only: bool) -> Option<f64> {
    let mut pairs: Vec<(u8, u8)> = a.y().iter().copied().zip(b.y().iter().copied()).collect();
    if !y_only {
        pairs.extend(a.u().iter().copied().zip(b.u().iter().copied()));
        pairs.extend(a.v().iter().copied().zip(b.v().iter().copied()));
    }
    let mse = pairs.iter().map(|&(x, y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / pairs.len() as f64;
    (mse > 0.0).then(|| 10.0 * (255.0f64 * 255.0 / mse).log10())
}

/// SSIM with an explicit 2-D Gaussian window applied at every valid offset.
fn brute_ssim_plane(a: &[u8], b: &[u8], w: usize, h: usize) -> f64 {
    let n = 11;
    let mut win = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            win[i * n + j] = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let s: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - n {
        for x0 in 0..=w - n {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let k = win[i * n + j];
                    mx += k * a[(y0 + i) * w + x0 + j] as f64;
                    my += k * b[(y0 + i) * w + x0 + j] as f64;
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let k = win[i * n + j];
                    let p = a[(y0 + i) * w + x0 + j] as f64 - mx;
                    let q = b[(y0 + i) * w + x0 + j] as f64 - my;
                    vx += k * p * p;
                    vy += k * q * q;
                    cxy += k * p * q;
                }
            }
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn psnr_matches_brute_force_and_self_ssim_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5517);
    let params = SsimParams::default();
    for _ in 0..100 {
        let a = random_frame(&mut rng, 32, 32);
        let b = random_frame(&mut rng, 32, 32);
        let got = psnr_frame(&a, &b, PlaneMode::AllPlanes).unwrap().db().unwrap();
        assert!((got - brute_psnr(&a, &b, false).unwrap()).abs() <= 1e-9);
        let got_y = psnr_frame(&a, &b, PlaneMode::YOnly).unwrap().db().unwrap();
        assert!((got_y - brute_psnr(&a, &b, true).unwrap()).abs() <= 1e-9);
        assert_eq!(ssim_frame(&a, &a, &params, PlaneMode::AllPlanes).unwrap(), 1.0);
        assert_eq!(ssim_frame(&a, &a, &params, PlaneMode::YOnly).unwrap(), 1.0);
        assert_eq!(psnr_frame(&a, &a, PlaneMode::AllPlanes).unwrap(), Psnr::Identical);
    }
}

#[test]
fn ssim_matches_two_dimensional_window_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x2D);
    let params = SsimParams::default();
    for _ in 0..10 {
        let a = random_frame(&mut rng, 24, 22);
        let b = add_noise(&a, 20.0, rng.gen());
        let y = brute_ssim_plane(a.y(), b.y(), 24, 22);
        let u = brute_ssim_plane(a.u(), b.u(), 12, 11);
        let v = brute_ssim_plane(a.v(), b.v(), 12, 11);
        let got_y = ssim_frame(&a, &b, &params, PlaneMode::YOnly).unwrap();
        let got_all = ssim_frame(&a, &b, &params, PlaneMode::AllPlanes).unwrap();
        assert!((got_y - y).abs() <= 1e-9, "{got_y} vs {y}");
        assert!((got_all - (4.0 * y + u + v) / 6.0).abs() <= 1e-9);
    }
}

#[test]
fn closed_form_cases() {
    let params = SsimParams::default();
    let black = Frame::filled(32, 32, 0, 0, 0).unwrap();
    let white = Frame::filled(32, 32, 255, 255, 255).unwrap();
    assert_eq!(psnr_frame(&black, &white, PlaneMode::AllPlanes).unwrap(), Psnr::Db(0.0));
    let c1 = params.c1();
    let want = c1 / (65025.0 + c1);
    assert!((ssim_frame(&black, &white, &params, PlaneMode::AllPlanes).unwrap() - want).abs() <= 1e-9);
    assert!((want - 9.9990e-5).abs() < 1e-8);

    // a single-level offset everywhere gives mse 1
    let a = Frame::filled(32, 32, 100, 100, 100).unwrap();
    let b = Frame::filled(32, 32, 101, 101, 101).unwrap();
    let db = psnr_frame(&a, &b, PlaneMode::AllPlanes).unwrap().db().unwrap();
    assert!((db - 20.0 * 255f64.log10()).abs() <= 1e-9);
}

#[test]
fn noise_monotonically_degrades_quality() {
    let params = SsimParams::default();
    let clean = gradient_frame(64, 64);
    let scores: Vec<(f64, f64)> = [2.0, 5.0, 10.0]
        .iter()
        .map(|&s| {
            let noisy = add_noise(&clean, s, 42);
            let m = compare_frames(&clean, &noisy, &params).unwrap();
            (m.ssim_all, m.psnr.db().unwrap())
        })
        .collect();
    for w in scores.windows(2) {
        assert!(w[0].0 > w[1].0, "ssim {scores:?}");
        assert!(w[0].1 > w[1].1, "psnr {scores:?}");
    }
}

#[test]
fn small_and_mismatched_frames_are_errors() {
    let params = SsimParams::default();
    let a = Frame::filled(16, 16, 0, 0, 0).unwrap();
    assert!(ssim_frame(&a, &a, &params, PlaneMode::AllPlanes).is_err());
    let b = Frame::filled(20, 20, 0, 0, 0).unwrap();
    assert!(psnr_frame(&a, &b, PlaneMode::YOnly).is_err());
    assert!(aggregate(Vec::new(), 0).is_err());
}

fn psnr_strategy() -> impl Strategy<Value = Psnr> {
    prop_oneof![1 => Just(Psnr::Identical), 4 => (0.0f64..100.0).prop_map(Psnr::Db)]
}

fn frame_metrics() -> impl Strategy<Value = FrameMetrics> {
    (psnr_strategy(), psnr_strategy(), 0.0f64..=1.0, 0.0f64..=1.0, 1u64..50_000_000).prop_map(|(p, yp, s, ys, ns)| {
        FrameMetrics {
            psnr: p,
            ypsnr: yp,
            ssim_all: s,
            yssim: ys,
            forward: Some(Duration::from_nanos(ns)),
        }
    })
}

proptest! {
    #[test]
    fn psnr_and_ssim_are_symmetric(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_frame(&mut rng, 22, 22);
        let b = random_frame(&mut rng, 22, 22);
        let p = SsimParams::default();
        prop_assert_eq!(psnr_frame(&a, &b, PlaneMode::AllPlanes).unwrap(), psnr_frame(&b, &a, PlaneMode::AllPlanes).unwrap());
        let s1 = ssim_frame(&a, &b, &p, PlaneMode::AllPlanes).unwrap();
        let s2 = ssim_frame(&b, &a, &p, PlaneMode::AllPlanes).unwrap();
        prop_assert!((s1 - s2).abs() <= 1e-12);
        prop_assert!(s1 <= 1.0 && s1 >= -1.0);
    }

    #[test]
    fn aggregate_orders_and_counts(frames in prop::collection::vec(frame_metrics(), 1..40), warmup in 0usize..5) {
        let n = frames.len();
        let identical = frames.iter().filter(|f| f.psnr.is_identical()).count();
        let r = aggregate(frames, warmup).unwrap();
        prop_assert_eq!(r.total_frames, n);
        prop_assert_eq!(r.identical_frame_count, identical);
        match (r.psnr_min, r.psnr_avg, r.psnr_max) {
            (Some(lo), Some(avg), Some(hi)) => prop_assert!(lo <= avg && avg <= hi),
            (None, None, None) => prop_assert_eq!(identical, n),
            other => prop_assert!(false, "inconsistent stats {:?}", other),
        }
        let t = r.timing.unwrap();
        prop_assert_eq!(t.timed_frames, if warmup < n { n - warmup } else { n });
        prop_assert!((t.fps * t.ms_per_frame - 1000.0).abs() <= 1e-6);
        prop_assert!((0.0..=1.0).contains(&r.ssim_all));
    }
}
