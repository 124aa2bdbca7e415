use movidnn_core::inference::requant::Requantizer;
use movidnn_core::inference::{
    conv2d, conv2d_int8, run_model, run_model_with, Backend, Conv2d, ConvParams, InputSpec, Layer, ModelGraph, Shape,
    Tensor, TensorData,
};
use movidnn_core::models::{build_architecture, ArchConfig};
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct-summation convolution with zero padding, in f64.
fn naive_conv(input: &[f64], c: usize, h: usize, w: usize, weights: &[f64], bias: &[f64], oc: usize, k: usize) -> Vec<f64> {
    let p = (k / 2) as isize;
    let mut out = vec![0.0; oc * h * w];
    for o in 0..oc {
        for y in 0..h {
            for x in 0..w {
                let mut s = bias[o];
                for i in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = y as isize + ky as isize - p;
                            let ix = x as isize + kx as isize - p;
                            if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                s += weights[((o * c + i) * k + ky) * k + kx] * input[(i * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                }
                out[(o * h + y) * w + x] = s;
            }
        }
    }
    out
}

struct Case {
    c: usize,
    h: usize,
    w: usize,
    oc: usize,
    k: usize,
    input: Vec<f32>,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let c = rng.gen_range(1..=8);
    let h = rng.gen_range(1..=16);
    let w = rng.gen_range(1..=16);
    let oc = rng.gen_range(1..=8);
    let k = [1, 3, 5][rng.gen_range(0..3)];
    let mut vals = |n: usize| (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<_>>();
    Case {
        input: vals(c * h * w),
        weights: vals(oc * c * k * k),
        bias: vals(oc),
        c,
        h,
        w,
        oc,
        k,
    }
}

#[test]
fn conv2d_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0);
    for _ in 0..50 {
        let t = random_case(&mut rng);
        let conv = Conv2d::new(t.c, t.oc, t.k, t.k, t.weights.clone(), t.bias.clone()).unwrap();
        let input = Tensor::from_float(Shape::new(t.c, t.h, t.w), t.input.clone()).unwrap();
        let got = conv2d(&input, &conv).unwrap();
        let f64s = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
        let want = naive_conv(&f64s(&t.input), t.c, t.h, t.w, &f64s(&t.weights), &f64s(&t.bias), t.oc, t.k);
        assert_eq!(got.shape(), Shape::new(t.oc, t.h, t.w));
        for (g, w) in got.as_float().unwrap().iter().zip(&want) {
            assert!((*g as f64 - w).abs() <= 1e-5, "{g} vs {w}");
        }
    }
}

#[test]
fn conv2d_generic_over_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF64);
    let t = random_case(&mut rng);
    let f64s = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let conv = Conv2d::new(t.c, t.oc, t.k, t.k, f64s(&t.weights), f64s(&t.bias)).unwrap();
    let input = Tensor::from_float(Shape::new(t.c, t.h, t.w), f64s(&t.input)).unwrap();
    let got = conv2d(&input, &conv).unwrap();
    let want = naive_conv(&f64s(&t.input), t.c, t.h, t.w, &f64s(&t.weights), &f64s(&t.bias), t.oc, t.k);
    for (g, w) in got.as_float().unwrap().iter().zip(&want) {
        assert!((g - w).abs() <= 1e-12);
    }
}

fn exact(v: f32) -> BigRational {
    BigRational::from_float(v as f64).unwrap()
}

/// `round_half_away(acc * s_in * s_w / s_out)` clamped to ±127, exactly.
fn exact_requant(acc: i64, s_in: f32, s_w: f32, s_out: f32) -> i8 {
    let r = BigRational::from_integer(BigInt::from(acc)) * exact(s_in) * exact(s_w) / exact(s_out);
    let q = r.round().to_integer();
    let lim = BigInt::from(127);
    if q > lim {
        127
    } else if q < -lim.clone() {
        -127
    } else {
        i8::try_from(q).unwrap()
    }
}

#[test]
fn int8_conv_matches_exact_requantization() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x18);
    for _ in 0..30 {
        let c = rng.gen_range(1..=6);
        let (h, w) = (rng.gen_range(1..=9), rng.gen_range(1..=9));
        let oc = rng.gen_range(1..=5);
        let k = [1, 3][rng.gen_range(0..2)];
        let s_in = rng.gen_range(1e-3f32..0.1);
        let s_w = rng.gen_range(1e-3f32..0.1);
        let s_out = rng.gen_range(1e-4f32..0.05);
        let input: Vec<i8> = (0..c * h * w).map(|_| rng.gen_range(-127..=127)).collect();
        let weights: Vec<i8> = (0..oc * c * k * k).map(|_| rng.gen_range(-127..=127)).collect();
        let bias: Vec<i32> = (0..oc).map(|_| rng.gen_range(-5000..5000)).collect();
        let conv = Conv2d::<f32> {
            in_ch: c,
            out_ch: oc,
            kh: k,
            kw: k,
            params: ConvParams::Int8 {
                weights: weights.clone(),
                weight_scale: s_w,
                bias: bias.clone(),
            },
        };
        let tin = Tensor::<f32>::from_int8(Shape::new(c, h, w), input.clone(), s_in).unwrap();
        let out = conv2d_int8(&tin, &conv, s_out, Backend::Single).unwrap();
        let TensorData::Int8 { values, scale } = out.data() else { panic!("int8 output expected") };
        assert_eq!(*scale, s_out);
        let to_f = |v: &[i8]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
        // integer accumulators recovered from a bias-free f64 direct sum (exact for these magnitudes)
        let acc = naive_conv(&to_f(&input), c, h, w, &to_f(&weights), &vec![0.0; oc], oc, k);
        for (i, (&got, a)) in values.iter().zip(&acc).enumerate() {
            let total = *a as i64 + bias[i / (h * w)] as i64;
            assert_eq!(got, exact_requant(total, s_in, s_w, s_out), "acc {total}");
        }
    }
}

proptest! {
    #[test]
    fn requantizer_is_exact(acc in -(1i64 << 40)..(1i64 << 40), a in 1e-6f32..10.0, b in 1e-6f32..10.0, c in 1e-6f32..10.0) {
        let r = Requantizer::new(a, b, c).unwrap();
        prop_assert_eq!(r.apply(acc), exact_requant(acc, a, b, c));
    }

    #[test]
    fn shuffle_and_unshuffle_are_inverse(c in 1usize..4, r in 2usize..4, h in 1usize..6, w in 1usize..6, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape::new(c * r * r, h, w);
        let t = Tensor::from_float(shape, (0..shape.len()).map(|_| rng.gen::<f32>()).collect()).unwrap();
        let up = t.pixel_shuffle(r).unwrap();
        prop_assert_eq!(up.shape(), Shape::new(c, h * r, w * r));
        prop_assert_eq!(&up.space_to_depth(r).unwrap(), &t);
        let big = Tensor::from_float(Shape::new(c, h * r, w * r), (0..shape.len()).map(|_| rng.gen::<f32>()).collect()).unwrap();
        prop_assert_eq!(&big.space_to_depth(r).unwrap().pixel_shuffle(r).unwrap(), &big);
    }
}

#[test]
fn models_are_deterministic_across_runs_and_backends() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input = Tensor::from_float(Shape::new(1, 12, 10), (0..120).map(|_| rng.gen::<f32>()).collect()).unwrap();
    for cfg in [ArchConfig::espcn(2), ArchConfig::evsrnet(3), ArchConfig::dncnn()] {
        let g: ModelGraph<f32> = build_architecture(&cfg.with_seed(11)).unwrap();
        let a = run_model_with(&g, &input, Backend::Single).unwrap();
        let b = run_model_with(&g, &input, Backend::Single).unwrap();
        let c = run_model_with(&g, &input, Backend::Parallel).unwrap();
        assert_eq!(a.output, b.output);
        assert_eq!(a.output, c.output);
        assert!(a.forward_time > std::time::Duration::ZERO);
    }
}

#[test]
fn dncnn_with_zero_final_conv_returns_input() {
    let g: ModelGraph<f32> = build_architecture(&ArchConfig::dncnn().with_seed(5)).unwrap();
    let mut layers = g.layers().to_vec();
    let n = layers.len();
    let Layer::Conv2d(last) = &layers[n - 2] else { panic!("expected final conv") };
    let zero = Conv2d::new(last.in_ch, 1, 3, 3, vec![0.0; last.weight_len()], vec![0.0]).unwrap();
    layers[n - 2] = Layer::Conv2d(zero);
    let g = ModelGraph::new("dncnn", InputSpec::default(), 1, layers).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data: Vec<f32> = (0..64).map(|_| rng.gen_range(0u8..=255) as f32 / 255.0).collect();
    let input = Tensor::from_float(Shape::new(1, 8, 8), data).unwrap();
    assert_eq!(run_model(&g, &input).unwrap().output, input);
}

#[test]
fn mid_graph_shape_errors_name_the_layer() {
    let g: ModelGraph<f32> = build_architecture(&ArchConfig::espcn(2)).unwrap();
    let input = Tensor::<f32>::zeros(Shape::new(2, 4, 4));
    assert!(run_model(&g, &input).is_err());
    let conv = Conv2d::new(3, 1, 1, 1, vec![1.0f32; 3], vec![0.0]).unwrap();
    let err = conv2d(&Tensor::zeros(Shape::new(1, 2, 2)), &conv).unwrap_err();
    assert!(err.to_string().contains("expected 3 input channels"), "{err}");
}
