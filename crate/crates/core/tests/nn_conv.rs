use geomem::nn::*;
use geomem::rng::rng_from_seed;
use rand::Rng as _;

fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = rng_from_seed(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Seven nested loops, no cleverness.
fn naive(x: &Tensor<f64>, kern: &ConvKernel<f64>) -> Tensor<f64> {
    let (co, ci, k) = (kern.c_out(), kern.c_in(), kern.size());
    let (d, h, w) = (x.shape[1], x.shape[2], x.shape[3]);
    let pad = (k / 2) as i64;
    let mut out = Tensor::zeros(&[co, d, h, w]);
    for o in 0..co {
        for z in 0..d {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = kern.bias.data[o];
                    for c in 0..ci {
                        for kz in 0..k {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let (zi, yi, xi) = (
                                        z as i64 + kz as i64 - pad,
                                        y as i64 + ky as i64 - pad,
                                        xx as i64 + kx as i64 - pad,
                                    );
                                    if zi < 0 || yi < 0 || xi < 0 || zi >= d as i64 || yi >= h as i64 || xi >= w as i64 {
                                        continue;
                                    }
                                    let wi = (((o * ci + c) * k + kz) * k + ky) * k + kx;
                                    let ii = ((c * d + zi as usize) * h + yi as usize) * w + xi as usize;
                                    s += kern.weight.data[wi] * x.data[ii];
                                }
                            }
                        }
                    }
                    out.data[((o * d + z) * h + y) * w + xx] = s;
                }
            }
        }
    }
    out
}

#[test]
fn identity_kernel() {
    let x = random_tensor(&[1, 4, 5, 6], 1);
    let mut k = ConvKernel::zeros(1, 1, 3);
    k.weight.data[13] = 1.0;
    assert_eq!(conv3d(&x, &k).unwrap().data, x.data);
}

#[test]
fn impulse_response() {
    let mut x = Tensor::<f64>::zeros(&[1, 5, 5, 5]);
    x.data[(2 * 5 + 2) * 5 + 2] = 1.0;
    let mut k = ConvKernel::zeros(1, 1, 3);
    k.weight.data.fill(1.0);
    let y = conv3d(&x, &k).unwrap();
    for z in 0..5 {
        for yy in 0..5 {
            for xx in 0..5 {
                let inside = (1..=3).contains(&z) && (1..=3).contains(&yy) && (1..=3).contains(&xx);
                assert_eq!(y.data[(z * 5 + yy) * 5 + xx], if inside { 1.0 } else { 0.0 });
            }
        }
    }
}

#[test]
fn matches_naive_loops() {
    let x = random_tensor(&[2, 4, 4, 4], 2);
    let mut k = ConvKernel::<f64>::zeros(3, 2, 3);
    k.weight = random_tensor(&[3, 2, 3, 3, 3], 3);
    k.bias = random_tensor(&[3], 4);
    let fast = conv3d(&x, &k).unwrap();
    let slow = naive(&x, &k);
    for (a, b) in fast.data.iter().zip(&slow.data) {
        assert!((a - b).abs() <= 1e-12);
    }
    let mut k1 = ConvKernel::<f64>::zeros(2, 2, 1);
    k1.weight = random_tensor(&[2, 2, 1, 1, 1], 5);
    let fast = conv3d(&x, &k1).unwrap();
    let slow = naive(&x, &k1);
    for (a, b) in fast.data.iter().zip(&slow.data) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn channel_mismatch() {
    let x = Tensor::<f64>::zeros(&[2, 3, 3, 3]);
    let k = ConvKernel::<f64>::zeros(1, 3, 3);
    assert!(conv3d(&x, &k).is_err());
}

#[test]
fn linear_in_input_without_bias() {
    let x = random_tensor(&[2, 3, 4, 5], 6);
    let y = random_tensor(&[2, 3, 4, 5], 7);
    let mut k = ConvKernel::<f64>::zeros(2, 2, 3);
    k.weight = random_tensor(&[2, 2, 3, 3, 3], 8);
    let (a, b) = (0.7, -1.3);
    let mix = Tensor::from_vec(&x.shape, x.data.iter().zip(&y.data).map(|(p, q)| a * p + b * q).collect()).unwrap();
    let lhs = conv3d(&mix, &k).unwrap();
    let (cx, cy) = (conv3d(&x, &k).unwrap(), conv3d(&y, &k).unwrap());
    for i in 0..lhs.len() {
        assert!((lhs.data[i] - (a * cx.data[i] + b * cy.data[i])).abs() < 1e-12);
    }
}
