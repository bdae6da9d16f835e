use geomem::nn::*;
use geomem::Error;
use geomem::rng::rng_from_seed;
use rand::Rng as _;

fn rand_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = rng_from_seed(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Central finite differences of `f` around every entry of `x`.
fn numeric_grad(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
    let h = 1e-4;
    (0..x.len())
        .map(|i| {
            let mut plus = x.clone();
            plus.data[i] += h;
            let mut minus = x.clone();
            minus.data[i] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64]) {
    for (a, n) in analytic.iter().zip(numeric) {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        assert!(rel <= 1e-4 || (a - n).abs() < 1e-9, "analytic {a} numeric {n}");
    }
}

#[test]
fn sum_grad_is_ones() {
    let mut g = Graph::<f64>::new();
    let x = g.param(rand_tensor(&[2, 3], 1, -1.0, 1.0));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert!(grads.get(x).unwrap().data.iter().all(|&v| v == 1.0));
}

#[test]
fn backward_without_forward() {
    let g = Graph::<f64>::new();
    let mut other = Graph::<f64>::new();
    let foreign = other.constant(Tensor::zeros(&[1]));
    assert!(matches!(g.backward(foreign), Err(Error::NotOnTape)));
}

#[test]
fn reuse_accumulates() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
    let y = g.mul(x, x).unwrap();
    let z = g.add(y, x).unwrap();
    let s = g.sum(z);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data, vec![3.0, 5.0, 7.0]);
}

#[test]
fn conv_squared_kernel_grad() {
    let x = rand_tensor(&[1, 3, 3, 3], 2, -1.0, 1.0);
    let w0 = rand_tensor(&[1, 1, 3, 3, 3], 3, -1.0, 1.0);
    let b0 = rand_tensor(&[1], 4, -1.0, 1.0);
    let loss = |w: &Tensor<f64>| {
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.param(w.clone()), g.param(b0.clone()));
        let y = g.conv3d(xv, wv, bv).unwrap();
        let y2 = g.mul(y, y).unwrap();
        let s = g.sum(y2);
        (g.value(s).data[0], g, wv, s)
    };
    let (_, g, wv, s) = loss(&w0);
    let analytic = g.backward(s).unwrap().get(wv).unwrap().data.clone();
    let numeric = numeric_grad(&w0, |w| loss(w).0);
    assert_close(&analytic, &numeric);
}

#[test]
fn bce_values() {
    let mut g = Graph::<f64>::new();
    let p = g.constant(Tensor::full(&[1, 2, 2, 2], 0.5));
    let t = Tensor::from_vec(&[1, 2, 2, 2], vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
    let l = g.bce(p, &t).unwrap();
    assert!((g.value(l).data[0] - std::f64::consts::LN_2).abs() < 1e-15);

    let exact = g.constant(t.clone());
    let l = g.bce(exact, &t).unwrap();
    assert!(g.value(l).data[0] <= 1.7e-6);

    let pr = rand_tensor(&[5], 9, 0.05, 0.95);
    let tr = Tensor::from_vec(&[5], vec![1.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
    let pv = g.constant(pr.clone());
    let l = g.bce(pv, &tr).unwrap();
    let direct: f64 = pr
        .data
        .iter()
        .zip(&tr.data)
        .map(|(p, t)| -(t * p.ln() + (1.0 - t) * (1.0 - p).ln()))
        .sum::<f64>()
        / 5.0;
    assert!((g.value(l).data[0] - direct).abs() < 1e-14);

    let bad = Tensor::zeros(&[4]);
    assert!(g.bce(pv, &bad).is_err());
}

#[test]
fn weighted_bce_scales_only_the_positive_term() {
    let mut g = Graph::<f64>::new();
    let p = g.constant(Tensor::from_vec(&[4], vec![0.2, 0.7, 0.4, 0.9]).unwrap());
    let t = Tensor::from_vec(&[4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    let l = g.bce_weighted(p, &t, 3.0).unwrap();
    let direct = -(3.0 * 0.2f64.ln() + 0.3f64.ln() + 3.0 * 0.4f64.ln() + 0.1f64.ln()) / 4.0;
    assert!((g.value(l).data[0] - direct).abs() < 1e-14);
    let one = g.bce_weighted(p, &t, 1.0).unwrap();
    let plain = g.bce(p, &t).unwrap();
    assert_eq!(g.value(one).data, g.value(plain).data);

    let logits = rand_tensor(&[6], 4, -2.0, 2.0);
    let tgt = Tensor::from_vec(&[6], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
    let mut g = Graph::<f64>::new();
    let x = g.param(logits.clone());
    let s = g.sigmoid(x);
    let l = g.bce_weighted(s, &tgt, 2.5).unwrap();
    let grads = g.backward(l).unwrap();
    // d/dx of the weighted loss through a sigmoid: ((1−t)·p − w·t·(1−p)) / n.
    for i in 0..6 {
        let p = 1.0 / (1.0 + (-logits.data[i]).exp());
        let t = tgt.data[i];
        let expected = ((1.0 - t) * p - 2.5 * t * (1.0 - p)) / 6.0;
        assert!((grads.get(x).unwrap().data[i] - expected).abs() < 1e-12);
    }
}

#[test]
fn contrastive_values() {
    let mut g = Graph::<f64>::new();
    let e = g.constant(Tensor::from_vec(&[1, 2], vec![0.0, 0.4]).unwrap());
    let l = g.contrastive(e, vec![(0, 1, false)], 1.0).unwrap();
    assert!((g.value(l).data[0] - 0.36).abs() < 1e-15);
    let l = g.contrastive(e, vec![(0, 0, true)], 1.0).unwrap();
    assert_eq!(g.value(l).data[0], 0.0);
    let far = g.constant(Tensor::from_vec(&[1, 2], vec![0.0, 1.5]).unwrap());
    let l = g.contrastive(far, vec![(0, 1, false)], 1.0).unwrap();
    assert_eq!(g.value(l).data[0], 0.0);
    assert!(g.contrastive(far, vec![], 1.0).is_err());
}

#[test]
fn losses_match_finite_differences() {
    let emb0 = rand_tensor(&[3, 6], 11, -0.5, 0.5);
    let pairs = vec![(0, 1, true), (2, 3, false), (4, 5, false), (0, 5, true), (1, 4, false)];
    let f = |e: &Tensor<f64>| {
        let mut g = Graph::new();
        let v = g.param(e.clone());
        let l = g.contrastive(v, pairs.clone(), 1.0).unwrap();
        (g.value(l).data[0], g, v, l)
    };
    let (_, g, v, l) = f(&emb0);
    assert_close(&g.backward(l).unwrap().get(v).unwrap().data, &numeric_grad(&emb0, |e| f(e).0));

    let logits0 = rand_tensor(&[4, 10], 12, -2.0, 2.0);
    let groups = vec![vec![0, 3, 7], vec![1, 2], vec![9]];
    let labels = vec![2, 0, 3];
    let f = |x: &Tensor<f64>| {
        let mut g = Graph::new();
        let v = g.param(x.clone());
        let m = g.group_mean(v, groups.clone()).unwrap();
        let l = g.softmax_ce(m, labels.clone()).unwrap();
        (g.value(l).data[0], g, v, l)
    };
    let (_, g, v, l) = f(&logits0);
    assert_close(&g.backward(l).unwrap().get(v).unwrap().data, &numeric_grad(&logits0, |x| f(x).0));

    let p0 = rand_tensor(&[2, 2, 2, 2], 13, -2.0, 2.0);
    let target = Tensor::from_vec(&[2, 2, 2, 2], (0..16).map(|i| (i % 3 == 0) as u8 as f64).collect()).unwrap();
    let f = |x: &Tensor<f64>| {
        let mut g = Graph::new();
        let v = g.param(x.clone());
        let s = g.sigmoid(v);
        let t = g.tanh(v);
        let om = g.one_minus(s);
        let m = g.mul(om, t).unwrap();
        let sc = g.scale(m, 0.3);
        let a = g.add(sc, s).unwrap();
        let p = g.sigmoid(a);
        let l = g.bce(p, &target).unwrap();
        (g.value(l).data[0], g, v, l)
    };
    let (_, g, v, l) = f(&p0);
    assert_close(&g.backward(l).unwrap().get(v).unwrap().data, &numeric_grad(&p0, |x| f(x).0));
}

#[test]
fn softmax_ce_single_vector() {
    let mut g = Graph::<f64>::new();
    let v = g.constant(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
    let l = g.softmax_ce(v, vec![2]).unwrap();
    let expect = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
    assert!((g.value(l).data[0] - expect).abs() < 1e-14);
}
