use proptest::prelude::*;
use rawbmamba::bimamba::reverse_sequence;
use rawbmamba::ssm::{causal_convolve, discretize_zoh, lti_kernel, selective_scan};
use rawbmamba::tensor::Tensor;

fn lti_case() -> impl Strategy<Value = (usize, usize, usize, f64, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..4, 1usize..6, 1usize..20, 0.01f64..2.0).prop_flat_map(|(e, n, l, d)| {
        (
            Just(e),
            Just(n),
            Just(l),
            Just(d),
            prop::collection::vec(-3.0f64..-0.01, e * n),
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(-1.0f64..1.0, l * e),
        )
    })
}

fn scan_lti(e: usize, n: usize, l: usize, d: f64, a: &[f64], b: &[f64], c: &[f64], x: &[f64]) -> Vec<f64> {
    let a = Tensor::new(a.to_vec(), &[e, n]).unwrap();
    let pair = discretize_zoh(
        &a,
        &Tensor::full(&[1, l, e], d),
        &Tensor::new(b.repeat(l), &[1, l, n]).unwrap(),
        &Tensor::new(x.to_vec(), &[1, l, e]).unwrap(),
    )
    .unwrap();
    selective_scan(&pair, &Tensor::new(c.repeat(l), &[1, l, n]).unwrap()).unwrap().to_vec()
}

proptest! {
    #[test]
    fn recurrence_equals_convolution((e, n, l, d, a, b, c, x) in lti_case()) {
        let y = scan_lti(e, n, l, d, &a, &b, &c, &x);
        let k = lti_kernel(
            &Tensor::new(a.clone(), &[e, n]).unwrap(),
            d,
            &Tensor::new(b.clone(), &[n]).unwrap(),
            &Tensor::new(c.clone(), &[n]).unwrap(),
            l,
        ).unwrap();
        let conv = causal_convolve(&Tensor::new(x, &[1, l, e]).unwrap(), &k).unwrap();
        for (p, q) in y.iter().zip(conv.data()) {
            prop_assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn scan_is_linear_in_input((e, n, l, d, a, b, c, x) in lti_case(), s in -3.0f64..3.0) {
        let y = scan_lti(e, n, l, d, &a, &b, &c, &x);
        let xs: Vec<f64> = x.iter().map(|v| v * s).collect();
        let ys = scan_lti(e, n, l, d, &a, &b, &c, &xs);
        for (p, q) in y.iter().zip(&ys) {
            prop_assert!((p * s - q).abs() < 1e-10);
        }
    }

    #[test]
    fn scan_prefix_ignores_future((e, n, l, d, a, b, c, x) in lti_case(), cut in 0usize..20) {
        let cut = cut.min(l);
        let y = scan_lti(e, n, l, d, &a, &b, &c, &x);
        let mut z = x.clone();
        for v in &mut z[cut * e..] {
            *v += 1.0;
        }
        let yz = scan_lti(e, n, l, d, &a, &b, &c, &z);
        prop_assert_eq!(&y[..cut * e], &yz[..cut * e]);
    }

    #[test]
    fn zoh_coefficient_matches_integral(a in -5.0f64..-1e-3, d in 1e-9f64..3.0) {
        // ∫_0^Δ e^{a s} ds by composite Simpson on a fine grid
        let steps = 2000;
        let h = d / steps as f64;
        let f = |s: f64| (a * s).exp();
        let mut acc = f(0.0) + f(d);
        for i in 1..steps {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        let integral = acc * h / 3.0;
        let one = |v: f64| Tensor::full(&[1, 1, 1], v);
        let pair = discretize_zoh(&Tensor::full(&[1, 1], a), &one(d), &one(1.0), &one(1.0)).unwrap();
        prop_assert!((pair.b_bar_x.data()[0] - integral).abs() <= 1e-9 * integral);
        prop_assert!((pair.a_bar.data()[0] - (a * d).exp()).abs() < 1e-15);
    }

    #[test]
    fn reversal_is_an_involution(b in 1usize..3, l in 1usize..12, c in 1usize..4, seed in any::<u64>()) {
        let mut rng = rawbmamba::layers::SeededRng::new(seed);
        let x = Tensor::new(rng.uniform_vec(b * l * c, -1.0, 1.0), &[b, l, c]).unwrap();
        let r = reverse_sequence(&x).unwrap();
        prop_assert_eq!(&r.data()[..c], &x.data()[(l - 1) * c..l * c]);
        prop_assert_eq!(reverse_sequence(&r).unwrap().to_vec(), x.to_vec());
    }
}
