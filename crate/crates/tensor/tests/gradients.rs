use rand::Rng;
use rand_chacha::ChaCha8Rng;
use stegan_tensor::{grad_check, SeedSplitter, Tensor, Var};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Keeps probe points away from the leaky-ReLU kink at zero.
fn nudge(t: Tensor<f64>) -> Tensor<f64> {
    t.map(|v| if v.abs() < 0.05 { v + 0.1f64.copysign(v) } else { v })
}

/// Weighting tensor so the scalar loss exercises every output element.
fn weighted_sum<'t>(y: Var<'t, f64>, r: Var<'t, f64>) -> Var<'t, f64> {
    y.mul(r).unwrap().sum()
}

#[test]
fn dense_layer_matches_finite_differences() {
    for seed in 0..20 {
        let mut rng = SeedSplitter::new(seed).stream(0);
        let (n, k, f) = (rng.gen_range(1..4), rng.gen_range(1..6), rng.gen_range(1..5));
        let inputs = [
            rand_tensor(&mut rng, &[n, k]),
            rand_tensor(&mut rng, &[k, f]),
            rand_tensor(&mut rng, &[f]),
            rand_tensor(&mut rng, &[n, f]),
        ];
        let err = grad_check(&inputs, EPS, |_, v| {
            let y = v[0].matmul(v[1]).unwrap().bias_add(v[2]).unwrap();
            weighted_sum(y, v[3])
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn conv_layers_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = SeedSplitter::new(seed).stream(1);
        let (n, c, f) = (rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(1..3));
        let k = rng.gen_range(1..4);
        let stride = rng.gen_range(1..3);
        let pad = rng.gen_range(0..2).min((k - 1) / 2);
        let ho = rng.gen_range(1..4);
        let h = (ho - 1) * stride + k - 2 * pad;
        let w = h;
        let x = rand_tensor(&mut rng, &[n, c, h, w]);
        let kern = rand_tensor(&mut rng, &[f, c, k, k]);
        let r = rand_tensor(&mut rng, &[n, f, ho, ho]);
        let err = grad_check(&[x, kern, r], EPS, |_, v| {
            weighted_sum(v[0].conv2d(v[1], stride, pad).unwrap(), v[2])
        });
        assert!(err < TOL, "conv seed {seed}: {err}");

        let x = rand_tensor(&mut rng, &[n, c, h, w]);
        let kern = rand_tensor(&mut rng, &[c, f, k, k]);
        let ho = (h - 1) * stride + k - 2 * pad;
        let wo = ho;
        let r = rand_tensor(&mut rng, &[n, f, ho, wo]);
        let err = grad_check(&[x, kern, r], EPS, |_, v| {
            weighted_sum(v[0].conv_transpose2d(v[1], stride, pad).unwrap(), v[2])
        });
        assert!(err < TOL, "tconv seed {seed}: {err}");
    }
}

#[test]
fn batch_norm_matches_finite_differences_in_both_modes() {
    for seed in 0..20 {
        let mut rng = SeedSplitter::new(seed).stream(2);
        let (n, c, hw) = (rng.gen_range(2..4), rng.gen_range(1..3), rng.gen_range(1..3));
        let inputs = [
            rand_tensor(&mut rng, &[n, c, hw, hw]),
            rand_tensor(&mut rng, &[c]).map(|v| v + 1.5),
            rand_tensor(&mut rng, &[c]),
            rand_tensor(&mut rng, &[n, c, hw, hw]),
        ];
        let err = grad_check(&inputs, EPS, |_, v| {
            let (y, _) = v[0].batch_norm_train(v[1], v[2], 1e-5).unwrap();
            weighted_sum(y, v[3])
        });
        assert!(err < TOL, "train seed {seed}: {err}");
        let mean: Vec<f64> = (0..c).map(|i| 0.1 * i as f64).collect();
        let var: Vec<f64> = (0..c).map(|i| 0.5 + i as f64).collect();
        let err = grad_check(&inputs, EPS, |_, v| {
            let y = v[0].batch_norm_eval(v[1], v[2], &mean, &var, 1e-5).unwrap();
            weighted_sum(y, v[3])
        });
        assert!(err < TOL, "eval seed {seed}: {err}");
    }
}

#[test]
fn activations_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = SeedSplitter::new(seed).stream(3);
        let x = nudge(rand_tensor(&mut rng, &[7]).map(|v| v * 3.0));
        let r = rand_tensor(&mut rng, &[7]);
        let acts: [(&str, fn(Var<'_, f64>) -> Var<'_, f64>); 5] = [
            ("leaky_relu", |v| v.leaky_relu(0.2)),
            ("relu", |v| v.relu()),
            ("sigmoid", |v| v.sigmoid()),
            ("tanh", |v| v.tanh()),
            ("ln_sigmoid", |v| v.sigmoid().ln()),
        ];
        for (name, act) in acts {
            let err = grad_check(&[x.clone(), r.clone()], EPS, |_, v| weighted_sum(act(v[0]), v[1]));
            assert!(err < TOL, "{name} seed {seed}: {err}");
        }
    }
}

#[test]
fn composed_fragment_matches_finite_differences() {
    let mut rng = SeedSplitter::new(77).stream(4);
    let inputs = [
        nudge(rand_tensor(&mut rng, &[2, 2, 4, 4])),
        rand_tensor(&mut rng, &[3, 2, 2, 2]),
        rand_tensor(&mut rng, &[3, 2, 2, 2]),
        rand_tensor(&mut rng, &[2, 2, 4, 4]),
    ];
    let err = grad_check(&inputs, EPS, |_, v| {
        let a = v[0].conv2d(v[1], 2, 0).unwrap().leaky_relu(0.2);
        let b = a.conv_transpose2d(v[2], 2, 0).unwrap().tanh();
        let skip = stegan_tensor::Var::concat_channels(&[b, v[0]]).unwrap();
        let target = stegan_tensor::Var::concat_channels(&[v[3], v[3]]).unwrap();
        skip.sub(target).unwrap().square().mean()
    });
    assert!(err < TOL, "{err}");
}
