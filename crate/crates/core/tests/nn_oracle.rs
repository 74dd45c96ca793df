use edgeskills::nn::{log_softmax, polyak_update, Activation, LayerSpec, Mlp, ParameterSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ACTIVATIONS: [Activation; 3] = [Activation::Tanh, Activation::Relu, Activation::Identity];

/// A network of 1..=3 layers with widths 1..=16, random activations, and
/// parameters perturbed away from zero so biases matter.
fn random_network(seed: u64) -> (Mlp, ParameterSet<f64>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = rng.random_range(1..=3);
    let mut widths = vec![rng.random_range(1..=16)];
    for _ in 0..layers {
        widths.push(rng.random_range(1..=16));
    }
    let specs = widths
        .windows(2)
        .map(|w| LayerSpec::new(w[0], w[1], ACTIVATIONS[rng.random_range(0..3)]))
        .collect();
    let mlp = Mlp::new(specs).unwrap();
    let mut params: ParameterSet<f64> = mlp.init(&mut rng);
    for a in params.arrays_mut() {
        for v in &mut a.data {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    (mlp, params, rng)
}

/// Straight-line forward pass written independently of the library.
fn oracle_forward(mlp: &Mlp, params: &ParameterSet<f64>, input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    for (l, s) in mlp.specs().iter().enumerate() {
        let w = &params.get(&Mlp::weight_name(l)).unwrap().data;
        let b = &params.get(&Mlp::bias_name(l)).unwrap().data;
        let mut y = vec![0.0; s.output_size];
        for j in 0..s.output_size {
            let mut acc = b[j];
            for i in 0..s.input_size {
                acc += x[i] * w[i * s.output_size + j];
            }
            y[j] = match s.activation {
                Activation::Tanh => acc.tanh(),
                Activation::Relu => acc.max(0.0),
                Activation::Identity => acc,
            };
        }
        x = y;
    }
    x
}

fn objective(mlp: &Mlp, params: &ParameterSet<f64>, inputs: &[f64], batch: usize, weights: &[f64]) -> f64 {
    let out = mlp.forward_batch(params, inputs, batch).unwrap().into_output();
    out.iter().zip(weights).map(|(o, c)| o * c).sum()
}

fn entry_matches(analytic: f64, numeric: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-8 {
        (analytic - numeric).abs() < 1e-8
    } else {
        (analytic - numeric).abs() / scale <= 1e-4
    }
}

/// `(matching, total)` over every parameter and input entry.
fn gradient_check(seed: u64) -> (usize, usize) {
    const H: f64 = 1e-5;
    let (mlp, params, mut rng) = random_network(seed);
    let batch = rng.random_range(1..=3);
    let inputs: Vec<f64> = (0..batch * mlp.input_size()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let weights: Vec<f64> = (0..batch * mlp.output_size()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let tape = mlp.forward_batch(&params, &inputs, batch).unwrap();
    let grads = mlp.backward_with_input(&params, &tape, &weights).unwrap();

    let (mut ok, mut total) = (0, 0);
    for (ai, array) in params.arrays().iter().enumerate() {
        for k in 0..array.data.len() {
            let mut plus = params.clone();
            plus.arrays_mut()[ai].data[k] += H;
            let mut minus = params.clone();
            minus.arrays_mut()[ai].data[k] -= H;
            let numeric =
                (objective(&mlp, &plus, &inputs, batch, &weights) - objective(&mlp, &minus, &inputs, batch, &weights)) / (2.0 * H);
            let analytic = grads.params.arrays()[ai].data[k];
            ok += entry_matches(analytic, numeric) as usize;
            total += 1;
        }
    }
    for k in 0..inputs.len() {
        let mut plus = inputs.clone();
        plus[k] += H;
        let mut minus = inputs.clone();
        minus[k] -= H;
        let numeric =
            (objective(&mlp, &params, &plus, batch, &weights) - objective(&mlp, &params, &minus, batch, &weights)) / (2.0 * H);
        ok += entry_matches(grads.input[k], numeric) as usize;
        total += 1;
    }
    (ok, total)
}

#[test]
fn gradients_match_central_differences_on_100_networks() {
    let (ok, total) = (0..100).map(gradient_check).fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let fraction = ok as f64 / total as f64;
    assert!(fraction >= 0.99, "{ok}/{total} entries matched");
}

proptest! {
    #[test]
    fn forward_matches_straight_line_oracle(seed in any::<u64>(), batch in 1usize..5) {
        let (mlp, params, mut rng) = random_network(seed);
        let inputs: Vec<f64> = (0..batch * mlp.input_size()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let out = mlp.forward_batch(&params, &inputs, batch).unwrap().into_output();
        for (row, got) in inputs.chunks(mlp.input_size()).zip(out.chunks(mlp.output_size())) {
            for (a, b) in oracle_forward(&mlp, &params, row).iter().zip(got) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn batch_rows_are_independent(seed in any::<u64>()) {
        let (mlp, params, mut rng) = random_network(seed);
        let inputs: Vec<f64> = (0..3 * mlp.input_size()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let batched = mlp.forward_batch(&params, &inputs, 3).unwrap().into_output();
        for (row, got) in inputs.chunks(mlp.input_size()).zip(batched.chunks(mlp.output_size())) {
            let (single, _) = mlp.forward(&params, row).unwrap();
            for (a, b) in single.iter().zip(got) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn log_softmax_exponentiates_to_a_distribution(
        logits in prop::collection::vec(-700.0f64..700.0, 1..80)
    ) {
        let lp = log_softmax(&logits);
        let sum: f64 = lp.iter().map(|v| v.exp()).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9, "{sum}");
        prop_assert!(lp.iter().all(|v| *v <= 0.0 && v.is_finite()));
    }

    #[test]
    fn polyak_extremes_and_fixed_point(seed in any::<u64>(), tau in 0.0f64..=1.0) {
        let (mlp, online, mut rng) = random_network(seed);
        let target: ParameterSet<f64> = mlp.init(&mut rng);

        let mut same = online.clone();
        polyak_update(&mut same, &online, tau).unwrap();
        for (a, b) in same.arrays().iter().zip(online.arrays()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                prop_assert!((x - y).abs() <= 1e-15 * (1.0 + y.abs()));
            }
        }

        let mut copy = target.clone();
        polyak_update(&mut copy, &online, 1.0).unwrap();
        prop_assert_eq!(&copy, &online);

        let mut kept = target.clone();
        polyak_update(&mut kept, &online, 0.0).unwrap();
        prop_assert_eq!(&kept, &target);
    }
}
