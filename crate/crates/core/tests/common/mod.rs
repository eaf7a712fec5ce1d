use easecore::arch::{self, ArchitectureSpec};
use easecore::data::ImageShape;
use easecore::nn::{softmax_cross_entropy, Graph, ModelState, Tensor};
use easecore::rng::{self, Stream};
use rand::Rng;

/// Compares analytic gradients of the mean batch loss of a plain CNN on a
/// random 4-example batch with central differences at `per_param` sampled
/// coordinates of every parameter tensor. Returns `(agreeing, checked)`,
/// where agreement means relative error at most `1e-3`.
pub fn plain_cnn_gradient_agreement(per_param: usize) -> (usize, usize) {
    let shape = ImageShape {
        channels: 2,
        height: 8,
        width: 8,
    };
    let spec = ArchitectureSpec::new("plain-cnn", 3, 3, 4, shape);
    let net = arch::build(&spec).unwrap();
    let mut state = net.init(3);
    let mut rng = rng::stream(8, Stream::Sampling);
    let input = Tensor::new(
        vec![4, 2, 8, 8],
        (0..4 * shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    let labels = [0, 3, 1, 2];
    let loss = |state: &ModelState| -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::new(state, true);
        let x = g.input(input.clone());
        let logits = net.forward(&mut g, x);
        let (losses, seed) = softmax_cross_entropy(g.value(logits), &labels);
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        (mean, g.backward(logits, seed))
    };
    let (_, grads) = loss(&state);

    let mut checked = 0;
    let mut agree = 0;
    for pi in 0..state.params.len() {
        for _ in 0..per_param {
            let j = rng.random_range(0..state.params[pi].data.len());
            let h = 1e-5;
            let orig = state.params[pi].data[j];
            state.params[pi].data[j] = orig + h;
            let plus = loss(&state).0;
            state.params[pi].data[j] = orig - h;
            let minus = loss(&state).0;
            state.params[pi].data[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads[pi][j];
            let scale = numeric.abs().max(analytic.abs());
            checked += 1;
            if (numeric - analytic).abs() <= 1e-3 * scale || scale < 1e-9 {
                agree += 1;
            }
        }
    }
    (agree, checked)
}
