//! Backpropagated network gradients against central finite differences of
//! a loss recomputed here from the network outputs.

use moving_targets::learners::mlp::{MlpParams, MlpTargets, OutputKind};
use moving_targets::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

struct Net {
    params: MlpParams<f64>,
    x: Matrix<f64>,
    classes: Vec<usize>,
    values: Vec<f64>,
    rows: Vec<usize>,
}

fn random_net(rng: &mut ChaCha8Rng, output: OutputKind) -> Net {
    let inputs = rng.random_range(1..=5);
    let depth = rng.random_range(1..=3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=6)).collect();
    let outputs = match output {
        OutputKind::Softmax => rng.random_range(2..=4),
        OutputKind::Linear => rng.random_range(1..=2),
    };
    let mut params = MlpParams::init(inputs, &hidden, outputs, output, rng);
    // nonzero biases so rectifiers are not all switched at the same point
    let flat: Vec<f64> = params.to_flat().iter().map(|w| w + rng.random_range(-0.3..0.3)).collect();
    params.set_flat(&flat);
    let m = rng.random_range(3..=12);
    let x = Matrix::new(m, inputs, (0..m * inputs).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let rows: Vec<usize> = (0..rng.random_range(1..=m)).map(|_| rng.random_range(0..m)).collect();
    Net {
        params,
        x,
        classes: (0..m).map(|_| rng.random_range(0..outputs)).collect(),
        values: (0..m).map(|_| rng.random_range(-3.0..3.0)).collect(),
        rows,
    }
}

fn targets(net: &Net) -> MlpTargets<'_, f64> {
    match net.params.output {
        OutputKind::Softmax => MlpTargets::Classes(&net.classes),
        OutputKind::Linear => MlpTargets::Values(&net.values),
    }
}

/// Mean batch loss from the raw outputs: cross-entropy or per-output squared error.
fn reference_loss(net: &Net, params: &MlpParams<f64>) -> f64 {
    let out = params.outputs(&net.x);
    let k = out.cols();
    let total: f64 = net
        .rows
        .iter()
        .map(|&r| match params.output {
            OutputKind::Softmax => -out.get(r, net.classes[r]).ln(),
            OutputKind::Linear => (0..k).map(|j| (out.get(r, j) - net.values[r]).powi(2)).sum::<f64>() / k as f64,
        })
        .sum();
    total / net.rows.len() as f64
}

fn relative_error(net: &Net) -> Result<f64, String> {
    let (loss, grad) = net.params.loss_and_gradient(&net.x, targets(net), &net.rows);
    let reference = reference_loss(net, &net.params);
    if (loss - reference).abs() > 1e-12 * loss.abs().max(1.0) {
        return Err(format!("loss {loss} differs from the recomputed {reference}"));
    }
    let base = net.params.to_flat();
    let mut probe = net.params.clone();
    let numeric: Vec<f64> = (0..base.len())
        .map(|p| {
            let mut w = base.clone();
            w[p] = base[p] + STEP;
            probe.set_flat(&w);
            let up = reference_loss(net, &probe);
            w[p] = base[p] - STEP;
            probe.set_flat(&w);
            let down = reference_loss(net, &probe);
            (up - down) / (2.0 * STEP)
        })
        .collect();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let diff: Vec<f64> = grad.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    Ok(norm(&diff) / norm(&grad).max(norm(&numeric)).max(1e-12))
}

/// Largest relative gradient error over `networks` random networks,
/// alternating softmax and linear outputs.
pub fn worst_relative_error(networks: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for n in 0..networks {
        let output = if n % 2 == 0 { OutputKind::Softmax } else { OutputKind::Linear };
        let net = random_net(&mut rng, output);
        let err = relative_error(&net)?;
        if err.is_nan() || err > TOLERANCE {
            return Err(format!("network {n} ({output:?}): relative error {err:.2e}"));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}
