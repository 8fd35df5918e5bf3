//! Compares tape gradients of the caption loss with central finite
//! differences, block by block, on a small random model.

use groundcap::losses::cross_entropy_loss;
use groundcap::model::{DecoderGraph, ModelConfig, ModelParams, PARAM_NAMES};
use groundcap::tape::{GradientTape, Gradients, ParamId};

fn loss(params: &ModelParams, features: &[Vec<f64>], targets: &[usize]) -> groundcap::Result<(f64, Gradients)> {
    let mut tape = GradientTape::new();
    let bound = params.bind(&mut tape);
    let graph = DecoderGraph::new(&mut tape, bound, params)?;
    let z = graph.project(&mut tape, features)?;
    let ctx = graph.context(&mut tape, z)?;
    let lps = graph.sequence_logprob(&mut tape, &ctx, targets, None)?;
    let l = cross_entropy_loss(&mut tape, &lps)?;
    Ok((tape.value(l).item(), tape.backward(l)?))
}

fn main() -> groundcap::Result<()> {
    let mut params = ModelParams::init(ModelConfig::new(6, 4, 9), 3)?;
    let features = vec![vec![0.5, -1.0, 0.2, 0.8], vec![-0.3, 0.4, 1.2, 0.0]];
    let targets = [4, 7, 5, 1];
    let (_, grads) = loss(&params, &features, &targets)?;
    let h = 1e-5;

    for (i, name) in PARAM_NAMES.iter().enumerate() {
        let id = ParamId(i);
        let analytic = grads.get(id).expect("every block receives a gradient").data().to_vec();
        let mut worst: f64 = 0.0;
        for k in 0..analytic.len() {
            let orig = params.block_mut(id).data()[k];
            params.block_mut(id).data_mut()[k] = orig + h;
            let up = loss(&params, &features, &targets)?.0;
            params.block_mut(id).data_mut()[k] = orig - h;
            let down = loss(&params, &features, &targets)?.0;
            params.block_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let scale = analytic[k].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic[k] - numeric).abs() / scale);
        }
        println!("{name:<14} {:4} entries  max rel err {worst:.2e}", analytic.len());
    }
    Ok(())
}
