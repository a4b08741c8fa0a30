//! InfoNCE over one context, its gold name and mined negatives, with exact
//! gradients for every parameter.

use super::model::{dot, DualEncoderModel, Encoding, Params, Side};

/// Vocabulary ids of one training pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairIds {
    pub context: Vec<usize>,
    pub positive: Vec<usize>,
    pub negatives: Vec<Vec<usize>>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + libm::log(xs.iter().map(|x| libm::exp(x - max)).sum::<f64>())
}

/// Loss for one pair; gradients scaled by `scale` are added into `grads`.
pub(crate) fn accumulate_infonce(
    model: &DualEncoderModel,
    pair: &PairIds,
    scale: f64,
    grads: &mut Params,
) -> f64 {
    let context = model.encode_ids(Side::Code, &pair.context);
    let names: Vec<Encoding> = std::iter::once(&pair.positive)
        .chain(&pair.negatives)
        .map(|ids| model.encode_ids(Side::Name, ids))
        .collect();
    let inv_tau = 1.0 / model.tau();
    let logits: Vec<f64> = names
        .iter()
        .map(|n| dot(&context.unit, &n.unit) * inv_tau)
        .collect();
    let lse = log_sum_exp(&logits);
    let loss = lse - logits[0];

    // d loss / d logit_i = softmax_i - [i == 0]
    let coeffs: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &s)| libm::exp(s - lse) - if i == 0 { 1.0 } else { 0.0 })
        .collect();

    // logit_i = cos_i * exp(-log_tau)
    grads.log_tau -= scale * coeffs.iter().zip(&logits).map(|(g, s)| g * s).sum::<f64>();

    let d = model.dim();
    let mut d_context = vec![0.0; d];
    for (g, name) in coeffs.iter().zip(&names) {
        if *g == 0.0 {
            continue;
        }
        for (acc, u) in d_context.iter_mut().zip(&name.unit) {
            *acc += g * inv_tau * u;
        }
        let d_name: Vec<f64> = context.unit.iter().map(|u| g * inv_tau * u).collect();
        backprop_side(model, Side::Name, name, &d_name, scale, grads);
    }
    backprop_side(model, Side::Code, &context, &d_context, scale, grads);
    loss
}

fn backprop_side(
    model: &DualEncoderModel,
    side: Side,
    enc: &Encoding,
    d_unit: &[f64],
    scale: f64,
    grads: &mut Params,
) {
    let d = model.dim();
    let norm = enc.norm.max(1e-12);
    let radial = dot(&enc.unit, d_unit);
    let d_proj_out: Vec<f64> = d_unit
        .iter()
        .zip(&enc.unit)
        .map(|(du, u)| scale * (du - u * radial) / norm)
        .collect();

    let (proj, g_table, g_proj) = match side {
        Side::Code => (
            &model.params.code_projection,
            &mut grads.code_embeddings,
            &mut grads.code_projection,
        ),
        Side::Name => (
            &model.params.name_projection,
            &mut grads.name_embeddings,
            &mut grads.name_projection,
        ),
    };
    let mut d_pooled = vec![0.0; d];
    for i in 0..d {
        let dz = d_proj_out[i];
        if dz == 0.0 {
            continue;
        }
        let row = &proj[i * d..(i + 1) * d];
        let g_row = &mut g_proj[i * d..(i + 1) * d];
        for j in 0..d {
            g_row[j] += dz * enc.pooled[j];
            d_pooled[j] += row[j] * dz;
        }
    }
    let inv = 1.0 / enc.ids.len() as f64;
    for &id in &enc.ids {
        for (g, dh) in g_table[id * d..(id + 1) * d].iter_mut().zip(&d_pooled) {
            *g += dh * inv;
        }
    }
}

/// Loss and full gradient for one pair.
pub fn infonce_loss_ids(model: &DualEncoderModel, pair: &PairIds) -> (f64, Params) {
    let mut grads = Params::zeros(model.params.vocab_size, model.dim());
    let loss = accumulate_infonce(model, pair, 1.0, &mut grads);
    (loss, grads)
}
