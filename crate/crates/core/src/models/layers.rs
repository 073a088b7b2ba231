//! Length-aware building blocks shared by the baselines and the hybrids.

use candle_core::{DType, Tensor};
use candle_nn::rnn::{Direction, LSTMConfig, LSTM, RNN};
use candle_nn::{Init, VarBuilder};

use crate::error::Result;

/// Max over time of non-negative convolution outputs `(b, filters, p)`.
///
/// Output position `j` of a width-`kernel` convolution is kept when its
/// window lies inside the real tokens (`j + kernel <= len`). Position 0 is
/// always kept, so inputs shorter than the kernel pool over one window that
/// reads zero-vector padding. Dropped positions are zeroed, which leaves the
/// maximum unchanged because the inputs are post-ReLU.
pub fn masked_max_over_time(conv: &Tensor, lengths: &[usize], kernel: usize) -> Result<Tensor> {
    let (b, _, p) = conv.dims3()?;
    let mut valid = Vec::with_capacity(b * p);
    for &len in lengths {
        for j in 0..p {
            valid.push(if j == 0 || j + kernel <= len { 1f32 } else { 0f32 });
        }
    }
    let valid = Tensor::from_vec(valid, (b, 1, p), conv.device())?.to_dtype(conv.dtype())?;
    Ok(conv.broadcast_mul(&valid)?.max(2)?)
}

/// Row `i` of `seq` `(b, t, h)` at position `lengths[i] - 1`, as `(b, h)`.
pub fn final_state(seq: &Tensor, lengths: &[usize]) -> Result<Tensor> {
    let (b, t, _) = seq.dims3()?;
    let mut pick = vec![0f32; b * t];
    for (i, &len) in lengths.iter().enumerate() {
        pick[i * t + len.clamp(1, t) - 1] = 1.0;
    }
    let pick = Tensor::from_vec(pick, (b, 1, t), seq.device())?.to_dtype(seq.dtype())?;
    Ok(pick.matmul(&seq.contiguous()?)?.squeeze(1)?)
}

/// Reverses the first `lengths[i]` positions of each row of `x` `(b, t, d)`
/// and leaves padding positions in place. Applying it twice is the identity.
pub fn reverse_prefix(x: &Tensor, lengths: &[usize]) -> Result<Tensor> {
    let (b, t, _) = x.dims3()?;
    let mut perm = vec![0f32; b * t * t];
    for (i, &len) in lengths.iter().enumerate() {
        let len = len.min(t);
        for pos in 0..t {
            let src = if pos < len { len - 1 - pos } else { pos };
            perm[i * t * t + pos * t + src] = 1.0;
        }
    }
    let perm = Tensor::from_vec(perm, (b, t, t), x.device())?.to_dtype(x.dtype())?;
    Ok(perm.matmul(&x.contiguous()?)?)
}

/// Stacked unidirectional or bidirectional LSTM with per-row lengths.
///
/// Parameters follow the usual layout (`weight_ih_l{k}`, `_reverse` suffix
/// for the backward direction, gate order input/forget/cell/output).
#[derive(Debug, Clone)]
pub struct LstmStack {
    layers: Vec<(LSTM, Option<LSTM>)>,
    hidden: usize,
}

impl LstmStack {
    pub fn new(
        vb: VarBuilder,
        in_dim: usize,
        hidden: usize,
        num_layers: usize,
        bidirectional: bool,
    ) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let uniform = Init::Uniform {
            lo: -bound,
            up: bound,
        };
        let config = |layer_idx, direction| LSTMConfig {
            w_ih_init: uniform,
            w_hh_init: uniform,
            b_ih_init: Some(uniform),
            b_hh_init: Some(uniform),
            layer_idx,
            direction,
        };
        let dirs = if bidirectional { 2 } else { 1 };
        let mut layers = Vec::with_capacity(num_layers);
        for layer in 0..num_layers {
            let input = if layer == 0 { in_dim } else { hidden * dirs };
            let fwd = LSTM::new(input, hidden, config(layer, Direction::Forward), vb.clone())?;
            let bwd = if bidirectional {
                Some(LSTM::new(
                    input,
                    hidden,
                    config(layer, Direction::Backward),
                    vb.clone(),
                )?)
            } else {
                None
            };
            layers.push((fwd, bwd));
        }
        Ok(Self { layers, hidden })
    }

    pub fn output_dim(&self) -> usize {
        let dirs = if self.is_bidirectional() { 2 } else { 1 };
        self.hidden * dirs
    }

    pub fn is_bidirectional(&self) -> bool {
        self.layers.first().is_some_and(|(_, b)| b.is_some())
    }

    fn run(lstm: &LSTM, x: &Tensor) -> Result<Tensor> {
        let states = lstm.seq(x)?;
        Ok(lstm.states_to_tensor(&states)?)
    }

    /// Runs over `x` `(b, t, d)` and returns the per-position outputs
    /// `(b, t, output_dim)` and the final states `(b, output_dim)`. For the
    /// backward direction the final state is the one after reading each
    /// row's first token.
    pub fn forward(&self, x: &Tensor, lengths: &[usize]) -> Result<(Tensor, Tensor)> {
        let mut input = x.clone();
        let mut finals = None;
        for (fwd, bwd) in &self.layers {
            let out_f = Self::run(fwd, &input)?;
            let final_f = final_state(&out_f, lengths)?;
            match bwd {
                Some(bwd) => {
                    let reversed = reverse_prefix(&input, lengths)?;
                    let out_b_rev = Self::run(bwd, &reversed)?;
                    let final_b = final_state(&out_b_rev, lengths)?;
                    let out_b = reverse_prefix(&out_b_rev, lengths)?;
                    input = Tensor::cat(&[&out_f, &out_b], 2)?;
                    finals = Some(Tensor::cat(&[&final_f, &final_b], 1)?);
                }
                None => {
                    input = out_f;
                    finals = Some(final_f);
                }
            }
        }
        Ok((input, finals.expect("at least one layer")))
    }
}

/// `(b, t)` float mask from `u32` attention ids, expanded to `(b, t, 1)`.
pub(crate) fn mask3(mask: &Tensor, dtype: DType) -> Result<Tensor> {
    Ok(mask.to_dtype(dtype)?.unsqueeze(2)?)
}
