//! Forward passes of the six architecture kinds.

use candle_core::{IndexOp, Module, Tensor};
use candle_nn::{Embedding, Init, Linear, VarBuilder};

use super::encoder::{Backbone, EncoderConfig};
use super::layers::{mask3, masked_max_over_time, LstmStack};
use super::{Batch, Dropout, ModelKind, ModelSpec};
use crate::corpus::NUM_CLASSES;
use crate::error::{Error, Result};

/// A valid (unpadded) 1-D convolution computed as windows times a matrix.
///
/// Parameters keep the usual `(filters, in, kernel)` layout. The windowed
/// matmul replaces the backend convolution, whose kernel gradient is wrong
/// for batches larger than one.
struct Conv {
    weight: Tensor,
    bias: Tensor,
    kernel: usize,
}

impl Conv {
    fn new(vb: VarBuilder, in_dim: usize, filters: usize, kernel: usize) -> Result<Self> {
        let weight = vb.get_with_hints(
            (filters, in_dim, kernel),
            "weight",
            candle_nn::init::DEFAULT_KAIMING_NORMAL,
        )?;
        let bound = 1.0 / (in_dim as f64).sqrt();
        let bias = vb.get_with_hints(
            filters,
            "bias",
            Init::Uniform {
                lo: -bound,
                up: bound,
            },
        )?;
        Ok(Self {
            weight,
            bias,
            kernel,
        })
    }

    /// `x` `(b, t, d)` to `(b, filters, t - kernel + 1)`.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let positions = t + 1 - self.kernel;
        let windows = (0..self.kernel)
            .map(|k| x.narrow(1, k, positions))
            .collect::<candle_core::Result<Vec<_>>>()?;
        // (b, p, d, k) flattened so features run channel-major like the weight.
        let windows = Tensor::stack(&windows, 3)?.reshape((b * positions, d * self.kernel))?;
        let filters = self.weight.dim(0)?;
        let w = self.weight.reshape((filters, d * self.kernel))?;
        let out = windows
            .matmul(&w.t()?)?
            .broadcast_add(&self.bias)?
            .reshape((b, positions, filters))?;
        Ok(out.transpose(1, 2)?.contiguous()?)
    }
}

pub(crate) struct ConvBank {
    convs: Vec<Conv>,
}

impl ConvBank {
    fn new(vb: VarBuilder, in_dim: usize, spec: &ModelSpec) -> Result<Self> {
        let convs = spec
            .kernel_sizes
            .iter()
            .enumerate()
            .map(|(i, &k)| Conv::new(vb.pp(format!("convs.{i}")), in_dim, spec.conv_filters, k))
            .collect::<Result<_>>()?;
        Ok(Self { convs })
    }

    fn output_dim(&self, spec: &ModelSpec) -> usize {
        spec.conv_filters * self.convs.len()
    }

    /// `x` is `(b, t, d)` with padding rows already zeroed.
    fn forward(&self, x: &Tensor, lengths: &[usize]) -> Result<Tensor> {
        let pooled = self
            .convs
            .iter()
            .map(|conv| masked_max_over_time(&conv.forward(x)?.relu()?, lengths, conv.kernel))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&pooled, 1)?)
    }
}

pub(crate) enum EncoderHead {
    Pooled { pooler: Linear },
    Cnn { convs: ConvBank },
    Bilstm { lstm: LstmStack },
}

pub(crate) enum Net {
    Cnn {
        embedding: Embedding,
        convs: ConvBank,
        classifier: Linear,
    },
    Recurrent {
        embedding: Embedding,
        lstm: LstmStack,
        classifier: Linear,
    },
    Encoder {
        backbone: Backbone,
        head: EncoderHead,
        classifier: Linear,
    },
}

impl Net {
    /// Baseline networks; all parameters come from `vb`.
    pub fn baseline(spec: &ModelSpec, vb: VarBuilder) -> Result<Self> {
        let embedding = candle_nn::embedding(spec.vocab_size, spec.embed_dim, vb.pp("embedding"))?;
        Ok(match spec.kind {
            ModelKind::Cnn => {
                let convs = ConvBank::new(vb.clone(), spec.embed_dim, spec)?;
                let classifier =
                    candle_nn::linear(convs.output_dim(spec), NUM_CLASSES, vb.pp("classifier"))?;
                Net::Cnn {
                    embedding,
                    convs,
                    classifier,
                }
            }
            ModelKind::Lstm | ModelKind::Bilstm => {
                let lstm = LstmStack::new(
                    vb.pp("lstm"),
                    spec.embed_dim,
                    spec.lstm_hidden,
                    spec.lstm_layers,
                    spec.kind == ModelKind::Bilstm,
                )?;
                let classifier =
                    candle_nn::linear(lstm.output_dim(), NUM_CLASSES, vb.pp("classifier"))?;
                Net::Recurrent {
                    embedding,
                    lstm,
                    classifier,
                }
            }
            kind => unreachable!("{kind:?} is not a baseline"),
        })
    }

    /// Encoder networks: backbone parameters from `encoder_vb`, head from
    /// `head_vb`.
    pub fn encoder(
        spec: &ModelSpec,
        config: &EncoderConfig,
        encoder_vb: VarBuilder,
        head_vb: VarBuilder,
    ) -> Result<Self> {
        let backbone = Backbone::load(config, encoder_vb)?;
        let (head, width) = match spec.kind {
            ModelKind::Encoder => {
                let pooler =
                    candle_nn::linear(config.hidden, config.hidden, head_vb.pp("pooler").pp("dense"))?;
                (EncoderHead::Pooled { pooler }, config.hidden)
            }
            ModelKind::EncoderCnn => {
                let convs = ConvBank::new(head_vb.clone(), config.hidden, spec)?;
                let width = convs.output_dim(spec);
                (EncoderHead::Cnn { convs }, width)
            }
            ModelKind::EncoderBilstm => {
                let lstm = LstmStack::new(
                    head_vb.pp("lstm"),
                    config.hidden,
                    spec.lstm_hidden,
                    spec.lstm_layers,
                    true,
                )?;
                let width = lstm.output_dim();
                (EncoderHead::Bilstm { lstm }, width)
            }
            kind => unreachable!("{kind:?} has no encoder"),
        };
        let classifier = candle_nn::linear(width, NUM_CLASSES, head_vb.pp("classifier"))?;
        Ok(Net::Encoder {
            backbone,
            head,
            classifier,
        })
    }

    /// `(b, 3)` logits. Dropout is applied only when `dropout` is given.
    pub fn forward(
        &self,
        spec: &ModelSpec,
        batch: &Batch,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Tensor> {
        // Positions past the longest real sequence cannot affect the output,
        // so they are cut before any computation.
        let needs_window = matches!(spec.kind, ModelKind::Cnn | ModelKind::EncoderCnn);
        let keep = if needs_window {
            batch.max_length().max(spec.max_kernel())
        } else {
            batch.max_length().max(1)
        };
        let batch = batch.truncated(keep)?;
        let mut drop = |x: Tensor| -> Result<Tensor> {
            match dropout.as_deref_mut() {
                Some(d) => d.apply_rate(&x, spec.dropout),
                None => Ok(x),
            }
        };
        match self {
            Net::Cnn {
                embedding,
                convs,
                classifier,
            } => {
                let x = embedding.forward(&batch.ids)?;
                let x = x.broadcast_mul(&mask3(&batch.mask, x.dtype())?)?;
                let features = convs.forward(&x, &batch.lengths)?;
                Ok(classifier.forward(&drop(features)?)?)
            }
            Net::Recurrent {
                embedding,
                lstm,
                classifier,
            } => {
                let x = embedding.forward(&batch.ids)?;
                let x = x.broadcast_mul(&mask3(&batch.mask, x.dtype())?)?;
                let (_, last) = lstm.forward(&x, &batch.lengths)?;
                Ok(classifier.forward(&drop(last)?)?)
            }
            Net::Encoder {
                backbone,
                head,
                classifier,
            } => {
                if batch.lengths.contains(&0) {
                    return Err(Error::InvalidData(
                        "encoder inputs need at least one real token per row".into(),
                    ));
                }
                let hidden = backbone.forward(&batch.ids, &batch.mask)?;
                match head {
                    EncoderHead::Pooled { pooler } => {
                        let start = hidden.i((.., 0, ..))?.contiguous()?;
                        let pooled = pooler.forward(&start)?.tanh()?;
                        Ok(classifier.forward(&drop(pooled)?)?)
                    }
                    EncoderHead::Cnn { convs } => {
                        let x = hidden.broadcast_mul(&mask3(&batch.mask, hidden.dtype())?)?;
                        let features = convs.forward(&x, &batch.lengths)?;
                        Ok(classifier.forward(&features)?)
                    }
                    EncoderHead::Bilstm { lstm } => {
                        let (_, last) = lstm.forward(&hidden, &batch.lengths)?;
                        Ok(classifier.forward(&drop(last)?)?)
                    }
                }
            }
        }
    }
}
