use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::layers::{
    self, conv2d_backward_impl, conv2d_forward, fc_backward_impl, fc_forward, maxpool_backward,
    maxpool_forward, reference, relu_in_place, softmax, softmax_cross_entropy,
};
use crate::tensor::{Precision, ScalarFormat, Shape4, Tensor};

use super::spec::{Activation, ArchitectureSpec, LayerSpec};

/// Weight and bias of one parametric layer. Conv weights are
/// `(cout, cin, kh, kw)`, FC weights `(k, m, 1, 1)`, biases `(cout, 1, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    pub fn zeros_like(&self) -> Self {
        LayerParams {
            weights: Tensor::zeros(self.weights.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 2] {
        [&self.weights, &self.bias]
    }
}

/// Per-parametric-layer gradients, in the same layout as [`Network::params`].
pub type Gradients = Vec<LayerParams>;

/// Parameter shapes implied by a spec, one `(weights, bias)` pair per
/// parametric layer.
pub fn param_shapes(spec: &ArchitectureSpec) -> Result<Vec<(Shape4, Shape4)>> {
    let shapes = spec.shapes()?;
    Ok(spec
        .layers
        .iter()
        .zip(&shapes)
        .filter_map(|(layer, s)| match layer {
            LayerSpec::Conv { params, .. } => Some((
                [
                    params.out_channels,
                    s.input.0,
                    params.kernel.0,
                    params.kernel.1,
                ],
                [params.out_channels, 1, 1, 1],
            )),
            LayerSpec::Fc { out_features: k } | LayerSpec::Classifier { num_classes: k } => {
                Some(([*k, s.input.0 * s.input.1 * s.input.2, 1, 1], [*k, 1, 1, 1]))
            }
            LayerSpec::Pool(_) => None,
        })
        .collect())
}

/// Human-readable tensor names (`conv1.weight`, `fc2.bias`, `classifier.weight`).
pub fn param_names(spec: &ArchitectureSpec) -> Vec<(String, String)> {
    let (mut convs, mut fcs) = (0, 0);
    spec.layers
        .iter()
        .filter_map(|layer| {
            let base = match layer {
                LayerSpec::Conv { .. } => {
                    convs += 1;
                    format!("conv{convs}")
                }
                LayerSpec::Fc { .. } => {
                    fcs += 1;
                    format!("fc{fcs}")
                }
                LayerSpec::Classifier { .. } => "classifier".to_string(),
                LayerSpec::Pool(_) => return None,
            };
            Some((format!("{base}.weight"), format!("{base}.bias")))
        })
        .collect()
}

/// An architecture bound to its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: ArchitectureSpec,
    params: Vec<LayerParams>,
}

enum Saved {
    Conv {
        input: Tensor,
        output: Option<Tensor>,
    },
    Pool {
        input_shape: Shape4,
        argmax: Vec<usize>,
    },
    Fc {
        input: Tensor,
        output: Option<Tensor>,
    },
}

impl Network {
    /// Random initialisation: weights ~ N(0, 2 / fan_in), biases zero.
    /// Deterministic in `seed`.
    pub fn build(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = param_shapes(spec)?
            .into_iter()
            .map(|(wshape, bshape)| {
                let fan_in = wshape[1] * wshape[2] * wshape[3];
                let std = (2.0 / fan_in as f64).sqrt() as f32;
                let count: usize = wshape.iter().product();
                let w: Vec<f32> = (0..count)
                    .map(|_| {
                        let z: f32 = StandardNormal.sample(&mut rng);
                        z * std
                    })
                    .collect();
                Ok(LayerParams {
                    weights: Tensor::from_vec(wshape, w)?,
                    bias: Tensor::zeros(bshape),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Network {
            spec: spec.clone(),
            params,
        })
    }

    /// Assemble a network from existing parameters; shapes must match the spec.
    pub fn from_parts(spec: ArchitectureSpec, params: Vec<LayerParams>) -> Result<Self> {
        spec.validate()?;
        let expected = param_shapes(&spec)?;
        if expected.len() != params.len() {
            return Err(Error::Dimension(format!(
                "spec has {} parametric layers, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (i, ((ws, bs), p)) in expected.iter().zip(&params).enumerate() {
            if p.weights.shape() != *ws || p.bias.shape() != *bs {
                return Err(Error::Dimension(format!(
                    "parametric layer {}: expected {ws:?}/{bs:?}, got {:?}/{:?}",
                    i + 1,
                    p.weights.shape(),
                    p.bias.shape()
                )));
            }
        }
        Ok(Network { spec, params })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    pub fn num_classes(&self) -> usize {
        self.spec
            .num_classes()
            .expect("validated spec has a classifier")
    }

    /// Number of scalars actually held.
    pub fn num_scalars(&self) -> usize {
        self.params
            .iter()
            .map(|p| p.weights.len() + p.bias.len())
            .sum()
    }

    /// Storage family of the parameters (all tensors share it).
    pub fn precision(&self) -> Precision {
        self.params
            .first()
            .map(|p| p.weights.format().precision())
            .unwrap_or(Precision::Float32)
    }

    /// Bytes needed to store every parameter in its own format.
    pub fn payload_bytes(&self) -> usize {
        self.params
            .iter()
            .flat_map(|p| p.tensors())
            .map(|t| t.len() * t.format().bytes_per_scalar())
            .sum()
    }

    /// Apply `f` to every parameter tensor (weights then bias, layer order).
    pub fn map_tensors(
        &self,
        mut f: impl FnMut(&str, &Tensor) -> Result<Tensor>,
    ) -> Result<Network> {
        let names = param_names(&self.spec);
        let params = self
            .params
            .iter()
            .zip(&names)
            .map(|(p, (wn, bn))| {
                Ok(LayerParams {
                    weights: f(wn, &p.weights)?,
                    bias: f(bn, &p.bias)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Network::from_parts(self.spec.clone(), params)
    }

    pub fn convert(&self, format: ScalarFormat) -> Network {
        self.map_tensors(|_, t| Ok(t.convert(format)))
            .expect("conversion preserves shapes")
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let [_, c, h, w] = batch.shape();
        if (c, h, w) != self.spec.input {
            return Err(Error::Dimension(format!(
                "batch items are {c}x{h}x{w}, network expects {:?}",
                self.spec.input
            )));
        }
        Ok(())
    }

    /// Logits plus, when `keep` is set, everything backward needs.
    fn run(&self, batch: &Tensor, keep: bool) -> Result<(Tensor, Vec<Saved>, Vec<Shape4>)> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        let mut saved = Vec::new();
        let mut shapes = Vec::with_capacity(self.spec.layers.len() + 1);
        let mut params = self.params.iter();
        for layer in &self.spec.layers {
            shapes.push(x.shape());
            x = match layer {
                LayerSpec::Conv {
                    params: cp,
                    activation,
                } => {
                    let p = params.next().expect("param per conv");
                    let mut y = conv2d_forward(&x, &p.weights, p.bias.data(), cp)?;
                    let relu = *activation == Activation::Relu;
                    if relu {
                        relu_in_place(&mut y);
                    }
                    if keep {
                        saved.push(Saved::Conv {
                            input: x,
                            output: relu.then(|| y.clone()),
                        });
                    }
                    y
                }
                LayerSpec::Pool(pp) => {
                    let (y, argmax) = maxpool_forward(&x, pp)?;
                    if keep {
                        saved.push(Saved::Pool {
                            input_shape: x.shape(),
                            argmax,
                        });
                    }
                    y
                }
                LayerSpec::Fc { .. } | LayerSpec::Classifier { .. } => {
                    let p = params.next().expect("param per fc");
                    let mut y = fc_forward(&x, &p.weights, p.bias.data())?;
                    let relu = matches!(layer, LayerSpec::Fc { .. });
                    if relu {
                        relu_in_place(&mut y);
                    }
                    if keep {
                        saved.push(Saved::Fc {
                            input: x,
                            output: relu.then(|| y.clone()),
                        });
                    }
                    y
                }
            };
        }
        shapes.push(x.shape());
        Ok((x, saved, shapes))
    }

    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.run(batch, false)?.0)
    }

    /// Class probabilities, shape `(n, num_classes, 1, 1)`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(softmax(&self.logits(batch)?))
    }

    /// Probabilities plus the input shape of every layer and the final output shape.
    pub fn forward_with_shapes(&self, batch: &Tensor) -> Result<(Tensor, Vec<Shape4>)> {
        let (logits, _, shapes) = self.run(batch, false)?;
        Ok((softmax(&logits), shapes))
    }

    /// Argmax class per batch item.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(batch)?))
    }

    /// Forward pass through direct loops that count multiply-accumulates
    /// (bias additions excluded). Returns probabilities and the MAC total
    /// for the whole batch.
    pub fn forward_counting_macs(&self, batch: &Tensor) -> Result<(Tensor, u64)> {
        self.check_batch(batch)?;
        let mut macs = 0u64;
        let mut x = batch.clone();
        let mut params = self.params.iter();
        for layer in &self.spec.layers {
            x = match layer {
                LayerSpec::Conv {
                    params: cp,
                    activation,
                } => {
                    let p = params.next().expect("param per conv");
                    let y = reference::conv2d_direct(&x, &p.weights, p.bias.data(), cp, &mut macs)?;
                    match activation {
                        Activation::Relu => layers::relu(&y),
                        Activation::Linear => y,
                    }
                }
                LayerSpec::Pool(pp) => maxpool_forward(&x, pp)?.0,
                LayerSpec::Fc { .. } => {
                    let p = params.next().expect("param per fc");
                    layers::relu(&reference::fc_direct(
                        &x,
                        &p.weights,
                        p.bias.data(),
                        &mut macs,
                    )?)
                }
                LayerSpec::Classifier { .. } => {
                    let p = params.next().expect("param per fc");
                    reference::fc_direct(&x, &p.weights, p.bias.data(), &mut macs)?
                }
            };
        }
        Ok((softmax(&x), macs))
    }

    /// Mean cross-entropy over the batch and its exact gradient with respect
    /// to every parameter.
    pub fn backward(&self, batch: &Tensor, labels: &[usize]) -> Result<(f32, Gradients)> {
        if labels.len() != batch.shape()[0] {
            return Err(Error::Argument(format!(
                "{} labels for a batch of {}",
                labels.len(),
                batch.shape()[0]
            )));
        }
        let (logits, saved, _) = self.run(batch, true)?;
        let sl = softmax_cross_entropy(&logits, labels)?;
        let mut grad = sl.grad_logits;
        let mut grads: Vec<Option<LayerParams>> = vec![None; self.params.len()];
        let mut pidx = self.params.len();
        for (li, s) in saved.iter().enumerate().rev() {
            // The first layer's input gradient is never needed.
            let want_input = li > 0;
            grad = match s {
                Saved::Conv { input, output } => {
                    pidx -= 1;
                    if let Some(out) = output {
                        mask_relu(&mut grad, out);
                    }
                    let LayerSpec::Conv { params: cp, .. } = &self.spec.layers[li] else {
                        return Err(Error::Internal(
                            "saved conv state for non-conv layer".into(),
                        ));
                    };
                    let p = &self.params[pidx];
                    let g = conv2d_backward_impl(input, &p.weights, &grad, cp, want_input)?;
                    grads[pidx] = Some(LayerParams {
                        weights: g.weights,
                        bias: Tensor::from_vec(p.bias.shape(), g.bias)?,
                    });
                    g.input
                }
                Saved::Pool {
                    input_shape,
                    argmax,
                } => maxpool_backward(&grad, argmax, *input_shape)?,
                Saved::Fc { input, output } => {
                    pidx -= 1;
                    if let Some(out) = output {
                        mask_relu(&mut grad, out);
                    }
                    let p = &self.params[pidx];
                    let g = fc_backward_impl(input, &p.weights, &grad, want_input)?;
                    grads[pidx] = Some(LayerParams {
                        weights: g.weights,
                        bias: Tensor::from_vec(p.bias.shape(), g.bias)?,
                    });
                    g.input
                }
            };
        }
        let grads = grads
            .into_iter()
            .map(|g| g.ok_or_else(|| Error::Internal("missing layer gradient".into())))
            .collect::<Result<Vec<_>>>()?;
        Ok((sl.loss, grads))
    }
}

/// Zero the upstream gradient wherever the ReLU output was not positive.
fn mask_relu(grad: &mut Tensor, relu_out: &Tensor) {
    for (g, &y) in grad.data_mut().iter_mut().zip(relu_out.data()) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Index of the largest entry in each row (first on ties).
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let k = t.item_len();
    t.data()
        .chunks_exact(k.max(1))
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}
