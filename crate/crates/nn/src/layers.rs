//! Layer kinds: conv2d, conv_transpose2d, linear, relu, dropout.

use rand_chacha::ChaCha8Rng;

use crate::conv::{
    conv2d_backward, conv2d_forward, conv_out_dim, conv_transpose2d_backward,
    conv_transpose2d_forward, conv_transpose_out_dim, PatchGeom,
};
use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Declarative layer description used to build a [`crate::Network`].
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    /// Dropout rate `p` must lie in `[0, 1)`; identity outside training.
    Dropout {
        p: f64,
    },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            }
            | LayerSpec::ConvTranspose2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(NnError::Config(format!("degenerate conv spec {self:?}")));
                }
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                if in_features == 0 || out_features == 0 {
                    return Err(NnError::Config(format!("degenerate linear spec {self:?}")));
                }
            }
            LayerSpec::Relu => {}
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(NnError::Config(format!(
                        "dropout rate must be in [0,1), got {p}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of trainable values this layer will hold.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            }
            | LayerSpec::ConvTranspose2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => in_channels * out_channels * kernel * kernel + out_channels,
            LayerSpec::Linear {
                in_features,
                out_features,
            } => in_features * out_features + out_features,
            _ => 0,
        }
    }
}

/// How weights are drawn at build time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    /// He-uniform, for layers feeding a rectifier.
    HeUniform,
    /// Uniform `±1/sqrt(fan_in)`, for output heads.
    Head,
}

fn init_bound(init: Init, fan_in: usize) -> f64 {
    match init {
        Init::HeUniform => (6.0 / fan_in as f64).sqrt(),
        Init::Head => 1.0 / (fan_in as f64).sqrt(),
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ConvParams<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub weight_grad: Tensor<S>,
    pub bias_grad: Tensor<S>,
}

impl<S: Scalar> ConvParams<S> {
    fn new(weight_shape: &[usize], out_channels: usize, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Tensor::uniform(weight_shape, bound, rng),
            bias: Tensor::zeros(&[out_channels]),
            weight_grad: Tensor::zeros(weight_shape),
            bias_grad: Tensor::zeros(&[out_channels]),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Layer<S: Scalar> {
    Conv2d {
        spec: LayerSpec,
        params: ConvParams<S>,
        cache: Option<Tensor<S>>,
    },
    ConvTranspose2d {
        spec: LayerSpec,
        params: ConvParams<S>,
        cache: Option<Tensor<S>>,
    },
    Linear {
        in_features: usize,
        out_features: usize,
        params: ConvParams<S>,
        cache: Option<Tensor<S>>,
    },
    Relu {
        cache: Option<Tensor<S>>,
    },
    Dropout {
        p: f64,
        /// Scaled keep mask (0 or 1/(1-p)) from the last train forward.
        cache: Option<Tensor<S>>,
    },
}

impl<S: Scalar> Layer<S> {
    pub fn build(spec: &LayerSpec, init: Init, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        Ok(match *spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let fan_in = in_channels * kernel * kernel;
                Layer::Conv2d {
                    spec: spec.clone(),
                    params: ConvParams::new(
                        &[out_channels, in_channels, kernel, kernel],
                        out_channels,
                        init_bound(init, fan_in),
                        rng,
                    ),
                    cache: None,
                }
            }
            LayerSpec::ConvTranspose2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let fan_in = in_channels * kernel * kernel;
                Layer::ConvTranspose2d {
                    spec: spec.clone(),
                    params: ConvParams::new(
                        &[in_channels, out_channels, kernel, kernel],
                        out_channels,
                        init_bound(init, fan_in),
                        rng,
                    ),
                    cache: None,
                }
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } => Layer::Linear {
                in_features,
                out_features,
                params: ConvParams::new(
                    &[out_features, in_features],
                    out_features,
                    init_bound(init, in_features),
                    rng,
                ),
                cache: None,
            },
            LayerSpec::Relu => Layer::Relu { cache: None },
            LayerSpec::Dropout { p } => Layer::Dropout { p, cache: None },
        })
    }

    pub fn forward_eval(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        match self {
            Layer::Conv2d { spec, params, .. } => conv2d_run(spec, params, x).map(|(y, _)| y),
            Layer::ConvTranspose2d { spec, params, .. } => {
                conv_transpose2d_run(spec, params, x).map(|(y, _)| y)
            }
            Layer::Linear {
                in_features,
                out_features,
                params,
                ..
            } => linear_run(*in_features, *out_features, params, x),
            Layer::Relu { .. } => Ok(x.map(|v| if v > S::zero() { v } else { S::zero() })),
            // identity in eval mode
            Layer::Dropout { .. } => Ok(x.clone()),
        }
    }

    pub fn forward_train(&mut self, x: &Tensor<S>, rng: &mut ChaCha8Rng) -> Result<Tensor<S>> {
        match self {
            Layer::Conv2d { spec, params, cache } => {
                let (y, _) = conv2d_run(spec, params, x)?;
                *cache = Some(x.clone());
                Ok(y)
            }
            Layer::ConvTranspose2d { spec, params, cache } => {
                let (y, _) = conv_transpose2d_run(spec, params, x)?;
                *cache = Some(x.clone());
                Ok(y)
            }
            Layer::Linear {
                in_features,
                out_features,
                params,
                cache,
            } => {
                let y = linear_run(*in_features, *out_features, params, x)?;
                *cache = Some(x.clone());
                Ok(y)
            }
            Layer::Relu { cache } => {
                let y = x.map(|v| if v > S::zero() { v } else { S::zero() });
                *cache = Some(x.clone());
                Ok(y)
            }
            Layer::Dropout { p, cache } => {
                let keep = S::cast(1.0 / (1.0 - *p));
                let mut mask = Tensor::zeros(x.shape());
                for slot in mask.data_mut() {
                    *slot = if rand::Rng::gen::<f64>(rng) >= *p {
                        keep
                    } else {
                        S::zero()
                    };
                }
                let mut y = x.clone();
                for (v, &m) in y.data_mut().iter_mut().zip(mask.data()) {
                    *v = *v * m;
                }
                *cache = Some(mask);
                Ok(y)
            }
        }
    }

    /// Consumes the cached forward state and accumulates parameter gradients.
    /// Returns the gradient with respect to the layer input, or `None` when
    /// `need_input_grad` is false and the layer can skip computing it.
    pub fn backward(&mut self, d_out: &Tensor<S>, need_input_grad: bool) -> Result<Option<Tensor<S>>> {
        match self {
            Layer::Conv2d { spec, params, cache } => {
                let x = cache.take().ok_or_else(no_cache)?;
                let (_, geom) = conv2d_dims(spec, &x)?;
                let LayerSpec::Conv2d { out_channels, .. } = *spec else {
                    unreachable!()
                };
                let n = x.shape()[0];
                let mut d_input = need_input_grad.then(|| Tensor::zeros(x.shape()));
                conv2d_backward(
                    x.data(),
                    params.weight.data(),
                    d_out.data(),
                    &geom,
                    out_channels,
                    n,
                    d_input.as_mut().map(|t| t.data_mut()),
                    params.weight_grad.data_mut(),
                    params.bias_grad.data_mut(),
                );
                Ok(d_input)
            }
            Layer::ConvTranspose2d { spec, params, cache } => {
                let x = cache.take().ok_or_else(no_cache)?;
                let (_, geom) = conv_transpose2d_dims(spec, &x)?;
                let LayerSpec::ConvTranspose2d { in_channels, .. } = *spec else {
                    unreachable!()
                };
                let n = x.shape()[0];
                let mut d_input = Tensor::zeros(x.shape());
                conv_transpose2d_backward(
                    x.data(),
                    params.weight.data(),
                    d_out.data(),
                    &geom,
                    in_channels,
                    n,
                    d_input.data_mut(),
                    params.weight_grad.data_mut(),
                    params.bias_grad.data_mut(),
                );
                Ok(Some(d_input))
            }
            Layer::Linear {
                in_features,
                out_features,
                params,
                cache,
            } => {
                let x = cache.take().ok_or_else(no_cache)?;
                let n = x.shape()[0];
                let x2 = x.view_2d(n, *in_features);
                let dy = d_out.view_2d(n, *out_features);
                // dW += dy^T * x
                ndarray::linalg::general_mat_mul(
                    S::one(),
                    &dy.reversed_axes(),
                    &x2,
                    S::one(),
                    &mut params.weight_grad.view_2d_mut(*out_features, *in_features),
                );
                for (c, slot) in params.bias_grad.data_mut().iter_mut().enumerate() {
                    let mut acc = S::zero();
                    for b in 0..n {
                        acc += d_out.data()[b * *out_features + c];
                    }
                    *slot += acc;
                }
                let mut d_input = Tensor::zeros(&[n, *in_features]);
                ndarray::linalg::general_mat_mul(
                    S::one(),
                    &d_out.view_2d(n, *out_features),
                    &params.weight.view_2d(*out_features, *in_features),
                    S::zero(),
                    &mut d_input.view_2d_mut(n, *in_features),
                );
                Ok(Some(d_input.reshaped(x.shape())?))
            }
            Layer::Relu { cache } => {
                let x = cache.take().ok_or_else(no_cache)?;
                let mut d_input = d_out.clone();
                for (g, &v) in d_input.data_mut().iter_mut().zip(x.data()) {
                    if v <= S::zero() {
                        *g = S::zero();
                    }
                }
                Ok(Some(d_input))
            }
            Layer::Dropout { cache, .. } => {
                let mask = cache.take().ok_or_else(no_cache)?;
                let mut d_input = d_out.clone();
                for (g, &m) in d_input.data_mut().iter_mut().zip(mask.data()) {
                    *g = *g * m;
                }
                Ok(Some(d_input))
            }
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv2d { cache, .. }
            | Layer::ConvTranspose2d { cache, .. }
            | Layer::Linear { cache, .. }
            | Layer::Relu { cache }
            | Layer::Dropout { cache, .. } => *cache = None,
        }
    }

    pub fn has_cache(&self) -> bool {
        match self {
            Layer::Conv2d { cache, .. }
            | Layer::ConvTranspose2d { cache, .. }
            | Layer::Linear { cache, .. }
            | Layer::Relu { cache }
            | Layer::Dropout { cache, .. } => cache.is_some(),
        }
    }

    pub fn params(&self) -> Option<&ConvParams<S>> {
        match self {
            Layer::Conv2d { params, .. }
            | Layer::ConvTranspose2d { params, .. }
            | Layer::Linear { params, .. } => Some(params),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut ConvParams<S>> {
        match self {
            Layer::Conv2d { params, .. }
            | Layer::ConvTranspose2d { params, .. }
            | Layer::Linear { params, .. } => Some(params),
            _ => None,
        }
    }
}

fn no_cache() -> NnError {
    NnError::Usage("backward called without a cached train-mode forward".into())
}

fn conv2d_dims<S: Scalar>(spec: &LayerSpec, x: &Tensor<S>) -> Result<([usize; 4], PatchGeom)> {
    let LayerSpec::Conv2d {
        in_channels,
        out_channels,
        kernel,
        stride,
        pad,
    } = *spec
    else {
        unreachable!()
    };
    let dims = expect_4d(x, in_channels, "conv2d")?;
    let [n, _, h, w] = dims;
    let (oh, ow) = match (
        conv_out_dim(h, kernel, stride, pad),
        conv_out_dim(w, kernel, stride, pad),
    ) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
        _ => {
            return Err(NnError::Config(format!(
                "conv2d cannot produce positive output from {h}x{w} with k={kernel} s={stride} p={pad}"
            )))
        }
    };
    Ok((
        [n, out_channels, oh, ow],
        PatchGeom {
            channels: in_channels,
            src_h: h,
            src_w: w,
            dst_h: oh,
            dst_w: ow,
            kernel,
            stride,
            pad,
        },
    ))
}

fn conv2d_run<S: Scalar>(
    spec: &LayerSpec,
    params: &ConvParams<S>,
    x: &Tensor<S>,
) -> Result<(Tensor<S>, PatchGeom)> {
    let (out_dims, geom) = conv2d_dims(spec, x)?;
    let [n, out_c, oh, ow] = out_dims;
    let mut y = Tensor::zeros(&[n, out_c, oh, ow]);
    conv2d_forward(
        x.data(),
        params.weight.data(),
        params.bias.data(),
        &geom,
        out_c,
        n,
        y.data_mut(),
    );
    Ok((y, geom))
}

fn conv_transpose2d_dims<S: Scalar>(
    spec: &LayerSpec,
    x: &Tensor<S>,
) -> Result<([usize; 4], PatchGeom)> {
    let LayerSpec::ConvTranspose2d {
        in_channels,
        out_channels,
        kernel,
        stride,
        pad,
        out_pad,
    } = *spec
    else {
        unreachable!()
    };
    let dims = expect_4d(x, in_channels, "conv_transpose2d")?;
    let [n, _, h, w] = dims;
    let (oh, ow) = match (
        conv_transpose_out_dim(h, kernel, stride, pad, out_pad),
        conv_transpose_out_dim(w, kernel, stride, pad, out_pad),
    ) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
        _ => {
            return Err(NnError::Config(format!(
                "conv_transpose2d cannot produce positive output from {h}x{w}"
            )))
        }
    };
    // the reverse conv must land exactly back on the input grid
    if conv_out_dim(oh, kernel, stride, pad) != Some(h)
        || conv_out_dim(ow, kernel, stride, pad) != Some(w)
    {
        return Err(NnError::Config(format!(
            "conv_transpose2d geometry k={kernel} s={stride} p={pad} op={out_pad} is not \
             consistent for input {h}x{w}"
        )));
    }
    Ok((
        [n, out_channels, oh, ow],
        PatchGeom {
            channels: out_channels,
            src_h: oh,
            src_w: ow,
            dst_h: h,
            dst_w: w,
            kernel,
            stride,
            pad,
        },
    ))
}

fn conv_transpose2d_run<S: Scalar>(
    spec: &LayerSpec,
    params: &ConvParams<S>,
    x: &Tensor<S>,
) -> Result<(Tensor<S>, PatchGeom)> {
    let (out_dims, geom) = conv_transpose2d_dims(spec, x)?;
    let [n, out_c, oh, ow] = out_dims;
    let LayerSpec::ConvTranspose2d { in_channels, .. } = *spec else {
        unreachable!()
    };
    let mut y = Tensor::zeros(&[n, out_c, oh, ow]);
    conv_transpose2d_forward(
        x.data(),
        params.weight.data(),
        params.bias.data(),
        &geom,
        in_channels,
        n,
        y.data_mut(),
    );
    Ok((y, geom))
}

fn linear_run<S: Scalar>(
    in_features: usize,
    out_features: usize,
    params: &ConvParams<S>,
    x: &Tensor<S>,
) -> Result<Tensor<S>> {
    if x.shape().is_empty() {
        return Err(NnError::Config("linear input must be batched".into()));
    }
    let n = x.shape()[0];
    let feat: usize = x.shape()[1..].iter().product();
    if feat != in_features {
        return Err(NnError::Config(format!(
            "linear expects {in_features} features, input {:?} provides {feat}",
            x.shape()
        )));
    }
    let mut y = Tensor::zeros(&[n, out_features]);
    ndarray::linalg::general_mat_mul(
        S::one(),
        &x.view_2d(n, in_features),
        &params.weight.view_2d(out_features, in_features).reversed_axes(),
        S::zero(),
        &mut y.view_2d_mut(n, out_features),
    );
    for b in 0..n {
        let row = &mut y.data_mut()[b * out_features..(b + 1) * out_features];
        for (v, &bias) in row.iter_mut().zip(params.bias.data()) {
            *v += bias;
        }
    }
    Ok(y)
}

fn expect_4d<S: Scalar>(x: &Tensor<S>, channels: usize, what: &str) -> Result<[usize; 4]> {
    match *x.shape() {
        [n, c, h, w] if c == channels => Ok([n, c, h, w]),
        _ => Err(NnError::Config(format!(
            "{what} expects input [N, {channels}, H, W], got {:?}",
            x.shape()
        ))),
    }
}
