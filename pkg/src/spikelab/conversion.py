"""ANN -> SNN conversion.

The recipe: fold batch norm into the preceding weights, rescale each
weighted layer by robust per-layer activation percentiles (p = 99.9 by
default) so activations map onto firing rates in [0, 1], replace every
ReLU with an integrate-and-fire neuron using subtract reset and
v_th = 1.0, swap max pooling for average pooling, and attach an IF neuron
to the output layer so inference classifies by softmax over output fire
rates. Biases survive as constant per-step input currents. Inference
feeds the raw input at every step; no spike encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import neurons
from .errors import ValidationError
from .network import (BatchNormLayer, ConvLayer, FcLayer, FlattenLayer,
                      NetworkModel, PoolLayer, ReluLayer, SpikingLayer)
from .numerics import as_f32


@dataclass
class ConversionConfig:
    percentile: float = 99.9
    v_th: float = 1.0
    t_inference: int = 64
    calibration_samples: int = 128

    def __post_init__(self):
        if not 0 < self.percentile <= 100:
            raise ValidationError("percentile must be in (0, 100]")
        if self.t_inference < 1:
            raise ValidationError("t_inference must be >= 1")


def robust_percentile(values, p: float, eps: float = 1e-6) -> float:
    """Linear-interpolated p-th percentile; non-positive results fall back
    to max(values, eps) so downstream scales stay positive."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValidationError("robust_percentile: empty values")
    if not 0 < p <= 100:
        raise ValidationError("robust_percentile: p must be in (0, 100]")
    lam = float(np.percentile(values, p, method="linear"))
    if lam <= 0:
        lam = max(float(values.max()), eps)
    return lam


_CONVERTIBLE = (ConvLayer, FcLayer, PoolLayer, ReluLayer, FlattenLayer, BatchNormLayer)


def _fold_batchnorm(ann: NetworkModel) -> list:
    """Copy the layer stack with every batch norm folded into the weighted
    layer before it."""
    folded = []
    for layer in ann.layers:
        if not isinstance(layer, _CONVERTIBLE):
            raise ValidationError(
                f"conversion supports conv/pool/fc/relu/flatten/batchnorm layers, "
                f"found {layer.kind!r}")
        if isinstance(layer, BatchNormLayer):
            if not folded or not isinstance(folded[-1], (ConvLayer, FcLayer)):
                raise ValidationError("batch norm must follow a conv or fc layer")
            prev = folded[-1]
            scale = layer.gamma / np.sqrt(layer.running_var + layer.eps)
            if isinstance(prev, ConvLayer):
                prev.w = as_f32(prev.w * scale[:, None, None, None])
            else:
                prev.w = as_f32(prev.w * scale[:, None])
            prev.b = as_f32((prev.b - layer.running_mean) * scale + layer.beta)
            continue
        folded.append(_copy_layer(layer))
    return folded


def _copy_layer(layer):
    if isinstance(layer, ConvLayer):
        out = ConvLayer(layer.in_channels, layer.out_channels, layer.kernel,
                        layer.stride, layer.padding, layer.adapter)
        out.w, out.b = layer.w.copy(), layer.b.copy()
        return out
    if isinstance(layer, FcLayer):
        out = FcLayer(layer.in_features, layer.out_features)
        out.w, out.b = layer.w.copy(), layer.b.copy()
        return out
    if isinstance(layer, PoolLayer):
        return PoolLayer(layer.window, layer.mode)
    if isinstance(layer, ReluLayer):
        return ReluLayer()
    return FlattenLayer()


def _calibration_outputs(layers, x):
    """Output of every weighted layer over the calibration inputs, running
    the (already folded) ANN stack in eval mode."""
    outs = []
    for layer in layers:
        x = layer.forward(x)
        if isinstance(layer, (ConvLayer, FcLayer)):
            outs.append(x)
    return outs


def normalize_ann(layers: list, calibration_x, percentile: float) -> list:
    """Robust weight normalization in place on a folded layer list: layer l
    gets w *= lam_{l-1}/lam_l and b /= lam_l, with lam_0 = 1."""
    outs = _calibration_outputs(layers, as_f32(calibration_x))
    lam_prev = 1.0
    k = 0
    for layer in layers:
        if isinstance(layer, (ConvLayer, FcLayer)):
            lam = robust_percentile(outs[k], percentile)
            layer.w = as_f32(layer.w * (lam_prev / lam))
            layer.b = as_f32(layer.b / lam)
            lam_prev = lam
            k += 1
    return layers


def convert_ann_to_snn(ann: NetworkModel, calibration_x,
                       config: ConversionConfig | None = None) -> NetworkModel:
    """Convert a trained ANN into a rate-coded SNN.

    calibration_x: [N, C, H, W] inputs from the model owner's training
    half; at most config.calibration_samples are used for the percentile
    scales.
    """
    config = config or ConversionConfig()
    if ann.family != "ann":
        raise ValidationError("convert_ann_to_snn expects an ANN model")
    calibration_x = as_f32(calibration_x)
    if calibration_x.ndim != 4 or len(calibration_x) == 0:
        raise ValidationError("calibration data must be a non-empty [N,C,H,W] array")
    calibration_x = calibration_x[:config.calibration_samples]

    folded = _fold_batchnorm(ann)
    for layer in folded:
        if isinstance(layer, PoolLayer):
            layer.mode = "avg"     # swap before calibration so scales match
    normalize_ann(folded, calibration_x, config.percentile)

    if_params = neurons.IfParams(v_th=config.v_th, v_reset=0.0, reset_mode="subtract")
    surrogate = neurons.ATan()
    out_layers = []
    for layer in folded:
        if isinstance(layer, ReluLayer):
            out_layers.append(SpikingLayer(if_params, surrogate))
        else:
            out_layers.append(layer)
    # the classifier head spikes too: rates stand in for logits
    out_layers.append(SpikingLayer(if_params, surrogate))

    meta = dict(ann.meta)
    meta["origin"] = "conversion"
    return NetworkModel(out_layers, "snn", t_steps=config.t_inference, meta=meta)


def reference_rates(ann: NetworkModel, calibration_x, x,
                    config: ConversionConfig | None = None) -> np.ndarray:
    """Fire rates the converted net should approach as T grows: the folded
    and normalized ANN's outputs, clipped to [0, 1]. Pooling is averaged
    to mirror the converted stack."""
    config = config or ConversionConfig()
    folded = _fold_batchnorm(ann)
    for layer in folded:
        if isinstance(layer, PoolLayer):
            layer.mode = "avg"
    normalize_ann(folded, as_f32(calibration_x)[:config.calibration_samples],
                  config.percentile)
    outs = _calibration_outputs(folded, as_f32(x))
    return as_f32(np.clip(outs[-1], 0.0, 1.0))
