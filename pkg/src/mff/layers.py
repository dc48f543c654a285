"""Minimal numpy neural-network layers with explicit forward/backward.

Conventions: activations are NHWC float arrays; parameters live in a flat
dict keyed by slash-separated layer paths; gradients accumulate into a
parallel dict.  Every forward takes a mode string —

  train               batch-norm batch stats, dropout active
  infer_deterministic running stats, dropout off (pure function)
  infer_mc            running stats, dropout active (stochastic passes)

and an optional rng consumed only by dropout.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DataValidationError

TRAIN = "train"
INFER_DETERMINISTIC = "infer_deterministic"
INFER_MC = "infer_mc"
MODES = (TRAIN, INFER_DETERMINISTIC, INFER_MC)

BN_MOMENTUM = 0.99
BN_EPS = 1e-3


def _check_mode(mode):
    if mode not in MODES:
        raise ConfigurationError(f"unknown forward mode {mode!r}")


def he_normal(rng, shape, fan_in, dtype):
    return (rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)).astype(dtype)


def trainable_keys(params):
    """Parameter paths updated by the optimizer (running BN stats excluded)."""
    return [k for k in sorted(params) if "/running_" not in k]


class Conv2d:
    """3x3 same-padding stride-1 convolution, computed as nine shifted GEMMs."""

    def __init__(self, path, c_in, c_out):
        self.path = path
        self.c_in = c_in
        self.c_out = c_out

    def init(self, params, rng, dtype):
        params[self.path + "/W"] = he_normal(
            rng, (3, 3, self.c_in, self.c_out), 9 * self.c_in, dtype
        )
        params[self.path + "/b"] = np.zeros(self.c_out, dtype=dtype)

    def forward(self, x, params, mode, rng):
        _check_mode(mode)
        if x.ndim != 4 or x.shape[3] != self.c_in:
            raise DataValidationError(
                f"{self.path}: expected NHWC with {self.c_in} channels, got {x.shape}"
            )
        w = params[self.path + "/W"]
        b = params[self.path + "/b"]
        n, h, wd, _ = x.shape
        xp = np.zeros((n, h + 2, wd + 2, self.c_in), dtype=x.dtype)
        xp[:, 1:-1, 1:-1, :] = x
        y = np.empty((n, h, wd, self.c_out), dtype=x.dtype)
        y[:] = b
        flat = y.reshape(-1, self.c_out)
        for di in range(3):
            for dj in range(3):
                patch = xp[:, di : di + h, dj : dj + wd, :].reshape(-1, self.c_in)
                flat += patch @ w[di, dj]
        return y, (xp, x.shape)

    def backward(self, dy, params, cache, grads):
        xp, x_shape = cache
        n, h, wd, _ = x_shape
        w = params[self.path + "/W"]
        dy_flat = dy.reshape(-1, self.c_out)
        dw = np.empty_like(w)
        dxp = np.zeros_like(xp)
        for di in range(3):
            for dj in range(3):
                patch = xp[:, di : di + h, dj : dj + wd, :].reshape(-1, self.c_in)
                dw[di, dj] = patch.T @ dy_flat
                dxp[:, di : di + h, dj : dj + wd, :] += (dy_flat @ w[di, dj].T).reshape(
                    n, h, wd, self.c_in
                )
        grads[self.path + "/W"] = grads.get(self.path + "/W", 0) + dw
        grads[self.path + "/b"] = grads.get(self.path + "/b", 0) + dy.sum(axis=(0, 1, 2))
        return dxp[:, 1:-1, 1:-1, :]


class Dense:
    """Affine layer; zero_init starts W at 0 (used for logits layers so
    untrained classifiers output uniform probabilities and the first
    optimizer step is a pure, convex logits-layer update)."""

    def __init__(self, path, n_in, n_out, zero_init=False):
        self.path = path
        self.n_in = n_in
        self.n_out = n_out
        self.zero_init = zero_init

    def init(self, params, rng, dtype):
        if self.zero_init:
            params[self.path + "/W"] = np.zeros((self.n_in, self.n_out), dtype=dtype)
        else:
            params[self.path + "/W"] = he_normal(
                rng, (self.n_in, self.n_out), self.n_in, dtype
            )
        params[self.path + "/b"] = np.zeros(self.n_out, dtype=dtype)

    def forward(self, x, params, mode, rng):
        _check_mode(mode)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DataValidationError(
                f"{self.path}: expected (n, {self.n_in}) input, got {x.shape}"
            )
        return x @ params[self.path + "/W"] + params[self.path + "/b"], x

    def backward(self, dy, params, cache, grads):
        x = cache
        grads[self.path + "/W"] = grads.get(self.path + "/W", 0) + x.T @ dy
        grads[self.path + "/b"] = grads.get(self.path + "/b", 0) + dy.sum(axis=0)
        return dy @ params[self.path + "/W"].T


class BatchNorm2d:
    """Channel-wise batch norm; running stats follow r = m*r + (1-m)*batch."""

    def __init__(self, path, channels, momentum=BN_MOMENTUM, eps=BN_EPS):
        self.path = path
        self.channels = channels
        self.momentum = momentum
        self.eps = eps

    def init(self, params, rng, dtype):
        params[self.path + "/gamma"] = np.ones(self.channels, dtype=dtype)
        params[self.path + "/beta"] = np.zeros(self.channels, dtype=dtype)
        params[self.path + "/running_mean"] = np.zeros(self.channels, dtype=dtype)
        params[self.path + "/running_var"] = np.ones(self.channels, dtype=dtype)

    def forward(self, x, params, mode, rng):
        _check_mode(mode)
        gamma = params[self.path + "/gamma"]
        beta = params[self.path + "/beta"]
        if mode == TRAIN:
            mean = x.mean(axis=(0, 1, 2))
            var = x.var(axis=(0, 1, 2))
            for name, batch_val in (("/running_mean", mean), ("/running_var", var)):
                running = params[self.path + name]
                params[self.path + name] = (
                    self.momentum * running + (1.0 - self.momentum) * batch_val
                ).astype(running.dtype)
        else:
            mean = params[self.path + "/running_mean"]
            var = params[self.path + "/running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        y = gamma * xhat + beta
        return y, (xhat, inv_std, mode)

    def backward(self, dy, params, cache, grads):
        xhat, inv_std, mode = cache
        gamma = params[self.path + "/gamma"]
        grads[self.path + "/gamma"] = grads.get(self.path + "/gamma", 0) + (dy * xhat).sum(
            axis=(0, 1, 2)
        )
        grads[self.path + "/beta"] = grads.get(self.path + "/beta", 0) + dy.sum(axis=(0, 1, 2))
        dxhat = dy * gamma
        if mode != TRAIN:
            return dxhat * inv_std
        m = dy.shape[0] * dy.shape[1] * dy.shape[2]
        # dx for batch statistics: standard three-term batch-norm gradient.
        term_mean = dxhat.mean(axis=(0, 1, 2))
        term_proj = (dxhat * xhat).mean(axis=(0, 1, 2))
        del m
        return inv_std * (dxhat - term_mean - xhat * term_proj)


class ReLU:
    def init(self, params, rng, dtype):
        pass

    def forward(self, x, params, mode, rng):
        _check_mode(mode)
        return np.maximum(x, 0), x > 0

    def backward(self, dy, params, cache, grads):
        return dy * cache


class MaxPool2x2:
    """2x2 stride-2 max pooling with ceiling semantics on odd dims.

    Odd edges are padded with -inf so the border window reduces over the
    real cells only; ties route the gradient to the first maximum.
    """

    def init(self, params, rng, dtype):
        pass

    @staticmethod
    def out_dim(d):
        return (d + 1) // 2

    def forward(self, x, params, mode, rng):
        _check_mode(mode)
        n, h, w, c = x.shape
        ho, wo = self.out_dim(h), self.out_dim(w)
        xp = np.full((n, 2 * ho, 2 * wo, c), -np.inf, dtype=x.dtype)
        xp[:, :h, :w, :] = x
        windows = (
            xp.reshape(n, ho, 2, wo, 2, c)
            .transpose(0, 1, 3, 2, 4, 5)
            .reshape(n, ho, wo, 4, c)
        )
        idx = np.argmax(windows, axis=3)
        y = np.take_along_axis(windows, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        return y, (idx, x.shape)

    def backward(self, dy, params, cache, grads):
        idx, x_shape = cache
        n, h, w, c = x_shape
        ho, wo = self.out_dim(h), self.out_dim(w)
        dwindows = np.zeros((n, ho, wo, 4, c), dtype=dy.dtype)
        np.put_along_axis(dwindows, idx[:, :, :, None, :], dy[:, :, :, None, :], axis=3)
        dxp = (
            dwindows.reshape(n, ho, wo, 2, 2, c)
            .transpose(0, 1, 3, 2, 4, 5)
            .reshape(n, 2 * ho, 2 * wo, c)
        )
        return dxp[:, :h, :w, :]


class Dropout:
    """Inverted dropout: active in train and infer_mc, identity otherwise."""

    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def init(self, params, rng, dtype):
        pass

    def forward(self, x, params, mode, rng):
        _check_mode(mode)
        if mode == INFER_DETERMINISTIC or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ConfigurationError("dropout in stochastic mode requires an rng")
        keep = (rng.random(x.shape) >= self.rate).astype(x.dtype)
        scaled = keep / (1.0 - self.rate)
        return x * scaled, scaled

    def backward(self, dy, params, cache, grads):
        if cache is None:
            return dy
        return dy * cache


class GlobalAvgPool:
    """NHWC -> (n, c) spatial mean."""

    def init(self, params, rng, dtype):
        pass

    def forward(self, x, params, mode, rng):
        _check_mode(mode)
        return x.mean(axis=(1, 2)), x.shape

    def backward(self, dy, params, cache, grads):
        n, h, w, c = cache
        return np.broadcast_to(dy[:, None, None, :], (n, h, w, c)) / (h * w)


class Flatten:
    def init(self, params, rng, dtype):
        pass

    def forward(self, x, params, mode, rng):
        _check_mode(mode)
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, params, cache, grads):
        return dy.reshape(cache)


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def init(self, params, rng, dtype):
        for layer in self.layers:
            layer.init(params, rng, dtype)

    def forward(self, x, params, mode, rng):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, params, mode, rng)
            caches.append(cache)
        return x, caches

    def backward(self, dy, params, caches, grads):
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy = layer.backward(dy, params, cache, grads)
        return dy


def softmax(logits):
    """Row-wise softmax; strictly positive rows summing to 1."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch plus the fused dlogits gradient."""
    probs = softmax(logits)
    n = logits.shape[0]
    picked = np.clip(probs[np.arange(n), labels], 1e-12, None)
    loss = float(-np.mean(np.log(picked)))
    dlogits = probs.astype(logits.dtype)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, probs, dlogits / n
