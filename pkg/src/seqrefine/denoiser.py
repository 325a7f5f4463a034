"""Trainable region-token network for mixed-noise conditional denoising.

The model maps (region vectors, per-region noise levels) to a per-region
noise estimate. Each region becomes a token: a linear embedding of its
vector plus sinusoidal features of its own noise level plus a learned
position embedding. Tokens then pass through pre-norm dense token-mixing
blocks (an MLP across the region axis followed by an MLP across the
channel axis), so every region's output can depend on all regions and on
the full noise-level configuration. Dense mixing is used instead of
softmax attention because the whole pipeline trains with plain SGD, and
the cross-region pathway of a linear mixer keeps usable gradient scale
under SGD where attention logits stall. Gradients are computed by hand
(verified against finite differences).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import NoiseSchedule, RegionSample, schedule_eval

LEVEL_FEATURES = 16                       # sinusoidal features per noise level
_FREQS = np.pi * 2.0 ** np.arange(LEVEL_FEATURES // 2, dtype=np.float64)
_LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


class TrainingDivergedError(RuntimeError):
    """Loss exceeded the divergence bound during training."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step}: loss={loss:.3e}")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int
    steps: int
    mix_distribution_weights: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0
    momentum: float = 0.9

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")
        w = np.asarray(self.mix_distribution_weights, dtype=np.float64)
        if w.shape != (3,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mix_distribution_weights must be three nonnegative values summing to 1")


def _level_features(t: np.ndarray) -> np.ndarray:
    f = t[..., None] * _FREQS
    return np.concatenate([np.sin(f), np.cos(f)], axis=-1)


def _gelu(z):
    u = _GELU_C * (z + _GELU_A * z ** 3)
    return 0.5 * z * (1.0 + np.tanh(u))


def _gelu_grad(z):
    u = _GELU_C * (z + _GELU_A * z ** 3)
    th = np.tanh(u)
    return 0.5 * (1.0 + th) + 0.5 * z * (1.0 - th ** 2) * _GELU_C * (1.0 + 3.0 * _GELU_A * z ** 2)


def _ln_forward(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + _LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _ln_backward(dy, cache):
    xhat, inv, g = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=axes)
    db = dy.sum(axis=axes)
    dxhat = dy * g
    m1 = dxhat.mean(-1, keepdims=True)
    m2 = (dxhat * xhat).mean(-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


_LAYER_PARAMS = 12       # ln1(2) + token mlp(4) + ln2(2) + channel mlp(4)
_HEAD_PARAMS = 5         # w_in, b_in, w_lvl, b_lvl, pos
_TAIL_PARAMS = 4         # lnf_g, lnf_b, w_out, b_out


class DenoiserModel:
    """Region-token denoiser: (N, d) regions + (N,) levels -> (N, d) noise estimate.

    Parameters live in ``self.params`` (a flat list of float64 arrays in a
    fixed declaration order used by the checkpoint format and by the
    finite-difference gradient check).
    """

    def __init__(self, n_regions: int, dim: int, hidden: int = 128, layers: int = 4, seed: int = 0):
        if n_regions < 1 or dim < 1 or hidden < 4 or layers < 0:
            raise ValueError("invalid model dimensions")
        self.n_regions = n_regions
        self.dim = dim
        self.hidden = hidden
        self.layers = layers
        self.seed = seed
        self.token_hidden = 2 * n_regions
        rng = np.random.default_rng(seed)
        h, d, n, th = hidden, dim, n_regions, self.token_hidden
        res_scale = 1.0 / np.sqrt(max(1, 2 * layers))

        def lin(fan_in, fan_out, scale=1.0):
            return rng.standard_normal((fan_in, fan_out)) * (scale / np.sqrt(fan_in))

        params = [
            lin(d, h),                       # w_in
            np.zeros(h),                     # b_in
            lin(LEVEL_FEATURES, h),          # w_lvl
            np.zeros(h),                     # b_lvl
            rng.standard_normal((n_regions, h)) * 0.1,   # pos
        ]
        for _ in range(layers):
            params += [
                np.ones(h), np.zeros(h),                     # ln1
                lin(n, th), np.zeros(th),                    # token mix in
                lin(th, n, res_scale), np.zeros(n),          # token mix out
                np.ones(h), np.zeros(h),                     # ln2
                lin(h, 2 * h), np.zeros(2 * h),              # channel mix in
                lin(2 * h, h, res_scale), np.zeros(h),       # channel mix out
            ]
        params += [
            np.ones(h), np.zeros(h),         # final layernorm
            lin(h, d), np.zeros(d),          # head
        ]
        self.params = params

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.params)

    def _layer(self, l: int):
        i = _HEAD_PARAMS + l * _LAYER_PARAMS
        return self.params[i:i + _LAYER_PARAMS]

    def _tail(self):
        return self.params[-_TAIL_PARAMS:]

    def _forward(self, x, t, want_cache: bool):
        w_in, b_in, w_lvl, b_lvl, pos = self.params[:_HEAD_PARAMS]
        feats = _level_features(t)
        h = x @ w_in + b_in + feats @ w_lvl + b_lvl + pos
        caches = []
        for l in range(self.layers):
            g1, c1, wt1, bt1, wt2, bt2, g2, c2, wc1, bc1, wc2, bc2 = self._layer(l)
            xn, ln1c = _ln_forward(h, g1, c1)
            u = xn.swapaxes(-1, -2)          # (B, h, N): mix across regions
            z1 = u @ wt1 + bt1
            a1 = _gelu(z1)
            h1 = h + (a1 @ wt2 + bt2).swapaxes(-1, -2)
            yn, ln2c = _ln_forward(h1, g2, c2)
            z2 = yn @ wc1 + bc1
            a2 = _gelu(z2)
            h = h1 + a2 @ wc2 + bc2
            if want_cache:
                caches.append((u, ln1c, z1, a1, yn, ln2c, z2, a2))
        gf, cf, w_out, b_out = self._tail()
        fn, lnfc = _ln_forward(h, gf, cf)
        out = fn @ w_out + b_out
        cache = (x, feats, caches, fn, lnfc) if want_cache else None
        return out, cache

    def predict(self, regions, levels) -> np.ndarray:
        """Noise estimate for one sample (N, d) or a batch (B, N, d)."""
        x = np.asarray(regions, dtype=np.float64)
        t = np.asarray(levels, dtype=np.float64)
        single = x.ndim == 2
        if single:
            x, t = x[None], t[None]
        if x.shape[1:] != (self.n_regions, self.dim) or t.shape != x.shape[:2]:
            raise ValueError(f"expected regions ({self.n_regions}, {self.dim}) with matching levels")
        if not (np.isfinite(x).all() and np.isfinite(t).all()):
            raise FloatingPointError("non-finite values in denoiser input")
        out, _ = self._forward(x, t, want_cache=False)
        return out[0] if single else out

    def loss_and_grad(self, x, t, target):
        """Mean-squared denoising loss and its parameter gradients.

        x, target: (B, N, d); t: (B, N). Returns (loss, grads) with grads
        aligned with ``self.params``.
        """
        out, cache = self._forward(x, t, want_cache=True)
        diff = out - target
        loss = float(np.mean(diff * diff))
        dout = (2.0 / diff.size) * diff

        grads = [np.zeros_like(p) for p in self.params]
        xin, feats, caches, fn, lnfc = cache
        gf, cf, w_out, b_out = self._tail()
        nfl = fn.reshape(-1, self.hidden)

        grads[-2] = nfl.T @ dout.reshape(-1, self.dim)      # w_out
        grads[-1] = dout.sum(axis=(0, 1))                   # b_out
        dfn = dout @ w_out.T
        dh, dgf, dcf = _ln_backward(dfn, lnfc)
        grads[-4], grads[-3] = dgf, dcf

        for l in range(self.layers - 1, -1, -1):
            g1, c1, wt1, bt1, wt2, bt2, g2, c2, wc1, bc1, wc2, bc2 = self._layer(l)
            u, ln1c, z1, a1, yn, ln2c, z2, a2 = caches[l]
            base = _HEAD_PARAMS + l * _LAYER_PARAMS

            # channel branch: h = h1 + gelu(yn@wc1+bc1)@wc2 + bc2
            a2f = a2.reshape(-1, a2.shape[-1])
            grads[base + 10] = a2f.T @ dh.reshape(-1, self.hidden)       # wc2
            grads[base + 11] = dh.sum(axis=(0, 1))                       # bc2
            dz2 = (dh @ wc2.T) * _gelu_grad(z2)
            ynf = yn.reshape(-1, self.hidden)
            grads[base + 8] = ynf.T @ dz2.reshape(-1, dz2.shape[-1])     # wc1
            grads[base + 9] = dz2.sum(axis=(0, 1))                       # bc1
            dyn = dz2 @ wc1.T
            dh1, dg2, dc2 = _ln_backward(dyn, ln2c)
            grads[base + 6], grads[base + 7] = dg2, dc2
            dh1 += dh

            # token branch: h1 = h + (gelu(xn^T@wt1+bt1)@wt2 + bt2)^T
            du2 = dh1.swapaxes(-1, -2)                                   # (B, h, N)
            a1f = a1.reshape(-1, a1.shape[-1])
            grads[base + 4] = a1f.T @ du2.reshape(-1, self.n_regions)    # wt2
            grads[base + 5] = du2.sum(axis=(0, 1))                       # bt2
            dz1 = (du2 @ wt2.T) * _gelu_grad(z1)
            uf = u.reshape(-1, self.n_regions)
            grads[base + 2] = uf.T @ dz1.reshape(-1, dz1.shape[-1])      # wt1
            grads[base + 3] = dz1.sum(axis=(0, 1))                       # bt1
            dxn = (dz1 @ wt1.T).swapaxes(-1, -2)
            dh_in, dg1, dc1 = _ln_backward(dxn, ln1c)
            grads[base + 0], grads[base + 1] = dg1, dc1
            dh = dh1 + dh_in

        # embeddings
        grads[4] = dh.sum(axis=0)                                        # pos
        ff = feats.reshape(-1, LEVEL_FEATURES)
        grads[2] = ff.T @ dh.reshape(-1, self.hidden)                    # w_lvl
        grads[3] = dh.sum(axis=(0, 1))                                   # b_lvl
        xf = xin.reshape(-1, self.dim)
        grads[0] = xf.T @ dh.reshape(-1, self.hidden)                    # w_in
        grads[1] = dh.sum(axis=(0, 1))                                   # b_in
        return loss, grads

    def get_params(self) -> list[np.ndarray]:
        return [p.copy() for p in self.params]

    def set_params(self, params: list[np.ndarray]) -> None:
        if len(params) != len(self.params):
            raise ValueError("parameter list length mismatch")
        for own, new in zip(self.params, params):
            if own.shape != np.shape(new):
                raise ValueError(f"parameter shape mismatch: {own.shape} vs {np.shape(new)}")
        self.params = [np.asarray(p, dtype=np.float64).copy() for p in params]


def denoise_predict(model, sample: RegionSample) -> np.ndarray:
    """Per-region noise estimate (N, d) for a sample at its current levels."""
    return model.predict(sample.regions, sample.levels)


def sample_noise_config(n_regions: int, rng: np.random.Generator,
                        weights=(0.6, 0.2, 0.2)) -> np.ndarray:
    """Draw one per-region noise-level vector from the training mixture.

    Families: (a) i.i.d. uniform levels, (b) one shared uniform level,
    (c) binary split where a random subset sits at t=1 and the rest at
    t=0. The binary subset size is uniform over {0..N} so sparse splits
    (one noisy region among clean context) are as common as balanced
    ones; this is the re-noised/clean pattern the refiner produces at
    any resampling ratio. The shared family matches standard diffusion.
    """
    if n_regions < 1:
        raise ValueError("n_regions must be >= 1")
    u = rng.random()
    if u < weights[0]:
        return rng.random(n_regions)
    if u < weights[0] + weights[1]:
        return np.full(n_regions, rng.random())
    return _binary_mask(1, n_regions, rng)[0]


def _binary_mask(batch: int, n_regions: int, rng: np.random.Generator) -> np.ndarray:
    size = rng.integers(0, n_regions + 1, size=batch)
    ranks = np.argsort(rng.random((batch, n_regions)), axis=1)
    return (ranks < size[:, None]).astype(np.float64)


def _noise_config_batch(batch: int, n_regions: int, rng: np.random.Generator, weights) -> np.ndarray:
    fam = rng.choice(3, size=batch, p=list(weights))
    out = rng.random((batch, n_regions))
    shared = rng.random(batch)
    mask = _binary_mask(batch, n_regions, rng)
    out[fam == 1] = shared[fam == 1, None]
    out[fam == 2] = mask[fam == 2]
    return out


def train(model: DenoiserModel, dataset, config: TrainConfig,
          schedule: NoiseSchedule | None = None):
    """SGD-with-momentum training of the denoising objective.

    Each step draws a batch of clean samples, a noise configuration per
    sample, and fresh noise; forms the interpolated noisy batch; and
    minimizes the mean squared error between the predicted and true
    noise. Returns (model, loss_history); the model is updated in place.
    """
    if schedule is None:
        schedule = NoiseSchedule()
    data = np.stack([s.regions for s in dataset])
    if data.shape[1:] != (model.n_regions, model.dim):
        raise ValueError("dataset shape does not match model dimensions")
    history: list[float] = []
    if config.steps == 0:
        return model, history
    rng = np.random.default_rng(config.seed)
    velocity = [np.zeros_like(p) for p in model.params]
    for step in range(config.steps):
        idx = rng.integers(0, data.shape[0], size=config.batch_size)
        x0 = data[idx]
        t = _noise_config_batch(config.batch_size, model.n_regions, rng, config.mix_distribution_weights)
        eps = rng.standard_normal(x0.shape)
        alpha, sigma = schedule_eval(schedule, t)
        xt = alpha[..., None] * x0 + sigma[..., None] * eps
        loss, grads = model.loss_and_grad(xt, t, eps)
        if not np.isfinite(loss) or loss > 1e6:
            raise TrainingDivergedError(step, loss)
        for p, v, g in zip(model.params, velocity, grads):
            v *= config.momentum
            v -= config.learning_rate * g
            p += v
        history.append(loss)
    return model, history


def gradient_check(model: DenoiserModel, sample: RegionSample, eps_target,
                   rng: np.random.Generator | None = None, fraction: float = 0.01,
                   fd_step: float = 1e-4, corrupt: bool = False) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks a random ``fraction`` of the parameters (at least one). Each
    entry is compared as |a - n| / max(|a|, |n|, 1e-4); the floor keeps
    finite-difference roundoff on near-zero gradients from registering
    as disagreement. With ``corrupt=True`` the checked analytic entry of
    largest magnitude is scaled by 2 so callers can confirm the check
    detects faults. Models above 1e4 parameters are rejected; finite
    differencing them is too slow to be meaningful as a test.
    """
    if model.parameter_count > 10_000:
        raise ValueError("gradient_check is limited to models with <= 1e4 parameters")
    if model.parameter_count == 0:
        return 0.0
    if rng is None:
        rng = np.random.default_rng(0)
    x = np.asarray(sample.regions, dtype=np.float64)[None]
    t = np.asarray(sample.levels, dtype=np.float64)[None]
    y = np.asarray(eps_target, dtype=np.float64)[None]
    _, grads = model.loss_and_grad(x, t, y)
    flat_grad = np.concatenate([g.ravel() for g in grads])
    total = flat_grad.size
    n_check = max(1, int(round(fraction * total)))
    picks = rng.choice(total, size=min(n_check, total), replace=False)
    if corrupt:
        worst = picks[np.argmax(np.abs(flat_grad[picks]))]
        flat_grad[worst] *= 2.0

    offsets = np.cumsum([0] + [p.size for p in model.params])
    max_rel = 0.0
    for flat_idx in picks:
        arr_i = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        inner = flat_idx - offsets[arr_i]
        p = model.params[arr_i]
        old = p.flat[inner]
        p.flat[inner] = old + fd_step
        lp, _ = model.loss_and_grad(x, t, y)
        p.flat[inner] = old - fd_step
        lm, _ = model.loss_and_grad(x, t, y)
        p.flat[inner] = old
        fd = (lp - lm) / (2.0 * fd_step)
        a = flat_grad[flat_idx]
        rel = abs(a - fd) / max(abs(a), abs(fd), 1e-4)
        max_rel = max(max_rel, rel)
    return max_rel
