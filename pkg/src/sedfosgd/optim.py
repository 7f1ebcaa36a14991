"""Optimizer family: SGD, fixed-exponent fractional SGD, and the
dimension-adaptive variant.

The fractional update scales the gradient of layer j by

    (|theta_t - theta_{t-1}| + delta)^(1 - alpha_j) / Gamma(2 - alpha_j)

elementwise (or with the layer delta norm in "layer-norm" mode). At
alpha_j = 1 the factor is exactly 1 and the update is plain SGD. The
adaptive variant recomputes alpha_j each step from the per-layer effective
dimension of the EMA Fisher blocks.
"""

from dataclasses import dataclass, field

import numpy as np

from . import fisher as fisher_mod
from . import sed as sed_mod
from .mathkit import gamma
from .sed import AlphaState, SedConfig, SedEstimate


class DivergenceError(RuntimeError):
    """A step produced non-finite values; the run is aborted, not patched."""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


@dataclass(frozen=True)
class ParamState:
    layers: tuple          # tuple of 1-D arrays, one per layer
    prev_layers: tuple     # previous iterate, same shapes
    t: int = 0

    @classmethod
    def init(cls, layers):
        layers = tuple(np.asarray(v, dtype=float) for v in layers)
        return cls(layers=layers, prev_layers=tuple(v.copy() for v in layers), t=0)

    @property
    def n_layers(self):
        return len(self.layers)

    def deltas(self):
        """Per-layer norm of the last accepted step."""
        return [float(np.linalg.norm(c - p))
                for c, p in zip(self.layers, self.prev_layers)]


@dataclass(frozen=True)
class OptimConfig:
    mu0: float
    delta: float = 1e-6
    sed_cfg: SedConfig = field(default_factory=SedConfig)
    fisher_decay: float = 0.1
    scaling_mode: str = "elementwise"  # or "layer-norm"
    grad_clip: float = None

    def __post_init__(self):
        if not self.mu0 > 0:
            raise ValueError(f"mu0 must be > 0, got {self.mu0}")
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if self.scaling_mode not in ("elementwise", "layer-norm"):
            raise ValueError(f"unknown scaling_mode {self.scaling_mode!r}")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError(f"grad_clip must be > 0, got {self.grad_clip}")


def step_size(t, mu0):
    """mu0 / sqrt(t) for t >= 1."""
    if t < 1:
        raise ValueError(f"step schedule starts at t = 1, got {t}")
    return mu0 / np.sqrt(t)


def clip_gradients(grads, bound):
    """Scale the whole gradient so its global norm is at most `bound`."""
    if bound is None:
        return grads
    total = np.sqrt(sum(float(np.dot(g, g)) for g in grads))
    if total <= bound:
        return grads
    factor = bound / total
    return [factor * g for g in grads]


def _check_shapes(state, grads):
    if len(grads) != state.n_layers:
        raise ValueError(
            f"expected {state.n_layers} gradient layers, got {len(grads)}")
    for j, (g, th) in enumerate(zip(grads, state.layers)):
        if np.shape(g) != th.shape:
            raise ValueError(
                f"layer {j} gradient shape {np.shape(g)} != {th.shape}")


def _accept(state, new_layers):
    for j, v in enumerate(new_layers):
        if not np.all(np.isfinite(v)):
            raise DivergenceError(
                f"non-finite parameters in layer {j} at step {state.t}",
                step_index=state.t)
    return ParamState(layers=tuple(new_layers),
                      prev_layers=state.layers,
                      t=state.t + 1)


def sgd_step(state, grads, mu):
    grads = [np.asarray(g, dtype=float) for g in grads]
    _check_shapes(state, grads)
    for j, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise DivergenceError(
                f"non-finite gradient in layer {j} at step {state.t}",
                step_index=state.t)
    new_layers = [th - mu * g for th, g in zip(state.layers, grads)]
    return _accept(state, new_layers)


def fractional_factor(delta_prev, alpha, cfg):
    """The (|Delta| + delta)^(1-alpha) scaling for one layer."""
    if cfg.scaling_mode == "elementwise":
        base = np.abs(delta_prev) + cfg.delta
    else:
        base = np.linalg.norm(delta_prev) + cfg.delta
    return base ** (1.0 - alpha)


def fosgd_step(state, grads, mu, alpha, cfg):
    """One fractional step with fixed per-layer exponents."""
    if state.t < 1:
        raise ValueError("fractional steps require one classical step first")
    grads = [np.asarray(g, dtype=float) for g in grads]
    _check_shapes(state, grads)
    new_layers = []
    for j, (th, prev, g) in enumerate(zip(state.layers, state.prev_layers, grads)):
        if not np.all(np.isfinite(g)):
            raise DivergenceError(
                f"non-finite gradient in layer {j} at step {state.t}",
                step_index=state.t)
        a = float(alpha.per_layer_alpha[j])
        if not 0.0 < a <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {a} for layer {j}")
        factor = fractional_factor(th - prev, a, cfg)
        new_layers.append(th - (mu / gamma(2.0 - a)) * (factor * g))
    return _accept(state, new_layers)


def make_fisher_blocks(state, decay, mode=None):
    """Fresh zero EMA blocks matching the layer shapes of `state`."""
    return [fisher_mod.FisherBlock.zeros(j, th.shape[0], decay, mode=mode)
            for j, th in enumerate(state.layers)]


def observe_fisher_sed(grads, fisher_blocks, sed, scfg):
    """Fold gradients into the EMA blocks and refresh the dimension state.

    The block list is updated in place (single-owner state). Returns the new
    SedEstimate (running max folded in) and the exponents it implies.
    """
    for j, g in enumerate(grads):
        fisher_blocks[j] = fisher_mod.ema_update(
            fisher_blocks[j], fisher_mod.GradientSample(j, np.asarray(g, dtype=float)))

    n_layers = len(fisher_blocks)
    per_layer = np.empty(n_layers)
    lower = np.empty(n_layers)
    acc = 0.0
    for j, block in enumerate(fisher_blocks):
        d_j = block.dim
        if scfg.use_normalized_fisher:
            mat = fisher_mod.normalize(block, d_j)
        else:
            mat = block.matrix
        per_layer[j] = sed_mod.two_sed(mat, d_j, scfg)
        acc = sed_mod.lower_2sed_accumulate(acc, mat, scfg)
        lower[j] = acc

    sed = SedEstimate(per_layer=per_layer, lower_cumulative=lower,
                      d_max_running=sed.d_max_running)
    sed = sed_mod.update_dmax(sed)
    return sed, sed_mod.adapt_alpha(sed, scfg)


def twosed_fosgd_step(state, grads, fisher_blocks, sed, cfg):
    """One full adaptive step.

    Order per iteration: fold gradients into the EMA blocks, recompute the
    per-layer effective dimensions and the running maximum, derive the
    exponents, then take the fractional step at mu0/sqrt(t)."""
    grads = [np.asarray(g, dtype=float) for g in grads]
    _check_shapes(state, grads)
    sed, alpha = observe_fisher_sed(grads, fisher_blocks, sed, cfg.sed_cfg)
    mu = step_size(state.t, cfg.mu0)
    new_state = fosgd_step(state, grads, mu, alpha, cfg)
    return new_state, sed, alpha


def delta_radius(cfg, grad_bound, alpha_max=None):
    """Fixed point R = mu0 * max(1, (delta + R)^(1 - alpha_max)) * G.

    This is the consecutive-iterate bound; the max with 1 covers the first
    classical step, whose scaling factor is exactly 1.
    """
    if alpha_max is None:
        alpha_max = cfg.sed_cfg.alpha0
    r = cfg.mu0 * grad_bound
    for _ in range(100):
        c_delta = max(1.0, (cfg.delta + r) ** (1.0 - alpha_max))
        r_next = cfg.mu0 * c_delta * grad_bound
        if abs(r_next - r) <= 1e-15 * max(1.0, r):
            r = r_next
            break
        r = r_next
    return r


def bounded_iterate_check(trajectory, cfg, grad_bound):
    """True iff every consecutive-iterate layer norm stays within the
    fixed-point radius implied by the clip bound."""
    bound = delta_radius(cfg, grad_bound) * (1.0 + 1e-12)
    for state in trajectory:
        for d in state.deltas():
            if d > bound:
                return False
    return True
