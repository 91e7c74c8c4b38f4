"""The dual-stream byte predictor.

One model instance drives all B streams at once. Each prediction step takes
the last ctx_len bytes of every stream and produces a probability row per
stream; a training step then backpropagates the coded symbols through the
shared weights. Compressor and decompressor run this class through identical
call sequences, which is what makes the probabilities reproducible on both
sides.

Architecture, per step:

- shared trunk: embed the context window, flatten, layer-normalize.
- global stream: a gated block of the newest symbol is appended to a rolling
  cache (shift register over past blocks); a wide projection of the cache
  plus a weighted skip of the input gives a long-horizon summary.
- local stream: a kernel-wide convolution over the normalized embeddings
  captures short-range structure.
- a sigmoid router blends the two streams channelwise.
- refiner: a low-rank per-stream channel mixer with a learned gate and skip,
  then a wide gated expansion block with its own skip.
- a linear head over the refined state yields the next-byte logits.

Ablation variants bypass modules without changing anything else, so their
compression ratios are directly comparable.
"""

from __future__ import annotations

import math

import numpy as np

from .config import ModelConfig
from .errors import ModelDivergenceError, UsageError
from .nn import ops
from .nn.optim import Adam
from .nn.tensor import Tensor

VARIANTS = ("full", "dual", "global_only", "local_only", "mixer_nogate", "mixer")

LN2 = math.log(2.0)


class Predictor:
    def __init__(self, cfg: ModelConfig, variant: str = "full"):
        cfg.validate()
        if variant not in VARIANTS:
            raise UsageError(f"unknown variant {variant!r}, pick one of {VARIANTS}")
        self.cfg = cfg
        self.variant = variant
        self.params: dict[str, Tensor] = {}
        self._init_params()
        self.cache = np.zeros((cfg.batch, cfg.cache_dim), dtype=cfg.dtype)
        self.opt = Adam(list(self.params.values()), lr=cfg.lr, beta1=cfg.beta1,
                        beta2=cfg.beta2, eps=cfg.adam_eps)
        self.step_count = 0
        self.alpha_stats: tuple[float, float, float] | None = None
        self._live: Tensor | None = None

    # -- construction ------------------------------------------------------

    def _init_params(self) -> None:
        cfg = self.cfg
        dt = cfg.dtype
        rng = np.random.default_rng(cfg.seed)
        d, dh, de, m = cfg.embed_dim, cfg.hidden_dim, cfg.expand_dim, cfg.mix_dim
        a, k = cfg.alphabet, cfg.conv_kernel

        def norm(shape, std):
            return Tensor(rng.normal(0.0, std, shape).astype(dt), requires_grad=True)

        def const(shape, value):
            return Tensor(np.full(shape, value, dtype=dt), requires_grad=True)

        p = self.params
        p["emb"] = norm((a, d), 0.02)
        p["in_ln_g"] = const(dh, 1.0)
        p["in_ln_b"] = const(dh, 0.0)
        p["w_gate"] = norm((d, d), d ** -0.5)
        p["w_val"] = norm((d, d), d ** -0.5)
        p["w_mem"] = norm((cfg.cache_dim, dh), cfg.cache_dim ** -0.5)
        p["lam_mem"] = const((), 1.0)
        p["loc_ln_g"] = const(d, 1.0)
        p["loc_ln_b"] = const(d, 0.0)
        p["conv_k"] = norm((k, d, d), (k * d) ** -0.5)
        p["conv_b"] = const(d, 0.0)
        p["w_route"] = norm((dh, dh), dh ** -0.5)
        p["mix_ln_g"] = const(dh, 1.0)
        p["mix_ln_b"] = const(dh, 0.0)
        p["w_down"] = norm((dh, m), dh ** -0.5)
        p["w_mix"] = Tensor(np.tile(np.eye(m, dtype=dt), (cfg.batch, 1, 1)),
                            requires_grad=True)
        p["w_up"] = norm((m, dh), m ** -0.5)
        p["w_cgate"] = norm((dh, dh), dh ** -0.5)
        p["lam_mix"] = const((), 1.0)
        p["ref_ln_g"] = const(dh, 1.0)
        p["ref_ln_b"] = const(dh, 0.0)
        p["w_e1"] = norm((dh, de), dh ** -0.5)
        p["w_e2"] = norm((dh, de), dh ** -0.5)
        p["w_f"] = norm((de, dh), de ** -0.5)
        p["out_ln_g"] = const(dh, 1.0)
        p["out_ln_b"] = const(dh, 0.0)
        p["lam_out"] = const((), 1.0)
        p["w_head"] = norm((dh, a), 0.01)
        p["b_head"] = const(a, 0.0)

    # -- forward -----------------------------------------------------------

    def _forward(self, ctx: np.ndarray):
        cfg = self.cfg
        if ctx.shape != (cfg.batch, cfg.ctx_len):
            raise UsageError(
                f"context must be {(cfg.batch, cfg.ctx_len)}, got {ctx.shape}")
        p = self.params
        v = self.variant
        parts: dict[str, np.ndarray] = {}

        emb = ops.embed(p["emb"], ctx)
        x = ops.layer_norm(ops.flatten2(emb), p["in_ln_g"], p["in_ln_b"])

        h_global = None
        rolled = None
        if v != "local_only":
            x_t = ops.slice_last(x, cfg.embed_dim)
            block = ops.mul(ops.gelu(ops.matmul(x_t, p["w_gate"])),
                            ops.matmul(x_t, p["w_val"]))
            rolled = ops.roll_cache(self.cache, block)
            h_global = ops.add(ops.gelu(ops.matmul(rolled, p["w_mem"])),
                               ops.scale(x, p["lam_mem"]))
            parts["global"] = h_global.data

        h_local = None
        if v != "global_only":
            loc = ops.layer_norm(emb, p["loc_ln_g"], p["loc_ln_b"])
            conv = ops.gelu(ops.conv1d(loc, p["conv_k"], p["conv_b"]))
            h_local = ops.flatten2(conv)
            parts["local"] = h_local.data

        if v == "global_only":
            h_mix = h_global
            alpha = None
        elif v == "local_only":
            h_mix = h_local
            alpha = None
        else:
            alpha = ops.sigmoid(ops.matmul(x, p["w_route"]))
            h_mix = ops.mix(alpha, h_global, h_local)
            parts["alpha"] = alpha.data
        parts["mix"] = h_mix.data

        if v in ("mixer", "mixer_nogate", "full"):
            z = ops.layer_norm(h_mix, p["mix_ln_g"], p["mix_ln_b"])
            inner = ops.matmul(ops.bmm(ops.matmul(z, p["w_down"]), p["w_mix"]),
                               p["w_up"])
            parts["mixer_inner"] = inner.data
            skip = ops.scale(h_mix, p["lam_mix"])
            if v == "mixer_nogate":
                h_coarse = ops.add(inner, skip)
            else:
                gate = ops.sigmoid(ops.matmul(h_mix, p["w_cgate"]))
                h_coarse = ops.add(ops.mul(inner, gate), skip)
        else:
            h_coarse = h_mix
        parts["coarse"] = h_coarse.data

        if v == "full":
            z2 = ops.layer_norm(h_coarse, p["ref_ln_g"], p["ref_ln_b"])
            wide = ops.mul(ops.gelu(ops.matmul(z2, p["w_e1"])),
                           ops.matmul(z2, p["w_e2"]))
            narrowed = ops.layer_norm(ops.matmul(wide, p["w_f"]),
                                      p["out_ln_g"], p["out_ln_b"])
            h = ops.add(ops.gelu(narrowed), ops.scale(h_coarse, p["lam_out"]))
        else:
            h = h_coarse
        parts["hidden"] = h.data

        logits = ops.add_bias(ops.matmul(h, p["w_head"]), p["b_head"])
        parts["logits"] = logits.data
        return logits, rolled, parts

    # -- public API --------------------------------------------------------

    def predict(self, ctx: np.ndarray) -> np.ndarray:
        """One forward pass; returns float64 probability rows (B, 256).

        Advances the rolling cache. The returned rows are strictly positive
        and sum to 1 within float64 accuracy.
        """
        logits, rolled, parts = self._forward(ctx)
        try:
            ops.check_finite(logits.data, self.step_count)
        except FloatingPointError as e:
            raise ModelDivergenceError(self.step_count, str(e)) from None
        probs = ops.softmax(logits.data)
        if rolled is not None:
            self.cache = rolled.data
        if "alpha" in parts:
            a = parts["alpha"]
            self.alpha_stats = (float(a.mean()), float(a.min()), float(a.max()))
        self._live = logits
        return probs

    def train_step(self, targets: np.ndarray) -> float:
        """Backpropagate the coded symbols through the last predict graph."""
        assert self._live is not None, "train_step requires a preceding predict"
        loss_t, _ = ops.softmax_xent(self._live, np.asarray(targets, dtype=np.int64))
        loss = float(loss_t.data)
        if not math.isfinite(loss):
            raise ModelDivergenceError(self.step_count, "non-finite loss")
        loss_t.backward()
        self.opt.step()
        self.opt.zero_grad()
        self._live = None
        self.step_count += 1
        return loss

    def forward_debug(self, ctx: np.ndarray) -> dict[str, np.ndarray]:
        """Forward pass returning intermediates, touching no state."""
        _, _, parts = self._forward(ctx)
        return parts

    def eval_loss(self, ctx: np.ndarray, targets: np.ndarray) -> float:
        """Loss of a single forward pass without any state mutation."""
        logits, _, _ = self._forward(ctx)
        loss_t, _ = ops.softmax_xent(logits, np.asarray(targets, dtype=np.int64))
        return float(loss_t.data)

    def loss_grads(self, ctx: np.ndarray, targets: np.ndarray):
        """Loss and per-parameter gradients, leaving model state untouched."""
        logits, _, _ = self._forward(ctx)
        loss_t, _ = ops.softmax_xent(logits, np.asarray(targets, dtype=np.int64))
        loss_t.backward()
        grads = {}
        for name, param in self.params.items():
            grads[name] = None if param.grad is None else param.grad.copy()
            param.grad = None
        return float(loss_t.data), grads

    def save_state(self) -> dict:
        """Deep copy of everything training mutates."""
        return {
            "params": {k: v.data.copy() for k, v in self.params.items()},
            "cache": self.cache.copy(),
            "m": [m.copy() for m in self.opt._m],
            "v": [v.copy() for v in self.opt._v],
            "t": self.opt.t,
            "step_count": self.step_count,
        }

    def load_state(self, state: dict) -> None:
        for k, v in state["params"].items():
            self.params[k].data[...] = v
        self.cache = state["cache"].copy()
        for dst, src in zip(self.opt._m, state["m"]):
            dst[...] = src
        for dst, src in zip(self.opt._v, state["v"]):
            dst[...] = src
        self.opt.t = state["t"]
        self.step_count = state["step_count"]

    @property
    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def active_param_count(self) -> int:
        """Parameters this variant's graph actually reaches.

        All variants allocate the full parameter set so that equal seeds
        give equal initializations; the active set is what distinguishes
        them, found by checking which parameters receive a gradient.
        """
        ctx = np.zeros((self.cfg.batch, self.cfg.ctx_len), dtype=np.uint8)
        _, grads = self.loss_grads(ctx, np.zeros(self.cfg.batch,
                                                 dtype=np.int64))
        return sum(self.params[k].data.size
                   for k, g in grads.items() if g is not None)


def nll_report(losses) -> tuple[float, float]:
    """Mean NLL of per-step losses, in nats and in bits per byte."""
    if len(losses) == 0:
        raise ValueError("no losses recorded")
    nats = float(np.mean(losses))
    return nats, nats / LN2
