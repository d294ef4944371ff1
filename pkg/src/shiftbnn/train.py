"""Bayes-by-backprop training with storage-free Gaussian noise retrieval.

Each training step draws one Gaussian variable per weight per ensemble
sample (w = mu + eps * sigma), runs forward/backward/gradient stages and
updates (mu, sigma) by plain SGD.  The noise comes from per-sample
reversible LFSR streams and is handled by one of two strategies:

* STORE: the baseline; every drawn count is logged during the forward
  pass and read back during the backward pass.
* SHIFT: nothing is logged; the backward pass retrieves the exact same
  values by shifting the generator streams in reverse, restoring every
  stream to its pre-step state.

Both strategies produce bit-identical parameter trajectories; that
equality is the whole point and is asserted by the test suite.

Note on pattern reuse: because SHIFT ends every step with the streams
restored to their pre-step state (that is what reversal means), the next
step's forward shifting regenerates the same per-step noise sequence.
The noise is therefore a fixed set of quadrature points per (sample,
weight) rather than fresh per step; STORE mirrors this so the two
strategies stay comparable.  ``TrainConfig.cache_epsilons`` exploits the
reuse by caching the per-step counts after the first step.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .grng import GrngStream, counts_to_eps, grng_init
from .lfsr import TapSet
from .replay import GenerationLedger, LedgerMismatch, SegmentRecord

SIGMA_MIN_DEFAULT = 1e-6


@dataclass
class TrainConfig:
    S: int = 1  # ensemble samples per step
    lr: float = 1e-3
    sigma_prior: float = 0.5  # zero-mean Gaussian prior stddev
    batch: int = 1
    grad_mode: str = "paper"  # "paper" (w / sigma_prior^2) | "exact"
    epsilon_strategy: str = "shift"  # "shift" | "store"
    master_seed: int = 0
    epochs: int = 1
    kl_scale: float = 1.0  # weight of the prior+posterior terms per step
    sigma_min: float = SIGMA_MIN_DEFAULT
    # consecutive draws from one stream are strongly correlated (each shift
    # replaces one bit of the counting window), so per-row noise adds almost
    # coherently; a small initial sigma keeps early activations bounded
    sigma_init: float = 0.005
    dtype: type = np.float32
    cache_epsilons: bool = False

    def __post_init__(self):
        if self.S < 1:
            raise ValueError(f"S must be >= 1, got {self.S}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.sigma_prior <= 0:
            raise ValueError(f"sigma_prior must be > 0, got {self.sigma_prior}")
        if self.grad_mode not in ("paper", "exact"):
            raise ValueError(f"unknown grad_mode {self.grad_mode!r}")
        if self.epsilon_strategy not in ("shift", "store"):
            raise ValueError(f"unknown epsilon_strategy {self.epsilon_strategy!r}")


@dataclass
class LossBreakdown:
    """Eq-style decomposition; all three terms are minimized.

    ``log_posterior`` and ``neg_log_prior`` are stored already scaled by
    the configured KL weight so that total == sum of the three parts.
    """

    likelihood_nll: float
    log_posterior: float
    neg_log_prior: float

    @property
    def total(self) -> float:
        return self.likelihood_nll + self.log_posterior + self.neg_log_prior


# -- per-weight math, as used by the function units -------------------------


def sample_weight(mu, sigma, eps):
    """w = mu + eps * sigma (eps may be an Epsilon or a value array)."""
    value = getattr(eps, "value", eps)
    return mu + value * sigma


def dpu_grad(w, mu, sigma, eps, cfg: TrainConfig):
    """d(posterior + prior terms)/dw for one sampled weight.

    "paper" mode keeps only the dominant prior part w / sigma_prior^2
    (a 2-bit left shift when sigma_prior = 0.5); "exact" mode adds the
    posterior's through-w derivative -eps / sigma.
    """
    value = getattr(eps, "value", eps)
    g = w / (cfg.sigma_prior ** 2)
    if cfg.grad_mode == "exact":
        g = g - value / sigma
    return g


def update_gradients(dw_prime, eps, accum_mu, accum_sigma) -> None:
    """Chain rule through w = mu + eps * sigma: dmu += dw', dsigma += dw' * eps."""
    value = getattr(eps, "value", eps)
    accum_mu += dw_prime
    accum_sigma += dw_prime * value


# -- layers ------------------------------------------------------------------


class BayesConv:
    kind = "conv"

    def __init__(self, n_in: int, m_out: int, k: int, stride: int = 1, pad: int = 0):
        self.N, self.M, self.K = n_in, m_out, k
        self.stride, self.pad = stride, pad
        self.mu = None
        self.sigma = None

    @property
    def geometry(self):
        return (self.K, self.M, self.N)

    @property
    def weight_count(self) -> int:
        return self.M * self.N * self.K * self.K

    def init_params(self, rng: np.random.Generator, cfg: TrainConfig):
        fan_in = self.N * self.K * self.K
        shape = (self.M, self.N, self.K, self.K)
        self.mu = (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(cfg.dtype)
        self.sigma = np.full(shape, cfg.sigma_init, dtype=cfg.dtype)

    def forward(self, x, w):
        return nn.conv_forward(x, w, self.stride, self.pad)

    def backward(self, x, e, w):
        in_hw = x.shape[-2:]
        dx = nn.conv_backward_data(e, w, in_hw, self.stride, self.pad)
        dw = nn.conv_backward_weights(x, e, self.K, self.stride, self.pad)
        return dx, dw


class BayesFC:
    kind = "fc"

    def __init__(self, n_in: int, n_out: int):
        self.n_in, self.n_out = n_in, n_out
        self.mu = None
        self.sigma = None

    @property
    def geometry(self):
        return (self.n_out, self.n_in)

    @property
    def weight_count(self) -> int:
        return self.n_out * self.n_in

    def init_params(self, rng: np.random.Generator, cfg: TrainConfig):
        shape = (self.n_out, self.n_in)
        self.mu = (rng.standard_normal(shape) / np.sqrt(self.n_in)).astype(cfg.dtype)
        self.sigma = np.full(shape, cfg.sigma_init, dtype=cfg.dtype)

    def forward(self, x, w):
        return nn.fc_forward(x, w)

    def backward(self, x, e, w):
        return nn.fc_backward_data(e, w), nn.fc_backward_weights(x, e)


class ReLU:
    kind = "relu"

    def forward(self, x):
        return nn.relu_fwd(x), x

    def backward(self, e, aux):
        return nn.relu_bwd(e, aux)


class MaxPool:
    kind = "pool"

    def __init__(self, k: int = 2):
        self.k = k

    def forward(self, x):
        out, arg = nn.maxpool_fwd(x, self.k)
        return out, (arg, x.shape[-2:])

    def backward(self, e, aux):
        arg, in_hw = aux
        return nn.maxpool_bwd(e, arg, in_hw, self.k)


class Flatten:
    kind = "flatten"

    def forward(self, x):
        lead = x.shape[:-3]
        return x.reshape(lead + (-1,)), x.shape

    def backward(self, e, aux):
        return e.reshape(aux)


BAYES_KINDS = ("conv", "fc")


class Model:
    def __init__(self, layers, name: str = "model"):
        self.layers = list(layers)
        self.name = name

    def bayes_layers(self):
        """(layer_id, layer) for every parameterized layer; the id is the
        position in the layer list so ledger segments line up."""
        return [(i, l) for i, l in enumerate(self.layers) if l.kind in BAYES_KINDS]

    def init_params(self, cfg: TrainConfig):
        rng = np.random.default_rng(cfg.master_seed)
        for _, layer in self.bayes_layers():
            layer.init_params(rng, cfg)

    def forward_with_weights(self, x, weights: dict):
        """Deterministic forward with explicit per-layer weight arrays."""
        a = x
        for i, layer in enumerate(self.layers):
            if layer.kind in BAYES_KINDS:
                a = layer.forward(a, weights[i])
            else:
                a, _ = layer.forward(a)
        return a

    def predict(self, x):
        """Posterior-mean forward (w = mu); used for validation accuracy."""
        return self.forward_with_weights(x, {i: l.mu for i, l in self.bayes_layers()})


# -- trainer -----------------------------------------------------------------


class GradAccum:
    def __init__(self, model: Model, dtype):
        self.dmu = {i: np.zeros_like(l.mu, dtype=dtype) for i, l in model.bayes_layers()}
        self.dsigma = {i: np.zeros_like(l.sigma, dtype=dtype) for i, l in model.bayes_layers()}

    def zero(self):
        for a in self.dmu.values():
            a[...] = 0
        for a in self.dsigma.values():
            a[...] = 0


class Trainer:
    def __init__(self, model: Model, cfg: TrainConfig, taps: TapSet | None = None):
        self.model = model
        self.cfg = cfg
        self.taps = taps or TapSet.default(256)
        self.n = self.taps.width
        self.streams: list[GrngStream] = [
            grng_init(cfg.master_seed, i, self.taps) for i in range(cfg.S)
        ]
        self.ledger = GenerationLedger()
        # per-(sample, layer) counts; filled after the first honest step
        # when cache_epsilons is on (the per-step noise repeats, see module
        # docstring)
        self._eps_cache: dict[tuple[int, int], np.ndarray] | None = None
        self._accum = None

    @property
    def _use_cache(self) -> bool:
        return self.cfg.cache_epsilons and self._eps_cache is not None

    # counts -> eps in the working dtype, via exact float64 standardization
    def _eps_from_counts(self, counts: np.ndarray, shape) -> np.ndarray:
        return counts_to_eps(counts, self.n).astype(self.cfg.dtype).reshape(shape)

    def _draw_counts(self, sample_id: int, layer_id: int, layer) -> np.ndarray:
        key = (sample_id, layer_id)
        if self._use_cache:
            return self._eps_cache[key]
        stream = self.streams[sample_id]
        start_state = stream.lfsr
        counts = stream.generate_block(layer.weight_count)
        self.ledger.record_segment(SegmentRecord(
            layer_id=layer_id,
            sample_id=sample_id,
            kind=layer.kind,
            counts=layer.weight_count,
            geometry=layer.geometry,
            traversal="m-n-rowmajor" if layer.kind == "conv" else "out-in",
            start_position=start_state.position,
            start_state=start_state,
        ))
        return counts

    def _retrieve_counts(self, sample_id: int, layer_id: int, layer) -> np.ndarray:
        """Counts in forward order, recovered per the configured strategy."""
        key = (sample_id, layer_id)
        if self._use_cache:
            return self._eps_cache[key]
        if self.cfg.epsilon_strategy == "store":
            return self._step_log[key]
        rec = self.ledger.layer_segment(layer_id, sample_id)
        stream = self.streams[sample_id]
        retrieved = stream.retrieve_block(layer.weight_count, start_state=rec.start_state)
        if len(retrieved) != rec.counts:
            raise LedgerMismatch(
                f"layer {layer_id} sample {sample_id}: retrieved {len(retrieved)}, "
                f"recorded {rec.counts}"
            )
        return retrieved[::-1]  # reverse retrieval order -> forward order

    def forward_pass(self, x, y):
        """Returns (per-sample caches, per-sample LossBreakdown list).

        Activations feeding the gradient stage are retained; the drawn
        epsilons are not (SHIFT) or go to the step log (STORE).
        """
        cfg = self.cfg
        honest = not self._use_cache
        if honest:
            self.ledger.clear()
            self._step_log = {}
            self._prestep_states = [s.lfsr for s in self.streams]
        caches, losses = [], []
        for i in range(cfg.S):
            a = x
            layer_cache = []
            p_s = 0.0
            p_r = 0.0
            for lid, layer in enumerate(self.model.layers):
                if layer.kind in BAYES_KINDS:
                    counts = self._draw_counts(i, lid, layer)
                    if honest and cfg.epsilon_strategy == "store":
                        self._step_log[(i, lid)] = counts
                    eps = self._eps_from_counts(counts, layer.mu.shape)
                    w = layer.mu + eps * layer.sigma
                    sig = layer.sigma.astype(np.float64)
                    p_s += float(np.sum(-np.log(sig * np.sqrt(2 * np.pi))
                                        - 0.5 * eps.astype(np.float64) ** 2))
                    p_r += float(np.sum(np.log(cfg.sigma_prior * np.sqrt(2 * np.pi))
                                        + w.astype(np.float64) ** 2 / (2 * cfg.sigma_prior ** 2)))
                    layer_cache.append(("bayes", a))
                    a = layer.forward(a, w)
                else:
                    a, aux = layer.forward(a)
                    layer_cache.append(("aux", aux))
            nll, dlogits = nn.softmax_xent(a, y)
            losses.append(LossBreakdown(
                likelihood_nll=nll,
                log_posterior=cfg.kl_scale * p_s,
                neg_log_prior=cfg.kl_scale * p_r,
            ))
            caches.append((layer_cache, dlogits))
        return caches, losses

    def backward_pass(self, caches) -> GradAccum:
        """Fused backward + gradient stage, layers last to first.

        Per layer the retrieved noise reconstructs the sampled weights
        once, serving both the data-error propagation (the rot-180
        adjoint) and the (dmu, dsigma) updates; afterwards the SHIFT
        streams sit exactly at their pre-step positions.
        """
        cfg = self.cfg
        honest = not self._use_cache
        accum = self._get_accum()
        accum.zero()
        pending = {} if (honest and cfg.cache_epsilons) else None
        for i in range(cfg.S):
            layer_cache, e = caches[i]
            for lid in range(len(self.model.layers) - 1, -1, -1):
                layer = self.model.layers[lid]
                tag, payload = layer_cache[lid]
                if layer.kind in BAYES_KINDS:
                    counts = self._retrieve_counts(i, lid, layer)
                    if pending is not None:
                        pending[(i, lid)] = counts
                    eps = self._eps_from_counts(counts, layer.mu.shape)
                    w = layer.mu + eps * layer.sigma
                    x_in = payload
                    e, dw_lik = layer.backward(x_in, e, w)
                    dw_prime = dw_lik + cfg.kl_scale * dpu_grad(w, layer.mu, layer.sigma, eps, cfg)
                    update_gradients(dw_prime, eps, accum.dmu[lid], accum.dsigma[lid])
                else:
                    e = layer.backward(e, payload)
        if honest and cfg.epsilon_strategy == "store":
            # mirror SHIFT's stream restoration so both strategies start the
            # next step from identical generator states
            for stream, state in zip(self.streams, self._prestep_states):
                stream.reset_to(state)
        if pending is not None:
            self._eps_cache = pending
        return accum

    def _get_accum(self) -> GradAccum:
        if self._accum is None:
            self._accum = GradAccum(self.model, self.cfg.dtype)
        return self._accum

    def train_step(self, x, y) -> LossBreakdown:
        cfg = self.cfg
        caches, losses = self.forward_pass(x, y)
        accum = self.backward_pass(caches)
        scale = cfg.dtype(cfg.lr / cfg.S)
        for lid, layer in self.model.bayes_layers():
            layer.mu -= scale * accum.dmu[lid]
            layer.sigma -= scale * accum.dsigma[lid]
            np.maximum(layer.sigma, cfg.dtype(cfg.sigma_min), out=layer.sigma)
        accum.zero()
        k = len(losses)
        return LossBreakdown(
            likelihood_nll=sum(l.likelihood_nll for l in losses) / k,
            log_posterior=sum(l.log_posterior for l in losses) / k,
            neg_log_prior=sum(l.neg_log_prior for l in losses) / k,
        )

    def accuracy(self, x, y, batch: int = 512) -> float:
        hits = 0
        for lo in range(0, len(x), batch):
            logits = self.model.predict(x[lo:lo + batch])
            hits += int((logits.argmax(axis=-1) == y[lo:lo + batch]).sum())
        return hits / len(x)


# -- model presets -----------------------------------------------------------


def build_bmlp() -> Model:
    """784-400-400-10 fully-connected classifier for 28x28 inputs."""
    return Model([
        BayesFC(784, 400), ReLU(),
        BayesFC(400, 400), ReLU(),
        BayesFC(400, 10),
    ], name="b-mlp")


def build_toyconv() -> Model:
    """Small 2-conv + 1-fc net on 1x10x10 inputs; exercises every layer kind."""
    return Model([
        BayesConv(1, 4, 3), ReLU(),      # 10 -> 8
        MaxPool(2),                      # 8 -> 4
        BayesConv(4, 8, 3), ReLU(),      # 4 -> 2
        Flatten(),
        BayesFC(8 * 2 * 2, 10),
    ], name="toy-conv")


def build_blenet() -> Model:
    """LeNet-style net for 3x32x32 inputs (CIFAR-10 scale)."""
    return Model([
        BayesConv(3, 6, 5), ReLU(),      # 32 -> 28
        MaxPool(2),                      # 28 -> 14
        BayesConv(6, 16, 5), ReLU(),     # 14 -> 10
        MaxPool(2),                      # 10 -> 5
        Flatten(),
        BayesFC(16 * 5 * 5, 120), ReLU(),
        BayesFC(120, 84), ReLU(),
        BayesFC(84, 10),
    ], name="b-lenet")


MODEL_BUILDERS = {
    "b-mlp": build_bmlp,
    "toy-conv": build_toyconv,
    "b-lenet": build_blenet,
}


# -- "SBNN" checkpoints --------------------------------------------------------

SBNN_MAGIC = b"SBNN"
_KIND_CODES = {"conv": 0, "fc": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


def save_checkpoint(path, model: Model) -> None:
    bayes = model.bayes_layers()
    with open(path, "wb") as f:
        f.write(SBNN_MAGIC)
        f.write(struct.pack("<II", 1, len(bayes)))
        for _, layer in bayes:
            dims = list(layer.mu.shape) + [1] * (4 - layer.mu.ndim)
            f.write(struct.pack("<B4I", _KIND_CODES[layer.kind], *dims))
            f.write(np.ascontiguousarray(layer.mu, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(layer.sigma, dtype="<f4").tobytes())


def load_checkpoint(path) -> list[dict]:
    out = []
    with open(path, "rb") as f:
        if f.read(4) != SBNN_MAGIC:
            raise ValueError("bad checkpoint magic")
        version, count = struct.unpack("<II", f.read(8))
        if version != 1:
            raise ValueError(f"unsupported checkpoint version {version}")
        for _ in range(count):
            kind_code, *dims = struct.unpack("<B4I", f.read(17))
            kind = _KIND_NAMES[kind_code]
            shape = tuple(dims[:4]) if kind == "conv" else tuple(dims[:2])
            size = int(np.prod(dims))
            mu = np.frombuffer(f.read(4 * size), dtype="<f4").reshape(shape).copy()
            sigma = np.frombuffer(f.read(4 * size), dtype="<f4").reshape(shape).copy()
            out.append({"kind": kind, "dims": tuple(dims), "mu": mu, "sigma": sigma})
    return out


def apply_checkpoint(model: Model, entries: list[dict]) -> None:
    bayes = model.bayes_layers()
    if len(bayes) != len(entries):
        raise ValueError("checkpoint layer count mismatch")
    for (_, layer), entry in zip(bayes, entries):
        layer.mu = entry["mu"].reshape(layer.mu.shape).astype(layer.mu.dtype)
        layer.sigma = entry["sigma"].reshape(layer.sigma.shape).astype(layer.sigma.dtype)
