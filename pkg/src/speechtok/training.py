"""Training objective and a desk-scale toy pipeline.

The toy pipeline runs a synthetic layer stack through MLDA, quantizes the
aggregated tokens with FSQ and predicts a sequence of discrete units with a
small autoregressive decoder. All gradients are derived by hand; the
straight-through estimator treats quantization as the identity.
"""
import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import tensorfile
from .fsq import FsqConfig, FsqParams, fsq_backward, fsq_roundtrip
from .mlda import (
    DEFAULT_LAYER_IDS,
    LayerStack,
    MixturePredictor,
    mlda_backward,
    mlda_forward,
    synthetic_stack,
)
from .numerics import ShapeError, softmax_rows


class TrainingDivergence(FloatingPointError):
    def __init__(self, step, value):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step


def _mask(mask, n):
    m = np.asarray(mask, dtype=np.float64).ravel()
    if m.size != n:
        raise ShapeError(f"mask length {m.size} != {n}")
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask entries must be 0 or 1")
    if m.sum() == 0:
        raise ValueError("mask has no valid positions")
    return m


def log_softmax_rows(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def ce_loss(logits, targets, mask=None):
    """Masked mean of ``-log softmax(logits)[target]`` (natural log)."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} vs targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise ValueError(f"target id outside vocabulary of size {logits.shape[1]}")
    m = _mask(np.ones(len(targets)) if mask is None else mask, len(targets))
    nll = -log_softmax_rows(logits)[np.arange(len(targets)), targets]
    return float((nll * m).sum() / m.sum())


def recon_loss(z, z_q, mask=None):
    """Squared error summed over valid rows, divided by the number of valid rows."""
    z = np.asarray(z, dtype=np.float64)
    z_q = np.asarray(z_q, dtype=np.float64)
    if z.shape != z_q.shape or z.ndim != 2:
        raise ShapeError(f"shape mismatch {z.shape} vs {z_q.shape}")
    m = _mask(np.ones(z.shape[0]) if mask is None else mask, z.shape[0])
    diff = (z - z_q) * m[:, None]
    return float((diff**2).sum() / m.sum())


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    recon: float
    lam: float
    total: float


def total_loss(ce, recon, lam=1.0):
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    return LossBreakdown(ce, recon, lam, ce + lam * recon)


def unit_accuracy(pred, target, mask=None):
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"length mismatch {pred.shape} vs {target.shape}")
    m = _mask(np.ones(target.size) if mask is None else mask, target.size)
    return float(((pred.ravel() == target.ravel()) * m).sum() / m.sum())


@dataclass
class ToyConfig:
    T: int = 32
    N: int = 8
    d_h: int = 16
    layer_ids: tuple = DEFAULT_LAYER_IDS
    d: int = 8
    L: int = 8
    tau: float = 1.0
    V: int = 16
    text_vocab: int = 4
    mlp_hidden: int = 64
    dec_hidden: int = 64
    unit_dim: int = 8
    lam: float = 1.0
    lr: float = 0.05
    steps: int = 500
    batch: int = 16
    seed: int = 0

    def __post_init__(self):
        self.layer_ids = tuple(int(i) for i in self.layer_ids)
        if self.T < 1 or self.N < 1 or self.N > self.T:
            raise ValueError(f"need 1 <= N <= T, got T={self.T}, N={self.N}")
        if self.V < 1 or self.text_vocab < 1:
            raise ValueError("vocabularies must be non-empty")
        if self.lam < 0 or self.lr <= 0 or self.steps < 0 or self.batch < 1:
            raise ValueError("lam >= 0, lr > 0, steps >= 0 and batch >= 1 required")
        FsqConfig(self.d_h, self.d, self.L, self.tau)

    @property
    def n_layers(self):
        return len(self.layer_ids)


@dataclass
class ToyExample:
    token_ids: np.ndarray
    stack: LayerStack
    targets: np.ndarray
    mask: np.ndarray


def make_dataset(config, seed=None):
    """Synthetic utterances whose unit targets depend on the dominant layer.

    Frames are split into N equal segments, one per text token. In segment n
    every value layer l carries a code for (layer l, token v_n); the last
    layer additionally carries a key code for v_n and a marker for the
    dominant layer g_n. The target unit is ``(v_n * n_layers + g_n) mod V``,
    so it is only recoverable if attention finds the segment and the mixture
    weights select layer g_n (or the marker survives in the fused stream).
    """
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng([seed, 1])
    P, H = config.n_layers, config.d_h
    value_codes = rng.standard_normal((P, config.text_vocab, H))
    key_codes = 2.0 * rng.standard_normal((config.text_vocab, H))
    markers = rng.standard_normal((P, H))
    bounds = np.linspace(0, config.T, config.N + 1).round().astype(int)

    out = []
    for b in range(config.batch):
        tokens = rng.integers(0, config.text_vocab, config.N)
        dominant = rng.integers(0, P, config.N)
        n_valid = config.N - int(rng.integers(0, min(2, config.N - 1) + 1))
        base = 0.3 * synthetic_stack(config.T, H, config.layer_ids, seed=[seed, 2, b]).layers
        layers = base.copy()
        for n in range(config.N):
            seg = slice(bounds[n], bounds[n + 1])
            for l in range(P):
                gain = 1.5 if l == dominant[n] else 0.5
                layers[l, seg] += gain * value_codes[l, tokens[n]]
            layers[-1, seg] += key_codes[tokens[n]] + markers[dominant[n]]
        mask = (np.arange(config.N) < n_valid).astype(np.float64)
        targets = (tokens * P + dominant) % config.V
        out.append(ToyExample(tokens, LayerStack(config.layer_ids, layers), targets, mask))
    return out


PARAM_ORDER = (
    "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2", "text.embedding",
    "fsq.enc", "fsq.dec", "fsq.scale", "fsq.shift",
    "dec.unit_embedding", "dec.w_prev", "dec.w_tok", "dec.w_ctx",
    "dec.b_hidden", "dec.w_out", "dec.b_out",
)


def init_params(config, seed=None):
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng([seed, 0])
    P, H = config.n_layers, config.d_h
    mlp = MixturePredictor.init(H, P, config.mlp_hidden, seed=[seed, 3])
    fsq = FsqParams.init(FsqConfig(H, config.d, config.L, config.tau), seed=[seed, 4])

    def u(shape, fan_in):
        b = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-b, b, shape)

    return {
        "mlp.w1": mlp.w1, "mlp.b1": mlp.b1, "mlp.w2": mlp.w2, "mlp.b2": mlp.b2,
        "text.embedding": rng.standard_normal((config.text_vocab, H)),
        "fsq.enc": fsq.enc, "fsq.dec": fsq.dec, "fsq.scale": fsq.scale, "fsq.shift": fsq.shift,
        "dec.unit_embedding": 0.1 * rng.standard_normal((config.V + 1, config.unit_dim)),
        "dec.w_prev": u((config.unit_dim, config.dec_hidden), config.unit_dim),
        "dec.w_tok": u((config.d, config.dec_hidden), config.d),
        "dec.w_ctx": u((config.d, config.dec_hidden), config.d),
        "dec.b_hidden": np.zeros(config.dec_hidden),
        "dec.w_out": u((config.dec_hidden, config.V), config.dec_hidden),
        "dec.b_out": np.zeros(config.V),
    }


def _fsq_parts(params, config):
    cfg = FsqConfig(config.d_h, config.d, config.L, config.tau)
    return cfg, FsqParams(params["fsq.enc"], params["fsq.dec"], params["fsq.scale"], params["fsq.shift"])


def _predictor(params):
    return MixturePredictor(params["mlp.w1"], params["mlp.b1"], params["mlp.w2"], params["mlp.b2"])


@dataclass
class ExampleResult:
    loss: LossBreakdown
    logits: np.ndarray
    offset: np.ndarray
    grads: Optional[Dict[str, np.ndarray]] = None
    grad_layers: Optional[np.ndarray] = field(default=None, repr=False)


def example_forward_backward(params, ex, config, offset=None, weight=1.0, backward=True):
    """Loss of one utterance and, optionally, ``weight`` times its gradients.

    ``offset`` freezes ``q - u_bar`` (see :func:`fsq_roundtrip`).
    """
    pred = _predictor(params)
    z, _, cache = mlda_forward(params["text.embedding"], ex.token_ids, ex.stack, pred, return_cache=True)
    fcfg, fparams = _fsq_parts(params, config)
    fwd = fsq_roundtrip(z, fparams, fcfg, offset=offset)
    if offset is None:
        offset = fwd.code.q - fwd.u_bar

    m = ex.mask
    msum = m.sum()
    zq = fwd.z_q
    prev = np.concatenate([[config.V], ex.targets[:-1]])
    ctx = (zq * m[:, None]).sum(axis=0) / msum
    e_prev = params["dec.unit_embedding"][prev]
    hidden = np.tanh(
        e_prev @ params["dec.w_prev"] + zq @ params["dec.w_tok"]
        + ctx @ params["dec.w_ctx"] + params["dec.b_hidden"]
    )
    logits = hidden @ params["dec.w_out"] + params["dec.b_out"]

    ce = ce_loss(logits, ex.targets, m)
    rec = recon_loss(z, fwd.x_hat, m)
    loss = total_loss(ce, rec, config.lam)
    if not backward:
        return ExampleResult(loss, logits, offset)

    g = {}
    probs = softmax_rows(logits)
    g_logits = probs.copy()
    g_logits[np.arange(len(prev)), ex.targets] -= 1.0
    g_logits *= (weight * m / msum)[:, None]
    g["dec.w_out"] = hidden.T @ g_logits
    g["dec.b_out"] = g_logits.sum(axis=0)
    g_pre = (g_logits @ params["dec.w_out"].T) * (1.0 - hidden**2)
    g["dec.b_hidden"] = g_pre.sum(axis=0)
    g["dec.w_prev"] = e_prev.T @ g_pre
    g_emb = np.zeros_like(params["dec.unit_embedding"])
    np.add.at(g_emb, prev, g_pre @ params["dec.w_prev"].T)
    g["dec.unit_embedding"] = g_emb
    g["dec.w_tok"] = zq.T @ g_pre
    g_pre_sum = g_pre.sum(axis=0)
    g["dec.w_ctx"] = np.outer(ctx, g_pre_sum)
    g_ctx = params["dec.w_ctx"] @ g_pre_sum
    g_zq = g_pre @ params["dec.w_tok"].T + (m / msum)[:, None] * g_ctx[None, :]

    g_rec = (2.0 * weight * config.lam / msum) * (z - fwd.x_hat) * m[:, None]
    fg = fsq_backward(fwd, z, fparams, fcfg, -g_rec, grad_zq_extra=g_zq)
    g["fsq.enc"], g["fsq.dec"] = fg.enc, fg.dec
    g["fsq.scale"], g["fsq.shift"] = fg.scale, fg.shift

    mg = mlda_backward(cache, g_rec + fg.x, params["text.embedding"], pred)
    g["mlp.w1"], g["mlp.b1"], g["mlp.w2"], g["mlp.b2"] = mg.w1, mg.b1, mg.w2, mg.b2
    g["text.embedding"] = mg.embedding
    return ExampleResult(loss, logits, offset, g, mg.layers)


def batch_step(params, batch, config, backward=True):
    """Mean loss over the batch, pooled accuracy and summed (already averaged) grads."""
    weight = 1.0 / len(batch)
    grads = {k: np.zeros_like(v) for k, v in params.items()} if backward else None
    ce = rec = 0.0
    preds, targets, masks = [], [], []
    for ex in batch:
        res = example_forward_backward(params, ex, config, weight=weight, backward=backward)
        ce += res.loss.ce
        rec += res.loss.recon
        if backward:
            for k, v in res.grads.items():
                grads[k] += v
        preds.append(res.logits.argmax(axis=1))
        targets.append(ex.targets)
        masks.append(ex.mask)
    loss = total_loss(ce * weight, rec * weight, config.lam)
    acc = unit_accuracy(np.concatenate(preds), np.concatenate(targets), np.concatenate(masks))
    return loss, acc, grads


@dataclass
class TrainingHistory:
    config: ToyConfig
    records: List[dict] = field(default_factory=list)
    params: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    COLUMNS = ("step", "ce", "recon", "total", "accuracy")

    def column(self, name):
        return np.array([r[name] for r in self.records])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.records:
            w.writerow([r["step"]] + [repr(float(r[c])) for c in self.COLUMNS[1:]])
        return buf.getvalue()

    def to_json(self):
        doc = {"config": asdict(self.config), "history": self.records}
        doc["config"]["layer_ids"] = list(self.config.layer_ids)
        return json.dumps(doc, indent=1) + "\n"


def train_toy(config=None, seed=None, callback=None):
    """Plain full-batch gradient descent on the synthetic task.

    One record per step holds the loss before that step's update; the final
    record (``step == config.steps``) is the loss after the last update.
    """
    config = config or ToyConfig()
    if seed is not None:
        config = ToyConfig(**{**asdict(config), "seed": seed})
    params = {k: v.copy() for k, v in init_params(config).items()}
    data = make_dataset(config)
    hist = TrainingHistory(config)
    for step in range(config.steps + 1):
        last = step == config.steps
        loss, acc, grads = batch_step(params, data, config, backward=not last)
        if not math.isfinite(loss.total):
            raise TrainingDivergence(step, loss.total)
        rec = {"step": step, "ce": loss.ce, "recon": loss.recon, "total": loss.total, "accuracy": acc}
        hist.records.append(rec)
        if callback is not None:
            callback(rec)
        if not last:
            for k in params:
                params[k] -= config.lr * grads[k]
    hist.params = params
    return hist


def save_checkpoint(params, directory):
    """One tensor container per parameter plus ``manifest.json``.

    Values are stored as float32, like layer stacks.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = []
    for i, name in enumerate(PARAM_ORDER):
        arr = np.asarray(params[name])
        fname = name.replace(".", "_") + ".stks"
        tensorfile.write(directory / fname, [i], arr.reshape(1, -1, arr.shape[-1]), sidecar=False)
        manifest.append({"name": name, "file": fname, "shape": list(arr.shape)})
    (directory / "manifest.json").write_text(json.dumps({"params": manifest}, indent=1) + "\n")
    return directory


def load_checkpoint(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    params = {}
    for entry in manifest["params"]:
        _, data = tensorfile.read(directory / entry["file"])
        params[entry["name"]] = data.astype(np.float64).reshape(entry["shape"])
    return params


def flatten(params, names=PARAM_ORDER):
    return np.concatenate([np.asarray(params[n], dtype=np.float64).ravel() for n in names])


def unflatten(vec, like, names=PARAM_ORDER):
    out, pos = {}, 0
    for n in names:
        size = like[n].size
        out[n] = vec[pos:pos + size].reshape(like[n].shape)
        pos += size
    return out
