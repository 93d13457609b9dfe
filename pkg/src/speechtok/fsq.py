"""Finite scalar quantization.

A linear encoder maps a D-dim vector to a d-dim latent, each latent dimension
is squashed with ``tanh((u * s + b) / tau)`` and snapped to one of L uniform
levels on [-1, 1]. The straight-through estimator passes gradients through the
snapping step unchanged, and a linear decoder maps back to D dims.
"""
import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError


@dataclass(frozen=True)
class FsqConfig:
    D: int
    d: int = 64
    L: int = 8
    tau: float = 1.0

    def __post_init__(self):
        if self.L < 2:
            raise ValueError(f"FSQ needs at least 2 levels, got L={self.L}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.d < 1 or self.D < 1:
            raise ValueError(f"dimensions must be positive, got D={self.D}, d={self.d}")


@dataclass
class FsqParams:
    enc: np.ndarray  # (D, d)
    dec: np.ndarray  # (d, D)
    scale: np.ndarray
    shift: np.ndarray

    @classmethod
    def init(cls, config, seed=0):
        rng = np.random.default_rng(seed)
        bound = 1.0 / math.sqrt(config.D)
        return cls(
            rng.uniform(-bound, bound, (config.D, config.d)),
            rng.uniform(-bound, bound, (config.d, config.D)),
            np.ones(config.d),
            np.zeros(config.d),
        )

    @classmethod
    def identity(cls, config):
        if config.D != config.d:
            raise ShapeError(f"identity maps need D == d, got D={config.D}, d={config.d}")
        eye = np.eye(config.d)
        return cls(eye.copy(), eye.copy(), np.ones(config.d), np.zeros(config.d))


@dataclass
class FsqCode:
    indices: np.ndarray  # int64, values in [0, L-1]
    q: np.ndarray
    L: int


def grid(L):
    return -1.0 + 2.0 * np.arange(L) / (L - 1)


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def squash(u, params, config):
    return np.tanh((np.asarray(u, dtype=np.float64) * params.scale + params.shift) / config.tau)


def quantize(u_bar, L):
    """Snap squashed values onto the L-level grid.

    Ties round half away from zero, so 0.0 with L=8 lands on index 4.
    """
    if L < 2:
        raise ValueError(f"FSQ needs at least 2 levels, got L={L}")
    u_bar = np.asarray(u_bar, dtype=np.float64)
    idx = np.clip(round_half_away((u_bar + 1.0) / 2.0 * (L - 1)), 0, L - 1).astype(np.int64)
    return FsqCode(idx, dequantize(idx, L), L)


def dequantize(indices, L):
    return -1.0 + 2.0 * np.asarray(indices, dtype=np.float64) / (L - 1)


def ste_combine(u_bar, q):
    """Forward value of the straight-through combination ``u + sg(q - u)``.

    The value equals ``q``; under the estimator the Jacobian with respect to
    ``u_bar`` is the identity, see :func:`ste_backward`.
    """
    u_bar = np.asarray(u_bar, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if u_bar.shape != q.shape:
        raise ShapeError(f"shape mismatch {u_bar.shape} vs {q.shape}")
    # u + (q - u) can be off by an ulp in floating point; the value is q by definition
    return q.copy()


def ste_backward(grad_zq):
    return grad_zq


@dataclass
class FsqForward:
    u: np.ndarray
    u_bar: np.ndarray
    code: FsqCode
    z_q: np.ndarray
    x_hat: np.ndarray


def fsq_roundtrip(x, params, config, offset=None):
    """Encode, squash, quantize and decode rows of ``x`` (shape (..., D)).

    ``offset`` replaces ``q - u_bar`` with a fixed array; with the offset
    frozen at its forward value the path is smooth and finite differences
    agree with the straight-through gradients.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != config.D:
        raise ShapeError(f"input width {x.shape[-1]} != D={config.D}")
    u = x @ params.enc
    u_bar = squash(u, params, config)
    code = quantize(u_bar, config.L)
    if offset is None:
        z_q = ste_combine(u_bar, code.q)
    else:
        z_q = u_bar + offset
    return FsqForward(u, u_bar, code, z_q, z_q @ params.dec)


@dataclass
class FsqGrads:
    enc: np.ndarray
    dec: np.ndarray
    scale: np.ndarray
    shift: np.ndarray
    x: np.ndarray


def fsq_backward(fwd, x, params, config, grad_x_hat, grad_zq_extra=None):
    """Straight-through gradients of a loss given dLoss/dx_hat (and optionally dLoss/dz_q)."""
    x = np.asarray(x, dtype=np.float64)
    grad_dec = fwd.z_q.T @ grad_x_hat
    grad_zq = grad_x_hat @ params.dec.T
    if grad_zq_extra is not None:
        grad_zq = grad_zq + grad_zq_extra
    grad_ubar = ste_backward(grad_zq)
    grad_pre = grad_ubar * (1.0 - fwd.u_bar**2) / config.tau
    grad_scale = (grad_pre * fwd.u).sum(axis=0)
    grad_shift = grad_pre.sum(axis=0)
    grad_u = grad_pre * params.scale
    return FsqGrads(x.T @ grad_u, grad_dec, grad_scale, grad_shift, grad_u @ params.enc.T)


def bits_per_token(d, L):
    if d < 1 or L < 2:
        raise ValueError(f"need d >= 1 and L >= 2, got d={d}, L={L}")
    return d * math.log2(L)


def pack_indices(indices, L):
    """Base-L integer with dimension 0 as the least significant digit."""
    value = 0
    for i in reversed([int(v) for v in indices]):
        if not 0 <= i < L:
            raise ValueError(f"index {i} outside [0, {L - 1}]")
        value = value * L + i
    return value


def unpack_indices(value, d, L):
    value = int(value)
    if value < 0 or value >= L**d:
        raise ValueError(f"packed code {value} out of range for d={d}, L={L}")
    out = np.empty(d, dtype=np.int64)
    for j in range(d):
        value, out[j] = divmod(value, L)
    return out


def code_to_hex(indices, L):
    return format(pack_indices(indices, L), "x")


def hex_to_code(text, d, L):
    return unpack_indices(int(text, 16), d, L)


def write_code_stream(index_rows, L):
    """JSON-lines code stream: one ``{"t": i, "code": hex}`` object per token."""
    return "".join(
        json.dumps({"t": t, "code": code_to_hex(row, L)}) + "\n"
        for t, row in enumerate(index_rows)
    )


def read_code_stream(text, d, L):
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            rows.append(hex_to_code(obj["code"], d, L))
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"line {lineno}: bad code record ({exc})") from None
    return np.array(rows, dtype=np.int64).reshape(len(rows), d)


def write_code_csv(index_rows):
    index_rows = np.asarray(index_rows, dtype=np.int64)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"i{j}" for j in range(index_rows.shape[1])])
    for t, row in enumerate(index_rows):
        w.writerow([t] + row.tolist())
    return buf.getvalue()


def read_code_csv(text, L):
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    rows = []
    for lineno, rec in enumerate(reader, 2):
        try:
            idx = [int(v) for v in rec[1:]]
        except ValueError:
            raise ValueError(f"line {lineno}: non-integer index") from None
        if len(idx) != len(header) - 1 or any(not 0 <= i < L for i in idx):
            raise ValueError(f"line {lineno}: malformed code row")
        rows.append(idx)
    return np.array(rows, dtype=np.int64).reshape(len(rows), len(header) - 1)
