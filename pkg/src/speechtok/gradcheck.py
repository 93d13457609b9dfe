"""Central-difference checks for every hand-written backward pass."""
import numpy as np

from .fsq import FsqConfig, FsqParams, fsq_backward, fsq_roundtrip, quantize
from .mlda import LayerStack, MixturePredictor, mlda_backward, mlda_forward
from .numerics import grad_check, softmax_rows
from .training import (
    ToyConfig,
    ce_loss,
    example_forward_backward,
    flatten,
    init_params,
    make_dataset,
    recon_loss,
    unflatten,
)


def _pack(arrays):
    return np.concatenate([a.ravel() for a in arrays])


def _unpack(vec, shapes):
    out, pos = [], 0
    for s in shapes:
        n = int(np.prod(s))
        out.append(vec[pos:pos + n].reshape(s))
        pos += n
    return out


def check_mlda(rng, max_dim=16, max_len=8):
    """Loss ``sum(z**2) / 2`` against MLP weights, embeddings and all layer values."""
    T = int(rng.integers(1, max_len + 1))
    N = int(rng.integers(1, max_len + 1))
    H = int(rng.integers(2, max_dim + 1))
    P = int(rng.integers(1, 5))
    vocab = int(rng.integers(1, 6))
    hidden = int(rng.integers(1, max_dim + 1))
    tokens = rng.integers(0, vocab, N)
    p = MixturePredictor(
        rng.standard_normal((H, hidden)) * 0.5, rng.standard_normal(hidden) * 0.1,
        rng.standard_normal((hidden, P)), rng.standard_normal(P) * 0.1,
    )
    emb = rng.standard_normal((vocab, H))
    layers = rng.standard_normal((P, T, H))
    shapes = [p.w1.shape, p.b1.shape, p.w2.shape, p.b2.shape, emb.shape, layers.shape]

    def loss(vec):
        w1, b1, w2, b2, e, lay = _unpack(vec, shapes)
        z, _ = mlda_forward(e, tokens, LayerStack(list(range(P)), lay), MixturePredictor(w1, b1, w2, b2))
        return 0.5 * float((z**2).sum())

    stack = LayerStack(list(range(P)), layers)
    z, _, cache = mlda_forward(emb, tokens, stack, p, return_cache=True)
    g = mlda_backward(cache, z, emb, p)
    x0 = _pack([p.w1, p.b1, p.w2, p.b2, emb, layers])
    return grad_check(loss, x0, _pack([g.w1, g.b1, g.w2, g.b2, g.embedding, g.layers]))


def check_fsq(rng, max_dim=16):
    """Decoder-side loss ``|x_hat - target|^2 / 2`` with quantization offsets frozen."""
    D = int(rng.integers(1, max_dim + 1))
    d = int(rng.integers(1, max_dim + 1))
    n = int(rng.integers(1, 6))
    cfg = FsqConfig(D, d, int(rng.integers(2, 17)), float(rng.uniform(0.5, 2.0)))
    params = FsqParams(
        rng.standard_normal((D, d)) * 0.5, rng.standard_normal((d, D)),
        rng.uniform(0.5, 1.5, d), rng.standard_normal(d) * 0.2,
    )
    x = rng.standard_normal((n, D))
    target = rng.standard_normal((n, D))
    fwd = fsq_roundtrip(x, params, cfg)
    offset = fwd.code.q - fwd.u_bar
    shapes = [params.enc.shape, params.dec.shape, params.scale.shape, params.shift.shape, x.shape]

    def loss(vec):
        enc, dec, s, b, xx = _unpack(vec, shapes)
        f = fsq_roundtrip(xx, FsqParams(enc, dec, s, b), cfg, offset=offset)
        return 0.5 * float(((f.x_hat - target) ** 2).sum())

    g = fsq_backward(fwd, x, params, cfg, fwd.x_hat - target)
    x0 = _pack([params.enc, params.dec, params.scale, params.shift, x])
    return grad_check(loss, x0, _pack([g.enc, g.dec, g.scale, g.shift, g.x]))


def check_ste(rng, max_dim=16):
    """``|z_q|^2 / 2`` against the squashed latent: the gradient is q itself."""
    d = int(rng.integers(1, max_dim + 1))
    L = int(rng.integers(2, 17))
    u_bar = np.tanh(rng.standard_normal(d))
    q = quantize(u_bar, L).q
    offset = q - u_bar
    return grad_check(lambda v: 0.5 * float(((v + offset) ** 2).sum()), u_bar, q)


def check_ce(rng, max_dim=16):
    steps = int(rng.integers(1, 9))
    V = int(rng.integers(2, max_dim + 1))
    logits = rng.standard_normal((steps, V)) * 2
    targets = rng.integers(0, V, steps)
    mask = (rng.random(steps) < 0.7).astype(float)
    mask[0] = 1.0
    analytic = softmax_rows(logits)
    analytic[np.arange(steps), targets] -= 1.0
    analytic *= (mask / mask.sum())[:, None]
    return grad_check(
        lambda v: ce_loss(v.reshape(logits.shape), targets, mask), logits.ravel(), analytic.ravel()
    )


def check_recon(rng, max_dim=16):
    n = int(rng.integers(1, 9))
    d = int(rng.integers(1, max_dim + 1))
    z = rng.standard_normal((n, d))
    zq = rng.standard_normal((n, d))
    mask = (rng.random(n) < 0.7).astype(float)
    mask[-1] = 1.0
    analytic = 2.0 * (z - zq) * mask[:, None] / mask.sum()
    return grad_check(lambda v: recon_loss(v.reshape(z.shape), zq, mask), z.ravel(), analytic.ravel())


TINY = dict(T=4, N=2, d_h=6, d=4, L=8, V=5, text_vocab=3, mlp_hidden=8,
            dec_hidden=8, unit_dim=4, batch=2, steps=0)


def check_pipeline(rng, lam=1.0):
    """Total loss of the toy pipeline against every trainable tensor and the layer values."""
    cfg = ToyConfig(**TINY, lam=lam, seed=int(rng.integers(0, 2**31)))
    params = init_params(cfg)
    ex = make_dataset(cfg)[0]
    base = example_forward_backward(params, ex, cfg)
    offset = base.offset
    n_par = flatten(params).size

    def loss(vec):
        p = unflatten(vec[:n_par], params)
        stack = LayerStack(ex.stack.layer_ids, vec[n_par:].reshape(ex.stack.layers.shape))
        e = type(ex)(ex.token_ids, stack, ex.targets, ex.mask)
        return example_forward_backward(p, e, cfg, offset=offset, backward=False).loss.total

    x0 = np.concatenate([flatten(params), ex.stack.layers.ravel()])
    analytic = np.concatenate([flatten(base.grads), base.grad_layers.ravel()])
    return grad_check(loss, x0, analytic)


CHECKS = {
    "mlda": check_mlda,
    "fsq": check_fsq,
    "ste": check_ste,
    "ce": check_ce,
    "recon": check_recon,
    "pipeline": check_pipeline,
}


def run_suite(seed=0, trials=5, names=None):
    """Worst relative error per check over ``trials`` random instances."""
    rng = np.random.default_rng(seed)
    out = {}
    for name in names or CHECKS:
        out[name] = max(CHECKS[name](rng).max_relative_error for _ in range(trials))
    return out

