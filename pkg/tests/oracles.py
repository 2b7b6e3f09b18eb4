"""Independent reference computations used only by the tests.

Each oracle is written as a plain loop over the definition, sharing no code
with the library path beyond the data containers.  ``directional_probes``
is the exception: it differences the library loss to check the library
gradient.
"""

from __future__ import annotations

import numpy as np

from constrec.training import batch_gradients, param_arrays, set_param


def pairwise_auc(scores, labels) -> float:
    """Exhaustive count over every (positive, negative) pair; ties count 1/2."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y != 1]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def score_record(model, u: int, i: int, bits) -> float:
    """Score one linear-model record straight from the scoring formulas."""
    emb = model.emb
    bits = [int(b) for b in bits]
    active = [j for j, b in enumerate(bits) if b]
    k = emb.k
    if model.variant in ("MF", "CAMF-CI"):
        t = [1.0] * k
    elif model.variant == "WC-MF":
        w = sum(model.transform.alpha[j] for j in active) / len(active)
        t = [w] * k
    else:
        t = [sum(model.transform.D[kk, j] for j in active) / len(active) for kk in range(k)]
    s = emb.B[u] + sum(emb.U[u, kk] * t[kk] * emb.P[i, kk] for kk in range(k))
    if model.table is not None:
        live = [j for j in active if model.table.mask[j, i]]
        if live:
            s += sum(model.table.C[j, i] for j in live) / len(live)
    return float(s)


def naive_loss(model, data, lam: float) -> float:
    """Per-record summation of the weighted squared loss plus the L2 penalty."""
    total = 0.0
    for t in range(len(data)):
        u, i = int(data.users[t]), int(data.items[t])
        s = score_record(model, u, i, data.catalog[data.cids[t]])
        total += data.weights[t] * (data.rewards[t] - s) ** 2
    sq = sum(x * x for x in model.emb.U.ravel()) + sum(x * x for x in model.emb.P.ravel())
    if model.table is not None:
        sq += sum(x * x for x in model.table.C.ravel())
    return float(total + 0.5 * lam * sq)


def central_difference(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    g = grad.ravel()
    for idx in range(flat.size):
        old = flat[idx]
        flat[idx] = old + eps
        fp = f(x)
        flat[idx] = old - eps
        fm = f(x)
        flat[idx] = old
        g[idx] = (fp - fm) / (2.0 * eps)
    return grad


def manual_forward(layers, x) -> list[float]:
    """Neuron-by-neuron forward pass over ``[(W, b, activation)]``."""
    h = [float(v) for v in x]
    for W, b, act in layers:
        out = []
        for row, bias in zip(W, b):
            z = bias + sum(w * v for w, v in zip(row, h))
            out.append(max(z, 0.0) if act == "relu" else z)
        h = out
    return h


def observed_bits(data, who: str) -> dict[int, set[int]]:
    """``{id: bits seen}`` for users or items, by walking every record."""
    seen: dict[int, set[int]] = {}
    ids = data.users if who == "users" else data.items
    for t in range(len(data)):
        row = data.catalog[data.cids[t]]
        seen.setdefault(int(ids[t]), set()).update(j for j, b in enumerate(row) if b)
    return seen


def eligible(data, bits, who: str) -> list[int]:
    """Ids never observed in any bucket active in ``bits`` (exhaustive scan)."""
    seen = observed_bits(data, who)
    size = data.m if who == "users" else data.n
    active = {j for j, b in enumerate(bits) if b}
    return [x for x in range(size) if not (seen.get(x, set()) & active)]


def brute_cooccurrence(data) -> np.ndarray:
    """Distinct users per bit pair, by double loop over users and bit pairs."""
    d = data.d
    bits_of: dict[int, set[int]] = {}
    for t in range(len(data)):
        row = data.catalog[data.cids[t]]
        bits_of.setdefault(int(data.users[t]), set()).update(j for j, b in enumerate(row) if b)
    out = np.zeros((d, d), dtype=np.int64)
    for bits in bits_of.values():
        for a in range(d):
            for b in range(d):
                if a in bits and b in bits:
                    out[a, b] += 1
    return out


def disjointness_violations(users, items, horror) -> list[int]:
    """Users with both a horror and a non-horror training record."""
    by_user: dict[int, set[bool]] = {}
    for u, i in zip(users, items):
        by_user.setdefault(int(u), set()).add(bool(horror[int(i)]))
    return sorted(u for u, kinds in by_user.items() if len(kinds) == 2)


def directional_probes(model, data, rows, lam, n_probes, rng, eps=1e-5):
    """Relative errors of analytic vs central-difference directional derivatives."""
    _, grads = batch_gradients(model, data, rows, lam, len(data))
    base = {k: v.copy() for k, v in param_arrays(model).items()}
    errors = []
    for _ in range(n_probes):
        direction = {k: rng.normal(size=v.shape) for k, v in base.items()}

        def f(step):
            for k, v in base.items():
                set_param(model, k, v + step * direction[k])
            return batch_gradients(model, data, rows, lam, len(data))[0]

        numeric = (f(eps) - f(-eps)) / (2 * eps)
        analytic = sum(float(np.sum(grads[k] * direction[k])) for k in base)
        errors.append(abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-12))
    for k, v in base.items():
        set_param(model, k, v)
    return np.array(errors)
