"""Optimization for every model variant.

Linear variants are fit by alternating exact block minimization: the
penalized squared loss is quadratic in the user rows (with biases), in the
item rows, in the CAMF-CI table and in the DC-MF/WC-MF transform, so each
block update is a ridge solve.  Neural variants are fit by minibatch
gradient descent with hand-derived gradients.
"""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Callable
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .constraints import (
    CooccurrenceStats,
    FeatureMap,
    InteractionTensor,
    item_bit_matrix,
    user_bit_matrix,
)
from .models import (
    LINEAR_VARIANTS,
    NCMF,
    ContextItemTable,
    DiagonalTransform,
    EmbeddingModel,
    LinearModel,
    Model,
    SideInfo,
    TowerModel,
    WeightedTransform,
)
from .nn import ConstraintFeatureMapG, FeedForwardNet

logger = logging.getLogger(__name__)

WARM_STARTS = ("none", "feature_overlap", "cooccurrence")


@dataclass
class TrainConfig:
    k: int = 100
    lam: float = 0.1
    steps_per_block: int = 100
    iterations: int = 10
    learning_rate: float = 0.01
    batch_size: int = 128
    optimizer: str = "sgd"
    epochs_per_iteration: int = 1
    seed: int = 0
    positive_weight: float = 1.0
    negative_weight: float = 1.0
    warm_start: str = "none"
    warm_start_steps: int = 100
    cooccurrence_reg_strength: float = 0.0
    transform_lam: float = 0.0
    init_scale: float = 0.1
    transform_init_scale: float = 0.1
    early_stop_tol: float = 1e-6
    hidden: tuple[int, ...] = (64,)
    transform_mode: str = "diagonal"
    k_id: int | None = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.k <= 0 or self.iterations < 0 or self.steps_per_block <= 0:
            raise ValueError("k and steps_per_block must be positive, iterations nonnegative")
        if self.transform_lam < 0 or self.cooccurrence_reg_strength < 0:
            raise ValueError("transform_lam and cooccurrence_reg_strength must be nonnegative")
        if self.lam < 0 or self.learning_rate < 0 or self.batch_size <= 0:
            raise ValueError("lambda and learning rate must be nonnegative, batch size positive")
        if self.positive_weight < 0 or self.negative_weight < 0:
            raise ValueError("class weights must be nonnegative")
        if self.warm_start not in WARM_STARTS:
            raise ValueError(f"warm_start must be one of {WARM_STARTS}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.transform_mode not in ("diagonal", "full"):
            raise ValueError("transform_mode must be 'diagonal' or 'full'")

    @classmethod
    def from_dict(cls, doc: dict) -> TrainConfig:
        doc = dict(doc)
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        if "class_weights" in doc:
            doc["positive_weight"], doc["negative_weight"] = doc.pop("class_weights")
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["hidden"] = list(self.hidden)
        return doc

    def replace(self, **changes) -> TrainConfig:
        doc = self.to_dict()
        doc.update(changes)
        return TrainConfig(**doc)


@dataclass
class TrainTrace:
    rows: list[dict] = field(default_factory=list)
    iteration_losses: list[float] = field(default_factory=list)
    early_stopped: bool = False
    early_stop_iteration: int | None = None
    warm_start: dict | None = None

    def log_block(self, iteration: int, block: str, before: float, after: float) -> None:
        if not (math.isfinite(before) and math.isfinite(after)):
            raise FloatingPointError(f"non-finite loss in block {block} at iteration {iteration}")
        self.rows.append({"iteration": iteration, "block": block,
                          "loss_before": before, "loss_after": after})

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, ["iteration", "block", "loss_before", "loss_after"])
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


# -- losses --------------------------------------------------------------------------


def transform_penalty(model: Model, transform_lam: float) -> float:
    """Optional ridge pulling a linear transform toward the identity.

    DC-MF: ``(tau/2) ||D - 1||^2``.  WC-MF: ``(tau/2) k ||alpha - 1||^2``, so a
    WC-MF model and its DC-MF embedding pay the same penalty.
    """
    if transform_lam <= 0 or not isinstance(model, LinearModel):
        return 0.0
    if isinstance(model.transform, DiagonalTransform):
        return 0.5 * transform_lam * float(np.sum((model.transform.D - 1.0) ** 2))
    if isinstance(model.transform, WeightedTransform):
        k = model.emb.k
        return 0.5 * transform_lam * k * float(np.sum((model.transform.alpha - 1.0) ** 2))
    return 0.0


def penalized_loss(model: Model, data: InteractionTensor, lam: float,
                   stats: CooccurrenceStats | None = None, strength: float = 0.0,
                   transform_lam: float = 0.0) -> float:
    """Weighted squared error plus ``lam/2`` times the squared Frobenius norms.

    Penalized blocks: U and P (plus the CAMF-CI table, or the tower id
    embeddings).  When ``stats`` and ``strength`` are given, the co-occurrence
    regularizer on a DC-MF transform is added; ``transform_lam`` adds
    ``transform_penalty``.
    """
    s = model.predict_data(data)
    resid = data.rewards - s
    loss = float(np.sum(data.weights * resid * resid))
    if isinstance(model, TowerModel):
        sq = np.sum(model.Eu ** 2) + np.sum(model.Ei ** 2)
    else:
        sq = np.sum(model.emb.U ** 2) + np.sum(model.emb.P ** 2)
        if isinstance(model, LinearModel) and model.table is not None:
            sq += np.sum(model.table.C ** 2)
    loss += 0.5 * lam * float(sq)
    if stats is not None and strength > 0 and isinstance(model, LinearModel) \
            and isinstance(model.transform, DiagonalTransform):
        loss += cooccurrence_regularizer(model.transform.D, stats, strength)
    return loss + transform_penalty(model, transform_lam)


def cooccurrence_regularizer(D: np.ndarray, stats: CooccurrenceStats, strength: float) -> float:
    """Ties together transform columns of feature bits chosen by the same users.

    Each co-occurring pair contributes its per-user term summed over the
    users that chose both bits, divided by that user count.
    """
    total = 0.0
    pc = stats.pair_counts
    for j, jj in stats.active_pairs():
        users = pc[j, jj]
        per_user = float(np.sum((1.0 - D[:, j] * D[:, jj]) ** 2))
        total += float(users) * per_user / float(users)
    return float(strength * total)


def _cooccurrence_grad(D: np.ndarray, stats: CooccurrenceStats, strength: float) -> np.ndarray:
    grad = np.zeros_like(D)
    for j, jj in stats.active_pairs():
        e = 1.0 - D[:, j] * D[:, jj]
        grad[:, j] -= 2.0 * e * D[:, jj]
        grad[:, jj] -= 2.0 * e * D[:, j]
    return strength * grad


def feature_overlap_objective(D: np.ndarray, catalog: np.ndarray, counts: np.ndarray) -> float:
    """Mean over observed constraints of ``||1 - t(c) * t(c)||^2`` with ``t(c) = D c / |c|``."""
    cn = catalog / catalog.sum(axis=1, keepdims=True)
    T = cn @ D.T
    return float(np.sum(counts[:, None] * (1.0 - T * T) ** 2) / counts.sum())


def _feature_overlap_grad(D: np.ndarray, catalog: np.ndarray, counts: np.ndarray) -> np.ndarray:
    cn = catalog / catalog.sum(axis=1, keepdims=True)
    T = cn @ D.T
    G = -4.0 * (1.0 - T * T) * T * counts[:, None] / counts.sum()
    return G.T @ cn


def _gradient_descent(f: Callable, grad: Callable, x0: np.ndarray, steps: int,
                      lr0: float = 1.0, tol: float = 0.0) -> tuple[np.ndarray, int]:
    """Gradient descent with Armijo backtracking; never accepts an increase."""
    x = x0.copy()
    fx = f(x)
    lr = lr0
    done = 0
    for _ in range(steps):
        g = grad(x)
        gg = float(np.sum(g * g))
        if gg == 0.0 or fx <= tol:
            break
        while True:
            cand = x - lr * g
            fc = f(cand)
            if fc <= fx - 0.5 * lr * gg:
                break
            lr *= 0.5
            if lr < 1e-16:
                return x, done
        x, fx = cand, fc
        lr = min(lr * 2.0, lr0 * 1e3)
        done += 1
    return x, done


def _catalog_counts(data: InteractionTensor) -> tuple[np.ndarray, np.ndarray]:
    counts = np.bincount(data.cids, minlength=data.catalog.shape[0]).astype(np.float64)
    keep = counts > 0
    return data.catalog[keep].astype(np.float64), counts[keep]


def warm_start_feature_overlap(constraints, k: int, d: int, init: np.ndarray | None = None,
                               steps: int = 100, tol: float = 0.0) -> DiagonalTransform:
    """Initial diagonal transform with ``T(c)^T T(c) ~ I`` on observed constraints.

    ``constraints`` is an InteractionTensor (records weighted by frequency) or
    a ``(q, d)`` array of constraint rows.  Descent starts at ``init``
    (all-ones when omitted, which is already a global minimum).
    """
    if isinstance(constraints, InteractionTensor):
        catalog, counts = _catalog_counts(constraints)
    else:
        catalog = np.asarray(constraints, dtype=np.float64)
        counts = np.ones(catalog.shape[0])
    if catalog.shape[0] == 0:
        raise ValueError("warm start needs at least one observed constraint")
    if catalog.shape[1] != d:
        raise ValueError(f"constraints have length {catalog.shape[1]}, expected d={d}")
    D0 = np.ones((k, d)) if init is None else np.array(init, dtype=np.float64)
    D, _ = _gradient_descent(lambda x: feature_overlap_objective(x, catalog, counts),
                             lambda x: _feature_overlap_grad(x, catalog, counts), D0, steps, tol=tol)
    return DiagonalTransform(D)


def warm_start_cooccurrence(stats: CooccurrenceStats, k: int, init: np.ndarray | None = None,
                            steps: int = 100, tol: float = 0.0) -> DiagonalTransform:
    """Initial diagonal transform at (a local) minimum of the co-occurrence regularizer."""
    D0 = np.ones((k, stats.d)) if init is None else np.array(init, dtype=np.float64)
    D, _ = _gradient_descent(lambda x: cooccurrence_regularizer(x, stats, 1.0),
                             lambda x: _cooccurrence_grad(x, stats, 1.0), D0, steps, tol=tol)
    return DiagonalTransform(D)


# -- ridge solves --------------------------------------------------------------------


def _ridge_solve(A: np.ndarray, rhs: np.ndarray, current: np.ndarray) -> np.ndarray:
    """Minimizer of the quadratic with Hessian ``A``; min-norm step when singular."""
    try:
        L = np.linalg.cholesky(A)
        return np.linalg.solve(L.T, np.linalg.solve(L, rhs))
    except np.linalg.LinAlgError:
        step = np.linalg.lstsq(A, rhs - A @ current, rcond=None)[0]
        return current + step


def _groups(keys: np.ndarray, size: int) -> list[np.ndarray]:
    order = np.argsort(keys, kind="stable")
    bounds = np.searchsorted(keys[order], np.arange(size + 1))
    return [order[bounds[g]:bounds[g + 1]] for g in range(size)]


def _context_terms(model: LinearModel, data: InteractionTensor) -> np.ndarray:
    if model.table is None:
        return np.zeros(len(data))
    return model.table.terms(data.items, data.record_bits())


def update_items(model: LinearModel, data: InteractionTensor, lam: float) -> None:
    emb = model.emb
    T = model.diagonals(data.catalog)[data.cids]
    X = T * emb.U[data.users]
    y = data.rewards - emb.B[data.users] - _context_terms(model, data)
    w = data.weights
    k = emb.k
    reg = 0.5 * lam * np.eye(k)
    for i, rows in enumerate(_groups(data.items, emb.n)):
        if rows.size == 0:
            emb.P[i] = 0.0
            continue
        Xi, wi = X[rows], w[rows]
        A = Xi.T @ (Xi * wi[:, None]) + reg
        emb.P[i] = _ridge_solve(A, Xi.T @ (wi * y[rows]), emb.P[i])


def update_users(model: LinearModel, data: InteractionTensor, lam: float) -> None:
    emb = model.emb
    T = model.diagonals(data.catalog)[data.cids]
    X = np.hstack([T * emb.P[data.items], np.ones((len(data), 1))])
    y = data.rewards - _context_terms(model, data)
    w = data.weights
    k = emb.k
    reg = np.diag(np.r_[np.full(k, 0.5 * lam), 0.0])
    for u, rows in enumerate(_groups(data.users, emb.m)):
        if rows.size == 0:
            emb.U[u] = 0.0
            continue
        Xu, wu = X[rows], w[rows]
        A = Xu.T @ (Xu * wu[:, None]) + reg
        sol = _ridge_solve(A, Xu.T @ (wu * y[rows]), np.r_[emb.U[u], emb.B[u]])
        emb.U[u], emb.B[u] = sol[:k], sol[k]


def update_context_table(model: LinearModel, data: InteractionTensor, lam: float) -> None:
    emb, table = model.emb, model.table
    base = np.einsum("tk,tk->t", emb.U[data.users], emb.P[data.items]) + emb.B[data.users]
    y = data.rewards - base
    active = table.active_sets(data.items, data.record_bits()).astype(np.float64)
    count = active.sum(axis=1)
    live = count > 0
    feats = np.zeros_like(active)
    feats[live] = active[live] / count[live, None]
    w = data.weights
    for i, rows in enumerate(_groups(data.items, emb.n)):
        cols = np.flatnonzero(table.mask[:, i])
        if cols.size == 0:
            continue
        rows = rows[live[rows]]
        if rows.size == 0:
            table.C[cols, i] = 0.0
            continue
        F, wi = feats[np.ix_(rows, cols)], w[rows]
        A = F.T @ (F * wi[:, None]) + 0.5 * lam * np.eye(cols.size)
        table.C[cols, i] = _ridge_solve(A, F.T @ (wi * y[rows]), table.C[cols, i])


def update_weighted(model: LinearModel, data: InteractionTensor, transform_lam: float = 0.0) -> None:
    emb = model.emb
    cat = data.catalog.astype(np.float64)
    cn = (cat / cat.sum(axis=1, keepdims=True))[data.cids]
    z = np.einsum("tk,tk->t", emb.U[data.users], emb.P[data.items])
    X = cn * z[:, None]
    y = data.rewards - emb.B[data.users]
    w = data.weights
    tau = 0.5 * transform_lam * emb.k
    A = X.T @ (X * w[:, None]) + tau * np.eye(X.shape[1])
    alpha = model.transform.alpha
    model.transform.alpha = _ridge_solve(A, X.T @ (w * y) + tau, alpha)


class _DiagonalNormalOperator:
    """Matrix-free normal equations for the DC-MF transform block."""

    def __init__(self, model: LinearModel, data: InteractionTensor, transform_lam: float = 0.0):
        emb = model.emb
        self.tau = 0.5 * transform_lam
        cat = data.catalog.astype(np.float64)
        self.cn = cat / cat.sum(axis=1, keepdims=True)  # (q, d)
        self.cids = data.cids
        self.Z = emb.U[data.users] * emb.P[data.items]  # (t, k)
        self.w = data.weights
        self.y = data.rewards - emb.B[data.users]
        self.q = cat.shape[0]
        self.shape = (emb.k, cat.shape[1])

    def apply_phi(self, D: np.ndarray) -> np.ndarray:
        T = self.cn @ D.T  # (q, k)
        return np.einsum("tk,tk->t", self.Z, T[self.cids])

    def apply_phi_t(self, z: np.ndarray) -> np.ndarray:
        acc = np.zeros((self.q, self.shape[0]))
        np.add.at(acc, self.cids, self.Z * z[:, None])
        return acc.T @ self.cn  # (k, d)

    def hessian_apply(self, D: np.ndarray) -> np.ndarray:
        return self.apply_phi_t(self.w * self.apply_phi(D)) + self.tau * D

    def rhs(self) -> np.ndarray:
        return self.apply_phi_t(self.w * self.y) + self.tau

    def diagonal(self) -> np.ndarray:
        acc = np.zeros((self.q, self.shape[0]))
        np.add.at(acc, self.cids, self.w[:, None] * self.Z ** 2)
        return acc.T @ (self.cn ** 2) + self.tau

    def data_loss(self, D: np.ndarray) -> float:
        """Data term plus the identity ridge (the parts of the loss that depend on D)."""
        r = self.y - self.apply_phi(D)
        return float(np.sum(self.w * r * r)) + self.tau * float(np.sum((D - 1.0) ** 2))


def _pcg(op: _DiagonalNormalOperator, x0: np.ndarray, steps: int, rtol: float = 1e-12) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients from ``x0``.

    Each iterate minimizes the quadratic over a growing affine subspace
    through ``x0``, so the objective never rises above its value at ``x0``.
    """
    diag = op.diagonal()
    inv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 0.0)
    b = op.rhs()
    x = x0.copy()
    r = b - op.hessian_apply(x)
    z = inv * r
    p = z.copy()
    rz = float(np.sum(r * z))
    bnorm = max(float(np.sqrt(np.sum(b * b))), 1e-300)
    for _ in range(steps):
        if math.sqrt(max(float(np.sum(r * r)), 0.0)) <= rtol * bnorm or rz <= 0.0:
            break
        Ap = op.hessian_apply(p)
        pAp = float(np.sum(p * Ap))
        if pAp <= 0.0:
            break
        a = rz / pAp
        x += a * p
        r -= a * Ap
        z = inv * r
        rz_new = float(np.sum(r * z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x


def update_diagonal(model: LinearModel, data: InteractionTensor, steps: int,
                    stats: CooccurrenceStats | None = None, strength: float = 0.0,
                    transform_lam: float = 0.0) -> None:
    op = _DiagonalNormalOperator(model, data, transform_lam)
    D0 = model.transform.D
    if stats is None or strength <= 0:
        D = _pcg(op, D0, steps)
        f = op.data_loss
    else:
        shape = D0.shape

        def f(D):
            return op.data_loss(D) + cooccurrence_regularizer(D, stats, strength)

        def fun(x):
            D = x.reshape(shape)
            resid = op.y - op.apply_phi(D)
            val = (float(np.sum(op.w * resid * resid)) + op.tau * float(np.sum((D - 1.0) ** 2))
                   + cooccurrence_regularizer(D, stats, strength))
            grad = (-2.0 * op.apply_phi_t(op.w * resid) + 2.0 * op.tau * (D - 1.0)
                    + _cooccurrence_grad(D, stats, strength))
            return val, grad.ravel()

        res = minimize(fun, D0.ravel(), jac=True, method="L-BFGS-B",
                       options={"maxiter": steps, "gtol": 1e-12, "ftol": 1e-15})
        D = res.x.reshape(shape)
    if f(D) <= f(D0):
        model.transform.D = D


# -- linear model fitting ------------------------------------------------------------


def init_linear(variant: str, m: int, n: int, d: int, config: TrainConfig,
                features: FeatureMap | None = None,
                rng: np.random.Generator | None = None) -> LinearModel:
    rng = np.random.default_rng(config.seed) if rng is None else rng
    emb = EmbeddingModel.random(m, n, config.k, rng, config.init_scale)
    if variant == "DC-MF":
        D = 1.0 + rng.normal(0.0, config.transform_init_scale, (config.k, d))
        return LinearModel(variant, emb, DiagonalTransform(D))
    if variant == "WC-MF":
        alpha = 1.0 + rng.normal(0.0, config.transform_init_scale, d)
        return LinearModel(variant, emb, WeightedTransform(alpha))
    if variant == "CAMF-CI":
        if features is None:
            raise ValueError("CAMF-CI needs the item feature map")
        return LinearModel(variant, emb, table=ContextItemTable.zeros(features))
    return LinearModel(variant, emb)


def als_block_update(model: LinearModel, data: InteractionTensor, block: str, config: TrainConfig,
                     stats: CooccurrenceStats | None = None) -> None:
    """Exactly minimize the penalized loss over one parameter block, in place."""
    if block == "items":
        update_items(model, data, config.lam)
    elif block == "users":
        update_users(model, data, config.lam)
    elif block == "transform":
        if isinstance(model.transform, DiagonalTransform):
            update_diagonal(model, data, config.steps_per_block, stats,
                            config.cooccurrence_reg_strength, config.transform_lam)
        elif isinstance(model.transform, WeightedTransform):
            update_weighted(model, data, config.transform_lam)
        elif model.table is not None:
            update_context_table(model, data, config.lam)
    else:
        raise ValueError(f"unknown block {block!r}")


def blocks_for(model: LinearModel) -> tuple[str, ...]:
    if model.variant == "MF":
        return ("items", "users")
    return ("items", "users", "transform")


def apply_warm_start(model: LinearModel, data: InteractionTensor, config: TrainConfig,
                     stats: CooccurrenceStats | None) -> dict | None:
    if config.warm_start == "none" or not isinstance(model.transform, DiagonalTransform):
        return None
    D0 = model.transform.D
    if config.warm_start == "feature_overlap":
        catalog, counts = _catalog_counts(data)
        before = feature_overlap_objective(D0, catalog, counts)
        model.transform = warm_start_feature_overlap(data, config.k, data.d, D0,
                                                     config.warm_start_steps)
        after = feature_overlap_objective(model.transform.D, catalog, counts)
    else:
        if stats is None:
            raise ValueError("co-occurrence warm start needs co-occurrence statistics")
        before = cooccurrence_regularizer(D0, stats, 1.0)
        model.transform = warm_start_cooccurrence(stats, config.k, D0, config.warm_start_steps)
        after = cooccurrence_regularizer(model.transform.D, stats, 1.0)
    info = {"scheme": config.warm_start, "objective_before": before, "objective_after": after,
            "steps": config.warm_start_steps}
    logger.info("warm start %s: %.6g -> %.6g (~%d steps)", config.warm_start, before, after,
                config.warm_start_steps)
    return info


def fit_linear(variant: str, data: InteractionTensor, config: TrainConfig,
               features: FeatureMap | None = None, stats: CooccurrenceStats | None = None,
               init: LinearModel | None = None,
               callback: Callable[[int, Model], None] | None = None
               ) -> tuple[LinearModel, TrainTrace]:
    """Alternate items, users and transform/context blocks for ``config.iterations`` rounds.

    ``callback(iteration, model)`` runs after every iteration (iteration 0 is
    the initial model).  Once a full iteration improves the loss by less than
    ``early_stop_tol`` relative, later iterations are skipped but the
    callback still fires so learning curves keep their length.
    """
    if variant not in LINEAR_VARIANTS:
        raise ValueError(f"{variant} is not a linear variant")
    model = init.copy() if init is not None else init_linear(
        variant, data.m, data.n, data.d, config, features)
    if model.variant != variant:
        model = _promote(model, variant, data.d, features)
    strength = config.cooccurrence_reg_strength
    reg_stats = stats if strength > 0 else None
    trace = TrainTrace()
    if init is None:
        trace.warm_start = apply_warm_start(model, data, config, stats)

    def loss() -> float:
        return penalized_loss(model, data, config.lam, reg_stats, strength, config.transform_lam)

    current = loss()
    trace.iteration_losses.append(current)
    if callback:
        callback(0, model)
    for it in range(1, config.iterations + 1):
        if not trace.early_stopped:
            start = current
            for block in blocks_for(model):
                before = current
                als_block_update(model, data, block, config, reg_stats)
                current = loss()
                trace.log_block(it, block, before, current)
            trace.iteration_losses.append(current)
            if start > 0 and (start - current) / start < config.early_stop_tol:
                trace.early_stopped = True
                trace.early_stop_iteration = it
        if callback:
            callback(it, model)
    return model, trace


def _promote(model: LinearModel, variant: str, d: int, features: FeatureMap | None) -> LinearModel:
    """Embed a coarser solution into a richer variant without changing its scores."""
    emb = model.emb.copy()
    k = emb.k
    if variant == "WC-MF" and model.variant == "MF":
        return LinearModel(variant, emb, WeightedTransform(np.ones(d)))
    if variant == "DC-MF" and model.variant == "MF":
        return LinearModel(variant, emb, DiagonalTransform(np.ones((k, d))))
    if variant == "DC-MF" and model.variant == "WC-MF":
        return LinearModel(variant, emb, model.transform.as_diagonal(k))
    if variant == "CAMF-CI" and model.variant == "MF":
        return LinearModel(variant, emb, table=ContextItemTable.zeros(features))
    raise ValueError(f"cannot initialise {variant} from {model.variant}")


# -- neural models -------------------------------------------------------------------


def _net_grads_flat(net: FeedForwardNet, upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    grads, dx = net.backward(upstream)
    return FeedForwardNet.flatten_grads(grads), dx


def batch_gradients(model: NCMF | TowerModel, data: InteractionTensor, rows: np.ndarray,
                    lam: float, total: int) -> tuple[float, dict[str, np.ndarray]]:
    """Gradient of ``(1/|b|) sum_b w (r - s)^2 + (lam / (2 total)) * ||embeddings||^2``.

    Returns the batch objective and gradients keyed like ``param_arrays``.
    """
    users, items, cids = data.users[rows], data.items[rows], data.cids[rows]
    r, w = data.rewards[rows], data.weights[rows]
    bsz = rows.size
    uq, inv = np.unique(cids, return_inverse=True)
    grads: dict[str, np.ndarray] = {}
    if isinstance(model, NCMF):
        emb = model.emb
        Tq = model.net.forward(model.gmap(data.catalog[uq]))
        U, P = emb.U[users], emb.P[items]
        if model.mode == "full":
            k = emb.k
            T = Tq.reshape(-1, k, k)[inv]
            s = np.einsum("tk,tkl,tl->t", U, T, P) + emb.B[users]
            e = s - r
            ds = 2.0 * w * e / bsz
            gU = ds[:, None] * np.einsum("tkl,tl->tk", T, P)
            gP = ds[:, None] * np.einsum("tkl,tk->tl", T, U)
            gT = (ds[:, None, None] * U[:, :, None] * P[:, None, :]).reshape(bsz, k * k)
        else:
            T = Tq[inv]
            s = np.einsum("tk,tk,tk->t", U, T, P) + emb.B[users]
            e = s - r
            ds = 2.0 * w * e / bsz
            gU = ds[:, None] * T * P
            gP = ds[:, None] * T * U
            gT = ds[:, None] * U * P
        dU = lam * emb.U / total
        dP = lam * emb.P / total
        np.add.at(dU, users, gU)
        np.add.at(dP, items, gP)
        dB = np.zeros_like(emb.B)
        np.add.at(dB, users, ds)
        dTq = np.zeros((uq.size, gT.shape[1]))
        np.add.at(dTq, inv, gT)
        grads["net"], _ = _net_grads_flat(model.net, dTq)
        grads.update(U=dU, P=dP, B=dB)
        obj = float(np.sum(w * e * e)) / bsz + 0.5 * lam * (np.sum(emb.U ** 2) + np.sum(emb.P ** 2)) / total
        return obj, grads

    Gq = model.gmap(data.catalog[uq])
    G = Gq[inv]
    xu, xi = model.tower_inputs(users, items, G)
    zu = model.user_tower.forward(xu)
    zi = model.item_tower.forward(xi)
    if model.variant == "NN-MF":
        s = np.einsum("tk,tk->t", zu, zi)
        e = s - r
        ds = 2.0 * w * e / bsz
        dzu, dzi = ds[:, None] * zi, ds[:, None] * zu
    else:
        T = model.head.forward(Gq)[inv]
        s = np.einsum("tk,tk,tk->t", zu, T, zi) + model.B[users]
        e = s - r
        ds = 2.0 * w * e / bsz
        dzu, dzi = ds[:, None] * T * zi, ds[:, None] * T * zu
        dTq = np.zeros((uq.size, T.shape[1]))
        np.add.at(dTq, inv, ds[:, None] * zu * zi)
        grads["head"], _ = _net_grads_flat(model.head, dTq)
        dB = np.zeros_like(model.B)
        np.add.at(dB, users, ds)
        grads["B"] = dB
    k_id = model.Eu.shape[1]
    grads["user_tower"], dxu = _net_grads_flat(model.user_tower, dzu)
    grads["item_tower"], dxi = _net_grads_flat(model.item_tower, dzi)
    dEu = lam * model.Eu / total
    dEi = lam * model.Ei / total
    np.add.at(dEu, users, dxu[:, :k_id])
    np.add.at(dEi, items, dxi[:, :k_id])
    grads.update(Eu=dEu, Ei=dEi)
    obj = float(np.sum(w * e * e)) / bsz + 0.5 * lam * (np.sum(model.Eu ** 2) + np.sum(model.Ei ** 2)) / total
    return obj, grads


def param_arrays(model: NCMF | TowerModel) -> dict[str, np.ndarray]:
    """Current parameter values; nets are exposed as flat vectors."""
    if isinstance(model, NCMF):
        return {"U": model.emb.U, "P": model.emb.P, "B": model.emb.B, "net": model.net.get_params()}
    out = {"Eu": model.Eu, "Ei": model.Ei,
           "user_tower": model.user_tower.get_params(), "item_tower": model.item_tower.get_params()}
    if model.head is not None:
        out["head"] = model.head.get_params()
        out["B"] = model.B
    return out


def set_param(model: NCMF | TowerModel, name: str, value: np.ndarray) -> None:
    if name in ("net", "head", "user_tower", "item_tower"):
        getattr(model, name).set_params(value)
    elif isinstance(model, NCMF):
        setattr(model.emb, name, value)
    else:
        setattr(model, name, value)


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.t += 1
        out = {}
        for name, g in grads.items():
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            mhat = m / (1 - self.beta1 ** self.t)
            vhat = v / (1 - self.beta2 ** self.t)
            out[name] = params[name] - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


def sgd_epoch(model: NCMF | TowerModel, data: InteractionTensor, config: TrainConfig,
              rng: np.random.Generator, optimizer: Adam | None = None,
              freeze: tuple[str, ...] = ()) -> float:
    """One shuffled pass of minibatch updates; returns the epoch's penalized loss."""
    order = rng.permutation(len(data))
    total = len(data)
    for start in range(0, total, config.batch_size):
        rows = order[start:start + config.batch_size]
        _, grads = batch_gradients(model, data, rows, config.lam, total)
        for name in freeze:
            grads.pop(name, None)
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(
                    f"non-finite gradient for {name!r} in batch starting at record {start}")
        params = param_arrays(model)
        if optimizer is not None:
            new = optimizer.step(params, grads)
        else:
            new = {name: params[name] - config.learning_rate * g for name, g in grads.items()}
        for name, value in new.items():
            set_param(model, name, value)
    return penalized_loss(model, data, config.lam)


def init_neural(variant: str, data: InteractionTensor, config: TrainConfig,
                gmap: ConstraintFeatureMapG, side: SideInfo | None = None,
                transform_side_cols: tuple[int, ...] = (),
                rng: np.random.Generator | None = None) -> NCMF | TowerModel:
    """Random initial NC-MF / NN-MF / NC-NN-MF.

    ``transform_side_cols`` names user side columns that already enter ``g``
    and are therefore withheld from the NC-NN-MF user tower.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    k = config.k
    if variant == "NC-MF":
        emb = EmbeddingModel.random(data.m, data.n, k, rng, config.init_scale)
        out = k if config.transform_mode == "diagonal" else k * k
        bias = 1.0 if config.transform_mode == "diagonal" else np.eye(k).ravel()
        net = FeedForwardNet.build([gmap.p, *config.hidden, out], rng, output_bias=bias)
        return NCMF(emb, net, gmap, config.transform_mode)
    if side is None:
        raise ValueError(f"{variant} needs user/item side features")
    k_id = config.k_id or k
    Eu = rng.normal(0.0, config.init_scale, (data.m, k_id))
    Ei = rng.normal(0.0, config.init_scale, (data.n, k_id))
    if variant == "NN-MF":
        user_cols = np.arange(side.user.shape[1])
        in_u = k_id + user_cols.size + gmap.p
        in_i = k_id + side.item.shape[1] + gmap.p
        ut = FeedForwardNet.build([in_u, *config.hidden, k], rng)
        it = FeedForwardNet.build([in_i, *config.hidden, k], rng)
        return TowerModel(variant, Eu, Ei, ut, it, side, gmap, user_side_cols=user_cols)
    if variant == "NC-NN-MF":
        user_cols = np.array([c for c in range(side.user.shape[1]) if c not in transform_side_cols],
                             dtype=np.int64)
        in_u = k_id + user_cols.size
        in_i = k_id + side.item.shape[1]
        ut = FeedForwardNet.build([in_u, *config.hidden, k], rng)
        it = FeedForwardNet.build([in_i, *config.hidden, k], rng)
        head = FeedForwardNet.build([gmap.p, *config.hidden, k], rng, output_bias=1.0)
        return TowerModel(variant, Eu, Ei, ut, it, side, gmap, head=head, B=np.zeros(data.m),
                          user_side_cols=user_cols)
    raise ValueError(f"{variant} is not a neural variant")


def fit_neural(variant: str, data: InteractionTensor, config: TrainConfig,
               gmap: ConstraintFeatureMapG, side: SideInfo | None = None,
               transform_side_cols: tuple[int, ...] = (),
               callback: Callable[[int, Model], None] | None = None
               ) -> tuple[NCMF | TowerModel, TrainTrace]:
    rng = np.random.default_rng(config.seed)
    model = init_neural(variant, data, config, gmap, side, transform_side_cols, rng)
    optimizer = Adam(config.learning_rate) if config.optimizer == "adam" else None
    trace = TrainTrace()
    current = penalized_loss(model, data, config.lam)
    trace.iteration_losses.append(current)
    if callback:
        callback(0, model)
    for it in range(1, config.iterations + 1):
        for _ in range(config.epochs_per_iteration):
            before = current
            current = sgd_epoch(model, data, config, rng, optimizer)
            trace.log_block(it, "sgd_epoch", before, current)
        trace.iteration_losses.append(current)
        if callback:
            callback(it, model)
    return model, trace


# -- data preparation ----------------------------------------------------------------


def reweight_classes(data: InteractionTensor, positive_weight: float,
                     negative_weight: float) -> InteractionTensor:
    """Set record weights by class for binary-reward data."""
    r = data.rewards
    if not np.isin(r, (0.0, 1.0)).all():
        raise ValueError("class reweighting needs rewards in {0, 1}")
    pos = r == 1.0
    if not pos.any() or pos.all():
        raise ValueError("class reweighting needs both positive and negative records")
    return data.with_weights(np.where(pos, positive_weight, negative_weight))


def balanced_class_weights(data: InteractionTensor) -> tuple[float, float]:
    """Inverse class-frequency weights, scaled so the mean record weight is 1."""
    n_pos = int(np.sum(data.rewards == 1.0))
    n_neg = len(data) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes are required")
    return len(data) / (2.0 * n_pos), len(data) / (2.0 * n_neg)


def sample_training_negatives(data: InteractionTensor, strategy: str, ratio: float, seed: int
                              ) -> InteractionTensor:
    """Append ``r = 0`` records, ``ratio`` per positive.

    ``time_bucket``: for a positive under constraint ``c``, pair a random user
    never observed in any bucket of ``c`` with a random item never observed
    in any bucket of ``c``.  ``uniform``: random user and item, constraint
    kept, skipping pairs observed as positives.  Infeasible time-bucket draws
    fall back to uniform and are listed in ``meta['warnings']``.
    """
    if strategy not in ("time_bucket", "uniform"):
        raise ValueError(f"unknown negative sampling strategy {strategy!r}")
    if ratio < 0:
        raise ValueError("ratio must be nonnegative")
    pos_idx = np.flatnonzero(data.rewards > 0)
    n_neg = int(round(ratio * pos_idx.size))
    if n_neg == 0:
        return data
    rng = np.random.default_rng(seed)
    source = pos_idx[np.arange(n_neg) % pos_idx.size]
    source = source[rng.permutation(n_neg)]
    cids = data.cids[source]
    users = np.empty(n_neg, dtype=np.int64)
    items = np.empty(n_neg, dtype=np.int64)
    warnings: list[str] = []
    observed = set(zip(data.users[pos_idx].tolist(), data.items[pos_idx].tolist()))
    fallback = np.zeros(n_neg, dtype=bool)
    if strategy == "time_bucket":
        user_seen = user_bit_matrix(data)
        item_seen = item_bit_matrix(data)
        for q in np.unique(cids):
            slots = np.flatnonzero(cids == q)
            c = data.catalog[q].astype(np.int64)
            ok_users = np.flatnonzero(user_seen @ c == 0)
            ok_items = np.flatnonzero(item_seen @ c == 0)
            if ok_users.size == 0 or ok_items.size == 0:
                fallback[slots] = True
                continue
            users[slots] = rng.choice(ok_users, slots.size)
            items[slots] = rng.choice(ok_items, slots.size)
        if fallback.any():
            warnings.append(f"time_bucket infeasible for {int(fallback.sum())} negatives; "
                            "fell back to uniform sampling")
            logger.warning(warnings[-1])
    else:
        fallback[:] = True
    for slot in np.flatnonzero(fallback):
        for _ in range(1000):
            u, i = int(rng.integers(data.m)), int(rng.integers(data.n))
            if (u, i) not in observed:
                break
        users[slot], items[slot] = u, i
    neg = InteractionTensor(users, items, cids, np.zeros(n_neg), np.ones(n_neg),
                            data.catalog, data.m, data.n)
    out = data.concat(neg)
    meta = dict(data.meta)
    meta["warnings"] = list(meta.get("warnings", [])) + warnings
    meta["negatives"] = {"strategy": strategy, "ratio": ratio, "seed": seed, "count": n_neg}
    return InteractionTensor(out.users, out.items, out.cids, out.rewards, out.weights,
                             out.catalog, out.m, out.n, meta)
