"""Embedding models and their scoring rules.

Linear variants (MF, CAMF-CI, WC-MF, DC-MF) share ``EmbeddingModel`` and add
at most one transform block.  Neural variants (NC-MF, NN-MF, NC-NN-MF) use
``FeedForwardNet`` heads and towers.  Every model exposes
``predict(users, items, catalog, cids)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constraints import ConstraintVector, FeatureMap, InteractionTensor
from .nn import ConstraintFeatureMapG, FeedForwardNet

FORMAT = "constrec-model"
FORMAT_VERSION = 1

LINEAR_VARIANTS = ("MF", "CAMF-CI", "WC-MF", "DC-MF")
NEURAL_VARIANTS = ("NC-MF", "NN-MF", "NC-NN-MF")


def _check_id(idx: int, size: int, what: str) -> None:
    if not 0 <= idx < size:
        raise IndexError(f"{what} id {idx} out of range [0, {size})")


def _norm_bits(c) -> np.ndarray:
    bits = c.bits if isinstance(c, ConstraintVector) else np.asarray(c)
    total = bits.sum()
    if total == 0:
        raise ValueError("zero constraint has no transform")
    return bits.astype(np.float64) / total


@dataclass
class EmbeddingModel:
    U: np.ndarray  # (m, k)
    P: np.ndarray  # (n, k)
    B: np.ndarray  # (m,)

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=np.float64)
        self.P = np.asarray(self.P, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        if self.U.shape[1] != self.P.shape[1]:
            raise ValueError("U and P must share the embedding size k")
        if self.B.shape != (self.U.shape[0],):
            raise ValueError("B must hold one bias per user")

    @classmethod
    def random(cls, m: int, n: int, k: int, rng: np.random.Generator, scale: float = 0.1
               ) -> EmbeddingModel:
        return cls(rng.normal(0.0, scale, (m, k)), rng.normal(0.0, scale, (n, k)), np.zeros(m))

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def k(self) -> int:
        return self.U.shape[1]

    def copy(self) -> EmbeddingModel:
        return EmbeddingModel(self.U.copy(), self.P.copy(), self.B.copy())


@dataclass
class DiagonalTransform:
    """Column ``j`` of ``D`` (shape ``(k, d)``) is the diagonal of slice ``j``."""

    D: np.ndarray

    def __post_init__(self):
        self.D = np.asarray(self.D, dtype=np.float64)

    def diagonals(self, catalog: np.ndarray) -> np.ndarray:
        cat = np.asarray(catalog, dtype=np.float64)
        return (cat / cat.sum(axis=1, keepdims=True)) @ self.D.T


@dataclass
class WeightedTransform:
    """Scalar slices: ``[A]_j = alpha_j * I_k``."""

    alpha: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)

    def weights(self, catalog: np.ndarray) -> np.ndarray:
        cat = np.asarray(catalog, dtype=np.float64)
        return (cat / cat.sum(axis=1, keepdims=True)) @ self.alpha

    def as_diagonal(self, k: int) -> DiagonalTransform:
        return DiagonalTransform(np.tile(self.alpha, (k, 1)))


@dataclass
class ContextItemTable:
    """Additive per-(feature, item) terms, live only where the item has the feature."""

    C: np.ndarray  # (d, n)
    mask: np.ndarray  # (d, n) bool

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.C = np.where(self.mask, np.asarray(self.C, dtype=np.float64), 0.0)

    @classmethod
    def zeros(cls, features: FeatureMap) -> ContextItemTable:
        mask = features.rows.T.astype(bool)
        return cls(np.zeros(mask.shape), mask)

    def active_sets(self, items: np.ndarray, bits: np.ndarray) -> np.ndarray:
        """``(t, d)`` mask of features active in the constraint and compatible with the item."""
        return (np.asarray(bits) > 0) & self.mask.T[items]

    def terms(self, items: np.ndarray, bits: np.ndarray) -> np.ndarray:
        active = self.active_sets(items, bits)
        count = active.sum(axis=1)
        total = (self.C.T[items] * active).sum(axis=1)
        return np.where(count > 0, total / np.maximum(count, 1), 0.0)


# -- single-pair scoring -------------------------------------------------------------


def score_mf(model: EmbeddingModel, u: int, i: int) -> float:
    _check_id(u, model.m, "user")
    _check_id(i, model.n, "item")
    return float(model.U[u] @ model.P[i] + model.B[u])


def score_camf(model: EmbeddingModel, table: ContextItemTable, u: int, i: int, c) -> float:
    _check_id(u, model.m, "user")
    _check_id(i, model.n, "item")
    bits = c.bits if isinstance(c, ConstraintVector) else np.asarray(c)
    term = table.terms(np.array([i]), bits[None, :])[0]
    return float(model.B[u] + model.U[u] @ model.P[i] + term)


def transform_linear(D: DiagonalTransform, c) -> np.ndarray:
    """Diagonal of ``T(c) = A c / ||c||_1`` for diagonal slices."""
    return D.D @ _norm_bits(c)


def score_constrained(model: EmbeddingModel, t_diag: np.ndarray, u: int, i: int) -> float:
    _check_id(u, model.m, "user")
    _check_id(i, model.n, "item")
    return float(np.sum(model.U[u] * t_diag * model.P[i]) + model.B[u])


def score_weighted(model: EmbeddingModel, alpha: WeightedTransform, u: int, i: int, c) -> float:
    _check_id(u, model.m, "user")
    _check_id(i, model.n, "item")
    weight = float(alpha.alpha @ _norm_bits(c))
    return weight * float(model.U[u] @ model.P[i]) + float(model.B[u])


# -- model bundles -------------------------------------------------------------------


@dataclass
class LinearModel:
    variant: str
    emb: EmbeddingModel
    transform: DiagonalTransform | WeightedTransform | None = None
    table: ContextItemTable | None = None

    def __post_init__(self):
        if self.variant not in LINEAR_VARIANTS:
            raise ValueError(f"unknown linear variant {self.variant!r}")
        need = {"DC-MF": DiagonalTransform, "WC-MF": WeightedTransform}.get(self.variant)
        if need is not None and not isinstance(self.transform, need):
            raise ValueError(f"{self.variant} needs a {need.__name__}")
        if self.variant == "CAMF-CI" and self.table is None:
            raise ValueError("CAMF-CI needs a ContextItemTable")

    @property
    def d(self) -> int | None:
        if isinstance(self.transform, DiagonalTransform):
            return self.transform.D.shape[1]
        if isinstance(self.transform, WeightedTransform):
            return self.transform.alpha.size
        if self.table is not None:
            return self.table.C.shape[0]
        return None

    def diagonals(self, catalog: np.ndarray) -> np.ndarray:
        """Per-constraint diagonal of ``T(c)``; all-ones for MF and CAMF-CI."""
        q = np.asarray(catalog).shape[0]
        if isinstance(self.transform, DiagonalTransform):
            return self.transform.diagonals(catalog)
        if isinstance(self.transform, WeightedTransform):
            return np.outer(self.transform.weights(catalog), np.ones(self.emb.k))
        return np.ones((q, self.emb.k))

    def predict(self, users, items, catalog, cids) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        cids = np.asarray(cids, dtype=np.int64)
        U, P, B = self.emb.U, self.emb.P, self.emb.B
        if self.variant in ("MF", "CAMF-CI"):
            s = np.einsum("tk,tk->t", U[users], P[items]) + B[users]
        else:
            T = self.diagonals(catalog)
            s = np.einsum("tk,tk,tk->t", U[users], T[cids], P[items]) + B[users]
        if self.table is not None:
            s = s + self.table.terms(items, np.asarray(catalog)[cids])
        return s

    def predict_data(self, data: InteractionTensor) -> np.ndarray:
        return self.predict(data.users, data.items, data.catalog, data.cids)

    def copy(self) -> LinearModel:
        tr = self.transform
        if isinstance(tr, DiagonalTransform):
            tr = DiagonalTransform(tr.D.copy())
        elif isinstance(tr, WeightedTransform):
            tr = WeightedTransform(tr.alpha.copy())
        table = None if self.table is None else ContextItemTable(self.table.C.copy(), self.table.mask)
        return LinearModel(self.variant, self.emb.copy(), tr, table)


@dataclass
class NCMF:
    """MF embeddings with a neural constraint transform ``T(c) = h(g(c))``."""

    emb: EmbeddingModel
    net: FeedForwardNet
    gmap: ConstraintFeatureMapG
    mode: str = "diagonal"
    variant: str = field(default="NC-MF", init=False)

    def transforms(self, catalog: np.ndarray) -> np.ndarray:
        out = self.net.forward(self.gmap(catalog))
        if self.mode == "full":
            k = self.emb.k
            return out.reshape(-1, k, k)
        return out

    def predict(self, users, items, catalog, cids) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        cids = np.asarray(cids, dtype=np.int64)
        T = self.transforms(catalog)[cids]
        U, P = self.emb.U[users], self.emb.P[items]
        if self.mode == "full":
            core = np.einsum("tk,tkl,tl->t", U, T, P)
        else:
            core = np.einsum("tk,tk,tk->t", U, T, P)
        return core + self.emb.B[users]

    def predict_data(self, data: InteractionTensor) -> np.ndarray:
        return self.predict(data.users, data.items, data.catalog, data.cids)


@dataclass
class SideInfo:
    """Per-user and per-item side feature matrices fed to embedding towers."""

    user: np.ndarray  # (m, a)
    item: np.ndarray  # (n, b)

    def to_dict(self) -> dict:
        return {"user": self.user.tolist(), "item": self.item.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> SideInfo:
        return cls(np.array(doc["user"], dtype=np.float64).reshape(len(doc["user"]), -1),
                   np.array(doc["item"], dtype=np.float64).reshape(len(doc["item"]), -1))


@dataclass
class TowerModel:
    """Two-tower embeddings.

    ``NN-MF``: towers see ``[id embedding, side features, g(c)]`` and the score
    is the dot product of the tower outputs.  ``NC-NN-MF``: towers see no
    context; ``g(c)`` feeds only the transform head, the score is
    ``U(u) * T(c) . P(i) + B_u``.  ``user_side_cols`` selects which user side
    columns reach the user tower (NC-NN-MF drops those used by ``g``).
    """

    variant: str
    Eu: np.ndarray  # (m, k_id)
    Ei: np.ndarray  # (n, k_id)
    user_tower: FeedForwardNet
    item_tower: FeedForwardNet
    side: SideInfo
    gmap: ConstraintFeatureMapG
    head: FeedForwardNet | None = None
    B: np.ndarray | None = None
    user_side_cols: np.ndarray | None = None

    def __post_init__(self):
        if self.variant not in ("NN-MF", "NC-NN-MF"):
            raise ValueError(f"unknown tower variant {self.variant!r}")
        if self.variant == "NC-NN-MF" and (self.head is None or self.B is None):
            raise ValueError("NC-NN-MF needs a transform head and user biases")
        if self.user_side_cols is None:
            self.user_side_cols = np.arange(self.side.user.shape[1])
        self.user_side_cols = np.asarray(self.user_side_cols, dtype=np.int64)

    @property
    def contextual_towers(self) -> bool:
        return self.variant == "NN-MF"

    def tower_inputs(self, users, items, G):
        """Tower input rows for a batch; ``G`` is the per-record ``g(c)``."""
        parts_u = [self.Eu[users], self.side.user[users][:, self.user_side_cols]]
        parts_i = [self.Ei[items], self.side.item[items]]
        if self.contextual_towers:
            parts_u.append(G)
            parts_i.append(G)
        return np.concatenate(parts_u, axis=1), np.concatenate(parts_i, axis=1)

    def predict(self, users, items, catalog, cids) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        cids = np.asarray(cids, dtype=np.int64)
        G = self.gmap(np.asarray(catalog))[cids]
        xu, xi = self.tower_inputs(users, items, G)
        zu = self.user_tower.forward(xu)
        zi = self.item_tower.forward(xi)
        if self.variant == "NN-MF":
            return np.einsum("tk,tk->t", zu, zi)
        T = self.head.forward(G)
        return np.einsum("tk,tk,tk->t", zu, T, zi) + self.B[users]

    def predict_data(self, data: InteractionTensor) -> np.ndarray:
        return self.predict(data.users, data.items, data.catalog, data.cids)


Model = LinearModel | NCMF | TowerModel


# -- persistence ---------------------------------------------------------------------


def _mat(x) -> list:
    return np.asarray(x, dtype=np.float64).tolist()


def _arr(x, shape=None) -> np.ndarray:
    a = np.array(x, dtype=np.float64)
    return a.reshape(shape) if shape is not None else a


def model_to_dict(model: Model) -> dict:
    doc: dict = {"format": FORMAT, "version": FORMAT_VERSION, "variant": model.variant}
    if isinstance(model, LinearModel):
        emb = model.emb
        doc.update(k=emb.k, m=emb.m, n=emb.n, d=model.d, U=_mat(emb.U), P=_mat(emb.P), B=_mat(emb.B))
        if isinstance(model.transform, DiagonalTransform):
            doc["D"] = _mat(model.transform.D)
        elif isinstance(model.transform, WeightedTransform):
            doc["alpha"] = _mat(model.transform.alpha)
        if model.table is not None:
            doc["C"] = _mat(model.table.C)
            doc["C_mask"] = model.table.mask.astype(int).tolist()
    elif isinstance(model, NCMF):
        emb = model.emb
        doc.update(k=emb.k, m=emb.m, n=emb.n, d=model.gmap.d, mode=model.mode,
                   U=_mat(emb.U), P=_mat(emb.P), B=_mat(emb.B),
                   net=model.net.to_dict(), gmap=model.gmap.to_dict())
    else:
        doc.update(k=model.user_tower.output_dim, m=model.Eu.shape[0], n=model.Ei.shape[0],
                   d=model.gmap.d, k_id=model.Eu.shape[1], Eu=_mat(model.Eu), Ei=_mat(model.Ei),
                   user_tower=model.user_tower.to_dict(), item_tower=model.item_tower.to_dict(),
                   side=model.side.to_dict(), gmap=model.gmap.to_dict(),
                   user_side_cols=model.user_side_cols.tolist())
        if model.head is not None:
            doc["head"] = model.head.to_dict()
            doc["B"] = _mat(model.B)
    return doc


def model_from_dict(doc: dict) -> Model:
    if doc.get("format") != FORMAT:
        raise ValueError("not a constrec model document")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('version')}")
    variant = doc["variant"]
    m, n, k, d = doc["m"], doc["n"], doc["k"], doc.get("d")
    if variant in LINEAR_VARIANTS:
        emb = EmbeddingModel(_arr(doc["U"], (m, k)), _arr(doc["P"], (n, k)), _arr(doc["B"], (m,)))
        transform = None
        if "D" in doc:
            transform = DiagonalTransform(_arr(doc["D"], (k, d)))
        elif "alpha" in doc:
            transform = WeightedTransform(_arr(doc["alpha"], (d,)))
        table = None
        if "C" in doc:
            table = ContextItemTable(_arr(doc["C"], (d, n)), np.array(doc["C_mask"], dtype=bool))
        return LinearModel(variant, emb, transform, table)
    if variant == "NC-MF":
        emb = EmbeddingModel(_arr(doc["U"], (m, k)), _arr(doc["P"], (n, k)), _arr(doc["B"], (m,)))
        return NCMF(emb, FeedForwardNet.from_dict(doc["net"]),
                    ConstraintFeatureMapG.from_dict(doc["gmap"]), doc["mode"])
    if variant in ("NN-MF", "NC-NN-MF"):
        k_id = doc["k_id"]
        return TowerModel(
            variant, _arr(doc["Eu"], (m, k_id)), _arr(doc["Ei"], (n, k_id)),
            FeedForwardNet.from_dict(doc["user_tower"]), FeedForwardNet.from_dict(doc["item_tower"]),
            SideInfo.from_dict(doc["side"]), ConstraintFeatureMapG.from_dict(doc["gmap"]),
            FeedForwardNet.from_dict(doc["head"]) if "head" in doc else None,
            _arr(doc["B"], (m,)) if "B" in doc else None,
            np.array(doc["user_side_cols"], dtype=np.int64))
    raise ValueError(f"unknown variant {variant!r}")


def save_model(model: Model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path: str | Path) -> Model:
    return model_from_dict(json.loads(Path(path).read_text()))
