"""Customer journeys from basket data.

Baskets become a binary product x customer matrix; customers are compared
by cosine similarity and grouped with a diagonal-covariance Gaussian mixture
fitted by EM. Each cluster's typical products become a bay-visit sequence.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .layout import StoreLayout

VAR_FLOOR = 1e-6
ARCHETYPE_THRESHOLD = 0.5


class BasketError(ValueError):
    pass


@dataclass(frozen=True)
class BasketMatrix:
    products: tuple[str, ...]
    customers: tuple[str, ...]
    cells: np.ndarray  # uint8, products x customers

    def __post_init__(self) -> None:
        if self.cells.shape != (len(self.products), len(self.customers)):
            raise BasketError("matrix shape does not match id lists")
        if self.cells.size and (self.cells.sum(axis=0) == 0).any():
            raise BasketError("empty basket column")

    @property
    def n_customers(self) -> int:
        return len(self.customers)

    def basket(self, customer: str) -> set[str]:
        j = self.customers.index(customer)
        return {p for p, v in zip(self.products, self.cells[:, j]) if v}


def build_matrix(
    transactions: Iterable[tuple[str, Iterable[str]]],
    catalog: Iterable[str] | None = None,
) -> BasketMatrix:
    """Binary incidence matrix, rows and columns in sorted id order.

    Repeated customer ids are merged into one basket.
    """
    baskets: dict[str, set[str]] = {}
    for cust, prods in transactions:
        prods = {str(p) for p in prods}
        if not prods:
            raise BasketError(f"empty basket for customer {cust!r}")
        baskets.setdefault(str(cust), set()).update(prods)
    if not baskets:
        raise BasketError("no transactions")
    known = None if catalog is None else set(map(str, catalog))
    products = sorted(set().union(*baskets.values()))
    if known is not None:
        unknown = [p for p in products if p not in known]
        if unknown:
            raise BasketError(f"unknown product id {unknown[0]!r}")
    customers = sorted(baskets)
    row = {p: i for i, p in enumerate(products)}
    cells = np.zeros((len(products), len(customers)), dtype=np.uint8)
    for j, c in enumerate(customers):
        for p in baskets[c]:
            cells[row[p], j] = 1
    return BasketMatrix(tuple(products), tuple(customers), cells)


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise BasketError("cosine of a zero vector")
    return float(min(1.0, max(0.0, float(u @ v) / (nu * nv))))


def similarity_matrix(matrix: BasketMatrix) -> np.ndarray:
    """Customer x customer cosine scores; symmetric, unit diagonal, in [0, 1]."""
    X = matrix.cells.astype(np.int64)
    gram = X.T @ X
    norms = np.sqrt(np.diag(gram).astype(np.float64))
    S = gram / np.outer(norms, norms)
    np.clip(S, 0.0, 1.0, out=S)
    np.fill_diagonal(S, 1.0)
    return S


# ---------------------------------------------------------------- mixture EM


@dataclass
class MixtureFit:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    resp: np.ndarray
    ll_trace: list[float]
    converged: bool

    @property
    def log_likelihood(self) -> float:
        return self.ll_trace[-1]

    def n_params(self) -> int:
        k, d = self.means.shape
        return (k - 1) + 2 * k * d

    def bic(self, n: int) -> float:
        return -2.0 * self.log_likelihood + self.n_params() * math.log(n)


def _farthest_first(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [int(rng.integers(n))]
    d2 = ((X - X[centers[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d2))
        centers.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return np.array(centers)


def _log_gauss(X: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    n, d = X.shape
    k = means.shape[0]
    out = np.empty((n, k))
    for j in range(k):
        quad = ((X - means[j]) ** 2 / variances[j]).sum(axis=1)
        out[:, j] = -0.5 * (d * math.log(2 * math.pi) + np.log(variances[j]).sum() + quad)
    return out


def _m_step(X: np.ndarray, resp: np.ndarray, var_floor: float):
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    weights = nk / nk.sum()
    means = (resp.T @ X) / nk[:, None]
    variances = np.empty_like(means)
    for j in range(means.shape[0]):
        variances[j] = resp[:, j] @ (X - means[j]) ** 2 / nk[j]
    np.maximum(variances, var_floor, out=variances)
    return weights, means, variances


def fit_mixture(
    X: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-6,
    var_floor: float = VAR_FLOOR,
) -> MixtureFit:
    """EM for a k-component diagonal Gaussian mixture.

    Seeded farthest-first centres give the initial hard partition; iteration
    stops when the log-likelihood gain drops below ``tol`` or after
    ``max_iter`` E-steps.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise BasketError(f"need 1 <= k <= {n}, got k={k}")
    if max_iter < 1:
        raise BasketError("max_iter must be >= 1")
    rng = np.random.default_rng(seed)
    centers = X[_farthest_first(X, k, rng)]
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    resp = np.zeros((n, k))
    resp[np.arange(n), np.argmin(d2, axis=1)] = 1.0
    weights, means, variances = _m_step(X, resp, var_floor)

    trace: list[float] = []
    converged = False
    for _ in range(max_iter):
        weighted = _log_gauss(X, means, variances) + np.log(weights)
        norm = logsumexp(weighted, axis=1)
        resp = np.exp(weighted - norm[:, None])
        ll = float(norm.sum())
        if trace and ll - trace[-1] < tol:
            trace.append(ll)
            converged = True
            break
        trace.append(ll)
        weights, means, variances = _m_step(X, resp, var_floor)
    return MixtureFit(weights, means, variances, resp, trace, converged)


# ---------------------------------------------------------------- clusters


@dataclass
class TrajectoryCluster:
    id: int
    weight: float
    archetype_products: list[str]
    bay_sequence: list[str]
    member_customers: list[str]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "weight": self.weight,
            "archetype_products": self.archetype_products,
            "bay_sequence": self.bay_sequence,
            "member_customers": self.member_customers,
        }


@dataclass
class ClusterResult:
    clusters: list[TrajectoryCluster]
    ll_trace: list[float]
    responsibilities: np.ndarray
    bic: float
    k: int
    features: str
    bic_table: dict[int, float] = field(default_factory=dict)

    def labels(self, customers: Sequence[str]) -> list[int]:
        where = {c: cl.id for cl in self.clusters for c in cl.member_customers}
        return [where[c] for c in customers]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "features": self.features,
            "bic": self.bic,
            "bic_table": {str(k): v for k, v in sorted(self.bic_table.items())},
            "log_likelihood_trace": self.ll_trace,
            "clusters": [c.to_dict() for c in self.clusters],
        }


def features_of(matrix: BasketMatrix, features: str = "similarity") -> np.ndarray:
    if features == "similarity":
        return similarity_matrix(matrix)
    if features == "raw":
        return matrix.cells.T.astype(np.float64)
    raise BasketError(f"unknown feature mode {features!r}")


def cluster(
    matrix: BasketMatrix,
    k: int,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-6,
    *,
    features: str = "similarity",
    threshold: float = ARCHETYPE_THRESHOLD,
    layout: StoreLayout | None = None,
) -> ClusterResult:
    """Group customers into k journey archetypes.

    Each customer is represented by its row of cosine scores (or its raw
    basket vector with ``features="raw"``) and hard-assigned to its most
    responsible component; empty components are dropped. With a layout,
    each archetype is turned into a bay-visit sequence.
    """
    X = features_of(matrix, features)
    fit = fit_mixture(X, k, seed=seed, max_iter=max_iter, tol=tol)
    hard = np.argmax(fit.resp, axis=1)
    n = matrix.n_customers
    clusters = []
    for comp in range(k):
        members = np.flatnonzero(hard == comp)
        if members.size == 0:
            continue
        freq = matrix.cells[:, members].mean(axis=1)
        arche = [p for p, f in zip(matrix.products, freq) if f >= threshold]
        seq = to_bay_sequence(arche, layout) if layout is not None and arche else []
        clusters.append(
            TrajectoryCluster(
                id=len(clusters),
                weight=members.size / n,
                archetype_products=arche,
                bay_sequence=seq,
                member_customers=[matrix.customers[i] for i in members],
            )
        )
    bic = fit.bic(n)
    return ClusterResult(clusters, fit.ll_trace, fit.resp, bic, k, features, {k: bic})


def select_k(
    matrix: BasketMatrix,
    k_range: Iterable[int],
    seed: int = 0,
    *,
    features: str = "similarity",
    max_iter: int = 200,
    tol: float = 1e-6,
) -> tuple[int, dict[int, float]]:
    """k with the lowest BIC over ``k_range`` (ties go to the smaller k)."""
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise BasketError("empty k range")
    X = features_of(matrix, features)
    table = {}
    for k in ks:
        table[k] = fit_mixture(X, k, seed=seed, max_iter=max_iter, tol=tol).bic(X.shape[0])
    best = min(ks, key=lambda k: (table[k], k))
    return best, table


def to_bay_sequence(products: Iterable[str], layout: StoreLayout) -> list[str]:
    """Order the bays holding ``products`` by a greedy nearest-bay walk from spawn."""
    where = layout.product_bays()
    bays = set()
    for p in products:
        if p not in where:
            raise BasketError(f"product {p!r} is not stocked in any bay")
        bays.add(where[p])
    node_of = {b.id: b.node for b in layout.bays}
    seq: list[str] = []
    here = layout.spawn
    remaining = sorted(bays)
    while remaining:
        lengths = {b: layout.route(here, node_of[b]).length for b in remaining}
        best = min(lengths.values())
        tol = 1e-9 * max(1.0, best)
        nxt = min(b for b in remaining if lengths[b] <= best + tol)
        seq.append(nxt)
        remaining.remove(nxt)
        here = node_of[nxt]
    return seq


# ---------------------------------------------------------------- file formats


def read_transactions(path: str | Path) -> list[tuple[str, list[str]]]:
    """CSV ``customer_id,product_id`` rows or JSONL ``{"customer", "products"}``."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    out: dict[str, list[str]] = {}
    if path.suffix in (".jsonl", ".ndjson"):
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.setdefault(str(rec["customer"]), []).extend(map(str, rec["products"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise BasketError(f"{path}:{lineno}: bad record ({exc})") from exc
        return list(out.items())
    rows = csv.reader(text.splitlines())
    for lineno, row in enumerate(rows, 1):
        if not row or not "".join(row).strip():
            continue
        if lineno == 1 and row[:2] == ["customer_id", "product_id"]:
            continue
        if len(row) != 2:
            raise BasketError(f"{path}:{lineno}: expected customer_id,product_id")
        out.setdefault(row[0].strip(), []).append(row[1].strip())
    return list(out.items())


def write_report(result: ClusterResult, path: str | Path) -> None:
    Path(path).write_text(json.dumps(result.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_report(path: str | Path) -> list[tuple[float, list[str]]]:
    """(weight, bay_sequence) pairs from a cluster report."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [(float(c["weight"]), list(c["bay_sequence"])) for c in data["clusters"]]


def two_population_transactions(
    n_per: int = 50,
    products_per: int = 5,
    seed: int = 0,
    p_include: float = 0.6,
) -> tuple[list[tuple[str, list[str]]], dict[str, int]]:
    """Synthetic baskets from two populations with disjoint product sets.

    Returns the transactions and the generating label of each customer.
    """
    rng = np.random.default_rng(seed)
    trans, labels = [], {}
    for pop in range(2):
        prods = [f"p{pop * products_per + i + 1:02d}" for i in range(products_per)]
        for c in range(n_per):
            pick = rng.random(products_per) < p_include
            if not pick.any():
                pick[rng.integers(products_per)] = True
            cid = f"c{pop}{c:03d}"
            trans.append((cid, [p for p, keep in zip(prods, pick) if keep]))
            labels[cid] = pop
    return trans, labels


def purity(labels_found: Sequence[int], labels_true: Sequence[int]) -> float:
    """Fraction of items whose cluster's majority true label matches their own."""
    found = np.asarray(labels_found)
    true = np.asarray(labels_true)
    total = 0
    for c in np.unique(found):
        _, counts = np.unique(true[found == c], return_counts=True)
        total += counts.max()
    return total / found.size


def product_catalog(layout: StoreLayout) -> Mapping[str, str]:
    return layout.product_bays()
