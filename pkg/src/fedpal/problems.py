"""Experiment problem families, dataset utilities, and verification oracles.

Three families are provided:

* Neyman-Pearson classification: minimize the class-0 logistic loss subject
  to a per-client cap on the class-1 logistic loss.
* Fairness-constrained classification: minimize the mean logistic loss with
  two-sided bounds on the subgroup loss disparity at every party, server
  included (nonconvex constraints; runs are flagged as heuristic).
* Linear-equality-constrained QP with a random instance generator and a
  dense KKT-factorization oracle used for independent verification.

Bundled synthetic datasets stand in for the real benchmark files, which are
not distributed with the package; any CSV with a binary label column (and an
optional subgroup column) can be supplied instead.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import (
    ClientProblem,
    Cone,
    ConstraintBlock,
    EmptyBlock,
    LinearBlock,
    ProblemSpec,
    MultiplierState,
    Quadratic,
    SmoothFunction,
)

__all__ = [
    "softplus",
    "sigmoid",
    "LogisticMeanLoss",
    "AffineCombination",
    "FunctionBlock",
    "LabeledDataset",
    "load_csv",
    "partition_stratified",
    "build_np_problem",
    "build_fairness_problem",
    "LcqpInstance",
    "generate_lcqp",
    "lcqp_problem",
    "lcqp_oracle",
    "synthetic_np_dataset",
    "synthetic_fairness_dataset",
    "resolve_dataset",
    "unit_sphere",
]


def softplus(z: np.ndarray) -> np.ndarray:
    """log(1 + e^z), overflow-safe for |z| up to the float range."""
    z = np.asarray(z, dtype=float)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LogisticMeanLoss(SmoothFunction):
    """scale * mean_j [ -y_j w'x_j + log(1 + e^{w'x_j}) ] over a sample set."""

    def __init__(self, X: np.ndarray, y: np.ndarray, scale: float = 1.0):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.y = np.asarray(y, dtype=float).ravel()
        if self.X.shape[0] != self.y.size:
            raise ValueError("feature rows and labels disagree in count")
        if self.X.shape[0] == 0:
            raise ValueError("logistic loss needs at least one sample")
        self.scale = float(scale)

    def value(self, w: np.ndarray) -> float:
        z = self.X @ w
        return self.scale * float(np.mean(softplus(z) - self.y * z))

    def gradient(self, w: np.ndarray) -> np.ndarray:
        z = self.X @ w
        return (self.scale / self.X.shape[0]) * (self.X.T @ (sigmoid(z) - self.y))

    def value_and_gradient(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        z = self.X @ w
        val = self.scale * float(np.mean(softplus(z) - self.y * z))
        grad = (self.scale / self.X.shape[0]) * (self.X.T @ (sigmoid(z) - self.y))
        return val, grad


class AffineCombination(SmoothFunction):
    """sum_k coeff_k * f_k(w) + const, used to assemble scalar constraints."""

    def __init__(self, parts: list[SmoothFunction], coeffs: list[float], const: float = 0.0):
        if len(parts) != len(coeffs):
            raise ValueError("parts and coefficients differ in length")
        self.parts = list(parts)
        self.coeffs = [float(c) for c in coeffs]
        self.const = float(const)

    def value(self, w: np.ndarray) -> float:
        return sum(c * p.value(w) for p, c in zip(self.parts, self.coeffs)) + self.const

    def gradient(self, w: np.ndarray) -> np.ndarray:
        g = self.coeffs[0] * self.parts[0].gradient(w)
        for p, c in zip(self.parts[1:], self.coeffs[1:]):
            g = g + c * p.gradient(w)
        return g


class FunctionBlock(ConstraintBlock):
    """Constraint block whose rows are arbitrary smooth scalar functions."""

    def __init__(self, rows: list[SmoothFunction], cone: Cone, dim: int):
        self.rows = list(rows)
        self.cone = cone
        self.size = len(rows)
        self.dim = int(dim)

    def values(self, w: np.ndarray) -> np.ndarray:
        return np.array([r.value(w) for r in self.rows], dtype=float)

    def jacobian_t(self, w: np.ndarray) -> np.ndarray:
        if not self.rows:
            return np.zeros((self.dim, 0))
        return np.column_stack([r.gradient(w) for r in self.rows])


@dataclass
class LabeledDataset:
    """Rows of (features, binary label) with an optional binary subgroup tag."""

    features: np.ndarray
    labels: np.ndarray
    subgroup: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.labels = np.asarray(self.labels, dtype=int).ravel()
        if self.features.shape[0] != self.labels.size:
            raise ValueError("feature rows and labels disagree in count")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite entries")
        if self.labels.size and not np.all(np.isin(self.labels, (0, 1))):
            raise ValueError("labels must be binary 0/1")
        if self.subgroup is not None:
            self.subgroup = np.asarray(self.subgroup, dtype=int).ravel()
            if self.subgroup.size != self.labels.size:
                raise ValueError("subgroup tags and labels disagree in count")
            if self.subgroup.size and not np.all(np.isin(self.subgroup, (0, 1))):
                raise ValueError("subgroup tags must be binary 0/1")

    @property
    def n_samples(self) -> int:
        return self.labels.size

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def by_class(self, label: int) -> np.ndarray:
        return self.features[self.labels == label]

    def by_subgroup(self, tag: int) -> "LabeledDataset":
        if self.subgroup is None:
            raise ValueError("dataset carries no subgroup tags")
        mask = self.subgroup == tag
        return LabeledDataset(self.features[mask], self.labels[mask], self.subgroup[mask])

    def subset(self, idx: np.ndarray) -> "LabeledDataset":
        sub = self.subgroup[idx] if self.subgroup is not None else None
        return LabeledDataset(self.features[idx], self.labels[idx], sub)


def load_csv(
    path: str | Path,
    label_column: str = "label",
    subgroup_column: str | None = None,
) -> LabeledDataset:
    """Read a header-carrying UTF-8 CSV into a LabeledDataset.

    All columns other than the label (and optional subgroup) column are taken
    as features, in header order. Missing values are rejected.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        try:
            label_idx = header.index(label_column)
        except ValueError:
            raise ValueError(f"{path}: no column named {label_column!r}") from None
        sub_idx = None
        if subgroup_column is not None:
            try:
                sub_idx = header.index(subgroup_column)
            except ValueError:
                raise ValueError(f"{path}: no column named {subgroup_column!r}") from None
        feat_idx = [i for i in range(len(header)) if i not in (label_idx, sub_idx)]

        feats, labels, tags = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            if any(cell.strip() == "" for cell in row):
                raise ValueError(f"{path}:{lineno}: missing value")
            feats.append([float(row[i]) for i in feat_idx])
            labels.append(int(float(row[label_idx])))
            if sub_idx is not None:
                tags.append(int(float(row[sub_idx])))
    return LabeledDataset(
        np.asarray(feats, dtype=float),
        np.asarray(labels, dtype=int),
        np.asarray(tags, dtype=int) if sub_idx is not None else None,
    )


def partition_stratified(ds: LabeledDataset, n: int, seed: int) -> list[LabeledDataset]:
    """Split into n folds with per-class counts equal up to one sample.

    Each class is shuffled with its own deterministic stream and dealt to the
    folds; the union of the folds is the original multiset of rows.
    """
    if n < 1:
        raise ValueError("fold count must be at least 1")
    rng = np.random.default_rng(seed)
    fold_indices: list[list[int]] = [[] for _ in range(n)]
    for label in (0, 1):
        idx = np.flatnonzero(ds.labels == label)
        if idx.size < n:
            raise ValueError(f"class {label} has {idx.size} samples, fewer than {n} folds")
        idx = rng.permutation(idx)
        for fold, chunk in enumerate(np.array_split(idx, n)):
            fold_indices[fold].extend(chunk.tolist())
    return [ds.subset(np.asarray(sorted(ix), dtype=int)) for ix in fold_indices]


def build_np_problem(datasets: list[LabeledDataset], threshold: float = 0.2) -> ProblemSpec:
    """Neyman-Pearson classification over per-client datasets.

    Client i minimizes (1/n) * mean class-0 loss and carries the single
    constraint mean class-1 loss - threshold <= 0. The server holds no
    constraint and h = 0.
    """
    if not datasets:
        raise ValueError("at least one client dataset is required")
    n = len(datasets)
    dim = datasets[0].dim
    clients = []
    for i, ds in enumerate(datasets):
        X0, X1 = ds.by_class(0), ds.by_class(1)
        if X0.shape[0] == 0 or X1.shape[0] == 0:
            raise ValueError(f"client {i} is missing one of the two classes")
        objective = LogisticMeanLoss(X0, np.zeros(X0.shape[0]), scale=1.0 / n)
        class1_loss = LogisticMeanLoss(X1, np.ones(X1.shape[0]))
        row = AffineCombination([class1_loss], [1.0], -float(threshold))
        block = FunctionBlock([row], Cone.NONNEGATIVE_ORTHANT, dim)
        clients.append(ClientProblem(objective, block, num_samples=ds.n_samples))
    return ProblemSpec(dim=dim, clients=clients, server_constraint=EmptyBlock(dim))


def _disparity_rows(ds: LabeledDataset, threshold: float, dim: int) -> FunctionBlock:
    sub0, sub1 = ds.by_subgroup(0), ds.by_subgroup(1)
    if sub0.n_samples == 0 or sub1.n_samples == 0:
        raise ValueError("a party is missing one of the two subgroups")
    loss0 = LogisticMeanLoss(sub0.features, sub0.labels)
    loss1 = LogisticMeanLoss(sub1.features, sub1.labels)
    upper = AffineCombination([loss0, loss1], [1.0, -1.0], -float(threshold))
    lower = AffineCombination([loss0, loss1], [-1.0, 1.0], -float(threshold))
    return FunctionBlock([upper, lower], Cone.NONNEGATIVE_ORTHANT, dim)


def build_fairness_problem(
    client_datasets: list[LabeledDataset],
    server_dataset: LabeledDataset,
    threshold: float = 0.1,
) -> ProblemSpec:
    """Fairness-constrained classification with party-level disparity bounds.

    Every party (server included) contributes the two inequality rows
    +/-(subgroup-0 loss - subgroup-1 loss) - threshold <= 0. Clients also
    carry (1/n) of the mean logistic loss. The logistic disparity rows are
    nonconvex, so the resulting spec is flagged heuristic.
    """
    if not client_datasets:
        raise ValueError("at least one client dataset is required")
    n = len(client_datasets)
    dim = client_datasets[0].dim
    clients = []
    for ds in client_datasets:
        objective = LogisticMeanLoss(ds.features, ds.labels, scale=1.0 / n)
        clients.append(
            ClientProblem(objective, _disparity_rows(ds, threshold, dim), num_samples=ds.n_samples)
        )
    server_block = _disparity_rows(server_dataset, threshold, dim)
    return ProblemSpec(dim=dim, clients=clients, server_constraint=server_block, convex=False)


# ---------------------------------------------------------------------------
# Linear-equality-constrained quadratic programming
# ---------------------------------------------------------------------------


@dataclass
class LcqpInstance:
    """Random equality-constrained QP: min sum_i w'A_i w/2 + b_i'w, C_i w + d_i = 0."""

    dim: int
    m_tilde: int
    seed: int
    A: list[np.ndarray]
    b: list[np.ndarray]
    C: list[np.ndarray]  # index 0 is the server block
    d: list[np.ndarray]

    @property
    def n(self) -> int:
        return len(self.A)


def unit_sphere(rng: np.random.Generator, size: int) -> np.ndarray:
    """Uniform draw from the unit Euclidean sphere."""
    v = rng.standard_normal(size)
    return v / np.linalg.norm(v)


def _random_orthogonal(rng: np.random.Generator, size: int) -> np.ndarray:
    # QR of a Gaussian matrix with the R-diagonal sign fixed, which makes the
    # factor Haar-distributed rather than biased by the QR convention.
    M = rng.standard_normal((size, size))
    Q, R = np.linalg.qr(M)
    return Q * np.sign(np.diag(R))


def generate_lcqp(dim: int, n: int, m_tilde: int, seed: int) -> LcqpInstance:
    """Draw a random instance.

    A_i = U_i D_i U_i' with D_i uniform on [0.5, 1] and U_i random orthogonal;
    C_i entries are N(0, 1/dim); b_i and d_i are uniform on unit spheres.
    """
    if min(dim, n, m_tilde) < 1:
        raise ValueError("dim, n, and m_tilde must all be at least 1")
    rng = np.random.default_rng(seed)
    A, b = [], []
    for _ in range(n):
        U = _random_orthogonal(rng, dim)
        D = rng.uniform(0.5, 1.0, dim)
        Ai = (U * D) @ U.T
        A.append(0.5 * (Ai + Ai.T))
        b.append(unit_sphere(rng, dim))
    C, d = [], []
    for _ in range(n + 1):
        C.append(rng.standard_normal((m_tilde, dim)) / np.sqrt(dim))
        d.append(unit_sphere(rng, m_tilde))
    return LcqpInstance(dim=dim, m_tilde=m_tilde, seed=seed, A=A, b=b, C=C, d=d)


def lcqp_problem(inst: LcqpInstance) -> ProblemSpec:
    """Wrap an instance as a ProblemSpec with zero-cone (equality) blocks."""
    clients = [
        ClientProblem(Quadratic(Ai, bi), LinearBlock(Ci, di, Cone.ZERO))
        for Ai, bi, Ci, di in zip(inst.A, inst.b, inst.C[1:], inst.d[1:])
    ]
    server = LinearBlock(inst.C[0], inst.d[0], Cone.ZERO)
    return ProblemSpec(dim=inst.dim, clients=clients, server_constraint=server)


def save_lcqp(inst: LcqpInstance, path: str | Path) -> None:
    """Persist an instance as an .npz archive."""
    np.savez(
        path,
        A=np.stack(inst.A),
        b=np.stack(inst.b),
        C=np.stack(inst.C),
        d=np.stack(inst.d),
        meta=np.array([inst.dim, inst.m_tilde, inst.seed], dtype=np.int64),
    )


def load_lcqp(path: str | Path) -> LcqpInstance:
    with np.load(path) as data:
        dim, m_tilde, seed = (int(v) for v in data["meta"])
        return LcqpInstance(
            dim=dim,
            m_tilde=m_tilde,
            seed=seed,
            A=list(data["A"]),
            b=list(data["b"]),
            C=list(data["C"]),
            d=list(data["d"]),
        )


def lcqp_oracle(inst: LcqpInstance) -> tuple[np.ndarray, MultiplierState]:
    """Closed-form KKT solution by dense factorization.

    Solves [sum A_i, C'; C, 0] [w; mu] = [-sum b_i; -d] with C the stacked
    constraint matrix (server block first) and verifies the linear-system
    residual to 1e-9.
    """
    H = np.sum(inst.A, axis=0)
    g = np.sum(inst.b, axis=0)
    C = np.vstack(inst.C)
    dvec = np.concatenate(inst.d)
    m = C.shape[0]
    if np.linalg.matrix_rank(C) < m:
        raise ValueError("stacked constraint matrix is row-rank deficient")
    K = np.block([[H, C.T], [C, np.zeros((m, m))]])
    rhs = np.concatenate([-g, -dvec])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"KKT system is singular: {exc}") from exc
    resid = float(np.max(np.abs(K @ sol - rhs)))
    if resid > 1e-9:
        raise ValueError(f"KKT solve residual {resid:.3e} exceeds 1e-9")
    w = sol[:inst.dim]
    mu_flat = sol[inst.dim:]
    blocks, start = [], 0
    for Ci in inst.C:
        blocks.append(mu_flat[start:start + Ci.shape[0]])
        start += Ci.shape[0]
    return w, MultiplierState(blocks)


# ---------------------------------------------------------------------------
# Bundled synthetic datasets
# ---------------------------------------------------------------------------

# Surrogates for the real benchmark CSVs (which are not shipped): Gaussian
# class-conditional models sized and calibrated so the constrained solves
# operate in the regime the experiment presets expect. Regenerate any of them
# from the seed; supply a CSV path instead to run on real data.

NP_DATASET_DEFAULTS = dict(n_class0=455, n_class1=240, dim=20, seed=20240501)
FAIRNESS_DATASET_DEFAULTS = dict(n_train=6000, n_server=1500, dim=39, seed=20240502)


def synthetic_np_dataset(
    n_class0: int = NP_DATASET_DEFAULTS["n_class0"],
    n_class1: int = NP_DATASET_DEFAULTS["n_class1"],
    dim: int = NP_DATASET_DEFAULTS["dim"],
    seed: int = NP_DATASET_DEFAULTS["seed"],
    separation: float = 2.605,
    hard_fraction: float = 0.10,
    hard_shift: float = 1.0,
) -> LabeledDataset:
    """Two-class Gaussian surrogate for an imbalanced screening dataset.

    Feature 0 is a constant intercept; feature 1 carries the class signal
    (class 0 at zero, class 1 at ``separation``, unit noise); the remaining
    coordinates are pure noise. A ``hard_fraction`` share of class-1 samples
    is pulled ``hard_shift`` toward class 0, which makes the minority-loss
    constraint bind the way overlapped real data does.
    """
    rng = np.random.default_rng(seed)
    X0 = rng.standard_normal((n_class0, dim))
    X1 = rng.standard_normal((n_class1, dim))
    X1[:, 1] += separation
    n_hard = int(round(hard_fraction * n_class1))
    if n_hard:
        X1[:n_hard, 1] -= hard_shift
    X = np.vstack([X0, X1])
    X[:, 0] = 1.0
    y = np.concatenate([np.zeros(n_class0, dtype=int), np.ones(n_class1, dtype=int)])
    order = rng.permutation(y.size)
    return LabeledDataset(X[order], y[order])


def synthetic_fairness_dataset(
    n_train: int = FAIRNESS_DATASET_DEFAULTS["n_train"],
    n_server: int = FAIRNESS_DATASET_DEFAULTS["n_server"],
    dim: int = FAIRNESS_DATASET_DEFAULTS["dim"],
    seed: int = FAIRNESS_DATASET_DEFAULTS["seed"],
    separation: float = 2.8,
    subgroup_gap: float = 1.0,
    minority_share: float = 0.3,
) -> tuple[LabeledDataset, LabeledDataset]:
    """(train, server) surrogate pair for a subgroup-imbalanced dataset.

    Subgroup 1 (a ``minority_share`` of rows) sees its class separation
    reduced by ``subgroup_gap``, so an unconstrained fit favors subgroup 0
    and the disparity constraint is active at the fair solution.
    """
    rng = np.random.default_rng(seed)

    def draw(count: int) -> LabeledDataset:
        tags = (rng.uniform(size=count) < minority_share).astype(int)
        y = (rng.uniform(size=count) < 0.5).astype(int)
        sep = np.where(tags == 1, separation - subgroup_gap, separation)
        X = rng.standard_normal((count, dim))
        X[:, 0] += (y - 0.5) * sep
        return LabeledDataset(X, y, tags)

    return draw(n_train), draw(n_server)


def resolve_dataset(source: str, subgroup_column: str | None = None, label_column: str = "label"):
    """Map a config dataset source to data.

    ``synthetic:np`` and ``synthetic:fairness`` name the bundled surrogates;
    anything else is treated as a CSV path. The fairness surrogate returns a
    (train, server) pair; the others return a single LabeledDataset.
    """
    if source == "synthetic:np":
        return synthetic_np_dataset()
    if source == "synthetic:fairness":
        return synthetic_fairness_dataset()
    return load_csv(source, label_column=label_column, subgroup_column=subgroup_column)
