"""Dataset container, synthetic generation on the unit sphere, CSV round trip.

Synthetic inputs are sampled on the unit sphere with rejection until every
pair satisfies ||x_i - x_j||^2 >= 2 c_min.  For unit-norm rows this is the
same as the pairwise margin ||x_i||^2 - x_i.x_j >= c_min, which is the
condition the distinguishability check certifies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import as_matrix
from .network import NetworkSpec, forward_output, random_params

__all__ = ["Dataset", "synth_gen", "normalize_inputs", "load_csv", "save_csv", "one_hot"]

TARGET_KINDS = ("regression", "class_index", "one_hot")


@dataclass
class Dataset:
    """Inputs X (n x m_x), targets Y (n x m_y), and how Y was produced.

    For kind "class_index" the integer labels are kept alongside the
    one-hot expansion stored in Y.
    """

    x: np.ndarray
    y: np.ndarray
    kind: str = "regression"
    provenance: dict = field(default_factory=dict)
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.x = as_matrix(self.x, "X")
        self.y = as_matrix(self.y, "Y")
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("X and Y must have the same number of rows")
        if self.kind not in TARGET_KINDS:
            raise ValueError(f"unknown target kind {self.kind!r}")
        if self.kind == "one_hot":
            sums = self.y.sum(axis=1)
            if np.any(np.abs(sums - 1.0) > 1e-9):
                raise ValueError("one-hot rows must sum to 1")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]

    @property
    def output_dim(self) -> int:
        return self.y.shape[1]


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.min(initial=0) < 0 or (labels.size and labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def normalize_inputs(x) -> np.ndarray:
    """Scale every row to unit Euclidean norm."""
    x = as_matrix(x, "X")
    norms = np.linalg.norm(x, axis=1)
    zero = np.where(norms == 0.0)[0]
    if zero.size:
        raise ValueError(f"row {zero[0]} has zero norm and cannot be normalized")
    return x / norms[:, None]


def _sphere_points(n: int, m_x: int, c_min: float, rng, max_rejections: int) -> np.ndarray:
    pts = np.empty((n, m_x))
    count = 0
    rejections = 0
    min_sq_dist = 2.0 * c_min
    while count < n:
        v = rng.standard_normal(m_x)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            continue
        v /= norm
        if count and np.min(((pts[:count] - v) ** 2).sum(axis=1)) < min_sq_dist:
            rejections += 1
            if rejections >= max_rejections:
                raise ValueError(
                    f"rejection sampling failed {max_rejections} times at margin "
                    f"{c_min}; reduce c_min or n (the sphere in dimension {m_x} "
                    f"cannot pack {n} points this far apart)"
                )
            continue
        pts[count] = v
        count += 1
    return pts


def synth_gen(n: int, m_x: int, m_y: int, c_min: float, kind: str = "regression",
              seed: int = 0, max_rejections: int = 1_000_000) -> Dataset:
    """Distinguishable synthetic dataset: unit-sphere inputs, margin >= c_min.

    Regression targets come from a fixed random teacher network;
    classification targets are uniform labels.
    """
    if not 0.0 < c_min < 1.0:
        raise ValueError("c_min must lie in (0, 1)")
    if min(n, m_x, m_y) < 1:
        raise ValueError("n, m_x, m_y must all be >= 1")
    if kind not in TARGET_KINDS:
        raise ValueError(f"unknown target kind {kind!r}")
    rng = np.random.default_rng(seed)
    x = _sphere_points(n, m_x, c_min, rng, max_rejections)
    provenance = {"source": "synthetic", "n": n, "m_x": m_x, "m_y": m_y,
                  "c_min": c_min, "kind": kind, "seed": seed}
    if kind == "regression":
        teacher = NetworkSpec((m_x, max(8, 2 * m_x)), m_y, sharpness=1.0)
        t_params = random_params(teacher, np.random.default_rng(seed + 1), scale=1.0)
        y = forward_output(teacher, t_params, x)
        return Dataset(x, y, kind, provenance)
    labels = rng.integers(0, m_y, size=n)
    y = one_hot(labels, m_y)
    if kind == "class_index":
        return Dataset(x, y, kind, provenance, labels=labels)
    return Dataset(x, y, kind, provenance)


def save_csv(dataset: Dataset, path) -> None:
    """Features then targets, comma separated, no header, 17 significant digits."""
    with open(path, "w") as fh:
        for i in range(dataset.n):
            cells = [f"{v:.17g}" for v in dataset.x[i]]
            if dataset.kind == "class_index":
                cells.append(str(int(dataset.labels[i])))
            else:
                cells.extend(f"{v:.17g}" for v in dataset.y[i])
            fh.write(",".join(cells) + "\n")


def load_csv(path, m_x: int, kind: str = "regression", m_y: int | None = None) -> Dataset:
    """Parse a dataset written by save_csv (or by hand, same layout)."""
    if kind not in TARGET_KINDS:
        raise ValueError(f"unknown target kind {kind!r}")
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) <= m_x:
                raise ValueError(
                    f"{path}:{lineno}: expected {m_x} feature columns plus targets, "
                    f"got {len(cells)} cells"
                )
            try:
                values = [float(c) for c in cells]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if not all(np.isfinite(values)):
                raise ValueError(f"{path}:{lineno}: non-finite value")
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: empty dataset file")
    width = len(rows[0])
    for lineno, row in enumerate(rows, start=1):
        if len(row) != width:
            raise ValueError(f"{path}:{lineno}: ragged row ({len(row)} cells, expected {width})")
    arr = np.asarray(rows)
    x = arr[:, :m_x]
    rest = arr[:, m_x:]
    provenance = {"source": "csv", "path": str(path), "kind": kind}
    if kind == "class_index":
        if rest.shape[1] != 1:
            raise ValueError(f"{path}: class_index expects exactly one target column")
        labels = rest[:, 0]
        if np.any(labels != np.round(labels)):
            raise ValueError(f"{path}: class labels must be integers")
        labels = labels.astype(np.int64)
        classes = m_y if m_y is not None else int(labels.max()) + 1
        return Dataset(x, one_hot(labels, classes), kind, provenance, labels=labels)
    if m_y is not None and rest.shape[1] != m_y:
        raise ValueError(f"{path}: expected {m_y} target columns, found {rest.shape[1]}")
    return Dataset(x, rest, kind, provenance)
