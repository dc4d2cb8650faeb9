"""Hard K-Means over vectorized power spectra.

Lloyd's algorithm with k-means++ seeding, run in the raw ``vec(P)`` space
(no per-feature standardization) so stratification lives in the same space
the anchors are matched in. Deterministic for a fixed seed; ties always
break to the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigMismatch, InvalidInput, InvalidK, ShapeMismatch
from .spectral import PowerSpectrum


@dataclass(frozen=True)
class StrataModel:
    """Fitted stratification: centers in vec(P) space plus training assignments."""

    k: int
    centers: np.ndarray  # (k, C*F)
    assignments: np.ndarray  # (n,) ints in [0, k)
    inertia: float
    seed: int
    inertia_history: tuple = field(default=())

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=float)
        assignments = np.asarray(self.assignments, dtype=int)
        if centers.ndim != 2 or centers.shape[0] != self.k:
            raise ShapeMismatch(f"centers must be ({self.k}, dim), got {centers.shape}")
        if not np.all(np.isfinite(centers)):
            raise InvalidInput("cluster centers contain NaN or Inf")
        if assignments.size and (assignments.min() < 0 or assignments.max() >= self.k):
            raise InvalidInput("assignment index outside [0, k)")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "assignments", assignments)


def _vectorize(spectra) -> np.ndarray:
    """Stack spectra as rows of vec(P); rejects mixed shapes or configs."""
    if not spectra:
        raise InvalidInput("need at least one power spectrum")
    shape = spectra[0].data.shape
    fingerprint = spectra[0].fingerprint
    for p in spectra:
        if p.data.shape != shape:
            raise ConfigMismatch(f"mixed spectrum shapes {shape} vs {p.data.shape}")
        if p.fingerprint != fingerprint:
            raise ConfigMismatch("mixed spectral-config fingerprints")
    return np.stack([p.data.ravel() for p in spectra])


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _plus_plus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))
    return centers


def kmeans_fit(
    spectra,
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> StrataModel:
    """Cluster power spectra into ``k`` strata with Lloyd's algorithm.

    k-means++ initialization, iteration until the relative centroid movement
    drops below ``tol`` or ``max_iter`` is reached. An empty cluster is
    repaired by reseeding its center to the point currently farthest from
    its assigned center. Fully deterministic given ``seed``.
    """
    points = _vectorize(list(spectra))
    n = points.shape[0]
    if k < 1 or k > n:
        raise InvalidK(f"k must be in [1, {n}], got {k}")

    rng = np.random.default_rng(seed)
    centers = _plus_plus_init(points, k, rng)
    history = []
    labels = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        d2 = _sq_dists(points, centers)
        labels = np.argmin(d2, axis=1)  # argmin takes the lowest index on ties

        # Reseed each empty center onto the point farthest from its assigned
        # center (restricted to clusters that keep a member, so one repair
        # cannot empty another cluster). Keeps the inertia sequence monotone.
        for _ in range(k):
            counts = np.bincount(labels, minlength=k)
            empties = np.flatnonzero(counts == 0)
            if empties.size == 0:
                break
            own_d2 = d2[np.arange(n), labels]
            movable = counts[labels] > 1
            pool = np.where(movable, own_d2, -1.0) if movable.any() else own_d2
            worst = int(np.argmax(pool))
            empty = int(empties[0])
            centers[empty] = points[worst]
            labels[worst] = empty
            d2[worst, :] = 0.0  # keep one point from repairing two clusters
        counts = np.bincount(labels, minlength=k)

        new_centers = np.zeros_like(centers)
        np.add.at(new_centers, labels, points)
        new_centers /= counts[:, None]

        diff = points - new_centers[labels]
        history.append(float(np.einsum("nd,nd->", diff, diff)))

        movement = float(np.linalg.norm(new_centers - centers))
        scale = max(float(np.linalg.norm(centers)), 1e-30)
        centers = new_centers
        if movement / scale < tol:
            break

    return StrataModel(
        k=k,
        centers=centers,
        assignments=labels,
        inertia=history[-1],
        seed=seed,
        inertia_history=tuple(history),
    )


def assign_stratum(model: StrataModel, p: PowerSpectrum) -> int:
    """Nearest-center stratum index for an out-of-sample spectrum."""
    vec = p.data.ravel()
    if vec.shape[0] != model.centers.shape[1]:
        raise ShapeMismatch(
            f"spectrum dimension {vec.shape[0]} does not match model "
            f"dimension {model.centers.shape[1]}"
        )
    d2 = np.sum((model.centers - vec) ** 2, axis=1)
    return int(np.argmin(d2))
