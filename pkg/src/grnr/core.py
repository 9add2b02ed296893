"""Neighborhood regression with a global-normality regularizer.

Every feature vector (query) of a map is regressed from the ring of its
spatial neighbors; the regularizer pulls the reconstruction toward the K most
typical feature vectors of the whole map. Normal texture reconstructs well
from both priors, defects do not, so the squared residual is the anomaly
score. The minimizer has a closed form: one symmetric positive-definite
solve per query against the neighbor Gram matrix.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .feature import FeatureMap

# Positions per batched solve chunk. Fixed so results are independent of the
# worker count (each chunk is computed from its own contiguous slice).
_CHUNK = 256


@dataclass(frozen=True)
class Query:
    """One feature vector to reconstruct, with its grid position."""

    vector: np.ndarray
    position: tuple[int, int] = (0, 0)

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if not np.isfinite(vec).all():
            raise ValueError("query vector contains non-finite values")
        object.__setattr__(self, "vector", vec)


@dataclass(frozen=True)
class LocalSupport:
    """Neighbor feature rows for one query; 4m^2+4m rows when sampled at radius m."""

    matrix: np.ndarray
    neighborhood_radius: int | None = None

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=np.float64)
        if mat.ndim != 2:
            raise ValueError(f"support matrix must be 2-D, got shape {mat.shape}")
        m = self.neighborhood_radius
        if m is not None:
            if m < 1:
                raise ValueError(f"neighborhood radius must be >= 1, got {m}")
            expected = 4 * m * m + 4 * m
            if mat.shape[0] != expected:
                raise ValueError(
                    f"radius {m} implies {expected} support rows, got {mat.shape[0]}"
                )
        object.__setattr__(self, "matrix", mat)


@dataclass(frozen=True)
class GlobalSupport:
    """The most typical feature rows of a map and where they came from."""

    matrix: np.ndarray
    source_positions: tuple[tuple[int, int], ...]
    distance_sums: np.ndarray | None = None

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=np.float64)
        if mat.ndim != 2:
            raise ValueError(f"support matrix must be 2-D, got shape {mat.shape}")
        if mat.shape[0] != len(self.source_positions):
            raise ValueError("one source position required per support row")
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "source_positions", tuple(map(tuple, self.source_positions)))


@dataclass(frozen=True)
class Transformation:
    """Row vector of neighbor weights reconstructing one query."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if not np.isfinite(w).all():
            raise ValueError("transformation weights contain non-finite values")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class RegressionConfig:
    """Knobs of the regression: neighborhood radius m, global support count k,
    regularization strength eta, and the relative Gram-diagonal ridge."""

    m: int = 1
    k: int = 40
    eta: float = 5.0
    jitter: float = 1e-4

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.eta < 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.jitter < 0:
            raise ValueError(f"jitter must be >= 0, got {self.jitter}")


@dataclass(frozen=True)
class HierarchyScoreMap:
    """Per-position squared regression residuals for one feature hierarchy."""

    level: int
    scores: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"score map must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("score map contains non-finite values")
        if (arr < 0).any():
            raise ValueError("score map contains negative values")
        object.__setattr__(self, "scores", arr)


def neighbor_offsets(m: int) -> list[tuple[int, int]]:
    """Row-major (dh, dw) offsets of the radius-m neighborhood, center excluded."""
    return [
        (da, db)
        for da in range(-m, m + 1)
        for db in range(-m, m + 1)
        if (da, db) != (0, 0)
    ]


def sample_local_support(fmap: FeatureMap, h: int, w: int, m: int = 1) -> LocalSupport:
    """Gather the neighborhood feature rows around (h, w).

    Coordinates falling outside the map are clamped to the border before
    lookup (replicate padding), keeping the row count at exactly 4m^2+4m.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    _, height, width = fmap.data.shape
    if not (0 <= h < height and 0 <= w < width):
        raise ValueError(f"position ({h}, {w}) outside {height}x{width} map")
    hwc = fmap.data.transpose(1, 2, 0)
    rows = [
        hwc[min(max(h + da, 0), height - 1), min(max(w + db, 0), width - 1)]
        for da, db in neighbor_offsets(m)
    ]
    return LocalSupport(
        matrix=np.asarray(rows, dtype=np.float64), neighborhood_radius=m
    )


def sample_global_support(fmap: FeatureMap, k: int) -> GlobalSupport:
    """Pick the k feature vectors with the smallest total squared distance to
    all positions of the map, that is, the most typical patterns of the texture.

    Computed via the expansion sum_j ||x - f_j||^2 = HW*||x||^2 + sum_j ||f_j||^2
    - 2 x . sum_j f_j, which matches the brute-force double loop. Ties are
    broken by row-major position; k is clamped to the number of positions.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    c, height, width = fmap.data.shape
    n = height * width
    k = min(k, n)
    flat = fmap.data.reshape(c, n).T.astype(np.float64)
    sq = np.einsum("ij,ij->i", flat, flat)
    total = n * sq + sq.sum() - 2.0 * flat @ flat.sum(axis=0)
    order = np.argsort(total, kind="stable")[:k]
    positions = tuple((int(i) // width, int(i) % width) for i in order)
    return GlobalSupport(
        matrix=flat[order].copy(),
        source_positions=positions,
        distance_sums=total[order].copy(),
    )


def solve_transformation(
    query: Query,
    local: LocalSupport,
    global_: GlobalSupport,
    eta: float,
    jitter: float = 0.0,
) -> Transformation:
    """Closed-form optimal neighbor weights for one query.

    Solves ((1 + k*eta) * S_L S_L^T + eps*I) w^T = (Q + eta * sum_n S_G^n) S_L^T
    with eps = jitter * mean(diag(S_L S_L^T)) * (1 + k*eta); jitter = 0 gives
    the exact unregularized-Gram closed form. The system is factored as a
    symmetric positive-definite matrix, not inverted explicitly.
    """
    if eta < 0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    sup = local.matrix
    q = query.vector
    if q.shape[0] != sup.shape[1]:
        raise ValueError(
            f"query dim {q.shape[0]} != support dim {sup.shape[1]}"
        )
    if global_.matrix.shape[1] != sup.shape[1]:
        raise ValueError(
            f"global support dim {global_.matrix.shape[1]} != support dim {sup.shape[1]}"
        )
    k = global_.matrix.shape[0]
    gram = sup @ sup.T
    scale = 1.0 + k * eta
    rhs = (q + eta * global_.matrix.sum(axis=0)) @ sup.T
    eps = jitter * float(np.mean(np.diag(gram))) * scale
    system = scale * gram + eps * np.eye(sup.shape[0])
    try:
        weights = _spd_solve(system[None], rhs[None])[0]
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "singular local-support Gram; pass jitter > 0 to regularize"
        ) from exc
    return Transformation(weights=weights)


def regression_objective(
    transform: Transformation,
    query: Query,
    local: LocalSupport,
    global_: GlobalSupport,
    eta: float,
) -> float:
    """Value being minimized by solve_transformation: the squared
    reconstruction residual plus eta times the summed squared distances of the
    reconstruction to every global support row. Test oracle, not on the hot path.
    """
    recon = transform.weights @ local.matrix
    data_term = float(np.sum((query.vector - recon) ** 2))
    reg_term = float(np.sum((recon[None, :] - global_.matrix) ** 2))
    return data_term + eta * reg_term


def score_map_for_hierarchy(
    fmap: FeatureMap,
    global_: GlobalSupport,
    config: RegressionConfig,
    workers: int = 1,
) -> HierarchyScoreMap:
    """Squared regression residual at every map position.

    Positions are solved in fixed-size batches; batch boundaries do not depend
    on the worker count, so results are bit-identical for any schedule.
    """
    _, height, width = fmap.data.shape
    supports = _gather_local_supports(fmap.data, config.m)
    queries = fmap.data.reshape(fmap.data.shape[0], -1).T.astype(np.float64)
    target = queries + config.eta * global_.matrix.sum(axis=0)
    scale = 1.0 + global_.matrix.shape[0] * config.eta

    n = queries.shape[0]
    scores = np.empty(n, dtype=np.float64)
    chunks = [(a, min(a + _CHUNK, n)) for a in range(0, n, _CHUNK)]

    def run(bounds: tuple[int, int]) -> None:
        a, b = bounds
        try:
            scores[a:b] = _score_chunk(
                supports[a:b], queries[a:b], target[a:b], scale, config.jitter
            )
        except np.linalg.LinAlgError:
            h, w = _locate_singular(supports[a:b], scale, config.jitter, a, width)
            raise NumericalError(
                f"singular local-support Gram at position ({h}, {w}); "
                "pass jitter > 0 to regularize"
            ) from None

    if workers <= 1 or len(chunks) == 1:
        for bounds in chunks:
            run(bounds)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for future in [pool.submit(run, bounds) for bounds in chunks]:
                future.result()
    return HierarchyScoreMap(level=fmap.level, scores=scores.reshape(height, width))


def _gather_local_supports(chw: np.ndarray, m: int) -> np.ndarray:
    """Neighbor rows for all positions at once: [H*W][4m^2+4m][C], float64."""
    hwc = chw.transpose(1, 2, 0).astype(np.float64)
    height, width, channels = hwc.shape
    padded = np.pad(hwc, ((m, m), (m, m), (0, 0)), mode="edge")
    shifted = [
        padded[m + da : m + da + height, m + db : m + db + width]
        for da, db in neighbor_offsets(m)
    ]
    stacked = np.stack(shifted, axis=2)
    return np.ascontiguousarray(stacked.reshape(height * width, len(shifted), channels))


def _score_chunk(
    supports: np.ndarray,
    queries: np.ndarray,
    target: np.ndarray,
    scale: float,
    jitter: float,
) -> np.ndarray:
    n_l = supports.shape[1]
    gram = supports @ supports.swapaxes(1, 2)
    rhs = np.einsum("pc,pnc->pn", target, supports)
    diag_mean = np.einsum("pnn->p", gram) / n_l
    system = scale * gram + (jitter * diag_mean * scale)[:, None, None] * np.eye(n_l)
    weights = _spd_solve(system, rhs)
    recon = np.einsum("pn,pnc->pc", weights, supports)
    diff = queries - recon
    return np.einsum("pc,pc->p", diff, diff)


def _spd_solve(mats: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a batch of SPD systems mats[p] x[p] = rhs[p] by Cholesky
    factorization plus vectorized forward/back substitution."""
    chol = np.linalg.cholesky(mats)
    n = mats.shape[-1]
    fwd = np.empty_like(rhs)
    for i in range(n):
        acc = rhs[:, i] - np.einsum("pj,pj->p", chol[:, i, :i], fwd[:, :i])
        fwd[:, i] = acc / chol[:, i, i]
    out = np.empty_like(rhs)
    for i in range(n - 1, -1, -1):
        acc = fwd[:, i] - np.einsum("pj,pj->p", chol[:, i + 1 :, i], out[:, i + 1 :])
        out[:, i] = acc / chol[:, i, i]
    return out


def _locate_singular(
    supports: np.ndarray, scale: float, jitter: float, offset: int, width: int
) -> tuple[int, int]:
    n_l = supports.shape[1]
    eye = np.eye(n_l)
    for idx in range(supports.shape[0]):
        gram = supports[idx] @ supports[idx].T
        system = scale * gram + jitter * float(np.mean(np.diag(gram))) * scale * eye
        try:
            np.linalg.cholesky(system)
        except np.linalg.LinAlgError:
            flat = offset + idx
            return flat // width, flat % width
    return divmod(offset, width)
