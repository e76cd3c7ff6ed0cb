"""Semantic maps, recommendation menus, cover constructions, and
menu-consistency certification.

A message id is the map-specific discrete tag itself: an arm index, a
permutation tuple, a center index, a cell index, a sign, or a model index.
All tie-breaking is by lowest index (arms, centers, cells), so map
application is fully deterministic across runs and platforms.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .domain import AgentType, expected_reward, frozen_array
from .errors import (
    CoverSizeError,
    NoFeasibleArmError,
    OutOfDomainError,
    UnsupportedOperationError,
)

MessageId = int | tuple

CENTER_CAP = 10**6      # cover construction aborts beyond this many centers
MESSAGE_SPACE_CAP = 10**6
MODEL_MATCH_TOL = 1e-12


@dataclass(frozen=True)
class ArgmaxDirect:
    """Direct recommendation: the message is the best arm for the sampled
    model under the representative type of the observed public label."""

    representatives: tuple

    def __post_init__(self):
        if not self.representatives:
            raise ValueError("ArgmaxDirect needs at least one representative type")
        object.__setattr__(self, "representatives", tuple(self.representatives))


@dataclass(frozen=True)
class Ranking:
    """The message ranks the model's coordinates in descending order
    (d = K embedding). `fiber_models`, when given, is the finite model set
    used to build menu representatives for general private types."""

    num_arms: int
    fiber_models: "np.ndarray | None" = None

    def __post_init__(self):
        if self.num_arms < 2:
            raise ValueError("Ranking needs at least two arms")
        if self.fiber_models is not None:
            object.__setattr__(self, "fiber_models", frozen_array(self.fiber_models))


@dataclass(frozen=True)
class VoronoiCover:
    """The message is the index of the nearest center in l2."""

    centers: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "centers", frozen_array(self.centers))
        if self.centers.ndim != 2:
            raise ValueError("centers must form an (n, d) matrix")
        uniq = {tuple(c) for c in self.centers}
        if len(uniq) != len(self.centers):
            raise ValueError("Voronoi centers must be distinct")


@dataclass(frozen=True)
class HypercubeCover:
    """Disjoint l_inf cells of radius `cell_radius` tiling the box
    [origin, origin + 2 * cell_radius * grid_extents]. The message is the
    flat (row-major) cell index."""

    origin: np.ndarray
    cell_radius: float
    grid_extents: tuple

    def __post_init__(self):
        object.__setattr__(self, "origin", frozen_array(self.origin))
        object.__setattr__(self, "grid_extents", tuple(int(n) for n in self.grid_extents))
        if self.cell_radius <= 0:
            raise ValueError("cell_radius must be positive")
        if len(self.grid_extents) != self.origin.shape[0]:
            raise ValueError("grid_extents must give one count per dimension")
        if any(n < 1 for n in self.grid_extents):
            raise ValueError("grid_extents must be >= 1")

    @property
    def dim(self) -> int:
        return self.origin.shape[0]

    @property
    def num_cells(self) -> int:
        return int(np.prod(self.grid_extents))

    def box(self):
        width = 2.0 * self.cell_radius * np.asarray(self.grid_extents, dtype=float)
        return self.origin, self.origin + width

    def cell_index(self, u) -> int:
        """Flat index of the cell containing u; boundary points go to the
        cell with the smaller index in each dimension."""
        u = np.asarray(u, dtype=float)
        multi = []
        for j in range(self.dim):
            pos = (u[j] - self.origin[j]) / (2.0 * self.cell_radius)
            idx = int(np.floor(pos))
            if pos == idx and idx > 0:
                idx -= 1
            if not 0 <= idx < self.grid_extents[j]:
                raise OutOfDomainError(
                    f"coordinate {j} = {u[j]:.6g} falls outside the tiled box"
                )
            multi.append(idx)
        flat = 0
        for j, idx in enumerate(multi):
            flat = flat * self.grid_extents[j] + idx
        return flat

    def cell_center(self, flat: int) -> np.ndarray:
        if not 0 <= flat < self.num_cells:
            raise OutOfDomainError(f"cell index {flat} out of range [0, {self.num_cells})")
        multi = np.empty(self.dim, dtype=int)
        rem = int(flat)
        for j in range(self.dim - 1, -1, -1):
            multi[j] = rem % self.grid_extents[j]
            rem //= self.grid_extents[j]
        return self.origin + 2.0 * self.cell_radius * (multi + 0.5)


@dataclass(frozen=True)
class SignMap:
    """d = 1 only: the message is the sign of the scalar model."""


@dataclass(frozen=True)
class FullReveal:
    """The sampled model is revealed; the message is its index in a finite
    model set."""

    models: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "models", frozen_array(self.models))
        if self.models.ndim != 2:
            raise ValueError("models must form an (n, d) matrix")


SemanticMap = ArgmaxDirect | Ranking | VoronoiCover | HypercubeCover | SignMap | FullReveal


def _as_scalar_model(u) -> float:
    u = np.asarray(u, dtype=float)
    if u.ndim == 0:
        return float(u)
    if u.shape == (1,):
        return float(u[0])
    raise ValueError("SignMap requires a one-dimensional model")


def apply_map(smap, x_pub: int, u):
    """Message for public label `x_pub` and model `u`."""
    u = np.asarray(u, dtype=float)
    if isinstance(smap, ArgmaxDirect):
        rows = smap.representatives[x_pub].rows
        return int(np.argmax(rows @ u))
    if isinstance(smap, Ranking):
        if u.shape != (smap.num_arms,):
            raise ValueError("Ranking expects the d = K embedding")
        # argsort of -u is stable, so equal coordinates keep the lower index first
        return tuple(int(i) for i in np.argsort(-u, kind="stable"))
    if isinstance(smap, VoronoiCover):
        dist = np.linalg.norm(smap.centers - u, axis=1)
        return int(np.argmin(dist))
    if isinstance(smap, HypercubeCover):
        return smap.cell_index(u)
    if isinstance(smap, SignMap):
        v = _as_scalar_model(u)
        if v == 0.0:
            raise OutOfDomainError("sign map is undefined at 0")
        return 1 if v > 0 else -1
    if isinstance(smap, FullReveal):
        hit = np.flatnonzero(np.all(np.abs(smap.models - u) <= MODEL_MATCH_TOL, axis=1))
        if hit.size == 0:
            raise OutOfDomainError("model is not a member of the revealed finite set")
        return int(hit[0])
    raise TypeError(f"unknown semantic map {type(smap).__name__}")


def apply_map_batch(smap, x_pub: int, samples: np.ndarray) -> list:
    """Vectorized `apply_map` over an (n, d) sample matrix."""
    samples = np.asarray(samples, dtype=float)
    if isinstance(smap, ArgmaxDirect):
        rows = smap.representatives[x_pub].rows
        return [int(m) for m in np.argmax(samples @ rows.T, axis=1)]
    if isinstance(smap, Ranking):
        order = np.argsort(-samples, axis=1, kind="stable")
        return [tuple(int(i) for i in row) for row in order]
    if isinstance(smap, VoronoiCover):
        d2 = ((samples[:, None, :] - smap.centers[None, :, :]) ** 2).sum(axis=2)
        return [int(m) for m in np.argmin(d2, axis=1)]
    return [apply_map(smap, x_pub, u) for u in samples]


def is_sleeping_type(x: AgentType) -> bool:
    """Diagonal 0/1 rows in the d = K embedding (asleep arms are zero rows)."""
    if x.num_arms != x.dim:
        return False
    for i in range(x.num_arms):
        row = x.rows[i]
        on_diag = row[i]
        if on_diag not in (0.0, 1.0):
            return False
        off = np.delete(row, i)
        if off.size and np.any(off != 0.0):
            return False
        if on_diag == 0.0 and np.any(row != 0.0):
            return False
    return True


def menu(smap, x: AgentType, m) -> int:
    """Arm recommended to type `x` by message `m`. Ties break to the lowest
    arm index."""
    if isinstance(smap, ArgmaxDirect):
        arm = int(m)
        if not 0 <= arm < x.num_arms:
            raise ValueError(f"arm message {arm} out of range")
        return arm
    if isinstance(smap, Ranking):
        ranking = tuple(int(i) for i in m)
        if sorted(ranking) != list(range(smap.num_arms)):
            raise ValueError(f"{m} is not a permutation of {smap.num_arms} arms")
        if is_sleeping_type(x):
            for arm in ranking:
                if x.rows[arm, arm] == 1.0:
                    return arm
            raise NoFeasibleArmError("all arms are asleep for this type")
        if smap.fiber_models is None:
            raise UnsupportedOperationError(
                "Ranking menus for non-sleeping types need a finite model set"
            )
        fiber = [
            u for u in smap.fiber_models
            if apply_map(smap, x.public_id, u) == ranking
        ]
        if not fiber:
            raise OutOfDomainError(f"no model in the finite set maps to ranking {m}")
        rep = np.mean(np.asarray(fiber), axis=0)
        return int(np.argmax(x.rows @ rep))
    if isinstance(smap, VoronoiCover):
        return int(np.argmax(x.rows @ smap.centers[int(m)]))
    if isinstance(smap, HypercubeCover):
        return int(np.argmax(x.rows @ smap.cell_center(int(m))))
    if isinstance(smap, SignMap):
        if m not in (-1, 1):
            raise ValueError(f"sign message must be -1 or +1, got {m}")
        return int(np.argmax(m * x.rows[:, 0]))
    if isinstance(smap, FullReveal):
        return int(np.argmax(x.rows @ smap.models[int(m)]))
    raise TypeError(f"unknown semantic map {type(smap).__name__}")


def message_space(smap) -> tuple:
    """Canonical enumeration of the map's messages."""
    if isinstance(smap, ArgmaxDirect):
        return tuple(range(smap.representatives[0].num_arms))
    if isinstance(smap, Ranking):
        if math.factorial(smap.num_arms) > MESSAGE_SPACE_CAP:
            raise UnsupportedOperationError(
                f"{smap.num_arms}! rankings exceed the enumeration cap"
            )
        return tuple(itertools.permutations(range(smap.num_arms)))
    if isinstance(smap, VoronoiCover):
        return tuple(range(len(smap.centers)))
    if isinstance(smap, HypercubeCover):
        if smap.num_cells > MESSAGE_SPACE_CAP:
            raise UnsupportedOperationError("hypercube cell count exceeds the enumeration cap")
        return tuple(range(smap.num_cells))
    if isinstance(smap, SignMap):
        return (-1, 1)
    if isinstance(smap, FullReveal):
        return tuple(range(len(smap.models)))
    raise TypeError(f"unknown semantic map {type(smap).__name__}")


def build_voronoi_cover(domain, radius: float) -> np.ndarray:
    """Axis-aligned grid of centers covering `domain` at l2 radius `radius`.

    `domain` is ("box", lo, hi) or ("ball", ball_radius, dim). Per-dimension
    spacing is at most 2 * radius / sqrt(d), so every point of the domain is
    within `radius` of some center. For balls, centers whose grid cell does
    not intersect the ball are pruned; boundary cells are retained.
    """
    if radius <= 0:
        raise ValueError("cover radius must be positive")
    kind = domain[0]
    if kind == "box":
        lo = np.asarray(domain[1], dtype=float)
        hi = np.asarray(domain[2], dtype=float)
    elif kind == "ball":
        ball_radius = float(domain[1])
        dim = int(domain[2])
        lo = np.full(dim, -ball_radius)
        hi = np.full(dim, ball_radius)
    else:
        raise ValueError(f"unknown domain kind {kind!r}")
    if np.any(hi <= lo):
        raise ValueError("domain box must have positive widths")
    d = lo.shape[0]
    max_spacing = 2.0 * radius / np.sqrt(d)
    widths = hi - lo
    counts = np.maximum(np.ceil(widths / max_spacing).astype(int), 1)
    total = int(np.prod(counts.astype(object)))
    if total > CENTER_CAP:
        raise CoverSizeError(
            f"cover would need {total} centers (cap {CENTER_CAP}); increase the radius"
        )
    axes = [lo[j] + (np.arange(counts[j]) + 0.5) * (widths[j] / counts[j]) for j in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=1)
    if kind == "ball":
        half = 0.5 * widths / counts
        nearest = np.maximum(np.abs(centers) - half, 0.0)
        keep = np.linalg.norm(nearest, axis=1) <= ball_radius
        centers = centers[keep]
    return centers


def _fiber_diameter(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    if points.shape[1] == 1:
        return float(points.max() - points.min())
    best = 0.0
    chunk = 256
    for start in range(0, len(points), chunk):
        block = points[start : start + chunk]
        d2 = ((block[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def granularity(smap, model_samples, x_pub: int = 0) -> float:
    """Empirical granularity: the largest l2 diameter of sampled models that
    share a message."""
    samples = np.atleast_2d(np.asarray(model_samples, dtype=float))
    if len(samples) < 2:
        raise ValueError("granularity needs at least two samples")
    fibers = {}
    for u, m in zip(samples, apply_map_batch(smap, x_pub, samples)):
        fibers.setdefault(m, []).append(u)
    return max(_fiber_diameter(np.asarray(pts)) for pts in fibers.values())


@dataclass(frozen=True)
class ConsistencyReport:
    """Certified (exhaustive) or estimated (sampled) menu-consistency margin
    with the worst witness tuple (type index, model index, message, i, j)."""

    alpha: float
    mode: str
    witness: tuple


def check_menu_consistency(smap, types, models, menu_fn=None, mode="exhaustive") -> ConsistencyReport:
    """Worst-case margin of the menu's arm over every alternative.

    alpha = min over (x, u, j != i) of rewE(u, x, i) - rewE(u, x, j) with
    i = menu(x, Q(pub(x), u)). Exhaustive mode is exact over the given
    enumerations; sampled mode reports an upper estimate over the samples.
    """
    if mode not in ("exhaustive", "sampled"):
        raise ValueError("mode must be 'exhaustive' or 'sampled'")
    if menu_fn is None:
        menu_fn = menu
    types = list(types)
    models = [np.asarray(u, dtype=float) for u in models]
    if not types or not models:
        raise ValueError("menu-consistency needs nonempty type and model collections")
    alpha = np.inf
    witness = None
    for ti, x in enumerate(types):
        for ui, u in enumerate(models):
            m = apply_map(smap, x.public_id, u)
            i = menu_fn(smap, x, m)
            base = expected_reward(u, x, i)
            for j in range(x.num_arms):
                if j == i:
                    continue
                margin = base - expected_reward(u, x, j)
                if margin < alpha:
                    alpha = margin
                    witness = (ti, ui, m, i, j)
    label = "exhaustive" if mode == "exhaustive" else f"sampled({len(types)}x{len(models)})"
    return ConsistencyReport(alpha=float(alpha), mode=label, witness=witness)


def cover_to_json(smap) -> dict:
    """JSON-serializable description of a cover or partition, for inspection."""
    if isinstance(smap, VoronoiCover):
        return {"kind": "voronoi", "centers": smap.centers.tolist()}
    if isinstance(smap, HypercubeCover):
        return {
            "kind": "hypercube",
            "origin": smap.origin.tolist(),
            "cell_radius": smap.cell_radius,
            "grid_extents": list(smap.grid_extents),
        }
    raise UnsupportedOperationError(f"{type(smap).__name__} has no cover serialization")
