"""Abstract set domains and their layer transformers.

Two concrete domains back the whole engine: axis-aligned boxes
(:class:`Hyperrectangle`) and affine symbol sets (:class:`Zonotope`).
Both are closed under the affine maps and ReLU relaxations used by the
bound-propagation solvers, and both expose exact support functions,
which is all the inclusion test against halfspace specifications needs.

All arithmetic is plain 64-bit floating point; no outward rounding is
performed, so containment claims are exact up to floating-point error.
Every type is immutable after construction and safe to share across
worker threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Hyperrectangle",
    "Zonotope",
    "HalfSpace",
    "OutputSpec",
    "InclusionStatus",
    "SymbolAllocator",
    "affine_map_box",
    "affine_map_zono",
    "relu_box",
    "relu_zono",
    "support_function",
    "interval_hull",
    "interpolation_set",
    "occlusion_set",
    "linf_ball",
    "reduce_generators",
    "check_inclusion",
]


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    return arr


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Hyperrectangle:
    """Axis-aligned box given by a center and a nonnegative per-axis radius."""

    center: np.ndarray
    radius: np.ndarray

    def __post_init__(self):
        center = _freeze(_as_vector(self.center, "center"))
        radius = _freeze(_as_vector(self.radius, "radius"))
        if center.shape != radius.shape:
            raise ValueError(
                f"center has dimension {center.size}, radius {radius.size}"
            )
        if radius.size and np.min(radius) < 0.0:
            raise ValueError("radius components must be nonnegative")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", radius)

    @classmethod
    def from_bounds(cls, low, high) -> "Hyperrectangle":
        low = _as_vector(low, "low")
        high = _as_vector(high, "high")
        if low.shape != high.shape:
            raise ValueError("low and high must have equal length")
        if low.size and np.max(low - high) > 0.0:
            raise ValueError("low must not exceed high")
        return cls((low + high) / 2.0, (high - low) / 2.0)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.radius

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.radius

    def contains(self, x, tol: float = 0.0) -> bool:
        x = _as_vector(x, "x")
        if x.size != self.dim:
            raise ValueError("point dimension mismatch")
        return bool(np.all(np.abs(x - self.center) <= self.radius + tol))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Uniform samples, returned as a (count, dim) matrix."""
        eps = rng.uniform(-1.0, 1.0, size=(count, self.dim))
        return self.center + eps * self.radius


@dataclass(frozen=True, eq=False)
class Zonotope:
    """Affine symbol set { c + sum_i eps_i * g_i : eps_i in [-1, 1] }.

    Generators are stored row-wise together with their symbol ids.  Two
    zonotopes sharing a symbol id move together along that generator,
    which is what lets parallel graph paths cancel exactly.
    """

    center: np.ndarray
    generators: np.ndarray
    symbol_ids: np.ndarray

    def __post_init__(self):
        center = _freeze(_as_vector(self.center, "center"))
        generators = np.asarray(self.generators, dtype=np.float64)
        if generators.size == 0:
            generators = generators.reshape(0, center.size)
        if generators.ndim != 2 or generators.shape[1] != center.size:
            raise ValueError(
                f"generators must be (k, {center.size}), got {generators.shape}"
            )
        ids = np.asarray(self.symbol_ids, dtype=np.int64).reshape(-1)
        if ids.size != generators.shape[0]:
            raise ValueError("one symbol id per generator required")
        if ids.size > 1 and np.min(np.diff(ids)) <= 0:
            raise ValueError("symbol ids must be strictly increasing")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "generators", _freeze(generators))
        object.__setattr__(self, "symbol_ids", _freeze(ids))

    @classmethod
    def from_box(cls, box: Hyperrectangle) -> "Zonotope":
        """One axis-aligned generator per input axis, symbol ids 0..n-1."""
        return cls(box.center, np.diag(box.radius), np.arange(box.dim))

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def order(self) -> int:
        return self.generators.shape[0]

    def concretize(self, eps) -> np.ndarray:
        """Point(s) for symbol values eps; eps is (k,) or (N, k) in [-1, 1]."""
        eps = np.asarray(eps, dtype=np.float64)
        return self.center + eps @ self.generators


@dataclass(frozen=True, eq=False)
class HalfSpace:
    """Linear constraint { y : normal . y <= offset }."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = _freeze(_as_vector(self.normal, "normal"))
        if not np.any(normal):
            raise ValueError("halfspace normal must be nonzero")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))


class InclusionStatus(enum.Enum):
    HOLDS = "holds"
    VIOLATED_CANDIDATE = "violated_candidate"
    UNKNOWN = "unknown"


@dataclass(frozen=True, eq=False)
class OutputSpec:
    """Output specification over the network's final layer.

    ``safe`` mode: the reachable set must satisfy every halfspace of the
    single conjunction (stay inside a safe polytope).  ``unsafe`` mode:
    the reachable set must avoid every disjunct, where each disjunct is
    a conjunction of halfspaces describing one unsafe polytope.
    """

    mode: str
    disjuncts: tuple

    def __post_init__(self):
        if self.mode not in ("safe", "unsafe"):
            raise ValueError(f"unknown spec mode {self.mode!r}")
        disjuncts = tuple(tuple(d) for d in self.disjuncts)
        if not disjuncts:
            raise ValueError("spec needs at least one disjunct")
        if any(not d for d in disjuncts):
            raise ValueError("empty conjunction in spec")
        if self.mode == "safe" and len(disjuncts) != 1:
            raise ValueError("safe mode takes exactly one conjunction")
        dims = {hs.normal.size for d in disjuncts for hs in d}
        if len(dims) != 1:
            raise ValueError("all halfspaces must share one dimension")
        object.__setattr__(self, "disjuncts", disjuncts)

    @classmethod
    def safe(cls, halfspaces) -> "OutputSpec":
        return cls("safe", (tuple(halfspaces),))

    @classmethod
    def unsafe(cls, disjuncts) -> "OutputSpec":
        return cls("unsafe", tuple(tuple(d) for d in disjuncts))

    @property
    def dim(self) -> int:
        return self.disjuncts[0][0].normal.size


class SymbolAllocator:
    """Hands out fresh, strictly increasing zonotope symbol ids.

    Confined to a single branch worker; never shared across branches.
    """

    def __init__(self, start: int = 0):
        self._next = int(start)

    @classmethod
    def after(cls, z: Zonotope) -> "SymbolAllocator":
        start = int(z.symbol_ids[-1]) + 1 if z.order else 0
        return cls(start)

    def take(self, count: int) -> np.ndarray:
        ids = np.arange(self._next, self._next + count, dtype=np.int64)
        self._next += count
        return ids


def affine_map_box(W, b, box: Hyperrectangle) -> Hyperrectangle:
    """Tightest box containing { W x + b : x in box }."""
    W = np.asarray(W, dtype=np.float64)
    b = _as_vector(b, "b")
    if W.ndim != 2 or W.shape[1] != box.dim:
        raise ValueError(f"W must be (m, {box.dim}), got {W.shape}")
    if b.size != W.shape[0]:
        raise ValueError("bias dimension mismatch")
    return Hyperrectangle(W @ box.center + b, np.abs(W) @ box.radius)


def affine_map_zono(W, b, z: Zonotope) -> Zonotope:
    """Exact image { W x + b : x in z }; symbol ids are preserved."""
    W = np.asarray(W, dtype=np.float64)
    b = _as_vector(b, "b")
    if W.ndim != 2 or W.shape[1] != z.dim:
        raise ValueError(f"W must be (m, {z.dim}), got {W.shape}")
    if b.size != W.shape[0]:
        raise ValueError("bias dimension mismatch")
    return Zonotope(W @ z.center + b, z.generators @ W.T, z.symbol_ids)


def relu_box(box: Hyperrectangle) -> Hyperrectangle:
    """Per-axis interval image [max(0, l), max(0, u)]."""
    low = np.maximum(box.lower, 0.0)
    high = np.maximum(box.upper, 0.0)
    return Hyperrectangle.from_bounds(low, high)


def relu_zono(z: Zonotope, symbols: SymbolAllocator) -> Zonotope:
    """Sound zonotope ReLU transformer.

    Stable coordinates (pre-activation entirely nonnegative or entirely
    nonpositive) pass through or are zeroed exactly.  Each unstable
    coordinate is relaxed to the minimal-area parallelogram: scale by
    lam = u/(u-l), shift the center by mu = -lam*l/2, and attach one
    fresh symbol of magnitude mu.  Zero-width coordinates count as
    stable by the sign of u, so no division by zero can occur.
    """
    hull = interval_hull(z)
    low, high = hull.lower, hull.upper
    pass_through = low >= 0.0
    zeroed = ~pass_through & (high <= 0.0)
    unstable = ~pass_through & ~zeroed

    lam = np.ones(z.dim)
    mu = np.zeros(z.dim)
    lam[zeroed] = 0.0
    ul, ll = high[unstable], low[unstable]
    lam[unstable] = ul / (ul - ll)
    mu[unstable] = -lam[unstable] * ll / 2.0

    center = lam * z.center + mu
    generators = z.generators * lam
    ids = z.symbol_ids
    n_new = int(np.count_nonzero(unstable))
    if n_new:
        fresh = np.zeros((n_new, z.dim))
        fresh[np.arange(n_new), np.flatnonzero(unstable)] = mu[unstable]
        generators = np.vstack([generators, fresh])
        ids = np.concatenate([ids, symbols.take(n_new)])
    return Zonotope(center, generators, ids)


def support_function(s, direction) -> float:
    """sup { a . y : y in s } for a box or zonotope, computed exactly."""
    a = _as_vector(direction, "direction")
    if isinstance(s, Hyperrectangle):
        if a.size != s.dim:
            raise ValueError("direction dimension mismatch")
        return float(a @ s.center + np.abs(a) @ s.radius)
    if isinstance(s, Zonotope):
        if a.size != s.dim:
            raise ValueError("direction dimension mismatch")
        return float(a @ s.center + np.sum(np.abs(s.generators @ a)))
    raise TypeError(f"unsupported set type {type(s).__name__}")


def interval_hull(z: Zonotope) -> Hyperrectangle:
    """Tightest axis-aligned box containing z."""
    return Hyperrectangle(z.center, np.sum(np.abs(z.generators), axis=0))


def interpolation_set(images) -> Zonotope:
    """Zonotope covering all interpolations of the given seed vectors.

    With base x0 and further seeds x1..xk the result has center
    x0 + sum_i g_i and generators g_i = (x_i - x0)/2.  For a single
    extra seed this is exactly the segment between the two; for more
    seeds it is a sound over-approximation of their convex hull (the
    simplex constraint on the interpolation weights is dropped).
    """
    vecs = [_as_vector(im, f"images[{i}]") for i, im in enumerate(images)]
    if len(vecs) < 2:
        raise ValueError("need at least two seed vectors")
    base = vecs[0]
    if any(v.size != base.size for v in vecs[1:]):
        raise ValueError("seed vectors must share one dimension")
    generators = np.stack([(v - base) / 2.0 for v in vecs[1:]])
    center = base + np.sum(generators, axis=0)
    return Zonotope(center, generators, np.arange(len(vecs) - 1))


def occlusion_set(
    image,
    image_shape,
    top: int,
    left: int,
    block_size: int = 6,
    fill: float = 0.0,
) -> Zonotope:
    """Interpolations between an image and a square-occluded copy of it.

    ``image`` is flat in channel-major (C, H, W) order; the block of
    ``block_size`` x ``block_size`` pixels at (top, left) is set to
    ``fill`` in every channel of the occluded seed.
    """
    c, h, w = (int(v) for v in image_shape)
    image = _as_vector(image, "image")
    if image.size != c * h * w:
        raise ValueError("image length does not match shape")
    if not (0 <= top and top + block_size <= h and 0 <= left and left + block_size <= w):
        raise ValueError("occlusion block outside the image")
    occluded = image.reshape(c, h, w).copy()
    occluded[:, top : top + block_size, left : left + block_size] = fill
    return interpolation_set([image, occluded.reshape(-1)])


def linf_ball(x0, eps: float, clip_lo: float, clip_hi: float) -> Hyperrectangle:
    """Uniform-radius box around x0, clipped to the data range."""
    x0 = _as_vector(x0, "x0")
    if eps < 0.0:
        raise ValueError("eps must be nonnegative")
    if clip_lo > clip_hi:
        raise ValueError("clip_lo must not exceed clip_hi")
    low = np.maximum(clip_lo, x0 - eps)
    high = np.minimum(clip_hi, x0 + eps)
    return Hyperrectangle.from_bounds(low, high)


def reduce_generators(
    z: Zonotope, max_generators: int, symbols: SymbolAllocator
) -> Zonotope:
    """Cap the generator count by boxing the smallest generators.

    When z has more than ``max_generators`` generators, the excess ones
    with the smallest infinity norm are replaced by their interval hull
    (at most dim fresh axis-aligned generators), which keeps the result
    a superset of z.
    """
    if max_generators < z.dim:
        raise ValueError("generator cap must be at least the dimension")
    if z.order <= max_generators:
        return z
    norms = np.max(np.abs(z.generators), axis=1)
    # Stable sort keeps lower symbol ids first among equal norms.
    order = np.argsort(norms, kind="stable")
    n_boxed = z.order - max_generators + z.dim
    boxed = np.sort(order[:n_boxed])
    kept = np.sort(order[n_boxed:])
    box_radius = np.sum(np.abs(z.generators[boxed]), axis=0)
    axes = np.flatnonzero(box_radius)
    fresh = np.zeros((axes.size, z.dim))
    fresh[np.arange(axes.size), axes] = box_radius[axes]
    generators = np.vstack([z.generators[kept], fresh])
    ids = np.concatenate([z.symbol_ids[kept], symbols.take(axes.size)])
    return Zonotope(z.center, generators, ids)


def check_inclusion(reach, spec: OutputSpec) -> InclusionStatus:
    """Compare a reachable set against an output specification.

    Safe mode: HOLDS when the set satisfies every halfspace of the safe
    conjunction; VIOLATED_CANDIDATE when it lies entirely outside some
    halfspace.  Unsafe mode: HOLDS when the set provably misses every
    unsafe polytope; VIOLATED_CANDIDATE when it lies entirely inside
    one of them.  Everything else is UNKNOWN.  Comparisons are strict
    floating point; ties count as satisfying ``<=``.
    """
    if reach_dim(reach) != spec.dim:
        raise ValueError(
            f"reach set has dimension {reach_dim(reach)}, spec {spec.dim}"
        )

    def sup(a):
        return support_function(reach, a)

    def inf(a):
        return -support_function(reach, -a)

    if spec.mode == "safe":
        (conj,) = spec.disjuncts
        if all(sup(hs.normal) <= hs.offset for hs in conj):
            return InclusionStatus.HOLDS
        if any(inf(hs.normal) > hs.offset for hs in conj):
            return InclusionStatus.VIOLATED_CANDIDATE
        return InclusionStatus.UNKNOWN

    misses = [any(inf(hs.normal) > hs.offset for hs in d) for d in spec.disjuncts]
    if all(misses):
        return InclusionStatus.HOLDS
    if any(
        all(sup(hs.normal) <= hs.offset for hs in d) for d in spec.disjuncts
    ):
        return InclusionStatus.VIOLATED_CANDIDATE
    return InclusionStatus.UNKNOWN


def reach_dim(s) -> int:
    if isinstance(s, (Hyperrectangle, Zonotope)):
        return s.dim
    raise TypeError(f"unsupported set type {type(s).__name__}")
