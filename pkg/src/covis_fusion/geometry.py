import math
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Optional, Sequence, Union

import numpy as np
from numpy.typing import NDArray

from .utils.errors import DegenerateInputError, InvalidParamError
from .utils.logger import logger

Points = NDArray[np.float64]  # shape (N, 2)


def wrap_angle(angle: float) -> float:
    """Wrap an angle in radians to (-pi, pi]."""
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidParamError(f"Point2 coordinates must be finite, got ({self.x}, {self.y})")

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.x, self.y], dtype=np.float64)


@dataclass(frozen=True)
class Pose2:
    """Planar rigid transform: rotate by yaw, then translate by (tx, ty)."""
    yaw: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'yaw', wrap_angle(float(self.yaw)))
        object.__setattr__(self, 'tx', float(self.tx))
        object.__setattr__(self, 'ty', float(self.ty))

    @classmethod
    def identity(cls) -> 'Pose2':
        return cls(0.0, 0.0, 0.0)

    @property
    def rotation(self) -> NDArray[np.float64]:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s], [s, c]], dtype=np.float64)

    @property
    def translation(self) -> NDArray[np.float64]:
        return np.array([self.tx, self.ty], dtype=np.float64)

    def apply(self, points: Union[Point2, Sequence, NDArray]) -> Union[Point2, Points]:
        if isinstance(points, Point2):
            x, y = self.apply(points.as_array()[None, :])[0]
            return Point2(float(x), float(y))
        pts = as_points(points)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> 'Pose2':
        return inverse(self)

    def compose(self, other: 'Pose2') -> 'Pose2':
        return compose(self, other)

    def __matmul__(self, other: 'Pose2') -> 'Pose2':
        return compose(self, other)

    def to_json(self) -> Dict[str, float]:
        return {'yaw': self.yaw, 'tx': self.tx, 'ty': self.ty}

    @classmethod
    def from_json(cls, json: Dict[str, Any]) -> 'Pose2':
        return cls(json['yaw'], json['tx'], json['ty'])


def as_points(points: Union[Sequence, NDArray, Iterable[Point2]]) -> Points:
    """Normalize Point2 sequences and array-likes to a float64 (N, 2) array."""
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=np.float64)
    else:
        items = list(points)
        if items and isinstance(items[0], Point2):
            arr = np.array([[p.x, p.y] for p in items], dtype=np.float64)
        else:
            arr = np.asarray(items, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidParamError(f"Expected an (N, 2) point array, got shape {arr.shape}")
    return arr


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Return a ∘ b, so that apply(compose(a, b), p) = apply(a, apply(b, p))."""
    t = a.rotation @ b.translation + a.translation
    return Pose2(a.yaw + b.yaw, t[0], t[1])


def inverse(p: Pose2) -> Pose2:
    t = -(p.rotation.T @ p.translation)
    return Pose2(-p.yaw, t[0], t[1])


def kabsch2(src, dst, weights: Optional[Sequence[float]] = None) -> Pose2:
    """
    Weighted least-squares rigid transform mapping src onto dst.

    Minimizes sum_i w_i * ||T(src_i) - dst_i||^2 in closed form (centroids + 2x2 SVD).
    Weights are normalized to unit sum first, so uniform rescaling leaves the result unchanged.

    Raises:
        DegenerateInputError: fewer than two pairs, zero total weight, or all points coincident
    """
    A = as_points(src)
    B = as_points(dst)
    if A.shape != B.shape:
        raise InvalidParamError(f"src and dst must have matching shapes, got {A.shape} and {B.shape}")
    n = A.shape[0]
    w = np.ones(n, dtype=np.float64) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != n:
        raise InvalidParamError(f"Expected {n} weights, got {w.shape[0]}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidParamError("Weights must be finite and non-negative")

    total = float(w.sum())
    if n < 2 or total <= 0.0:
        logger.debug(f"kabsch2 degenerate: n={n}, weight sum={total}")
        raise DegenerateInputError(f"Need at least 2 weighted pairs, got n={n} with weight sum {total}")
    w = w / total

    cA = w @ A
    cB = w @ B
    A0 = A - cA
    B0 = B - cB
    spread = float(w @ np.einsum('ij,ij->i', A0, A0))
    if spread <= 1e-24 or float(w @ np.einsum('ij,ij->i', B0, B0)) <= 1e-24:
        logger.debug("kabsch2 degenerate: all points coincide")
        raise DegenerateInputError("All weighted points coincide; rotation is undetermined")

    H = (A0 * w[:, None]).T @ B0
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    R = Vt.T @ np.diag([1.0, d]) @ U.T
    yaw = math.atan2(R[1, 0], R[0, 0])
    t = cB - R @ cA
    return Pose2(yaw, t[0], t[1])


def rre(estimated: Pose2, truth: Pose2) -> float:
    """Relative rotation error in degrees; in the plane this is the absolute yaw error."""
    return abs(math.degrees(wrap_angle(estimated.yaw - truth.yaw)))


def rte(estimated: Pose2, truth: Pose2) -> float:
    """Relative translation error in meters."""
    return math.hypot(truth.tx - estimated.tx, truth.ty - estimated.ty)
