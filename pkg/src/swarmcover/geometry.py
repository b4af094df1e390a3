"""Polyhedral stand-ins for round shapes and convex regions.

Norm bounds on a 3-vector are replaced by a finite family of unit-direction
face functions (an H-sided polygon swept into a cylinder, a closed cylinder,
or a sphere grid).  Convex regions (geo fence, obstacles) are stored as
normalized face planes so that point containment reduces to signed plane
distances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

NORMAL_TOL = 1e-9

INFINITE_CYLINDER = "infinite_cylinder"
CLOSED_CYLINDER = "closed_cylinder"
SPHERE = "sphere"


class DegenerateGeometryError(ValueError):
    """Input points do not span a proper three-dimensional convex body."""


@dataclass(frozen=True)
class AffineFace:
    """One linear face function ``f(a) = cx*ax + cy*ay + cz*az + c0``.

    ``(cx, cy, cz)`` is a unit direction; ``c0`` is zero for shape
    approximations and the plane offset for convex-region faces.
    """

    cx: float
    cy: float
    cz: float
    c0: float = 0.0

    @property
    def direction(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    def value(self, a: Sequence[float]) -> float:
        return self.cx * a[0] + self.cy * a[1] + self.cz * a[2] + self.c0


def _check_sides(sides: int, reduced: bool) -> None:
    if sides < 4 or sides % 2 != 0:
        raise ValueError(f"side count must be an even integer >= 4, got {sides}")
    if reduced and sides % 4 != 0:
        raise ValueError(
            f"the reduced face set for nonnegative vectors needs a side count "
            f"divisible by 4, got {sides}"
        )


def _nonnegative_directions(faces: list[AffineFace]) -> list[AffineFace]:
    # Valid only for vectors with nonnegative components (e.g. slack vectors):
    # faces pointing out of the positive orthant are dominated there.
    return [f for f in faces if min(f.cx, f.cy, f.cz) >= -1e-12]


@dataclass(frozen=True)
class PolyApprox:
    """A round shape approximated by unit-direction faces.

    ``c_in_inner`` scales a bound so the polyhedron is inscribed in the shape
    (accepted vectors certainly satisfy the true norm bound); with
    ``c_in_outer`` (= 1) the polyhedron circumscribes it.
    """

    faces: tuple[AffineFace, ...]
    shape_kind: str
    sides: int
    c_in_inner: float
    c_in_outer: float = 1.0

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def directions(self) -> np.ndarray:
        return np.array([[f.cx, f.cy, f.cz] for f in self.faces])

    def values(self, a: Sequence[float]) -> np.ndarray:
        """Evaluate every face function at the vector ``a``."""
        return self.directions @ np.asarray(a, dtype=float)

    def gauge(self, a: Sequence[float]) -> float:
        """The exact norm the faces approximate (radius for cylinders,
        max(radius, |z|) for closed cylinders, Euclidean norm for spheres)."""
        a = np.asarray(a, dtype=float)
        radial = math.hypot(a[0], a[1])
        if self.shape_kind == INFINITE_CYLINDER:
            return radial
        if self.shape_kind == CLOSED_CYLINDER:
            return max(radial, abs(a[2]))
        return float(np.linalg.norm(a))


def make_cylinder_faces(sides: int, closed: bool = False, reduced: bool = False) -> PolyApprox:
    """Faces of an H-sided polygon around the z axis.

    ``closed`` appends the two axial faces bounding the cylinder height.
    ``reduced`` keeps only positive-orthant directions, valid for vectors of
    nonnegative (slack) components and requiring H divisible by 4.
    """
    _check_sides(sides, reduced)
    faces = []
    for h in range(1, sides + 1):
        alpha = 2.0 * math.pi * h / sides
        faces.append(AffineFace(math.cos(alpha), math.sin(alpha), 0.0))
    kind = INFINITE_CYLINDER
    if closed:
        faces.append(AffineFace(0.0, 0.0, 1.0))
        faces.append(AffineFace(0.0, 0.0, -1.0))
        kind = CLOSED_CYLINDER
    if reduced:
        faces = _nonnegative_directions(faces)
    return PolyApprox(
        faces=tuple(faces),
        shape_kind=kind,
        sides=sides,
        c_in_inner=math.cos(math.pi / sides),
    )


def sphere_face_indices(h: int, sides: int) -> tuple[int, int]:
    """Translate the flat face index ``h`` (1-based) into the azimuth index i
    and elevation-ring index j of the sphere grid."""
    rings = sides // 2 - 1
    i = (h - 1) // rings + 1
    j = (h - 1) % rings + 1
    return i, j


def make_sphere_faces(sides: int, reduced: bool = False) -> PolyApprox:
    """Faces of a sphere approximated by H-sided polygons in both the
    horizontal and vertical planes: H*(H/2 - 1) grid directions plus the two
    axial caps."""
    _check_sides(sides, reduced)
    rings = sides // 2 - 1
    faces = []
    for h in range(1, sides * rings + 1):
        i, j = sphere_face_indices(h, sides)
        alpha = 2.0 * math.pi * i / sides
        beta = 2.0 * math.pi * j / sides
        faces.append(
            AffineFace(
                math.cos(alpha) * math.sin(beta),
                math.sin(alpha) * math.sin(beta),
                math.cos(beta),
            )
        )
    faces.append(AffineFace(0.0, 0.0, 1.0))
    faces.append(AffineFace(0.0, 0.0, -1.0))
    if reduced:
        faces = _nonnegative_directions(faces)
    return PolyApprox(
        faces=tuple(faces),
        shape_kind=SPHERE,
        sides=sides,
        c_in_inner=math.cos(math.pi / sides) ** 2,
    )


@dataclass(frozen=True)
class ConvexRegion:
    """A convex body given by normalized outward face planes and its vertices."""

    faces: tuple[AffineFace, ...]
    vertices: np.ndarray
    name: str = ""

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def normals(self) -> np.ndarray:
        return np.array([[f.cx, f.cy, f.cz] for f in self.faces])

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.array([f.c0 for f in self.faces])

    def signed_distances(self, p: Sequence[float]) -> np.ndarray:
        return self.normals @ np.asarray(p, dtype=float) + self.offsets

    def containment(self, p: Sequence[float]) -> float:
        """Max signed face distance; <= 0 means the point is inside."""
        return float(np.max(self.signed_distances(p)))

    def contains(self, p: Sequence[float], tol: float = 0.0) -> bool:
        return self.containment(p) <= tol

    def translate(self, offset: Sequence[float]) -> "ConvexRegion":
        """The same body shifted by ``offset`` (plane offsets move by -n.t)."""
        t = np.asarray(offset, dtype=float)
        faces = tuple(
            AffineFace(f.cx, f.cy, f.cz, f.c0 - f.cx * t[0] - f.cy * t[1] - f.cz * t[2])
            for f in self.faces
        )
        return ConvexRegion(faces=faces, vertices=self.vertices + t, name=self.name)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)


def _merge_coplanar(equations: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    merged: list[np.ndarray] = []
    for row in equations:
        if not any(np.max(np.abs(row - m)) <= tol for m in merged):
            merged.append(row)
    return np.array(merged)


def convex_hull(points: Sequence[Sequence[float]], name: str = "") -> ConvexRegion:
    """Convex hull of >= 4 non-coplanar 3D points as a ConvexRegion.

    Face planes are normalized with outward unit normals; coplanar facets are
    merged so e.g. a box yields exactly 6 faces.
    """
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 3), axis=0)
    if len(pts) < 4:
        raise DegenerateGeometryError(
            f"need at least 4 distinct points for a 3D hull, got {len(pts)}"
        )
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateGeometryError(
            f"points are coplanar or otherwise degenerate: {exc}"
        ) from exc
    equations = _merge_coplanar(hull.equations)
    faces = []
    for eq in equations:
        n = eq[:3]
        norm = float(np.linalg.norm(n))
        faces.append(AffineFace(n[0] / norm, n[1] / norm, n[2] / norm, eq[3] / norm))
    region = ConvexRegion(faces=tuple(faces), vertices=pts[hull.vertices], name=name)
    scale = max(1.0, float(np.max(np.abs(pts))))
    worst = max(region.containment(p) for p in pts)
    if worst > NORMAL_TOL * scale:
        raise DegenerateGeometryError(
            f"hull round-trip failed: a generating point sits {worst:.2e} outside"
        )
    return region


def signed_distances(region: ConvexRegion, p: Sequence[float]) -> np.ndarray:
    """Signed distance of ``p`` to every face plane of ``region``."""
    return region.signed_distances(p)


def box_corners(lo: Sequence[float], hi: Sequence[float]) -> np.ndarray:
    """The 8 corners of an axis-aligned box, a convenient hull input."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    return np.array([
        [pick[0], pick[1], pick[2]]
        for pick in itertools.product(*zip(lo, hi))
    ])
