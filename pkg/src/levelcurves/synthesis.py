"""Field synthesis: coefficient paths, sphere meshes, harmonic assembly.

Realizations are generated in two stages.  First, every harmonic
coefficient a_(ell m)(t) is sampled as a stationary Gaussian path on a
uniform time grid whose autocovariance equals the spectrum's C_ell at the
grid lags; sampling uses circulant embedding of the Toeplitz covariance,
which is exact in distribution whenever the embedding is nonnegative
definite (the power-law kernels used here embed cleanly, and a doubling
fallback covers the rest).  Second, field values and orthonormal-frame
gradients on a triangulated sphere are assembled as matrix products of
precomputed real-spherical-harmonic basis columns with the coefficient
array, one time slice (or block of slices) at a time.

Meshes are subdivided icosahedra projected to the unit sphere, rotated by
a fixed rotation so no vertex sits near a pole, with per-vertex quadrature
weights from one-third spherical-triangle-area accumulation (weights sum
to the sphere area 4 pi).
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .special import harmonic_columns
from .spectrum import multipole_cov

__all__ = [
    "TimeGrid",
    "SphereMesh",
    "build_icosphere",
    "HarmonicBasis",
    "CoefficientEnsemble",
    "sample_time_processes",
    "FieldSlice",
    "synthesize_slice",
    "synthesize_multipole_slice",
    "synthesize_values",
    "save_ensemble",
    "load_ensemble",
]


# ----------------------------------------------------------------------
# Time grid
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k dt, k = 0..n_steps-1; horizon T = dt (n_steps-1)."""

    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 2:
            raise ValueError("need at least two time steps")

    @property
    def horizon(self):
        return self.dt * (self.n_steps - 1)

    @property
    def times(self):
        return np.arange(self.n_steps) * self.dt

    @staticmethod
    def for_horizon(horizon, dt):
        """Grid covering [0, horizon] with step dt (horizon rounded to grid)."""
        n = int(round(horizon / dt)) + 1
        return TimeGrid(dt=dt, n_steps=max(n, 2))


# ----------------------------------------------------------------------
# Icosphere mesh
# ----------------------------------------------------------------------

_ICO_R = (1.0 + math.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array(
    [
        [-1.0, _ICO_R, 0.0], [1.0, _ICO_R, 0.0], [-1.0, -_ICO_R, 0.0],
        [1.0, -_ICO_R, 0.0], [0.0, -1.0, _ICO_R], [0.0, 1.0, _ICO_R],
        [0.0, -1.0, -_ICO_R], [0.0, 1.0, -_ICO_R], [_ICO_R, 0.0, -1.0],
        [_ICO_R, 0.0, 1.0], [-_ICO_R, 0.0, -1.0], [-_ICO_R, 0.0, 1.0],
    ]
)
_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)

# fixed rotation applied to every mesh so no vertex lands near a pole;
# chosen once, far from any icosphere symmetry axis
_POLE_DODGE = None


def _pole_dodge_rotation():
    global _POLE_DODGE
    if _POLE_DODGE is None:
        a, b = 0.37, 0.21
        ry = np.array(
            [[math.cos(a), 0, math.sin(a)], [0, 1, 0], [-math.sin(a), 0, math.cos(a)]]
        )
        rz = np.array(
            [[math.cos(b), -math.sin(b), 0], [math.sin(b), math.cos(b), 0], [0, 0, 1]]
        )
        _POLE_DODGE = rz @ ry
    return _POLE_DODGE


@dataclass(frozen=True)
class SphereMesh:
    """Triangulated unit sphere with quadrature weights.

    vertices: (V, 3) unit vectors; triangles: (F, 3) CCW-outward index
    triples; vertex_weights: (V,) spherical one-third-area weights summing
    to 4 pi.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    vertex_weights: np.ndarray
    subdivision_level: int

    @property
    def theta(self):
        return np.arccos(np.clip(self.vertices[:, 2], -1.0, 1.0))

    @property
    def phi(self):
        return np.arctan2(self.vertices[:, 1], self.vertices[:, 0])

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]


def _spherical_triangle_areas(verts, tris):
    """Solid angles of oriented spherical triangles (van Oosterom-Strackee)."""
    a = verts[tris[:, 0]]
    b = verts[tris[:, 1]]
    c = verts[tris[:, 2]]
    triple = np.einsum("ij,ij->i", a, np.cross(b, c))
    denom = 1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) \
        + np.einsum("ij,ij->i", c, a)
    return 2.0 * np.arctan2(np.abs(triple), denom)


def build_icosphere(subdivision_level):
    """Icosahedron subdivided ``subdivision_level`` times and projected to
    the unit sphere; V = 10 * 4^level + 2, F = 20 * 4^level."""
    level = int(subdivision_level)
    if not 0 <= level <= 8:
        raise ValueError("subdivision level must lie in [0, 8]")
    verts = _ICO_VERTS / np.linalg.norm(_ICO_VERTS, axis=1, keepdims=True)
    verts = list(verts)
    faces = _ICO_FACES.copy()
    for _ in range(level):
        midpoint = {}

        def mid(i, j):
            key = (i, j) if i < j else (j, i)
            idx = midpoint.get(key)
            if idx is None:
                p = verts[i] + verts[j]
                p = p / np.linalg.norm(p)
                verts.append(p)
                idx = len(verts) - 1
                midpoint[key] = idx
            return idx

        new_faces = np.empty((4 * faces.shape[0], 3), dtype=np.int64)
        for t, (i, j, k) in enumerate(faces):
            a, b, c = mid(i, j), mid(j, k), mid(k, i)
            new_faces[4 * t + 0] = (i, a, c)
            new_faces[4 * t + 1] = (a, j, b)
            new_faces[4 * t + 2] = (c, b, k)
            new_faces[4 * t + 3] = (a, b, c)
        faces = new_faces
    verts = np.array(verts) @ _pole_dodge_rotation().T

    # enforce outward (CCW) orientation
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    flip = np.einsum("ij,ij->i", np.cross(b - a, c - a), a + b + c) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]

    areas = _spherical_triangle_areas(verts, faces)
    weights = np.zeros(len(verts))
    np.add.at(weights, faces.ravel(), np.repeat(areas / 3.0, 3))

    pole_dist = np.minimum(np.arccos(np.clip(verts[:, 2], -1, 1)),
                           math.pi - np.arccos(np.clip(verts[:, 2], -1, 1)))
    if pole_dist.min() < 1e-6:
        raise RuntimeError("mesh vertex fell within 1e-6 rad of a pole")

    verts.flags.writeable = False
    faces.flags.writeable = False
    weights.flags.writeable = False
    return SphereMesh(verts, faces, weights, level)


# ----------------------------------------------------------------------
# Harmonic basis on a mesh
# ----------------------------------------------------------------------

class HarmonicBasis:
    """Precomputed harmonic columns Y (and lazily their frame derivatives)
    at the vertices of a mesh, for the degrees present in a spectrum."""

    def __init__(self, mesh, ells):
        self.mesh = mesh
        self.ells = tuple(sorted(set(int(l) for l in ells)))
        labels, y = harmonic_columns(self.ells, mesh.theta, mesh.phi)
        self.labels = labels
        self.y = y
        self._dy = None

    @property
    def dy(self):
        """(dY/d_theta, (1/sin theta) dY/d_phi) column matrices."""
        if self._dy is None:
            _, _, d1, d2 = harmonic_columns(
                self.ells, self.mesh.theta, self.mesh.phi, derivatives=True
            )
            self._dy = (d1, d2)
        return self._dy

    def columns_for(self, ell):
        idx = [j for j, (l, _) in enumerate(self.labels) if l == ell]
        if not idx:
            raise ValueError(f"degree {ell} not in basis")
        return np.asarray(idx)


# ----------------------------------------------------------------------
# Coefficient ensembles via circulant embedding
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientEnsemble:
    """Sampled coefficient paths for one field realization.

    ``coeffs`` has shape (n_harmonics, n_steps), rows ordered like
    ``labels`` (degrees ascending, m = -ell..ell).  Immutable; safe to
    share across workers.
    """

    spectrum: object
    grid: TimeGrid
    coeffs: np.ndarray
    labels: tuple
    seed_entropy: int
    clipped_eigenvalues: int = 0
    embedding_doublings: int = 0

    def rows_for(self, ell):
        idx = [j for j, (l, _) in enumerate(self.labels) if l == ell]
        if not idx:
            raise ValueError(f"degree {ell} not in ensemble")
        return np.asarray(idx)

    def path(self, ell, m):
        for j, lab in enumerate(self.labels):
            if lab == (ell, m):
                return self.coeffs[j]
        raise ValueError(f"no coefficient path for (ell, m) = ({ell}, {m})")


def _embedding_eigenvalues(r):
    """FFT eigenvalues of the minimal circulant embedding of a Toeplitz
    covariance row r[0..n-1] (ring length 2(n-1), or 2 for n = 2)."""
    n = r.shape[0]
    if n == 2:
        ring = np.array([r[0], r[1]])
    else:
        ring = np.concatenate([r, r[-2:0:-1]])
    return np.fft.fft(ring).real, ring.shape[0]


def _plan_embedding(spectrum, grid, ell):
    """Eigenvalue vector for one multipole's path sampler, doubling the
    embedding length (up to 4 times) if material negative eigenvalues
    appear.  Returns (sqrt(lam / M), M, n_clipped, doublings)."""
    doublings = 0
    n = grid.n_steps
    while True:
        lags = np.arange(n) * grid.dt
        r = multipole_cov(spectrum, ell, lags)
        lam, m_len = _embedding_eigenvalues(r)
        lo = lam.min()
        if lo >= -1e-8 * lam.max():
            n_clipped = int(np.count_nonzero(lam < 0))
            lam = np.clip(lam, 0.0, None)
            return np.sqrt(lam / m_len), m_len, n_clipped, doublings
        if doublings >= 4:
            raise RuntimeError(
                f"circulant embedding failed for ell={ell}: min eigenvalue "
                f"{lo:.3e} after {doublings} doublings (n={n})"
            )
        n = 2 * (n - 1) + 1
        doublings += 1


def sample_time_processes(spectrum, grid, seed):
    """Draw one realization of every coefficient path a_(ell m)(t).

    Paths for distinct (ell, m) are independent; each has autocovariance
    C_ell at the grid lags, exactly in distribution (nonnegative
    embedding), with eigenvalues within -1e-8 of zero clipped and counted.
    The same (spectrum, grid, seed) always yields bit-identical output.
    """
    if isinstance(seed, np.random.Generator):
        rng = seed
        entropy = -1
    else:
        ss = seed if isinstance(seed, np.random.SeedSequence) \
            else np.random.SeedSequence(int(seed))
        rng = np.random.Generator(np.random.PCG64(ss))
        entropy = ss.entropy if isinstance(ss.entropy, int) else -1

    labels = []
    rows = []
    clipped = 0
    doublings = 0
    n = grid.n_steps
    for e in spectrum.entries:
        root_lam, m_len, n_clip, n_dbl = _plan_embedding(spectrum, grid, e.ell)
        clipped += n_clip
        doublings = max(doublings, n_dbl)
        count = 2 * e.ell + 1
        n_pairs = (count + 1) // 2
        g = rng.standard_normal((n_pairs, 2, m_len))
        w = np.fft.fft(root_lam * (g[:, 0, :] + 1j * g[:, 1, :]), axis=1)
        block = np.empty((2 * n_pairs, n))
        block[0::2] = w.real[:, :n]
        block[1::2] = w.imag[:, :n]
        rows.append(block[:count])
        labels.extend((e.ell, m) for m in range(-e.ell, e.ell + 1))
    coeffs = np.vstack(rows) if rows else np.empty((0, n))
    coeffs.flags.writeable = False
    return CoefficientEnsemble(
        spectrum=spectrum,
        grid=grid,
        coeffs=coeffs,
        labels=tuple(labels),
        seed_entropy=entropy,
        clipped_eigenvalues=clipped,
        embedding_doublings=doublings,
    )


# ----------------------------------------------------------------------
# Slice synthesis
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class FieldSlice:
    """Field values (and orthonormal-frame gradients) on mesh vertices at
    one time step."""

    values: np.ndarray
    grad_theta: np.ndarray | None
    grad_phi: np.ndarray | None
    time_index: int


def _as_basis(ensemble, mesh_or_basis):
    if isinstance(mesh_or_basis, HarmonicBasis):
        return mesh_or_basis
    return HarmonicBasis(mesh_or_basis, ensemble.spectrum.ells)


def synthesize_slice(ensemble, mesh, k, with_gradient=True):
    """Z(., t_k) on the mesh, with gradients unless disabled."""
    if not 0 <= k < ensemble.grid.n_steps:
        raise IndexError(f"time index {k} outside grid")
    basis = _as_basis(ensemble, mesh)
    a = ensemble.coeffs[:, k]
    values = basis.y @ a
    if not with_gradient:
        return FieldSlice(values, None, None, k)
    d1, d2 = basis.dy
    return FieldSlice(values, d1 @ a, d2 @ a, k)


def synthesize_multipole_slice(ensemble, mesh, ell, k, normalized=False,
                               with_gradient=True):
    """Single-degree component Z_ell(., t_k); ``normalized=True`` rescales
    to the unit-variance version Z_ell / sqrt((2 ell + 1) C_ell(0) / 4 pi)."""
    basis = _as_basis(ensemble, mesh)
    entry = ensemble.spectrum.entry(int(ell))
    if entry is None:
        raise ValueError(f"ell={ell} not present in the spectrum")
    cols = basis.columns_for(int(ell))
    rows = ensemble.rows_for(int(ell))
    a = ensemble.coeffs[rows, k]
    scale = 1.0
    if normalized:
        scale = 1.0 / math.sqrt((2 * entry.ell + 1) * entry.c0 / (4 * math.pi))
    values = (basis.y[:, cols] @ a) * scale
    if not with_gradient:
        return FieldSlice(values, None, None, k)
    d1, d2 = basis.dy
    return FieldSlice(values, (d1[:, cols] @ a) * scale,
                      (d2[:, cols] @ a) * scale, k)


def synthesize_values(ensemble, basis, time_slice=slice(None)):
    """Values for a block of time steps as a (V, S) matrix (no gradients);
    the workhorse for study loops that only need lengths."""
    return basis.y @ ensemble.coeffs[:, time_slice]


# ----------------------------------------------------------------------
# Binary ensemble dump (versioned, little-endian)
# ----------------------------------------------------------------------

_MAGIC = b"LVCENS01"


def save_ensemble(path, ensemble):
    """Write a versioned binary dump: magic, spectrum hash, grid, seed,
    then the row-major float64 coefficient array (little-endian)."""
    spec_hash = hashlib.sha256(
        ensemble.spectrum.fingerprint().encode()
    ).digest()[:16]
    header = struct.pack(
        "<8s16sdqqqq",
        _MAGIC,
        spec_hash,
        float(ensemble.grid.dt),
        int(ensemble.grid.n_steps),
        int(ensemble.seed_entropy if ensemble.seed_entropy >= 0 else 0),
        int(ensemble.coeffs.shape[0]),
        int(ensemble.coeffs.shape[1]),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ensemble.coeffs, dtype="<f8").tobytes())


def load_ensemble(path, spectrum):
    """Read a dump written by :func:`save_ensemble`; the spectrum must hash
    to the stored fingerprint."""
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<8s16sdqqqq"))
        magic, spec_hash, dt, n_steps, seed, n_rows, n_cols = struct.unpack(
            "<8s16sdqqqq", header
        )
        if magic != _MAGIC:
            raise ValueError("not a levelcurves ensemble dump")
        want = hashlib.sha256(spectrum.fingerprint().encode()).digest()[:16]
        if spec_hash != want:
            raise ValueError("spectrum fingerprint does not match the dump")
        coeffs = np.frombuffer(
            fh.read(8 * n_rows * n_cols), dtype="<f8"
        ).reshape(n_rows, n_cols).copy()
    grid = TimeGrid(dt=dt, n_steps=n_steps)
    labels = tuple(
        (e.ell, m) for e in spectrum.entries for m in range(-e.ell, e.ell + 1)
    )
    if len(labels) != n_rows:
        raise ValueError("coefficient row count does not match the spectrum")
    coeffs.flags.writeable = False
    return CoefficientEnsemble(
        spectrum=spectrum, grid=grid, coeffs=coeffs, labels=labels,
        seed_entropy=seed,
    )
