"""Level-set design field: evaluation, smoothing, projection, reinitialization.

The field is a linear combination of the design-basis functions produced
by the first refinement stage; its expansion coefficients are the
optimization variables.  Conductivity smoothing uses the polynomial
Heaviside/Dirac pair with support bandwidth delta.  Reinitialization is
geometry based: interface points are located by bisection along
isoparameter lines, new values are signed distances to the nearest
interface point, and the coarse coefficients are recovered through the
design mass system with the old interface pinned by penalty rows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree

from igatop.errors import AssemblyError, ConfigError, DomainError
from igatop.model import DesignBasis
from igatop.splines import patch_quadrature, tabulate


@dataclass(frozen=True)
class SmoothingParams:
    """Support bandwidth and floor value of the smoothed Heaviside."""

    delta: float
    alpha: float = 0.0

    def __post_init__(self):
        if self.delta <= 0:
            raise ConfigError("bandwidth delta must be positive")
        if not 0 <= self.alpha < 1:
            raise ConfigError("floor alpha must lie in [0, 1)")


def heaviside(phi, sp_: SmoothingParams):
    """Smoothed step: alpha below -delta, 1 above delta, cubic in between."""
    phi = np.asarray(phi, dtype=float)
    d, a = sp_.delta, sp_.alpha
    u = np.clip(phi / d, -1.0, 1.0)
    mid = 0.75 * (1.0 - a) * (u - u**3 / 3.0) + 0.5 * (1.0 + a)
    out = np.where(phi >= d, 1.0, np.where(phi < -d, a, mid))
    return out if out.ndim else float(out)


def dirac(phi, sp_: SmoothingParams):
    """Smoothed impulse: quadratic bump on [-delta, delta], dH/dphi elsewhere zero."""
    phi = np.asarray(phi, dtype=float)
    d, a = sp_.delta, sp_.alpha
    out = np.where(
        np.abs(phi) <= d,
        0.75 * (1.0 - a) / d * (1.0 - (phi / d) ** 2),
        0.0,
    )
    return out if out.ndim else float(out)


@dataclass
class DesignField:
    """Expansion coefficients over a design basis."""

    basis: DesignBasis
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (self.basis.m,):
            raise ConfigError(f"coefficient vector must have length {self.basis.m}")
        if not np.all(np.isfinite(c)):
            raise ConfigError("coefficients must be finite")
        self.coeffs = c

    def with_coeffs(self, coeffs: np.ndarray) -> "DesignField":
        return DesignField(self.basis, coeffs)


def eval_lsf(field: DesignField, patch_id: int, xi) -> tuple[float, np.ndarray]:
    """Field value and physical gradient at one parametric point of a design patch."""
    basis = field.basis
    if patch_id not in basis.patch_ids:
        raise DomainError(f"patch {patch_id} carries no design field")
    k = basis.patch_ids.index(patch_id)
    tab = tabulate(basis.patches[k], np.atleast_2d(xi))
    c_loc = field.coeffs[basis.patch_slice(k)][tab.indices[0]]
    phi = float(tab.values[0] @ c_loc)
    grad = np.array([tab.dx[0] @ c_loc, tab.dy[0] @ c_loc])
    return phi, grad


# ---------------------------------------------------------------------------
# design-level quadrature and the mass system
# ---------------------------------------------------------------------------


def _basis_rows(basis: DesignBasis, k: int, pts: np.ndarray):
    """Sparse rows of design-basis values/gradients at points of patch k."""
    tab = tabulate(basis.patches[k], pts)
    n, nloc = tab.indices.shape
    rows = np.repeat(np.arange(n), nloc)
    cols = (tab.indices + int(basis.offsets[k])).ravel()
    shape = (n, basis.m)
    D = sp.csr_matrix((tab.values.ravel(), (rows, cols)), shape=shape)
    Dx = sp.csr_matrix((tab.dx.ravel(), (rows, cols)), shape=shape)
    Dy = sp.csr_matrix((tab.dy.ravel(), (rows, cols)), shape=shape)
    return tab, D, Dx, Dy


@dataclass
class DesignQuad:
    """Quadrature bundle over the design region on the design-level mesh."""

    basis: DesignBasis
    phys: np.ndarray  # (nq, 2)
    w: np.ndarray  # weights x |J| (nq,)
    D: sp.csr_matrix  # basis values (nq, m)
    Dx: sp.csr_matrix
    Dy: sp.csr_matrix
    mass: sp.csr_matrix  # (m, m)
    _mass_lu: object = None

    def mass_solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._mass_lu is None:
            try:
                self._mass_lu = splu(self.mass.tocsc())
            except RuntimeError as exc:
                raise AssemblyError(f"singular design mass matrix: {exc}") from exc
        return self._mass_lu.solve(rhs)


def design_quadrature(basis: DesignBasis, n_per_span: int | None = None) -> DesignQuad:
    """Gauss bundle on the design mesh; raise n_per_span to resolve the
    smoothed Heaviside/Dirac band when it is narrower than a knot span."""
    phys, w, Ds, Dxs, Dys = [], [], [], [], []
    for k in range(len(basis.patches)):
        pts, wts = patch_quadrature(basis.patches[k], n_per_span, n_per_span)
        tab, D, Dx, Dy = _basis_rows(basis, k, pts)
        phys.append(tab.phys)
        w.append(wts * tab.det_j)
        Ds.append(D)
        Dxs.append(Dx)
        Dys.append(Dy)
    D = sp.vstack(Ds, format="csr")
    w = np.concatenate(w)
    mass = (D.T @ D.multiply(w[:, None])).tocsr()
    return DesignQuad(
        basis=basis,
        phys=np.concatenate(phys),
        w=w,
        D=D,
        Dx=sp.vstack(Dxs, format="csr"),
        Dy=sp.vstack(Dys, format="csr"),
        mass=mass,
    )


def project_lsf(quad: DesignQuad, target) -> np.ndarray:
    """L2 projection of a scalar function of physical position onto the basis."""
    vals = np.asarray(target(quad.phys), dtype=float)
    return project_values(quad, vals)


def project_values(quad: DesignQuad, values: np.ndarray) -> np.ndarray:
    rhs = quad.D.T @ (quad.w * values)
    return quad.mass_solve(rhs)


# ---------------------------------------------------------------------------
# interface points and reinitialization
# ---------------------------------------------------------------------------


def _phi_on_patch(field: DesignField, k: int, pts: np.ndarray) -> np.ndarray:
    tab = tabulate(field.basis.patches[k], pts, check_jacobian=False)
    c_loc = field.coeffs[field.basis.patch_slice(k)][tab.indices]
    return np.einsum("nl,nl->n", tab.values, c_loc)


def _span_grid(kv, per_span: int, interior: bool) -> np.ndarray:
    """per_span values in every nonempty span (offset midpoints if interior)."""
    breaks = kv.span_breaks()
    out = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if interior:
            out.append(a + (b - a) * (np.arange(per_span) + 0.5) / per_span)
        else:
            out.append(np.linspace(a, b, per_span + 1)[:-1])
    if not interior:
        out.append([breaks[-1]])
    return np.concatenate([np.atleast_1d(x) for x in out])


def interface_points(
    field: DesignField, lines_per_span: int = 20, tol: float = 1e-10
):
    """Zero-contour points found by bisection along isoparameter lines.

    Returns (points (n, 2) physical, params: list of (patch_id, (u, v))).
    Per design patch and per parametric direction, lines_per_span lines
    cross each knot span; sign changes of the field along each line are
    bracketed on a fine span-wise scan and bisected to |phi| <= tol.
    """
    if lines_per_span < 1:
        raise ConfigError("lines_per_span must be >= 1")
    basis = field.basis
    pts_out, par_out = [], []
    for k, patch in enumerate(basis.patches):
        for fixed_axis in (0, 1):
            kv_fixed = patch.knots_u if fixed_axis == 0 else patch.knots_v
            kv_run = patch.knots_v if fixed_axis == 0 else patch.knots_u
            lines = _span_grid(kv_fixed, lines_per_span, interior=True)
            scan = _span_grid(kv_run, max(patch.knots_u.degree, patch.knots_v.degree) + 3,
                              interior=False)
            F, S = np.meshgrid(lines, scan, indexing="ij")
            pts = np.column_stack([F.ravel(), S.ravel()])
            if fixed_axis == 1:
                pts = pts[:, ::-1]
            phi = _phi_on_patch(field, k, pts).reshape(F.shape)
            sign_flip = phi[:, :-1] * phi[:, 1:] < 0
            li, si = np.nonzero(sign_flip)
            if li.size == 0:
                continue
            lo = scan[si]
            hi = scan[si + 1]
            flo = phi[li, si]
            fixed_vals = lines[li]
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                pm = np.column_stack([fixed_vals, mid])
                if fixed_axis == 1:
                    pm = pm[:, ::-1]
                fm = _phi_on_patch(field, k, pm)
                done = np.abs(fm) <= tol
                move_lo = fm * flo > 0
                lo = np.where(move_lo & ~done, mid, lo)
                flo = np.where(move_lo & ~done, fm, flo)
                hi = np.where(~move_lo & ~done, mid, hi)
                if np.all(done) or np.all(hi - lo < 1e-15):
                    break
            mid = 0.5 * (lo + hi)
            pm = np.column_stack([fixed_vals, mid])
            if fixed_axis == 1:
                pm = pm[:, ::-1]
            tab = tabulate(patch, pm, check_jacobian=False)
            pts_out.append(tab.phys)
            par_out.extend(
                (basis.patch_ids[k], (pm[i, 0], pm[i, 1])) for i in range(pm.shape[0])
            )
    if not pts_out:
        return np.empty((0, 2)), []
    pts = np.concatenate(pts_out)
    # deduplicate crossings found from both line directions
    diam = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))) if len(pts) > 1 else 1.0
    r = max(1e-7 * max(diam, 1.0), 1e-14)
    tree = cKDTree(pts)
    keep = np.ones(len(pts), dtype=bool)
    for i, j in tree.query_pairs(r):
        if keep[i] and keep[j]:
            keep[max(i, j)] = False
    pts = pts[keep]
    par_out = [p for p, k_ in zip(par_out, keep) if k_]
    return pts, par_out


def reinitialize(
    field: DesignField,
    quad: DesignQuad,
    lines_per_span: int = 20,
    penalty_weight: float | None = None,
) -> DesignField:
    """Rebuild the field as a signed distance to its current zero contour.

    Signed distances to the nearest interface point are projected through
    the design mass system; penalty rows pin the located interface points
    to zero so the contour is preserved.  Without an interface the field
    is returned unchanged (with a warning).
    """
    pts, params = interface_points(field, lines_per_span)
    if len(pts) == 0:
        warnings.warn("reinitialize: field has no zero contour, returning unchanged")
        return field
    tree = cKDTree(pts)
    dist, _ = tree.query(quad.phys)
    phi_old = quad.D @ field.coeffs
    sign = np.where(phi_old >= 0, 1.0, -1.0)
    target = sign * dist

    rows = []
    basis = field.basis
    for pid in basis.patch_ids:
        k = basis.patch_ids.index(pid)
        sel = [uv for p, uv in params if p == pid]
        if not sel:
            continue
        _, D, _, _ = _basis_rows(basis, k, np.asarray(sel))
        rows.append(D)
    P = sp.vstack(rows, format="csr")
    if penalty_weight is None:
        penalty_weight = 1e6 * float(quad.mass.diagonal().mean())
    M = (quad.mass + penalty_weight * (P.T @ P)).tocsc()
    rhs = quad.D.T @ (quad.w * target)
    try:
        coeffs = splu(M).solve(rhs)
    except RuntimeError as exc:
        raise AssemblyError(f"singular reinitialization system: {exc}") from exc
    return field.with_coeffs(coeffs)


# ---------------------------------------------------------------------------
# geometric measures
# ---------------------------------------------------------------------------


def perimeter(field: DesignField, sp_: SmoothingParams, quad: DesignQuad) -> float:
    """Smoothed interface length: quadrature of dirac(phi) over the design region."""
    phi = quad.D @ field.coeffs
    return float(quad.w @ dirac(phi, sp_))


def volume_measure(field: DesignField, sp_: SmoothingParams, quad: DesignQuad):
    """Area covered by the positive-side material and its coefficient gradient."""
    phi = quad.D @ field.coeffs
    j_vol = float(quad.w @ heaviside(phi, sp_))
    grad = quad.D.T @ (quad.w * dirac(phi, sp_))
    return j_vol, np.asarray(grad).ravel()


# ---------------------------------------------------------------------------
# symmetry reduction of the design variables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SymmetryMap:
    """Surjection from expansion coefficients onto free optimization variables."""

    orbit: np.ndarray  # (m,) orbit index per coefficient
    n_var: int
    mode: str

    def expand(self, variables: np.ndarray) -> np.ndarray:
        variables = np.asarray(variables, dtype=float)
        if variables.shape != (self.n_var,):
            raise ConfigError(f"expected {self.n_var} variables")
        return variables[self.orbit]

    def reduce_gradient(self, grad: np.ndarray) -> np.ndarray:
        if np.asarray(grad).shape != self.orbit.shape:
            raise ConfigError("gradient length does not match coefficient count")
        return np.bincount(self.orbit, weights=grad, minlength=self.n_var)

    def reduce_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        """Orbit means; exact when the coefficient vector is symmetric."""
        sums = np.bincount(self.orbit, weights=coeffs, minlength=self.n_var)
        counts = np.bincount(self.orbit, minlength=self.n_var)
        return sums / counts


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def build_symmetry_map(basis: DesignBasis, mode: str = "xy", tol: float | None = None) -> SymmetryMap:
    """Group design coefficients into orbits.

    Modes: 'none' keeps every coefficient independent; 'coincide' merges
    geometrically coincident control points (multi-patch seams); 'xy'
    additionally merges x- and y-mirror images, for nets symmetric about
    both axes.
    """
    m = basis.m
    if mode == "none":
        return SymmetryMap(orbit=np.arange(m), n_var=m, mode=mode)
    if mode not in ("coincide", "xy"):
        raise ConfigError(f"unknown symmetry mode {mode!r}")
    pts = basis.control_points
    diam = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    if tol is None:
        tol = 1e-8 * max(diam, 1.0)
    uf = _UnionFind(m)
    tree = cKDTree(pts)
    for i, j in tree.query_pairs(tol):
        uf.union(i, j)
    if mode == "xy":
        for refl in (np.array([1.0, -1.0]), np.array([-1.0, 1.0])):
            dist, j = tree.query(pts * refl)
            bad = dist > tol
            if np.any(bad):
                raise ConfigError(
                    "design net is not mirror symmetric; use mode='coincide' or 'none'"
                )
            for i in range(m):
                uf.union(i, int(j[i]))
    roots = np.array([uf.find(i) for i in range(m)])
    _, orbit = np.unique(roots, return_inverse=True)
    return SymmetryMap(orbit=orbit, n_var=int(orbit.max()) + 1, mode=mode)
