"""Assembly and solution of the state and adjoint systems.

The stiffness matrix combines the bulk conduction term with Nitsche
interface coupling: K = K_bulk + K_n + K_n^T + beta * K_stab, where K_n
carries the consistency (average-flux) terms and K_stab the jump-penalty
Gram structure.  All basis tabulations at quadrature points are
precomputed into sparse operators once per mesh, so repeated assemblies
inside the optimizer only rescale rows by the pointwise conductivity
kappa(phi) and redo sparse products and one direct factorization.

Sensitivities with respect to level-set expansion coefficients contract
P^T (dK/dPhi_i) T without forming dK/dPhi_i: the bulk part integrates
dkappa/dphi * R_i * (grad T . grad P); interfaces adjacent to design
patches contribute the differentiated average-flux terms; the jump
penalty does not depend on kappa and drops out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from igatop.errors import AssemblyError, ModelError, SolverError
from igatop.levelset import DesignField, SmoothingParams, dirac, heaviside
from igatop.model import DesignBasis, InterfacePair, MaterialPair, MultiPatchModel
from igatop.splines import KnotVector, gauss_points_1d, tabulate

__all__ = [
    "MaterialPair",
    "kappa_at",
    "dkappa_dphi",
    "Discretization",
    "discretize",
    "assemble_bulk",
    "assemble_nitsche",
    "assemble_flux",
    "assemble_system",
    "FieldSolution",
    "solve_state",
    "solve_adjoint",
    "sensitivity_contraction",
]


def kappa_at(phi, mats: MaterialPair, sp_: SmoothingParams):
    """Pointwise conductivity from the smoothed material indicator."""
    h = heaviside(phi, sp_)
    return mats.kappa_pos * h + mats.kappa_neg * (1.0 - h)


def dkappa_dphi(phi, mats: MaterialPair, sp_: SmoothingParams):
    """Derivative of the smoothed conductivity with respect to the field value."""
    return (mats.kappa_pos - mats.kappa_neg) * dirac(phi, sp_)


def _row_scale(A: sp.csr_matrix, v: np.ndarray) -> sp.csr_matrix:
    d = np.repeat(v, np.diff(A.indptr))
    return sp.csr_matrix((A.data * d, A.indices, A.indptr), shape=A.shape)


_EDGE_PARAMS = {
    "u0": lambda t: np.column_stack([np.zeros_like(t), t]),
    "u1": lambda t: np.column_stack([np.ones_like(t), t]),
    "v0": lambda t: np.column_stack([t, np.zeros_like(t)]),
    "v1": lambda t: np.column_stack([t, np.ones_like(t)]),
}


def _edge_knots(patch, edge: str) -> KnotVector:
    return patch.knots_v if edge[0] == "u" else patch.knots_u


def _edge_tab(patch, edge: str, t: np.ndarray):
    """Tabulation along one edge plus length element and outward normal."""
    lo = _EDGE_PARAMS[edge](t)
    tab = tabulate(patch, lo)
    run_axis = 1 if edge[0] == "u" else 0
    tang = tab.jac[:, :, run_axis]
    ds = np.hypot(tang[:, 0], tang[:, 1])
    det = tab.det_j
    # rows of J^{-1}: grad u = (J11, -J01)/det, grad v = (-J10, J00)/det
    if edge[0] == "u":
        grad_dir = np.column_stack([tab.jac[:, 1, 1], -tab.jac[:, 0, 1]]) / det[:, None]
    else:
        grad_dir = np.column_stack([-tab.jac[:, 1, 0], tab.jac[:, 0, 0]]) / det[:, None]
    sign = 1.0 if edge.endswith("1") else -1.0
    normal = sign * grad_dir / np.hypot(grad_dir[:, 0], grad_dir[:, 1])[:, None]
    return tab, ds, normal


@dataclass
class EdgeQuad:
    """Precomputed interface-edge quadrature and coupling operators."""

    pair: InterfacePair
    w: np.ndarray  # gauss weight x edge length element
    phys: np.ndarray
    normal: np.ndarray  # outward from side a (the n = n^1 convention)
    En: sp.csr_matrix  # jump rows N_a - N_b (ne, ndof)
    G1n: sp.csr_matrix  # normal derivative rows of side a
    G2n: sp.csr_matrix
    region_a: str
    region_b: str
    D1: sp.csr_matrix | None  # design-basis values on side a (design side only)
    D2: sp.csr_matrix | None


@dataclass
class Discretization:
    """Per-mesh cache of quadrature, basis operators, and constraints."""

    model: MultiPatchModel
    basis: DesignBasis | None
    ndof: int
    dof_offsets: np.ndarray
    w: np.ndarray
    phys: np.ndarray
    qlabel: np.ndarray
    N: sp.csr_matrix
    Gx: sp.csr_matrix
    Gy: sp.csr_matrix
    design_mask: np.ndarray
    D: sp.csr_matrix | None
    DGx: sp.csr_matrix | None
    DGy: sp.csr_matrix | None
    kappa_fixed: np.ndarray
    edges: list[EdgeQuad]
    Ks0: sp.csr_matrix
    F0: np.ndarray
    dirichlet_idx: np.ndarray
    dirichlet_val: np.ndarray
    free: np.ndarray

    def region_mask(self, labels) -> np.ndarray:
        if isinstance(labels, str):
            labels = (labels,)
        return np.isin(self.qlabel, labels)

    def h_avg(self, labels=None) -> float:
        """Mean element size sqrt(area) over (a subset of) the mesh."""
        areas = []
        for pid, patch in enumerate(self.model.patches):
            if labels is not None and self.model.labels[pid] not in labels:
                continue
            nu = patch.knots_u.span_breaks().size - 1
            nv = patch.knots_v.span_breaks().size - 1
            mask = self.qpatch == pid
            areas.append(np.full(nu * nv, self.w[mask].sum() / (nu * nv)))
        return float(np.mean(np.sqrt(np.concatenate(areas))))

    qpatch: np.ndarray | None = None


def discretize(
    model: MultiPatchModel,
    basis: DesignBasis | None = None,
    n_per_span: int | None = None,
    breaks_u=None,
    breaks_v=None,
) -> Discretization:
    """Build the quadrature/operator cache for a refined model.

    breaks_u/breaks_v insert extra integration-cell boundaries in every
    patch (used by the annulus sweeps to resolve a narrow smoothing band
    without changing the discretization space).
    """
    sizes = [p.n_ctrl for p in model.patches]
    dof_offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    ndof = int(dof_offsets[-1])

    w_all, phys_all, lab_all, pid_all = [], [], [], []
    rowsN, rowsGx, rowsGy = [], [], []
    rowsD, rowsDx, rowsDy = [], [], []
    n_rows = 0
    m = basis.m if basis is not None else 0
    for pid, patch in enumerate(model.patches):
        from igatop.splines import patch_quadrature

        # default rule: (p+1) x (q+1) Gauss points per nonempty span
        pts, wts = patch_quadrature(patch, n_per_span, n_per_span, breaks_u, breaks_v)
        tab = tabulate(patch, pts)
        nq, nloc = tab.indices.shape
        rows = np.repeat(np.arange(nq) + n_rows, nloc)
        cols = (tab.indices + dof_offsets[pid]).ravel()
        rowsN.append((tab.values.ravel(), rows, cols))
        rowsGx.append((tab.dx.ravel(), rows, cols))
        rowsGy.append((tab.dy.ravel(), rows, cols))
        w_all.append(wts * tab.det_j)
        phys_all.append(tab.phys)
        lab_all.append(np.full(nq, model.labels[pid], dtype="<U8"))
        pid_all.append(np.full(nq, pid))
        if basis is not None and model.labels[pid] == "design":
            k = basis.patch_ids.index(pid)
            dtab = tabulate(basis.patches[k], pts)
            drows = np.repeat(np.arange(nq) + n_rows, dtab.indices.shape[1])
            dcols = (dtab.indices + int(basis.offsets[k])).ravel()
            rowsD.append((dtab.values.ravel(), drows, dcols))
            rowsDx.append((dtab.dx.ravel(), drows, dcols))
            rowsDy.append((dtab.dy.ravel(), drows, dcols))
        n_rows += nq

    def _csr(parts, shape):
        if not parts:
            return None
        data = np.concatenate([p[0] for p in parts])
        rows = np.concatenate([p[1] for p in parts])
        cols = np.concatenate([p[2] for p in parts])
        return sp.csr_matrix((data, (rows, cols)), shape=shape)

    N = _csr(rowsN, (n_rows, ndof))
    Gx = _csr(rowsGx, (n_rows, ndof))
    Gy = _csr(rowsGy, (n_rows, ndof))
    D = _csr(rowsD, (n_rows, m)) if basis is not None else None
    DGx = _csr(rowsDx, (n_rows, m)) if basis is not None else None
    DGy = _csr(rowsDy, (n_rows, m)) if basis is not None else None

    qlabel = np.concatenate(lab_all)
    design_mask = qlabel == "design"
    kappa_fixed = np.full(n_rows, np.nan)
    for label, kap in model.kappa_regions.items():
        kappa_fixed[qlabel == label] = kap

    edges = [_build_edge(model, basis, pair, dof_offsets, ndof) for pair in model.interfaces]
    if edges:
        Ks0 = sum(e.En.T @ _row_scale(e.En, e.w) for e in edges).tocsr()
    else:
        Ks0 = sp.csr_matrix((ndof, ndof))

    F0 = np.zeros(ndof)
    dir_map: dict[int, float] = {}
    for bc in model.boundaries:
        patch = model.patches[bc.patch]
        if bc.kind == "dirichlet":
            from igatop.model import edge_flat_indices

            for dof in edge_flat_indices(patch, bc.edge) + dof_offsets[bc.patch]:
                prev = dir_map.setdefault(int(dof), bc.value)
                if prev != bc.value:
                    raise ModelError(f"conflicting Dirichlet values at dof {dof}")
        elif bc.kind == "neumann":
            kv = _edge_knots(patch, bc.edge)
            t, gw = gauss_points_1d(kv)
            tab, ds, _ = _edge_tab(patch, bc.edge, t)
            rows = np.repeat(np.arange(t.size), tab.indices.shape[1])
            cols = (tab.indices + dof_offsets[bc.patch]).ravel()
            Ne = sp.csr_matrix((tab.values.ravel(), (rows, cols)), shape=(t.size, ndof))
            F0 += Ne.T @ (gw * ds * bc.value)
        # insulated edges contribute nothing

    dirichlet_idx = np.array(sorted(dir_map), dtype=int)
    dirichlet_val = np.array([dir_map[i] for i in dirichlet_idx])
    free = np.setdiff1d(np.arange(ndof), dirichlet_idx)

    return Discretization(
        model=model,
        basis=basis,
        ndof=ndof,
        dof_offsets=dof_offsets,
        w=np.concatenate(w_all),
        phys=np.concatenate(phys_all),
        qlabel=qlabel,
        N=N,
        Gx=Gx,
        Gy=Gy,
        design_mask=design_mask,
        D=D,
        DGx=DGx,
        DGy=DGy,
        kappa_fixed=kappa_fixed,
        edges=edges,
        Ks0=Ks0,
        F0=F0,
        dirichlet_idx=dirichlet_idx,
        dirichlet_val=dirichlet_val,
        free=free,
        qpatch=np.concatenate(pid_all),
    )


def _build_edge(model, basis, pair: InterfacePair, dof_offsets, ndof) -> EdgeQuad:
    pa, pb = model.patches[pair.patch_a], model.patches[pair.patch_b]
    kv = _edge_knots(pa, pair.edge_a)
    t, gw = gauss_points_1d(kv)
    ta, tb = t, (1.0 - t if pair.reversed_ else t)

    tab_a, ds, normal = _edge_tab(pa, pair.edge_a, ta)
    tab_b, _, _ = _edge_tab(pb, pair.edge_b, tb)
    if np.max(np.abs(tab_a.phys - tab_b.phys)) > 1e-8 * max(1.0, model.diameter()):
        raise ModelError(
            f"interface ({pair.patch_a},{pair.edge_a})-({pair.patch_b},{pair.edge_b}) "
            "quadrature points do not coincide"
        )
    ne = t.size

    def scatter(tab, pid, data):
        rows = np.repeat(np.arange(ne), tab.indices.shape[1])
        cols = (tab.indices + dof_offsets[pid]).ravel()
        return sp.csr_matrix((data.ravel(), (rows, cols)), shape=(ne, ndof))

    Na = scatter(tab_a, pair.patch_a, tab_a.values)
    Nb = scatter(tab_b, pair.patch_b, tab_b.values)
    G1n = scatter(tab_a, pair.patch_a, normal[:, :1] * tab_a.dx + normal[:, 1:] * tab_a.dy)
    G2n = scatter(tab_b, pair.patch_b, normal[:, :1] * tab_b.dx + normal[:, 1:] * tab_b.dy)

    def design_rows(pid, tt, edge):
        if basis is None or model.labels[pid] != "design":
            return None
        k = basis.patch_ids.index(pid)
        dtab = tabulate(basis.patches[k], _EDGE_PARAMS[edge](tt), check_jacobian=False)
        rows = np.repeat(np.arange(ne), dtab.indices.shape[1])
        cols = (dtab.indices + int(basis.offsets[k])).ravel()
        return sp.csr_matrix((dtab.values.ravel(), (rows, cols)), shape=(ne, basis.m))

    return EdgeQuad(
        pair=pair,
        w=gw * ds,
        phys=tab_a.phys,
        normal=normal,
        En=(Na - Nb).tocsr(),
        G1n=G1n,
        G2n=G2n,
        region_a=model.labels[pair.patch_a],
        region_b=model.labels[pair.patch_b],
        D1=design_rows(pair.patch_a, ta, pair.edge_a),
        D2=design_rows(pair.patch_b, tb, pair.edge_b),
    )


# ---------------------------------------------------------------------------
# conductivity fields and assembly
# ---------------------------------------------------------------------------


def _kappa_bulk(disc, field, sp_, override) -> np.ndarray:
    kappa = disc.kappa_fixed.copy()
    override = override or {}
    for label, val in override.items():
        kappa[disc.region_mask(label)] = val
    nan_mask = np.isnan(kappa)
    if np.any(nan_mask & ~disc.design_mask):
        raise AssemblyError("missing conductivity for a non-design region")
    if np.any(nan_mask):
        if field is None:
            raise AssemblyError("design region requires a field or an override")
        phi = disc.D @ field.coeffs
        kappa[nan_mask] = kappa_at(phi[nan_mask], disc.model.design_pair, sp_)
    return kappa


def _kappa_edge_side(disc, edge: EdgeQuad, side: str, field, sp_, override):
    region = edge.region_a if side == "a" else edge.region_b
    override = override or {}
    if region in override:
        return np.full(edge.w.size, float(override[region]))
    if region != "design":
        return np.full(edge.w.size, disc.model.kappa_regions[region])
    if field is None:
        raise AssemblyError("design-adjacent interface requires a field or an override")
    Dside = edge.D1 if side == "a" else edge.D2
    return kappa_at(Dside @ field.coeffs, disc.model.design_pair, sp_)


def assemble_bulk(disc: Discretization, kappa_q: np.ndarray) -> sp.csr_matrix:
    """Bulk conduction stiffness for a pointwise conductivity vector."""
    wk = disc.w * kappa_q
    return (disc.Gx.T @ _row_scale(disc.Gx, wk) + disc.Gy.T @ _row_scale(disc.Gy, wk)).tocsr()


def assemble_nitsche(
    disc: Discretization,
    field: DesignField | None = None,
    sp_: SmoothingParams | None = None,
    override: dict | None = None,
):
    """Interface consistency matrix K_n and penalty matrix K_s (= beta * Ks0)."""
    gamma = disc.model.gamma
    ndof = disc.ndof
    Kn = sp.csr_matrix((ndof, ndof))
    for edge in disc.edges:
        k1 = _kappa_edge_side(disc, edge, "a", field, sp_, override)
        k2 = _kappa_edge_side(disc, edge, "b", field, sp_, override)
        flux = _row_scale(edge.G1n, gamma * k1) + _row_scale(edge.G2n, (1.0 - gamma) * k2)
        Kn = Kn - edge.En.T @ _row_scale(flux.tocsr(), edge.w)
    Ks = (disc.model.beta * disc.Ks0).tocsr()
    return Kn.tocsr(), Ks


def assemble_flux(disc: Discretization) -> np.ndarray:
    """Applied-flux load vector (zero for insulated/Dirichlet-only problems)."""
    return disc.F0.copy()


def assemble_system(
    disc: Discretization,
    field: DesignField | None = None,
    sp_: SmoothingParams | None = None,
    override: dict | None = None,
):
    """Full stiffness K = K_b + K_n + K_n^T + K_s and load vector."""
    kappa_q = _kappa_bulk(disc, field, sp_, override)
    K = assemble_bulk(disc, kappa_q)
    Kn, Ks = assemble_nitsche(disc, field, sp_, override)
    K = (K + Kn + Kn.T + Ks).tocsr()
    return K, assemble_flux(disc)


# ---------------------------------------------------------------------------
# solves
# ---------------------------------------------------------------------------


@dataclass
class FieldSolution:
    """Solution coefficients plus the factorized constrained system."""

    disc: Discretization
    values: np.ndarray  # (ndof,)
    K: sp.csr_matrix
    lu: object

    def at_quadrature(self):
        return self.disc.N @ self.values

    def grad_at_quadrature(self):
        return self.disc.Gx @ self.values, self.disc.Gy @ self.values


def _constrained_factor(disc: Discretization, K: sp.csr_matrix):
    free = disc.free
    Kff = K[free][:, free].tocsc()
    try:
        lu = splu(Kff)
    except RuntimeError as exc:
        raise SolverError(
            "singular stiffness system (suspected untagged boundary or missing "
            f"Dirichlet data): {exc}"
        ) from exc
    return lu


def _constrained_solve(disc, K, lu, F, dirichlet_val=None, transpose=False):
    free = disc.free
    dval = disc.dirichlet_val if dirichlet_val is None else dirichlet_val
    rhs = F[free]
    if disc.dirichlet_idx.size and np.any(dval != 0.0):
        rhs = rhs - K[free][:, disc.dirichlet_idx] @ dval
    Kff = K[free][:, free]
    A = Kff.T if transpose else Kff
    trans = "T" if transpose else "N"
    x_f = lu.solve(rhs, trans=trans)
    for _ in range(2):  # iterative refinement against penalty-scale roundoff
        x_f += lu.solve(rhs - A @ x_f, trans=trans)
    res = np.linalg.norm(A @ x_f - rhs)
    # backward-error bound: the Nitsche penalty makes entries of K huge, so
    # the residual is measured against |K| |x| + |rhs|
    scale = np.linalg.norm(rhs) + abs(A).max() * np.linalg.norm(x_f)
    if res > 1e-10 * max(scale, 1.0):
        raise SolverError(f"linear solve residual {res:.3e} exceeds tolerance")
    x = np.zeros(disc.ndof)
    x[free] = x_f
    if disc.dirichlet_idx.size:
        x[disc.dirichlet_idx] = dval
    return x


def solve_state(
    disc: Discretization,
    field: DesignField | None = None,
    sp_: SmoothingParams | None = None,
    override: dict | None = None,
) -> FieldSolution:
    """Assemble and solve the constrained conduction system."""
    K, F = assemble_system(disc, field, sp_, override)
    lu = _constrained_factor(disc, K)
    T = _constrained_solve(disc, K, lu, F)
    return FieldSolution(disc=disc, values=T, K=K, lu=lu)


def solve_adjoint(state: FieldSolution, load_q: np.ndarray) -> np.ndarray:
    """Adjoint coefficients for a per-quadrature load -dJ_b/dT.

    Solves K^T P = integral(N^T load) with homogeneous Dirichlet data,
    reusing the state factorization (transposed solve).
    """
    disc = state.disc
    F_adj = disc.N.T @ (disc.w * load_q)
    return _constrained_solve(
        disc, state.K, state.lu, F_adj,
        dirichlet_val=np.zeros_like(disc.dirichlet_val), transpose=True,
    )


def sensitivity_contraction(
    disc: Discretization,
    field: DesignField,
    sp_: SmoothingParams,
    T: np.ndarray,
    P: np.ndarray,
) -> np.ndarray:
    """P^T (dK/dPhi_i) T for every design coefficient i.

    Bulk term plus the differentiated Nitsche consistency terms on
    design-adjacent interfaces; the jump penalty has no kappa dependence.
    """
    if disc.D is None:
        raise AssemblyError("discretization was built without a design basis")
    mats = disc.model.design_pair
    phi = disc.D @ field.coeffs
    dk = np.zeros_like(phi)
    dk[disc.design_mask] = dkappa_dphi(phi[disc.design_mask], mats, sp_)
    tx, ty = disc.Gx @ T, disc.Gy @ T
    px, py = disc.Gx @ P, disc.Gy @ P
    g = disc.D.T @ (disc.w * dk * (tx * px + ty * py))

    gamma = disc.model.gamma
    for edge in disc.edges:
        if edge.D1 is None and edge.D2 is None:
            continue
        EP = edge.En @ P
        ET = edge.En @ T
        for Dside, Gn, weight in (
            (edge.D1, edge.G1n, gamma),
            (edge.D2, edge.G2n, 1.0 - gamma),
        ):
            if Dside is None:
                continue
            dks = dkappa_dphi(Dside @ field.coeffs, mats, sp_)
            tn = Gn @ T
            pn = Gn @ P
            g = g - Dside.T @ (edge.w * weight * dks * (EP * tn + ET * pn))
    return np.asarray(g).ravel()
