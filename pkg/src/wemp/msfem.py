"""Wavelet-edge multiscale space on the two-level mesh.

Construction stages, one per public function:

1. partition of unity: per coarse cell, diffusivity-harmonic extensions of the
   affine corner data, assembled into global hat-like functions chi_i;
2. Haar functions on the four edges of each vertex neighborhood omega_i,
   orthonormal in L2 of the edge;
3. harmonic lifts of the edge data into omega_i and one Neumann corrector per
   neighborhood driven by the weighted coefficient kappa_tilde;
4. global space: columns chi_i * (local function), boundary dofs zeroed,
   near-dependent columns dropped by a pivoted Gram filter, then the projected
   mass and stiffness matrices.

Only interior coarse vertices generate columns, so every basis function
vanishes on the domain boundary.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TwoLevelMesh, CoarseNeighborhood, coarse_neighborhood
from .fem import (CoefficientField, OperatorPair, assemble_operators,
                  assemble_submesh_operators, triangle_geometry, solve_spd,
                  factorized_spd)

RANK_FILTER_TOL = 1e-10


@dataclass(frozen=True)
class PartitionOfUnity:
    """Rows are the chi_i, one per coarse vertex, over all fine nodes."""

    chi: sp.csr_matrix

    def vertex_function(self, vertex: int) -> np.ndarray:
        return self.chi[vertex].toarray().ravel()


def build_partition_of_unity(mesh: TwoLevelMesh,
                             kappa: CoefficientField) -> PartitionOfUnity:
    """Harmonic extensions of the affine corner data, cell by cell.

    On each coarse cell the four corner functions take value 1 at one corner,
    0 at the others, vary linearly along the cell edges, and extend
    kappa-harmonically inside. Their sum has boundary data 1, so it extends
    to the constant 1: the chi_i form a partition of unity.
    """
    C = mesh.coarse_divisions
    R = mesh.refinements_per_coarse
    n_cv = (C + 1) ** 2
    per_vertex_nodes = [[] for _ in range(n_cv)]
    per_vertex_vals = [[] for _ in range(n_cv)]

    for cy in range(C):
        for cx in range(C):
            gx = np.arange(cx * R, (cx + 1) * R)
            gy = np.arange(cy * R, (cy + 1) * R)
            fine_cells = mesh.cell_index(*np.meshgrid(gx, gy)).ravel()
            local_nodes, _, A = assemble_submesh_operators(
                mesh, kappa, np.sort(fine_cells))
            coords = mesh.fine_node_coords[local_nodes]
            x0, y0 = cx * mesh.H, cy * mesh.H
            xi = (coords[:, 0] - x0) / mesh.H
            eta = (coords[:, 1] - y0) / mesh.H
            on_bnd = ((np.abs(xi) < 1e-12) | (np.abs(xi - 1) < 1e-12)
                      | (np.abs(eta) < 1e-12) | (np.abs(eta - 1) < 1e-12))
            interior = np.where(~on_bnd)[0]
            boundary = np.where(on_bnd)[0]
            A_ii = A[interior][:, interior].tocsc()
            A_ib = A[interior][:, boundary]
            solve = factorized_spd(A_ii) if interior.size else None

            corner_vertices = (mesh.coarse_vertex_index(cx, cy),
                               mesh.coarse_vertex_index(cx + 1, cy),
                               mesh.coarse_vertex_index(cx, cy + 1),
                               mesh.coarse_vertex_index(cx + 1, cy + 1))
            corner_data = ((1 - xi) * (1 - eta), xi * (1 - eta),
                           (1 - xi) * eta, xi * eta)
            for vert, data in zip(corner_vertices, corner_data):
                values = data.copy()
                if interior.size:
                    values[interior] = solve(-(A_ib @ data[boundary]))
                per_vertex_nodes[vert].append(local_nodes)
                per_vertex_vals[vert].append(values)

    rows, cols, vals = [], [], []
    for vert in range(n_cv):
        if not per_vertex_nodes[vert]:
            continue
        nodes = np.concatenate(per_vertex_nodes[vert])
        values = np.concatenate(per_vertex_vals[vert])
        # cells sharing an edge contribute identical values there; keep one
        uniq, first = np.unique(nodes, return_index=True)
        rows.append(np.full(uniq.size, vert))
        cols.append(uniq)
        vals.append(values[first])
    chi = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_cv, mesh.n_nodes)).tocsr()
    return PartitionOfUnity(chi=chi)


def edge_wavelets(level: int, edge_coords: np.ndarray) -> np.ndarray:
    """Haar family on one straight edge, as per-fine-segment values.

    edge_coords is the ordered (n_seg + 1, 2) node coordinate array of the
    edge. Returns a (2^level, n_seg) array: the normalized constant first,
    then generations g = 1..level with 2^(g-1) functions each, all
    orthonormal in L2 of the edge. Requires the segment count to be a
    multiple of 2^level so the dyadic breakpoints land on fine nodes.
    """
    if level < 0:
        raise ValueError("level must be nonnegative")
    coords = np.asarray(edge_coords, dtype=np.float64)
    n_seg = coords.shape[0] - 1
    seg_len = np.linalg.norm(np.diff(coords, axis=0), axis=1)
    if n_seg < 1 or np.ptp(seg_len) > 1e-12 * seg_len[0]:
        raise ValueError("edge must consist of uniform fine segments")
    n_func = 2 ** level
    if n_seg < n_func or n_seg % n_func != 0:
        raise ValueError(
            f"edge with {n_seg} segments cannot carry level {level} "
            f"(needs a multiple of {n_func})")
    length = float(seg_len.sum())
    W = np.zeros((n_func, n_seg))
    W[0] = 1.0 / np.sqrt(length)
    row = 1
    for g in range(1, level + 1):
        n_blocks = 2 ** (g - 1)
        block = n_seg // n_blocks
        amp = np.sqrt(n_blocks / length)
        for p in range(n_blocks):
            lo = p * block
            W[row, lo:lo + block // 2] = amp
            W[row, lo + block // 2:lo + block] = -amp
            row += 1
    return W


def segments_to_nodes(seg_values: np.ndarray) -> np.ndarray:
    """Nodal trace data from per-segment values: adjacent-segment averages,
    with an implicit zero outside the edge (so endpoints get half values)."""
    padded = np.concatenate(([0.0], np.asarray(seg_values, dtype=np.float64),
                             [0.0]))
    return 0.5 * (padded[:-1] + padded[1:])


def neighborhood_boundary_nodes(hood: CoarseNeighborhood) -> np.ndarray:
    """Sorted global node indices of the neighborhood's outer boundary."""
    return np.unique(np.concatenate(hood.boundary_edges))


class _LocalSolver:
    """Shared assembly and factorization for one neighborhood's local solves."""

    def __init__(self, mesh: TwoLevelMesh, kappa: CoefficientField,
                 hood: CoarseNeighborhood):
        self.mesh = mesh
        self.hood = hood
        self.local_nodes, self.M, self.A = assemble_submesh_operators(
            mesh, kappa, hood.fine_cells)
        remap = {g: i for i, g in enumerate(self.local_nodes)}
        bnd_global = neighborhood_boundary_nodes(hood)
        self.bnd_local = np.array([remap[g] for g in bnd_global])
        mask = np.ones(self.local_nodes.size, dtype=bool)
        mask[self.bnd_local] = False
        self.int_local = np.where(mask)[0]
        self._A_ii = self.A[self.int_local][:, self.int_local].tocsc()
        self._A_ib = self.A[self.int_local][:, self.bnd_local]
        self._dirichlet = factorized_spd(self._A_ii)
        self._neumann = None

    def lift(self, trace: np.ndarray) -> np.ndarray:
        """Harmonic extension of nodal boundary data into the neighborhood.

        trace is aligned with neighborhood_boundary_nodes; the result is
        aligned with the sorted local node list.
        """
        trace = np.asarray(trace, dtype=np.float64)
        if trace.size != self.bnd_local.size:
            raise ValueError("trace length does not match the boundary nodes")
        v = np.zeros(self.local_nodes.size)
        v[self.bnd_local] = trace
        if self.int_local.size:
            v[self.int_local] = self._dirichlet(-(self._A_ib @ trace))
        return v

    def corrector(self, kappa_tilde: np.ndarray) -> np.ndarray:
        """Zero-mean solution of the pure Neumann problem with bulk source
        kappa_tilde (normalized to unit integral) and constant outflux
        balancing it."""
        mesh = self.mesh
        h = mesh.h
        cells = self.hood.fine_cells
        kt = np.asarray(kappa_tilde, dtype=np.float64)[cells]
        total = float(kt.sum()) * h * h
        if total <= 0:
            raise ValueError("kappa_tilde must have positive mass on omega_i")

        # bulk load: per-triangle constant source, exact P1 integration
        tri_idx = np.sort(np.concatenate([2 * cells, 2 * cells + 1]))
        tris = mesh.fine_triangles[tri_idx]
        remap = np.full(mesh.n_nodes, -1, dtype=np.int64)
        remap[self.local_nodes] = np.arange(self.local_nodes.size)
        tris_local = remap[tris]
        g_tri = np.repeat(kt / total, 2)
        area = h * h / 2.0
        rhs = np.zeros(self.local_nodes.size)
        np.add.at(rhs, tris_local.ravel(),
                  np.repeat(g_tri * area / 3.0, 3))

        # boundary flux: constant 1/|boundary|, trapezoid on the closed loop
        (x0, x1), (y0, y1) = self.hood.node_range
        perimeter = 2.0 * ((x1 - x0) + (y1 - y0)) * h
        q = 1.0 / perimeter
        for side in self.hood.boundary_edges:
            side_local = remap[side]
            np.add.at(rhs, side_local[:-1], -q * h / 2.0)
            np.add.at(rhs, side_local[1:], -q * h / 2.0)

        residual = abs(rhs.sum())
        if residual > 1e-10:
            raise ValueError(
                f"Neumann data incompatible: net load {residual:.3e}")

        # zero-mean gauge through a bordered system
        m = np.asarray(self.M @ np.ones(self.local_nodes.size))
        K = sp.bmat([[self.A, m[:, None]], [m[None, :], None]]).tocsc()
        if self._neumann is None:
            self._neumann = spla.splu(K)
        sol = self._neumann.solve(np.concatenate([rhs, [0.0]]))
        full_rhs = np.concatenate([rhs, [0.0]])
        res = np.linalg.norm(K @ sol - full_rhs)
        if res > 1e-10 * max(np.linalg.norm(full_rhs), 1.0):
            raise RuntimeError(f"Neumann solve residual {res:.3e} too large")
        return sol[:-1]


def harmonic_lift(mesh: TwoLevelMesh, kappa: CoefficientField,
                  hood: CoarseNeighborhood, trace: np.ndarray) -> np.ndarray:
    """One-off harmonic extension; see _LocalSolver.lift for conventions."""
    return _LocalSolver(mesh, kappa, hood).lift(trace)


def neumann_corrector(mesh: TwoLevelMesh, kappa: CoefficientField,
                      hood: CoarseNeighborhood,
                      kappa_tilde: np.ndarray) -> np.ndarray:
    """One-off Neumann corrector; see _LocalSolver.corrector."""
    return _LocalSolver(mesh, kappa, hood).corrector(kappa_tilde)


def weighted_coefficient(mesh: TwoLevelMesh, kappa: CoefficientField,
                         pou: PartitionOfUnity) -> np.ndarray:
    """Per-fine-cell field H^2 kappa sum_i |grad chi_i|^2.

    Gradients of the P1 chi_i are per-triangle constants; the two triangle
    values of each cell are averaged.
    """
    areas, grads = triangle_geometry(mesh.fine_node_coords, mesh.fine_triangles)
    n_tri = mesh.fine_triangles.shape[0]
    sum_sq = np.zeros(n_tri)
    chi = pou.chi.tocsr()
    for vert in range(chi.shape[0]):
        row = chi.getrow(vert)
        if row.nnz == 0:
            continue
        support = np.zeros(mesh.n_nodes)
        support[row.indices] = row.data
        nodal = support[mesh.fine_triangles]          # (n_tri, 3)
        active = np.any(nodal != 0.0, axis=1)
        vec = np.einsum("ti,tik->tk", nodal[active], grads[active])
        sum_sq[active] += vec[:, 0] ** 2 + vec[:, 1] ** 2
    kappa_tri = np.repeat(kappa.values, 2)
    val_tri = mesh.H ** 2 * kappa_tri * sum_sq
    return 0.5 * (val_tri[0::2] + val_tri[1::2])


def eta_indicator(H: float, level: int, kappa: CoefficientField,
                  kappa_tilde: np.ndarray) -> float:
    """Coarse-scale accuracy indicator H max(kappa_tilde)^(1/2)
    + 2^(-level/2) max of kappa on cells touching the coarse skeleton."""
    n = int(round(np.sqrt(kappa.values.size)))
    if n * n != kappa.values.size:
        raise ValueError("kappa field is not square")
    R = int(round(n * H))
    vals = kappa.values.reshape(n, n)
    if R >= 1:
        ix = np.arange(n)
        on_skel = (ix % R == 0) | (ix % R == R - 1)
        edge_mask = on_skel[None, :] | on_skel[:, None]
        edge_max = float(vals[edge_mask].max())
    else:
        edge_max = float(vals.max())
    return float(H * np.sqrt(kappa_tilde.max()) + 2.0 ** (-level / 2.0) * edge_max)


@dataclass(frozen=True)
class MultiscaleSpace:
    level: int
    basis: sp.csr_matrix            # fine dofs x ms dofs
    ms_mass: np.ndarray             # dense, SPD after filtering
    ms_stiffness: np.ndarray
    column_info: tuple              # (vertex, kind, side, wavelet index) per column
    fine_ops: OperatorPair
    mesh: TwoLevelMesh
    kappa: CoefficientField
    pou: PartitionOfUnity
    kappa_tilde: np.ndarray = field(repr=False, default=None)

    @property
    def n_columns(self) -> int:
        return self.basis.shape[1]

    def lift(self, coeffs: np.ndarray) -> np.ndarray:
        """Fine-nodal view of an ms-coefficient vector (or stack of them)."""
        return self.basis @ coeffs

    def project(self, v: np.ndarray) -> np.ndarray:
        return edge_projection(self, v)


def _vertex_columns(mesh, kappa, pou, level, vertex, kappa_tilde):
    """All basis columns of one neighborhood: 4 * 2^level lifts + corrector."""
    hood = coarse_neighborhood(mesh, vertex)
    solver = _LocalSolver(mesh, kappa, hood)
    bnd_nodes = neighborhood_boundary_nodes(hood)
    bnd_pos = {g: i for i, g in enumerate(bnd_nodes)}
    chi_local = pou.vertex_function(vertex)[solver.local_nodes]

    cols = []
    info = []
    for side_idx, side in enumerate(hood.boundary_edges):
        coords = mesh.fine_node_coords[side]
        for w_idx, w in enumerate(edge_wavelets(level, coords)):
            trace = np.zeros(bnd_nodes.size)
            nodal = segments_to_nodes(w)
            for node, value in zip(side, nodal):
                trace[bnd_pos[node]] += value
            lift = solver.lift(trace)
            cols.append(chi_local * lift)
            info.append((vertex, "edge", side_idx, w_idx))
    corr = solver.corrector(kappa_tilde)
    cols.append(chi_local * corr)
    info.append((vertex, "corrector", -1, 0))
    return solver.local_nodes, cols, info


def _pivoted_gram_filter(gram: np.ndarray, tol: float) -> np.ndarray:
    """Column subset selection by diagonally pivoted Cholesky.

    Stops when the best remaining residual diagonal, relative to the
    column's own squared norm, drops to tol. Returns kept indices, sorted.
    """
    n = gram.shape[0]
    d0 = gram.diagonal().copy()
    floor = tol * d0.max()
    if np.any(d0 < -floor):
        raise RuntimeError("Gram matrix has a negative diagonal entry")
    # identically vanishing products chi_i * v (possible in degenerate
    # refinement limits) simply drop out of the candidate set
    d0 = np.maximum(d0, floor)
    d = gram.diagonal().copy()
    R = np.zeros((n, n))
    chosen = []
    remaining = np.ones(n, dtype=bool)
    for k in range(n):
        ratio = np.where(remaining, d / d0, -np.inf)
        i = int(np.argmax(ratio))
        if ratio[i] <= tol:
            break
        piv = np.sqrt(d[i])
        col = gram[:, i] - R[:k].T @ R[:k, i]
        R[k] = col / piv
        d = d - R[k] ** 2
        chosen.append(i)
        remaining[i] = False
    return np.sort(np.array(chosen, dtype=np.int64))


def assemble_space(mesh: TwoLevelMesh, kappa: CoefficientField,
                   pou: PartitionOfUnity, level: int,
                   workers: int = 1) -> MultiscaleSpace:
    """Global multiscale space over the interior coarse vertices."""
    ops = assemble_operators(mesh, kappa)
    kappa_tilde = weighted_coefficient(mesh, kappa, pou)
    vertices = np.where(mesh.coarse_vertex_interior)[0]
    if vertices.size == 0:
        raise ValueError("mesh has no interior coarse vertices")

    def task(vertex):
        return _vertex_columns(mesh, kappa, pou, level, vertex, kappa_tilde)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, vertices))
    else:
        results = [task(v) for v in vertices]

    interior_mask = np.zeros(mesh.n_nodes, dtype=bool)
    interior_mask[ops.free_dofs] = True
    rows, cols, vals = [], [], []
    info = []
    col_id = 0
    for local_nodes, col_list, info_list in results:
        keep = interior_mask[local_nodes]
        kept_rows = local_nodes[keep]
        for col_vals, meta in zip(col_list, info_list):
            data = col_vals[keep]
            nz = data != 0.0
            rows.append(kept_rows[nz])
            cols.append(np.full(int(nz.sum()), col_id))
            vals.append(data[nz])
            info.append(meta)
            col_id += 1
    raw = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.n_nodes, col_id)).tocsr()

    gram = (raw.T @ (ops.mass @ raw)).toarray()
    gram = 0.5 * (gram + gram.T)
    kept = _pivoted_gram_filter(gram, RANK_FILTER_TOL)
    if kept.size < 0.5 * col_id:
        raise RuntimeError(
            f"rank filter kept only {kept.size} of {col_id} columns; "
            "the local problems look degenerate")
    basis = raw[:, kept].tocsr()
    ms_mass = (basis.T @ (ops.mass @ basis)).toarray()
    ms_stiff = (basis.T @ (ops.stiffness @ basis)).toarray()
    ms_mass = 0.5 * (ms_mass + ms_mass.T)
    ms_stiff = 0.5 * (ms_stiff + ms_stiff.T)
    return MultiscaleSpace(level=level, basis=basis, ms_mass=ms_mass,
                           ms_stiffness=ms_stiff,
                           column_info=tuple(info[i] for i in kept),
                           fine_ops=ops, mesh=mesh, kappa=kappa, pou=pou,
                           kappa_tilde=kappa_tilde)


def edge_projection(space: MultiscaleSpace, v: np.ndarray) -> np.ndarray:
    """Mass-orthogonal projection of a fine-nodal vector onto the space."""
    rhs = space.basis.T @ (space.fine_ops.mass @ v)
    return solve_spd(space.ms_mass, rhs)


def trace_projection(space: MultiscaleSpace, v: np.ndarray) -> np.ndarray:
    """Edge-trace construction of the projection, sum_i chi_i (lift of the
    per-edge L2 wavelet projection of v's trace). Diagnostic alternative to
    edge_projection; returns a fine-nodal vector."""
    mesh = space.mesh
    out = np.zeros(mesh.n_nodes)
    for vertex in np.where(mesh.coarse_vertex_interior)[0]:
        hood = coarse_neighborhood(mesh, vertex)
        solver = _LocalSolver(mesh, space.kappa, hood)
        bnd_nodes = neighborhood_boundary_nodes(hood)
        bnd_pos = {g: i for i, g in enumerate(bnd_nodes)}
        trace = np.zeros(bnd_nodes.size)
        for side in hood.boundary_edges:
            coords = mesh.fine_node_coords[side]
            W = edge_wavelets(space.level, coords)
            h_e = np.linalg.norm(coords[1] - coords[0])
            v_nodes = v[side]
            seg_avg = 0.5 * (v_nodes[:-1] + v_nodes[1:])
            proj_seg = W.T @ (W @ (seg_avg * h_e))
            nodal = segments_to_nodes(proj_seg)
            for node, value in zip(side, nodal):
                trace[bnd_pos[node]] += value
        lift = solver.lift(trace)
        chi_local = space.pou.vertex_function(vertex)[solver.local_nodes]
        out[solver.local_nodes] += chi_local * lift
    boundary = np.setdiff1d(np.arange(mesh.n_nodes), space.fine_ops.free_dofs)
    out[boundary] = 0.0
    return out


def write_basis_triplets(space: MultiscaleSpace, path) -> None:
    """Sparse triplet text dump: header "# rows cols nnz", then
    "row col value" lines in row-major order."""
    coo = space.basis.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {v:.17g}\n")
