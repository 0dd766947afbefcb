"""Structured box meshes, Taylor-Hood DOF classification and interface jumps.

Velocity nodes live on the Q2 grid (spacing ``h/2``) and pressure nodes on
the Q1 grid (spacing ``h``).  Nodes are numbered lexicographically with the
first axis slowest (C order), and a velocity DOF is ``node * dim + comp``.

A velocity node that is not on the outer boundary is classified by the
number ``m`` of subdomain interface planes it lies on: ``m = 0`` interior,
``m = 1`` face, ``m = 2`` edge (3D only), ``m = dim`` vertex.  The number of
subdomains sharing the node is ``2**m``.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph  # noqa: F401
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)

FACE, EDGE, VERTEX = "face", "edge", "vertex"
PRIMAL_SPECS = ("vertices", "vertices+edges")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BoxMesh:
    dim: int
    subs: tuple[int, ...]
    ratio: int

    @property
    def n_sub(self) -> int:
        return int(np.prod(self.subs))

    @property
    def n_elem_axis(self) -> tuple[int, ...]:
        return tuple(s * self.ratio for s in self.subs)

    @property
    def n_elem(self) -> int:
        return int(np.prod(self.n_elem_axis))

    @property
    def h_axis(self) -> np.ndarray:
        return 1.0 / np.asarray(self.n_elem_axis, dtype=float)

    @property
    def h(self) -> float:
        """Element width (the largest one if the axes differ)."""
        return float(self.h_axis.max())

    @property
    def elem_volume(self) -> float:
        return float(np.prod(self.h_axis))

    @property
    def H(self) -> float:
        return float(max(1.0 / s for s in self.subs))

    @property
    def vshape(self) -> tuple[int, ...]:
        return tuple(2 * n + 1 for n in self.n_elem_axis)

    @property
    def pshape(self) -> tuple[int, ...]:
        return tuple(n + 1 for n in self.n_elem_axis)

    @property
    def n_vnodes(self) -> int:
        return int(np.prod(self.vshape))

    @property
    def n_pnodes(self) -> int:
        return int(np.prod(self.pshape))

    @property
    def local_vshape(self) -> tuple[int, ...]:
        return (2 * self.ratio + 1,) * self.dim

    @property
    def local_pshape(self) -> tuple[int, ...]:
        return (self.ratio + 1,) * self.dim

    def velocity_coords(self) -> np.ndarray:
        axes = [np.linspace(0.0, 1.0, n) for n in self.vshape]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def pressure_coords(self) -> np.ndarray:
        axes = [np.linspace(0.0, 1.0, n) for n in self.pshape]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def sub_index(self, i: int) -> tuple[int, ...]:
        return tuple(int(k) for k in np.unravel_index(i, self.subs))

    def local_vnodes_global(self, i: int) -> np.ndarray:
        """Global ids of the ``(2r+1)^dim`` velocity nodes of subdomain ``i``."""
        s = self.sub_index(i)
        r2 = 2 * self.ratio
        rng = [np.arange(s[k] * r2, s[k] * r2 + r2 + 1) for k in range(self.dim)]
        return np.ravel_multi_index(np.meshgrid(*rng, indexing="ij"), self.vshape).ravel()

    def local_pnodes_global(self, i: int) -> np.ndarray:
        s = self.sub_index(i)
        r = self.ratio
        rng = [np.arange(s[k] * r, s[k] * r + r + 1) for k in range(self.dim)]
        return np.ravel_multi_index(np.meshgrid(*rng, indexing="ij"), self.pshape).ravel()


def build_mesh(dim: int, subs, ratio: int) -> BoxMesh:
    """Unit square/cube split into ``prod(subs)`` boxes of ``ratio^dim`` elements."""
    if dim not in (2, 3):
        raise ConfigError(f"dim must be 2 or 3, got {dim}")
    if isinstance(subs, int):
        subs = (subs,) * dim
    subs = tuple(int(s) for s in subs)
    if len(subs) != dim:
        raise ConfigError(f"need {dim} subdomain counts, got {subs}")
    if any(s < 1 for s in subs):
        raise ConfigError(f"subdomain counts must be positive, got {subs}")
    if ratio < 2:
        raise ConfigError(f"H/h ratio must be at least 2, got {ratio}")
    return BoxMesh(dim, subs, int(ratio))


def _interface_flags(idx: np.ndarray, period: int, n_max: int) -> np.ndarray:
    return (idx % period == 0) & (idx > 0) & (idx < n_max)


@dataclass
class SubdomainDofs:
    """Local DOF layout of one subdomain in the (possibly transformed) basis.

    Local velocity unknowns are ordered ``[I, Delta, Pi]``; ``T`` maps them to
    nodal DOFs ``local_node * dim + comp`` over all ``(2r+1)^dim`` local nodes
    (rows of boundary nodes are empty).
    """

    index: int
    n_I: int
    n_D: int
    n_P: int
    T: sp.csr_matrix
    interior_nodal: np.ndarray  # nodal local dof of each I unknown
    dual_key: np.ndarray  # global dual-coordinate key of each Delta unknown
    dual_node: np.ndarray  # global velocity node that supports each Delta unknown
    primal_global: np.ndarray  # global primal index of each Pi unknown
    pI_local: np.ndarray  # local pressure node ids (interior)
    pG_local: np.ndarray  # local pressure node ids on Gamma
    pG_global: np.ndarray  # their index in Q_Gamma

    @property
    def n_vel(self) -> int:
        return self.n_I + self.n_D + self.n_P

    @property
    def sl_I(self) -> slice:
        return slice(0, self.n_I)

    @property
    def sl_D(self) -> slice:
        return slice(self.n_I, self.n_I + self.n_D)

    @property
    def sl_P(self) -> slice:
        return slice(self.n_I + self.n_D, self.n_vel)


@dataclass
class DofPartition:
    mesh: BoxMesh
    primal_spec: str
    subdomains: list[SubdomainDofs]
    n_primal: int
    n_vertices: int
    n_edges: int
    edge_len: int
    n_pgamma: int
    pgamma_nodes: np.ndarray  # global pressure node id of each Q_Gamma entry
    node_class: np.ndarray  # per global velocity node: -1 boundary, else m
    primal_kind: np.ndarray  # per primal dof: "vertex" or "edge"

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def change_of_basis(self) -> bool:
        return self.primal_spec == "vertices+edges"

    def geometric_class(self, node: int) -> str | None:
        m = int(self.node_class[node])
        if m <= 0:
            return None
        if m == self.dim:
            return VERTEX
        return FACE if m == 1 else EDGE

    def counts(self) -> dict:
        d = self.dim
        n_free = int(np.count_nonzero(self.node_class >= 0)) * d
        return {
            "dim": d,
            "subs": list(self.mesh.subs),
            "ratio": self.mesh.ratio,
            "primal_spec": self.primal_spec,
            "velocity_free": n_free,
            "interior": sum(s.n_I for s in self.subdomains),
            "dual": int(np.unique(np.concatenate([s.dual_key for s in self.subdomains])).size),
            "dual_local": sum(s.n_D for s in self.subdomains),
            "primal": self.n_primal,
            "pressure_interior": sum(len(s.pI_local) for s in self.subdomains),
            "pressure_gamma": self.n_pgamma,
            "per_subdomain": [
                {"I": s.n_I, "Delta": s.n_D, "Pi": s.n_P, "pI": len(s.pI_local), "pGamma": len(s.pG_local)}
                for s in self.subdomains
            ],
        }

    def summary_json(self, **kw) -> str:
        return json.dumps(self.counts(), **kw)


def _node_classes(mesh: BoxMesh) -> np.ndarray:
    d, r2 = mesh.dim, 2 * mesh.ratio
    idx = np.indices(mesh.vshape).reshape(d, -1)
    nmax = np.asarray(mesh.vshape)[:, None] - 1
    bnd = np.any((idx == 0) | (idx == nmax), axis=0)
    m = np.zeros(idx.shape[1], dtype=int)
    for k in range(d):
        m += _interface_flags(idx[k], r2, nmax[k, 0])
    m[bnd] = -1
    return m


def classify_dofs(mesh: BoxMesh, primal_spec: str | None = None) -> DofPartition:
    """Split velocity DOFs into interior / dual / primal and pressures into Q_I / Q_Gamma.

    ``primal_spec`` is ``"vertices"`` (2D default) or ``"vertices+edges"``
    (3D default: vertex values plus edge averages per component).
    """
    d, r = mesh.dim, mesh.ratio
    if primal_spec is None:
        primal_spec = "vertices" if d == 2 else "vertices+edges"
    if primal_spec not in PRIMAL_SPECS or (d == 2 and primal_spec != "vertices"):
        raise ConfigError(f"primal space {primal_spec!r} not supported in {d}D")
    use_edges = primal_spec == "vertices+edges"
    r2 = 2 * r
    subs = np.asarray(mesh.subs)

    node_class = _node_classes(mesh)

    # vertices: interior subdomain corners, numbered over the (subs-1)^d grid
    vgrid = tuple(int(s) - 1 for s in subs)
    n_vertices = int(np.prod(vgrid)) if all(v > 0 for v in vgrid) else 0

    # edges (3D): free axis a, interior plane indices on the other two axes,
    # segment index along a
    edge_offsets, edge_shapes = [], []
    n_edges = 0
    if d == 3:
        for a in range(3):
            b, c = [k for k in range(3) if k != a]
            shape = (int(subs[a]), int(subs[b]) - 1, int(subs[c]) - 1)
            edge_offsets.append(n_edges)
            edge_shapes.append(shape)
            n_edges += int(np.prod(shape)) if min(shape) > 0 else 0
    edge_len = r2 - 1  # velocity nodes strictly inside one subdomain edge

    n_primal = d * n_vertices + (d * n_edges if use_edges else 0)
    primal_kind = np.array(["vertex"] * (d * n_vertices) + (["edge"] * (d * n_edges) if use_edges else []))
    n_dual_nodal = mesh.n_vnodes * d

    # pressure: interface nodes (on at least one interface plane) form Q_Gamma
    pidx = np.indices(mesh.pshape).reshape(d, -1)
    pm = np.zeros(pidx.shape[1], dtype=int)
    for k in range(d):
        pm += _interface_flags(pidx[k], r, mesh.pshape[k] - 1)
    pgamma_nodes = np.flatnonzero(pm > 0)
    pgamma_of = -np.ones(mesh.n_pnodes, dtype=int)
    pgamma_of[pgamma_nodes] = np.arange(pgamma_nodes.size)

    lshape = mesh.local_vshape
    lidx = np.indices(lshape).reshape(d, -1)
    n_local = lidx.shape[1]
    comps = np.arange(d)

    subdomains = []
    for i in range(mesh.n_sub):
        s = np.asarray(mesh.sub_index(i))
        gnodes = mesh.local_vnodes_global(i)
        cls = node_class[gnodes]
        gidx = lidx + (s * r2)[:, None]
        on_plane = np.stack([(lidx[k] % r2 == 0) & (cls >= 0) for k in range(d)])

        interior = np.flatnonzero(cls == 0)
        if d == 2 or not use_edges:
            dual_nodes = np.flatnonzero((cls >= 1) & (cls < d))
            edge_nodes = np.zeros(0, dtype=int)
        else:
            dual_nodes = np.flatnonzero(cls == 1)
            edge_nodes = np.flatnonzero(cls == 2)
        vert_nodes = np.flatnonzero(cls == d)

        rows, cols, vals = [], [], []
        col = 0
        # interior
        nI = interior.size * d
        inodal = (interior[:, None] * d + comps).ravel()
        rows.append(inodal)
        cols.append(np.arange(col, col + nI))
        vals.append(np.ones(nI))
        col += nI
        # nodal dual unknowns
        nDn = dual_nodes.size * d
        dnodal = (dual_nodes[:, None] * d + comps).ravel()
        rows.append(dnodal)
        cols.append(np.arange(col, col + nDn))
        vals.append(np.ones(nDn))
        dual_key = [(gnodes[dual_nodes][:, None] * d + comps).ravel()]
        dual_node = [np.repeat(gnodes[dual_nodes], d)]
        col += nDn

        # edge dual coordinates: u = avg * 1 + sum_j d_j (e_j - e_last)
        edge_ids, edge_members = [], []
        if edge_nodes.size:
            for a in range(3):
                b, c = [k for k in range(3) if k != a]
                sel = edge_nodes[on_plane[b, edge_nodes] & on_plane[c, edge_nodes] & ~on_plane[a, edge_nodes]]
                if sel.size == 0:
                    continue
                # group by the (b, c) local corner position
                keyb, keyc = lidx[b, sel], lidx[c, sel]
                for pb, pc in sorted(set(zip(keyb.tolist(), keyc.tolist()))):
                    nodes = sel[(keyb == pb) & (keyc == pc)]
                    nodes = nodes[np.argsort(lidx[a, nodes])]
                    gb = (s[b] * r2 + pb) // r2 - 1
                    gc = (s[c] * r2 + pc) // r2 - 1
                    eid = edge_offsets[a] + int(np.ravel_multi_index((s[a], gb, gc), edge_shapes[a]))
                    edge_ids.append(eid)
                    edge_members.append(nodes)
            m_e = edge_len
            jj = np.arange(m_e - 1)
            for eid, nodes in zip(edge_ids, edge_members):
                for cc in range(d):
                    nodal = nodes * d + cc
                    c_ids = col + jj
                    rows.append(np.concatenate([nodal[:-1], np.full(m_e - 1, nodal[-1])]))
                    cols.append(np.concatenate([c_ids, c_ids]))
                    vals.append(np.concatenate([np.ones(m_e - 1), -np.ones(m_e - 1)]))
                    dual_key.append(n_dual_nodal + (eid * (m_e - 1) + jj) * d + cc)
                    dual_node.append(gnodes[nodes[:-1]])
                    col += m_e - 1
        nD = col - nI

        # primal: vertices then edge averages
        pglob = []
        vtx_g = gidx[:, vert_nodes]
        vid = (
            np.ravel_multi_index(tuple(vtx_g // r2 - 1), vgrid) if vert_nodes.size else np.zeros(0, dtype=int)
        )
        for vn, v in zip(vert_nodes, vid):
            for cc in range(d):
                rows.append(np.array([vn * d + cc]))
                cols.append(np.array([col]))
                vals.append(np.array([1.0]))
                pglob.append(v * d + cc)
                col += 1
        for eid, nodes in zip(edge_ids, edge_members):
            for cc in range(d):
                rows.append(nodes * d + cc)
                cols.append(np.full(nodes.size, col))
                vals.append(np.ones(nodes.size))
                pglob.append(d * n_vertices + eid * d + cc)
                col += 1
        nP = col - nI - nD

        T = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_local * d, col)
        )
        T.sort_indices()

        # pressure
        pglobal = mesh.local_pnodes_global(i)
        pgam = pgamma_of[pglobal]
        pI_local = np.flatnonzero(pgam < 0)
        pG_local = np.flatnonzero(pgam >= 0)

        subdomains.append(
            SubdomainDofs(
                index=i,
                n_I=nI,
                n_D=nD,
                n_P=nP,
                T=T,
                interior_nodal=inodal,
                dual_key=np.concatenate(dual_key).astype(np.int64),
                dual_node=np.concatenate(dual_node).astype(np.int64),
                primal_global=np.asarray(pglob, dtype=np.int64),
                pI_local=pI_local,
                pG_local=pG_local,
                pG_global=pgam[pG_local],
            )
        )

    return DofPartition(
        mesh=mesh,
        primal_spec=primal_spec,
        subdomains=subdomains,
        n_primal=n_primal,
        n_vertices=n_vertices,
        n_edges=n_edges,
        edge_len=edge_len,
        n_pgamma=int(pgamma_nodes.size),
        pgamma_nodes=pgamma_nodes,
        node_class=node_class,
        primal_kind=primal_kind,
    )


@dataclass
class InterfaceJump:
    """Fully redundant Lagrange multipliers on the dual unknowns.

    ``B`` is the signed incidence matrix (one row per multiplier, columns
    ordered as the concatenation of the subdomains' Delta unknowns) and
    ``BD = D B`` its scaled version with ``D = diag(1 / N_x)``.
    """

    B: sp.csr_matrix
    BD: sp.csr_matrix
    D: np.ndarray
    delta_offsets: np.ndarray  # start of each subdomain's Delta block
    mult_key: np.ndarray  # dual-coordinate key of each multiplier
    mult_pair: np.ndarray  # (i, j) subdomain pair of each multiplier, i < j
    mult_node: np.ndarray  # supporting velocity node of each multiplier

    @property
    def n_mult(self) -> int:
        return self.B.shape[0]

    @property
    def n_dual(self) -> int:
        return self.B.shape[1]

    def block(self, i: int, scaled: bool = False) -> sp.csr_matrix:
        M = self.BD if scaled else self.B
        return M[:, self.delta_offsets[i] : self.delta_offsets[i + 1]]


def build_jump(partition: DofPartition) -> InterfaceJump:
    """Assemble ``B_Delta`` with one row per pair of subdomains sharing a dual unknown.

    Row sign is ``+1`` on the lower subdomain index and ``-1`` on the higher.
    """
    subs = partition.subdomains
    offsets = np.zeros(len(subs) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([s.n_D for s in subs])
    keys = np.concatenate([s.dual_key for s in subs]) if subs else np.zeros(0, dtype=np.int64)
    owner = np.concatenate([np.full(s.n_D, s.index) for s in subs]) if subs else np.zeros(0, dtype=np.int64)
    nodes = np.concatenate([s.dual_node for s in subs]) if subs else np.zeros(0, dtype=np.int64)
    col = np.arange(keys.size)

    order = np.lexsort((owner, keys))
    keys_s, col_s, owner_s, nodes_s = keys[order], col[order], owner[order], nodes[order]
    starts = np.flatnonzero(np.r_[True, keys_s[1:] != keys_s[:-1]]) if keys_s.size else np.zeros(0, dtype=int)
    sizes = np.diff(np.r_[starts, keys_s.size])

    row_blocks = []
    for k in np.unique(sizes):
        if k < 2:
            raise ConfigError("dual unknown owned by a single subdomain")
        g = starts[sizes == k][:, None] + np.arange(k)  # (n_groups, k) positions
        pairs = np.array(list(itertools.combinations(range(k), 2)))
        a = g[:, pairs[:, 0]].ravel()
        b = g[:, pairs[:, 1]].ravel()
        row_blocks.append((keys_s[a], a, b, np.full(a.size, 1.0 / k)))
    if row_blocks:
        mkey = np.concatenate([rb[0] for rb in row_blocks])
        pa = np.concatenate([rb[1] for rb in row_blocks])
        pb = np.concatenate([rb[2] for rb in row_blocks])
        scale = np.concatenate([rb[3] for rb in row_blocks])
        o = np.lexsort((owner_s[pb], owner_s[pa], mkey))
        mkey, pa, pb, scale = mkey[o], pa[o], pb[o], scale[o]
    else:
        mkey = pa = pb = np.zeros(0, dtype=np.int64)
        scale = np.zeros(0)
    n_mult = mkey.size
    rows = np.repeat(np.arange(n_mult), 2)
    cols = np.column_stack([col_s[pa], col_s[pb]]).ravel()
    vals = np.tile([1.0, -1.0], n_mult)
    B = sp.csr_matrix((vals, (rows, cols)), shape=(n_mult, keys.size))
    B.sort_indices()
    BD = sp.csr_matrix(sp.diags(scale) @ B)
    BD.sort_indices()
    return InterfaceJump(
        B=B,
        BD=BD,
        D=scale,
        delta_offsets=offsets,
        mult_key=mkey,
        mult_pair=np.column_stack([owner_s[pa], owner_s[pb]]) if n_mult else np.zeros((0, 2), dtype=np.int64),
        mult_node=nodes_s[pa] if n_mult else np.zeros(0, dtype=np.int64),
    )


def range_projector(jump: InterfaceJump):
    """Orthogonal projector onto ``range(B_Delta)``.

    ``P = B (B^T B)^+ B^T``, with the pseudo-inverse applied by a sparse
    solve on a kernel-regularized ``B^T B``.
    """
    B = jump.B
    n = B.shape[1]
    # B^T B is, per dual unknown, the Laplacian of a complete graph; adding
    # the all-ones block of each group removes its kernel without changing
    # the action on range(B^T).
    adj = (abs(B).T @ abs(B)).tocsr()
    ncomp, labels = sp.csgraph.connected_components(adj, directed=False)
    J = sp.csr_matrix((np.ones(n), (np.arange(n), labels)), shape=(n, ncomp))
    lu = spla.splu((B.T @ B + J @ J.T).tocsc()) if n else None

    def apply(lam: np.ndarray) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        if n == 0:
            return np.zeros_like(lam)
        y = B.T @ lam
        return B @ lu.solve(y)

    return apply
