"""Mesh topology, normalized graph Laplacians, and the coarse-to-fine
graph hierarchy consumed by the spectral decoder.

A hand mesh is treated as an undirected graph M = (V, E) whose edges come
from the triangle faces. The decoder needs the same mesh at several
resolutions: coarser levels are built by greedy heavy-edge matching
(Graclus-style), padding unmatched vertices with degree-0 "fake" siblings
so every coarse vertex has at most two children — a balanced binary tree
over the vertex set. Fake vertices carry no geometry and are excluded from
every loss; their rows are dropped when features reach the base mesh.
"""

import json
import logging
import os

import numpy as np
import scipy.sparse as sp

from . import tensor as T

log = logging.getLogger(__name__)

# Environment override for the reference 778-vertex hand topology file
# (JSON topology format). Not bundled; all tests fall back to the toy hand.
REFERENCE_TOPOLOGY_ENV = "MESHSPACE_HAND_TOPOLOGY"


class MeshError(ValueError):
    """Malformed topology file or invalid graph structure."""


class MeshGraph:
    """Immutable undirected graph with optional faces and vertex positions.

    edges is an (E,2) int64 array with each pair (i,j), i<j, unique and
    sorted lexicographically. faces is an (F,3) int64 array (possibly
    empty). positions, when present, is (N,3) float64 in meters.
    """

    def __init__(self, num_vertices, edges, faces=None, positions=None):
        self.num_vertices = int(num_vertices)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            edges = np.sort(edges, axis=1)
            edges = np.unique(edges, axis=0)
        self.edges = edges
        self.faces = (np.asarray(faces, dtype=np.int64).reshape(-1, 3)
                      if faces is not None else np.zeros((0, 3), dtype=np.int64))
        self.positions = (np.asarray(positions, dtype=np.float64)
                          if positions is not None else None)
        self._validate()

    def _validate(self):
        n = self.num_vertices
        if n < 1:
            raise MeshError("graph must have at least one vertex")
        if self.edges.size:
            if self.edges.min() < 0 or self.edges.max() >= n:
                raise MeshError(
                    f"edge index out of range [0,{n}): extremes "
                    f"{self.edges.min()}..{self.edges.max()}")
            if (self.edges[:, 0] == self.edges[:, 1]).any():
                raise MeshError("self-loop in edge set")
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= n:
                raise MeshError(f"face index out of range [0,{n})")
            edge_set = {tuple(e) for e in self.edges.tolist()}
            for f in self.faces:
                for a, b in ((f[0], f[1]), (f[1], f[2]), (f[0], f[2])):
                    key = (min(a, b), max(a, b))
                    if a == b:
                        raise MeshError(f"degenerate face {f.tolist()}")
                    if key not in edge_set:
                        raise MeshError(f"face edge {key} missing from edge set")
        if self.positions is not None and self.positions.shape != (n, 3):
            raise MeshError(
                f"positions shape {self.positions.shape} != ({n}, 3)")

    @property
    def num_edges(self):
        return len(self.edges)

    def degrees(self, weights=None):
        d = np.zeros(self.num_vertices)
        if self.edges.size:
            w = np.ones(len(self.edges)) if weights is None else weights
            np.add.at(d, self.edges[:, 0], w)
            np.add.at(d, self.edges[:, 1], w)
        return d

    def neighbors(self):
        """Adjacency lists (list of sorted int lists)."""
        adj = [[] for _ in range(self.num_vertices)]
        for i, j in self.edges:
            adj[i].append(int(j))
            adj[j].append(int(i))
        return [sorted(a) for a in adj]


def edges_from_faces(faces):
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [0, 2]]])
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


# -- file I/O ----------------------------------------------------------------

def parse_obj(path):
    """Read an OBJ file (v and f records only) into a MeshGraph.

    Faces with more than 3 sides are fan-triangulated. Vertex indices are
    1-based; zero, negative, or out-of-range indices raise with the line
    number.
    """
    verts = []
    faces = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError:
                    raise MeshError(f"{path}:{lineno}: bad vertex coordinate")
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    head = tok.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise MeshError(f"{path}:{lineno}: bad face index '{tok}'")
                    if i <= 0:
                        raise MeshError(
                            f"{path}:{lineno}: face index {i} (OBJ indices are 1-based "
                            "and relative indices are unsupported)")
                    idx.append(i - 1)
                if len(idx) < 3:
                    raise MeshError(f"{path}:{lineno}: face needs at least 3 vertices")
                if len(set(idx)) != len(idx):
                    raise MeshError(f"{path}:{lineno}: degenerate face {idx}")
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts:
        raise MeshError(f"{path}: no vertices")
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if faces.size and faces.max() >= len(verts):
        bad = int(faces.max())
        raise MeshError(f"{path}: face references vertex {bad + 1} but only "
                        f"{len(verts)} vertices are defined")
    edges = edges_from_faces(faces) if faces.size else np.zeros((0, 2), np.int64)
    return MeshGraph(len(verts), edges, faces, np.asarray(verts))


def save_obj(path, verts, faces):
    """Write vertices and triangle faces as a minimal OBJ file."""
    verts = np.asarray(verts, dtype=np.float64)
    lines = [f"v {v[0]:.9f} {v[1]:.9f} {v[2]:.9f}" for v in verts]
    lines += [f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}" for f in np.asarray(faces)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_topology_json(path):
    """Read the JSON topology format.

    {"vertices": N, "faces": [[i,j,k], ...], "joint_regressor": 21×N}
    Returns (MeshGraph, joint_regressor or None). The regressor, when
    present, must be row-stochastic (rows sum to 1 within 1e-6).
    """
    with open(path) as fh:
        doc = json.load(fh)
    for key in ("vertices", "faces"):
        if key not in doc:
            raise MeshError(f"{path}: missing '{key}'")
    n = int(doc["vertices"])
    faces = np.asarray(doc["faces"], dtype=np.int64)
    if faces.size and (faces.min() < 0 or faces.max() >= n):
        raise MeshError(f"{path}: face index out of range [0,{n})")
    positions = np.asarray(doc["positions"], dtype=np.float64) if "positions" in doc else None
    g = MeshGraph(n, edges_from_faces(faces), faces, positions)
    reg = None
    if "joint_regressor" in doc:
        reg = np.asarray(doc["joint_regressor"], dtype=np.float64)
        if reg.ndim != 2 or reg.shape[1] != n:
            raise MeshError(f"{path}: joint_regressor shape {reg.shape}, expected (J,{n})")
        sums = reg.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise MeshError(f"{path}: joint_regressor rows must sum to 1 "
                            f"(worst deviation {np.abs(sums - 1.0).max():.2e})")
    return g, reg


def load_mesh(path):
    """Load a MeshGraph from an OBJ file or the JSON topology format."""
    path = os.fspath(path)
    if path.endswith(".json"):
        return load_topology_json(path)[0]
    return parse_obj(path)


def reference_topology_path():
    """Path of the 778-vertex reference hand topology, if configured."""
    return os.environ.get(REFERENCE_TOPOLOGY_ENV)


# -- scaled Laplacian --------------------------------------------------------

class ScaledLaplacian:
    """Rescaled normalized Laplacian L̃ = 2L/λ_max − I as a CSR matrix.

    L = I − D^(−1/2)·A·D^(−1/2); rows of isolated (degree-0) vertices are
    zero in L by convention, hence −1 on the diagonal of L̃. λ_max is
    estimated by power iteration, inflated by a hair for safety and capped
    at the Gershgorin bound 2.0, so the spectrum of L̃ stays inside [−1, 1].
    """

    def __init__(self, matrix, lambda_max):
        self.matrix = matrix            # scipy CSR, symmetric
        self.lambda_max = float(lambda_max)

    @property
    def shape(self):
        return self.matrix.shape


def adjacency_matrix(g, weights=None):
    n = g.num_vertices
    if not len(g.edges):
        return sp.csr_matrix((n, n))
    w = np.ones(len(g.edges)) if weights is None else np.asarray(weights, float)
    i, j = g.edges[:, 0], g.edges[:, 1]
    a = sp.coo_matrix((np.concatenate([w, w]),
                       (np.concatenate([i, j]), np.concatenate([j, i]))),
                      shape=(n, n))
    return a.tocsr()


def _power_iteration(mat, n, tol=1e-6, max_iter=5000, seed=0, block=4):
    """Largest eigenvalue of a symmetric PSD matrix to relative accuracy tol.

    Block power iteration (orthogonal iteration) with Rayleigh-Ritz
    extraction: a single-vector iterate can stall on the second eigenvector
    when the top eigenvalues cluster, but a small block cannot. Stops when
    the geometric-tail extrapolation of successive Ritz-value changes falls
    below tol. Returns None when the iterate is annihilated (zero matrix)
    or the budget runs out — callers then fall back to the Gershgorin bound.
    """
    rng = np.random.default_rng(seed)
    b = min(block, n)
    v = rng.normal(size=(n, b))
    v, _ = np.linalg.qr(v)
    lam = 0.0
    prev_change = None
    for _ in range(max_iter):
        w = mat @ v
        if np.linalg.norm(w) < 1e-12:
            return None
        v, _ = np.linalg.qr(w)
        ritz = np.linalg.eigvalsh(v.T @ (mat @ v))
        lam_new = float(ritz[-1])
        change = abs(lam_new - lam)
        if change == 0.0:
            return lam_new
        if prev_change is not None and prev_change > 0:
            rate = min(change / prev_change, 0.9999)
            est_err = change * rate / (1.0 - rate)
            # the extrapolation is a heuristic: demand two extra digits so
            # the documented tol genuinely bounds the final error
            if est_err < 0.01 * tol * max(1.0, abs(lam_new)):
                return lam_new
        prev_change = change
        lam = lam_new
    return None


def build_scaled_laplacian(g, weights=None, tol=1e-6):
    """Normalized graph Laplacian rescaled to a [−1, 1] spectrum."""
    n = g.num_vertices
    if n < 1:
        raise MeshError("empty graph")
    a = adjacency_matrix(g, weights)
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = np.zeros(n)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    d_half = sp.diags(inv_sqrt)
    norm_adj = d_half @ a @ d_half
    # L = I − D^-1/2 A D^-1/2, with zero rows for isolated vertices
    lap = sp.diags(nz.astype(float)) - norm_adj
    lam = _power_iteration(lap, n, tol=tol)
    if lam is None or lam < 1e-8:
        lam = 2.0       # fallback: Gershgorin bound of the normalized Laplacian
    else:
        # inflate past the estimation error so the rescaled spectrum cannot
        # poke above +1; the normalized Laplacian never exceeds 2
        lam = min(lam * (1.0 + 3.0 * tol), 2.0)
    scaled = (2.0 / lam) * lap - sp.identity(n)
    return ScaledLaplacian(scaled.tocsr(), lam)


# -- graph coarsening --------------------------------------------------------

class GraphHierarchy:
    """Multi-resolution stack of graphs (index 0 = finest/base).

    levels[i] is a MeshGraph whose vertex set may include fake padding
    (contiguous at the end; first num_real[i] vertices are real).
    parent_maps[i] maps every vertex of level i to its parent in level
    i+1; edge/node weights track merged multiplicities.
    """

    def __init__(self, levels, parent_maps, fake_masks, edge_weights, node_weights):
        self.levels = levels
        self.parent_maps = [np.asarray(p, dtype=np.int64) for p in parent_maps]
        self.fake_masks = [np.asarray(m, dtype=bool) for m in fake_masks]
        self.edge_weights = [np.asarray(w, dtype=np.float64) for w in edge_weights]
        self.node_weights = [np.asarray(w, dtype=np.float64) for w in node_weights]
        self._check()

    def _check(self):
        if len(self.parent_maps) != len(self.levels) - 1:
            raise MeshError("need one parent map per coarsening step")
        for i, pm in enumerate(self.parent_maps):
            fine, coarse = self.levels[i], self.levels[i + 1]
            if len(pm) != fine.num_vertices:
                raise MeshError(f"parent map {i} not total: {len(pm)} entries "
                                f"for {fine.num_vertices} vertices")
            if pm.min() < 0 or pm.max() >= coarse.num_vertices:
                raise MeshError(f"parent map {i} out of range")
            counts = np.bincount(pm, minlength=coarse.num_vertices)
            if counts.max() > 2:
                raise MeshError(f"coarse vertex with {counts.max()} children at level {i+1}")
            # fakes spawned while padding level i+1 itself legitimately have no
            # children here; a childless *real* coarse vertex is a bug
            childless = counts < 1
            if (childless & ~self.fake_masks[i + 1][:len(counts)]).any():
                raise MeshError(f"childless real coarse vertex at level {i+1}")
        for i, mask in enumerate(self.fake_masks):
            if len(mask) != self.levels[i].num_vertices:
                raise MeshError(f"fake mask {i} wrong length")
            # fakes contiguous at the end
            if mask.any() and not mask[np.argmax(mask):].all():
                raise MeshError(f"fake vertices not contiguous at level {i}")

    @property
    def num_levels(self):
        return len(self.levels)

    def num_real(self, level):
        return int((~self.fake_masks[level]).sum())

    def sizes(self):
        return [g.num_vertices for g in self.levels]


def _match_level(g, edge_weights):
    """One round of greedy heavy-edge matching over the real vertices.

    Visits vertices in ascending index order; each unmatched vertex pairs
    with its unmatched neighbor of maximum edge weight (ties broken toward
    the smaller index). Returns (pairs, singletons) where pairs is a list
    of (u, v) with u < visit order and singletons the leftover vertices.
    """
    n = g.num_vertices
    adj = [[] for _ in range(n)]
    for eidx, (i, j) in enumerate(g.edges):
        w = edge_weights[eidx]
        adj[i].append((int(j), w))
        adj[j].append((int(i), w))
    matched = np.zeros(n, dtype=bool)
    pairs, singles = [], []
    for u in range(n):
        if matched[u]:
            continue
        best, best_w = -1, -1.0
        for v, w in adj[u]:
            if matched[v]:
                continue
            if w > best_w or (w == best_w and (best == -1 or v < best)):
                best, best_w = v, w
        if best >= 0:
            matched[u] = matched[best] = True
            pairs.append((u, best))
        else:
            matched[u] = True
            singles.append(u)
    return pairs, singles


def coarsen_once(g, edge_weights, node_weights, fake_mask):
    """Coarsen one level. Returns (padded fine graph info, coarse graph info).

    Real vertices are matched greedily; each real singleton gets a freshly
    appended fake sibling (so its coarse vertex still has two children).
    Pre-existing fake vertices pair among themselves into fake coarse
    vertices (a leftover odd fake keeps a single fake parent). Coarse
    ordering: real coarse vertices in creation order, then fake ones, so
    fakes stay contiguous at the end of every level.
    """
    n = g.num_vertices
    real_idx = np.flatnonzero(~fake_mask)
    fake_idx = np.flatnonzero(fake_mask)
    # matching happens on the real-vertex subgraph; fake vertices have no
    # edges by construction
    pairs, singles = _match_level(g, edge_weights)
    pairs = [(u, v) for u, v in pairs if not fake_mask[u]]
    singles = [u for u in singles if not fake_mask[u]]

    n_spawned = len(singles)
    n_padded = n + n_spawned
    parent = np.full(n_padded, -1, dtype=np.int64)

    coarse_children = []            # real coarse vertices
    for u, v in pairs:
        coarse_children.append((u, v))
    spawn_base = n
    for k, u in enumerate(singles):
        coarse_children.append((u, spawn_base + k))
    n_real_coarse = len(coarse_children)
    fake_children = []
    fi = list(map(int, fake_idx))
    while fi:
        if len(fi) >= 2:
            fake_children.append((fi[0], fi[1]))
            fi = fi[2:]
        else:
            fake_children.append((fi[0],))
            fi = []
    all_children = coarse_children + fake_children
    for ci, kids in enumerate(all_children):
        for kid in kids:
            parent[kid] = ci
    n_coarse = len(all_children)

    # padded fine level: same graph plus isolated spawned fakes
    fine_mask = np.concatenate([fake_mask, np.ones(n_spawned, dtype=bool)])
    fine_pos = None
    if g.positions is not None:
        fine_pos = np.vstack([g.positions, np.zeros((n_spawned, 3))])
    fine_graph = MeshGraph(n_padded, g.edges,
                           g.faces if g.faces.size else None,
                           fine_pos)
    fine_nodew = np.concatenate([node_weights, np.zeros(n_spawned)])

    # coarse edges: sum weights of fine edges whose endpoints map apart
    cw = {}
    for eidx, (i, j) in enumerate(g.edges):
        pi, pj = parent[i], parent[j]
        if pi == pj:
            continue
        key = (min(pi, pj), max(pi, pj))
        cw[key] = cw.get(key, 0.0) + edge_weights[eidx]
    if cw:
        ckeys = sorted(cw)
        cedges = np.asarray(ckeys, dtype=np.int64)
        cweights = np.asarray([cw[k] for k in ckeys])
    else:
        cedges = np.zeros((0, 2), dtype=np.int64)
        cweights = np.zeros(0)
    coarse_nodew = np.zeros(n_coarse)
    for ci, kids in enumerate(all_children):
        coarse_nodew[ci] = sum(fine_nodew[k] for k in kids)
    coarse_mask = np.zeros(n_coarse, dtype=bool)
    coarse_mask[n_real_coarse:] = True
    coarse_pos = None
    if g.positions is not None:
        coarse_pos = np.zeros((n_coarse, 3))
        for ci, kids in enumerate(all_children):
            real_kids = [k for k in kids if k < n and not fake_mask[k]]
            if real_kids:
                coarse_pos[ci] = g.positions[real_kids].mean(axis=0)
    coarse_graph = MeshGraph(n_coarse, cedges, None, coarse_pos)
    return (fine_graph, fine_mask, fine_nodew,
            coarse_graph, coarse_mask, coarse_nodew, cweights, parent)


def coarsen_hierarchy(g, levels=3):
    """Build a GraphHierarchy with ``levels`` coarsenings beyond the base."""
    if levels < 1:
        raise MeshError(f"levels must be ≥ 1, got {levels}")
    graphs = [g]
    masks = [np.zeros(g.num_vertices, dtype=bool)]
    eweights = [np.ones(len(g.edges))]
    nweights = [np.ones(g.num_vertices)]
    parent_maps = []
    for _ in range(levels):
        (fine_g, fine_mask, fine_nw,
         coarse_g, coarse_mask, coarse_nw, cw, parent) = coarsen_once(
            graphs[-1], eweights[-1], nweights[-1], masks[-1])
        graphs[-1] = fine_g
        masks[-1] = fine_mask
        nweights[-1] = fine_nw
        parent_maps.append(parent)
        graphs.append(coarse_g)
        masks.append(coarse_mask)
        eweights.append(cw)
        nweights.append(coarse_nw)
    return GraphHierarchy(graphs, parent_maps, masks, eweights, nweights)


def upsample_features(x, h, level):
    """Copy features from coarse ``level`` to level−1 via the parent map.

    Each fine vertex receives its parent's feature row. ``x`` may be a
    DTensor or ndarray shaped (N_coarse, C) or (B, N_coarse, C).
    """
    if level < 1 or level >= h.num_levels:
        raise MeshError(f"level {level} out of range 1..{h.num_levels - 1}")
    pm = h.parent_maps[level - 1]
    n_coarse = h.levels[level].num_vertices
    axis = 0 if (x.ndim == 2) else 1
    n_got = x.shape[axis]
    if n_got != n_coarse:
        raise MeshError(f"features have {n_got} vertices, level {level} has {n_coarse}")
    if isinstance(x, T.DTensor):
        return T.take(x, pm, axis=axis)
    return np.take(x, pm, axis=axis)


def drop_fake(x, h, level=0):
    """Strip fake-vertex rows (contiguous tail) from level features."""
    n_real = h.num_real(level)
    return x[:n_real] if x.ndim == 2 else x[:, :n_real]


# -- hierarchy serialization -------------------------------------------------

def hierarchy_to_dict(h):
    doc = {"levels": [], "parent_maps": [pm.tolist() for pm in h.parent_maps]}
    for i, g in enumerate(h.levels):
        doc["levels"].append({
            "vertices": g.num_vertices,
            "edges": g.edges.tolist(),
            "faces": g.faces.tolist(),
            "fake_mask": h.fake_masks[i].astype(int).tolist(),
            "edge_weights": h.edge_weights[i].tolist(),
            "node_weights": h.node_weights[i].tolist(),
        })
    return doc


def hierarchy_from_dict(doc):
    levels, masks, ew, nw = [], [], [], []
    for lv in doc["levels"]:
        faces = np.asarray(lv["faces"], dtype=np.int64).reshape(-1, 3)
        levels.append(MeshGraph(lv["vertices"], lv["edges"],
                                faces if faces.size else None))
        masks.append(np.asarray(lv["fake_mask"], dtype=bool))
        ew.append(np.asarray(lv["edge_weights"], dtype=np.float64))
        nw.append(np.asarray(lv["node_weights"], dtype=np.float64))
    return GraphHierarchy(levels, doc["parent_maps"], masks, ew, nw)


def save_hierarchy(path, h):
    """Canonical-JSON hierarchy cache; identical hierarchies → identical bytes."""
    with open(path, "w") as fh:
        json.dump(hierarchy_to_dict(h), fh, sort_keys=True, separators=(",", ":"))


def load_hierarchy(path):
    with open(path) as fh:
        return hierarchy_from_dict(json.load(fh))


# -- geometry ----------------------------------------------------------------

def face_normals(g, verts):
    """Unit normals of each face under right-hand winding.

    ``g`` is a mesh graph or a bare (F, 3) face-index array. Degenerate
    faces (area ≤ 1e-12 m²) get a zero normal and a logged warning;
    callers exclude them by checking the row norm.
    """
    faces = g.faces if hasattr(g, "faces") else np.asarray(g, dtype=np.int64)
    verts = np.asarray(verts, dtype=np.float64)
    v0 = verts[faces[:, 0]]
    v1 = verts[faces[:, 1]]
    v2 = verts[faces[:, 2]]
    cross = np.cross(v1 - v0, v2 - v0)
    norm = np.linalg.norm(cross, axis=1)
    area = 0.5 * norm
    out = np.zeros_like(cross)
    good = area > 1e-12
    out[good] = cross[good] / norm[good, None]
    if not good.all():
        bad = np.flatnonzero(~good)
        log.warning("degenerate faces (area ≤ 1e-12): %s", bad.tolist()[:8])
    return out


def hop_distances(g, sources):
    """BFS hop count from a source set to every vertex (−1 if unreachable)."""
    adj = g.neighbors()
    dist = np.full(g.num_vertices, -1, dtype=np.int64)
    frontier = list(np.atleast_1d(sources))
    for s in frontier:
        dist[s] = 0
    d = 0
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if dist[v] < 0:
                    dist[v] = d + 1
                    nxt.append(v)
        frontier = nxt
        d += 1
    return dist


# -- procedural toy hand -----------------------------------------------------

JOINT_NAMES = ["wrist"] + [f"{f}_{p}" for f in
               ("thumb", "index", "middle", "ring", "pinky")
               for p in ("mcp", "pip", "dip", "tip")]

_FINGER_X = [-0.040, -0.024, -0.008, 0.012, 0.032]     # finger base x offsets (m)
_FINGER_LEN = [0.050, 0.070, 0.078, 0.072, 0.056]      # total finger lengths (m)
_FINGER_RAD = [0.0085, 0.0075, 0.0078, 0.0072, 0.0062]
_PALM_W = 0.084
_PALM_L = 0.092
_PALM_T = 0.026
_RINGS = 9          # cross-section rings per finger (4 verts each)
# ring index of each articulation joint along a finger
_JOINT_RINGS = {"mcp": 0, "pip": 3, "dip": 6, "tip": 8}
# rigid segment of each ring: 0 = palm-fixed, 1..3 = proximal/middle/distal
_RING_SEGMENT = [0, 1, 1, 1, 2, 2, 2, 3, 3]


class ToyHand:
    """Procedural watertight-ish hand: palm box + five 4-sided finger tubes.

    Provides the static quantities every other module needs: rest-pose
    vertices (meters), triangle faces, a row-stochastic 21×N joint
    regressor whose rows each average a single rigid ring (so regressed
    joints track articulation exactly), and per-vertex rigid segment
    assignments for posing.
    """

    def __init__(self):
        verts, faces, ring_of, seg_of, finger_of = _build_toy_hand()
        self.graph = MeshGraph(len(verts), edges_from_faces(faces), faces, verts)
        self.verts = verts
        self.faces = faces
        self.vertex_segment = seg_of        # (N,) int: 0 palm, else finger segment 1..3
        self.vertex_finger = finger_of      # (N,) int: −1 palm, else finger 0..4
        self.joint_regressor = _build_regressor(len(verts), ring_of, finger_of)
        self.rest_joints = self.joint_regressor @ verts

    @property
    def num_vertices(self):
        return len(self.verts)


def _build_toy_hand():
    verts = []
    faces = []
    ring_of = []         # per-vertex (finger, ring) or None
    seg_of = []
    finger_of = []

    # palm: 5×5×2 lattice, z = thickness axis, fingers extend along +y
    nx, ny, nz = 5, 5, 2
    xs = np.linspace(-_PALM_W / 2, _PALM_W / 2, nx)
    ys = np.linspace(-_PALM_L, 0.0, ny)
    zs = np.array([-_PALM_T / 2, _PALM_T / 2])
    pid = {}
    for iz, z in enumerate(zs):
        for iy, y in enumerate(ys):
            for ix, x in enumerate(xs):
                pid[(ix, iy, iz)] = len(verts)
                verts.append([x, y, z])
                ring_of.append(None)
                seg_of.append(0)
                finger_of.append(-1)

    def quad(a, b, c, d):
        faces.append([a, b, c])
        faces.append([a, c, d])

    for iy in range(ny - 1):                     # top & bottom sheets
        for ix in range(nx - 1):
            quad(pid[(ix, iy, 1)], pid[(ix + 1, iy, 1)],
                 pid[(ix + 1, iy + 1, 1)], pid[(ix, iy + 1, 1)])
            quad(pid[(ix, iy, 0)], pid[(ix, iy + 1, 0)],
                 pid[(ix + 1, iy + 1, 0)], pid[(ix + 1, iy, 0)])
    for ix in range(nx - 1):                     # front/back walls
        for iy in (0, ny - 1):
            quad(pid[(ix, iy, 0)], pid[(ix + 1, iy, 0)],
                 pid[(ix + 1, iy, 1)], pid[(ix, iy, 1)])
    for iy in range(ny - 1):                     # side walls
        for ix in (0, nx - 1):
            quad(pid[(ix, iy, 0)], pid[(ix, iy + 1, 0)],
                 pid[(ix, iy + 1, 1)], pid[(ix, iy, 1)])

    # fingers: square-section tubes of _RINGS rings × 4 vertices
    for f in range(5):
        base = len(verts)
        x0 = _FINGER_X[f]
        r = _FINGER_RAD[f]
        length = _FINGER_LEN[f]
        for ring in range(_RINGS):
            t = ring / (_RINGS - 1)
            y = t * length
            taper = 1.0 - 0.35 * t
            for cx, cz in ((-r, -r), (r, -r), (r, r), (-r, r)):
                verts.append([x0 + cx * taper, y, cz * taper])
                ring_of.append((f, ring))
                seg_of.append(_RING_SEGMENT[ring])
                finger_of.append(f)
        for ring in range(_RINGS - 1):           # tube walls
            a0 = base + 4 * ring
            a1 = base + 4 * (ring + 1)
            for k in range(4):
                quad(a0 + k, a0 + (k + 1) % 4, a1 + (k + 1) % 4, a1 + k)
        tipb = base + 4 * (_RINGS - 1)           # tip cap
        quad(tipb, tipb + 1, tipb + 2, tipb + 3)
        # bridge the base ring to the palm's front-top edge for connectivity
        front = [pid[(ix, ny - 1, 1)] for ix in range(nx)]
        anchor = front[min(range(nx), key=lambda ix: abs(xs[ix] - x0))]
        faces.append([anchor, base, base + 1])
        faces.append([anchor, base + 3, base + 2])

    verts = np.asarray(verts, dtype=np.float64)
    # fingers start just above the palm front edge
    verts[50:, 1] += 0.004
    faces = np.asarray(faces, dtype=np.int64)
    return verts, faces, ring_of, np.asarray(seg_of), np.asarray(finger_of)


def _build_regressor(n, ring_of, finger_of):
    reg = np.zeros((21, n))
    # wrist: average of the palm's back edge (both sheets)
    back = [i for i in range(n) if finger_of[i] == -1]
    back_rows = [i for i in back if abs(i % 25 // 5) == 0]   # iy == 0 rows
    reg[0, back_rows] = 1.0 / len(back_rows)
    for f in range(5):
        for jp, name in enumerate(("mcp", "pip", "dip", "tip")):
            ring = _JOINT_RINGS[name]
            members = [i for i in range(n) if ring_of[i] == (f, ring)]
            j = 1 + f * 4 + jp
            reg[j, members] = 1.0 / len(members)
    return reg


_toy_cache = None


def toy_hand():
    """The shared toy-hand template (built once per process)."""
    global _toy_cache
    if _toy_cache is None:
        _toy_cache = ToyHand()
    return _toy_cache
