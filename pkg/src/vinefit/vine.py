"""D-vine and C-vine structure, level-argument recursion, joint density, simulation.

Edges are stored level-major: ``edges[j-1][i-1]`` is the copula of the pair

* D-vine: (i, i+j) given {i+1, ..., i+j-1}
* C-vine: (j, j+i) given {1, ..., j-1}

for levels j = 1..d-1 and edges i = 1..d-j. All pair families used here are
exchangeable, so conditioning on either argument reduces to one h-function
with swapped arguments.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import copulas
from .copulas import Family, PairCopula, UEPS
from .exceptions import DomainError
from .margins import as_matrix, marg_cdf, marg_log_pdf


class VineKind(str, Enum):
    DVINE = "dvine"
    CVINE = "cvine"


def n_edges(dim):
    return dim * (dim - 1) // 2


@dataclass(frozen=True)
class VineSpec:
    kind: VineKind
    dim: int
    edges: tuple  # tuple of per-level tuples of PairCopula

    def __post_init__(self):
        object.__setattr__(self, "kind", VineKind(self.kind))
        if self.dim < 2:
            raise DomainError("vine dimension must be at least 2")
        edges = tuple(tuple(level) for level in self.edges)
        if len(edges) != self.dim - 1 or any(
            len(edges[j]) != self.dim - 1 - j for j in range(self.dim - 1)
        ):
            raise DomainError(
                f"a {self.dim}-dimensional vine needs levels of sizes "
                f"{[self.dim - 1 - j for j in range(self.dim - 1)]}"
            )
        object.__setattr__(self, "edges", edges)

    def edge(self, i, j):
        """Copula at level j, edge i (both 1-based, as in the level-major layout)."""
        return self.edges[j - 1][i - 1]

    @property
    def families(self):
        return tuple(c.family for level in self.edges for c in level)


def make_spec(kind, families, params_flat=None):
    """Build a VineSpec from a level-major family list and a flat parameter vector."""
    families = [Family(f) for f in families]
    m = len(families)
    dim = int(round(0.5 * (1.0 + np.sqrt(1.0 + 8.0 * m))))
    if n_edges(dim) != m:
        raise DomainError(f"family list of length {m} is not d(d-1)/2 for any integer d")
    counts = [copulas.N_PARAMS[f] for f in families]
    if params_flat is None:
        raise DomainError("explicit parameter values are required")
    params_flat = list(np.asarray(params_flat, dtype=float).ravel())
    if len(params_flat) != sum(counts):
        raise DomainError(
            f"expected {sum(counts)} parameter value(s) for families {[f.value for f in families]}, "
            f"got {len(params_flat)}"
        )
    pos = 0
    flat_edges = []
    for fam, cnt in zip(families, counts):
        flat_edges.append(PairCopula(fam, tuple(params_flat[pos : pos + cnt])))
        pos += cnt
    levels = []
    k = 0
    for j in range(1, dim):
        levels.append(tuple(flat_edges[k : k + dim - j]))
        k += dim - j
    return VineSpec(VineKind(kind), dim, tuple(levels))


# ---------------------------------------------------------------------------
# Index bookkeeping
# ---------------------------------------------------------------------------

def index_sets(kind, dim, i, j):
    """Conditioning set and conditioned pair of edge (i, j), 1-based variables."""
    kind = VineKind(kind)
    if not (1 <= j <= dim - 1 and 1 <= i <= dim - j):
        raise DomainError(f"edge (i={i}, j={j}) out of range for d={dim}")
    if kind is VineKind.DVINE:
        return tuple(range(i + 1, i + j)), (i, i + j)
    return tuple(range(1, j)), (j, j + i)


# ---------------------------------------------------------------------------
# Flat parameter vector (level-major, edge-minor; matches the covariance
# matrix block layout used in asymptotics)
# ---------------------------------------------------------------------------

def theta_vector(spec: VineSpec):
    return np.array([p for level in spec.edges for c in level for p in c.params])


def theta_size(spec_or_families):
    if isinstance(spec_or_families, VineSpec):
        return theta_vector(spec_or_families).size
    return sum(copulas.N_PARAMS[Family(f)] for f in spec_or_families)


def with_theta(spec: VineSpec, theta):
    """A copy of ``spec`` with all edge parameters replaced from a flat vector."""
    theta = np.asarray(theta, dtype=float).ravel()
    pos = 0
    levels = []
    for level in spec.edges:
        new_level = []
        for c in level:
            cnt = copulas.N_PARAMS[c.family]
            new_level.append(PairCopula(c.family, tuple(theta[pos : pos + cnt])))
            pos += cnt
        levels.append(tuple(new_level))
    if pos != theta.size:
        raise DomainError(f"theta has length {theta.size}, expected {pos}")
    return VineSpec(spec.kind, spec.dim, tuple(levels))


def theta_slices(spec: VineSpec):
    """Per-edge slices into the flat theta vector, as ((level, edge, slice), ...)."""
    out = []
    pos = 0
    for j, level in enumerate(spec.edges, start=1):
        for i, c in enumerate(level, start=1):
            cnt = copulas.N_PARAMS[c.family]
            out.append((j, i, slice(pos, pos + cnt)))
            pos += cnt
    return tuple(out)


def parameter_labels(spec: VineSpec):
    labels = []
    for j, level in enumerate(spec.edges, start=1):
        for i, c in enumerate(level, start=1):
            cond, (a, b) = index_sets(spec.kind, spec.dim, i, j)
            tag = f"{a},{b}" + (f"|{','.join(map(str, cond))}" if cond else "")
            for name in copulas.PARAM_NAMES[c.family]:
                labels.append(f"{name}[{tag}]")
    return labels


# ---------------------------------------------------------------------------
# Level-argument recursion
# ---------------------------------------------------------------------------

def _clamp(a):
    return np.clip(a, UEPS, 1.0 - UEPS)


def _advance(kind, level_edges, args):
    """Arguments for level j+1 given level-j copulas and level-j arguments."""
    m = len(args)
    if kind is VineKind.DVINE:
        out = []
        for i in range(m - 1):
            a1 = copulas.h(level_edges[i], args[i][0], args[i][1])
            a2 = copulas.h(level_edges[i + 1], args[i + 1][1], args[i + 1][0])
            out.append((_clamp(a1), _clamp(a2)))
        return out
    root = _clamp(copulas.h(level_edges[0], args[0][1], args[0][0]))
    out = []
    for i in range(1, m):
        a2 = copulas.h(level_edges[i], args[i][1], args[i][0])
        out.append((root, _clamp(a2)))
    return out


def _level1_args(kind, u):
    d = u.shape[1]
    if kind is VineKind.DVINE:
        return [(u[:, i], u[:, i + 1]) for i in range(d - 1)]
    return [(u[:, 0], u[:, i + 1]) for i in range(d - 1)]


@dataclass(frozen=True)
class LevelArguments:
    """Argument columns of one level: pairs[i] = (first, second) n-vectors for
    edge i+1. Indexing and iteration go straight to the pairs."""

    level: int
    pairs: tuple

    def __getitem__(self, i):
        return self.pairs[i]

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


def level_arguments(spec: VineSpec, u):
    """Per-level pair-copula argument columns for a sample.

    Returns a list over levels j = 1..d-1. Level-1 arguments are the input
    columns; level-j output depends only on edges at levels below j.
    """
    u = as_matrix(u)
    if u.shape[1] != spec.dim:
        raise DomainError(f"sample has {u.shape[1]} columns, spec has dim {spec.dim}")
    args = _level1_args(spec.kind, _clamp(u))
    out = [LevelArguments(1, tuple(args))]
    for j in range(1, spec.dim - 1):
        args = _advance(spec.kind, spec.edges[j - 1], args)
        out.append(LevelArguments(j + 1, tuple(args)))
    return out


def vine_log_density(spec: VineSpec, u):
    """Copula part of the joint log density, summed over all edges.

    Accepts a d-vector or an (n, d) matrix; returns a scalar or n-vector.
    Runs the recursion with fused density/h kernels so each edge's data
    transforms are computed once (results identical to the plain recursion).
    """
    arr = np.asarray(u, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    args = _level1_args(spec.kind, _clamp(arr))
    total = np.zeros(arr.shape[0])
    for j in range(1, spec.dim):
        level_edges = spec.edges[j - 1]
        m = len(args)
        last = j == spec.dim - 1
        if spec.kind is VineKind.DVINE:
            h12s = [None] * m
            h21s = [None] * m
            for i, (c, (a1, a2)) in enumerate(zip(level_edges, args)):
                need12 = (not last) and i <= m - 2
                need21 = (not last) and i >= 1
                logc, h12, h21 = copulas.logc_and_h(c, a1, a2, need12, need21)
                total += logc
                h12s[i], h21s[i] = h12, h21
            if not last:
                args = [(_clamp(h12s[i]), _clamp(h21s[i + 1])) for i in range(m - 1)]
        else:
            h21s = [None] * m
            for i, (c, (a1, a2)) in enumerate(zip(level_edges, args)):
                logc, _, h21 = copulas.logc_and_h(c, a1, a2, False, not last)
                total += logc
                h21s[i] = h21
            if not last:
                root = _clamp(h21s[0])
                args = [(root, _clamp(h21s[i])) for i in range(1, m)]
    return float(total[0]) if single else total


def full_log_density(spec: VineSpec, margins, x):
    """Joint log density: the vine copula at the CDF transforms plus the margins."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if len(margins) != spec.dim:
        raise DomainError("need one margin per vine dimension")
    u = np.column_stack([marg_cdf(m, arr[:, l]) for l, m in enumerate(margins)])
    total = vine_log_density(spec, u)
    for l, m in enumerate(margins):
        total = total + marg_log_pdf(m, arr[:, l])
    return float(total[0]) if single else total


def full_density(spec: VineSpec, margins, x):
    return np.exp(full_log_density(spec, margins, x))


# ---------------------------------------------------------------------------
# Simulation by conditional-inverse sampling
# ---------------------------------------------------------------------------

def transform_uniforms(spec: VineSpec, w):
    """Map an (n, d) matrix of independent uniforms to vine-copula draws.

    Coordinate t is obtained by inverting the chain of h-functions that
    represents F(u_t | u_1..u_{t-1}); one uniform is consumed per coordinate,
    in fixed coordinate order.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[1] != spec.dim:
        raise DomainError(f"uniform input must be (n, {spec.dim})")
    w = _clamp(w)
    n, d = w.shape
    u = np.empty((n, d))
    u[:, 0] = w[:, 0]

    if spec.kind is VineKind.DVINE:
        # cond[s-1] holds F(u_s | u_{s+1}..u_{t-1}) for the current prefix.
        cond = [u[:, 0]]
        for t in range(2, d + 1):
            g = [w[:, t - 1]]
            for s in range(1, t):
                edge = spec.edge(s, t - s)
                g.append(copulas.h_inverse(edge, g[-1], cond[s - 1]))
            u[:, t - 1] = g[t - 1]
            new_cond = []
            for s in range(1, t):
                edge = spec.edge(s, t - s)
                new_cond.append(_clamp(copulas.h(edge, cond[s - 1], g[s])))
            new_cond.append(u[:, t - 1])
            cond = new_cond
        return u

    # C-vine: root[j-1] = F(u_j | u_1..u_{j-1}) never changes once computed.
    root = [u[:, 0]]
    for t in range(2, d + 1):
        g = w[:, t - 1]
        for j in range(t - 1, 0, -1):
            g = copulas.h_inverse(spec.edge(t - j, j), g, root[j - 1])
        u[:, t - 1] = g
        root.append(w[:, t - 1])
    return u


def simulate(spec: VineSpec, n, seed):
    """n i.i.d. draws from the vine copula; deterministic given the seed."""
    if n < 1:
        raise DomainError("need n >= 1")
    rng = np.random.default_rng(seed)
    return transform_uniforms(spec, rng.random((n, spec.dim)))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def spec_to_dict(spec: VineSpec):
    return {
        "kind": spec.kind.value,
        "dim": spec.dim,
        "families": [c.family.value for level in spec.edges for c in level],
        "params": [float(p) for p in theta_vector(spec)],
    }


def spec_from_dict(payload):
    return make_spec(payload["kind"], payload["families"], payload["params"])
