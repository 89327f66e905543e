"""Tensor-factored 3D feature grids (CP and VM decompositions).

A field owns two factor groups. The *density* group sums all rank-one
components into a scalar; the *appearance* group stacks its components and
maps them to ``app_dim`` feature channels through a basis matrix.

Grid coordinates are continuous: node ``(a, b, c)`` sits at integer
coordinates and the box spans ``[0, dim - 1]`` on every axis. Values between
nodes are obtained by interpolating each factor (linear for vectors,
bilinear for matrices) and combining, which equals trilinear interpolation
of the dense tensor. Points outside the box evaluate to zero.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_array, check_positive_int

MAX_DENSE_VOXELS = 2**21
# Constant offset added to the factor sum before the density activation, so
# that an all-zero field (the weight-decay fixed point) is empty space.
DEFAULT_DENSITY_SHIFT = -4.0

# VM matrix modes: the line of axis m pairs with the plane over the other two.
_PLANE_AXES = {0: (1, 2), 1: (0, 2), 2: (0, 1)}


@dataclass(frozen=True)
class GridDims:
    """Voxel resolution and world-space bounding box of a field."""

    i: int
    j: int
    k: int
    aabb_min: tuple = (-1.0, -1.0, -1.0)
    aabb_max: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        for name in ("i", "j", "k"):
            check_positive_int(getattr(self, name), name, minimum=2)
        lo = tuple(float(v) for v in self.aabb_min)
        hi = tuple(float(v) for v in self.aabb_max)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("aabb_min and aabb_max must be 3-vectors")
        if not all(a < b for a, b in zip(lo, hi)):
            raise ValueError(f"aabb_min {lo} must be < aabb_max {hi} componentwise")
        object.__setattr__(self, "aabb_min", lo)
        object.__setattr__(self, "aabb_max", hi)

    @classmethod
    def cube(cls, n, aabb_min=(-1.0, -1.0, -1.0), aabb_max=(1.0, 1.0, 1.0)):
        return cls(n, n, n, aabb_min, aabb_max)

    @property
    def shape(self):
        return (self.i, self.j, self.k)

    def to_dict(self):
        return {"shape": list(self.shape), "aabb_min": list(self.aabb_min),
                "aabb_max": list(self.aabb_max)}


@dataclass
class FeatureSample:
    """Raw density and appearance features at a batch of points."""

    density_raw: np.ndarray  # (N,)
    appearance: np.ndarray  # (N, F)


def world_to_grid(p, dims):
    """Affine map sending ``aabb_min`` to the origin and ``aabb_max`` to ``dims - 1``."""
    p = np.asarray(p, dtype=np.float64)
    lo = np.asarray(dims.aabb_min)
    hi = np.asarray(dims.aabb_max)
    return (p - lo) / (hi - lo) * (np.asarray(dims.shape, dtype=np.float64) - 1.0)


def in_box(coords, dims):
    coords = np.asarray(coords)
    upper = np.asarray(dims.shape, dtype=np.float64) - 1.0
    return np.all((coords >= 0.0) & (coords <= upper), axis=-1)


def density_activation(raw):
    """Softplus, computed without overflow for large inputs."""
    raw = np.asarray(raw, dtype=np.float64)
    return np.logaddexp(0.0, raw)


def density_activation_grad(raw):
    """Derivative of :func:`density_activation` (the logistic sigmoid)."""
    raw = np.asarray(raw, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -raw))


def _corners(coords, axes, sizes):
    """Interpolation stencil for a factor spanning ``axes``.

    Returns a list of ``(flat_index, weight)`` pairs, one per corner.
    """
    stencil = [(np.zeros(len(coords), dtype=np.intp), np.ones(len(coords)))]
    for ax in axes:
        d = sizes[ax]
        x = coords[:, ax]
        i0 = np.clip(np.floor(x), 0, d - 2).astype(np.intp)
        fr = x - i0
        nxt = []
        for idx, w in stencil:
            nxt.append((idx * d + i0, w * (1.0 - fr)))
            nxt.append((idx * d + i0 + 1, w * fr))
        stencil = nxt
    return stencil


def _gather(arr, stencil):
    flat = arr.reshape(arr.shape[0], -1)
    out = flat[:, stencil[0][0]] * stencil[0][1]
    for idx, w in stencil[1:]:
        out += flat[:, idx] * w
    return out


def _scatter(shape, stencil, g):
    """Adjoint of :func:`_gather`: accumulate ``g`` (R, N) into a factor of ``shape``."""
    rank = shape[0]
    size = int(np.prod(shape[1:]))
    offsets = (np.arange(rank, dtype=np.intp) * size)[:, None]
    idx = np.concatenate([(offsets + i[None, :]).ravel() for i, _ in stencil])
    wts = np.concatenate([(g * w[None, :]).ravel() for _, w in stencil])
    return np.bincount(idx, weights=wts, minlength=rank * size).reshape(shape)


class FactorField:
    """Common machinery for CP and VM fields.

    Subclasses define ``_terms(group)``: a list of terms, each a list of
    ``(param_name, axes)`` factors whose componentwise product forms the
    term's rank-one contributions.
    """

    kind = None

    def __init__(self, dims, params, app_dim, density_shift=DEFAULT_DENSITY_SHIFT):
        self.dims = dims
        self.params = dict(params)
        self.app_dim = check_positive_int(app_dim, "app_dim", minimum=1)
        self.density_shift = float(density_shift)
        self._validate()

    def _validate(self):
        sizes = self.dims.shape
        for group in ("density", "appearance"):
            for term in self._terms(group):
                ranks = {self.params[name].shape[0] for name, _ in term}
                if len(ranks) != 1:
                    raise ValueError(f"factors of one {group} term disagree on rank: {term}")
                for name, axes in term:
                    want = (self.params[name].shape[0],) + tuple(sizes[a] for a in axes)
                    if self.params[name].shape != want:
                        raise ValueError(
                            f"{name} has shape {self.params[name].shape}, expected {want}")
        basis = self.params["appearance.basis"]
        if basis.shape != (self.n_app_components, self.app_dim):
            raise ValueError(
                f"appearance.basis has shape {basis.shape}, expected "
                f"{(self.n_app_components, self.app_dim)}")

    @property
    def n_app_components(self):
        return sum(self.params[term[0][0]].shape[0] for term in self._terms("appearance"))

    def factor_names(self, group=None):
        """Names of all spatial factor arrays (vectors and matrices), in stable order."""
        groups = ("density", "appearance") if group is None else (group,)
        return [name for g in groups for term in self._terms(g) for name, _ in term]

    def copy(self):
        return type(self)(self.dims, {k: v.copy() for k, v in self.params.items()},
                          self.app_dim, self.density_shift)

    def with_params(self, params):
        return type(self)(self.dims, params, self.app_dim, self.density_shift)

    def sigma(self, density_raw):
        """Activated density for raw factor sums: ``softplus(raw + density_shift)``."""
        return density_activation(np.asarray(density_raw) + self.density_shift)

    def sigma_world(self, points):
        return self.sigma(self.evaluate_world(points).density_raw)

    @property
    def n_params(self):
        return sum(v.size for v in self.params.values())

    # -- evaluation -------------------------------------------------------

    def _forward(self, coords, group):
        """Evaluate one factor group at in-box grid coordinates.

        Returns ``(values, cache)``: raw density ``(N,)`` for ``"density"``,
        features ``(N, F)`` for ``"appearance"``.
        """
        sizes = self.dims.shape
        stencils, values, comps = {}, {}, []
        for term in self._terms(group):
            prod = None
            for name, axes in term:
                if axes not in stencils:
                    stencils[axes] = _corners(coords, axes, sizes)
                values[name] = _gather(self.params[name], stencils[axes])
                prod = values[name].copy() if prod is None else prod * values[name]
            comps.append(prod)
        comps = np.concatenate(comps, axis=0)
        cache = {"group": group, "stencils": stencils, "values": values, "comps": comps}
        if group == "density":
            return comps.sum(axis=0), cache
        return comps.T @ self.params["appearance.basis"], cache

    def _backward(self, cache, g):
        """Gradients of ``sum(g * values)`` w.r.t. the group's parameters."""
        group = cache["group"]
        grads = {}
        if group == "density":
            g_comps = np.broadcast_to(g, (cache["comps"].shape[0], len(g)))
        else:
            grads["appearance.basis"] = cache["comps"] @ g
            g_comps = self.params["appearance.basis"] @ g.T
        offset = 0
        for term in self._terms(group):
            rank = self.params[term[0][0]].shape[0]
            g_term = g_comps[offset:offset + rank]
            offset += rank
            for j, (name, axes) in enumerate(term):
                gj = g_term
                for q, (other, _) in enumerate(term):
                    if q != j:
                        gj = gj * cache["values"][other]
                grads[name] = _scatter(self.params[name].shape, cache["stencils"][axes], gj)
        return grads

    def evaluate(self, coords):
        """Evaluate raw density and appearance at continuous grid coordinates.

        Out-of-box points return zero density and zero appearance.
        """
        coords = check_array(coords, name="coords", finite=False)
        squeeze = coords.ndim == 1
        coords = np.atleast_2d(coords)
        if coords.shape[-1] != 3:
            raise ValueError(f"coords must have trailing dimension 3, got {coords.shape}")
        mask = in_box(coords, self.dims) & np.all(np.isfinite(coords), axis=-1)
        density = np.zeros(len(coords))
        appearance = np.zeros((len(coords), self.app_dim))
        if mask.any():
            inside = coords[mask]
            density[mask] = self._forward(inside, "density")[0]
            appearance[mask] = self._forward(inside, "appearance")[0]
        if squeeze:
            return FeatureSample(density[0], appearance[0])
        return FeatureSample(density, appearance)

    def evaluate_world(self, points):
        return self.evaluate(world_to_grid(points, self.dims))

    # -- dense oracle -----------------------------------------------------

    def materialize_dense(self):
        """Materialise the field at grid nodes as an ``(I, J, K, 1 + F)`` array.

        Channel 0 holds the raw density, channels ``1:`` the appearance features.
        """
        i, j, k = self.dims.shape
        if i * j * k > MAX_DENSE_VOXELS:
            raise ValueError(f"dense materialisation refused: {i * j * k} voxels > "
                             f"{MAX_DENSE_VOXELS}")
        density = self._dense_components("density").sum(axis=0)
        comps = self._dense_components("appearance")
        appearance = np.einsum("rijk,rc->ijkc", comps, self.params["appearance.basis"])
        return np.concatenate([density[..., None], appearance], axis=-1)

    def _dense_components(self, group):
        letters = "ijk"
        comps = []
        for term in self._terms(group):
            operands, subs = [], []
            for name, axes in term:
                operands.append(self.params[name])
                subs.append("r" + "".join(letters[a] for a in axes))
            comps.append(np.einsum(",".join(subs) + "->rijk", *operands))
        return np.concatenate(comps, axis=0)

    def __repr__(self):
        return f"{type(self).__name__}(dims={self.dims.shape}, ranks={self.ranks}, app_dim={self.app_dim})"


class CPField(FactorField):
    """Sum of rank-one outer products of three vectors per component."""

    kind = "cp"

    def _terms(self, group):
        return [[(f"{group}.vec.{m}", (m,)) for m in range(3)]]

    @property
    def ranks(self):
        return {"density": self.params["density.vec.0"].shape[0],
                "appearance": self.params["appearance.vec.0"].shape[0]}

    @classmethod
    def random(cls, dims, density_rank=8, app_rank=8, app_dim=27, std=0.1, seed=0,
               density_shift=DEFAULT_DENSITY_SHIFT):
        rng = np.random.default_rng(seed)
        density_rank = check_positive_int(density_rank, "density_rank")
        app_rank = check_positive_int(app_rank, "app_rank")
        params = {}
        for group, rank in (("density", density_rank), ("appearance", app_rank)):
            for m in range(3):
                params[f"{group}.vec.{m}"] = std * rng.standard_normal((rank, dims.shape[m]))
        params["appearance.basis"] = rng.standard_normal((app_rank, app_dim)) / np.sqrt(app_rank)
        return cls(dims, params, app_dim, density_shift)

    @classmethod
    def from_factors(cls, dims, density_vectors, app_vectors, app_basis,
                     density_shift=DEFAULT_DENSITY_SHIFT):
        """Build from explicit ``[v1, v2, v3]`` factor lists, each ``(R, dim)``."""
        params = {}
        for group, vecs in (("density", density_vectors), ("appearance", app_vectors)):
            for m, v in enumerate(vecs):
                params[f"{group}.vec.{m}"] = np.atleast_2d(np.array(v, dtype=np.float64))
        basis = np.atleast_2d(np.array(app_basis, dtype=np.float64))
        params["appearance.basis"] = basis
        return cls(dims, params, basis.shape[1], density_shift)


class VMField(FactorField):
    """Sum of vector-matrix products, one matrix per complementary axis pair."""

    kind = "vm"

    def _terms(self, group):
        return [[(f"{group}.line.{m}", (m,)), (f"{group}.plane.{m}", _PLANE_AXES[m])]
                for m in range(3)]

    @property
    def ranks(self):
        return {g: tuple(self.params[f"{g}.line.{m}"].shape[0] for m in range(3))
                for g in ("density", "appearance")}

    @classmethod
    def random(cls, dims, density_ranks=(4, 4, 4), app_ranks=(4, 4, 4), app_dim=27,
               std=0.1, seed=0, density_shift=DEFAULT_DENSITY_SHIFT):
        rng = np.random.default_rng(seed)
        params = {}
        for group, ranks in (("density", density_ranks), ("appearance", app_ranks)):
            if len(ranks) != 3:
                raise ValueError(f"{group} ranks must be a triple, got {ranks!r}")
            for m in range(3):
                r = check_positive_int(ranks[m], f"{group} rank {m}")
                a, b = _PLANE_AXES[m]
                params[f"{group}.line.{m}"] = std * rng.standard_normal((r, dims.shape[m]))
                params[f"{group}.plane.{m}"] = std * rng.standard_normal(
                    (r, dims.shape[a], dims.shape[b]))
        n_app = sum(app_ranks)
        params["appearance.basis"] = rng.standard_normal((n_app, app_dim)) / np.sqrt(n_app)
        return cls(dims, params, app_dim, density_shift)

    @classmethod
    def zeros(cls, dims, density_ranks=(1, 1, 1), app_ranks=(1, 1, 1), app_dim=27,
              density_shift=DEFAULT_DENSITY_SHIFT):
        f = cls.random(dims, density_ranks, app_ranks, app_dim, std=0.0,
                       density_shift=density_shift)
        f.params = {k: np.zeros_like(v) for k, v in f.params.items()}
        return f


def cp_eval(field, p):
    """Evaluate a :class:`CPField` at grid coordinates ``p``."""
    if not isinstance(field, CPField):
        raise TypeError(f"cp_eval expects a CPField, got {type(field).__name__}")
    return field.evaluate(p)


def vm_eval(field, p):
    """Evaluate a :class:`VMField` at grid coordinates ``p``."""
    if not isinstance(field, VMField):
        raise TypeError(f"vm_eval expects a VMField, got {type(field).__name__}")
    return field.evaluate(p)


def materialize_dense(field):
    return field.materialize_dense()
