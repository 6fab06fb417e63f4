"""Truncated Fock-space engine: states, channels and exact moments.

Everything here is computed from explicit matrices, never from the closed
forms in :mod:`qicloak.analytic`, so it can serve as an independent check.

Channel unitaries are assembled block by block. The beam splitter conserves
the total photon number and the two-mode squeezer conserves the photon
number difference, so each block is a small matrix exponential of the exact
(untruncated) generator restricted to one conserved sector. Whatever weight
the exact evolution sends beyond the cutoff is measured, added to
``tail_mass`` and the state is renormalized.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.stats import poisson

from .errors import (
    CapacityError,
    DegenerateVarianceError,
    DimensionMismatchError,
    InvalidDimensionError,
    InvalidParameterError,
    TruncationOverflowError,
)
from .params import SnrBreakdown

TAIL_TARGET = 1e-10
DEFAULT_DIM_CAP = 4096
DIM_CAP_ENV = "QI_CLOAK_DIM_CAP"
MIN_DIM = 20


def default_dim_cap() -> int:
    """Cap on the total matrix side; ``QI_CLOAK_DIM_CAP`` overrides it."""
    raw = os.environ.get(DIM_CAP_ENV)
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            raise InvalidParameterError(f"{DIM_CAP_ENV} must be an integer, got {raw!r}") from None
        if cap < 2:
            raise InvalidParameterError(f"{DIM_CAP_ENV} must be >= 2, got {cap}")
        return cap
    return DEFAULT_DIM_CAP


def initial_dim(occupation: float) -> int:
    return max(MIN_DIM, math.ceil(12 * (occupation + 1)))


@dataclass(frozen=True, eq=False)
class TruncatedState:
    """Density matrix over a tensor product of truncated Fock bases.

    ``tail_mass`` accumulates every bit of probability discarded by
    truncation since the state was created.
    """

    mode_dims: tuple
    matrix: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.mode_dims)
        if not dims or any(d < 1 for d in dims):
            raise InvalidDimensionError(f"invalid mode dimensions {self.mode_dims}")
        side = math.prod(dims)
        if self.matrix.shape != (side, side):
            raise DimensionMismatchError(
                f"matrix shape {self.matrix.shape} does not match mode dims {dims}"
            )
        if self.tail_mass < 0:
            raise InvalidParameterError("tail_mass must be nonnegative")
        object.__setattr__(self, "mode_dims", dims)

    @property
    def side(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_modes(self) -> int:
        return len(self.mode_dims)

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def purity(self) -> float:
        # tr(rho^2) without forming the product
        return float(np.real(np.vdot(self.matrix.T.conj(), self.matrix)))

    def photon_distribution(self, mode: int = 0) -> np.ndarray:
        """Marginal photon-number distribution of one mode."""
        reduced = partial_trace(self, [mode]) if self.n_modes > 1 else self
        return np.real(np.diag(reduced.matrix)).copy()

    def check(self, tol: float = 1e-12, eig_tol: float = 1e-10) -> None:
        """Raise AssertionError if any density-matrix invariant is broken."""
        tr = self.trace()
        assert abs(tr - 1) <= tol, f"trace {tr}"
        herm = np.max(np.abs(self.matrix - self.matrix.conj().T))
        assert herm <= tol, f"hermiticity defect {herm}"
        low = np.linalg.eigvalsh(self.matrix).min()
        assert low >= -eig_tol, f"negative eigenvalue {low}"


@dataclass(frozen=True, eq=False)
class ModeOperator:
    """Sparse matrix of an operator on a product of truncated modes."""

    mode_dims: tuple
    matrix: sp.csr_matrix
    label: str = ""

    def __post_init__(self):
        dims = tuple(int(d) for d in self.mode_dims)
        side = math.prod(dims)
        mat = sp.csr_matrix(self.matrix, dtype=complex)
        if mat.shape != (side, side):
            raise DimensionMismatchError(f"operator shape {mat.shape} does not match mode dims {dims}")
        object.__setattr__(self, "mode_dims", dims)
        object.__setattr__(self, "matrix", mat)

    def _check_same(self, other: "ModeOperator"):
        if self.mode_dims != other.mode_dims:
            raise DimensionMismatchError(f"{self.mode_dims} vs {other.mode_dims}")

    def __add__(self, other):
        self._check_same(other)
        return ModeOperator(self.mode_dims, self.matrix + other.matrix, f"({self.label} + {other.label})")

    def __sub__(self, other):
        self._check_same(other)
        return ModeOperator(self.mode_dims, self.matrix - other.matrix, f"({self.label} - {other.label})")

    def __neg__(self):
        return ModeOperator(self.mode_dims, -self.matrix, f"-{self.label}")

    def __mul__(self, scalar):
        if isinstance(scalar, ModeOperator):
            return NotImplemented
        return ModeOperator(self.mode_dims, self.matrix * scalar, f"{scalar:g}*{self.label}")

    __rmul__ = __mul__

    def __matmul__(self, other):
        self._check_same(other)
        return ModeOperator(self.mode_dims, self.matrix @ other.matrix, f"{self.label} {other.label}")

    @property
    def dag(self) -> "ModeOperator":
        return ModeOperator(self.mode_dims, self.matrix.conj().T, f"{self.label}^dag")

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass(frozen=True)
class ChannelSpec:
    """One of the protocol's unitary elements and the modes it acts on.

    ``parameter`` is the transmissivity for ``beam_splitter``, the phase in
    radians for ``phase_shift`` and the gain for ``two_mode_squeezer``.
    """

    kind: str
    modes: tuple
    parameter: float

    KINDS = ("beam_splitter", "phase_shift", "two_mode_squeezer")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InvalidParameterError(f"unknown channel kind {self.kind!r}")
        modes = tuple(int(m) for m in (self.modes if isinstance(self.modes, Sequence) else (self.modes,)))
        object.__setattr__(self, "modes", modes)
        want = 1 if self.kind == "phase_shift" else 2
        if len(modes) != want or len(set(modes)) != want:
            raise InvalidParameterError(f"{self.kind} acts on {want} distinct mode(s), got {modes}")
        x = float(self.parameter)
        if not math.isfinite(x):
            raise InvalidParameterError(f"{self.kind} parameter must be finite")
        if self.kind == "beam_splitter" and not 0.0 <= x <= 1.0:
            raise InvalidParameterError(f"beam splitter transmissivity must lie in [0, 1], got {x}")
        if self.kind == "two_mode_squeezer" and x < 1.0:
            raise InvalidParameterError(f"squeezer gain must be >= 1, got {x}")
        object.__setattr__(self, "parameter", x)


# ---------------------------------------------------------------- operators


def build_annihilation(dim: int) -> ModeOperator:
    """Single-mode lowering operator, a|n> = sqrt(n)|n-1>."""
    if dim < 2:
        raise InvalidDimensionError(f"basis size must be >= 2, got {dim}")
    mat = sp.diags(np.sqrt(np.arange(1, dim, dtype=float)), offsets=1, format="csr")
    return ModeOperator((dim,), mat, "a")


def embed(op: ModeOperator, mode: int, mode_dims: Sequence[int]) -> ModeOperator:
    """Lift a single-mode operator to the full product space."""
    mode_dims = tuple(mode_dims)
    if not 0 <= mode < len(mode_dims):
        raise InvalidParameterError(f"mode {mode} out of range for {len(mode_dims)} modes")
    if op.mode_dims != (mode_dims[mode],):
        raise DimensionMismatchError(f"operator dims {op.mode_dims} do not fit mode {mode} of {mode_dims}")
    left = math.prod(mode_dims[:mode])
    right = math.prod(mode_dims[mode + 1:])
    mat = sp.kron(sp.kron(sp.identity(left, format="csr"), op.matrix), sp.identity(right, format="csr"))
    return ModeOperator(mode_dims, mat, f"{op.label}{mode}")


def annihilation(mode_dims: Sequence[int], mode: int = 0) -> ModeOperator:
    return embed(build_annihilation(mode_dims[mode]), mode, mode_dims)


def creation(mode_dims: Sequence[int], mode: int = 0) -> ModeOperator:
    return annihilation(mode_dims, mode).dag


def number_op(mode_dims: Sequence[int], mode: int = 0) -> ModeOperator:
    d = mode_dims[mode]
    op = ModeOperator((d,), sp.diags(np.arange(d, dtype=float), format="csr"), "n")
    return embed(op, mode, mode_dims)


def quadrature_x(mode_dims: Sequence[int], mode: int = 0) -> ModeOperator:
    """x = (a + a^dag)/sqrt(2)."""
    a = annihilation(mode_dims, mode)
    out = (a + a.dag) * (1 / math.sqrt(2))
    return ModeOperator(out.mode_dims, out.matrix, f"x{mode}")


def quadrature_p(mode_dims: Sequence[int], mode: int = 0) -> ModeOperator:
    """p = (a - a^dag)/(i sqrt(2))."""
    a = annihilation(mode_dims, mode)
    out = (a - a.dag) * (1 / (1j * math.sqrt(2)))
    return ModeOperator(out.mode_dims, out.matrix, f"p{mode}")


# ------------------------------------------------------------------- states


def _fit_dim(tail_of, dim, grow, max_dim, what):
    if dim is None:
        raise InvalidDimensionError("dim must be given")
    if dim < 1:
        raise InvalidDimensionError(f"basis size must be positive, got {dim}")
    tail = tail_of(dim)
    while tail >= TAIL_TARGET:
        if not grow:
            raise TruncationOverflowError(
                f"{what}: tail mass {tail:.3e} at dim={dim} exceeds {TAIL_TARGET:g} and growth is disabled"
            )
        if 2 * dim > max_dim:
            raise TruncationOverflowError(
                f"{what}: tail mass {tail:.3e} at dim={dim}; doubling would exceed the cap {max_dim}"
            )
        dim *= 2
        tail = tail_of(dim)
    return dim, tail


def _pure(vec: np.ndarray, dims, tail) -> TruncatedState:
    vec = vec / np.linalg.norm(vec)
    return TruncatedState(tuple(dims), np.outer(vec, vec.conj()), float(tail))


def make_coherent(alpha: complex, dim: int | None = None, *, grow: bool = True, cap: int | None = None) -> TruncatedState:
    """Coherent state |alpha>, renormalized after truncation."""
    alpha = complex(alpha)
    mu = abs(alpha) ** 2
    cap = default_dim_cap() if cap is None else cap
    if dim is None:
        dim = initial_dim(mu)
    dim, tail = _fit_dim(lambda d: float(poisson.sf(d - 1, mu)) if mu > 0 else 0.0, dim, grow, cap, "coherent state")
    amps = np.empty(dim, dtype=complex)
    amps[0] = math.exp(-mu / 2)
    for n in range(1, dim):
        amps[n] = amps[n - 1] * alpha / math.sqrt(n)
    return _pure(amps, (dim,), tail)


def thermal_weights(n_th: float, dim: int | None = None, *, grow: bool = True, cap: int | None = None):
    """Geometric occupation weights and the discarded tail."""
    if n_th < 0 or not math.isfinite(n_th):
        raise InvalidParameterError(f"thermal occupation must be >= 0, got {n_th}")
    cap = default_dim_cap() if cap is None else cap
    lam = n_th / (1 + n_th)
    if dim is None:
        dim = initial_dim(n_th)
    dim, tail = _fit_dim(lambda d: lam**d, dim, grow, cap, "thermal state")
    w = (1 - lam) * lam ** np.arange(dim)
    return w / w.sum(), float(tail)


def make_thermal(n_th: float, dim: int | None = None, *, grow: bool = True, cap: int | None = None) -> TruncatedState:
    weights, tail = thermal_weights(n_th, dim, grow=grow, cap=cap)
    return TruncatedState((len(weights),), np.diag(weights).astype(complex), tail)


def make_tmsv(N: float, dim: int | None = None, *, grow: bool = True, cap: int | None = None) -> TruncatedState:
    """Two-mode squeezed vacuum sqrt(1-l^2) sum_n l^n |n,n> with N = l^2/(1-l^2)."""
    if N < 0 or not math.isfinite(N):
        raise InvalidParameterError(f"mean photon number must be >= 0, got {N}")
    cap = default_dim_cap() if cap is None else cap
    lam = math.sqrt(N / (N + 1))
    if dim is None:
        dim = initial_dim(N)
    dim, tail = _fit_dim(lambda d: lam ** (2 * d), dim, grow, math.isqrt(cap), "two-mode squeezed state")
    vec = np.zeros(dim * dim, dtype=complex)
    idx = np.arange(dim)
    vec[idx * dim + idx] = math.sqrt(1 - lam**2) * lam**idx
    return _pure(vec, (dim, dim), tail)


# --------------------------------------------------------- structural ops


def attach_mode(state: TruncatedState, new_mode: TruncatedState, *, cap: int | None = None) -> TruncatedState:
    """Tensor product state ⊗ new_mode; the new modes are appended last."""
    cap = default_dim_cap() if cap is None else cap
    side = state.side * new_mode.side
    if side > cap:
        raise CapacityError(f"product space side {side} exceeds the cap {cap}")
    return TruncatedState(
        state.mode_dims + new_mode.mode_dims,
        np.kron(state.matrix, new_mode.matrix),
        state.tail_mass + new_mode.tail_mass,
    )


def partial_trace(state: TruncatedState, keep: Sequence[int]) -> TruncatedState:
    """Reduced state on ``keep`` (in the order given)."""
    keep = [int(k) for k in keep]
    M = state.n_modes
    if not keep or len(set(keep)) != len(keep) or any(not 0 <= k < M for k in keep):
        raise InvalidParameterError(f"invalid modes to keep {keep} for a {M}-mode state")
    drop = [k for k in range(M) if k not in keep]
    dims = state.mode_dims
    t = state.matrix.reshape(dims + dims)
    t = t.transpose(keep + drop + [M + k for k in keep] + [M + k for k in drop])
    kd = math.prod(dims[k] for k in keep)
    dd = math.prod(dims[k] for k in drop)
    reduced = np.einsum("ajbj->ab", t.reshape(kd, dd, kd, dd))
    return TruncatedState(tuple(dims[k] for k in keep), reduced, state.tail_mass)


def resize_mode(state: TruncatedState, mode: int, new_dim: int) -> TruncatedState:
    """Change one mode's cutoff; weight cut off is moved to ``tail_mass``."""
    dims = list(state.mode_dims)
    old = dims[mode]
    if new_dim < 1:
        raise InvalidDimensionError(f"basis size must be positive, got {new_dim}")
    keep = min(old, new_dim)
    embedding = sp.eye(new_dim, old, format="csr")
    out_dims = list(dims)
    out_dims[mode] = new_dim
    mat = _sandwich(state.matrix, dims, [mode], embedding, [new_dim])
    lost = 0.0
    if keep < old:
        lost = max(0.0, 1.0 - float(np.real(np.trace(mat))))
        mat = mat / np.trace(mat)
    return TruncatedState(tuple(out_dims), mat, state.tail_mass + lost)


def _apply_left(mat, dims, modes, op, out_local):
    M = len(dims)
    rest = [k for k in range(M) if k not in modes]
    t = mat.reshape(*dims, -1).transpose(list(modes) + rest + [M])
    tail_shape = t.shape[len(modes):]
    t = op @ t.reshape(math.prod(dims[m] for m in modes), -1)
    t = np.asarray(t).reshape(*out_local, *tail_shape)
    new_dims = list(dims)
    for m, d in zip(modes, out_local):
        new_dims[m] = d
    inverse = np.argsort(list(modes) + rest + [M])
    return t.transpose(inverse).reshape(math.prod(new_dims), -1)


def _sandwich(mat, dims, modes, op, out_local):
    """op ρ op^dag with op acting on ``modes``."""
    new_dims = list(dims)
    for m, d in zip(modes, out_local):
        new_dims[m] = d
    left = _apply_left(mat, dims, modes, op, out_local)
    both = _apply_left(left.conj().T, dims, modes, op, out_local)
    return np.ascontiguousarray(both.conj().T)


def _finish(mat, dims, prior_tail) -> TruncatedState:
    tr = float(np.real(np.trace(mat)))
    leak = max(0.0, 1.0 - tr)
    mat = 0.5 * (mat + mat.conj().T) / tr
    return TruncatedState(tuple(dims), mat, prior_tail + leak)


# ------------------------------------------------------------------ channels


@lru_cache(maxsize=4096)
def _beam_splitter_block(theta: float, n: int) -> np.ndarray:
    """exp(theta (a^dag b - a b^dag)) on the n-photon sector; index = photons in a."""
    k = np.arange(n)
    gen = np.zeros((n + 1, n + 1))
    up = np.sqrt((k + 1.0) * (n - k))
    gen[k + 1, k] = up
    gen[k, k + 1] = -up
    return scipy.linalg.expm(theta * gen)


def _squeezer_pad(gain: float) -> int:
    if gain == 1.0:
        return 0
    ratio = (gain - 1.0) / gain
    return min(4000, math.ceil(math.log(1e-20) / math.log(ratio)) + 8)


def _squeezer_chain(r: float, p: int, q: int, length: int) -> np.ndarray:
    """exp(r (a^dag b^dag - a b)) on the chain |p+t, q+t>, t < length."""
    t = np.arange(length - 1)
    gen = np.zeros((length, length))
    up = np.sqrt((p + t + 1.0) * (q + t + 1.0))
    gen[t + 1, t] = up
    gen[t, t + 1] = -up
    return scipy.linalg.expm(r * gen)


def beam_splitter_operator(eta: float, dims: tuple) -> sp.csr_matrix:
    """Truncated beam-splitter map on two modes with cutoffs ``dims``.

    Heisenberg action on the first mode: a -> sqrt(eta) a + sqrt(1-eta) b.
    """
    di, dj = dims
    theta = math.acos(math.sqrt(eta))
    rows, cols, vals = [], [], []
    for n in range(di + dj - 1):
        lo, hi = max(0, n - dj + 1), min(n, di - 1)
        if lo > hi:
            continue
        block = _beam_splitter_block(theta, n)
        ks = np.arange(lo, hi + 1)
        idx = ks * dj + (n - ks)
        sub = block[np.ix_(ks, ks)]
        rows.append(np.repeat(idx, len(ks)))
        cols.append(np.tile(idx, len(ks)))
        vals.append(sub.ravel())
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(di * dj, di * dj))


def squeezer_operator(gain: float, dims: tuple) -> sp.csr_matrix:
    """Truncated two-mode squeezer map a -> sqrt(G) a + sqrt(G-1) b^dag (and a <-> b)."""
    di, dj = dims
    r = math.acosh(math.sqrt(gain))
    pad = _squeezer_pad(gain)
    rows, cols, vals = [], [], []
    for delta in range(-(dj - 1), di):
        p, q = (delta, 0) if delta >= 0 else (0, -delta)
        n_in = min(di - p, dj - q)
        chain = _squeezer_chain(r, p, q, n_in + pad) if pad else np.eye(n_in)
        ts = np.arange(n_in)
        idx = (p + ts) * dj + (q + ts)
        rows.append(np.repeat(idx, n_in))
        cols.append(np.tile(idx, n_in))
        vals.append(chain[:n_in, :n_in].ravel())
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(di * dj, di * dj))


def apply_channel(state: TruncatedState, spec: ChannelSpec) -> TruncatedState:
    """Conjugate ``state`` by the unitary described by ``spec``."""
    dims = state.mode_dims
    if any(not 0 <= m < len(dims) for m in spec.modes):
        raise DimensionMismatchError(f"channel modes {spec.modes} invalid for a {len(dims)}-mode state")
    if spec.kind == "phase_shift":
        (m,) = spec.modes
        occ = np.arange(dims[m])
        shape = [1] * len(dims)
        shape[m] = dims[m]
        phases = np.broadcast_to(np.exp(-1j * spec.parameter * occ).reshape(shape), dims).ravel()
        mat = phases[:, None] * state.matrix * phases.conj()[None, :]
        return TruncatedState(dims, mat, state.tail_mass)
    local = tuple(dims[m] for m in spec.modes)
    if spec.kind == "beam_splitter":
        op = beam_splitter_operator(spec.parameter, local)
    else:
        op = squeezer_operator(spec.parameter, local)
    mat = _sandwich(state.matrix, dims, list(spec.modes), op, local)
    return _finish(mat, dims, state.tail_mass)


@lru_cache(maxsize=64)
def _loss_weights(theta: float, weights: tuple, d_in: int, d_out: int):
    """Shift-indexed weight matrices of a mixing channel with a diagonal environment."""
    w = np.asarray(weights)
    K = len(w)
    n_max = d_in + K - 2
    blocks = np.zeros((n_max + 1, n_max + 1, n_max + 1))
    for n in range(n_max + 1):
        blocks[n, : n + 1, : n + 1] = _beam_splitter_block(theta, n)
    out = {}
    for s in range(-(d_in - 1), d_out):
        j = np.arange(max(0, s), min(d_out, d_in + s))
        k = np.arange(max(0, s), K)
        if len(j) == 0 or len(k) == 0:
            continue
        n = j[None, :] - s + k[:, None]
        amp = blocks[n, j[None, :], (j - s)[None, :]]
        out[s] = (j[0], (amp.T * w[k]) @ amp)
    return out


def _is_diagonal(mat) -> bool:
    return np.count_nonzero(mat) == np.count_nonzero(np.diagonal(mat))


def dephase(state: TruncatedState) -> TruncatedState:
    """Drop every Fock-basis coherence; photon-counting statistics are unchanged."""
    return TruncatedState(state.mode_dims, np.diag(np.diagonal(state.matrix)), state.tail_mass)


def _diagonal_loss(state, mode, shifts, new_dims, env_tail):
    # diagonal in, diagonal out: only the j == j' entries of each shift survive
    dims = state.mode_dims
    d_out = new_dims[mode]
    p = np.moveaxis(np.diagonal(state.matrix).reshape(dims), mode, 0)
    out = np.zeros((d_out,) + p.shape[1:], dtype=complex)
    for s, (j0, W) in shifts.items():
        j1 = j0 + W.shape[0]
        out[j0:j1] += np.diagonal(W)[(slice(None),) + (None,) * (p.ndim - 1)] * p[j0 - s:j1 - s]
    probs = np.moveaxis(out, 0, mode).reshape(-1)
    return _finish(np.diag(probs), new_dims, state.tail_mass + env_tail)


def thermal_loss(
    state: TruncatedState,
    mode: int,
    eta: float,
    n_th: float,
    *,
    out_dim: int | None = None,
    env_dim: int | None = None,
    cap: int | None = None,
) -> TruncatedState:
    """Mix ``mode`` with a thermal environment on a beam splitter and discard it.

    Equivalent to ``attach_mode`` + ``apply_channel(beam_splitter)`` +
    ``partial_trace`` but never materializes the environment. The thermal
    state is diagonal and the beam splitter conserves total photon number,
    so the output only couples density-matrix entries shifted by the same
    amount.
    """
    if not 0.0 <= eta <= 1.0:
        raise InvalidParameterError(f"beam splitter transmissivity must lie in [0, 1], got {eta}")
    dims = list(state.mode_dims)
    if not 0 <= mode < len(dims):
        raise DimensionMismatchError(f"mode {mode} invalid for a {len(dims)}-mode state")
    cap = default_dim_cap() if cap is None else cap
    weights, env_tail = thermal_weights(n_th, env_dim, cap=cap)
    d_in = dims[mode]
    d_out = d_in if out_dim is None else int(out_dim)
    rest = state.side // d_in
    if d_out * rest > cap:
        raise CapacityError(f"output side {d_out * rest} exceeds the cap {cap}")
    theta = math.acos(math.sqrt(eta))
    shifts = _loss_weights(theta, tuple(weights.tolist()), d_in, d_out)

    new_dims = list(dims)
    new_dims[mode] = d_out
    if _is_diagonal(state.matrix):
        return _diagonal_loss(state, mode, shifts, new_dims, env_tail)

    M = len(dims)
    order = [mode] + [k for k in range(M) if k != mode]
    t = state.matrix.reshape(dims + dims).transpose(order + [M + k for k in order]).reshape(d_in, rest, d_in, rest)
    out = np.zeros((d_out, rest, d_out, rest), dtype=complex)
    for s, (j0, W) in shifts.items():
        j1 = j0 + W.shape[0]
        out[j0:j1, :, j0:j1, :] += W[:, None, :, None] * t[j0 - s:j1 - s, :, j0 - s:j1 - s, :]
    shaped = [new_dims[k] for k in order]
    inverse = list(np.argsort(order))
    mat = out.reshape(shaped + shaped).transpose(inverse + [M + k for k in inverse]).reshape(state.side // d_in * d_out, -1)
    return _finish(mat, new_dims, state.tail_mass + env_tail)


# ------------------------------------------------------------------ moments


def expectation(state: TruncatedState, obs: ModeOperator) -> complex:
    """tr(rho obs)."""
    if state.mode_dims != obs.mode_dims:
        raise DimensionMismatchError(f"state dims {state.mode_dims} vs operator dims {obs.mode_dims}")
    return complex(obs.matrix.multiply(state.matrix.T).sum())


def _real(value: complex, scale: float, what: str) -> float:
    if abs(value.imag) > 1e-10 * max(1.0, scale):
        raise DegenerateVarianceError(f"{what} has imaginary part {value.imag:.3e}; observable not Hermitian?")
    return value.real


def observable_snr(state_at_phi: TruncatedState, state_at_zero: TruncatedState, obs: ModeOperator) -> SnrBreakdown:
    """Mean shift squared over the variance at phi, from explicit moments."""
    obs2 = obs @ obs
    m_phi = expectation(state_at_phi, obs)
    m_zero = expectation(state_at_zero, obs)
    second = expectation(state_at_phi, obs2)
    scale = abs(second)
    m_phi = _real(m_phi, scale, "<obs> at phi")
    m_zero = _real(m_zero, scale, "<obs> at zero")
    second = _real(second, scale, "<obs^2>")
    var = second - m_phi**2
    if var <= 1e-12 * max(1.0, abs(second)):
        raise DegenerateVarianceError(f"variance {var:.3e} is not positive")
    return SnrBreakdown.from_moments(m_phi, m_zero, second, noise_var=var)
