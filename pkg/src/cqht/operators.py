"""Truncated Fock-space operators, Lindblad generators and phase-space moments.

All operators are dense ``complex128`` arrays.  Quadratures are dimensionless
with ``[q, p] = i`` unless a scenario rescales them with physical constants.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

__all__ = [
    "DimensionError",
    "LindbladSpec",
    "LindbladPropagator",
    "StateMoments",
    "build_annihilation",
    "number_op",
    "position_op",
    "momentum_op",
    "quadrature",
    "energy_op",
    "thermal_state",
    "fock_state",
    "thermal_lindblad",
    "lindblad_apply",
    "liouvillian",
    "moments",
    "top_population",
    "dagger",
]


class DimensionError(ValueError):
    """Raised when an operator or state has an unusable dimension."""


def dagger(op):
    return np.conj(np.swapaxes(op, -1, -2))


def _check_dim(dim):
    if int(dim) != dim or dim < 2:
        raise DimensionError(f"Fock dimension must be an integer >= 2, got {dim!r}")
    return int(dim)


def build_annihilation(dim):
    """Annihilation operator truncated to ``dim`` Fock levels.

    ``a[n, n+1] = sqrt(n+1)``.  The truncation makes ``[a, a^dag]`` equal to
    the identity except for the last diagonal entry, which is ``1 - dim``.
    """
    dim = _check_dim(dim)
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


def number_op(dim):
    dim = _check_dim(dim)
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def position_op(dim, scale=1.0):
    """``q = scale * (a + a^dag) / sqrt(2)``; ``scale = sqrt(hbar/(m omega))`` for a physical oscillator."""
    a = build_annihilation(dim)
    return scale * (a + a.conj().T) / np.sqrt(2)


def momentum_op(dim, scale=1.0):
    """``p = scale * (a - a^dag) / (i sqrt(2))``; ``scale = sqrt(hbar m omega)`` for a physical oscillator."""
    a = build_annihilation(dim)
    return scale * (a - a.conj().T) / (1j * np.sqrt(2))


def quadrature(theta, dim):
    """Rotated quadrature ``q cos(theta) + p sin(theta)``."""
    return np.cos(theta) * position_op(dim) + np.sin(theta) * momentum_op(dim)


def energy_op(dim):
    """Oscillator energy ``(a^dag a + a a^dag) / 2`` built on the truncated space.

    Levels ``0 .. dim-2`` are exactly ``n + 1/2``.  On the top level the
    truncated ``a a^dag`` vanishes, so the entry is ``(dim-1)/2`` rather than
    ``dim - 1/2``.  States used with this operator should keep negligible
    top-level population (see :func:`top_population`).
    """
    a = build_annihilation(dim)
    ad = a.conj().T
    return (ad @ a + a @ ad) / 2


def fock_state(n, dim):
    dim = _check_dim(dim)
    if not 0 <= n < dim:
        raise DimensionError(f"level {n} outside truncation of dimension {dim}")
    rho = np.zeros((dim, dim), dtype=complex)
    rho[n, n] = 1.0
    return rho


def thermal_state(nbar, dim):
    """Thermal state with mean occupation ``nbar``, renormalized on the truncated space."""
    dim = _check_dim(dim)
    if nbar < 0:
        raise ValueError("mean occupation must be non-negative")
    if nbar == 0:
        return fock_state(0, dim)
    n = np.arange(dim)
    p = (nbar / (nbar + 1.0)) ** n
    return np.diag(p / p.sum()).astype(complex)


def top_population(rho):
    """Population of the highest retained Fock level (truncation leakage monitor)."""
    return float(np.real(rho[..., -1, -1]).max())


@dataclass(frozen=True)
class LindbladSpec:
    """Generator ``-i[H, rho] + sum_k rate_k D[L_k] rho``.

    ``hamiltonian`` is in angular-frequency units (already divided by hbar).
    """

    hamiltonian: np.ndarray
    jumps: tuple = field(default_factory=tuple)

    def __post_init__(self):
        h = np.asarray(self.hamiltonian, dtype=complex)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise DimensionError("hamiltonian must be a square matrix")
        jumps = []
        for rate, op in self.jumps:
            op = np.asarray(op, dtype=complex)
            if op.shape != h.shape:
                raise DimensionError("jump operator shape does not match hamiltonian")
            if rate < 0:
                raise ValueError(f"Lindblad rates must be non-negative, got {rate}")
            jumps.append((float(rate), op))
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "jumps", tuple(jumps))

    @property
    def dim(self):
        return self.hamiltonian.shape[0]

    @classmethod
    def zero(cls, dim):
        return cls(np.zeros((dim, dim), dtype=complex))


def thermal_lindblad(gamma, nbar, dim, hamiltonian=None):
    """Thermal damping ``gamma (N+1) D[a] + gamma N D[a^dag]``."""
    a = build_annihilation(dim)
    h = np.zeros((dim, dim), dtype=complex) if hamiltonian is None else hamiltonian
    jumps = [(gamma * (nbar + 1.0), a)]
    if nbar > 0:
        jumps.append((gamma * nbar, a.conj().T))
    return LindbladSpec(h, tuple(jumps))


def lindblad_apply(spec, rho):
    """Apply the Lindblad generator to ``rho`` (batched over leading axes)."""
    rho = np.asarray(rho)
    if rho.shape[-2:] != (spec.dim, spec.dim):
        raise DimensionError(f"state of shape {rho.shape[-2:]} does not match generator dimension {spec.dim}")
    h = spec.hamiltonian
    out = -1j * (h @ rho - rho @ h)
    for rate, op in spec.jumps:
        if rate == 0:
            continue
        opd = op.conj().T
        n = opd @ op
        out = out + rate * (op @ rho @ opd - 0.5 * (n @ rho + rho @ n))
    return out


def liouvillian(spec):
    """Superoperator matrix acting on row-major ``rho.ravel()``."""
    d = spec.dim
    eye = np.eye(d)
    h = spec.hamiltonian
    # row-major vec: vec(A X B) = (A kron B^T) vec(X)
    sup = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for rate, op in spec.jumps:
        n = op.conj().T @ op
        sup += rate * (np.kron(op, op.conj()) - 0.5 * np.kron(n, eye) - 0.5 * np.kron(eye, n.T))
    return sup


class LindbladPropagator:
    """Exact propagator ``exp(dt * L)`` for a fixed generator.

    The superoperator is split into its decoupled blocks (for example, the
    off-diagonals of a thermal oscillator never mix), and each block is
    exponentiated separately so that application costs far less than a dense
    ``dim^2 x dim^2`` product.
    """

    def __init__(self, spec, dt):
        self.spec = spec
        self.dt = float(dt)
        sup = liouvillian(spec)
        pattern = (np.abs(sup) > 0) | (np.abs(sup.T) > 0)
        ncomp, labels = connected_components(pattern, directed=False)
        self.blocks = []
        for k in range(ncomp):
            idx = np.flatnonzero(labels == k)
            block = sup[np.ix_(idx, idx)]
            self.blocks.append((idx, scipy.linalg.expm(self.dt * block)))

    def __call__(self, rho):
        rho = np.asarray(rho, dtype=complex)
        d = self.spec.dim
        flat = rho.reshape(rho.shape[:-2] + (d * d,))
        out = np.empty_like(flat)
        for idx, prop in self.blocks:
            out[..., idx] = flat[..., idx] @ prop.T
        return out.reshape(rho.shape)


@dataclass(frozen=True)
class StateMoments:
    mean_q: float
    mean_p: float
    cov: np.ndarray


def moments(rho, q=None, p=None, tol=1e-9):
    """First and symmetrized second moments of the quadratures ``q`` and ``p``."""
    rho = np.asarray(rho)
    tr = np.trace(rho).real
    if abs(tr - 1.0) > tol:
        raise ValueError(f"density matrix trace {tr} differs from 1")
    dim = rho.shape[0]
    q = position_op(dim) if q is None else q
    p = momentum_op(dim) if p is None else p

    def ev(op):
        return float(np.real(np.trace(op @ rho)))

    mq, mp = ev(q), ev(p)
    vqq = ev(q @ q) - mq * mq
    vpp = ev(p @ p) - mp * mp
    vqp = ev((q @ p + p @ q) / 2) - mq * mp
    return StateMoments(mq, mp, np.array([[vqq, vqp], [vqp, vpp]]))
