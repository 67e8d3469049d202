"""Multi-level transmon model in the rotating frame of the 0->1 transition.

Conventions: drive amplitudes and the anharmonicity are stored as linear
frequencies in MHz, device time runs in microseconds, and the factor
2*pi is applied exactly once when assembling Hamiltonians, which are
therefore in angular MHz (rad/us).  The readout cavity and its
dispersive shift are not modeled; only the transmon mode appears.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .numerics import is_unitary

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TransmonSpec:
    """Device parameters: level count, anharmonicity (MHz), T1/T_phi (us)."""

    n_levels: int = 6
    anharmonicity_mhz: float = 200.0
    t1_us: float = 30.0
    t_phi_us: float = 50.0

    def __post_init__(self):
        if self.n_levels < 4:
            raise InvalidInputError("need at least 4 transmon levels for the encoding")
        if self.anharmonicity_mhz <= 0:
            raise InvalidInputError("anharmonicity must be positive")
        if self.t1_us <= 0 or self.t_phi_us <= 0:
            raise InvalidInputError("coherence times must be positive")


def lowering_operator(n_levels):
    """Truncated annihilation operator with sqrt(n) weights."""
    a = np.zeros((n_levels, n_levels), dtype=complex)
    for n in range(1, n_levels):
        a[n - 1, n] = np.sqrt(n)
    return a


def drift_hamiltonian(spec):
    """Kerr drift -(2 pi alpha/2) adag^2 a^2, diagonal entries -pi alpha n(n-1).

    Angular MHz.  Levels 0 and 1 are degenerate in this frame; higher
    levels walk down by the anharmonicity.
    """
    n = np.arange(spec.n_levels)
    return np.diag(-np.pi * spec.anharmonicity_mhz * n * (n - 1)).astype(complex)


def control_operators(spec):
    """Quadrature operators (adag + a) and i(adag - a), both Hermitian."""
    a = lowering_operator(spec.n_levels)
    quad_i = a + a.conj().T
    quad_q = 1j * (a.conj().T - a)
    return quad_i, quad_q


def collapse_operators(spec, t1_us=None, t_phi_us=None):
    """Lindblad collapse operators sqrt(1/T1) a and sqrt(1/T_phi) adag a.

    Rates are per microsecond, matching the integrator clock.  A rate of
    ``inf`` disables the corresponding channel; an empty list means
    unitary evolution.
    """
    t1 = spec.t1_us if t1_us is None else t1_us
    t_phi = spec.t_phi_us if t_phi_us is None else t_phi_us
    a = lowering_operator(spec.n_levels)
    ops = []
    if np.isfinite(t1):
        ops.append(np.sqrt(1.0 / t1) * a)
    if np.isfinite(t_phi):
        ops.append(np.sqrt(1.0 / t_phi) * (a.conj().T @ a))
    return ops


@dataclass(frozen=True)
class DeviceOperators:
    """Bundled operator set for one device configuration."""

    spec: TransmonSpec
    drift: np.ndarray = field(repr=False)
    quad_i: np.ndarray = field(repr=False)
    quad_q: np.ndarray = field(repr=False)
    collapse: tuple = field(repr=False)

    @classmethod
    def build(cls, spec, with_noise=True):
        quad_i, quad_q = control_operators(spec)
        collapse = tuple(collapse_operators(spec)) if with_noise else ()
        return cls(spec=spec, drift=drift_hamiltonian(spec),
                   quad_i=quad_i, quad_q=quad_q, collapse=collapse)

    @property
    def n_levels(self):
        return self.spec.n_levels


def computational_projector(n_levels):
    """Projector onto the four encoding levels 0..3."""
    p = np.zeros((n_levels, n_levels), dtype=complex)
    p[:4, :4] = np.eye(4)
    return p


def embed_target(u4, spec):
    """Place a 4x4 unitary in the top-left block of the device space.

    Returns (target, projector); the action outside levels 0..3 is left
    unconstrained, matching subspace-fidelity optimization.
    """
    u4 = np.asarray(u4, dtype=complex)
    if u4.shape != (4, 4) or not is_unitary(u4, tol=1e-9):
        raise InvalidInputError("embed_target requires a 4x4 unitary")
    n = spec.n_levels
    target = np.eye(n, dtype=complex)
    target[:4, :4] = u4
    return target, computational_projector(n)
