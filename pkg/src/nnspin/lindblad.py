"""Open-system propagation of the device and reference spin dynamics.

The control Hamiltonian is piecewise constant on the hardware sample
grid, so each slice's Lindblad generator is constant and the slice map
is an exact matrix exponential of the superoperator.  The whole gate
collapses to a single n^2 x n^2 matrix that is applied once per gate
application, which keeps 512-gate trajectories cheap and makes the
closed-system limit agree with the unitary path to machine precision.

A generic RK4 ``lindblad_step`` is kept for stepping arbitrary
time-dependent Hamiltonians; RK4 preserves the trace identically
(every stage of the tableau is traceless) but its per-step accuracy at
the raw sample grid is far below the exponential map, so the gate path
does not use it.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .device import lowering_operator
from .errors import IntegrationError, InvalidInputError
from .pulse import TWO_PI, propagate_piecewise


def check_density_matrix(rho, trace_tol=1e-9, herm_tol=1e-10, psd_tol=1e-9):
    rho = np.asarray(rho, dtype=complex)
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        raise InvalidInputError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > trace_tol:
        raise InvalidInputError("density matrix trace differs from 1")
    if np.linalg.eigvalsh(rho).min() < -psd_tol:
        raise InvalidInputError("density matrix has a significantly negative eigenvalue")
    return rho


def basis_state_density(n_levels, index):
    rho = np.zeros((n_levels, n_levels), dtype=complex)
    rho[index, index] = 1.0
    return rho


def lindblad_rhs(rho, h, c_ops):
    out = -1j * (h @ rho - rho @ h)
    for c in c_ops:
        cd = c.conj().T
        cdc = cd @ c
        out += c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc)
    return out


def lindblad_step(rho, h_of_t, c_ops, t, dt, tol=1e-10, max_depth=12):
    """One RK4 step of the master equation with a half-step error probe.

    ``h_of_t`` may be a callable tau -> H or a constant matrix.  On probe
    failure the step is split recursively up to ``max_depth`` levels.
    """
    h_fun = h_of_t if callable(h_of_t) else (lambda _t: h_of_t)

    def rk4(r, t0, h_step):
        k1 = lindblad_rhs(r, h_fun(t0), c_ops)
        k2 = lindblad_rhs(r + 0.5 * h_step * k1, h_fun(t0 + 0.5 * h_step), c_ops)
        k3 = lindblad_rhs(r + 0.5 * h_step * k2, h_fun(t0 + 0.5 * h_step), c_ops)
        k4 = lindblad_rhs(r + h_step * k3, h_fun(t0 + h_step), c_ops)
        return r + (h_step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    def advance(r, t0, h_step, depth):
        full = rk4(r, t0, h_step)
        half = rk4(rk4(r, t0, 0.5 * h_step), t0 + 0.5 * h_step, 0.5 * h_step)
        if np.max(np.abs(full - half)) <= tol:
            return half
        if depth >= max_depth:
            raise IntegrationError(
                f"step size control failed at t = {t0} (depth {depth})")
        mid = advance(r, t0, 0.5 * h_step, depth + 1)
        return advance(mid, t0 + 0.5 * h_step, 0.5 * h_step, depth + 1)

    return advance(np.asarray(rho, dtype=complex), t, dt, 0)


def liouvillian(h, c_ops):
    """Column-stacking superoperator of the Lindblad generator."""
    n = h.shape[0]
    ident = np.eye(n)
    sup = -1j * (np.kron(ident, h) - np.kron(h.T, ident))
    for c in c_ops:
        cdc = c.conj().T @ c
        sup += (np.kron(c.conj(), c)
                - 0.5 * np.kron(ident, cdc)
                - 0.5 * np.kron(cdc.T, ident))
    return sup


def apply_superoperator(sup, rho):
    n = rho.shape[0]
    return (sup @ rho.flatten(order="F")).reshape((n, n), order="F")


def gate_superoperator(ops, pulse):
    """Exact map for one full pulse: product of per-slice exponentials.

    Without collapse operators this reduces to conjugation by the
    piecewise unitary.
    """
    n = ops.n_levels
    if not ops.collapse:
        u = propagate_piecewise(ops, pulse)
        return np.kron(u.conj(), u)
    dt = pulse.dt_us
    diss = liouvillian(np.zeros((n, n)), ops.collapse)
    sup = np.eye(n * n, dtype=complex)
    ident = np.eye(n)
    for k in range(pulse.n_samples):
        h = (ops.drift + TWO_PI * pulse.eps_i[k] * ops.quad_i
             + TWO_PI * pulse.eps_q[k] * ops.quad_q)
        lk = -1j * (np.kron(ident, h) - np.kron(h.T, ident)) + diss
        sup = scipy.linalg.expm(lk * dt) @ sup
    return sup


def evolve_gate(rho0, pulse, ops, superop=None):
    """Propagate the state through one full pulse; end-of-gate state only."""
    if superop is None:
        superop = gate_superoperator(ops, pulse)
    return apply_superoperator(superop, np.asarray(rho0, dtype=complex))


@dataclass(frozen=True)
class OccupationRecord:
    """Per-gate-application occupation probabilities on levels 0..3."""

    steps: np.ndarray = field(repr=False)        # gate application counts
    times: np.ndarray = field(repr=False)        # nuclear time, MeV^-1
    probabilities: np.ndarray = field(repr=False)  # shape (len(steps), 4)
    dt: float = 0.0                              # nuclear step, MeV^-1

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=float)
        if probs.ndim != 2 or probs.shape[1] != 4:
            raise InvalidInputError("probabilities must have shape (k, 4)")
        if probs.min() < -1e-9 or probs.max() > 1 + 1e-9:
            raise InvalidInputError("probabilities outside [0, 1] tolerance band")
        if np.max(probs.sum(axis=1)) > 1 + 1e-9:
            raise InvalidInputError("computational-subspace probabilities exceed 1")

    def __len__(self):
        return len(self.steps)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "time_MeV_inv", "P0", "P1", "P2", "P3"])
        for i, k in enumerate(self.steps):
            writer.writerow([int(k), format(self.times[i], ".17g")]
                            + [format(p, ".17g") for p in self.probabilities[i]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header != ["step", "time_MeV_inv", "P0", "P1", "P2", "P3"]:
            raise InvalidInputError(f"unexpected trajectory CSV header {header}")
        steps, times, probs = [], [], []
        for row in reader:
            if not row:
                continue
            steps.append(int(row[0]))
            times.append(float(row[1]))
            probs.append([float(v) for v in row[2:6]])
        dt = float(times[1] - times[0]) if len(times) > 1 else 0.0
        return cls(np.array(steps), np.array(times), np.array(probs), dt=dt)


def _record_from_states(rhos, dt):
    steps = np.arange(len(rhos))
    probs = np.array([[float(r[m, m].real) for m in range(4)] for r in rhos])
    probs = np.clip(probs, -1e-9, 1 + 1e-9)
    return OccupationRecord(steps, steps * dt, probs, dt=dt)


def repeated_gate_trajectory(rho0, pulse, ops, n_steps, nuclear_dt,
                             superop=None, check_every=32):
    """Apply the gate map ``n_steps`` times, recording P_0..P_3 after each.

    The record includes the initial probabilities at step 0.  State
    sanity (trace, Hermiticity, positivity) is asserted periodically.
    """
    if n_steps < 0:
        raise InvalidInputError("n_steps must be non-negative")
    if superop is None:
        superop = gate_superoperator(ops, pulse)
    rho = np.asarray(rho0, dtype=complex)
    states = [rho]
    for k in range(n_steps):
        rho = apply_superoperator(superop, rho)
        if (k + 1) % check_every == 0:
            trace = np.trace(rho).real
            if abs(trace - 1.0) > 1e-8:
                raise IntegrationError(f"trace drifted to {trace} at step {k + 1}")
        states.append(rho)
    return _record_from_states(states, nuclear_dt)


def spin_collapse_rates(spec, pulse_duration_us, nuclear_dt):
    """Device decay rates mapped to nuclear units.

    One gate of wall duration tau realizes one nuclear step dt, so the
    fractional decay per gate tau/T becomes a rate (tau/T)/dt in MeV.
    """
    gamma1 = (pulse_duration_us / spec.t1_us) / nuclear_dt
    gamma_phi = (pulse_duration_us / spec.t_phi_us) / nuclear_dt
    return gamma1, gamma_phi


def reference_spin_trajectory(h, nuclear_dt, n_steps, spec=None,
                              pulse_duration_us=0.1, power=1, noise=True,
                              initial_index=1):
    """Direct 4-level Lindblad evolution of the spin Hamiltonian.

    With noise enabled the device T1/T_phi channels are rescaled to
    nuclear interaction strengths; without noise the evolution is the
    exact unitary reference.
    """
    if nuclear_dt <= 0:
        raise InvalidInputError("nuclear time step must be positive")
    w, v = np.linalg.eigh(h)
    h_eff = (v * (w ** power)) @ v.conj().T
    c_ops = []
    if noise:
        if spec is None:
            raise InvalidInputError("noisy reference trajectory needs a TransmonSpec")
        gamma1, gamma_phi = spin_collapse_rates(spec, pulse_duration_us, nuclear_dt)
        a4 = lowering_operator(4)
        c_ops = [np.sqrt(gamma1) * a4, np.sqrt(gamma_phi) * (a4.conj().T @ a4)]
    step_map = scipy.linalg.expm(liouvillian(h_eff, c_ops) * nuclear_dt)
    rho = basis_state_density(4, initial_index)
    states = [rho]
    for _ in range(n_steps):
        rho = apply_superoperator(step_map, rho)
        states.append(rho)
    return _record_from_states(states, nuclear_dt)
