"""Eigenvalue-difference extraction from occupation-probability spectra.

Frequencies are energies: omega = delta-E in MeV with hbar = 1 (angular
convention throughout; mixing linear and angular frequencies is the
likeliest way to break this module, so every frequency axis here is
2*pi*bin/(n*dt)).

The refinement step fits the time-domain probability model

    g_m(t) = d_m + sum_j [ d_mj cos(w_j t) + e_mj sin(w_j t) ]

with the cosine/sine coefficients eliminated by generalized least
squares under a correlated, dissipation-weighted Gaussian noise kernel,
and maximizes a Gaussian likelihood of the power spectra over the peak
frequencies and the kernel parameters (sigma, correlation length l,
dissipation endpoint gamma).
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import FitFailureError, InvalidInputError


@dataclass(frozen=True)
class PowerSpectrum:
    """One-sided power spectra of the mean-subtracted occupations."""

    frequencies: np.ndarray = field(repr=False)   # MeV, ascending from 0
    per_state: np.ndarray = field(repr=False)     # shape (4, n_bins)
    total: np.ndarray = field(repr=False)
    dt: float = 0.0

    def to_csv(self):
        import csv as _csv
        import io as _io
        buf = _io.StringIO()
        writer = _csv.writer(buf, lineterminator="\n")
        writer.writerow(["omega_MeV", "S0", "S1", "S2", "S3", "S_total"])
        for i, f in enumerate(self.frequencies):
            writer.writerow([format(f, ".17g")]
                            + [format(self.per_state[m, i], ".17g") for m in range(4)]
                            + [format(self.total[i], ".17g")])
        return buf.getvalue()


@dataclass(frozen=True)
class NoiseKernelParams:
    sigma: float
    corr_length: float
    gamma: float

    def __post_init__(self):
        if self.sigma < 0 or self.corr_length <= 0 or self.gamma <= 0:
            raise InvalidInputError("invalid noise kernel parameters")


@dataclass(frozen=True)
class SpectralResult:
    omega: np.ndarray = field(repr=False)       # MeV, ascending
    omega_err: np.ndarray = field(repr=False)
    kernel: NoiseKernelParams = None
    log_likelihood: float = 0.0

    def to_json(self):
        payload = {
            "omega_MeV": [float(w) for w in self.omega],
            "omega_err": [float(e) for e in self.omega_err],
            "sigma": float(self.kernel.sigma),
            "l": float(self.kernel.corr_length),
            "gamma": float(self.kernel.gamma),
            "loglik": float(self.log_likelihood),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(np.array(data["omega_MeV"]), np.array(data["omega_err"]),
                   NoiseKernelParams(data["sigma"], data["l"], data["gamma"]),
                   data["loglik"])


@dataclass(frozen=True)
class ReconstructionResult:
    lambdas: np.ndarray = field(repr=False)     # MeV, ascending, shift removed
    lambda_err: np.ndarray = field(repr=False)
    case_id: str = ""
    alpha: float = 0.0
    beta: float = 0.0
    alpha_err: float = 0.0
    beta_err: float = 0.0

    def to_json(self):
        payload = {
            "lambda_MeV": [float(v) for v in self.lambdas],
            "lambda_err": [float(v) for v in self.lambda_err],
            "case_id": self.case_id,
            "alpha": float(self.alpha),
            "beta": float(self.beta),
            "alpha_err": float(self.alpha_err),
            "beta_err": float(self.beta_err),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def power_spectrum(record):
    """Unitary DFT power of each mean-subtracted P_m series, plus the sum."""
    probs = np.asarray(record.probabilities, dtype=float)
    n = probs.shape[0]
    if n < 8:
        raise InvalidInputError("record too short for spectral analysis")
    dt = record.dt if record.dt else float(record.times[1] - record.times[0])
    centered = probs - probs.mean(axis=0, keepdims=True)
    spec = np.fft.fft(centered, axis=0) / math.sqrt(n)
    n_bins = n // 2 + 1
    power = np.abs(spec[:n_bins]) ** 2
    freqs = 2.0 * np.pi * np.arange(n_bins) / (n * dt)
    return PowerSpectrum(freqs, power.T.copy(), power.sum(axis=1), dt=dt)


def find_peaks(spec, d=4):
    """Local maxima of the summed spectrum above a robust noise floor.

    Returns up to d(d-1)/2 frequencies sorted ascending; degeneracies in
    the underlying spectrum naturally yield fewer peaks.
    """
    total = spec.total
    if total.size == 0:
        raise InvalidInputError("empty spectrum")
    # Bins 0-1 carry the DC component and the slow decoherence-envelope
    # drift, which is broadband around zero and can form a spurious local
    # maximum at the first body bin; real gap frequencies start above it.
    body = total[2:]
    floor = np.median(body) + 5.0 * np.median(np.abs(body - np.median(body)))
    # In clean spectra the robust floor collapses to numerical zero, so also
    # require a minimal height relative to the strongest line; genuine gap
    # peaks are within a few decades of each other.
    floor = max(floor, 1e-6 * float(body.max(initial=0.0)))
    peaks = []
    for i in range(2, len(total) - 1):
        if total[i] > floor and total[i] >= total[i - 1] and total[i] > total[i + 1]:
            peaks.append((total[i], spec.frequencies[i]))
    if not peaks:
        raise FitFailureError("no spectral peaks found above the noise floor")
    peaks.sort(reverse=True)
    keep = peaks[: d * (d - 1) // 2]
    return np.sort([f for _, f in keep])


def _covariance(n, sigma, corr_length, gamma):
    idx = np.arange(n)
    kappa = 1.0 + (gamma - 1.0) * idx / max(n - 1, 1)
    kmin = np.minimum.outer(kappa, kappa)
    gauss = np.exp(-((idx[:, None] - idx[None, :]) ** 2) / (2.0 * corr_length ** 2))
    cov = sigma ** 2 * kmin * gauss
    cov[np.diag_indices(n)] += 1e-12 + 1e-8 * sigma ** 2
    return cov


def _design_matrix(t, omega):
    cols = [np.ones_like(t)]
    for w in omega:
        cols.append(np.cos(w * t))
        cols.append(np.sin(w * t))
    return np.column_stack(cols)


def _noise_power_diag(cov):
    """diag(F C F^dag) for the unitary DFT F, via wrapped-diagonal sums.

    (F C F^dag)_jj = (1/n) sum_k s_k w^{jk} with s_k the sum of C over
    entries whose index difference is k mod n, so one length-n FFT
    suffices.
    """
    n = cov.shape[0]
    idx = np.arange(n)
    lags = (idx[:, None] - idx[None, :]) % n
    s = np.bincount(lags.ravel(), weights=cov.ravel(), minlength=n)
    return np.real(np.fft.fft(s)) / n


def _model_spectra(t, probs, omega, kernel_params):
    """GLS-fitted model power spectra and the fitted time-domain models.

    The covariance is factored once and all states are solved against the
    same whitened design; this sits in the innermost loop of the
    likelihood search, so it avoids the per-call diagnostics of
    :func:`nnspin.numerics.gls_solve`.
    """
    n, n_states = probs.shape
    cov = _covariance(n, *kernel_params)
    x = _design_matrix(t, omega)
    noise_diag = _noise_power_diag(cov)
    n_bins = n // 2 + 1
    chol = np.linalg.cholesky(cov)
    xw = scipy.linalg.solve_triangular(chol, x, lower=True)
    yw = scipy.linalg.solve_triangular(chol, probs, lower=True)
    coeffs, *_ = np.linalg.lstsq(xw, yw, rcond=None)
    models = x @ coeffs
    centered = models - models.mean(axis=0, keepdims=True)
    fg = np.fft.fft(centered, axis=0) / math.sqrt(n)
    spectra = np.abs(fg[:n_bins]) ** 2 + noise_diag[:n_bins, None]
    return spectra.T.copy(), models


def _observed_spectra(probs):
    n = probs.shape[0]
    centered = probs - probs.mean(axis=0, keepdims=True)
    spec = np.fft.fft(centered, axis=0) / math.sqrt(n)
    return (np.abs(spec[: n // 2 + 1]) ** 2).T


def gls_refine(record, omega_init, prior_width=None, n_restarts=3, rng_seed=0,
               max_iterations=4000):
    """Refine DFT peak estimates by maximum likelihood.

    ``omega_init`` seeds Gaussian priors whose width defaults to one DFT
    bin spacing.  The outer search is a derivative-free simplex over
    (omega, log sigma, log l, log gamma), restarted from jittered
    initializations; uncertainties come from the curvature of the
    negative log-likelihood at the optimum.
    """
    omega_init = np.sort(np.asarray(omega_init, dtype=float))
    if omega_init.size == 0:
        raise InvalidInputError("need at least one initial peak estimate")
    probs = np.asarray(record.probabilities, dtype=float)
    t = np.asarray(record.times, dtype=float)
    n = probs.shape[0]
    dt = record.dt if record.dt else float(t[1] - t[0])
    bin_width = 2.0 * np.pi / (n * dt)
    if prior_width is None:
        prior_width = bin_width
    n_peaks = omega_init.size
    obs = _observed_spectra(probs)[:, 1:]  # drop the DC bin
    n_bins = obs.shape[1]

    def unpack(theta):
        omega = theta[:n_peaks]
        sigma = math.exp(theta[n_peaks])
        corr = math.exp(theta[n_peaks + 1])
        gamma = math.exp(theta[n_peaks + 2])
        return omega, (sigma, corr, gamma)

    def nll(theta):
        omega, kernel = unpack(theta)
        if np.any(omega <= 0) or np.any(np.diff(omega) <= 0):
            return 1e12
        if kernel[1] > 10 * n or kernel[2] > 1e4:
            return 1e12
        try:
            model, _ = _model_spectra(t, probs, omega, kernel)
        except Exception:
            return 1e12
        resid = obs - model[:, 1:]
        value = 0.0
        for m in range(probs.shape[1]):
            s2 = max(float(np.mean(resid[m] ** 2)), 1e-30)
            value += 0.5 * n_bins * (math.log(s2) + 1.0)
        value += float(np.sum((omega - omega_init) ** 2) / (2.0 * prior_width ** 2))
        return value

    scale0 = max(float(np.std(probs)), 1e-3)
    theta0 = np.concatenate([omega_init,
                             [math.log(0.05 * scale0), math.log(5.0), 0.0]])
    rng = np.random.default_rng(rng_seed)
    best = None
    for restart in range(n_restarts):
        start = theta0.copy()
        if restart > 0:
            start[:n_peaks] += rng.normal(0.0, 0.2 * prior_width, n_peaks)
            start[n_peaks:] += rng.normal(0.0, 0.3, 3)
        res = scipy.optimize.minimize(
            nll, start, method="Nelder-Mead",
            options={"maxiter": max_iterations, "xatol": 1e-6, "fatol": 1e-8})
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not np.isfinite(best.fun) or best.fun >= 1e12:
        raise FitFailureError("spectral likelihood fit failed", best=best)

    omega, kernel = unpack(best.x)
    omega_err = _curvature_errors(nll, best.x, n_peaks, bin_width)
    return SpectralResult(np.array(omega), omega_err,
                          NoiseKernelParams(*kernel), -float(best.fun))


def _curvature_errors(nll, theta, n_peaks, bin_width):
    """1-sigma errors from the inverse Hessian of the negative log-likelihood."""
    dim = len(theta)
    h = np.empty((dim, dim))
    steps = np.full(dim, 1e-4)
    steps[:n_peaks] = max(1e-5, 1e-3 * bin_width)
    f0 = nll(theta)
    for i in range(dim):
        for j in range(i, dim):
            ei = np.zeros(dim); ei[i] = steps[i]
            ej = np.zeros(dim); ej[j] = steps[j]
            if i == j:
                val = (nll(theta + ei) - 2 * f0 + nll(theta - ei)) / steps[i] ** 2
            else:
                val = (nll(theta + ei + ej) - nll(theta + ei - ej)
                       - nll(theta - ei + ej) + nll(theta - ei - ej)) \
                      / (4 * steps[i] * steps[j])
            h[i, j] = h[j, i] = val
    try:
        cov = np.linalg.inv(h)
        var = np.diag(cov)[:n_peaks]
        if np.any(var <= 0):
            raise np.linalg.LinAlgError
        return np.sqrt(var)
    except np.linalg.LinAlgError:
        # Curvature not resolvable; fall back to the DFT bin resolution.
        return np.full(n_peaks, bin_width)


def reconstruct_eigenvalues(result1, result3, trace_shift, shifted_trace,
                            match_tol_floor=0.25):
    """Absolute eigenvalues from the linear and cubed gap sets.

    alpha is the largest gap of the shifted Hamiltonian, beta the largest
    gap of its cube.  Both branches of the extremal-pair solution are
    combined with the three possible degeneracy placements; the unique
    candidate whose pairwise differences reproduce ``result1``'s peak set
    within joint uncertainty wins.  On exact ties the '+' branch is
    preferred (a zero trace leaves the sign of the spectrum undetermined:
    a spectrum and its negation share every difference set).

    ``match_tol_floor`` (MeV) guards against over-confident curvature
    errors: wrong candidates miss the measured gap set by the order of
    the level spacing, while propagated peak errors on a correct one can
    reach ~0.1 MeV, so the floor separates the two regimes cleanly.
    """
    if result1.omega.size == 0 or result3.omega.size == 0:
        raise InvalidInputError("both spectral results must contain peaks")
    i1 = int(np.argmax(result1.omega))
    i3 = int(np.argmax(result3.omega))
    alpha = float(result1.omega[i1])
    beta = float(result3.omega[i3])
    alpha_err = float(result1.omega_err[i1])
    beta_err = float(result3.omega_err[i3])

    disc = beta / (3.0 * alpha) - alpha ** 2 / 12.0
    if disc < -1e-9 * max(1.0, alpha ** 2):
        raise InvalidInputError(
            f"inconsistent gap inputs: discriminant {disc:.3e} is negative")
    root = math.sqrt(max(disc, 0.0))

    # First-order error propagation through lambda0 = -alpha/2 +- root.
    safe_root = max(root, 1e-9)
    dl0_dbeta_mag = 1.0 / (6.0 * alpha * safe_root)
    dl0_dalpha_base = -0.5
    dl0_dalpha_root = (-beta / (3.0 * alpha ** 2) - alpha / 6.0) / (2.0 * safe_root)

    candidates = []
    for branch, sign in (("+", 1.0), ("-", -1.0)):
        lam0 = -alpha / 2.0 + sign * root
        lam3 = alpha + lam0
        dl0_da = dl0_dalpha_base + sign * dl0_dalpha_root
        dl0_db = sign * dl0_dbeta_mag
        var0 = (dl0_da * alpha_err) ** 2 + (dl0_db * beta_err) ** 2
        var3 = ((1.0 + dl0_da) * alpha_err) ** 2 + (dl0_db * beta_err) ** 2
        for case, name in ((0, "lambda1=lambda0"), (1, "lambda1=lambda2"),
                           (2, "lambda2=lambda3")):
            if case == 0:
                lam1 = lam0
                lam2 = shifted_trace - 2 * lam0 - lam3
                errs = [math.sqrt(var0), math.sqrt(var0),
                        math.sqrt(4 * var0 + var3), math.sqrt(var3)]
            elif case == 1:
                lam1 = lam2 = (shifted_trace - lam0 - lam3) / 2.0
                mid_err = 0.5 * math.sqrt(var0 + var3)
                errs = [math.sqrt(var0), mid_err, mid_err, math.sqrt(var3)]
            else:
                lam1 = shifted_trace - lam0 - 2 * lam3
                lam2 = lam3
                errs = [math.sqrt(var0), math.sqrt(var0 + 4 * var3),
                        math.sqrt(var3), math.sqrt(var3)]
            spectrum = np.array([lam0, lam1, lam2, lam3])
            order_slack = 1e-9 * max(1.0, alpha)
            if np.any(np.diff(spectrum) < -order_slack):
                continue
            candidates.append((f"{name},{branch}branch", spectrum, np.array(errs)))

    tol = np.maximum(3.0 * result1.omega_err, match_tol_floor)
    scored = []
    for case_id, spectrum, errs in candidates:
        diffs = _distinct_gaps(spectrum)
        score = 0.0
        ok = True
        for w, t in zip(result1.omega, tol):
            mismatch = float(np.min(np.abs(diffs - w))) if diffs.size else np.inf
            score = max(score, mismatch / t)
            if mismatch > t:
                ok = False
        scored.append((score, case_id, spectrum, errs, ok))
    matching = [s for s in scored if s[4]]
    if not matching:
        detail = "; ".join(f"{c}: score {s:.2f}" for s, c, *_ in scored)
        raise FitFailureError(f"no eigenvalue candidate matches the gap set ({detail})")
    # Stable sort keeps enumeration order ('+' branch first) on ties, which
    # resolves the spectrum-negation ambiguity of a zero-trace input.
    matching.sort(key=lambda s: round(s[0], 9))
    score, case_id, spectrum, errs, _ = matching[0]
    return ReconstructionResult(spectrum - trace_shift, errs, case_id,
                                alpha, beta, alpha_err, beta_err)


def _distinct_gaps(spectrum, tol=1e-9):
    diffs = []
    for i in range(4):
        for j in range(i + 1, 4):
            d = spectrum[j] - spectrum[i]
            if d > tol and all(abs(d - e) > tol for e in diffs):
                diffs.append(d)
    return np.array(sorted(diffs))
