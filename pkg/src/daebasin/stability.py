"""Spectral stability, decay constants and the contraction-radius basin certificate.

The certificate: with ``||exp(M t)|| <= C e^{-l t}`` and a Lipschitz bound
``q(r)`` for the nonlinear remainder ``L`` on the ball ``||x - x0|| <= r``,
every ``r`` with ``(C / l) ||A^{-1}|| q(r) <= q* < 1`` makes the integral
form of the reduced equation a contraction, and initial offsets with
``||Delta|| <= (1 - q*) r* / C`` stay in the ball and decay.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, PreconditionError
from .linalg import as_matrix, eigenvalues, matrix_exponential, operator_norm
from .reduction import nonlinear_remainder

__all__ = [
    "DecayEstimate",
    "LipschitzProfile",
    "BasinEstimate",
    "spectral_test",
    "estimate_decay",
    "estimate_q",
    "basin_radius",
    "default_radii",
    "decay_grid",
]

DEFAULT_MARGIN = 0.1
DEFAULT_Q_STAR = 0.5
DEFAULT_SAMPLES = 2000
C_SAFETY = 1.05


@dataclass(frozen=True)
class DecayEstimate:
    l: float
    C: float
    spectral_abscissa: float
    method: str
    sampled_max: float = None

    @property
    def eps(self):
        """Rate slack used in the trajectory envelope ``C ||Delta|| e^{(eps - l) t}``."""
        return self.l / 2.0

    def envelope(self, delta_norm, t, relax=1.0):
        return relax * self.C * delta_norm * np.exp((self.eps - self.l) * np.asarray(t))


@dataclass(frozen=True)
class LipschitzProfile:
    radii: np.ndarray
    q: np.ndarray            # monotonized; inf where unusable
    raw: np.ndarray          # per-radius sampled maxima before monotonization
    usable: np.ndarray
    samples: int
    seed: int
    notes: tuple = ()


@dataclass(frozen=True)
class BasinEstimate:
    r_star: float
    q_star: float
    delta_max: float
    stable: bool
    status: str
    factor: float = None     # (C / l) * ||A^{-1}||
    notes: tuple = field(default_factory=tuple)


def spectral_test(M):
    """``(stable, abscissa)`` with ``abscissa = max Re(lambda)`` over the spectrum of ``M``."""
    spec = eigenvalues(M)
    a = spec.abscissa
    return bool(a < 0), a


def decay_grid(l, points=200, horizon=50.0):
    """``t = 0`` followed by log-spaced times up to ``horizon / l``."""
    t_max = horizon / l
    return np.concatenate([[0.0], np.geomspace(t_max * 1e-4, t_max, points - 1)])


def estimate_decay(M, margin=DEFAULT_MARGIN, points=200, horizon=50.0):
    """Constants ``l`` and ``C`` with ``||exp(M t)|| <= C e^{-l t}``.

    ``l`` takes ``1 - margin`` of the spectral gap.  When the logarithmic
    norm of ``M`` is at most ``-l`` the bound holds with ``C = 1`` exactly;
    otherwise ``C`` is the sampled maximum of ``||exp(M t)|| e^{l t}``
    enlarged by 5 %.
    """
    M = as_matrix(M, "M", square=True)
    if not 0.0 < margin < 1.0:
        raise PreconditionError(f"margin must lie in (0, 1), got {margin}")
    stable, a = spectral_test(M)
    if not stable:
        raise PreconditionError(f"spectral abscissa {a:.6g} is not negative")
    l = -(1.0 - margin) * a

    ts = decay_grid(l, points, horizon)
    vals = np.array([operator_norm(matrix_exponential(M, t)) * np.exp(l * t) for t in ts])
    sampled = float(np.max(vals))

    lognorm = float(np.max(np.linalg.eigvalsh(0.5 * (M + M.T))))
    if lognorm <= -l and sampled <= 1.0 + 1e-12:
        return DecayEstimate(l, 1.0, a, "log-norm", sampled)
    return DecayEstimate(l, max(1.0, C_SAFETY * sampled), a, "sampled", sampled)


def default_radii(r_max=1.0, count=40):
    return np.linspace(r_max / count, r_max, count)


def _ball_pairs(n, r, samples, seed, k):
    """Deterministic sample pairs in the ball of radius ``r`` (offsets from x0).

    Drawn from two independent streams so the first ``s`` pairs do not
    depend on the total count; raising ``samples`` only adds pairs.
    """
    dirs = np.random.default_rng([seed, k, 0]).standard_normal((samples, 3, n))
    unif = np.random.default_rng([seed, k, 1]).random((samples, 4))

    def unit(v):
        nv = np.linalg.norm(v, axis=-1, keepdims=True)
        return v / np.where(nv == 0, 1.0, nv)

    d1, d2, dloc = unit(dirs[:, 0]), unit(dirs[:, 1]), unit(dirs[:, 2])
    mode = unif[:, 2]

    # mode 0: independent points, uniform in the ball
    x1 = r * unif[:, :1] ** (1.0 / n) * d1
    x2 = r * unif[:, 1:2] ** (1.0 / n) * d2

    # modes 1, 2: close pairs near the boundary (local slope), mode 2 along
    # a coordinate axis to reach extreme components in high dimension
    local = mode >= 1 / 3
    axis = mode >= 2 / 3
    if n > 1 and np.any(axis):
        j = np.argmax(np.abs(dirs[axis, 0]), axis=1)
        ax = np.zeros((int(axis.sum()), n))
        ax[np.arange(ax.shape[0]), j] = np.sign(dirs[axis, 0][np.arange(ax.shape[0]), j])
        d1 = d1.copy()
        d1[axis] = ax
    shell = r * (1.0 - 0.25 * unif[:, 0:1])
    step = r * 1e-3 * (0.1 + unif[:, 3:4])
    y1 = shell * d1
    y2 = y1 + step * dloc
    ny2 = np.linalg.norm(y2, axis=1, keepdims=True)
    y2 = np.where(ny2 > r, y2 * (r / ny2), y2)
    x1 = np.where(local[:, None], y1, x1)
    x2 = np.where(local[:, None], y2, x2)
    return x1, x2


def estimate_q(lin, radii=None, samples=DEFAULT_SAMPLES, seed=0, t=0.0):
    """Sampled Lipschitz profile of the nonlinear remainder ``L``.

    For each radius, ``q(r)`` is the largest observed
    ``||L(x1) - L(x2)|| / ||x1 - x2||`` over ``samples`` deterministic pairs
    in the ball, then monotonized by running maximum.  A radius where the
    constraint cannot be solved is marked unusable (``q = inf``).
    """
    radii = default_radii() if radii is None else np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) <= 0) or np.any(radii <= 0):
        raise PreconditionError("radii must be positive and strictly increasing")
    n = lin.problem.n
    x0 = lin.x0
    raw = np.zeros(len(radii))
    usable = np.ones(len(radii), dtype=bool)
    notes = []
    for k, r in enumerate(radii):
        x1s, x2s = _ball_pairs(n, r, samples, seed, k)
        best = 0.0
        try:
            for a, b in zip(x1s, x2s):
                dist = float(np.linalg.norm(a - b))
                if dist <= 1e-14 * r:
                    continue
                La = nonlinear_remainder(lin, x0 + a, t=t, trust_radius=None)
                Lb = nonlinear_remainder(lin, x0 + b, t=t, trust_radius=None)
                ratio = float(np.linalg.norm(La - Lb)) / dist
                if not np.isfinite(ratio):
                    raise NumericError("non-finite remainder difference")
                best = max(best, ratio)
        except NumericError as exc:
            usable[k] = False
            raw[k] = np.inf
            notes.append(f"r={r:.6g}: unusable ({exc.code}: {exc})")
            continue
        raw[k] = best
    q = np.maximum.accumulate(np.where(usable, raw, np.inf))
    return LipschitzProfile(radii, q, raw, usable, samples, seed, tuple(notes))


def basin_radius(decay, profile, norm_A_inv, q_star=DEFAULT_Q_STAR):
    """Certified radius ``r*`` and admissible initial-offset bound.

    ``r*`` ends the run of grid radii, from the smallest up, satisfying
    ``(C / l) ||A^{-1}|| q(r) <= q*``; ``delta_max = (1 - q*) r* / C``.
    """
    if not 0.0 < q_star < 1.0:
        raise PreconditionError(f"q_star must lie in (0, 1), got {q_star}")
    factor = decay.C / decay.l * norm_A_inv
    r_star = 0.0
    for r, q in zip(profile.radii, profile.q):
        if not factor * q <= q_star:
            break
        r_star = float(r)
    if r_star == 0.0:
        return BasinEstimate(0.0, q_star, 0.0, True, "no-certificate", factor,
                             ("no grid radius satisfies the contraction condition",))
    delta_max = (1.0 - q_star) * r_star / decay.C
    return BasinEstimate(r_star, q_star, delta_max, True, "certified", factor)
