"""Dormand-Prince 5(4) integrator with dense output and escape monitoring.

The integrator never decides what an escape *means*; it reports how the run
ended (``finished``, ``escaped``, ``collapsed``) together with the growth
history needed by :func:`daebasin.dynamics.classify`.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import DAEError

__all__ = ["ODEResult", "dopri45"]

# Dormand & Prince (1980) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_E = _B - np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
# continuous extension, y(t + th*h) = y + h * K^T P [th, th^2, th^3, th^4]
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY, MIN_FACTOR, MAX_FACTOR = 0.9, 0.2, 10.0


@dataclass
class ODEResult:
    t: np.ndarray
    y: np.ndarray
    status: str                      # finished | escaped | collapsed | underflow
    t_eval: np.ndarray = None
    y_eval: np.ndarray = None
    h_last: float = None
    norms: np.ndarray = None         # ||y - ref|| at accepted steps
    rates: np.ndarray = None         # ||f(y)|| at accepted steps
    error_estimate: float = 0.0      # accumulated local error estimate at step points (max-norm)
    n_steps: int = 0
    n_rejected: int = 0
    last_error: DAEError = None
    message: str = ""
    extra: dict = field(default_factory=dict)


def _initial_step(fun, t0, y0, f0, rtol, atol, span):
    scale = atol + np.abs(y0) * rtol
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    try:
        f1 = fun(t0 + h0, y0 + h0 * f0)
        d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    except DAEError:
        return h0 * 1e-3
    if not np.isfinite(d2):
        return h0 * 1e-3
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span)


def dopri45(fun, t0, y0, t_end, rtol=1e-10, atol=1e-12, ref=None, t_eval=None,
            blow_threshold=1e8, escape_norm=1e100, collapse_tol=1e-6,
            h_min_rel=1e-14, max_steps=1_000_000, h_max=None):
    """Integrate ``y' = fun(t, y)`` from ``t0`` to ``t_end``.

    Stage evaluations that raise :class:`DAEError` or return non-finite
    values reject the step.  The run stops early when ``||y - ref||``
    exceeds ``escape_norm`` (``escaped``) or when, above ``blow_threshold``,
    the step shrinks below ``collapse_tol * max(1, |t|)`` (``collapsed``).
    A step below ``h_min_rel * max(1, |t|)`` at any norm ends the run as
    ``underflow``.
    """
    y = np.array(y0, dtype=float)
    ref = np.zeros_like(y) if ref is None else np.asarray(ref, dtype=float)
    span = float(t_end - t0)
    h_max = span if h_max is None else h_max
    t_eval = None if t_eval is None else np.asarray(t_eval, dtype=float)

    ts, ys = [t0], [y.copy()]
    f = np.asarray(fun(t0, y), dtype=float)
    norms, rates = [float(np.linalg.norm(y - ref))], [float(np.linalg.norm(f))]
    ev_t, ev_y = [], []
    ei = 0
    if t_eval is not None:
        while ei < len(t_eval) and t_eval[ei] <= t0:
            ev_t.append(t_eval[ei])
            ev_y.append(y.copy())
            ei += 1

    res = ODEResult(None, None, "finished")
    if span <= 0:
        res.t, res.y = np.array(ts), np.array(ys)
        res.norms, res.rates = np.array(norms), np.array(rates)
        res.t_eval, res.y_eval = (np.array(ev_t), np.array(ev_y).reshape(len(ev_t), -1)) if t_eval is not None else (None, None)
        return res

    h = _initial_step(fun, t0, y, f, rtol, atol, span)
    t = t0
    K = np.empty((7, y.size))
    err_total = 0.0
    rejected_last = False
    status = "finished"
    steps = 0
    while t < t_end:
        if steps >= max_steps:
            status = "collapsed"
            res.message = f"step budget of {max_steps} exhausted"
            break
        h_floor = h_min_rel * max(1.0, abs(t))
        h = min(h, h_max, t_end - t)
        if h < h_floor and t_end - t > h_floor:
            status = "underflow"
            res.message = "step size underflow"
            break

        # stages
        K[0] = f
        ok = True
        try:
            for s in range(1, 7):
                dy = h * (np.asarray(_A[s]) @ K[:s])
                K[s] = fun(t + _C[s] * h, y + dy)
                if not np.all(np.isfinite(K[s])):
                    ok = False
                    break
        except DAEError as exc:
            res.last_error = exc
            ok = False
        if not ok:
            h *= 0.25
            rejected_last = True
            res.n_rejected += 1
            continue

        y_new = y + h * (_B @ K)
        err_vec = h * (_E @ K)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2))) if y.size else 0.0
        if not np.isfinite(err) or not np.all(np.isfinite(y_new)):
            h *= 0.25
            rejected_last = True
            res.n_rejected += 1
            continue
        if err > 1.0:
            h *= max(MIN_FACTOR, SAFETY * err ** -0.2)
            rejected_last = True
            res.n_rejected += 1
            continue

        # accepted
        steps += 1
        t_new = t + h
        if t_eval is not None:
            Q = K.T @ _P
            while ei < len(t_eval) and t_eval[ei] <= t_new:
                th = (t_eval[ei] - t) / h
                p = np.cumprod(np.full(4, th))
                ev_t.append(t_eval[ei])
                ev_y.append(y + h * (Q @ p))
                ei += 1
        err_total += float(np.max(np.abs(err_vec))) if y.size else 0.0
        t, y, f = t_new, y_new, K[6].copy()
        ts.append(t)
        ys.append(y.copy())
        nrm = float(np.linalg.norm(y - ref))
        norms.append(nrm)
        rates.append(float(np.linalg.norm(f)))

        factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, SAFETY * err ** -0.2)
        if rejected_last:
            factor = min(1.0, factor)
        rejected_last = False
        h *= factor

        if nrm > escape_norm:
            status = "escaped"
            break
        if nrm > blow_threshold and h < collapse_tol * max(1.0, abs(t)):
            status = "collapsed"
            break

    res.t, res.y = np.array(ts), np.array(ys)
    res.status = status
    res.h_last = h
    res.norms, res.rates = np.array(norms), np.array(rates)
    res.error_estimate = err_total
    res.n_steps = steps
    if t_eval is not None:
        # requested points lost to rounding of the final step
        while status == "finished" and ei < len(t_eval) and t_eval[ei] <= t + 1e-12 * max(1.0, abs(t)):
            ev_t.append(t_eval[ei])
            ev_y.append(y.copy())
            ei += 1
        res.t_eval = np.array(ev_t)
        res.y_eval = np.array(ev_y).reshape(len(ev_t), y.size)
    return res
