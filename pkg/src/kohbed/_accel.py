"""Optional numba acceleration for the hot inner loops.

Every kernel here has a pure-numpy twin; the active path is chosen once at
import time from the ``KOHBED_NUMBA`` environment variable (any value other
than ``0``/``false``/``off`` enables numba when it is importable).  The
public functions dispatch to whichever twin is active, so callers never
need to know which backend ran.  ``benchmarks/bench_accel.py`` compares the
two paths head to head.
"""

from __future__ import annotations

import math
import os

import numpy as np

_LOG_2PI = math.log(2.0 * math.pi)


def _env_wants_numba() -> bool:
    raw = os.environ.get("KOHBED_NUMBA", "1").strip().lower()
    return raw not in ("0", "false", "off", "no")


NUMBA_ENABLED = False
if _env_wants_numba():
    try:
        from numba import njit, prange

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False


def using_numba() -> bool:
    """True when the jitted kernels are the active dispatch target."""
    return NUMBA_ENABLED


# ---------------------------------------------------------------------------
# kernel bodies (written once; compiled when numba is active)
# ---------------------------------------------------------------------------


def _mi_accumulate_numpy(acc_joint, acc_new, log_w, pred_qf, pred_logdet,
                         z_row, y_new, mu_c, s_cond, mu_marg, var_marg,
                         n_pred, init):
    r = (y_new - mu_c[:, None] - z_row) / s_cond[:, None]
    term = (log_w
            - 0.5 * (n_pred + 1) * _LOG_2PI
            - pred_logdet
            - np.log(s_cond)[:, None]
            - 0.5 * (pred_qf[None, :] + r * r))
    rm = y_new - mu_marg[:, None]
    term_new = (log_w
                - 0.5 * _LOG_2PI
                - 0.5 * np.log(var_marg)[:, None]
                - 0.5 * rm * rm / var_marg[:, None])
    if init:
        acc_joint[:] = term
        acc_new[:] = term_new
    else:
        np.logaddexp(acc_joint, term, out=acc_joint)
        np.logaddexp(acc_new, term_new, out=acc_new)


def _crps_double_sum_numpy(samples):
    # (1/S^2) * sum_{s,s'} ||x_s - x_s'||_1 over all coordinates
    s = samples.shape[0]
    total = 0.0
    for k in range(samples.shape[1]):
        col = samples[:, k]
        total += np.abs(col[:, None] - col[None, :]).sum()
    return total / (s * s)


if NUMBA_ENABLED:

    @njit(cache=True, parallel=True, fastmath=True)
    def _mi_init_jit(acc_joint, acc_new, log_w, pred_qf, pred_logdet,
                     z_row, y_new, mu_c, s_cond, mu_marg, var_marg,
                     n_pred):  # pragma: no cover - via dispatch
        m, s = z_row.shape
        c_joint = log_w - 0.5 * (n_pred + 1) * _LOG_2PI - pred_logdet
        c_new = log_w - 0.5 * _LOG_2PI
        for i in prange(m):
            inv_s = 1.0 / s_cond[i]
            log_s = math.log(s_cond[i])
            log_v = math.log(var_marg[i])
            inv_v = 1.0 / var_marg[i]
            for t in range(s):
                r = (y_new[i, t] - mu_c[i] - z_row[i, t]) * inv_s
                acc_joint[i, t] = c_joint - log_s - 0.5 * (pred_qf[t] + r * r)
                rm = y_new[i, t] - mu_marg[i]
                acc_new[i, t] = c_new - 0.5 * log_v - 0.5 * rm * rm * inv_v

    @njit(cache=True, parallel=True, fastmath=True)
    def _mi_accumulate_jit(acc_joint, acc_new, log_w, pred_qf, pred_logdet,
                           z_row, y_new, mu_c, s_cond, mu_marg, var_marg,
                           n_pred):  # pragma: no cover - via dispatch
        m, s = z_row.shape
        c_joint = log_w - 0.5 * (n_pred + 1) * _LOG_2PI - pred_logdet
        c_new = log_w - 0.5 * _LOG_2PI
        for i in prange(m):
            inv_s = 1.0 / s_cond[i]
            log_s = math.log(s_cond[i])
            log_v = math.log(var_marg[i])
            inv_v = 1.0 / var_marg[i]
            for t in range(s):
                r = (y_new[i, t] - mu_c[i] - z_row[i, t]) * inv_s
                term = c_joint - log_s - 0.5 * (pred_qf[t] + r * r)
                a = acc_joint[i, t]
                hi = a if a > term else term
                lo = term if a > term else a
                acc_joint[i, t] = hi + math.log1p(math.exp(lo - hi))
                rm = y_new[i, t] - mu_marg[i]
                term2 = c_new - 0.5 * log_v - 0.5 * rm * rm * inv_v
                a2 = acc_new[i, t]
                hi2 = a2 if a2 > term2 else term2
                lo2 = term2 if a2 > term2 else a2
                acc_new[i, t] = hi2 + math.log1p(math.exp(lo2 - hi2))

    @njit(cache=True)
    def _crps_double_sum_jit(samples):  # pragma: no cover - via dispatch
        s, d = samples.shape
        total = 0.0
        for k in range(d):
            for i in range(s):
                for j in range(s):
                    total += abs(samples[i, k] - samples[j, k])
        return total / (s * s)


def mi_accumulate(acc_joint, acc_new, log_w, pred_qf, pred_logdet,
                  z_row, y_new, mu_c, s_cond, mu_marg, var_marg, n_pred,
                  init=False):
    """Fold one mixture component into the running log-density accumulators.

    ``acc_joint``/``acc_new`` are (M, S) logsumexp accumulators over
    components for the joint (prediction + candidate) density and the
    candidate-marginal density; they are updated in place.  ``init=True``
    overwrites instead of accumulating (the first component), which keeps
    infinities out of the running values.
    """
    if NUMBA_ENABLED:
        fn = _mi_init_jit if init else _mi_accumulate_jit
        fn(acc_joint, acc_new, float(log_w), pred_qf, float(pred_logdet),
           z_row, y_new, mu_c, s_cond, mu_marg, var_marg, int(n_pred))
    else:
        _mi_accumulate_numpy(acc_joint, acc_new, float(log_w), pred_qf,
                             float(pred_logdet), z_row, y_new, mu_c, s_cond,
                             mu_marg, var_marg, int(n_pred), bool(init))


def crps_double_sum(samples):
    """(1/S^2) sum_{s,s'} ||x_s - x_s'||_1 by the literal double loop.

    Reference implementation used to validate the sorted O(S log S) form.
    """
    samples = np.ascontiguousarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    if NUMBA_ENABLED:
        return float(_crps_double_sum_jit(samples))
    return float(_crps_double_sum_numpy(samples))
