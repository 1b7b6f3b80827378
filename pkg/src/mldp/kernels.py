"""Kernel backend selection.

The compiled extension is used when it imports; set ``MLDP_PURE_PYTHON=1``
to force the numpy fallback. ``BACKEND`` names the active choice.
"""
import os

import numpy as np

from . import _kernels_py

_impl = _kernels_py
BACKEND = "python"
if os.environ.get("MLDP_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py

LOG_2PI = _kernels_py.LOG_2PI


def covariate_loglik(X, mu, prec_chol, log_det):
    return _impl.covariate_loglik(
        np.asarray(X, dtype=float),
        np.ascontiguousarray(mu, dtype=float),
        np.ascontiguousarray(prec_chol, dtype=float),
        np.ascontiguousarray(log_det, dtype=float),
    )


def joint_loglik(x, y, mu, prec_chol, log_det, beta, sigma_y2):
    return _impl.joint_loglik(
        np.ascontiguousarray(x, dtype=float),
        float(y),
        np.ascontiguousarray(mu, dtype=float),
        np.ascontiguousarray(prec_chol, dtype=float),
        np.ascontiguousarray(log_det, dtype=float),
        np.ascontiguousarray(beta, dtype=float),
        np.ascontiguousarray(sigma_y2, dtype=float),
    )


def draw_log_categorical(logits, u):
    return _impl.draw_log_categorical(np.ascontiguousarray(logits, dtype=float), float(u))


def assemble_atoms(chi, off, zmu, zb, psi_inv_chol, V_chol, mu, beta_mean, lam, sigma_y2):
    c = np.ascontiguousarray
    return _impl.assemble_atoms(
        c(chi, dtype=float), c(off, dtype=float).reshape(chi.shape[0], -1), c(zmu, dtype=float),
        c(zb, dtype=float), c(psi_inv_chol, dtype=float), c(V_chol, dtype=float), c(mu, dtype=float),
        c(beta_mean, dtype=float), float(lam), c(sigma_y2, dtype=float),
    )
