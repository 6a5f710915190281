"""Pure numpy versions of the hot kernels.

Semantics match the compiled ``_core`` module exactly; the compiled version
is preferred when available (see ``magkit.kernels``).
"""
import numpy as np

NAME = "numpy"


def mixture_moments(y, images, tau, want_second=True):
    """Soft-assignment moments of a Gaussian mixture centred at ``images``.

    Returns ``(lse, weights, mean, second, fvec, msq)`` where

    * ``lse = log sum_s exp(-|y - x_s|^2 / (2 tau))``
    * ``weights`` are the normalized Boltzmann weights
    * ``mean = sum w_s x_s``
    * ``second = sum w_s xt_s xt_s^T`` with ``xt = x - mean`` (None if not wanted)
    * ``fvec = sum w_s ((y - x_s) . xt_s) xt_s``
    * ``msq = sum w_s |xt_s|^2``
    """
    y = np.asarray(y, dtype=float)
    diff = y[None, :] - images
    logits = -np.einsum("ij,ij->i", diff, diff) / (2.0 * tau)
    top = logits.max()
    w = np.exp(logits - top)
    z = w.sum()
    lse = top + np.log(z)
    w /= z
    mean = w @ images
    xt = images - mean
    proj = np.einsum("ij,ij->i", diff, xt)
    fvec = (w * proj) @ xt
    msq = float(w @ np.einsum("ij,ij->i", xt, xt))
    second = (xt * w[:, None]).T @ xt if want_second else None
    return float(lse), w, mean, second, fvec, msq


def stopped_walk(points, stopped, normals, scales, R):
    """Advance a cloud by Gaussian substeps, freezing particles that leave [-R, R]^D.

    ``points`` (n, D) and ``stopped`` (n,) uint8 are modified in place.
    ``normals`` has shape (nsub, n, D); substep j uses ``scales[j] * normals[j]``.
    A particle whose new position leaves the box is clipped onto the boundary and
    stays there for the rest of the call (and afterwards, via ``stopped``).
    """
    for j in range(normals.shape[0]):
        live = stopped == 0
        if not live.any():
            break
        step = scales[j] * normals[j][live]
        new = points[live] + step
        out = np.any(np.abs(new) > R, axis=1)
        np.clip(new, -R, R, out=new)
        points[live] = new
        idx = np.flatnonzero(live)
        stopped[idx[out]] = 1
    return points, stopped
