"""Finite-difference gradient checking utilities shared by the test suite.

Central differences at step h have truncation error ~ h^2 * |f'''| / 6, so a
check at h = 1e-3 is only meaningful where the functional is locally smooth.
ReLU kinks are removed by shifting each hidden bias channel until every
preactivation sits at least `margin` away from zero.
"""

import numpy as np

from descry.encoder import _RECIPE, EncoderParams, backward, forward


def kink_free(params: EncoderParams, img, margin: float = 0.05) -> EncoderParams:
    """Move to a smooth base point: ReLU preactivations at least `margin`
    from zero, pre-normalization vectors of at least unit length.

    Returns a float64 copy; the shifted point is a perfectly valid parameter
    vector, just one where a +-h probe cannot cross an activation kink and
    where the curvature of the L2 normalization (~1/norm^2) stays bounded.
    """
    p = params.astype(np.float64)
    for li in range(len(_RECIPE) - 1):  # hidden (ReLU) layers only
        _, cache = forward(p, img)
        pre = cache.preacts[li]
        for c in range(pre.shape[2]):
            vals = np.sort(pre[:, :, c].ravel())
            delta = _clearing_shift(vals, margin)
            p.biases[li][c] += delta
    # lift the output biases until the weakest descriptor is comfortably long
    dim = p.dim
    for _ in range(8):
        _, cache = forward(p, img)
        if cache.norms.min() >= 1.0:
            break
        p.biases[-1] += 1.0 / np.sqrt(dim)
    # verify the invariants before handing the point to a gradient check
    _, cache = forward(p, img)
    for pre in cache.preacts:
        assert np.abs(pre).min() >= margin * 0.99, "residual kink proximity"
    assert cache.norms.min() >= 1.0, "short pre-normalization vector"
    return p


def _clearing_shift(sorted_vals: np.ndarray, margin: float) -> float:
    """Smallest |delta| such that sorted_vals + delta avoids (-margin, margin)."""
    candidates = [0.0]
    # shifts that place the forbidden band exactly in a gap between values
    for v in sorted_vals:
        candidates.append(margin * 1.01 - v)   # push v just above the band
        candidates.append(-margin * 1.01 - v)  # push v just below the band
    best = None
    for d in sorted(candidates, key=abs):
        if np.abs(sorted_vals + d).min() >= margin:
            best = d
            break
    assert best is not None
    return float(best)


def fd_param_errors(params: EncoderParams, value_fn, analytic, h: float) -> float:
    """Worst relative error between central differences and `analytic` grads.

    value_fn(params) -> scalar; analytic is the (dws, dbs) pair for the same
    functional. Perturbs every single parameter.
    """
    dws, dbs = analytic
    worst = 0.0
    arrays = params.arrays()
    grads = []
    for dw, db in zip(dws, dbs):
        grads.extend([dw, db])
    for arr, g in zip(arrays, grads):
        flat = arr.ravel()
        gflat = np.asarray(g).ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = value_fn(params)
            flat[i] = orig - h
            fm = value_fn(params)
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            denom = max(abs(fd), abs(gflat[i]), 1e-10)
            worst = max(worst, abs(fd - gflat[i]) / denom)
    return worst


def linear_readout(params: EncoderParams, img, pixels, coeffs):
    """Scalar functional sum(coeffs * descriptors[pixels]) and its gradients."""
    desc, cache = forward(params, img)
    pixels = np.asarray(pixels)
    value = float((desc.data[pixels[:, 1], pixels[:, 0]] * coeffs).sum())
    dws, dbs = backward(params, cache, pixels, coeffs)
    return value, (dws, dbs)
