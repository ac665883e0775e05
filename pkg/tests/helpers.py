"""Shared test utilities: the finite-difference gradient oracle."""

import numpy as np

FD_STEP = 1e-4
REL_TOL = 1e-4
ABS_TOL = 1e-6


def numeric_grads(loss_fn, net, h=FD_STEP):
    """Central finite differences of loss_fn(net) w.r.t. every parameter.

    Mutates parameters in place, one component at a time, and restores them.
    Stays independent of the analytic backward path it is used to check.
    """
    grads = [{} for _ in net.specs]
    for i, p in enumerate(net.params):
        for name, arr in p.items():
            flat = arr.ravel()
            g = np.zeros(flat.size)
            for idx in range(flat.size):
                old = flat[idx]
                flat[idx] = old + h
                up = loss_fn(net)
                flat[idx] = old - h
                down = loss_fn(net)
                flat[idx] = old
                g[idx] = (up - down) / (2 * h)
            grads[i][name] = g.reshape(arr.shape)
    return grads


def assert_grads_close(analytic, numeric, rel=REL_TOL, abs_=ABS_TOL):
    """Componentwise |a - n| <= max(abs_, rel * max(|a|, |n|))."""
    for layer, (a, n) in enumerate(zip(analytic, numeric)):
        assert a.keys() == n.keys()
        for name in a:
            diff = np.abs(a[name] - n[name])
            scale = np.maximum(np.abs(a[name]), np.abs(n[name]))
            bound = np.maximum(abs_, rel * scale)
            bad = diff > bound
            assert not bad.any(), (
                f"layer {layer} parameter {name}: {int(bad.sum())} gradient components "
                f"exceed tolerance (worst diff {diff.max():.3e})"
            )
