"""Extended-precision (x87 long double) evaluation of the reconstruction loss.

Used as a finite-difference oracle: the loss difference between two
perturbed evaluations is resolved far below float64 roundoff.  Written
independently of canids.autoencoder; only the parameter names are shared.
"""

import numpy as np

LD = np.longdouble


def _sig(v):
    return 1 / (1 + np.exp(-v))


def _linear(x, W, b):
    # x: (B, n_in), W: (n_out, n_in)
    return np.tanh(x @ W.T + b)


def _gru(xs, W, U, b):
    """xs: (k, B, n_in) -> hidden states (k, B, h)."""
    h = np.zeros((xs.shape[1], U.shape[1]), dtype=LD)
    H = U.shape[1]
    out = []
    for x in xs:
        a = x @ W.T + b
        z = _sig(a[:, :H] + h @ U[:H].T)
        r = _sig(a[:, H:2 * H] + h @ U[H:2 * H].T)
        c = np.tanh(a[:, 2 * H:] + (r * h) @ U[2 * H:].T)
        h = (1 - z) * h + z * c
        out.append(h)
    return np.stack(out)


def reconstruct(variant, p, x):
    """x: (B, k, f) in long double; p maps parameter names to long double arrays."""
    xs = np.swapaxes(x, 0, 1)
    emb = np.stack([_linear(v, p["in.W"], p["in.b"]) for v in xs])
    enc = np.tanh(_gru(emb, p["enc.W"], p["enc.U"], p["enc.b"]))
    if variant == "INDRA":
        dec = np.tanh(_gru(enc, p["dec.W"], p["dec.U"], p["dec.b"]))
        y = np.stack([_linear(d, p["out.W"], p["out.b"]) for d in dec])
    elif variant == "LED":
        y = _gru(enc, p["dec.W"], p["dec.U"], p["dec.b"])
    elif variant == "LD":
        y = np.stack([_linear(_linear(e, p["dec1.W"], p["dec1.b"]), p["dec2.W"], p["dec2.b"]) for e in enc])
    else:
        raise ValueError(variant)
    return np.swapaxes(y, 0, 1)


def loss(variant, p, x):
    d = x - reconstruct(variant, p, x)
    return np.sum(d * d) / d.size


def central_differences(variant, params, x, eps=1e-5):
    """Central-difference gradient of the mean squared reconstruction error
    for every entry of every parameter, evaluated in long double."""
    p = {name: np.asarray(arr, dtype=LD).copy() for name, arr in params.items()}
    xl = np.asarray(x, dtype=LD)
    e = LD(eps)
    grads = {}
    for name, arr in p.items():
        g = np.zeros(arr.shape)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + e
            up = loss(variant, p, xl)
            arr[idx] = orig - e
            down = loss(variant, p, xl)
            arr[idx] = orig
            g[idx] = float((up - down) / (2 * e))
        grads[name] = g
    return grads
