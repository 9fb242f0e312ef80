"""Independent reference computations shared by the tests."""

import numpy as np

from ltgc.equinoctial import b_matrix_batch, d_vector_batch

LD = np.longdouble


def random_aug(rng: np.random.Generator, n: int) -> np.ndarray:
    """Valid augmented states near heliocentric orbits between Venus and Earth."""
    Y = np.empty((n, 14))
    Y[:, 0] = rng.uniform(0.6, 1.1, n)
    Y[:, 1:3] = rng.uniform(-0.1, 0.1, (n, 2))
    Y[:, 3:5] = rng.uniform(-0.05, 0.05, (n, 2))
    Y[:, 5] = rng.uniform(0.0, 4 * np.pi, n)
    Y[:, 6] = rng.uniform(0.6, 1.0, n)
    Y[:, 7:13] = rng.uniform(-20, 20, (n, 6))
    Y[:, 13] = rng.uniform(0.0, 10.0, n)
    return Y


def random_controls(rng: np.random.Generator, n: int):
    u = rng.uniform(0.01, 0.99, n)
    d = rng.normal(size=(n, 3))
    return u, d / np.linalg.norm(d, axis=1)[:, None]


def hamiltonian_ld(Z, u, d, k):
    """Control-dependent Hamiltonian (no barrier term) in extended precision."""
    Z = np.asarray(Z, dtype=LD)
    u = np.asarray(u, dtype=LD)
    lam = Z[:, 7:13]
    B = b_matrix_batch(Z[:, :6], LD(k.mu))
    primer = np.einsum("ni,nij,nj->n", lam, B, np.asarray(d, dtype=LD))
    return (LD(k.c1) * u / Z[:, 6] * primer + lam[:, 5] * d_vector_batch(Z[:, :6], LD(k.mu))
            - LD(k.c2) * Z[:, 13] * u + u)


def minus_grad_h(Y, u, d, k, rel_step=1e-4) -> np.ndarray:
    """-dH/d(p, f, g, h, k, L, m) by a fourth-order central stencil in long double."""
    Z = np.asarray(Y, dtype=LD)
    G = np.empty((Z.shape[0], 7), dtype=LD)
    for j in range(7):
        h = LD(rel_step) * np.maximum(np.abs(Z[:, j]), LD(0.1))

        def at(s):
            W = Z.copy()
            W[:, j] += s * h
            return hamiltonian_ld(W, u, d, k)

        G[:, j] = (-at(2) + 8 * at(1) - 8 * at(-1) + at(-2)) / (12 * h)
    return -G.astype(float)


def fd_weight_gradient(model, fn, h=1e-3) -> np.ndarray:
    """Fourth-order central differences of ``fn()`` with respect to every model weight."""
    out = []
    for p in model.parameters():
        flat = p.data.view(-1)
        for i in range(flat.numel()):
            o = flat[i].item()
            v = {}
            for s in (2, 1, -1, -2):
                flat[i] = o + s * h
                v[s] = float(fn())
            flat[i] = o
            out.append((-v[2] + 8 * v[1] - 8 * v[-1] + v[-2]) / (12 * h))
    return np.array(out)
