import numpy as np
import pytest


def helmert_basis(n):
    """Orthonormal basis (columns) of the zero-sum subspace of R^n, built by formula."""
    cols = []
    for j in range(1, n):
        v = np.zeros(n)
        v[:j] = 1.0
        v[j] = -j
        cols.append(v / np.sqrt(j * (j + 1)))
    return np.stack(cols, axis=1)


def fibonacci_sphere(n_points):
    """Near-uniform points on the unit sphere in R^3."""
    i = np.arange(n_points) + 0.5
    z = 1.0 - 2.0 * i / n_points
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def mesh_max_k2(Q, n_points=100_000):
    """Brute-force max of v^T Q v over the zero-sum unit sphere in R^4."""
    pts = fibonacci_sphere(n_points) @ helmert_basis(4).T
    return float(np.max(np.einsum("pi,ij,pj->p", pts, Q, pts)))


def random_psd(rng, n, rank=None):
    A = rng.standard_normal((n, rank or n))
    return A @ A.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def relu_pattern(params, x):
    from dfbsr import srnet

    xb = np.asarray(x, dtype=params.dtype)
    _, cache = srnet._forward_cached(params, xb)
    return [mask.copy() for _, mask in cache if mask is not None]


def gradient_check(params, x, y, bank, alpha, n_per_layer, rng, h=1e-3, max_draws=2000):
    """Central-difference check of ``srnet.backward``.

    Draws coordinates per layer (weights and bias pooled) until ``n_per_layer``
    valid ones are checked. A coordinate is skipped when the +h and -h
    perturbations change the ReLU activation pattern: the difference quotient
    then straddles a kink and does not approximate the derivative.
    Returns ``(worst_relative_error, checked_counts, skipped_counts)``.
    """
    from dfbsr import srnet

    grads = srnet.backward(params, x, y, bank, alpha)
    worst, checked, skipped = 0.0, [], []
    n_layers = len(params.weights)
    for layer in range(n_layers):
        pools = [(params.weights[layer], grads.weights[layer]),
                 (params.biases[layer], grads.biases[layer])]
        sizes = [a.size for a, _ in pools]
        total = sum(sizes)
        order = rng.permutation(total)[:max_draws]
        done = skip = 0
        for flat_idx in order:
            if done >= min(n_per_layer, total):
                break
            which = 0 if flat_idx < sizes[0] else 1
            idx = flat_idx if which == 0 else flat_idx - sizes[0]
            arr, garr = pools[which]
            flat = arr.reshape(-1)
            old = flat[idx]
            flat[idx] = old + h
            lp = srnet.total_loss(y, srnet.forward(params, x), bank, alpha)
            pat_p = relu_pattern(params, x)
            flat[idx] = old - h
            lm = srnet.total_loss(y, srnet.forward(params, x), bank, alpha)
            pat_m = relu_pattern(params, x)
            flat[idx] = old
            if any(np.any(a != b) for a, b in zip(pat_p, pat_m)):
                skip += 1
                continue
            fd = (lp - lm) / (2 * h)
            an = garr.reshape(-1)[idx]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
            done += 1
        checked.append(done)
        skipped.append(skip)
    return worst, checked, skipped
