"""Independent reference implementations used by several test modules."""
import itertools
import math

import numpy as np

E = 0.002


def bisect_inverse(d, tol=1e-15):
    lo, hi = 0.0, 0.5
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if 0.25 * (math.atanh(2 * mid) + math.atan(2 * mid)) < d:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def brute_force(obs, positions, e=E):
    """Posterior by summing over all 3^L genotype paths, transition written out by hand."""
    L = len(obs)
    prior = (0.25, 0.5, 0.25)
    rs = [bisect_inverse((positions[i + 1] - positions[i]) / 100.0) if positions[i + 1] > positions[i] else 0.0
          for i in range(L - 1)]

    def trans(a, b, r):
        s = 1 - r
        if a == 1:
            return s * s + r * r if b == 1 else r * s
        if a == b:
            return s * s
        return 2 * r * s if b == 1 else r * r

    def emit(o, g):
        if o < 0:
            return 1.0
        return 1 - e if o == g else e / 2

    post = np.zeros((L, 3))
    for path in itertools.product(range(3), repeat=L):
        p = prior[path[0]] * emit(obs[0], path[0])
        for i in range(1, L):
            p *= trans(path[i - 1], path[i], rs[i - 1]) * emit(obs[i], path[i])
        for i, g in enumerate(path):
            post[i, g] += p
    return post / post.sum(axis=1, keepdims=True)
