"""Compare the two scoring routes and the analytic mutual information.

The naive route rebuilds every leave-one-out submatrix and inverts it
(one dense inverse per variable); the fast route gets the same number from
the diagonals of the covariance and its single inverse. They agree to
round-off, but the fast route turns an O(p^4) sweep into O(p^3) total.
"""

import time

import numpy as np

from ratekit.rate import (
    kld_variable_fast,
    kld_variable_naive,
    mutual_info,
    precision_from_covariance,
)


def main(p: int = 200, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((p, p)) / np.sqrt(p)
    pm = precision_from_covariance(
        rng.standard_normal(p), g @ g.T + 0.5 * np.eye(p), base_jitter=0.0
    )

    start = time.perf_counter()
    naive = np.array([kld_variable_naive(pm, j) for j in range(p)])
    naive_time = time.perf_counter() - start

    start = time.perf_counter()
    fast = np.array([kld_variable_fast(pm, j) for j in range(p)])
    fast_time = time.perf_counter() - start

    worst = np.max(np.abs(fast - naive) / (1 + naive))
    print(f"p = {p}")
    print(f"naive sweep: {naive_time:.3f}s   fast sweep: {fast_time * 1000:.2f}ms")
    print(f"worst relative disagreement: {worst:.3e}")

    mi = np.array([mutual_info(pm, j) for j in range(p)])
    zero_mu = precision_from_covariance(np.zeros(p), pm.omega, base_jitter=0.0)
    kld_at_zero_mu = np.array([kld_variable_fast(zero_mu, j) for j in range(p)])
    print(
        "\nmutual information is the mean-free part of the story: with mu = 0 the"
        "\nconditioning KL keeps only the trace/log-det terms, while MI measures"
        "\nthe same dependence directly:"
    )
    for j in range(5):
        print(f"  var {j}: mi = {mi[j]:.5f}   kld(mu=0) = {kld_at_zero_mu[j]:.5f}")


if __name__ == "__main__":
    main()
