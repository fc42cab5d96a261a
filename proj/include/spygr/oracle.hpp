#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "spygr/errors.hpp"
#include "spygr/layer.hpp"
#include "spygr/tensor.hpp"

namespace spygr {

inline constexpr int kDefaultOracleCap = 4096;

// Naive O(n^2) verification path. Materializes the n x n similarity with
// direct loops (no shared kernels with the factored path) so the two routes
// stay independent checks of each other.

/// A = phi diag(lambda) phi^T, entry by entry. Oracle only; n is capped.
template <class T>
inline Tensor<T> materialize_similarity(const SimilarityFactors<T>& f,
                                        int oracle_cap = kDefaultOracleCap) {
    const int n = f.n(), m = f.m();
    if (n > oracle_cap)
        throw OracleSizeError("n = " + std::to_string(n) + " exceeds oracle cap " +
                              std::to_string(oracle_cap));
    Tensor<T> a = Tensor<T>::matrix(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < m; ++k)
                acc += static_cast<double>(f.phi[static_cast<std::int64_t>(i) * m + k]) *
                       static_cast<double>(f.lambda[k]) *
                       static_cast<double>(f.phi[static_cast<std::int64_t>(j) * m + k]);
            a[static_cast<std::int64_t>(i) * n + j] = static_cast<T>(acc);
        }
    ensure_finite(a, "materialize_similarity");
    return a;
}

/// Row sums of a materialized similarity.
template <class T>
inline Tensor<T> degrees_from_similarity(const Tensor<T>& a) {
    const int n = a.rows();
    Tensor<T> d = Tensor<T>::vector_col(n);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += static_cast<double>(a[static_cast<std::int64_t>(i) * n + j]);
        d[i] = static_cast<T>(acc);
    }
    return d;
}

/// (I - D~^{-1/2} A D~^{-1/2}) X through the materialized A, with the same
/// degree floor the factored path uses. identity off leaves the normalized
/// similarity product alone.
template <class T>
inline Tensor<T> apply_laplacian_naive(const Tensor<T>& x1, const SimilarityFactors<T>& f,
                                       bool include_identity, int oracle_cap = kDefaultOracleCap) {
    require(x1.shape().n == 1 && x1.shape().h == f.grid_h && x1.shape().w == f.grid_w,
            "factors were built for grid " + std::to_string(f.grid_h) + "x" +
                std::to_string(f.grid_w) + ", input is " + x1.shape().str());
    const int n = f.n(), c = x1.shape().c;
    const Tensor<T> a = materialize_similarity(f, oracle_cap);
    const Tensor<T> d = degrees_from_similarity(a);

    std::vector<double> s(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        s[i] = 1.0 / std::sqrt(std::max(static_cast<double>(d[i]), f.epsilon));

    const Tensor<T> x_mat = unfold_hwc(x1);
    Tensor<T> out = Tensor<T>::matrix(n, c);
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j)
                acc += s[i] * static_cast<double>(a[static_cast<std::int64_t>(i) * n + j]) * s[j] *
                       static_cast<double>(x_mat[static_cast<std::int64_t>(j) * c + ch]);
            const double base =
                include_identity ? static_cast<double>(x_mat[static_cast<std::int64_t>(i) * c + ch]) : 0.0;
            out[static_cast<std::int64_t>(i) * c + ch] =
                static_cast<T>(include_identity ? base - acc : acc);
        }
    ensure_finite(out, "apply_laplacian_naive");
    return fold_hwc(out, c, f.grid_h, f.grid_w);
}

/// Full naive pipeline sigma(L~ X Theta) for cross-checking graph_reason.
template <class T>
inline Tensor<T> graph_reason_naive(const Tensor<T>& x1, const SpyGRParams<T>& params,
                                    int oracle_cap = kDefaultOracleCap) {
    const SimilarityFactors<T> f = build_factors(x1, params);
    const Tensor<T> lx = apply_laplacian_naive(x1, f, params.include_identity, oracle_cap);
    const Tensor<T> z = matmul(unfold_hwc(lx), params.theta);
    return fold_hwc(relu(z), params.out_channels(), x1.shape().h, x1.shape().w);
}

}  // namespace spygr
