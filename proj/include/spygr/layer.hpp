#pragma once

#include <optional>
#include <string>
#include <vector>

#include "spygr/autodiff.hpp"
#include "spygr/ops.hpp"
#include "spygr/rng.hpp"
#include "spygr/tensor.hpp"

namespace spygr {

enum class AttentionMode { None, Static, Dynamic };

inline const char* attention_mode_name(AttentionMode m) {
    switch (m) {
        case AttentionMode::None: return "none";
        case AttentionMode::Static: return "static";
        case AttentionMode::Dynamic: return "dynamic";
    }
    return "?";
}

inline constexpr double kDefaultDegreeFloor = 1e-6;

/// Learnable weights and configuration of one graph-reasoning block.
template <class T>
struct SpyGRParams {
    Tensor<T> w_phi;          // [C x M] embedding
    Tensor<T> w_rho;          // [C x M] attention (Dynamic mode)
    Tensor<T> theta;          // [C x C_out] output transform
    Tensor<T> static_lambda;  // [M x 1], present iff mode == Static
    AttentionMode attention_mode = AttentionMode::Dynamic;
    bool include_identity = true;
    double epsilon = kDefaultDegreeFloor;

    int channels() const { return w_phi.rows(); }
    int embed_dim() const { return w_phi.cols(); }
    int out_channels() const { return theta.cols(); }

    void validate() const {
        require(w_phi.is_matrix() && w_phi.rows() >= 1 && w_phi.cols() >= 1,
                "w_phi must be [C x M] with C,M >= 1, got " + w_phi.shape().str());
        require(theta.is_matrix() && theta.rows() == channels(),
                "theta must be [C x C_out], got " + theta.shape().str());
        if (attention_mode == AttentionMode::Dynamic)
            require(w_rho.is_matrix() && w_rho.rows() == channels() && w_rho.cols() == embed_dim(),
                    "w_rho must be [C x M], got " + w_rho.shape().str());
        const bool has_static = static_lambda.numel() != 0;
        require(has_static == (attention_mode == AttentionMode::Static),
                "static_lambda present iff attention_mode == Static");
        if (has_static)
            require(static_lambda.numel() == embed_dim(), "static_lambda length must be M");
    }

    static SpyGRParams random(int c, int m, int c_out, AttentionMode mode, bool identity, Rng& rng) {
        SpyGRParams p;
        p.w_phi = Tensor<T>::init_uniform(Shape{1, 1, c, m}, c, rng);
        p.w_rho = Tensor<T>::init_uniform(Shape{1, 1, c, m}, c, rng);
        p.theta = Tensor<T>::init_uniform(Shape{1, 1, c, c_out}, c, rng);
        p.attention_mode = mode;
        p.include_identity = identity;
        if (mode == AttentionMode::Static)
            p.static_lambda = Tensor<T>::random_uniform(Shape{1, 1, m, 1}, 0.5, 1.5, rng);
        return p;
    }
};

/// Implicit representation of the similarity matrix A = phi diag(lambda)
/// phi^T for one spatial grid: never materializes n x n.
template <class T>
struct SimilarityFactors {
    Tensor<T> phi;      // [n x M], entries >= 0 (post-ReLU)
    Tensor<T> lambda;   // [M x 1]
    Tensor<T> degrees;  // [n x 1], row sums of A
    double epsilon = kDefaultDegreeFloor;
    int grid_h = 0, grid_w = 0;

    int n() const { return phi.rows(); }
    int m() const { return phi.cols(); }
};

// ---- plain (tape-free) building blocks ------------------------------------

/// phi(X) = ReLU(unfold(x) . w_phi), x a single batch element.
template <class T>
inline Tensor<T> embed_phi(const Tensor<T>& x1, const Tensor<T>& w_phi) {
    require(x1.shape().n == 1, "embed_phi expects a single batch element, got " + x1.shape().str());
    require(x1.shape().c == w_phi.rows(), "embed_phi channel mismatch: input " + x1.shape().str() +
                                              " vs w_phi " + w_phi.shape().str());
    return relu(matmul(unfold_hwc(x1), w_phi));
}

/// lambda(X) = sigmoid(w_rho^T . mean_{H,W}(x)), returned as [M x 1].
template <class T>
inline Tensor<T> channel_attention(const Tensor<T>& x1, const Tensor<T>& w_rho) {
    require(x1.shape().n == 1, "channel_attention expects a single batch element");
    require(x1.shape().c == w_rho.rows(), "channel_attention channel mismatch");
    const int c = x1.shape().c, m = w_rho.cols();
    Tensor<T> xbar = global_avg_pool(x1).reshaped(Shape{1, 1, 1, c});
    return sigmoid(matmul(xbar, w_rho)).reshaped(Shape{1, 1, m, 1});
}

/// d = phi . (lambda (.) (phi^T . 1)); equals the row sums of A.
template <class T>
inline Tensor<T> degrees_factored(const Tensor<T>& phi, const Tensor<T>& lambda) {
    const int n = phi.rows(), m = phi.cols();
    Tensor<T> ones = Tensor<T>::matrix(1, n);
    for (auto& v : ones.values()) v = T(1);
    Tensor<T> u = matmul(ones, phi).reshaped(Shape{1, 1, m, 1});
    Tensor<T> w = mul(lambda, u);
    return matmul(phi, w);
}

template <class T>
inline Tensor<T> lambda_for(const Tensor<T>& x1, const SpyGRParams<T>& params) {
    switch (params.attention_mode) {
        case AttentionMode::Dynamic: return channel_attention(x1, params.w_rho);
        case AttentionMode::Static: return params.static_lambda;
        case AttentionMode::None: break;
    }
    return Tensor<T>(Shape{1, 1, params.embed_dim(), 1}, T(1));
}

template <class T>
inline SimilarityFactors<T> build_factors(const Tensor<T>& x1, const SpyGRParams<T>& params) {
    SimilarityFactors<T> f;
    f.phi = embed_phi(x1, params.w_phi);
    f.lambda = lambda_for(x1, params);
    f.degrees = degrees_factored(f.phi, f.lambda);
    f.epsilon = params.epsilon;
    f.grid_h = x1.shape().h;
    f.grid_w = x1.shape().w;
    return f;
}

/// Factored application of the normalized Laplacian to one batch element:
/// L~ x = x - P (lambda (P^T x)) with P = D~^{-1/2} phi, linear in n.
/// include_identity off drops the leading x, leaving the normalized
/// similarity product alone.
template <class T>
inline Tensor<T> apply_laplacian_factored(const Tensor<T>& x1, const SimilarityFactors<T>& f,
                                          bool include_identity) {
    require(x1.shape().n == 1 && x1.shape().h == f.grid_h && x1.shape().w == f.grid_w,
            "factors were built for grid " + std::to_string(f.grid_h) + "x" +
                std::to_string(f.grid_w) + ", input is " + x1.shape().str());
    const Tensor<T> x_mat = unfold_hwc(x1);
    Tensor<T> s = rsqrt_floor(f.degrees, f.epsilon);
    Tensor<T> p = scale_rows(f.phi, s);
    Tensor<T> t = matmul(transpose(p), x_mat);
    Tensor<T> g = scale_rows(t, f.lambda);
    Tensor<T> r = matmul(p, g);
    Tensor<T> out = include_identity ? sub(x_mat, r) : r;
    return fold_hwc(out, x1.shape().c, f.grid_h, f.grid_w);
}

// ---- tape (differentiable) layer -------------------------------------------

/// Tape handles for one block's weights plus the non-learnable config.
struct SpyGRParamVars {
    Var w_phi, w_rho, theta, static_lambda;
    AttentionMode attention_mode = AttentionMode::Dynamic;
    bool include_identity = true;
    double epsilon = kDefaultDegreeFloor;
    int embed_dim = 0;
};

template <class T>
inline SpyGRParamVars make_param_vars(Tape<T>& tape, const SpyGRParams<T>& p, bool requires_grad) {
    p.validate();
    SpyGRParamVars v;
    v.w_phi = tape.leaf(p.w_phi, requires_grad);
    v.theta = tape.leaf(p.theta, requires_grad);
    if (p.attention_mode == AttentionMode::Dynamic) v.w_rho = tape.leaf(p.w_rho, requires_grad);
    if (p.attention_mode == AttentionMode::Static)
        v.static_lambda = tape.leaf(p.static_lambda, requires_grad);
    v.attention_mode = p.attention_mode;
    v.include_identity = p.include_identity;
    v.epsilon = p.epsilon;
    v.embed_dim = p.embed_dim();
    return v;
}

/// Y = sigma(L~ X Theta) for one batch element (Eq-level pipeline; the
/// executed kernel sequence is what the cost model and MAC counter mirror).
template <class T>
inline Var graph_reason_single(Tape<T>& tape, Var x1, const SpyGRParamVars& pv) {
    const Shape xs = tape.value(x1).shape();
    require(xs.n == 1, "graph_reason_single expects [1,C,H,W], got " + xs.str());
    const int c = xs.c, h = xs.h, w = xs.w, n = h * w, m = pv.embed_dim;

    Var x_mat = tape.unfold(x1);
    Var phi = tape.relu(tape.matmul(x_mat, pv.w_phi));

    Var lam;
    switch (pv.attention_mode) {
        case AttentionMode::Dynamic: {
            Var xbar = tape.reshape(tape.global_avg_pool(x1), Shape{1, 1, 1, c});
            lam = tape.reshape(tape.sigmoid(tape.matmul(xbar, pv.w_rho)), Shape{1, 1, m, 1});
            break;
        }
        case AttentionMode::Static:
            lam = pv.static_lambda;
            break;
        case AttentionMode::None:
            lam = tape.constant(Tensor<T>(Shape{1, 1, m, 1}, T(1)));
            break;
    }

    Var ones = tape.constant(Tensor<T>(Shape{1, 1, 1, n}, T(1)));
    Var u = tape.reshape(tape.matmul(ones, phi), Shape{1, 1, m, 1});
    Var wv = tape.mul(lam, u);
    Var d = tape.matmul(phi, wv);
    Var s = tape.rsqrt_floor(d, pv.epsilon);
    Var p = tape.scale_rows(phi, s);
    Var t = tape.matmul(tape.transpose(p), x_mat);
    Var g = tape.scale_rows(t, lam);
    Var r = tape.matmul(p, g);
    Var lx = pv.include_identity ? tape.sub(x_mat, r) : r;
    Var z = tape.matmul(lx, pv.theta);
    const int c_out = tape.value(z).shape().w;
    return tape.fold(tape.relu(z), c_out, h, w);
}

/// Batched layer: the similarity never mixes batch elements, so the batch is
/// mapped element by element and restacked.
template <class T>
inline Var graph_reason(Tape<T>& tape, Var x, const SpyGRParamVars& pv) {
    const Shape xs = tape.value(x).shape();
    if (xs.n == 1) return graph_reason_single(tape, x, pv);
    std::vector<Var> outs;
    outs.reserve(xs.n);
    for (int b = 0; b < xs.n; ++b)
        outs.push_back(graph_reason_single(tape, tape.slice_batch(x, b), pv));
    return tape.stack_batch(outs);
}

/// Plain forward: records a throwaway tape without gradients.
template <class T>
inline Tensor<T> graph_reason(const Tensor<T>& x, const SpyGRParams<T>& params) {
    Tape<T> tape;
    const SpyGRParamVars pv = make_param_vars(tape, params, false);
    return tape.value(graph_reason(tape, tape.constant(x), pv));
}

/// Eq-13/14 ablation preset: A = phi phi^T, no attention, no identity.
template <class T>
inline Tensor<T> simplest_gcn(const Tensor<T>& x, const SpyGRParams<T>& params) {
    require(params.attention_mode == AttentionMode::None,
            "simplest_gcn requires attention_mode == None");
    SpyGRParams<T> p = params;
    p.include_identity = false;
    return graph_reason(x, p);
}

}  // namespace spygr
