// Copyright 2026 The melsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "melsep/common.hpp"

namespace melsep {

// Named parameter tensor with its gradient accumulator.
template <class S>
struct Tensor {
    std::string name;
    std::vector<int> shape;
    std::vector<S> v;
    std::vector<S> g;

    size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }

    static Tensor make(std::string name, std::vector<int> shape) {
        Tensor t;
        t.name = std::move(name);
        t.shape = std::move(shape);
        size_t n = 1;
        for (int d : t.shape) n *= static_cast<size_t>(d);
        t.v.assign(n, S(0));
        t.g.assign(n, S(0));
        return t;
    }
};

// y[rows x out] = x[rows x in] * W^T + b, with W stored [out x in] row-major.
template <class S>
void linear_forward(const S* x, int rows, int in, const Tensor<S>& W,
                    const Tensor<S>& b, S* y) {
    const int out = W.shape[0];
    MapMC<S> X(x, rows, in), Wm(W.v.data(), out, in);
    MapM<S> Y(y, rows, out);
    Y.noalias() = X * Wm.transpose();
    if (!b.empty()) {
        MapMC<S> bm(b.v.data(), 1, out);
        Y.rowwise() += bm.row(0);
    }
}

// Accumulates dW, db; writes dx if non-null.
template <class S>
void linear_backward(const S* x, const S* dy, int rows, int in, Tensor<S>& W,
                     Tensor<S>& b, S* dx) {
    const int out = W.shape[0];
    MapMC<S> X(x, rows, in), dY(dy, rows, out), Wm(W.v.data(), out, in);
    MapM<S> dW(W.g.data(), out, in);
    dW.noalias() += dY.transpose() * X;
    if (!b.empty()) {
        MapM<S> db(b.g.data(), 1, out);
        db.row(0) += dY.colwise().sum();
    }
    if (dx) {
        MapM<S> dX(dx, rows, in);
        dX.noalias() = dY * Wm;
    }
}

enum class NormKind { none, rmsnorm, layernorm };

inline std::string norm_name(NormKind k) {
    switch (k) {
        case NormKind::none: return "none";
        case NormKind::rmsnorm: return "rmsnorm";
        case NormKind::layernorm: return "layernorm";
    }
    return "?";
}

inline NormKind norm_from_name(const std::string& s) {
    if (s == "none") return NormKind::none;
    if (s == "rmsnorm") return NormKind::rmsnorm;
    if (s == "layernorm") return NormKind::layernorm;
    throw InvalidInput("unknown norm kind: " + s);
}

constexpr double kNormEps = 1e-8;

// Row-wise normalization over the last dim. Caches per-row mean (layernorm)
// and reciprocal scale for the backward pass.
template <class S>
void norm_forward(NormKind kind, const S* x, int rows, int dim,
                  const Tensor<S>& gamma, const Tensor<S>& beta, S* y,
                  S* cache_mean, S* cache_inv) {
    for (int r = 0; r < rows; ++r) {
        const S* xi = x + static_cast<size_t>(r) * dim;
        S* yi = y + static_cast<size_t>(r) * dim;
        switch (kind) {
            case NormKind::none:
                for (int i = 0; i < dim; ++i) yi[i] = xi[i];
                cache_mean[r] = S(0);
                cache_inv[r] = S(1);
                break;
            case NormKind::rmsnorm: {
                double ms = 0.0;
                for (int i = 0; i < dim; ++i) ms += double(xi[i]) * xi[i];
                const S inv = static_cast<S>(1.0 / std::sqrt(ms / dim + kNormEps));
                for (int i = 0; i < dim; ++i) yi[i] = xi[i] * inv * gamma.v[i];
                cache_mean[r] = S(0);
                cache_inv[r] = inv;
                break;
            }
            case NormKind::layernorm: {
                double mu = 0.0;
                for (int i = 0; i < dim; ++i) mu += xi[i];
                mu /= dim;
                double var = 0.0;
                for (int i = 0; i < dim; ++i) var += (xi[i] - mu) * (xi[i] - mu);
                var /= dim;
                const S inv = static_cast<S>(1.0 / std::sqrt(var + kNormEps));
                for (int i = 0; i < dim; ++i)
                    yi[i] = static_cast<S>((xi[i] - mu) * inv) * gamma.v[i] + beta.v[i];
                cache_mean[r] = static_cast<S>(mu);
                cache_inv[r] = inv;
                break;
            }
        }
    }
}

template <class S>
void norm_backward(NormKind kind, const S* x, const S* dy, int rows, int dim,
                   Tensor<S>& gamma, Tensor<S>& beta, const S* cache_mean,
                   const S* cache_inv, S* dx) {
    for (int r = 0; r < rows; ++r) {
        const S* xi = x + static_cast<size_t>(r) * dim;
        const S* dyi = dy + static_cast<size_t>(r) * dim;
        S* dxi = dx + static_cast<size_t>(r) * dim;
        switch (kind) {
            case NormKind::none:
                for (int i = 0; i < dim; ++i) dxi[i] = dyi[i];
                break;
            case NormKind::rmsnorm: {
                const S inv = cache_inv[r];
                double dot = 0.0;
                for (int i = 0; i < dim; ++i) {
                    const S xhat = xi[i] * inv;
                    gamma.g[i] += dyi[i] * xhat;
                    dot += double(dyi[i]) * gamma.v[i] * xhat;
                }
                dot /= dim;
                for (int i = 0; i < dim; ++i)
                    dxi[i] = inv * (dyi[i] * gamma.v[i] - static_cast<S>(dot) * xi[i] * inv);
                break;
            }
            case NormKind::layernorm: {
                const S mu = cache_mean[r], inv = cache_inv[r];
                double sum_dl = 0.0, sum_dlx = 0.0;
                for (int i = 0; i < dim; ++i) {
                    const S xhat = (xi[i] - mu) * inv;
                    gamma.g[i] += dyi[i] * xhat;
                    beta.g[i] += dyi[i];
                    const double dl = double(dyi[i]) * gamma.v[i];
                    sum_dl += dl;
                    sum_dlx += dl * xhat;
                }
                sum_dl /= dim;
                sum_dlx /= dim;
                for (int i = 0; i < dim; ++i) {
                    const S xhat = (xi[i] - mu) * inv;
                    const double dl = double(dyi[i]) * gamma.v[i];
                    dxi[i] = static_cast<S>(inv * (dl - sum_dl - double(xhat) * sum_dlx));
                }
                break;
            }
        }
    }
}

template <class S>
inline S gelu(S x) {
    return static_cast<S>(0.5 * double(x) * (1.0 + std::erf(double(x) / M_SQRT2)));
}

template <class S>
inline S gelu_grad(S x) {
    const double xd = x;
    return static_cast<S>(0.5 * (1.0 + std::erf(xd / M_SQRT2)) +
                          xd * std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * M_PI));
}

template <class S>
void softmax_rows(S* x, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        S* xi = x + static_cast<size_t>(r) * cols;
        S mx = xi[0];
        for (int i = 1; i < cols; ++i) mx = std::max(mx, xi[i]);
        double sum = 0.0;
        for (int i = 0; i < cols; ++i) {
            xi[i] = static_cast<S>(std::exp(double(xi[i] - mx)));
            sum += xi[i];
        }
        const S inv = static_cast<S>(1.0 / sum);
        for (int i = 0; i < cols; ++i) xi[i] *= inv;
    }
}

// dx given probs p and upstream dp, row-wise: dx = p .* (dp - sum(dp .* p))
template <class S>
void softmax_backward_rows(const S* p, const S* dp, int rows, int cols, S* dx) {
    for (int r = 0; r < rows; ++r) {
        const S* pi = p + static_cast<size_t>(r) * cols;
        const S* dpi = dp + static_cast<size_t>(r) * cols;
        S* dxi = dx + static_cast<size_t>(r) * cols;
        double dot = 0.0;
        for (int i = 0; i < cols; ++i) dot += double(dpi[i]) * pi[i];
        for (int i = 0; i < cols; ++i)
            dxi[i] = pi[i] * (dpi[i] - static_cast<S>(dot));
    }
}

}  // namespace melsep
