// Copyright 2026 The melsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <vector>

#include "melsep/common.hpp"

namespace melsep {

// cos/sin per (position, pair): layout [pos][pair][2]. Angles are formed in
// double so large positions do not lose precision to argument reduction.
template <class S>
std::vector<S> rope_table(const std::vector<int>& positions, int head_dim,
                          double base) {
    if (head_dim % 2 != 0) throw InvalidInput("rope: head dimension must be even");
    const int pairs = head_dim / 2;
    std::vector<S> tab(positions.size() * pairs * 2);
    for (size_t p = 0; p < positions.size(); ++p) {
        for (int i = 0; i < pairs; ++i) {
            const double theta = std::pow(base, -2.0 * i / head_dim);
            const double ang = positions[p] * theta;
            tab[(p * pairs + i) * 2 + 0] = static_cast<S>(std::cos(ang));
            tab[(p * pairs + i) * 2 + 1] = static_cast<S>(std::sin(ang));
        }
    }
    return tab;
}

// Rotate adjacent pairs of each head slice of x[rows x (n_heads*head_dim)]
// by the angles of row r's position. inverse undoes the rotation (backward).
template <class S>
void rope_apply(S* x, int rows, int n_heads, int head_dim,
                const std::vector<S>& table, bool inverse = false) {
    if (head_dim % 2 != 0) throw InvalidInput("rope: head dimension must be even");
    const int pairs = head_dim / 2;
    const int dim = n_heads * head_dim;
    for (int r = 0; r < rows; ++r) {
        S* row = x + static_cast<size_t>(r) * dim;
        for (int h = 0; h < n_heads; ++h) {
            S* hx = row + h * head_dim;
            for (int i = 0; i < pairs; ++i) {
                const S c = table[(static_cast<size_t>(r) * pairs + i) * 2 + 0];
                S s = table[(static_cast<size_t>(r) * pairs + i) * 2 + 1];
                if (inverse) s = -s;
                const S a = hx[2 * i], b = hx[2 * i + 1];
                hx[2 * i] = a * c - b * s;
                hx[2 * i + 1] = a * s + b * c;
            }
        }
    }
}

// Single-head convenience: rotate each row of x[n x dim] by its position.
template <class S>
void rope_rotate(S* x, int rows, int dim, const std::vector<int>& positions,
                 double base = 10000.0, bool inverse = false) {
    if (static_cast<int>(positions.size()) != rows)
        throw InvalidInput("rope: one position per row required");
    auto tab = rope_table<S>(positions, dim, base);
    rope_apply(x, rows, 1, dim, tab, inverse);
}

}  // namespace melsep
