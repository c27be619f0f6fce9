// Copyright 2026 The melsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <complex>
#include <vector>

#include "melsep/common.hpp"

namespace melsep {

inline bool is_pow2(int n) { return n >= 1 && (n & (n - 1)) == 0; }

// Iterative radix-2 Cooley-Tukey. Twiddles are evaluated in double and cast
// to S so float transforms do not lose accuracy to argument reduction.
template <class S>
void fft_inplace(std::vector<std::complex<S>>& a, bool inverse) {
    const int n = static_cast<int>(a.size());
    if (!is_pow2(n)) throw InvalidInput("fft size must be a power of two");
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    const double sign = inverse ? 1.0 : -1.0;
    for (int len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * M_PI / len;
        for (int i = 0; i < n; i += len) {
            for (int k = 0; k < len / 2; ++k) {
                const std::complex<S> w(static_cast<S>(std::cos(ang * k)),
                                        static_cast<S>(std::sin(ang * k)));
                std::complex<S> u = a[i + k];
                std::complex<S> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
        }
    }
    if (inverse) {
        const S inv_n = S(1) / static_cast<S>(n);
        for (auto& x : a) x *= inv_n;
    }
}

// Real input of length n -> one-sided spectrum of n/2+1 bins.
template <class S>
std::vector<std::complex<S>> rfft(const std::vector<S>& x) {
    const int n = static_cast<int>(x.size());
    std::vector<std::complex<S>> a(n);
    for (int i = 0; i < n; ++i) a[i] = std::complex<S>(x[i], S(0));
    fft_inplace(a, false);
    a.resize(n / 2 + 1);
    return a;
}

// One-sided spectrum of n/2+1 bins -> real signal of length n.
template <class S>
std::vector<S> irfft(const std::vector<std::complex<S>>& spec, int n) {
    const int bins = n / 2 + 1;
    if (static_cast<int>(spec.size()) != bins)
        throw InvalidInput("irfft: spectrum size does not match fft size");
    std::vector<std::complex<S>> a(n);
    for (int k = 0; k < bins; ++k) a[k] = spec[k];
    for (int k = bins; k < n; ++k) a[k] = std::conj(spec[n - k]);
    fft_inplace(a, true);
    std::vector<S> out(n);
    for (int i = 0; i < n; ++i) out[i] = a[i].real();
    return out;
}

}  // namespace melsep
