// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace hbgl {

/// Square boolean attention mask. allow(i, j) == true means position i may
/// attend to position j. Converted to an additive -1e9 bias inside attention.
class AllowMatrix {
public:
    AllowMatrix() = default;
    explicit AllowMatrix(std::size_t n, bool value = false) : n_(n), bits_(n * n, value ? 1 : 0) {}

    static AllowMatrix identity(std::size_t n) {
        AllowMatrix m(n);
        for (std::size_t i = 0; i < n; ++i) m.set(i, i, true);
        return m;
    }
    static AllowMatrix full(std::size_t n) { return AllowMatrix(n, true); }

    std::size_t size() const { return n_; }
    bool operator()(std::size_t i, std::size_t j) const { return bits_[i * n_ + j] != 0; }
    void set(std::size_t i, std::size_t j, bool v) { bits_[i * n_ + j] = v ? 1 : 0; }

    /// Restriction to the given positions, in the given order.
    AllowMatrix submatrix(std::span<const std::size_t> keep) const {
        AllowMatrix out(keep.size());
        for (std::size_t a = 0; a < keep.size(); ++a)
            for (std::size_t b = 0; b < keep.size(); ++b) out.set(a, b, (*this)(keep[a], keep[b]));
        return out;
    }

    bool diagonal_allowed() const {
        for (std::size_t i = 0; i < n_; ++i)
            if (!(*this)(i, i)) return false;
        return true;
    }

    bool operator==(const AllowMatrix&) const = default;

private:
    std::size_t n_ = 0;
    std::vector<std::uint8_t> bits_;
};

}  // namespace hbgl
