// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>

namespace hbgl {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

/// A trainable tensor with its gradient buffer. `group` names the freezing
/// partition the tensor belongs to.
template <class T>
struct Parameter {
    std::string name;
    std::string group;
    Matrix<T> value;
    Matrix<T> grad;
    bool frozen = false;

    Parameter() = default;
    Parameter(std::string n, std::string g, Eigen::Index rows, Eigen::Index cols)
        : name(std::move(n)), group(std::move(g)),
          value(Matrix<T>::Zero(rows, cols)), grad(Matrix<T>::Zero(rows, cols)) {}

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Half-open index range [begin, end) over sequence positions.
struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool contains(std::size_t i) const { return i >= begin && i < end; }
    bool operator==(const Span&) const = default;
};

}  // namespace hbgl
