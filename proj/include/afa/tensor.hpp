#pragma once

#include <Eigen/Dense>

#include "afa/common.hpp"
#include "afa/rng.hpp"

namespace afa {

// All dense state is a row-major matrix templated on scalar. Vectors are
// 1xN matrices so the tape handles a single node type.
template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

template <class S>
Mat<S> normal_matrix(Rng& rng, Index rows, Index cols, double stddev) {
  Mat<S> m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = static_cast<S>(stddev * rng.normal());
  return m;
}

template <class S>
Mat<S> uniform_matrix(Rng& rng, Index rows, Index cols, double lo, double hi) {
  Mat<S> m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = static_cast<S>(lo + (hi - lo) * rng.uniform());
  return m;
}

}  // namespace afa
