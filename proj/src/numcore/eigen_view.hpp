#pragma once

#include <Eigen/Dense>

#include "mobcast/numcore/matrix.hpp"

namespace mobcast::numcore::detail {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MutView = Eigen::Map<RowMajor>;
using ConstView = Eigen::Map<const RowMajor>;

inline ConstView view(const Matrix& m) {
  return ConstView(m.data().data(), static_cast<Eigen::Index>(m.rows()),
                   static_cast<Eigen::Index>(m.cols()));
}

inline MutView view(Matrix& m) {
  return MutView(m.data().data(), static_cast<Eigen::Index>(m.rows()),
                 static_cast<Eigen::Index>(m.cols()));
}

}  // namespace mobcast::numcore::detail
