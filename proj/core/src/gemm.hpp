#pragma once

// Eigen views over raw row-major buffers. Private to the core library.

#include <Eigen/Core>

#include "ecgan/real.hpp"

namespace ecgan::gemm {

using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using CMatMap = Eigen::Map<const Mat>;
using Row = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

inline MatMap map(Real* p, Eigen::Index rows, Eigen::Index cols) { return MatMap(p, rows, cols); }
inline CMatMap cmap(const Real* p, Eigen::Index rows, Eigen::Index cols) { return CMatMap(p, rows, cols); }
inline Eigen::Map<Row> row(Real* p, Eigen::Index n) { return Eigen::Map<Row>(p, n); }
inline Eigen::Map<const Row> crow(const Real* p, Eigen::Index n) { return Eigen::Map<const Row>(p, n); }

}  // namespace ecgan::gemm
