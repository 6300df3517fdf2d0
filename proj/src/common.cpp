#include "spam/common.hpp"

#include <algorithm>
#include <tuple>

namespace spam {

CsrMatrix CsrMatrix::from_triplets(int rows, int cols,
                                   std::vector<std::tuple<int, int, double>> triplets) {
  std::sort(triplets.begin(), triplets.end());
  CsrMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.row_ptr.assign(static_cast<size_t>(rows) + 1, 0);
  m.col_idx.reserve(triplets.size());
  m.values.reserve(triplets.size());
  for (const auto& [r, c, v] : triplets) {
    if (r < 0 || r >= rows || c < 0 || c >= cols)
      throw DimensionError("csr triplet out of range");
    m.row_ptr[static_cast<size_t>(r) + 1]++;
    m.col_idx.push_back(c);
    m.values.push_back(v);
  }
  for (int r = 0; r < rows; ++r) m.row_ptr[r + 1] += m.row_ptr[r];
  return m;
}

Matrix CsrMatrix::multiply(const Matrix& dense) const {
  if (dense.rows() != cols) throw DimensionError("csr multiply shape mismatch");
  Matrix out = Matrix::Zero(rows, dense.cols());
  for (int r = 0; r < rows; ++r) {
    for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
      out.row(r) += values[k] * dense.row(col_idx[k]);
    }
  }
  return out;
}

}  // namespace spam
