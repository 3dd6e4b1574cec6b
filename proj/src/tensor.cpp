#include "btf/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace btf {

namespace {

void require_positive_dims(int d0, int d1, int d2, const char* what) {
  if (d0 < 0 || d1 < 0 || d2 < 0) {
    std::ostringstream os;
    os << what << ": negative dimension (" << d0 << ", " << d1 << ", " << d2
       << ")";
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

Tensor3::Tensor3(int d0, int d1, int d2, double fill) : dims_{d0, d1, d2} {
  require_positive_dims(d0, d1, d2, "Tensor3");
  v_.assign(static_cast<std::size_t>(size()), fill);
}

bool Tensor3::all_finite() const {
  for (double x : v_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Mask3::Mask3(int d0, int d1, int d2, bool fill) : dims_{d0, d1, d2} {
  require_positive_dims(d0, d1, d2, "Mask3");
  flags_.assign(static_cast<std::size_t>(size()), fill ? 1 : 0);
}

std::int64_t Mask3::count() const {
  std::int64_t n = 0;
  for (auto f : flags_) n += f;
  return n;
}

Mask3 Mask3::complement() const {
  Mask3 out = *this;
  for (auto& f : out.flags_) f = f ? 0 : 1;
  return out;
}

void FeatureMatrix::validate() const {
  if (static_cast<Eigen::Index>(row_ids.size()) != values.rows() ||
      static_cast<Eigen::Index>(col_ids.size()) != values.cols()) {
    std::ostringstream os;
    os << "FeatureMatrix: label counts (" << row_ids.size() << ", "
       << col_ids.size() << ") do not match matrix dims (" << values.rows()
       << ", " << values.cols() << ")";
    throw std::invalid_argument(os.str());
  }
  if (!values.allFinite()) {
    throw std::invalid_argument("FeatureMatrix: non-finite entry");
  }
}

Tensor3 tucker_compose(const Tensor3& core, const Matrix& h1, const Matrix& h2,
                       const Matrix& h3) {
  const auto& rd = core.dims();
  const Matrix* hs[3] = {&h1, &h2, &h3};
  for (int m = 0; m < 3; ++m) {
    if (hs[m]->cols() != rd[static_cast<std::size_t>(m)]) {
      std::ostringstream os;
      os << "tucker_compose: factor for mode " << (m + 1) << " has "
         << hs[m]->cols() << " columns but core dim " << (m + 1) << " is "
         << rd[static_cast<std::size_t>(m)];
      throw std::invalid_argument(os.str());
    }
  }
  const int i_n = static_cast<int>(h1.rows());
  const int j_n = static_cast<int>(h2.rows());
  const int k_n = static_cast<int>(h3.rows());
  const int r1 = rd[0], r2 = rd[1], r3 = rd[2];

  // core x1 h1: (i, r2, r3), via the mode-1 unfolding.
  Matrix t1 = h1 * core.unfold1();  // i_n x (r2*r3)

  // x2 h2 one r3 slab at a time: (i, j, r3), stored i-fastest.
  Matrix t2(static_cast<Eigen::Index>(i_n) * j_n, r3);
  for (int c = 0; c < r3; ++c) {
    Eigen::Map<Matrix> slab(t2.col(c).data(), i_n, j_n);
    slab = t1.middleCols(static_cast<Eigen::Index>(c) * r2, r2) * h2.transpose();
  }

  // x3 h3: (i*j, k). Column k of the result is the k-th output slice.
  Tensor3 out(i_n, j_n, k_n);
  Eigen::Map<Matrix> y(out.data().data(), static_cast<Eigen::Index>(i_n) * j_n,
                       k_n);
  y = t2 * h3.transpose();
  return out;
}

Tensor3 superdiag_core(int r, const Vector& weights) {
  if (r < 1) throw std::invalid_argument("superdiag_core: R must be >= 1");
  if (weights.size() != r) {
    throw std::invalid_argument("superdiag_core: weight count != R");
  }
  Tensor3 core(r, r, r);
  for (int d = 0; d < r; ++d) core(d, d, d) = weights[d];
  return core;
}

Matrix append_ones_column(const Matrix& m) {
  Matrix out(m.rows(), m.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(m.cols()) = m;
  return out;
}

}  // namespace btf
