#pragma once

// Dense three-mode tensor storage and the multilinear kernels the rest of
// the library is built on.
//
// Memory layout is fixed: mode-1 fastest, i.e. element (i, j, k) of a tensor
// with dims (d0, d1, d2) lives at flat offset i + d0 * (j + d1 * k). The same
// layout is used on disk, so checkpoints and exported tensors are portable.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace btf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class Tensor3 {
 public:
  Tensor3() : dims_{0, 0, 0} {}
  Tensor3(int d0, int d1, int d2, double fill = 0.0);

  const std::array<int, 3>& dims() const { return dims_; }
  int dim(int mode) const { return dims_[static_cast<std::size_t>(mode)]; }
  std::int64_t size() const {
    return static_cast<std::int64_t>(dims_[0]) * dims_[1] * dims_[2];
  }

  std::int64_t flat(int i, int j, int k) const {
    return i + static_cast<std::int64_t>(dims_[0]) *
                   (j + static_cast<std::int64_t>(dims_[1]) * k);
  }
  void unflat(std::int64_t f, int& i, int& j, int& k) const {
    i = static_cast<int>(f % dims_[0]);
    f /= dims_[0];
    j = static_cast<int>(f % dims_[1]);
    k = static_cast<int>(f / dims_[1]);
  }

  double operator()(int i, int j, int k) const { return v_[flat(i, j, k)]; }
  double& operator()(int i, int j, int k) { return v_[flat(i, j, k)]; }

  const std::vector<double>& data() const { return v_; }
  std::vector<double>& data() { return v_; }

  void fill(double value) { v_.assign(v_.size(), value); }
  bool all_finite() const;

  // Flat view as a (d0*d1*d2)-vector, and as the mode-1 unfolding d0 x (d1*d2).
  Eigen::Map<const Eigen::VectorXd> flat_view() const {
    return {v_.data(), static_cast<Eigen::Index>(v_.size())};
  }
  Eigen::Map<const Matrix> unfold1() const {
    return {v_.data(), dims_[0],
            static_cast<Eigen::Index>(dims_[1]) * dims_[2]};
  }

  bool operator==(const Tensor3& other) const {
    return dims_ == other.dims_ && v_ == other.v_;
  }

 private:
  std::array<int, 3> dims_;
  std::vector<double> v_;
};

// Observation mask paired with a Tensor3 of the same dims; flag 1 = observed.
class Mask3 {
 public:
  Mask3() : dims_{0, 0, 0} {}
  Mask3(int d0, int d1, int d2, bool fill = false);

  const std::array<int, 3>& dims() const { return dims_; }
  int dim(int mode) const { return dims_[static_cast<std::size_t>(mode)]; }
  std::int64_t size() const {
    return static_cast<std::int64_t>(dims_[0]) * dims_[1] * dims_[2];
  }
  std::int64_t flat(int i, int j, int k) const {
    return i + static_cast<std::int64_t>(dims_[0]) *
                   (j + static_cast<std::int64_t>(dims_[1]) * k);
  }

  bool operator()(int i, int j, int k) const { return flags_[flat(i, j, k)] != 0; }
  void set(int i, int j, int k, bool on) { flags_[flat(i, j, k)] = on ? 1 : 0; }

  std::int64_t count() const;
  Mask3 complement() const;

  const std::vector<std::uint8_t>& flags() const { return flags_; }
  std::vector<std::uint8_t>& flags() { return flags_; }

  bool operator==(const Mask3& other) const {
    return dims_ == other.dims_ && flags_ == other.flags_;
  }

 private:
  std::array<int, 3> dims_;
  std::vector<std::uint8_t> flags_;
};

// Real-valued example-by-feature matrix with string labels on both axes.
struct FeatureMatrix {
  Matrix values;
  std::vector<std::string> row_ids;
  std::vector<std::string> col_ids;

  int rows() const { return static_cast<int>(values.rows()); }
  int cols() const { return static_cast<int>(values.cols()); }
  void validate() const;  // label counts match dims, entries finite
};

// y(i,j,k) = sum_{r1,r2,r3} core(r1,r2,r3) h1(i,r1) h2(j,r2) h3(k,r3),
// computed as a chain of mode products. Throws on inner-dim mismatch.
Tensor3 tucker_compose(const Tensor3& core, const Matrix& h1, const Matrix& h2,
                       const Matrix& h3);

// R x R x R tensor with weights on the superdiagonal and zeros elsewhere.
Tensor3 superdiag_core(int r, const Vector& weights);

// Prepends a column of ones (the constant latent column sits at index 0).
Matrix append_ones_column(const Matrix& m);

}  // namespace btf
