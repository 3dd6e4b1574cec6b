#include "btf/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace btf {

void Hyperparams::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      std::ostringstream os;
      os << "Hyperparams: " << name << " must be positive and finite, got "
         << v;
      throw std::invalid_argument(os.str());
    }
  };
  positive(sigma2_y, "sigma2_y");
  for (int m = 0; m < 3; ++m) {
    auto mi = static_cast<std::size_t>(m);
    positive(sigma2_h[mi], "sigma2_h");
    positive(proj_alpha[mi], "proj_alpha");
    positive(proj_beta[mi], "proj_beta");
    if (n_examples[mi] < 1 || n_features[mi] < 0 || latent_dim[mi] < 1) {
      throw std::invalid_argument("Hyperparams: bad dimension for mode " +
                                  std::to_string(m + 1));
    }
  }
  positive(core_alpha, "core_alpha");
  positive(core_beta, "core_beta");
  if (is_cp() &&
      (latent_dim[0] != latent_dim[1] || latent_dim[1] != latent_dim[2] ||
       latent_ones[0] != latent_ones[1] || latent_ones[1] != latent_ones[2])) {
    throw std::invalid_argument(
        "Hyperparams: CP needs equal latent dims (and ones flags) per mode");
  }
}

std::uint64_t Rng::integer(std::uint64_t bound) {
  std::uniform_int_distribution<std::uint64_t> d(0, bound - 1);
  return d(engine_);
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_ << '\n' << normal_ << '\n' << uniform_;
  return os.str();
}

Rng Rng::deserialize(const std::string& text) {
  Rng r;
  std::istringstream is(text);
  is >> r.engine_ >> r.normal_ >> r.uniform_;
  if (!is) throw std::runtime_error("Rng: cannot restore state");
  return r;
}

Matrix ModeState::proj_mean() const {
  const auto p = A.empty() ? 0 : A[0].mean.size();
  Matrix out(p, static_cast<Eigen::Index>(A.size()));
  for (std::size_t r = 0; r < A.size(); ++r) {
    out.col(static_cast<Eigen::Index>(r)) = A[r].mean;
  }
  return out;
}

Matrix ModeState::proj_var_diag() const {
  const auto p = A.empty() ? 0 : A[0].mean.size();
  Matrix out(p, static_cast<Eigen::Index>(A.size()));
  for (std::size_t r = 0; r < A.size(); ++r) {
    out.col(static_cast<Eigen::Index>(r)) = A[r].cov.diagonal();
  }
  return out;
}

Eigen::ArrayXXd ModeState::lambda_mean_full() const {
  Eigen::ArrayXXd m = lambda.mean();
  const auto r = static_cast<Eigen::Index>(A.size());
  if (m.cols() == r) return m;
  return m.col(0).replicate(1, r);  // row-shared
}

Matrix ModeState::latent_second_moment() const {
  return H_mean.cwiseProduct(H_mean) + H_var;
}

Tensor3 ModelState::core_second_moment() const {
  Tensor3 out = core_mean;
  auto& v = out.data();
  const auto& var = core_var.data();
  for (std::size_t t = 0; t < v.size(); ++t) v[t] = v[t] * v[t] + var[t];
  return out;
}

Eigen::ArrayXd ModelState::core_lambda_mean() const {
  const auto n = static_cast<Eigen::Index>(core_mean.size());
  if (hyper.is_cp()) return Eigen::ArrayXd::Ones(n);
  return (core_lambda.shape * core_lambda.scale).col(0);
}

bool ModelState::core_cell_pinned(int r1, int r2, int r3) const {
  if (!hyper.is_cp()) return false;
  return !(r1 == r2 && r2 == r3);
}

Matrix apply_feature_pipeline(const Hyperparams& hyper, int m,
                              const Eigen::ArrayXd& center,
                              const Eigen::ArrayXd& scale, const Matrix& raw) {
  if (raw.cols() != center.size()) {
    std::ostringstream os;
    os << "mode " << (m + 1) << ": expected " << center.size()
       << " feature columns, got " << raw.cols();
    throw std::invalid_argument(os.str());
  }
  Matrix x = raw;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    x.col(c) = (x.col(c).array() - center[c]) / scale[c];
  }
  if (hyper.input_bias[static_cast<std::size_t>(m)]) {
    Matrix with_bias(x.rows(), x.cols() + 1);
    with_bias.leftCols(x.cols()) = x;
    with_bias.col(x.cols()).setOnes();
    x = std::move(with_bias);
  }
  return x;
}

ModelState init_random(const Hyperparams& hyper, const FeatureMatrix& x0,
                       const FeatureMatrix& x1, const FeatureMatrix& x2) {
  hyper.validate();
  const FeatureMatrix* xs[3] = {&x0, &x1, &x2};
  for (int m = 0; m < 3; ++m) {
    auto mi = static_cast<std::size_t>(m);
    xs[m]->validate();
    if (xs[m]->rows() != hyper.n_examples[mi] ||
        xs[m]->cols() != hyper.n_features[mi]) {
      std::ostringstream os;
      os << "init_random: mode " << (m + 1) << " features are "
         << xs[m]->rows() << "x" << xs[m]->cols() << ", hyperparams expect "
         << hyper.n_examples[mi] << "x" << hyper.n_features[mi];
      throw std::invalid_argument(os.str());
    }
  }

  ModelState s;
  s.hyper = hyper;
  s.rng = Rng(hyper.seed);

  // Draw order is fixed: per mode (A means, H jitter), then the core.
  for (int m = 0; m < 3; ++m) {
    auto mi = static_cast<std::size_t>(m);
    ModeState& ms = s.mode[mi];

    ms.X.row_ids = xs[m]->row_ids;
    ms.X.col_ids = xs[m]->col_ids;
    const Matrix& raw = xs[m]->values;
    ms.feat_center = raw.colwise().mean().array();
    Eigen::ArrayXd var =
        (raw.rowwise() - raw.colwise().mean()).array().square().colwise().mean();
    ms.feat_scale = var.sqrt();
    for (Eigen::Index c = 0; c < ms.feat_scale.size(); ++c) {
      if (!(ms.feat_scale[c] > 0.0)) ms.feat_scale[c] = 1.0;  // constant column
    }
    ms.X.values =
        apply_feature_pipeline(hyper, m, ms.feat_center, ms.feat_scale, raw);
    if (hyper.input_bias[mi]) ms.X.col_ids.push_back("(bias)");

    const int p = hyper.proj_rows(m);
    const int rl = hyper.latent_dim[mi];
    const int rc = hyper.core_dim(m);
    const int n = hyper.n_examples[mi];

    ms.lambda.shape = Eigen::ArrayXXd::Constant(
        p, hyper.row_shared_precision ? 1 : rl, hyper.proj_alpha[mi]);
    ms.lambda.scale = Eigen::ArrayXXd::Constant(
        p, hyper.row_shared_precision ? 1 : rl, hyper.proj_beta[mi]);

    ms.A.resize(static_cast<std::size_t>(rl));
    for (auto& col : ms.A) {
      col.mean = Vector(p);
      for (Eigen::Index q = 0; q < p; ++q) col.mean[q] = 0.1 * s.rng.normal();
      col.cov = 0.01 * Matrix::Identity(p, p);
    }

    const double sd = std::sqrt(hyper.sigma2_h[mi]);
    const int off = hyper.latent_offset(m);
    ms.H_mean = Matrix::Zero(n, rc);
    ms.H_var = Matrix::Zero(n, rc);
    if (off == 1) ms.H_mean.col(0).setOnes();  // pinned constant column
    Matrix xa = ms.X.values * ms.proj_mean();
    for (int r = 0; r < rl; ++r) {
      for (int i = 0; i < n; ++i) {
        ms.H_mean(i, off + r) = xa(i, r) + sd * s.rng.normal();
        ms.H_var(i, off + r) = hyper.sigma2_h[mi];
      }
    }
  }

  const int r1 = hyper.core_dim(0), r2 = hyper.core_dim(1),
            r3 = hyper.core_dim(2);
  s.core_mean = Tensor3(r1, r2, r3);
  s.core_var = Tensor3(r1, r2, r3);
  const double core_sd = 1.0 / std::sqrt(static_cast<double>(r1) * r2 * r3);
  for (int c3 = 0; c3 < r3; ++c3) {
    for (int c2 = 0; c2 < r2; ++c2) {
      for (int c1 = 0; c1 < r1; ++c1) {
        if (s.core_cell_pinned(c1, c2, c3)) continue;
        s.core_mean(c1, c2, c3) = core_sd * s.rng.normal();
        s.core_var(c1, c2, c3) = 1.0;
      }
    }
  }
  if (!hyper.is_cp()) {
    const auto cells = static_cast<Eigen::Index>(s.core_mean.size());
    s.core_lambda.shape = Eigen::ArrayXXd::Constant(cells, 1, hyper.core_alpha);
    s.core_lambda.scale = Eigen::ArrayXXd::Constant(cells, 1, hyper.core_beta);
  }
  return s;
}

namespace {

bool same(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a == b).all();
}

bool same(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

}  // namespace

bool states_equal(const ModelState& a, const ModelState& b) {
  if (!(a.hyper == b.hyper)) return false;
  if (a.y_center != b.y_center || a.y_scale != b.y_scale) return false;
  if (!(a.rng == b.rng)) return false;
  if (!(a.core_mean == b.core_mean) || !(a.core_var == b.core_var)) {
    return false;
  }
  if (!a.hyper.is_cp()) {
    if (!same(a.core_lambda.shape, b.core_lambda.shape) ||
        !same(a.core_lambda.scale, b.core_lambda.scale)) {
      return false;
    }
  }
  for (int m = 0; m < 3; ++m) {
    auto mi = static_cast<std::size_t>(m);
    const ModeState& x = a.mode[mi];
    const ModeState& y = b.mode[mi];
    if (x.X.row_ids != y.X.row_ids || x.X.col_ids != y.X.col_ids) return false;
    if (!same(x.X.values, y.X.values)) return false;
    if ((x.feat_center != y.feat_center).any() ||
        (x.feat_scale != y.feat_scale).any()) {
      return false;
    }
    if (!same(x.lambda.shape, y.lambda.shape) ||
        !same(x.lambda.scale, y.lambda.scale)) {
      return false;
    }
    if (x.A.size() != y.A.size()) return false;
    for (std::size_t r = 0; r < x.A.size(); ++r) {
      if (x.A[r].mean != y.A[r].mean || !same(x.A[r].cov, y.A[r].cov)) {
        return false;
      }
    }
    if (!same(x.H_mean, y.H_mean) || !same(x.H_var, y.H_var)) return false;
  }
  return true;
}

}  // namespace btf
