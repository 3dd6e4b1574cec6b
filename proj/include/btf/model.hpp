#pragma once

// Variational state of the three-mode factorization model: q-distribution
// parameters for every random variable plus the fixed hyperparameters.
//
// Mode m has n_examples[m] examples with n_features[m] input features. Each
// mode carries latent_dim[m] learned latent columns; when latent_ones[m] is
// set, a constant ones column is pinned at latent index 0, so the core tensor
// spans core_dim(m) = latent_dim[m] + 1 entries along that mode and core cell
// (0,0,0) is the global intercept.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "btf/tensor.hpp"

namespace btf {

enum class Decomposition { Tucker, CP };

struct Hyperparams {
  std::array<int, 3> n_examples{0, 0, 0};
  std::array<int, 3> n_features{0, 0, 0};  // before any bias column
  std::array<int, 3> latent_dim{4, 4, 4};  // learned latent columns
  Decomposition decomposition = Decomposition::Tucker;

  double sigma2_y = 1.0;                      // response noise variance
  std::array<double, 3> sigma2_h{1.0, 1.0, 1.0};  // latent-layer variances

  std::array<double, 3> proj_alpha{1e-5, 1e-5, 1e-5};  // Gamma shape, A priors
  std::array<double, 3> proj_beta{1e5, 1e5, 1e5};      // Gamma scale, A priors
  double core_alpha = 1e-5;  // Gamma prior on core precisions (Tucker only)
  double core_beta = 1e5;

  bool row_shared_precision = true;  // one lambda per projection row
  std::array<bool, 3> latent_ones{true, true, true};
  std::array<bool, 3> input_bias{false, false, false};

  std::uint64_t seed = 0;

  int core_dim(int m) const {
    return latent_dim[static_cast<std::size_t>(m)] +
           (latent_ones[static_cast<std::size_t>(m)] ? 1 : 0);
  }
  int latent_offset(int m) const {
    return latent_ones[static_cast<std::size_t>(m)] ? 1 : 0;
  }
  int proj_rows(int m) const {
    return n_features[static_cast<std::size_t>(m)] +
           (input_bias[static_cast<std::size_t>(m)] ? 1 : 0);
  }
  bool is_cp() const { return decomposition == Decomposition::CP; }

  void validate() const;  // throws std::invalid_argument
  bool operator==(const Hyperparams&) const = default;
};

// Independent Gamma factors, shape/scale parameterization (mean shape*scale).
// One column when precisions are shared across a projection row.
struct GammaQ {
  Eigen::ArrayXXd shape;
  Eigen::ArrayXXd scale;

  Eigen::ArrayXXd mean() const { return shape * scale; }
};

// Joint Gaussian over one projection-matrix column.
struct GaussianColumnQ {
  Vector mean;
  Matrix cov;
};

// Serializable RNG: mt19937_64 plus the cached state of the normal sampler.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  // Uniform integer in [0, bound).
  std::uint64_t integer(std::uint64_t bound);

  std::mt19937_64& engine() { return engine_; }

  std::string serialize() const;
  static Rng deserialize(const std::string& text);

  bool operator==(const Rng& other) const {
    return serialize() == other.serialize();
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

struct ModeState {
  FeatureMatrix X;  // standardized, bias column (all ones) appended last
  Eigen::ArrayXd feat_center;  // per original feature column
  Eigen::ArrayXd feat_scale;

  GammaQ lambda;                   // proj_rows x latent_dim (or x 1 shared)
  std::vector<GaussianColumnQ> A;  // one per learned latent column
  Matrix H_mean;                   // n_examples x core_dim
  Matrix H_var;                    // ones column pinned to mean 1, var 0

  Matrix proj_mean() const;      // proj_rows x latent_dim, E[A]
  Matrix proj_var_diag() const;  // proj_rows x latent_dim, Var(a_pr)
  // E[lambda] expanded to proj_rows x latent_dim even when row-shared.
  Eigen::ArrayXXd lambda_mean_full() const;
  Matrix latent_second_moment() const;  // E[h^2] = mean^2 + var
};

struct ModelState {
  Hyperparams hyper;
  std::array<ModeState, 3> mode;

  GammaQ core_lambda;  // flattened over core cells; empty for CP
  Tensor3 core_mean;
  Tensor3 core_var;  // CP: off-superdiagonal cells pinned to (0, 0)

  // Response standardization applied by the harness before training.
  double y_center = 0.0;
  double y_scale = 1.0;

  Rng rng;

  Tensor3 core_second_moment() const;
  // Flat E[lambda^r] per core cell; CP returns the fixed unit precision.
  Eigen::ArrayXd core_lambda_mean() const;

  // True for cells that are never updated (CP off-superdiagonal).
  bool core_cell_pinned(int r1, int r2, int r3) const;
};

// Deterministic-in-seed initialization. Feature matrices are the raw inputs;
// they are standardized per column here and the statistics kept for
// projecting new examples later.
ModelState init_random(const Hyperparams& hyper, const FeatureMatrix& x0,
                       const FeatureMatrix& x1, const FeatureMatrix& x2);

// Standardize columns with the stored statistics and append the bias column
// if the mode was configured with one. Used at init and on held-out features.
Matrix apply_feature_pipeline(const Hyperparams& hyper, int m,
                              const Eigen::ArrayXd& center,
                              const Eigen::ArrayXd& scale,
                              const Matrix& raw);

bool states_equal(const ModelState& a, const ModelState& b);

}  // namespace btf
