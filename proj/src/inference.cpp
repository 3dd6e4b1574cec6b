#include "btf/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace btf {

namespace {

// Floors keeping the extreme sparsity priors representable in finite
// precision.
constexpr double kVarFloor = 1e-300;
constexpr double kScaleFloor = 1e-300;

struct OtherModes {
  int u, v;  // the two non-target modes, ascending
};

OtherModes others(int m) {
  switch (m) {
    case 0:
      return {1, 2};
    case 1:
      return {0, 2};
    default:
      return {0, 1};
  }
}

std::array<int, 3> cell_at(int m, int u, int v, int t, int eu, int ev) {
  std::array<int, 3> c{};
  c[static_cast<std::size_t>(m)] = t;
  c[static_cast<std::size_t>(u)] = eu;
  c[static_cast<std::size_t>(v)] = ev;
  return c;
}

// Per-example latent moments: means, second moments, and the R x R pair
// moment matrices G_i = E[h_i h_i^T] under the factorized q (outer product
// of means with E[h^2] on the diagonal).
struct LatentMoments {
  Matrix E, E2;
  std::vector<Matrix> G;
  Matrix Gsum;
};

LatentMoments latent_moments(const ModeState& ms) {
  LatentMoments lm;
  lm.E = ms.H_mean;
  lm.E2 = ms.H_mean.cwiseProduct(ms.H_mean) + ms.H_var;
  const auto n = lm.E.rows();
  const auto r = lm.E.cols();
  lm.G.resize(static_cast<std::size_t>(n));
  lm.Gsum = Matrix::Zero(r, r);
  for (Eigen::Index i = 0; i < n; ++i) {
    Matrix& g = lm.G[static_cast<std::size_t>(i)];
    g.noalias() = lm.E.row(i).transpose() * lm.E.row(i);
    g.diagonal() = lm.E2.row(i);
    lm.Gsum += g;
  }
  return lm;
}

// Mode-m slices of a core-shaped tensor: S[r](ru, rv) with the target index
// fixed at r and the other two modes in ascending order.
std::vector<Matrix> core_slices(const Tensor3& core, int m) {
  auto [u, v] = others(m);
  const int r_m = core.dim(m), ru_n = core.dim(u), rv_n = core.dim(v);
  std::vector<Matrix> s(static_cast<std::size_t>(r_m));
  for (int r = 0; r < r_m; ++r) {
    Matrix& sr = s[static_cast<std::size_t>(r)];
    sr.resize(ru_n, rv_n);
    for (int rv = 0; rv < rv_n; ++rv) {
      for (int ru = 0; ru < ru_n; ++ru) {
        auto c = cell_at(m, u, v, r, ru, rv);
        sr(ru, rv) = core(c[0], c[1], c[2]);
      }
    }
  }
  return s;
}

Vector superdiag_of(const Tensor3& t) {
  const int r = t.dim(0);
  Vector w(r);
  for (int d = 0; d < r; ++d) w[d] = t(d, d, d);
  return w;
}

}  // namespace

const char* family_name(UpdateFamily f) {
  switch (f) {
    case UpdateFamily::LambdaProj:
      return "lambda_proj";
    case UpdateFamily::Proj:
      return "proj";
    case UpdateFamily::Latent:
      return "latent";
    case UpdateFamily::LambdaCore:
      return "lambda_core";
    case UpdateFamily::Core:
      return "core";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (n_sweeps < 0) throw std::invalid_argument("TrainConfig: n_sweeps < 0");
  if (elbo_every < 1) throw std::invalid_argument("TrainConfig: elbo_every < 1");
  if (convergence_tol < 0) {
    throw std::invalid_argument("TrainConfig: convergence_tol < 0");
  }
  std::array<int, 5> seen{};
  for (auto f : update_order) seen[static_cast<std::size_t>(f)] += 1;
  for (int c : seen) {
    if (c != 1) {
      throw std::invalid_argument(
          "TrainConfig: update_order must cover all five families once");
    }
  }
}

NumericalAbort::NumericalAbort(int sweep_, UpdateFamily family_)
    : std::runtime_error("non-finite value in family '" +
                         std::string(family_name(family_)) + "' at sweep " +
                         std::to_string(sweep_)),
      sweep(sweep_),
      family(family_) {}

void update_lambda_proj(ModelState& state, int mode) {
  auto mi = static_cast<std::size_t>(mode);
  ModeState& ms = state.mode[mi];
  const double alpha = state.hyper.proj_alpha[mi];
  const double inv_beta = 1.0 / state.hyper.proj_beta[mi];
  const auto rl = static_cast<Eigen::Index>(ms.A.size());

  Eigen::ArrayXXd ea2 =
      (ms.proj_mean().cwiseProduct(ms.proj_mean()) + ms.proj_var_diag())
          .array();
  if (state.hyper.row_shared_precision) {
    ms.lambda.shape.col(0) = alpha + 0.5 * static_cast<double>(rl);
    ms.lambda.scale.col(0) =
        (0.5 * ea2.rowwise().sum() + inv_beta).inverse().max(kScaleFloor);
  } else {
    ms.lambda.shape = Eigen::ArrayXXd::Constant(ea2.rows(), ea2.cols(),
                                                alpha + 0.5);
    ms.lambda.scale = (0.5 * ea2 + inv_beta).inverse().max(kScaleFloor);
  }
}

void update_proj(ModelState& state, int mode) {
  auto mi = static_cast<std::size_t>(mode);
  ModeState& ms = state.mode[mi];
  const Matrix& x = ms.X.values;
  const auto p = x.cols();
  const int rl = state.hyper.latent_dim[mi];
  const int off = state.hyper.latent_offset(mode);
  const double inv_s2h = 1.0 / state.hyper.sigma2_h[mi];

  const Matrix xtx = x.transpose() * x;
  const Matrix xth = x.transpose() * ms.H_mean.middleCols(off, rl);
  const Eigen::ArrayXXd elam = ms.lambda_mean_full();

  Matrix prec(p, p);
  for (int r = 0; r < rl; ++r) {
    prec = inv_s2h * xtx;
    prec.diagonal() += elam.col(r).matrix();
    Eigen::LLT<Matrix> llt(prec);
    if (llt.info() != Eigen::Success) {
      throw std::runtime_error(
          "update_proj: precision not factorizable for mode " +
          std::to_string(mode + 1) + ", latent column " + std::to_string(r));
    }
    auto& col = ms.A[static_cast<std::size_t>(r)];
    col.cov = llt.solve(Matrix::Identity(p, p));
    col.mean = llt.solve(inv_s2h * xth.col(r));
  }
}

void update_latent(ModelState& state, int mode, const Tensor3& y,
                   const Mask3& observed) {
  const Hyperparams& hp = state.hyper;
  auto mi = static_cast<std::size_t>(mode);
  auto [u, v] = others(mode);
  ModeState& tm = state.mode[mi];

  const int n = hp.n_examples[mi];
  const int r_n = hp.core_dim(mode);
  const int off = hp.latent_offset(mode);
  const int nu = hp.n_examples[static_cast<std::size_t>(u)];
  const int nv = hp.n_examples[static_cast<std::size_t>(v)];
  const double inv_s2y = 1.0 / hp.sigma2_y;
  const double inv_s2h = 1.0 / hp.sigma2_h[mi];
  const bool cp = hp.is_cp();

  const LatentMoments lu = latent_moments(state.mode[static_cast<std::size_t>(u)]);
  const LatentMoments lv = latent_moments(state.mode[static_cast<std::size_t>(v)]);

  std::vector<Matrix> s_mean, s_var;
  Matrix gw;  // CP: E[w w^T] with E[w^2] on the diagonal
  if (cp) {
    Vector w = superdiag_of(state.core_mean);
    Vector w2 = w.cwiseProduct(w) + superdiag_of(state.core_var);
    gw.noalias() = w * w.transpose();
    gw.diagonal() = w2;
  } else {
    s_mean = core_slices(state.core_mean, mode);
    s_var = core_slices(state.core_var, mode);
  }

  // Pair moment matrix W(r, r*) = E[s_r s_r*] summed over a set of opposite
  // mode pairs; s_r is the coefficient of h_{t r} in the reconstruction.
  Matrix work;
  auto add_wpair = [&](const Matrix& gu, const Matrix& gv,
                       const Eigen::ArrayXd& e2u, const Eigen::ArrayXd& e2v,
                       double sign, Matrix& into) {
    if (cp) {
      into += sign * gw.cwiseProduct(gu).cwiseProduct(gv);
      return;
    }
    for (int rs = 0; rs < r_n; ++rs) {
      work.noalias() = gu * s_mean[static_cast<std::size_t>(rs)] * gv;
      for (int r = 0; r < r_n; ++r) {
        into(r, rs) += sign * s_mean[static_cast<std::size_t>(r)]
                                  .cwiseProduct(work)
                                  .sum();
      }
      // same-cell core second moments on the diagonal
      into(rs, rs) += sign * (e2u.matrix().transpose() *
                              s_var[static_cast<std::size_t>(rs)] *
                              e2v.matrix())(0, 0);
    }
  };

  Matrix wtot = Matrix::Zero(r_n, r_n);
  add_wpair(lu.Gsum, lv.Gsum, lu.E2.colwise().sum().array(),
            lv.E2.colwise().sum().array(), 1.0, wtot);

  const std::int64_t nnz = observed.count();
  const bool dense = 2 * nnz >= observed.size();

  std::vector<Matrix> acc(static_cast<std::size_t>(n),
                          dense ? wtot : Matrix::Zero(r_n, r_n));
  Matrix b = Matrix::Zero(n, r_n);

  Vector vp(r_n);
  std::vector<int> obs_t, miss_t;
  for (int ev = 0; ev < nv; ++ev) {
    for (int eu = 0; eu < nu; ++eu) {
      obs_t.clear();
      miss_t.clear();
      for (int t = 0; t < n; ++t) {
        auto c = cell_at(mode, u, v, t, eu, ev);
        (observed(c[0], c[1], c[2]) ? obs_t : miss_t).push_back(t);
      }
      if (!obs_t.empty()) {
        if (cp) {
          for (int r = 0; r < r_n; ++r) {
            vp[r] = gw(r, r) == 0.0 && true ? 0.0 : 0.0;  // placeholder
          }
          for (int r = 0; r < r_n; ++r) {
            vp[r] = state.core_mean(r, r, r) * lu.E(eu, r) * lv.E(ev, r);
          }
        } else {
          for (int r = 0; r < r_n; ++r) {
            vp[r] = lu.E.row(eu) * s_mean[static_cast<std::size_t>(r)] *
                    lv.E.row(ev).transpose();
          }
        }
        for (int t : obs_t) {
          auto c = cell_at(mode, u, v, t, eu, ev);
          b.row(t) += y(c[0], c[1], c[2]) * vp.transpose();
        }
      }
      const auto& fix = dense ? miss_t : obs_t;
      if (!fix.empty()) {
        Matrix w_pair = Matrix::Zero(r_n, r_n);
        add_wpair(lu.G[static_cast<std::size_t>(eu)],
                  lv.G[static_cast<std::size_t>(ev)],
                  lu.E2.row(eu).array(), lv.E2.row(ev).array(), 1.0, w_pair);
        const double sign = dense ? -1.0 : 1.0;
        for (int t : fix) acc[static_cast<std::size_t>(t)] += sign * w_pair;
      }
    }
  }

  // Sequential closed-form updates within each row; rows are independent.
  const Matrix xa = tm.X.values * tm.proj_mean();
  for (int t = 0; t < n; ++t) {
    const Matrix& a = acc[static_cast<std::size_t>(t)];
    for (int r = off; r < r_n; ++r) {
      const double prec = inv_s2y * a(r, r) + inv_s2h;
      const double cross =
          a.row(r).dot(tm.H_mean.row(t)) - a(r, r) * tm.H_mean(t, r);
      const double num =
          inv_s2y * (b(t, r) - cross) + inv_s2h * xa(t, r - off);
      tm.H_mean(t, r) = num / prec;
      tm.H_var(t, r) = std::max(1.0 / prec, kVarFloor);
    }
  }
}

void update_lambda_core(ModelState& state) {
  if (state.hyper.is_cp()) return;  // fixed unit precision on CP weights
  const double alpha = state.hyper.core_alpha;
  const double inv_beta = 1.0 / state.hyper.core_beta;
  const Tensor3 ec2 = state.core_second_moment();
  Eigen::Map<const Eigen::ArrayXd> flat(ec2.data().data(),
                                        static_cast<Eigen::Index>(ec2.size()));
  state.core_lambda.shape.col(0).setConstant(alpha + 0.5);
  state.core_lambda.scale.col(0) =
      (0.5 * flat + inv_beta).inverse().max(kScaleFloor);
}

void update_core(ModelState& state, const Tensor3& y, const Mask3& observed) {
  const Hyperparams& hp = state.hyper;
  const int r1 = hp.core_dim(0), r2 = hp.core_dim(1), r3 = hp.core_dim(2);
  const double inv_s2y = 1.0 / hp.sigma2_y;
  const bool cp = hp.is_cp();

  const LatentMoments l0 = latent_moments(state.mode[0]);
  const LatentMoments l1 = latent_moments(state.mode[1]);
  const LatentMoments l2 = latent_moments(state.mode[2]);

  const std::int64_t nnz = observed.count();
  const bool dense = 2 * nnz >= observed.size();
  const Eigen::ArrayXd elam = state.core_lambda_mean();

  if (cp) {
    const int r_n = r1;
    Matrix w = lu_cp_pair_sum_placeholder(r_n);  // replaced below
    (void)w;
  }

  if (cp) {
    const int r_n = r1;
    Matrix wsum;
    Vector b = Vector::Zero(r_n);
    if (dense) {
      wsum = l0.Gsum.cwiseProduct(l1.Gsum).cwiseProduct(l2.Gsum);
    } else {
      wsum = Matrix::Zero(r_n, r_n);
    }
    for (int k = 0; k < y.dim(2); ++k) {
      for (int j = 0; j < y.dim(1); ++j) {
        for (int i = 0; i < y.dim(0); ++i) {
          const bool on = observed(i, j, k);
          if (on) {
            const double yv = y(i, j, k);
            for (int r = 0; r < r_n; ++r) {
              b[r] += yv * l0.E(i, r) * l1.E(j, r) * l2.E(k, r);
            }
          }
          if (on != dense) {
            const double sign = dense ? -1.0 : 1.0;
            wsum += sign * l0.G[static_cast<std::size_t>(i)]
                               .cwiseProduct(l1.G[static_cast<std::size_t>(j)])
                               .cwiseProduct(l2.G[static_cast<std::size_t>(k)]);
          }
        }
      }
    }
    Vector cvec = superdiag_of(state.core_mean);
    for (int r = 0; r < r_n; ++r) {
      const double prec = inv_s2y * wsum(r, r) + 1.0;
      const double cross = wsum.row(r).dot(cvec) - wsum(r, r) * cvec[r];
      cvec[r] = inv_s2y * (b[r] - cross) / prec;
      state.core_mean(r, r, r) = cvec[r];
      state.core_var(r, r, r) = std::max(1.0 / prec, kVarFloor);
    }
    return;
  }

  const auto ncells = static_cast<Eigen::Index>(state.core_mean.size());

  // W(v, v*) = sum over observed cells of the product of per-mode pair
  // moments; the factorized total minus per-missing-cell corrections when
  // the mask is mostly on.
  Matrix w(ncells, ncells);
  {
    auto fill = [&](const Matrix& g0, const Matrix& g1, const Matrix& g2,
                    double sign, bool init) {
      for (Eigen::Index vs = 0; vs < ncells; ++vs) {
        const int vs1 = static_cast<int>(vs % r1);
        const int vs2 = static_cast<int>((vs / r1) % r2);
        const int vs3 = static_cast<int>(vs / (r1 * r2));
        for (Eigen::Index vv = 0; vv < ncells; ++vv) {
          const int v1 = static_cast<int>(vv % r1);
          const int v2 = static_cast<int>((vv / r1) % r2);
          const int v3 = static_cast<int>(vv / (r1 * r2));
          const double term =
              sign * g0(v1, vs1) * g1(v2, vs2) * g2(v3, vs3);
          if (init) {
            w(vv, vs) = term;
          } else {
            w(vv, vs) += term;
          }
        }
      }
    };
    bool first = true;
    if (dense) {
      fill(l0.Gsum, l1.Gsum, l2.Gsum, 1.0, true);
      first = false;
    } else {
      w.setZero();
    }
    for (int k = 0; k < y.dim(2); ++k) {
      for (int j = 0; j < y.dim(1); ++j) {
        for (int i = 0; i < y.dim(0); ++i) {
          if (observed(i, j, k) == dense) continue;
          fill(l0.G[static_cast<std::size_t>(i)],
               l1.G[static_cast<std::size_t>(j)],
               l2.G[static_cast<std::size_t>(k)], dense ? -1.0 : 1.0, false);
          first = false;
        }
      }
    }
    (void)first;
  }

  // Data term: contraction of the masked responses with the latent means.
  Tensor3 ymasked = y;
  for (int k = 0; k < y.dim(2); ++k) {
    for (int j = 0; j < y.dim(1); ++j) {
      for (int i = 0; i < y.dim(0); ++i) {
        if (!observed(i, j, k)) ymasked(i, j, k) = 0.0;
      }
    }
  }
  const Tensor3 bt = tucker_compose(ymasked, l0.E.transpose(),
                                    l1.E.transpose(), l2.E.transpose());
  Eigen::Map<const Vector> b(bt.data().data(), ncells);

  Eigen::Map<Vector> cvec(state.core_mean.data().data(), ncells);
  for (Eigen::Index vv = 0; vv < ncells; ++vv) {
    const double prec = inv_s2y * w(vv, vv) + elam[vv];
    const double cross = w.row(vv).dot(cvec) - w(vv, vv) * cvec[vv];
    cvec[vv] = inv_s2y * (b[vv] - cross) / prec;
    state.core_var.data()[static_cast<std::size_t>(vv)] =
        std::max(1.0 / prec, kVarFloor);
  }
}

void apply_update(ModelState& state, UpdateFamily f, const Tensor3& y,
                  const Mask3& observed) {
  switch (f) {
    case UpdateFamily::LambdaProj:
      for (int m = 0; m < 3; ++m) update_lambda_proj(state, m);
      return;
    case UpdateFamily::Proj:
      for (int m = 0; m < 3; ++m) update_proj(state, m);
      return;
    case UpdateFamily::Latent:
      for (int m = 0; m < 3; ++m) update_latent(state, m, y, observed);
      return;
    case UpdateFamily::LambdaCore:
      update_lambda_core(state);
      return;
    case UpdateFamily::Core:
      update_core(state, y, observed);
      return;
  }
}

namespace {

bool family_finite(const ModelState& s, UpdateFamily f) {
  switch (f) {
    case UpdateFamily::LambdaProj:
      for (const auto& m : s.mode) {
        if (!m.lambda.shape.allFinite() || !m.lambda.scale.allFinite()) {
          return false;
        }
      }
      return true;
    case UpdateFamily::Proj:
      for (const auto& m : s.mode) {
        for (const auto& col : m.A) {
          if (!col.mean.allFinite() || !col.cov.allFinite()) return false;
        }
      }
      return true;
    case UpdateFamily::Latent:
      for (const auto& m : s.mode) {
        if (!m.H_mean.allFinite() || !m.H_var.allFinite()) return false;
      }
      return true;
    case UpdateFamily::LambdaCore:
      if (s.hyper.is_cp()) return true;
      return s.core_lambda.shape.allFinite() && s.core_lambda.scale.allFinite();
    case UpdateFamily::Core:
      return s.core_mean.all_finite() && s.core_var.all_finite();
  }
  return true;
}

}  // namespace

double train_rmse(const ModelState& state, const Tensor3& y,
                  const Mask3& observed) {
  const Tensor3 fit =
      tucker_compose(state.core_mean, state.mode[0].H_mean,
                     state.mode[1].H_mean, state.mode[2].H_mean);
  double sq = 0.0;
  std::int64_t n = 0;
  for (int k = 0; k < y.dim(2); ++k) {
    for (int j = 0; j < y.dim(1); ++j) {
      for (int i = 0; i < y.dim(0); ++i) {
        if (!observed(i, j, k)) continue;
        const double d = fit(i, j, k) - y(i, j, k);
        sq += d * d;
        ++n;
      }
    }
  }
  return n == 0 ? 0.0 : std::sqrt(sq / static_cast<double>(n));
}

TrainTrace train(ModelState& state, const Tensor3& y, const Mask3& observed,
                 const TrainConfig& cfg) {
  cfg.validate();
  for (int m = 0; m < 3; ++m) {
    if (y.dim(m) != state.hyper.n_examples[static_cast<std::size_t>(m)]) {
      std::ostringstream os;
      os << "train: response dim " << (m + 1) << " is " << y.dim(m)
         << " but the model has "
         << state.hyper.n_examples[static_cast<std::size_t>(m)] << " examples";
      throw std::invalid_argument(os.str());
    }
  }
  if (observed.dims() != y.dims()) {
    throw std::invalid_argument("train: mask dims do not match responses");
  }

  TrainTrace trace;
  std::optional<double> last_elbo;
  for (int sweep = 1; sweep <= cfg.n_sweeps; ++sweep) {
    const auto t0 = std::chrono::steady_clock::now();
    for (auto fam : cfg.update_order) {
      apply_update(state, fam, y, observed);
      if (!family_finite(state, fam)) throw NumericalAbort(sweep, fam);
    }
    SweepRecord rec;
    rec.sweep = sweep;
    rec.train_rmse = train_rmse(state, y, observed);
    if (sweep % cfg.elbo_every == 0) {
      rec.elbo = compute_elbo(state, y, observed);
    }
    rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    trace.sweeps.push_back(rec);
    if (rec.elbo && last_elbo && cfg.convergence_tol > 0.0 &&
        std::abs(*rec.elbo - *last_elbo) <
            cfg.convergence_tol * std::abs(*rec.elbo)) {
      trace.converged_early = true;
      break;
    }
    if (rec.elbo) last_elbo = rec.elbo;
  }
  return trace;
}

}  // namespace btf
