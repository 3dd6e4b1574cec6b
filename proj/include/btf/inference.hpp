#pragma once

// Closed-form variational coordinate updates, the evidence lower bound and
// the training loop.
//
// Every update family is an exact coordinate-ascent step on the ELBO given
// the current q moments of everything else, so one full sweep can never
// decrease the bound. Within a family, coupled coordinates (latent entries
// sharing a row, core cells) are updated sequentially in a fixed order;
// independent coordinates (projection columns, precision entries, latent
// rows) are closed-form maximizers simultaneously.

#include <array>
#include <optional>
#include <stdexcept>
#include <vector>

#include "btf/model.hpp"
#include "btf/tensor.hpp"

namespace btf {

enum class UpdateFamily { LambdaProj, Proj, Latent, LambdaCore, Core };

const char* family_name(UpdateFamily f);

struct TrainConfig {
  int n_sweeps = 100;
  std::array<UpdateFamily, 5> update_order{
      UpdateFamily::LambdaProj, UpdateFamily::Proj, UpdateFamily::Latent,
      UpdateFamily::LambdaCore, UpdateFamily::Core};
  int elbo_every = 1;            // evaluate the bound every k-th sweep
  double convergence_tol = 0.0;  // 0 disables early stopping

  void validate() const;
};

struct SweepRecord {
  int sweep = 0;                // 1-based
  std::optional<double> elbo;   // present on elbo_every sweeps
  double train_rmse = 0.0;      // over observed cells, model space
  std::int64_t wall_ms = 0;
};

struct TrainTrace {
  std::vector<SweepRecord> sweeps;
  bool converged_early = false;
};

// Thrown when a non-finite value appears in a parameter family during
// training; carries the sweep index and the family that produced it.
class NumericalAbort : public std::runtime_error {
 public:
  NumericalAbort(int sweep, UpdateFamily family);
  int sweep;
  UpdateFamily family;
};

// q(lambda^mode): Gamma updates from the current projection moments.
void update_lambda_proj(ModelState& state, int mode);

// q(a_r^mode): joint Gaussian per latent column.
void update_proj(ModelState& state, int mode);

// q(h_ir^mode): entrywise Gaussian updates; ones columns are skipped.
void update_latent(ModelState& state, int mode, const Tensor3& y,
                   const Mask3& observed);

// q(lambda^r): Gamma updates from core moments (no-op for CP).
void update_lambda_core(ModelState& state);

// q(c_v): entrywise Gaussian updates; CP touches only the superdiagonal.
void update_core(ModelState& state, const Tensor3& y, const Mask3& observed);

void apply_update(ModelState& state, UpdateFamily f, const Tensor3& y,
                  const Mask3& observed);

// Closed-form evidence lower bound at the current q parameters.
double compute_elbo(const ModelState& state, const Tensor3& y,
                    const Mask3& observed);

// Root mean squared error of the posterior-mean reconstruction over the
// observed cells.
double train_rmse(const ModelState& state, const Tensor3& y,
                  const Mask3& observed);

TrainTrace train(ModelState& state, const Tensor3& y, const Mask3& observed,
                 const TrainConfig& cfg);

}  // namespace btf
