#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "binrep/data.hpp"
#include "binrep/metrics.hpp"
#include "binrep/network.hpp"

namespace binrep {

struct GrowthConfig {
  double phase1_lambda = 1e-4;  // through the loss, scaled by the learning rate
  double phase2_lambda = 1e-2;  // per update, applied outside the learning rate
  int phase1_epochs = 4;
  int phase2_epochs = 4;
  double growth_cap = 0.5;  // max relative slope change per update

  /// Throws ConfigError on negative lambdas/epochs, a non-positive cap, or
  /// phase2_lambda < phase1_lambda.
  void validate() const;
};

struct SolverConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 64;
  int lr_step_epochs = 0;  // 0 disables step decay
  double lr_gamma = 0.1;

  double rate_at(int epoch) const;
};

enum class Phase : std::uint8_t { One, Two, Frozen };
const char* phase_name(Phase p) noexcept;

struct EpochRecord {
  int epoch = 0;
  Phase phase = Phase::One;
  double learning_rate = 0.0;
  double train_loss = 0.0;  // mean task loss over the epoch's batches
  double test_loss = 0.0;
  double accuracy_linear = 0.0;
  double accuracy_step = 0.0;
  double mean_abs_slope = 0.0;
  std::size_t growth_updates = 0;  // decoupled updates applied so far
  BinarizationReport binarization;
};

struct TrainState {
  int epoch = 0;
  Phase phase = Phase::One;
  double running_loss = 0.0;
  std::size_t growth_updates = 0;
  std::vector<EpochRecord> history;
};

struct TrainOptions {
  GrowthConfig growth;
  SolverConfig solver;
  std::uint64_t seed = 1;
  std::size_t telemetry_samples = 0;  // 0 = whole evaluation set
  std::function<void(const EpochRecord&)> on_epoch;
};

/// sum_i -ln|k_i|. Throws SingularityError if any slope is zero.
double growth_loss(std::span<const double> slopes);

/// k <- k + clamp(lambda / k, -cap*|k|, cap*|k|). Grows |k| without ever
/// changing its sign; a zero slope stays zero.
void growth_update(std::span<double> slopes, double lambda, double cap);

/// Xavier-uniform affine weights (bound sqrt(6 / (fan_in + fan_out))), zero
/// biases, unit slopes, cleared solver state. Deterministic in `seed`.
void init_network(Network& net, std::uint64_t seed);

/// Phase 1: task loss + phase1_lambda * growth loss through the solver.
/// Phase 2: task loss through the solver, then a decoupled growth_update on
/// every slope after each step. Emits one EpochRecord per epoch (binarization
/// report plus Linear- and Step-mode accuracy on `eval`). Throws
/// TrainingError with a diagnostic snapshot if the loss becomes non-finite.
TrainState train_two_phase(Network& net, const Dataset& train, const Dataset& eval,
                           const TrainOptions& options);

/// Trains only the final affine layer with every rectifier in Step mode. The
/// network is left in Step mode; trainable flags are restored afterwards.
void finetune_head(Network& net, const Dataset& train, const SolverConfig& solver, int epochs,
                   std::uint64_t seed);

/// Replaces every affine weight except the first layer's with sign(w)
/// (sign(0) = +1) and freezes it. Per output channel, with a = mean|w|, the
/// bias is divided by a and a following rectifier slope multiplied by a,
/// so the rectifier sees approximately the same input as before. The head
/// uses one a for the whole layer, which keeps its argmax.
void ternarize_weights(Network& net);

/// ternarize_weights, then finetunes only biases and slopes (first-layer
/// weights frozen too) in Linear mode with decoupled phase-2 growth, and
/// leaves the network in Step mode. Training happens with weights at a*sign(w)
/// and the scales are folded in afterwards.
void ternarize_and_finetune(Network& net, const Dataset& train, const TrainOptions& options,
                            int epochs);

}  // namespace binrep
