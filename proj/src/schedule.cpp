#include "binrep/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "binrep/error.hpp"

namespace binrep {

void GrowthConfig::validate() const {
  if (phase1_lambda < 0.0 || phase2_lambda < 0.0) throw ConfigError("growth lambdas must be >= 0");
  if (phase2_lambda < phase1_lambda) {
    throw ConfigError("phase-2 growth lambda must be at least the phase-1 lambda");
  }
  if (phase1_epochs < 0 || phase2_epochs < 0) throw ConfigError("epoch counts must be >= 0");
  if (!(growth_cap > 0.0)) throw ConfigError("growth cap must be positive");
}

double SolverConfig::rate_at(int epoch) const {
  if (lr_step_epochs <= 0) return learning_rate;
  return learning_rate * std::pow(lr_gamma, epoch / lr_step_epochs);
}

const char* phase_name(Phase p) noexcept {
  switch (p) {
    case Phase::One: return "1";
    case Phase::Two: return "2";
    case Phase::Frozen: return "frozen";
  }
  return "?";
}

double growth_loss(std::span<const double> slopes) {
  double loss = 0.0;
  for (double k : slopes) {
    if (k == 0.0) throw SingularityError("growth loss undefined for a zero slope");
    loss -= std::log(std::abs(k));
  }
  return loss;
}

void growth_update(std::span<double> slopes, double lambda, double cap) {
  if (lambda == 0.0) return;
  for (double& k : slopes) {
    if (k == 0.0) continue;
    const double limit = cap * std::abs(k);
    k += std::clamp(lambda / k, -limit, limit);
  }
}

void init_network(Network& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (Layer& layer : net.layers()) {
    if (auto a = affine_params(layer)) {
      const Shape& s = a->weight->value.shape();
      const std::size_t receptive = s.size() == 4 ? s[2] * s[3] : 1;
      const double fan_in = static_cast<double>(s[1] * receptive);
      const double fan_out = static_cast<double>(s[0] * receptive);
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (double& w : a->weight->value.values()) w = dist(rng);
      a->bias->value.fill(0.0);
    } else if (auto* b = std::get_if<BoundedLayer>(&layer)) {
      b->slopes.value.fill(1.0);
    }
  }
  for (Parameter* p : net.parameters()) {
    p->grad = Tensor(p->value.shape());
    p->velocity = Tensor(p->value.shape());
  }
}

namespace {

std::vector<Parameter*> slope_params(Network& net) {
  std::vector<Parameter*> out;
  for (Layer& layer : net.layers())
    if (auto* b = std::get_if<BoundedLayer>(&layer)) out.push_back(&b->slopes);
  return out;
}

std::string snapshot(const Network& net, int epoch, std::size_t batch, double loss) {
  std::ostringstream os;
  os << "non-finite loss " << loss << " at epoch " << epoch << ", batch " << batch
     << "; mean |slope| " << net.mean_abs_slope() << "; parameter norms:";
  for (const Parameter* p : net.parameters()) {
    double sq = 0.0;
    for (double v : p->value.values()) sq += v * v;
    os << ' ' << p->name << '=' << std::sqrt(sq);
  }
  return os.str();
}

struct EpochPlan {
  Phase phase;
  double lr;
  double loss_lambda;       // growth weight inside the loss
  double decoupled_lambda;  // growth applied after each solver step
  double cap;
};

// One pass over `train`. Returns the mean task loss.
double run_epoch(Network& net, BatchIterator& it, const EpochPlan& plan, const SolverConfig& solver,
                 int epoch, std::size_t& growth_updates) {
  auto params = net.parameters();
  auto slopes = slope_params(net);
  it.start_epoch();
  Batch batch;
  double loss_sum = 0.0;
  std::size_t batches = 0;
  while (it.next(batch)) {
    for (Parameter* p : params)
      if (p->trainable) p->zero_grad();
    Tape tape;
    const NodeId logits = net.forward(tape, tape.constant(std::move(batch.images)));
    NodeId root = tape.softmax_ce(logits, batch.labels);
    const double task = tape.value(root)[0];
    if (!std::isfinite(task)) throw TrainingError(snapshot(net, epoch, batches, task));
    if (plan.loss_lambda > 0.0) {
      for (Parameter* k : slopes) {
        if (!k->trainable) continue;
        root = tape.add(root, tape.scale(tape.growth_loss(tape.parameter(*k)), plan.loss_lambda));
      }
    }
    tape.backward(root);
    sgd_step(params, plan.lr, solver.momentum, solver.weight_decay);
    if (plan.decoupled_lambda > 0.0) {
      for (Parameter* k : slopes) {
        if (!k->trainable) continue;
        growth_update(k->value.values(), plan.decoupled_lambda, plan.cap);
      }
      ++growth_updates;
    }
    loss_sum += task;
    ++batches;
  }
  return batches ? loss_sum / static_cast<double>(batches) : 0.0;
}

Dataset telemetry_subset(const Dataset& eval, std::size_t n) {
  if (n == 0 || n >= eval.size()) return eval;
  return slice(eval, 0, n);
}

}  // namespace

TrainState train_two_phase(Network& net, const Dataset& train, const Dataset& eval,
                           const TrainOptions& options) {
  options.growth.validate();
  if (train.size() == 0) throw InputError("empty training set");
  BatchIterator it(train, options.solver.batch_size, options.seed);
  const Dataset probe = telemetry_subset(eval, options.telemetry_samples);
  TrainState state;
  int epoch = 0;
  const auto run_phase = [&](Phase phase, int epochs) {
    state.phase = phase;
    for (int e = 0; e < epochs; ++e, ++epoch) {
      const double lr = options.solver.rate_at(epoch);
      const EpochPlan plan{
          phase, lr, phase == Phase::One ? options.growth.phase1_lambda : 0.0,
          phase == Phase::Two ? options.growth.phase2_lambda : 0.0, options.growth.growth_cap};
      state.running_loss = run_epoch(net, it, plan, options.solver, epoch, state.growth_updates);
      EpochRecord rec;
      rec.epoch = epoch;
      rec.phase = phase;
      rec.learning_rate = lr;
      rec.train_loss = state.running_loss;
      const EvalResult linear = evaluate(net, probe, ActivationMode::Linear);
      rec.test_loss = linear.loss;
      rec.accuracy_linear = linear.accuracy;
      rec.accuracy_step = evaluate(net, probe, ActivationMode::Step).accuracy;
      rec.mean_abs_slope = net.mean_abs_slope();
      rec.growth_updates = state.growth_updates;
      rec.binarization = binarization_report(net, probe, kDefaultBinaryThresholds, 0,
                                             ActivationMode::Linear);
      state.epoch = epoch + 1;
      if (options.on_epoch) options.on_epoch(rec);
      state.history.push_back(std::move(rec));
    }
  };
  run_phase(Phase::One, options.growth.phase1_epochs);
  run_phase(Phase::Two, options.growth.phase2_epochs);
  state.phase = Phase::Frozen;
  return state;
}

namespace {

class FreezeGuard {
 public:
  explicit FreezeGuard(Network& net) : params_(net.parameters()) {
    for (Parameter* p : params_) saved_.push_back(p->trainable);
  }
  ~FreezeGuard() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->trainable = saved_[i];
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<Parameter*> params_;
  std::vector<bool> saved_;
};

}  // namespace

void finetune_head(Network& net, const Dataset& train, const SolverConfig& solver, int epochs,
                   std::uint64_t seed) {
  const auto affine = net.affine_indices();
  if (affine.empty()) throw ConfigError("network has no affine head to finetune");
  FreezeGuard guard(net);
  for (Parameter* p : net.parameters()) p->trainable = false;
  auto head = *affine_params(net.layers()[affine.back()]);
  head.weight->trainable = true;
  head.bias->trainable = true;
  head.weight->velocity.fill(0.0);
  head.bias->velocity.fill(0.0);
  net.set_mode(ActivationMode::Step);
  BatchIterator it(train, solver.batch_size, seed);
  std::size_t unused = 0;
  for (int e = 0; e < epochs; ++e) {
    run_epoch(net, it, EpochPlan{Phase::Frozen, solver.rate_at(e), 0.0, 0.0, 1.0}, solver, e,
              unused);
  }
}

namespace {

// Per output channel scale of every non-first affine layer. The head gets one
// scale for the whole layer: there is no slope after it to absorb a per-class
// factor, and a shared positive factor leaves the argmax alone.
struct ChannelScales {
  std::size_t layer;
  std::vector<double> scale;
};

// w <- a * sign(w) with a = mean|w|, weights frozen. The network computes the
// same thing it will after fold_scales, in the original units.
std::vector<ChannelScales> scaled_signs(Network& net) {
  const auto affine = net.affine_indices();
  auto& layers = net.layers();
  std::vector<ChannelScales> out;
  for (std::size_t n = 1; n < affine.size(); ++n) {
    const std::size_t i = affine[n];
    auto a = *affine_params(layers[i]);
    const std::size_t rows = a.bias->value.size();
    const std::size_t per = a.weight->value.size() / rows;
    const bool head = n + 1 == affine.size();
    ChannelScales cs{i, std::vector<double>(rows, 0.0)};
    double total = 0.0;
    for (std::size_t c = 0; c < rows; ++c) {
      const double* w = a.weight->value.data() + c * per;
      for (std::size_t j = 0; j < per; ++j) cs.scale[c] += std::abs(w[j]);
      total += cs.scale[c];
      cs.scale[c] /= static_cast<double>(per);
    }
    if (head) std::fill(cs.scale.begin(), cs.scale.end(), total / static_cast<double>(rows * per));
    for (std::size_t c = 0; c < rows; ++c) {
      if (!(cs.scale[c] > 0.0)) cs.scale[c] = 1.0;
      double* w = a.weight->value.data() + c * per;
      for (std::size_t j = 0; j < per; ++j) w[j] = w[j] < 0.0 ? -cs.scale[c] : cs.scale[c];
    }
    a.weight->trainable = false;
    a.weight->velocity.fill(0.0);
    out.push_back(std::move(cs));
  }
  return out;
}

// Moves each scale out of the weights: w -> sign, bias /= a, next slope *= a.
void fold_scales(Network& net, const std::vector<ChannelScales>& scales) {
  auto& layers = net.layers();
  for (const auto& cs : scales) {
    auto a = *affine_params(layers[cs.layer]);
    const std::size_t per = a.weight->value.size() / cs.scale.size();
    auto* next =
        cs.layer + 1 < layers.size() ? std::get_if<BoundedLayer>(&layers[cs.layer + 1]) : nullptr;
    for (std::size_t c = 0; c < cs.scale.size(); ++c) {
      double* w = a.weight->value.data() + c * per;
      for (std::size_t j = 0; j < per; ++j) w[j] = w[j] < 0.0 ? -1.0 : 1.0;
      a.bias->value[c] /= cs.scale[c];
      if (next) next->slopes.value[c] *= cs.scale[c];
    }
  }
}

}  // namespace

void ternarize_weights(Network& net) { fold_scales(net, scaled_signs(net)); }

// Finetuning runs before the fold. Afterwards slopes are a times smaller and
// their inputs 1/a larger, so a plain SGD step on them would be ~1/a^2 too big
// relative to their size and flips signs.
void ternarize_and_finetune(Network& net, const Dataset& train, const TrainOptions& options,
                            int epochs) {
  options.growth.validate();
  const auto scales = scaled_signs(net);
  const auto affine = net.affine_indices();
  if (!affine.empty()) affine_params(net.layers()[affine.front()])->weight->trainable = false;
  for (Parameter* p : net.parameters()) p->velocity.fill(0.0);
  net.set_mode(ActivationMode::Linear);
  BatchIterator it(train, options.solver.batch_size, options.seed);
  std::size_t updates = 0;
  for (int e = 0; e < epochs; ++e) {
    run_epoch(net, it,
              EpochPlan{Phase::Two, options.solver.rate_at(e), 0.0, options.growth.phase2_lambda,
                        options.growth.growth_cap},
              options.solver, e, updates);
  }
  fold_scales(net, scales);
  net.set_mode(ActivationMode::Step);
}

}  // namespace binrep
