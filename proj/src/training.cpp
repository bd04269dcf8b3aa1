#include "evifuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "evifuse/error.hpp"
#include "evifuse/parallel.hpp"
#include "evifuse/seed.hpp"

namespace evifuse {

std::vector<std::string> TrainingConfig::problems() const {
  std::vector<std::string> out;
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) out.push_back("learning_rate must be positive");
  if (batch_size < 1) out.push_back("batch_size must be >= 1");
  if (patience < 0) out.push_back("patience must be >= 0");
  if (pretrain_epochs < 0) out.push_back("pretrain_epochs must be >= 0");
  if (fusion_epochs < 0) out.push_back("fusion_epochs must be >= 0");
  if (finetune_epochs < 0) out.push_back("finetune_epochs must be >= 0");
  return out;
}

void TrainingConfig::validate() const {
  const auto list = problems();
  if (list.empty()) return;
  std::string msg = "invalid training config:";
  for (const auto& p : list) msg += " " + p + ";";
  fail(ErrorCode::Config, msg);
}

void adam_step(std::span<double> params, std::span<const double> grads, OptimizerState& state,
               double learning_rate, std::span<const std::uint8_t> mask) {
  const std::size_t n = params.size();
  if (grads.size() != n || state.first.size() != n || state.second.size() != n ||
      (!mask.empty() && mask.size() != n)) {
    fail(ErrorCode::DimensionMismatch, "adam_step: parameter, gradient and moment sizes differ");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if ((mask.empty() || mask[i]) && !std::isfinite(grads[i])) {
      fail(ErrorCode::NonFinite, "non-finite gradient at parameter " + std::to_string(i) +
                                     " (step " + std::to_string(state.step + 1) + ")");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(OptimizerState::kBeta1, t);
  const double c2 = 1.0 - std::pow(OptimizerState::kBeta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double g = grads[i];
    state.first[i] = OptimizerState::kBeta1 * state.first[i] + (1.0 - OptimizerState::kBeta1) * g;
    state.second[i] = OptimizerState::kBeta2 * state.second[i] + (1.0 - OptimizerState::kBeta2) * g * g;
    const double m_hat = state.first[i] / c1;
    const double v_hat = state.second[i] / c2;
    params[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + OptimizerState::kEpsilon);
  }
}

// ---------------------------------------------------------------------------
// Pretraining head

SoftmaxHead init_head(int features, int classes, std::uint64_t seed) {
  if (features < 1 || classes < 2) fail(ErrorCode::InvalidArgument, "head needs features >= 1 and classes >= 2");
  SoftmaxHead head{features, classes, {}, {}};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(features)));
  head.weights.resize(static_cast<std::size_t>(features * classes));
  for (auto& w : head.weights) w = normal(rng);
  head.bias.assign(static_cast<std::size_t>(classes), 0.0);
  return head;
}

namespace {

void head_logits(const SoftmaxHead& head, std::span<const double> f, std::span<double> p) {
  const auto K = static_cast<std::size_t>(head.classes);
  const auto H = static_cast<std::size_t>(head.features);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < K; ++k) {
    double z = head.bias[k];
    for (std::size_t h = 0; h < H; ++h) z += head.weights[k * H + h] * f[h];
    p[k] = z;
    top = std::max(top, z);
  }
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    p[k] = std::exp(p[k] - top);
    total += p[k];
  }
  for (std::size_t k = 0; k < K; ++k) p[k] /= total;
}

}  // namespace

ProbabilityMap head_probabilities(const FeatureExtractor& extractor, const SoftmaxHead& head,
                                  const ModalityImage& image) {
  const auto features = extractor.extract(image);
  ProbabilityMap out;
  out.width = image.width;
  out.height = image.height;
  out.classes = head.classes;
  const auto K = static_cast<std::size_t>(head.classes);
  out.values.resize(image.voxels() * K);
  for (std::size_t n = 0; n < image.voxels(); ++n) {
    head_logits(head, features.voxel(n), std::span<double>(out.values).subspan(n * K, K));
  }
  return out;
}

double head_loss_and_gradient(const FeatureExtractor& extractor, const SoftmaxHead& head,
                              const ModalityImage& image, const LabelGrid& labels,
                              std::span<double> extractor_grad, std::span<double> head_grad) {
  const auto features = extractor.extract(image);
  const auto K = static_cast<std::size_t>(head.classes);
  const auto H = static_cast<std::size_t>(head.features);
  const std::size_t N = image.voxels();
  if (labels.voxels() != N) fail(ErrorCode::DimensionMismatch, "label grid and image differ in size");
  const bool want = !extractor_grad.empty() || !head_grad.empty();
  std::vector<double> p(K);
  std::vector<double> d_features(want ? N * H : 0, 0.0);
  const double scale = 1.0 / static_cast<double>(N);
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const auto f = features.voxel(n);
    head_logits(head, f, p);
    const std::size_t y = labels.labels[n];
    loss -= std::log(std::max(p[y], 1e-300));
    if (!want) continue;
    for (std::size_t k = 0; k < K; ++k) {
      const double dz = (p[k] - (k == y ? 1.0 : 0.0)) * scale;
      for (std::size_t h = 0; h < H; ++h) {
        if (!head_grad.empty()) head_grad[k * H + h] += dz * f[h];
        d_features[n * H + h] += dz * head.weights[k * H + h];
      }
      if (!head_grad.empty()) head_grad[K * H + k] += dz;
    }
  }
  if (!extractor_grad.empty()) extractor.backward(image, d_features, extractor_grad);
  return loss * scale;
}

// ---------------------------------------------------------------------------
// Validation and logging

ValidationScores validate_model(const Model& model, std::span<const LabeledExample> examples) {
  if (examples.empty()) fail(ErrorCode::InvalidArgument, "validation split is empty");
  const int T = model.modalities();
  const int K = model.classes();
  struct Slot {
    double loss = 0.0;
    double fused = 0.0;
    std::vector<double> modality;
  };
  std::vector<Slot> slots(examples.size());
  parallel_for(examples.size(), [&](std::size_t i) {
    const auto& ex = examples[i];
    const auto fp = forward(model, ex.images);
    Slot& s = slots[i];
    std::vector<double> y;
    for (int t = 0; t < T; ++t) {
      const auto& m = fp.masses[static_cast<std::size_t>(t)];
      const auto Ku = static_cast<std::size_t>(K);
      y.assign(ex.labels.voxels() * Ku, 0.0);
      for (std::size_t n = 0; n < ex.labels.voxels(); ++n) {
        std::copy_n(m.begin() + static_cast<std::ptrdiff_t>(n * (Ku + 1)), Ku,
                    y.begin() + static_cast<std::ptrdiff_t>(n * Ku));
      }
      s.loss += dice_loss(y, ex.labels, K);
      s.modality.push_back(mean_foreground_dice(argmax_labels(fp.modality_probabilities(t)), ex.labels, K));
    }
    s.loss += loss_fused(fp.fused, ex.labels);
    s.fused = mean_foreground_dice(argmax_labels(fp.fused), ex.labels, K);
  });
  ValidationScores out;
  out.dice_modality.assign(static_cast<std::size_t>(T), 0.0);
  for (const auto& s : slots) {
    out.loss += s.loss;
    out.dice_fused += s.fused;
    for (std::size_t t = 0; t < s.modality.size(); ++t) out.dice_modality[t] += s.modality[t];
  }
  const double scale = 1.0 / static_cast<double>(examples.size());
  out.loss *= scale;
  out.dice_fused *= scale;
  for (auto& d : out.dice_modality) d *= scale;
  return out;
}

namespace {

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void write_training_log(std::ostream& out, std::span<const LogRow> rows,
                        std::span<const std::string> modalities) {
  out << "epoch,stage,train_loss,val_loss,val_dice_fused";
  for (const auto& m : modalities) out << ",val_dice_" << m;
  out << ",best_val_dice\n";
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.stage << ',' << format_value(r.train_loss) << ','
        << format_value(r.val_loss) << ',' << format_value(r.val_dice_fused);
    for (double d : r.val_dice_modality) out << ',' << format_value(d);
    out << ',' << (r.best_val_dice ? format_value(*r.best_val_dice) : std::string()) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Protocol

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kHeadStream = 0x4844;

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, int batch_size,
                                                   std::mt19937_64& rng) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < count; i += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(count, i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

void require_batch_shapes(std::span<const LabeledExample> data, const std::vector<std::size_t>& batch) {
  for (auto i : batch) {
    if (data[i].labels.width != data[batch.front()].labels.width ||
        data[i].labels.height != data[batch.front()].labels.height) {
      fail(ErrorCode::DimensionMismatch, "examples in one batch must share grid dimensions");
    }
  }
}

class Trainer {
 public:
  Trainer(const Model& initial, std::span<const LabeledExample> training,
          std::span<const LabeledExample> validation, const TrainingConfig& config)
      : config_(config),
        training_(training),
        validation_(validation),
        model_(initial),
        result_{initial, {}, {}, std::nullopt, false, {}},
        rng_(derive_seed(config.seed, kShuffleStream)) {}

  TrainingResult run() {
    try {
      if (config_.pretrain) pretrain();
      if (config_.train_fusion && !result_.diverged) joint_stage(2, config_.fusion_epochs, false);
      if (config_.finetune && !result_.diverged) joint_stage(3, config_.finetune_epochs, true);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFinite && e.code() != ErrorCode::TotalConflict) throw;
      mark_diverged(e.what());
    }
    if (!have_best_) result_.model = model_;
    return std::move(result_);
  }

 private:
  void mark_diverged(const std::string& why) {
    result_.diverged = true;
    result_.divergence = "epoch " + std::to_string(epoch_ + 1) + ": " + why;
  }

  // Returns true when the epoch improved the best validation score. Stage-1
  // epochs are logged but never selected.
  bool record(int stage, double train_loss, const ValidationScores& scores) {
    ++epoch_;
    const bool eligible = stage > 1;
    const bool improved = eligible && (!have_best_ || scores.dice_fused > result_.best.val_dice_fused);
    if (improved) {
      have_best_ = true;
      result_.best = BestRecord{epoch_, stage, scores.dice_fused};
      result_.model = model_;
    }
    result_.log.push_back(LogRow{epoch_, stage, train_loss, scores.loss, scores.dice_fused,
                                 scores.dice_modality, std::nullopt});
    if (have_best_) result_.log.back().best_val_dice = result_.best.val_dice_fused;
    return improved;
  }

  void pretrain() {
    const int T = model_.modalities();
    const int K = model_.classes();
    std::vector<SoftmaxHead> heads;
    std::vector<std::size_t> offsets;
    std::size_t total = 0;
    for (int t = 0; t < T; ++t) {
      heads.push_back(init_head(model_.extractor(t).feature_count(), K,
                                derive_seed(config_.seed, kHeadStream + static_cast<std::uint64_t>(t))));
      offsets.push_back(total);
      total += model_.extractor(t).parameter_count() + heads.back().weights.size() + heads.back().bias.size();
    }
    auto pack = [&] {
      std::vector<double> flat;
      flat.reserve(total);
      for (int t = 0; t < T; ++t) {
        const auto p = model_.extractor(t).parameters();
        flat.insert(flat.end(), p.begin(), p.end());
        const auto& h = heads[static_cast<std::size_t>(t)];
        flat.insert(flat.end(), h.weights.begin(), h.weights.end());
        flat.insert(flat.end(), h.bias.begin(), h.bias.end());
      }
      return flat;
    };
    auto unpack = [&](const std::vector<double>& flat) {
      for (int t = 0; t < T; ++t) {
        const auto tu = static_cast<std::size_t>(t);
        auto& h = heads[tu];
        const std::size_t P = model_.extractor(t).parameter_count();
        const double* at = flat.data() + offsets[tu];
        model_.extractor(t).set_parameters(std::span<const double>(at, P));
        std::copy_n(at + P, h.weights.size(), h.weights.begin());
        std::copy_n(at + P + h.weights.size(), h.bias.size(), h.bias.begin());
      }
    };

    std::vector<double> params = pack();
    OptimizerState state(total);
    for (int e = 0; e < config_.pretrain_epochs; ++e) {
      double epoch_loss = 0.0;
      for (const auto& batch : make_batches(training_.size(), config_.batch_size, rng_)) {
        require_batch_shapes(training_, batch);
        std::vector<std::vector<double>> grads(batch.size());
        std::vector<double> losses(batch.size(), 0.0);
        parallel_for(batch.size(), [&](std::size_t b) {
          const auto& ex = training_[batch[b]];
          grads[b].assign(total, 0.0);
          for (int t = 0; t < T; ++t) {
            const auto tu = static_cast<std::size_t>(t);
            const std::size_t P = model_.extractor(t).parameter_count();
            std::span<double> g(grads[b].data() + offsets[tu], P + heads[tu].weights.size() + heads[tu].bias.size());
            losses[b] += head_loss_and_gradient(model_.extractor(t), heads[tu], ex.images[tu], ex.labels,
                                                g.first(P), g.subspan(P));
          }
        });
        std::vector<double> grad(total, 0.0);
        double batch_loss = 0.0;
        for (std::size_t b = 0; b < batch.size(); ++b) {
          batch_loss += losses[b];
          for (std::size_t i = 0; i < total; ++i) grad[i] += grads[b][i];
        }
        if (!std::isfinite(batch_loss)) fail(ErrorCode::NonFinite, "non-finite pretraining loss");
        epoch_loss += batch_loss;
        for (auto& g : grad) g /= static_cast<double>(batch.size());
        adam_step(params, grad, state, config_.learning_rate);
        unpack(params);
      }
      auto scores = validate_model(model_, validation_);
      double val_ce = 0.0;
      for (int t = 0; t < T; ++t) {
        const auto tu = static_cast<std::size_t>(t);
        double dice = 0.0;
        for (const auto& ex : validation_) {
          val_ce += head_loss_and_gradient(model_.extractor(t), heads[tu], ex.images[tu], ex.labels, {}, {});
          dice += mean_foreground_dice(argmax_labels(head_probabilities(model_.extractor(t), heads[tu], ex.images[tu])),
                                       ex.labels, K);
        }
        scores.dice_modality[tu] = dice / static_cast<double>(validation_.size());
      }
      scores.loss = val_ce / static_cast<double>(validation_.size());
      record(1, epoch_loss / static_cast<double>(training_.size()), scores);
      result_.optimizer = state;
    }
  }

  void joint_stage(int stage, int max_epochs, bool train_extractors) {
    if (have_best_) model_ = result_.model;
    auto raw = pack_parameters(model_);
    const auto layout = ParameterLayout::of(model_);
    std::vector<std::uint8_t> mask(raw.size(), 1);
    if (!train_extractors) {
      for (const auto& block : layout.extractors) {
        std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(block.offset), block.size, std::uint8_t{0});
      }
    }
    OptimizerState state(raw.size());
    int since_improvement = 0;
    for (int e = 0; e < max_epochs; ++e) {
      double epoch_loss = 0.0;
      for (const auto& batch : make_batches(training_.size(), config_.batch_size, rng_)) {
        require_batch_shapes(training_, batch);
        std::vector<ModelGradient> grads(batch.size());
        std::vector<double> losses(batch.size(), 0.0);
        parallel_for(batch.size(), [&](std::size_t b) {
          grads[b] = ModelGradient::zeros(model_);
          losses[b] = loss_and_gradient(model_, training_[batch[b]], &grads[b]).total();
        });
        ModelGradient sum = ModelGradient::zeros(model_);
        double batch_loss = 0.0;
        for (std::size_t b = 0; b < batch.size(); ++b) {
          sum.add(grads[b]);
          batch_loss += losses[b];
        }
        if (!std::isfinite(batch_loss)) fail(ErrorCode::NonFinite, "non-finite training loss");
        epoch_loss += batch_loss;
        auto grad = packed_gradient(model_, sum);
        for (auto& g : grad) g /= static_cast<double>(batch.size());
        adam_step(raw, grad, state, config_.learning_rate, mask);
        unpack_parameters(raw, model_);
      }
      const auto scores = validate_model(model_, validation_);
      if (!std::isfinite(scores.loss)) fail(ErrorCode::NonFinite, "non-finite validation loss");
      const bool improved = record(stage, epoch_loss / static_cast<double>(training_.size()), scores);
      result_.optimizer = state;
      since_improvement = improved ? 0 : since_improvement + 1;
      if (since_improvement >= std::max(1, config_.patience)) break;
    }
  }

  const TrainingConfig& config_;
  std::span<const LabeledExample> training_;
  std::span<const LabeledExample> validation_;
  Model model_;
  TrainingResult result_;
  std::mt19937_64 rng_;
  int epoch_ = 0;
  bool have_best_ = false;
};

}  // namespace

TrainingResult train(const Model& initial, std::span<const LabeledExample> training,
                     std::span<const LabeledExample> validation, const TrainingConfig& config) {
  config.validate();
  if (training.empty()) fail(ErrorCode::InvalidArgument, "training split is empty");
  if (validation.empty()) fail(ErrorCode::InvalidArgument, "validation split is empty");
  for (const auto& ex : training) ex.validate(initial.modalities(), initial.classes());
  for (const auto& ex : validation) ex.validate(initial.modalities(), initial.classes());
  return Trainer(initial, training, validation, config).run();
}

}  // namespace evifuse
