#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "iscf/data.hpp"
#include "iscf/model.hpp"
#include "iscf/params.hpp"

namespace iscf {

class Gradients;

/// Mean of max(z,0) − z·t + log(1+e^−|z|).
Tensor bce_loss(const Tensor& logits, const Tensor& target);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Buffer> m;
  std::vector<Buffer> v;
  std::int64_t step = 0;
};

/// Bias-corrected Adam. `grads` is aligned with params.entries(); an empty
/// tensor marks a parameter the loss never reached (MissingGradient).
void adam_step(ParamStore& params, const std::vector<Tensor>& grads, AdamState& state, const AdamConfig& cfg);

/// Gradients of every entry of a tracked store; empty where the loss did not reach it.
std::vector<Tensor> gradients_for(const ParamStore& tracked, const Gradients& grads);

struct Confusion {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  Confusion& operator+=(const Confusion& o) {
    tp += o.tp, fp += o.fp, fn += o.fn, tn += o.tn;
    return *this;
  }
  bool operator==(const Confusion&) const = default;
};

/// Pixel counts; non-zero values are positive.
Confusion confusion(const Tensor& pred, const Tensor& gt);

struct Metrics {
  double dsc = 1, se = 1, sp = 1, acc = 1;
};

/// DSC = 2TP/(2TP+FP+FN), SE = TP/(TP+FN), SP = TN/(TN+FP), ACC = (TP+TN)/N.
/// Any 0/0 ratio is 1: agreeing on an empty class is not an error.
Metrics metrics(const Confusion& c);

struct MetricsReport {
  Confusion total;         // pooled over all pixels of all samples
  Metrics micro;           // metrics(total)
  Metrics per_sample_mean; // mean of per-sample metrics
  std::vector<std::string> ids;
  std::vector<Confusion> per_sample;
  double threshold = 0.5;
};

nlohmann::json to_json(const MetricsReport& r);

/// Pools per-sample counts (micro) and averages per-sample metrics.
MetricsReport summarize(std::vector<Confusion> per_sample, std::vector<std::string> ids, double threshold);

/// sigmoid(z) ≥ threshold, as {0,1}.
Tensor binarize(const Tensor& logits, double threshold);

Tensor stack_images(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices);
Tensor stack_masks(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices);

/// Logits [n,1,H,W] for every sample, batched.
Tensor predict(const ParamStore& params, const ModelConfig& cfg, const std::vector<Sample>& samples,
               int batch_size = 8);

MetricsReport evaluate(const ParamStore& params, const ModelConfig& cfg, const std::vector<Sample>& samples,
                       double threshold = 0.5, int batch_size = 8);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 8;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  /// Extra epoch_<k>.ckpt every k epochs; 0 keeps only best and final.
  int checkpoint_every = 0;
  /// Share of a loaded dataset held out for validation.
  double val_fraction = 0.2;

  void validate() const;
  AdamConfig adam() const { return {lr, beta1, beta2, eps}; }
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

/// Seeded shuffle, then the last round(fraction·n) samples form the validation split.
std::pair<std::vector<Sample>, std::vector<Sample>> split_train_val(std::vector<Sample> samples, double val_fraction,
                                                                   std::uint64_t seed);

struct HistoryRow {
  int epoch = 0;
  double train_loss = 0;
  double val_dsc = 0, val_se = 0, val_sp = 0, val_acc = 0;
};

std::string history_csv(const std::vector<HistoryRow>& rows);

struct TrainOptions {
  /// When set: history.csv, best.ckpt, final.ckpt and cadence checkpoints go here.
  std::filesystem::path out_dir;
  std::function<void(const HistoryRow&)> on_epoch;
  std::function<void(int epoch, int step, double loss)> on_step;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  std::vector<double> step_losses;
  ParamStore best_params;
  ParamStore final_params;
  int best_epoch = 0;
  double best_val_dsc = -1;
};

/// Adam on mean BCE. Aborts with NonFiniteLoss on the first non-finite loss.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainOptions& options = {});

}  // namespace iscf
