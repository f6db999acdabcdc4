#include "iscf/pipeline.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "iscf/autodiff.hpp"
#include "iscf/errors.hpp"
#include "iscf/ops.hpp"
#include "iscf/rng.hpp"

namespace iscf {

namespace fs = std::filesystem;

namespace {

double ratio(double num, double den) { return den == 0.0 ? 1.0 : num / den; }

std::string shortest(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

}  // namespace

Tensor bce_loss(const Tensor& logits, const Tensor& target) { return ops::bce_with_logits(logits, target); }

void adam_step(ParamStore& params, const std::vector<Tensor>& grads, AdamState& state, const AdamConfig& cfg) {
  const auto& entries = params.entries();
  if (grads.size() != entries.size()) {
    throw CountMismatch("adam: " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(entries.size()) + " parameters");
  }
  if (state.m.empty()) {
    for (const auto& p : entries) {
      state.m.emplace_back(p.value.numel(), 0.0);
      state.v.emplace_back(p.value.numel(), 0.0);
    }
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!entries[i].trainable) continue;
    if (grads[i].empty()) throw MissingGradient("no gradient for parameter '" + entries[i].name + "'");
    if (grads[i].shape() != entries[i].value.shape()) {
      throw ShapeMismatch("gradient of '" + entries[i].name + "' has shape " + shape_to_string(grads[i].shape()));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!entries[i].trainable) continue;
    const Tensor& value = entries[i].value;
    const Tensor& g = grads[i];
    Buffer& m = state.m[i];
    Buffer& v = state.v[i];
    Buffer next(value.numel());
    for (std::size_t k = 0; k < next.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1, v_hat = v[k] / c2;
      next[k] = value[k] - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
    params.set_value(i, Tensor(value.shape(), std::move(next)));
  }
}

std::vector<Tensor> gradients_for(const ParamStore& tracked, const Gradients& grads) {
  std::vector<Tensor> out;
  out.reserve(tracked.size());
  for (const auto& p : tracked.entries()) out.push_back(grads.has(p.value) ? grads.of(p.value) : Tensor());
  return out;
}

Confusion confusion(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeMismatch("confusion: prediction " + shape_to_string(pred.shape()) + " vs ground truth " +
                        shape_to_string(gt.shape()));
  }
  Confusion c;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const bool p = pred[i] != 0.0, g = gt[i] != 0.0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

Metrics metrics(const Confusion& c) {
  const auto tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const auto fn = static_cast<double>(c.fn), tn = static_cast<double>(c.tn);
  return {ratio(2 * tp, 2 * tp + fp + fn), ratio(tp, tp + fn), ratio(tn, tn + fp),
          ratio(tp + tn, static_cast<double>(c.total()))};
}

nlohmann::json to_json(const MetricsReport& r) {
  auto m = [](const Metrics& x) { return nlohmann::json{{"dsc", x.dsc}, {"se", x.se}, {"sp", x.sp}, {"acc", x.acc}}; };
  auto c = [](const Confusion& x) { return nlohmann::json{{"tp", x.tp}, {"fp", x.fp}, {"fn", x.fn}, {"tn", x.tn}}; };
  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t i = 0; i < r.per_sample.size(); ++i) {
    samples.push_back({{"id", r.ids[i]}, {"counts", c(r.per_sample[i])}, {"metrics", m(metrics(r.per_sample[i]))}});
  }
  return {{"threshold", r.threshold},
          {"averaging", "micro: counts pooled over all pixels; per_sample_mean: mean of per-image metrics"},
          {"zero_over_zero", 1.0},
          {"counts", c(r.total)},
          {"micro", m(r.micro)},
          {"per_sample_mean", m(r.per_sample_mean)},
          {"samples", samples}};
}

Tensor binarize(const Tensor& logits, double threshold) {
  Buffer b(logits.numel());
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double z = logits[i];
    const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    b[i] = p >= threshold ? 1.0 : 0.0;
  }
  return Tensor(logits.shape(), std::move(b));
}

namespace {

Tensor stack(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices, bool masks) {
  if (indices.empty()) throw CountMismatch("cannot stack an empty batch");
  const Tensor& first = masks ? samples[indices[0]].mask : samples[indices[0]].image;
  Shape shape = first.shape();
  Buffer b;
  b.reserve(first.numel() * indices.size());
  for (std::size_t i : indices) {
    const Tensor& t = masks ? samples[i].mask : samples[i].image;
    if (t.shape() != shape) throw ExtentMismatch("sample '" + samples[i].id + "' has extents " + shape_to_string(t.shape()));
    b.insert(b.end(), t.data().begin(), t.data().end());
  }
  shape.insert(shape.begin(), static_cast<std::int64_t>(indices.size()));
  return Tensor(std::move(shape), std::move(b));
}

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> r(end - begin);
  std::iota(r.begin(), r.end(), begin);
  return r;
}

}  // namespace

Tensor stack_images(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices) {
  return stack(samples, indices, false);
}

Tensor stack_masks(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices) {
  return stack(samples, indices, true);
}

Tensor predict(const ParamStore& params, const ModelConfig& cfg, const std::vector<Sample>& samples, int batch_size) {
  std::vector<Tensor> parts;
  for (std::size_t i = 0; i < samples.size(); i += batch_size) {
    const auto idx = range(i, std::min(samples.size(), i + batch_size));
    parts.push_back(forward(stack_images(samples, idx), params, cfg).logits);
  }
  if (parts.empty()) return Tensor();
  return parts.size() == 1 ? parts[0] : ops::concat(parts, 0);
}

MetricsReport summarize(std::vector<Confusion> per_sample, std::vector<std::string> ids, double threshold) {
  if (ids.size() != per_sample.size()) throw CountMismatch("summarize: ids and counts differ in length");
  MetricsReport r;
  r.threshold = threshold;
  if (per_sample.empty()) return r;
  Metrics sum{0, 0, 0, 0};
  for (const Confusion& c : per_sample) {
    const Metrics m = metrics(c);
    sum.dsc += m.dsc, sum.se += m.se, sum.sp += m.sp, sum.acc += m.acc;
    r.total += c;
  }
  const double n = static_cast<double>(per_sample.size());
  r.micro = metrics(r.total);
  r.per_sample_mean = {sum.dsc / n, sum.se / n, sum.sp / n, sum.acc / n};
  r.per_sample = std::move(per_sample);
  r.ids = std::move(ids);
  return r;
}

MetricsReport evaluate(const ParamStore& params, const ModelConfig& cfg, const std::vector<Sample>& samples,
                       double threshold, int batch_size) {
  if (samples.empty()) return summarize({}, {}, threshold);
  const Tensor pred = binarize(predict(params, cfg, samples, batch_size), threshold);
  const std::int64_t pixels = cfg.input_h * cfg.input_w;
  std::vector<Confusion> counts;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Tensor p = ops::slice(pred, 0, static_cast<std::int64_t>(i), 1).reshaped({1, cfg.input_h, cfg.input_w});
    if (static_cast<std::int64_t>(samples[i].mask.numel()) != pixels) {
      throw ExtentMismatch("sample '" + samples[i].id + "' does not match the model input");
    }
    counts.push_back(confusion(p, samples[i].mask));
    ids.push_back(samples[i].id);
  }
  return summarize(std::move(counts), std::move(ids), threshold);
}

void TrainConfig::validate() const {
  if (epochs < 0) throw InvalidConfig("epochs must be >= 0");
  if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (!(lr > 0)) throw InvalidConfig("lr must be > 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw InvalidConfig("adam betas must lie in [0,1)");
  if (!(eps > 0)) throw InvalidConfig("eps must be > 0");
  if (!(threshold > 0 && threshold < 1)) throw InvalidConfig("threshold must lie in (0,1)");
  if (checkpoint_every < 0) throw InvalidConfig("checkpoint_every must be >= 0");
  if (!(val_fraction >= 0 && val_fraction < 1)) throw InvalidConfig("val_fraction must lie in [0,1)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},       {"batch_size", c.batch_size}, {"lr", c.lr},
       {"beta1", c.beta1},         {"beta2", c.beta2},           {"eps", c.eps},
       {"seed", c.seed},           {"threshold", c.threshold},   {"checkpoint_every", c.checkpoint_every},
       {"val_fraction", c.val_fraction}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw InvalidConfig("train config must be a JSON object");
  static const std::set<std::string> known = {"epochs", "batch_size", "lr",        "beta1",            "beta2",
                                              "eps",    "seed",       "threshold", "checkpoint_every", "val_fraction"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw InvalidConfig("unknown train config key '" + key + "'");
  }
  auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception& e) {
      throw InvalidConfig(std::string("train config key '") + key + "': " + e.what());
    }
  };
  read("epochs", c.epochs);
  read("batch_size", c.batch_size);
  read("lr", c.lr);
  read("beta1", c.beta1);
  read("beta2", c.beta2);
  read("eps", c.eps);
  read("seed", c.seed);
  read("threshold", c.threshold);
  read("checkpoint_every", c.checkpoint_every);
  read("val_fraction", c.val_fraction);
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_train_val(std::vector<Sample> samples, double val_fraction,
                                                                   std::uint64_t seed) {
  Rng rng(seed);
  rng.shuffle(samples);
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(samples.size())));
  std::vector<Sample> val(samples.end() - static_cast<std::ptrdiff_t>(n_val), samples.end());
  samples.resize(samples.size() - n_val);
  return {std::move(samples), std::move(val)};
}

std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::ostringstream os;
  os << "epoch,train_loss,val_dsc,val_se,val_sp,val_acc\n";
  for (const auto& r : rows) {
    os << r.epoch << ',' << shortest(r.train_loss) << ',' << shortest(r.val_dsc) << ',' << shortest(r.val_se) << ','
       << shortest(r.val_sp) << ',' << shortest(r.val_acc) << '\n';
  }
  return os.str();
}

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainOptions& options) {
  cfg.validate();
  if (train_set.empty()) throw InvalidConfig("training set is empty");
  if (!options.out_dir.empty()) fs::create_directories(options.out_dir);

  TrainResult result;
  ParamStore params = build(model_cfg);
  AdamState adam;
  Rng order_rng(cfg.seed);
  std::vector<std::size_t> order = range(0, train_set.size());

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0;
    int step = 0;
    for (std::size_t i = 0; i < order.size(); i += cfg.batch_size, ++step) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(i),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + cfg.batch_size)));
      Tape tape;
      TapeScope scope(tape);
      const ParamStore tracked = params.tracked(tape);
      const Tensor loss = bce_loss(forward(stack_images(train_set, idx), tracked, model_cfg).logits,
                                   stack_masks(train_set, idx));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NonFiniteLoss("loss is " + shortest(value) + " at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step) + " (batch starting at sample '" + train_set[idx[0]].id + "')");
      }
      adam_step(params, gradients_for(tracked, tape.backward(loss)), adam, cfg.adam());
      round_to_float(params);
      result.step_losses.push_back(value);
      loss_sum += value * static_cast<double>(idx.size());
      if (options.on_step) options.on_step(epoch, step, value);
    }

    const MetricsReport val = evaluate(params, model_cfg, val_set, cfg.threshold, cfg.batch_size);
    const HistoryRow row{epoch, loss_sum / static_cast<double>(train_set.size()), val.micro.dsc, val.micro.se,
                         val.micro.sp, val.micro.acc};
    result.history.push_back(row);
    if (row.val_dsc > result.best_val_dsc) {
      result.best_val_dsc = row.val_dsc;
      result.best_epoch = epoch;
      result.best_params = params;
      if (!options.out_dir.empty()) save_checkpoint(params, model_cfg, options.out_dir / "best.ckpt");
    }
    if (!options.out_dir.empty()) {
      write_text(options.out_dir / "history.csv", history_csv(result.history));
      if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
        save_checkpoint(params, model_cfg, options.out_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"));
      }
    }
    if (options.on_epoch) options.on_epoch(row);
  }

  if (result.history.empty()) result.best_params = params;
  result.final_params = params;
  if (!options.out_dir.empty()) {
    write_text(options.out_dir / "history.csv", history_csv(result.history));
    save_checkpoint(params, model_cfg, options.out_dir / "final.ckpt");
  }
  return result;
}

}  // namespace iscf
