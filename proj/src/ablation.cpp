#include "iscf/ablation.hpp"

#include <charconv>
#include <sstream>

#include "iscf/errors.hpp"

namespace iscf {

StageSet parse_scale_setting(const std::string& setting) {
  StageSet stages;
  if (setting == "0" || setting.empty()) return stages;
  for (char c : setting) {
    if (c < '1' || c > '3') throw InvalidConfig("scale setting '" + setting + "' may only contain 1, 2, 3");
    stages.push_back(c - '0');
  }
  return normalize_stages(stages);
}

std::string scale_setting_name(const StageSet& stages) {
  if (stages.empty()) return "0";
  std::string s;
  for (int st : stages) s += static_cast<char>('0' + st);
  return s;
}

std::optional<double> reference_dsc(const StageSet& stages) {
  if (stages == StageSet{1}) return 0.9025;
  if (stages == StageSet{1, 2}) return 0.9065;
  if (stages == StageSet{1, 2, 3}) return 0.9136;
  return std::nullopt;
}

std::vector<AblationRow> ablate(const ModelConfig& base, const TrainConfig& train_cfg,
                                const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                                const std::vector<StageSet>& settings,
                                const std::function<void(const AblationRow&)>& on_row) {
  std::vector<AblationRow> rows;
  for (const StageSet& raw : settings) {
    ModelConfig cfg = base;
    cfg.iscf_stages = normalize_stages(raw);
    const TrainResult result = train(cfg, train_cfg, train_set, val_set);
    AblationRow row;
    row.stages = cfg.iscf_stages;
    row.setting = scale_setting_name(row.stages);
    row.input_hw = cfg.input_h;
    row.val = evaluate(result.best_params, cfg, val_set, train_cfg.threshold, train_cfg.batch_size).micro;
    row.best_epoch = result.best_epoch;
    row.params = param_count(result.best_params);
    row.reference = reference_dsc(row.stages);
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  auto num = [](double v) {
    char buf[32];
    return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
  };
  std::ostringstream os;
  os << "setting,dsc,se,sp,acc,params,best_epoch,reference_dsc\n";
  for (const auto& r : rows) {
    os << r.setting << ',' << num(r.val.dsc) << ',' << num(r.val.se) << ',' << num(r.val.sp) << ','
       << num(r.val.acc) << ',' << r.params << ',' << r.best_epoch << ','
       << (r.reference ? num(*r.reference) : std::string()) << '\n';
  }
  return os.str();
}

}  // namespace iscf
