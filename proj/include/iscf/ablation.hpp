#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "iscf/pipeline.hpp"

namespace iscf {

/// "1", "12", "123" → {1}, {1,2}, {1,2,3}; "0" or "" → no fusion.
StageSet parse_scale_setting(const std::string& setting);
std::string scale_setting_name(const StageSet& stages);

/// DSC reported for the same setting on ISIC 2018 (ablation table of the
/// reference work), for context only.
std::optional<double> reference_dsc(const StageSet& stages);

struct AblationRow {
  std::string setting;
  StageSet stages;
  std::int64_t input_hw = 0;
  Metrics val;  // micro-averaged, best-validation checkpoint
  int best_epoch = 0;
  std::int64_t params = 0;
  std::optional<double> reference;
};

/// Trains every setting from scratch with identical seeds and data.
std::vector<AblationRow> ablate(const ModelConfig& base, const TrainConfig& train_cfg,
                                const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                                const std::vector<StageSet>& settings,
                                const std::function<void(const AblationRow&)>& on_row = {});

/// setting,dsc,se,sp,acc,params,best_epoch,reference_dsc
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace iscf
