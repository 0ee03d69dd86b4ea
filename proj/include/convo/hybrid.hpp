#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "convo/domain.hpp"
#include "convo/metrics.hpp"

namespace convo {

struct LabeledExample {
  BotId bot_id;
  MetricVector features;
  double quality{0.0};  // mean annotator quality, in [1, 7]
};

/// M_H = sum_i lambda_i * z_i + M0, where z_i is feature i after imputation
/// and z-scoring with the training-fold statistics.
struct HybridModel {
  std::array<double, kMetricCount> lambdas{};     // 0 for dropped features
  double intercept{0.0};                          // M0
  std::array<double, kMetricCount> mean{};        // scaler
  std::array<double, kMetricCount> stddev{};      // scaler; > 0 for retained features
  std::array<double, kMetricCount> imputation{};  // training-fold mean of observed values
  std::array<bool, kMetricCount> retained{};
  BotId held_out_bot;
  bool singular{false};  // the design was rank-deficient and a ridge was added

  friend bool operator==(const HybridModel&, const HybridModel&) = default;
};

/// Least squares on every example whose bot differs from `held_out`.
///
/// Training rows are put in a canonical order first, so the result does not
/// depend on the input order. Features never observed in the fold, or with
/// zero variance after imputation, are dropped. A rank-deficient design adds
/// a 1e-8 ridge and sets `singular`.
///
/// Throws InsufficientData with fewer than two distinct bots or fewer than
/// (retained features + 1) training rows; OutOfRange for a label outside [1, 7].
HybridModel fit_hybrid(std::span<const LabeledExample> examples, const BotId& held_out);

double predict_quality(const HybridModel& model, const MetricVector& features);

/// The model expressed on raw (unscaled) features: M_H = sum_i b_i * f_i + b0
/// for observed features.
struct RawCoefficients {
  std::array<double, kMetricCount> slopes{};
  double intercept{0.0};
};
RawCoefficients raw_coefficients(const HybridModel& model);

struct CoefficientSummary {
  double mean{0.0};
  double ci_low{0.0};
  double ci_high{0.0};
};

struct LeaveBotOutReport {
  std::vector<HybridModel> models;  // one per bot, ordered by held_out_bot
  std::array<CoefficientSummary, kMetricCount> coefficients{};
};

/// One fold per distinct bot. Each coefficient's interval is the fold mean
/// plus or minus t(level, k-1) times the jackknife standard error
/// sqrt((k-1)/k * sum (lambda_j - mean)^2), which always contains every fold
/// value. Throws InsufficientData with fewer than three bots.
LeaveBotOutReport leave_bot_out_report(std::span<const LabeledExample> examples,
                                       double level = 0.9);

nlohmann::json to_json(const HybridModel& model);
HybridModel model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LeaveBotOutReport& report);

/// Joins metric rows to quality labels by conversation id. Conversations
/// without ratings are skipped.
std::vector<LabeledExample> label_examples(std::span<const Conversation> conversations,
                                           std::span<const MetricVector> features,
                                           const std::map<std::string, double>& quality);

}  // namespace convo
