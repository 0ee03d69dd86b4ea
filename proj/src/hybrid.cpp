#include "convo/hybrid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <tuple>

#include "convo/error.hpp"
#include "convo/stats.hpp"

namespace convo {
namespace {

constexpr double kRidge = 1e-8;
constexpr double kPivotTolerance = 1e-10;

// Total order on examples used to canonicalize the training fold.
bool canonical_less(const LabeledExample* a, const LabeledExample* b) {
  if (a->bot_id != b->bot_id) return a->bot_id < b->bot_id;
  for (std::size_t i = 0; i < kMetricCount; ++i) {
    const auto& fa = a->features.values[i];
    const auto& fb = b->features.values[i];
    if (fa.has_value() != fb.has_value()) return !fa.has_value();
    if (fa && *fa != *fb) return *fa < *fb;
  }
  return a->quality < b->quality;
}

// In-place Cholesky A = L L^T (lower triangle). Returns false when a pivot
// falls below `tolerance`.
bool cholesky(std::vector<double>& a, std::size_t p, double tolerance) {
  for (std::size_t j = 0; j < p; ++j) {
    double d = a[j * p + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * p + k] * a[j * p + k];
    if (d <= tolerance) return false;
    const double l = std::sqrt(d);
    a[j * p + j] = l;
    for (std::size_t i = j + 1; i < p; ++i) {
      double s = a[i * p + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * p + k] * a[j * p + k];
      a[i * p + j] = s / l;
    }
  }
  return true;
}

std::vector<double> cholesky_solve(const std::vector<double>& l, std::size_t p,
                                   std::vector<double> b) {
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < i; ++k) b[i] -= l[i * p + k] * b[k];
    b[i] /= l[i * p + i];
  }
  for (std::size_t i = p; i-- > 0;) {
    for (std::size_t k = i + 1; k < p; ++k) b[i] -= l[k * p + i] * b[k];
    b[i] /= l[i * p + i];
  }
  return b;
}

std::size_t distinct_bots(std::span<const LabeledExample> examples) {
  std::set<BotId> bots;
  for (const auto& e : examples) bots.insert(e.bot_id);
  return bots.size();
}

}  // namespace

HybridModel fit_hybrid(std::span<const LabeledExample> examples, const BotId& held_out) {
  for (const auto& e : examples) {
    if (!(e.quality >= 1.0 && e.quality <= 7.0)) {
      throw Error(ErrorCode::OutOfRange, "quality label " + std::to_string(e.quality) +
                                             " outside [1, 7] for bot " + e.bot_id.str());
    }
  }
  if (distinct_bots(examples) < 2) {
    throw Error(ErrorCode::InsufficientData, "hybrid fitting needs at least two distinct bots");
  }

  std::vector<const LabeledExample*> train;
  for (const auto& e : examples) {
    if (e.bot_id != held_out) train.push_back(&e);
  }
  std::sort(train.begin(), train.end(), canonical_less);
  const std::size_t n = train.size();

  HybridModel model;
  model.held_out_bot = held_out;

  std::vector<std::size_t> features;
  for (std::size_t f = 0; f < kMetricCount; ++f) {
    double sum = 0.0;
    std::size_t observed = 0;
    for (const auto* e : train) {
      if (const auto& v = e->features.values[f]) {
        sum += *v;
        ++observed;
      }
    }
    if (observed == 0) continue;
    const double fill = sum / static_cast<double>(observed);
    model.imputation[f] = fill;

    double mean = 0.0;
    for (const auto* e : train) mean += e->features.values[f].value_or(fill);
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (const auto* e : train) {
      const double d = e->features.values[f].value_or(fill) - mean;
      ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    // Sums of identical values can leave rounding residue above zero.
    if (sd <= 1e-12 * std::max(1.0, std::abs(mean))) continue;
    model.mean[f] = mean;
    model.stddev[f] = sd;
    model.retained[f] = true;
    features.push_back(f);
  }

  const std::size_t p = features.size();
  if (n < p + 1) {
    throw Error(ErrorCode::InsufficientData, "hybrid fitting needs " + std::to_string(p + 1) +
                                                 " training examples, found " + std::to_string(n));
  }

  double y_mean = 0.0;
  for (const auto* e : train) y_mean += e->quality;
  y_mean /= static_cast<double>(n);
  model.intercept = y_mean;
  if (p == 0) return model;

  std::vector<double> z(n * p);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < p; ++c) {
      const auto f = features[c];
      const double v = train[r]->features.values[f].value_or(model.imputation[f]);
      z[r * p + c] = (v - model.mean[f]) / model.stddev[f];
    }
  }
  std::vector<double> gram(p * p, 0.0);
  std::vector<double> rhs(p, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double y = train[r]->quality - y_mean;
    for (std::size_t i = 0; i < p; ++i) {
      rhs[i] += z[r * p + i] * y;
      for (std::size_t j = 0; j <= i; ++j) gram[i * p + j] += z[r * p + i] * z[r * p + j];
    }
  }
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = i + 1; j < p; ++j) gram[i * p + j] = gram[j * p + i];
  }

  double max_diag = 0.0;
  for (std::size_t i = 0; i < p; ++i) max_diag = std::max(max_diag, gram[i * p + i]);
  auto factor = gram;
  if (!cholesky(factor, p, kPivotTolerance * max_diag)) {
    model.singular = true;
    factor = gram;
    for (std::size_t i = 0; i < p; ++i) factor[i * p + i] += kRidge;
    if (!cholesky(factor, p, 0.0)) {
      throw Error(ErrorCode::InsufficientData, "design matrix is not positive semidefinite");
    }
  }
  const auto lambda = cholesky_solve(factor, p, rhs);
  for (std::size_t c = 0; c < p; ++c) model.lambdas[features[c]] = lambda[c];
  return model;
}

double predict_quality(const HybridModel& model, const MetricVector& features) {
  double total = model.intercept;
  for (std::size_t f = 0; f < kMetricCount; ++f) {
    if (!model.retained[f]) continue;
    const double v = features.values[f].value_or(model.imputation[f]);
    total += model.lambdas[f] * ((v - model.mean[f]) / model.stddev[f]);
  }
  return total;
}

RawCoefficients raw_coefficients(const HybridModel& model) {
  RawCoefficients out;
  out.intercept = model.intercept;
  for (std::size_t f = 0; f < kMetricCount; ++f) {
    if (!model.retained[f]) continue;
    out.slopes[f] = model.lambdas[f] / model.stddev[f];
    out.intercept -= out.slopes[f] * model.mean[f];
  }
  return out;
}

LeaveBotOutReport leave_bot_out_report(std::span<const LabeledExample> examples, double level) {
  std::set<BotId> bots;
  for (const auto& e : examples) bots.insert(e.bot_id);
  if (bots.size() < 3) {
    throw Error(ErrorCode::InsufficientData, "leave-bot-out report needs at least three bots");
  }

  LeaveBotOutReport report;
  for (const auto& bot : bots) report.models.push_back(fit_hybrid(examples, bot));

  const double k = static_cast<double>(report.models.size());
  const double t = t_critical(level, report.models.size() - 1);
  for (std::size_t f = 0; f < kMetricCount; ++f) {
    double mean = 0.0;
    for (const auto& m : report.models) mean += m.lambdas[f];
    mean /= k;
    double ss = 0.0;
    for (const auto& m : report.models) ss += (m.lambdas[f] - mean) * (m.lambdas[f] - mean);
    const double half = t * std::sqrt((k - 1.0) / k * ss);
    report.coefficients[f] = {mean, mean - half, mean + half};
  }
  return report;
}

nlohmann::json to_json(const HybridModel& model) {
  nlohmann::json lambdas = nlohmann::json::object();
  nlohmann::json scaler = nlohmann::json::object();
  nlohmann::json imputation = nlohmann::json::object();
  nlohmann::json dropped = nlohmann::json::array();
  for (std::size_t f = 0; f < kMetricCount; ++f) {
    const std::string name(kMetricNames[f]);
    lambdas[name] = model.lambdas[f];
    imputation[name] = model.imputation[f];
    if (model.retained[f]) {
      scaler[name] = {{"mean", model.mean[f]}, {"std", model.stddev[f]}};
    } else {
      dropped.push_back(name);
    }
  }
  return {{"lambdas", lambdas},
          {"intercept", model.intercept},
          {"scaler", scaler},
          {"imputation", imputation},
          {"dropped", dropped},
          {"held_out_bot", model.held_out_bot.str()},
          {"singular", model.singular}};
}

HybridModel model_from_json(const nlohmann::json& j) {
  HybridModel model;
  try {
    model.intercept = j.at("intercept").get<double>();
    model.held_out_bot = BotId::parse(j.at("held_out_bot").get<std::string>());
    model.singular = j.value("singular", false);
    for (std::size_t f = 0; f < kMetricCount; ++f) {
      const std::string name(kMetricNames[f]);
      model.lambdas[f] = j.at("lambdas").value(name, 0.0);
      model.imputation[f] = j.at("imputation").value(name, 0.0);
      const auto& scaler = j.at("scaler");
      if (scaler.contains(name)) {
        model.mean[f] = scaler.at(name).at("mean").get<double>();
        model.stddev[f] = scaler.at(name).at("std").get<double>();
        if (!(model.stddev[f] > 0.0)) {
          throw Error(ErrorCode::ParseError, "hybrid model: non-positive std for " + name);
        }
        model.retained[f] = true;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("hybrid model: ") + e.what());
  }
  return model;
}

nlohmann::json to_json(const LeaveBotOutReport& report) {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : report.models) models.push_back(to_json(m));
  nlohmann::json coefficients = nlohmann::json::object();
  for (std::size_t f = 0; f < kMetricCount; ++f) {
    const auto& c = report.coefficients[f];
    coefficients[std::string(kMetricNames[f])] = {
        {"mean", c.mean}, {"ci_low", c.ci_low}, {"ci_high", c.ci_high}};
  }
  return {{"models", models}, {"coefficients", coefficients}};
}

std::vector<LabeledExample> label_examples(std::span<const Conversation> conversations,
                                           std::span<const MetricVector> features,
                                           const std::map<std::string, double>& quality) {
  if (conversations.size() != features.size()) {
    throw Error(ErrorCode::LengthMismatch, "metric rows do not match conversations");
  }
  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < conversations.size(); ++i) {
    const auto it = quality.find(conversations[i].id());
    if (it == quality.end()) continue;
    out.push_back({conversations[i].bot_id(), features[i], it->second});
  }
  return out;
}

}  // namespace convo
