#include "convo/stats.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <boost/math/distributions/students_t.hpp>

#include "convo/error.hpp"
#include "convo/random.hpp"

namespace convo {
namespace {

void check_pair(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw Error(ErrorCode::LengthMismatch, "series have " + std::to_string(x.size()) + " and " +
                                               std::to_string(y.size()) + " values");
  }
  if (x.size() < 3) throw Error(ErrorCode::InsufficientData, "correlation needs at least 3 pairs");
  const auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double e) { return e == v.front(); });
  };
  if (constant(x) || constant(y)) throw Error(ErrorCode::ZeroVariance, "series is constant");
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Pearson without validation; callers have already checked the inputs.
double pearson_unchecked(std::span<const double> x, std::span<const double> y) {
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double kendall_unchecked(std::span<const double> x, std::span<const double> y) {
  // O(n^2) pair enumeration; the inputs here are bot- or conversation-level.
  double concordant_minus_discordant = 0.0;
  double untied_x = 0.0;
  double untied_y = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx != 0.0) untied_x += 1.0;
      if (dy != 0.0) untied_y += 1.0;
      const double s = dx * dy;
      if (s > 0.0) concordant_minus_discordant += 1.0;
      if (s < 0.0) concordant_minus_discordant -= 1.0;
    }
  }
  if (untied_x == 0.0 || untied_y == 0.0) return 0.0;
  return concordant_minus_discordant / std::sqrt(untied_x * untied_y);
}

double statistic(CorrelationMethod method, std::span<const double> x, std::span<const double> y) {
  switch (method) {
    case CorrelationMethod::Pearson:
      return pearson_unchecked(x, y);
    case CorrelationMethod::Spearman: {
      const auto rx = average_ranks(x);
      const auto ry = average_ranks(y);
      return pearson_unchecked(rx, ry);
    }
    case CorrelationMethod::Kendall:
      return kendall_unchecked(x, y);
  }
  return 0.0;
}

}  // namespace

std::string_view to_string(CorrelationMethod m) {
  switch (m) {
    case CorrelationMethod::Pearson: return "pearson";
    case CorrelationMethod::Spearman: return "spearman";
    case CorrelationMethod::Kendall: return "kendall";
  }
  return "pearson";
}

CorrelationMethod parse_correlation_method(std::string_view text) {
  if (text == "pearson") return CorrelationMethod::Pearson;
  if (text == "spearman") return CorrelationMethod::Spearman;
  if (text == "kendall") return CorrelationMethod::Kendall;
  throw Error(ErrorCode::InvalidArgument, "unknown correlation method '" + std::string(text) + "'");
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  return pearson_unchecked(x, y);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  return statistic(CorrelationMethod::Spearman, x, y);
}

double kendall(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  return kendall_unchecked(x, y);
}

double correlation(CorrelationMethod method, std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  return statistic(method, x, y);
}

Correlation correlation_test(CorrelationMethod method, std::span<const double> x,
                             std::span<const double> y, std::size_t permutations,
                             std::uint64_t seed) {
  check_pair(x, y);
  Correlation out;
  out.r = statistic(method, x, y);
  if (permutations == 0) return out;

  // Ranks are invariant under permuting y, so Spearman permutes ranks once.
  std::vector<double> xs(x.begin(), x.end());
  std::vector<double> ys(y.begin(), y.end());
  CorrelationMethod inner = method;
  if (method == CorrelationMethod::Spearman) {
    xs = average_ranks(x);
    ys = average_ranks(y);
    inner = CorrelationMethod::Pearson;
  }
  Rng rng(seed);
  const double threshold = std::abs(out.r) - 1e-12;
  std::size_t extreme = 0;
  for (std::size_t i = 0; i < permutations; ++i) {
    shuffle(ys.begin(), ys.end(), rng);
    if (std::abs(statistic(inner, xs, ys)) >= threshold) ++extreme;
  }
  out.p = static_cast<double>(extreme + 1) / static_cast<double>(permutations + 1);
  return out;
}

Correlation pearson(std::span<const double> x, std::span<const double> y, std::size_t permutations,
                    std::uint64_t seed) {
  return correlation_test(CorrelationMethod::Pearson, x, y, permutations, seed);
}

double cohen_kappa(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::LengthMismatch, "labelings have " + std::to_string(a.size()) + " and " +
                                               std::to_string(b.size()) + " items");
  }
  if (a.empty()) throw Error(ErrorCode::InsufficientData, "cohen_kappa of empty labelings");
  const double n = static_cast<double>(a.size());
  std::map<std::string, std::pair<double, double>> marginals;
  double agree = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    marginals[a[i]].first += 1.0;
    marginals[b[i]].second += 1.0;
    if (a[i] == b[i]) agree += 1.0;
  }
  const double p_o = agree / n;
  double p_e = 0.0;
  for (const auto& [label, counts] : marginals) p_e += (counts.first / n) * (counts.second / n);
  if (p_e >= 1.0) return 1.0;  // a single shared label: a == b
  return (p_o - p_e) / (1.0 - p_e);
}

double t_critical(double level, std::size_t degrees_of_freedom) {
  if (!(level > 0.0 && level < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "confidence level must lie in (0, 1)");
  }
  if (degrees_of_freedom == 0) throw Error(ErrorCode::InsufficientData, "t quantile with 0 df");
  const boost::math::students_t dist(static_cast<double>(degrees_of_freedom));
  return boost::math::quantile(dist, 0.5 + level / 2.0);
}

std::optional<Interval> mean_interval(std::span<const double> values, double level) {
  if (values.size() < 2) return std::nullopt;
  const double n = static_cast<double>(values.size());
  const double m = mean_of(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  const double se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  const double half = t_critical(level, values.size() - 1) * se;
  return Interval{m, m - half, m + half};
}

std::vector<NormalizedRating> normalize_ratings(std::span<const RatingRecord> ratings,
                                                std::size_t min_count) {
  std::unordered_map<std::string, std::vector<std::size_t>> by_annotator;
  for (std::size_t i = 0; i < ratings.size(); ++i) {
    by_annotator[ratings[i].annotator_id].push_back(i);
  }

  std::vector<std::optional<NormalizedRating>> slots(ratings.size());
  for (const auto& [annotator, rows] : by_annotator) {
    if (rows.size() < min_count) continue;
    const double n = static_cast<double>(rows.size());
    std::array<double, 5> mean{};
    std::array<double, 5> sd{};
    for (std::size_t d = 0; d < 5; ++d) {
      for (auto r : rows) mean[d] += ratings[r].scores[d];
      mean[d] /= n;
      for (auto r : rows) sd[d] += (ratings[r].scores[d] - mean[d]) * (ratings[r].scores[d] - mean[d]);
      sd[d] = std::sqrt(sd[d] / n);
    }
    for (auto r : rows) {
      NormalizedRating out{ratings[r].conversation_id, annotator, {}};
      for (std::size_t d = 0; d < 5; ++d) {
        out.scores[d] = sd[d] > 0.0 ? (ratings[r].scores[d] - mean[d]) / sd[d] : 0.0;
      }
      slots[r] = std::move(out);
    }
  }

  std::vector<NormalizedRating> out;
  for (auto& s : slots) {
    if (s) out.push_back(std::move(*s));
  }
  return out;
}

std::vector<RatingRecord> filter_annotators(std::span<const RatingRecord> ratings,
                                            std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : ratings) ++counts[r.annotator_id];
  std::vector<RatingRecord> out;
  for (const auto& r : ratings) {
    if (counts[r.annotator_id] >= min_count) out.push_back(r);
  }
  return out;
}

std::map<std::string, double> mean_quality(std::span<const RatingRecord> ratings) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& r : ratings) {
    auto& [sum, n] = acc[r.conversation_id];
    sum += r.quality();
    ++n;
  }
  std::map<std::string, double> out;
  for (const auto& [id, v] : acc) out[id] = v.first / static_cast<double>(v.second);
  return out;
}

std::string correlation_matrix_csv(CorrelationMethod method, std::span<const NamedSeries> rows,
                                   std::span<const NamedSeries> columns, std::size_t permutations,
                                   std::uint64_t seed) {
  std::ostringstream os;
  os << std::setprecision(17) << "metric";
  for (const auto& c : columns) os << ',' << c.name << ',' << c.name << "_p";
  os << '\n';
  for (const auto& r : rows) {
    os << r.name;
    for (const auto& c : columns) {
      if (r.values.size() != c.values.size()) {
        throw Error(ErrorCode::LengthMismatch, "series '" + r.name + "' and '" + c.name +
                                                   "' have different lengths");
      }
      std::vector<double> x;
      std::vector<double> y;
      for (std::size_t i = 0; i < r.values.size(); ++i) {
        if (std::isnan(r.values[i]) || std::isnan(c.values[i])) continue;
        x.push_back(r.values[i]);
        y.push_back(c.values[i]);
      }
      try {
        const auto result = correlation_test(method, x, y, permutations, seed);
        os << ',' << result.r << ',' << result.p;
      } catch (const Error&) {
        os << ",,";
      }
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace convo
