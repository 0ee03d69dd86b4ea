#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "convo/domain.hpp"

namespace convo {

inline constexpr std::uint64_t kPermutationSeed = 0x5eed5eed5eedULL;
inline constexpr std::size_t kPermutationCount = 10000;

struct Correlation {
  double r{0.0};
  double p{1.0};
};

enum class CorrelationMethod { Pearson, Spearman, Kendall };

std::string_view to_string(CorrelationMethod m);
CorrelationMethod parse_correlation_method(std::string_view text);

/// Sample Pearson r. Throws LengthMismatch, InsufficientData (n < 3) or
/// ZeroVariance.
double pearson_r(std::span<const double> x, std::span<const double> y);

/// Average ranks, 1-based; tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> x);

double spearman(std::span<const double> x, std::span<const double> y);

/// Kendall tau-b.
double kendall(std::span<const double> x, std::span<const double> y);

double correlation(CorrelationMethod method, std::span<const double> x, std::span<const double> y);

/// Coefficient plus a two-sided permutation p-value: y is shuffled
/// `permutations` times from a fixed seed, and
/// p = (#{|r_perm| >= |r_obs|} + 1) / (permutations + 1).
Correlation correlation_test(CorrelationMethod method, std::span<const double> x,
                             std::span<const double> y,
                             std::size_t permutations = kPermutationCount,
                             std::uint64_t seed = kPermutationSeed);

Correlation pearson(std::span<const double> x, std::span<const double> y,
                    std::size_t permutations = kPermutationCount,
                    std::uint64_t seed = kPermutationSeed);

/// (p_o - p_e) / (1 - p_e); 1 when p_e = 1. Throws LengthMismatch, and
/// InsufficientData on empty input.
double cohen_kappa(std::span<const std::string> a, std::span<const std::string> b);

/// Two-sided Student-t quantile for a `level` confidence interval.
double t_critical(double level, std::size_t degrees_of_freedom);

struct Interval {
  double mean{0.0};
  double low{0.0};
  double high{0.0};
};

/// t-interval of the mean using the sample standard deviation. nullopt for
/// fewer than two values.
std::optional<Interval> mean_interval(std::span<const double> values, double level = 0.9);

// ---------------------------------------------------------------------------
// Annotator normalization
// ---------------------------------------------------------------------------

struct NormalizedRating {
  std::string conversation_id;
  std::string annotator_id;
  std::array<double, 5> scores{};  // order of kRatingDimensions
};

/// Drops annotators with fewer than `min_count` ratings, then z-scores each
/// remaining annotator per dimension (population std; zero variance gives 0).
/// Output keeps input order.
std::vector<NormalizedRating> normalize_ratings(std::span<const RatingRecord> ratings,
                                                std::size_t min_count = 10);

/// Ratings of annotators with at least `min_count` ratings, in input order.
std::vector<RatingRecord> filter_annotators(std::span<const RatingRecord> ratings,
                                            std::size_t min_count = 10);

/// Mean raw quality score per conversation id.
std::map<std::string, double> mean_quality(std::span<const RatingRecord> ratings);

// ---------------------------------------------------------------------------
// Correlation matrices
// ---------------------------------------------------------------------------

struct NamedSeries {
  std::string name;
  std::vector<double> values;
};

/// CSV with one row per `rows` series and, for every `columns` series, an
/// `<name>` column (coefficient) and an `<name>_p` column (permutation p).
/// Pairs where either value is NaN are skipped; cells whose correlation is
/// undefined on the remaining pairs are left empty.
std::string correlation_matrix_csv(CorrelationMethod method, std::span<const NamedSeries> rows,
                                   std::span<const NamedSeries> columns,
                                   std::size_t permutations = kPermutationCount,
                                   std::uint64_t seed = kPermutationSeed);

}  // namespace convo
