#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "convo/error.hpp"
#include "convo/hybrid.hpp"
#include "convo/random.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace convo;
using convo::test::code_of;

namespace {

BotId bot(int i) { return BotId{"bot" + std::to_string(i), "synthetic", "baseline"}; }

constexpr std::size_t idx(Metric m) { return static_cast<std::size_t>(m); }

// Examples over three features with quality = 4 + 0.8 f0 - 0.5 f1 + 0.3 f2 + noise.
std::vector<LabeledExample> linear_examples(int bots, int per_bot, double noise, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LabeledExample> out;
  for (int b = 0; b < bots; ++b) {
    for (int k = 0; k < per_bot; ++k) {
      LabeledExample e;
      e.bot_id = bot(b);
      const double f0 = rng.normal();
      const double f1 = rng.normal(0.5, 2.0);
      const double f2 = rng.uniform01();
      e.features[Metric::Sentiment] = f0;
      e.features[Metric::NWords] = f1;
      e.features[Metric::QuestionScore] = f2;
      e.quality = std::clamp(4.0 + 0.8 * f0 - 0.5 * f1 + 0.3 * f2 + noise * rng.normal(), 1.0, 7.0);
      out.push_back(std::move(e));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("noiseless single-feature fit recovers the generator") {
  std::vector<LabeledExample> ex;
  for (int i = 0; i < 12; ++i) {
    LabeledExample e;
    e.bot_id = bot(i % 3);
    const double f = 0.25 + 0.25 * i;
    e.features[Metric::Laughter] = f;
    e.quality = 2.0 * f + 0.5;
    ex.push_back(e);
  }
  const auto model = fit_hybrid(ex, BotId{"nobody", "x", "y"});
  CHECK_FALSE(model.singular);
  CHECK(model.retained[idx(Metric::Laughter)]);
  CHECK(std::count(model.retained.begin(), model.retained.end(), true) == 1);
  const auto raw = raw_coefficients(model);
  CHECK(std::fabs(raw.slopes[idx(Metric::Laughter)] - 2.0) < 1e-9);
  CHECK(std::fabs(raw.intercept - 0.5) < 1e-9);
  for (const auto& e : ex) CHECK(std::fabs(predict_quality(model, e.features) - e.quality) < 1e-9);

  // Features at the training means predict M0.
  MetricVector at_mean;
  at_mean[Metric::Laughter] = model.mean[idx(Metric::Laughter)];
  CHECK(std::fabs(predict_quality(model, at_mean) - model.intercept) < 1e-12);
  // A missing feature is imputed with the training mean.
  CHECK(std::fabs(predict_quality(model, MetricVector{}) - model.intercept) < 1e-12);
}

TEST_CASE("duplicated columns set the singular flag and still fit") {
  std::vector<LabeledExample> ex;
  for (int i = 0; i < 10; ++i) {
    LabeledExample e;
    e.bot_id = bot(i % 2);
    const double f = 0.1 * i;
    e.features[Metric::AvgWordCoherence] = f;
    e.features[Metric::ExtWordCoherence] = f;
    e.quality = 3.0 + f;
    ex.push_back(e);
  }
  const auto model = fit_hybrid(ex, BotId{"nobody", "x", "y"});
  CHECK(model.singular);
  for (const auto& e : ex) CHECK(std::fabs(predict_quality(model, e.features) - e.quality) < 1e-6);
}

TEST_CASE("coefficients equal the normal-equations oracle") {
  const auto ex = linear_examples(3, 15, 0.3, 5);
  const auto model = fit_hybrid(ex, bot(2));
  const auto raw = raw_coefficients(model);

  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (const auto& e : ex) {
    if (e.bot_id == bot(2)) continue;
    x.push_back({1.0, *e.features[Metric::Sentiment], *e.features[Metric::NWords],
                 *e.features[Metric::QuestionScore]});
    y.push_back(e.quality);
  }
  const auto b = oracle::least_squares(x, y);
  CHECK(std::fabs(raw.intercept - b[0]) < 1e-8);
  CHECK(std::fabs(raw.slopes[idx(Metric::Sentiment)] - b[1]) < 1e-8);
  CHECK(std::fabs(raw.slopes[idx(Metric::NWords)] - b[2]) < 1e-8);
  CHECK(std::fabs(raw.slopes[idx(Metric::QuestionScore)] - b[3]) < 1e-8);
}

TEST_CASE("hand-built model prediction") {
  HybridModel m;
  m.intercept = 3.0;
  m.retained[0] = m.retained[1] = true;
  m.lambdas[0] = 1.0;
  m.lambdas[1] = -1.0;
  m.stddev[0] = m.stddev[1] = 1.0;
  MetricVector z;
  z.values[0] = 0.5;
  z.values[1] = 0.2;
  CHECK(std::fabs(predict_quality(m, z) - 3.3) < 1e-12);
}

TEST_CASE("fit is order-invariant and isolates the held-out bot") {
  auto ex = linear_examples(4, 10, 0.2, 8);
  const auto base = fit_hybrid(ex, bot(1));

  auto shuffled = ex;
  Rng rng(1);
  shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(fit_hybrid(shuffled, bot(1)) == base);

  for (auto& e : ex) {
    if (e.bot_id == bot(1)) {
      e.quality = 7.0 - (e.quality - 1.0);
      e.features[Metric::Sentiment] = 100.0;
    }
  }
  CHECK(fit_hybrid(ex, bot(1)) == base);
}

TEST_CASE("fit preconditions") {
  auto ex = linear_examples(1, 10, 0.0, 2);
  CHECK(code_of([&] { (void)fit_hybrid(ex, bot(9)); }) == ErrorCode::InsufficientData);
  ex = linear_examples(2, 2, 0.0, 2);  // 2 training rows for 3 features
  CHECK(code_of([&] { (void)fit_hybrid(ex, bot(0)); }) == ErrorCode::InsufficientData);
  ex = linear_examples(2, 10, 0.0, 2);
  ex[0].quality = 8.0;
  CHECK(code_of([&] { (void)fit_hybrid(ex, bot(0)); }) == ErrorCode::OutOfRange);
}

TEST_CASE("missing features are mean-imputed from the training fold") {
  auto ex = linear_examples(3, 10, 0.1, 4);
  ex[0].features[Metric::Sentiment].reset();
  ex[5].features[Metric::Sentiment].reset();
  const auto model = fit_hybrid(ex, bot(2));
  double sum = 0.0;
  int n = 0;
  for (const auto& e : ex) {
    if (e.bot_id != bot(2) && e.features[Metric::Sentiment]) {
      sum += *e.features[Metric::Sentiment];
      ++n;
    }
  }
  CHECK(model.imputation[idx(Metric::Sentiment)] == doctest::Approx(sum / n).epsilon(1e-12));
}

TEST_CASE("noisy fit explains most of the variance") {
  const auto train = linear_examples(6, 40, 0.1, 12);
  const auto model = fit_hybrid(train, bot(0));
  const auto test_set = linear_examples(6, 20, 0.0, 99);
  double ss_res = 0.0;
  double ss_tot = 0.0;
  double mean = 0.0;
  for (const auto& e : test_set) mean += e.quality;
  mean /= static_cast<double>(test_set.size());
  for (const auto& e : test_set) {
    ss_res += std::pow(predict_quality(model, e.features) - e.quality, 2);
    ss_tot += std::pow(e.quality - mean, 2);
  }
  CHECK(1.0 - ss_res / ss_tot >= 0.95);
}

TEST_CASE("leave-bot-out report") {
  // Identical data per bot: every fold trains on the same rows.
  std::vector<LabeledExample> same;
  const auto proto = linear_examples(1, 8, 0.2, 3);
  for (int b = 0; b < 4; ++b) {
    for (auto e : proto) {
      e.bot_id = bot(b);
      same.push_back(e);
    }
  }
  const auto flat = leave_bot_out_report(same);
  REQUIRE(flat.models.size() == 4);
  for (std::size_t f = 0; f < kMetricCount; ++f) {
    CHECK(flat.coefficients[f].ci_high - flat.coefficients[f].ci_low ==
          doctest::Approx(0.0).epsilon(1e-9));
  }

  const auto twelve = leave_bot_out_report(linear_examples(12, 20, 0.1, 21));
  REQUIRE(twelve.models.size() == 12);
  for (std::size_t f = 0; f < kMetricCount; ++f) {
    for (const auto& m : twelve.models) {
      CHECK(m.lambdas[f] >= twelve.coefficients[f].ci_low);
      CHECK(m.lambdas[f] <= twelve.coefficients[f].ci_high);
    }
  }
  for (std::size_t i = 0; i + 1 < twelve.models.size(); ++i) {
    CHECK(twelve.models[i].held_out_bot < twelve.models[i + 1].held_out_bot);
  }

  CHECK(code_of([] { (void)leave_bot_out_report(linear_examples(2, 10, 0.1, 1)); }) ==
        ErrorCode::InsufficientData);
}

TEST_CASE("model JSON round-trip") {
  const auto model = fit_hybrid(linear_examples(3, 10, 0.1, 6), bot(0));
  const auto j = to_json(model);
  CHECK(j.at("held_out_bot") == "bot0@synthetic/baseline");
  CHECK(j.at("lambdas").contains("sentiment"));
  const auto back = model_from_json(j);
  CHECK(back.held_out_bot == model.held_out_bot);
  CHECK(back.retained == model.retained);
  for (std::size_t f = 0; f < kMetricCount; ++f) {
    CHECK(back.lambdas[f] == model.lambdas[f]);
    CHECK(back.mean[f] == model.mean[f]);
    CHECK(back.stddev[f] == model.stddev[f]);
  }
  CHECK(back.intercept == model.intercept);
  CHECK(to_json(leave_bot_out_report(linear_examples(3, 10, 0.1, 6))).is_object());
}

TEST_CASE("label_examples joins metrics to quality by conversation id") {
  const auto a = test::make_conversation("a", {"x", "y"}, bot(0));
  const auto b = test::make_conversation("b", {"x", "y"}, bot(1));
  std::vector<Conversation> convs{a, b};
  std::vector<MetricVector> feats(2);
  feats[1][Metric::NWords] = 2.0;
  const auto ex = label_examples(convs, feats, {{"b", 5.5}});
  REQUIRE(ex.size() == 1);
  CHECK(ex[0].bot_id == bot(1));
  CHECK(ex[0].quality == 5.5);
  CHECK(*ex[0].features[Metric::NWords] == 2.0);
}
