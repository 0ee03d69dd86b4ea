#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "convo/botkit.hpp"
#include "convo/corpus.hpp"
#include "convo/domain.hpp"
#include "convo/embeddings.hpp"
#include "convo/error.hpp"
#include "convo/evalserver.hpp"
#include "convo/hybrid.hpp"
#include "convo/metrics.hpp"
#include "convo/selfplay.hpp"
#include "convo/stats.hpp"
#include "convo/tokenize.hpp"
#include "convo/trajectories.hpp"

namespace convo::cli {
namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "failed writing '" + path + "'");
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!is_blank(line)) out.push_back(trim(line));
  }
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

// Ids are written unquoted, so they must not contain CSV metacharacters.
const std::string& csv_safe(const std::string& field) {
  if (field.find_first_of(",\"\n\r") != std::string::npos) {
    throw Error(ErrorCode::InvalidArgument, "identifier '" + field + "' contains a CSV delimiter");
  }
  return field;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Metric table: conversation_id,bot_id,<metrics>
// ---------------------------------------------------------------------------

struct MetricRow {
  std::string conversation_id;
  BotId bot_id;
  MetricVector features;
};

std::string metric_table_header() { return "conversation_id,bot_id," + metric_csv_header(); }

std::vector<MetricRow> read_metric_table(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines.front() != metric_table_header()) {
    throw Error(ErrorCode::ParseError, "'" + path + "' is not a metrics table");
  }
  std::vector<MetricRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto cells = split_csv_line(lines[i]);
    if (cells.size() != kMetricCount + 2) {
      throw Error(ErrorCode::ParseError, path + " line " + std::to_string(i + 1) + ": expected " +
                                             std::to_string(kMetricCount + 2) + " cells");
    }
    MetricRow row;
    row.conversation_id = cells[0];
    row.bot_id = BotId::parse(cells[1]);
    row.features = parse_metric_csv_row(std::span(cells).subspan(2));
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Shared option groups
// ---------------------------------------------------------------------------

struct ProviderOptions {
  std::string emotion;
  std::string sentence;
  std::string words;
  std::string weights;
  std::uint64_t seed{0};

  json snapshot() const {
    return {{"emotion", emotion}, {"sentence", sentence}, {"word_vectors", words},
            {"weights", weights}, {"seed", seed}};
  }
};

void add_provider_options(CLI::App* app, ProviderOptions& o) {
  app->add_option("--emotion", o.emotion,
                  "Emotion embeddings: deterministic, file:PATH (sidecar JSONL) or an http(s) URL");
  app->add_option("--sentence", o.sentence,
                  "Sentence embeddings: deterministic, file:PATH (sidecar JSONL) or an http(s) URL");
  app->add_option("--word-vectors", o.words, "Word vectors: a text file or hashed:DIM");
  app->add_option("--weights", o.weights, "Emoji weight file (64 numbers)");
  app->add_option("--seed", o.seed, "Seed for hashed word vectors");
}

struct Providers {
  std::shared_ptr<const EmbeddingProvider> emotion;
  std::shared_ptr<const EmbeddingProvider> sentence;
  std::shared_ptr<const WordVectorTable> words;
  MetricContext context;
};

std::vector<std::string> vocabulary_of(std::span<const Conversation> conversations) {
  std::set<std::string> vocab;
  for (const auto& c : conversations) {
    for (const auto& u : c.utterances()) {
      for (auto& t : tokenize(u.text)) vocab.insert(std::move(t));
    }
  }
  return {vocab.begin(), vocab.end()};
}

std::shared_ptr<const WordVectorTable> load_words(const std::string& spec, std::uint64_t seed,
                                                  std::span<const Conversation> vocabulary_source) {
  if (spec.empty()) return nullptr;
  if (spec.starts_with("hashed:")) {
    std::size_t dim = 0;
    try {
      dim = std::stoul(spec.substr(7));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::InvalidArgument, "invalid word-vector spec '" + spec + "'");
    }
    if (dim == 0) throw Error(ErrorCode::InvalidArgument, "hashed word vectors need DIM >= 1");
    return std::make_shared<WordVectorTable>(
        WordVectorTable::hashed(vocabulary_of(vocabulary_source), dim, seed));
  }
  return std::make_shared<WordVectorTable>(load_word_vectors(spec));
}

Providers make_providers(const ProviderOptions& o, std::span<const Conversation> conversations) {
  Providers p;
  if (!o.emotion.empty()) p.emotion = make_provider(EmbeddingKind::Emotion, o.emotion);
  if (!o.sentence.empty()) p.sentence = make_provider(EmbeddingKind::Sentence, o.sentence);
  p.words = load_words(o.words, o.seed, conversations);
  p.context.emotion = p.emotion.get();
  p.context.sentence = p.sentence.get();
  p.context.words = p.words.get();
  if (!o.weights.empty()) p.context.weights = EmojiWeights::load(o.weights);
  return p;
}

struct BotOptions {
  std::string corpus;
  std::string dataset{"reddit"};
  std::size_t order{2};
  std::string words;
  std::uint64_t seed{0};
  double timeout_s{30.0};

  json snapshot() const {
    return {{"corpus", corpus}, {"dataset", dataset},     {"order", order},
            {"word_vectors", words}, {"seed", seed}, {"timeout_s", timeout_s}};
  }
};

void add_bot_options(CLI::App* app, BotOptions& o) {
  app->add_option("--corpus", o.corpus,
                  "Conversation JSONL used to train builtin:markov and to index builtin:retrieval");
  app->add_option("--dataset", o.dataset, "Dataset name recorded in builtin bot ids");
  app->add_option("--order", o.order, "Markov order")->check(CLI::PositiveNumber);
  app->add_option("--word-vectors", o.words, "Word vectors for builtin:retrieval (file or hashed:DIM)");
  app->add_option("--timeout", o.timeout_s, "Remote bot timeout in seconds")
      ->check(CLI::PositiveNumber);
}

std::chrono::milliseconds timeout_of(const BotOptions& o) {
  return std::chrono::milliseconds(static_cast<long long>(o.timeout_s * 1000.0));
}

BuiltinOptions builtin_options(const BotOptions& o) {
  BuiltinOptions b;
  b.dataset = o.dataset;
  if (o.corpus.empty()) return b;
  auto conversations = read_conversations_file(o.corpus);
  auto corpus = std::make_shared<Corpus>(make_corpus(o.dataset, std::move(conversations)));
  if (corpus->conversations.empty()) {
    throw Error(ErrorCode::EmptyCorpus, "'" + o.corpus + "' has no conversations");
  }
  b.markov = std::make_shared<MarkovModel>(train_markov(*corpus, o.order));
  b.words = load_words(o.words, o.seed, corpus->conversations);
  b.corpus = std::move(corpus);
  return b;
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

struct Invocation {
  std::vector<std::string> argv;
  std::chrono::steady_clock::time_point started{std::chrono::steady_clock::now()};
};

/// Written beside the primary output as `<output>.manifest.json`.
void write_manifest(const Invocation& inv, const std::string& command, const json& config,
                    std::optional<std::uint64_t> seed, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  if (outputs.empty()) return;
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - inv.started).count();
  json manifest = {{"command", command},
                   {"argv", inv.argv},
                   {"config", config},
                   {"seed", seed ? json(*seed) : json(nullptr)},
                   {"inputs", inputs},
                   {"outputs", outputs},
                   {"tool_version", kVersion},
                   {"wall_time_s", wall}};
  write_text(outputs.front() + ".manifest.json", manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct CorpusExtract {
  std::string in, out, dataset{"reddit"};
  std::size_t min_turns{3};
};

struct CorpusStatsCmd {
  std::string in, out;
  std::size_t min_turns{0};
};

struct MetricsCompute {
  std::string in, out, pairing{"user-bot"};
  ProviderOptions providers;
};

struct HybridFit {
  std::string metrics, ratings, held_out, out;
  std::size_t min_ratings{10};
};

struct HybridReport {
  std::string metrics, ratings, out;
  std::size_t min_ratings{10};
  double level{0.9};
};

struct StatsCorrelate {
  std::string metrics, ratings, out, method{"pearson"}, level{"conversation"};
  std::vector<std::string> scores;
  std::size_t min_ratings{10};
  std::size_t permutations{kPermutationCount};
  std::uint64_t seed{kPermutationSeed};
};

struct SelfplayRun {
  std::string bot, openers, out;
  std::size_t n{100}, turns{10};
  std::uint64_t seed{0};
  double temperature{1.0};
  BotOptions bot_options;
};

struct SelfplayScore {
  std::string in, model, out;
  ProviderOptions providers;
};

struct SelfplayOverlap {
  std::string in, training, out;
  std::size_t window{3};
};

struct BotServe {
  std::string bot, host{"127.0.0.1"};
  int port{8080};
  BotOptions bot_options;
};

struct EvalServe {
  std::vector<std::string> bots;
  std::string store, bind{"127.0.0.1:8080"}, static_dir;
  double temperature{0.0};
  BotOptions bot_options;
};

struct ReportTrajectories {
  std::string conversations, ratings, out_dir;
  std::size_t top_n{100}, bottom_n{100}, min_ratings{10};
  double level{0.9};
  ProviderOptions providers;
};

std::vector<LabeledExample> labeled_examples(const std::string& metrics_path,
                                             const std::string& ratings_path,
                                             std::size_t min_ratings) {
  const auto rows = read_metric_table(metrics_path);
  const auto ratings = filter_annotators(read_ratings_file(ratings_path), min_ratings);
  const auto quality = mean_quality(ratings);
  std::vector<LabeledExample> out;
  for (const auto& r : rows) {
    if (const auto it = quality.find(r.conversation_id); it != quality.end()) {
      out.push_back({r.bot_id, r.features, it->second});
    }
  }
  return out;
}

void run_corpus_extract(const CorpusExtract& o, const Invocation& inv, std::ostream& out) {
  std::ifstream in(o.in);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + o.in + "'");
  const auto extraction = extract_conversations(read_comments(in), o.min_turns, o.dataset);
  write_conversations_file(o.out, extraction.conversations);
  out << json{{"conversations", extraction.conversations.size()},
              {"orphans", extraction.orphans.size()}}.dump()
      << '\n';
  write_manifest(inv, "corpus extract",
                 {{"min_turns", o.min_turns}, {"dataset", o.dataset}}, std::nullopt, {o.in}, {o.out});
}

void run_corpus_stats(const CorpusStatsCmd& o, const Invocation& inv, std::ostream& out) {
  const auto corpus = make_corpus(o.in, read_conversations_file(o.in), o.min_turns);
  const auto s = corpus_stats(corpus);
  const json result = {{"conversation_count", s.conversation_count},
                       {"median_turns", s.median_turns},
                       {"vocabulary_size", s.vocabulary_size}};
  out << result.dump() << '\n';
  if (!o.out.empty()) {
    write_text(o.out, result.dump() + "\n");
    write_manifest(inv, "corpus stats", {{"min_turns", o.min_turns}}, std::nullopt, {o.in}, {o.out});
  }
}

void run_metrics_compute(const MetricsCompute& o, const Invocation& inv, std::ostream& out) {
  const auto conversations = read_conversations_file(o.in);
  const auto pairing = parse_pairing(o.pairing);
  const auto providers = make_providers(o.providers, conversations);
  std::ostringstream csv;
  csv << metric_table_header() << '\n';
  std::size_t skipped = 0;
  for (const auto& c : conversations) {
    MetricVector features;
    try {
      features = conversation_features(c, providers.context, pairing);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InsufficientTurns) throw;
      ++skipped;
      continue;
    }
    csv << csv_safe(c.id()) << ',' << csv_safe(c.bot_id().str()) << ',' << metric_csv_row(features)
        << '\n';
  }
  write_text(o.out, csv.str());
  out << json{{"rows", conversations.size() - skipped}, {"skipped", skipped}}.dump() << '\n';
  json config = o.providers.snapshot();
  config["pairing"] = o.pairing;
  write_manifest(inv, "metrics compute", config, o.providers.seed, {o.in}, {o.out});
}

void run_hybrid_fit(const HybridFit& o, const Invocation& inv, std::ostream& out) {
  const auto examples = labeled_examples(o.metrics, o.ratings, o.min_ratings);
  const auto model = fit_hybrid(examples, BotId::parse(o.held_out));
  write_text(o.out, to_json(model).dump(2) + "\n");
  out << json{{"examples", examples.size()}, {"singular", model.singular}}.dump() << '\n';
  write_manifest(inv, "hybrid fit", {{"held_out", o.held_out}, {"min_ratings", o.min_ratings}},
                 std::nullopt, {o.metrics, o.ratings}, {o.out});
}

void run_hybrid_report(const HybridReport& o, const Invocation& inv, std::ostream& out) {
  const auto examples = labeled_examples(o.metrics, o.ratings, o.min_ratings);
  const auto report = leave_bot_out_report(examples, o.level);
  write_text(o.out, to_json(report).dump(2) + "\n");
  out << json{{"folds", report.models.size()}}.dump() << '\n';
  write_manifest(inv, "hybrid report", {{"level", o.level}, {"min_ratings", o.min_ratings}},
                 std::nullopt, {o.metrics, o.ratings}, {o.out});
}

// Mean of the non-NaN values, NaN when there is none.
double nan_mean(const std::vector<double>& v) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double x : v) {
    if (!std::isnan(x)) {
      sum += x;
      ++n;
    }
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}

void run_stats_correlate(const StatsCorrelate& o, const Invocation& inv, std::ostream& out) {
  const auto method = parse_correlation_method(o.method);
  if (o.level != "conversation" && o.level != "bot") {
    throw Error(ErrorCode::InvalidArgument, "--level must be conversation or bot");
  }
  const bool bot_level = o.level == "bot";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const auto rows = read_metric_table(o.metrics);

  // Mean normalized rating per conversation and dimension.
  std::map<std::string, std::pair<std::array<double, 5>, std::size_t>> rated;
  for (const auto& r : normalize_ratings(read_ratings_file(o.ratings), o.min_ratings)) {
    auto& [sum, n] = rated[r.conversation_id];
    for (std::size_t d = 0; d < 5; ++d) sum[d] += r.scores[d];
    ++n;
  }

  // Units are conversations or bots; each unit collects per-conversation values.
  std::vector<std::string> units;
  std::map<std::string, std::size_t> unit_index;
  std::vector<std::array<std::vector<double>, kMetricCount>> metric_values;
  std::vector<std::array<std::vector<double>, 5>> rating_values;
  for (const auto& r : rows) {
    const std::string key = bot_level ? r.bot_id.str() : r.conversation_id;
    auto [it, inserted] = unit_index.emplace(key, units.size());
    if (inserted) {
      units.push_back(key);
      metric_values.emplace_back();
      rating_values.emplace_back();
    }
    for (std::size_t m = 0; m < kMetricCount; ++m) {
      metric_values[it->second][m].push_back(r.features.values[m].value_or(nan));
    }
    const auto q = rated.find(r.conversation_id);
    for (std::size_t d = 0; d < 5; ++d) {
      rating_values[it->second][d].push_back(
          q == rated.end() ? nan : q->second.first[d] / static_cast<double>(q->second.second));
    }
  }

  std::vector<NamedSeries> row_series;
  for (std::size_t m = 0; m < kMetricCount; ++m) {
    NamedSeries s{std::string(kMetricNames[m]), {}};
    for (std::size_t u = 0; u < units.size(); ++u) s.values.push_back(nan_mean(metric_values[u][m]));
    row_series.push_back(std::move(s));
  }
  if (!o.scores.empty()) {
    if (!bot_level) throw Error(ErrorCode::InvalidArgument, "--scores needs --level bot");
    std::map<std::string, std::vector<double>> mh;
    for (const auto& path : o.scores) {
      const auto lines = read_lines(path);
      for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto cells = split_csv_line(lines[i]);
        if (cells.size() != 3) throw Error(ErrorCode::ParseError, path + ": expected 3 cells");
        mh[cells[1]].push_back(std::stod(cells[2]));
      }
    }
    NamedSeries s{"mh_selfplay", {}};
    for (const auto& u : units) s.values.push_back(mh.contains(u) ? nan_mean(mh[u]) : nan);
    row_series.push_back(std::move(s));
  }
  std::vector<NamedSeries> columns;
  for (std::size_t d = 0; d < 5; ++d) {
    NamedSeries s{std::string(kRatingDimensions[d]), {}};
    for (std::size_t u = 0; u < units.size(); ++u) s.values.push_back(nan_mean(rating_values[u][d]));
    columns.push_back(std::move(s));
  }

  write_text(o.out, correlation_matrix_csv(method, row_series, columns, o.permutations, o.seed));
  out << json{{"units", units.size()}, {"level", o.level}}.dump() << '\n';
  std::vector<std::string> inputs{o.metrics, o.ratings};
  inputs.insert(inputs.end(), o.scores.begin(), o.scores.end());
  write_manifest(inv, "stats correlate",
                 {{"method", o.method},
                  {"level", o.level},
                  {"min_ratings", o.min_ratings},
                  {"permutations", o.permutations}},
                 o.seed, inputs, {o.out});
}

void run_selfplay_run(const SelfplayRun& o, const Invocation& inv, std::ostream& out) {
  SelfPlayConfig config;
  config.n_conversations = o.n;
  config.turns = o.turns;
  config.seed = o.seed;
  config.opener_prompts = o.openers.empty() ? default_openers() : read_lines(o.openers);
  const BotHandle bot(make_bot(o.bot, builtin_options(o.bot_options), timeout_of(o.bot_options)),
                      o.temperature);
  const auto conversations = run_selfplay(bot, config);
  write_conversations_file(o.out, conversations);
  out << json{{"bot_id", bot.id().str()}, {"conversations", conversations.size()}}.dump() << '\n';
  json snapshot = {{"selfplay", to_json(config)},
                   {"bot", o.bot},
                   {"temperature", o.temperature},
                   {"bot_options", o.bot_options.snapshot()}};
  std::vector<std::string> inputs;
  if (!o.openers.empty()) inputs.push_back(o.openers);
  if (!o.bot_options.corpus.empty()) inputs.push_back(o.bot_options.corpus);
  write_manifest(inv, "selfplay run", snapshot, o.seed, inputs, {o.out});
}

void run_selfplay_score(const SelfplayScore& o, const Invocation& inv, std::ostream& out) {
  const auto conversations = read_conversations_file(o.in);
  std::ifstream model_in(o.model);
  if (!model_in) throw Error(ErrorCode::IoError, "cannot open '" + o.model + "'");
  json model_json;
  try {
    model_json = json::parse(model_in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, o.model + ": " + e.what());
  }
  const auto model = model_from_json(model_json);
  const auto providers = make_providers(o.providers, conversations);
  const auto score = score_selfplay(conversations, model, providers.context);
  std::ostringstream csv;
  csv << "conversation_id,bot_id,mh\n";
  for (std::size_t i = 0; i < conversations.size(); ++i) {
    csv << csv_safe(conversations[i].id()) << ',' << csv_safe(score.bot_id.str()) << ','
        << format_double(score.per_conversation_mh[i]) << '\n';
  }
  write_text(o.out, csv.str());
  out << json{{"bot_id", score.bot_id.str()},
              {"mean_mh", score.mean_mh},
              {"conversations", conversations.size()}}.dump()
      << '\n';
  write_manifest(inv, "selfplay score", o.providers.snapshot(), o.providers.seed, {o.in, o.model},
                 {o.out});
}

void run_selfplay_overlap(const SelfplayOverlap& o, const Invocation& inv, std::ostream& out) {
  const auto conversations = read_conversations_file(o.in);
  std::string kind = "pairwise";
  double percent = 0.0;
  if (o.training.empty()) {
    percent = pairwise_overlap(conversations, o.window);
  } else {
    kind = "training";
    const auto training = make_corpus(o.training, read_conversations_file(o.training));
    percent = training_overlap(conversations, training, o.window);
  }
  const std::string csv =
      "kind,window,percent\n" + kind + "," + std::to_string(o.window) + "," + format_double(percent) + "\n";
  if (o.out.empty()) {
    out << csv;
    return;
  }
  write_text(o.out, csv);
  std::vector<std::string> inputs{o.in};
  if (!o.training.empty()) inputs.push_back(o.training);
  write_manifest(inv, "selfplay overlap", {{"window", o.window}, {"kind", kind}}, std::nullopt,
                 inputs, {o.out});
}

void run_bot_serve(const BotServe& o, std::ostream& out) {
  auto bot = make_bot(o.bot, builtin_options(o.bot_options), timeout_of(o.bot_options));
  BotServer server(bot, o.bot_options.seed);
  server.start(o.host, o.port);
  out << json{{"bot_id", bot->id().str()}, {"url", server.url()}}.dump() << std::endl;
  server.wait();
}

std::pair<std::string, int> parse_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::InvalidArgument, "bind must be HOST:PORT");
  try {
    return {bind.substr(0, colon), std::stoi(bind.substr(colon + 1))};
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::InvalidArgument, "invalid port in '" + bind + "'");
  }
}

void run_eval_serve(const EvalServe& o, std::ostream& out) {
  const auto options = builtin_options(o.bot_options);
  std::vector<BotHandle> bots;
  for (const auto& spec : o.bots) {
    bots.emplace_back(make_bot(spec, options, timeout_of(o.bot_options)), o.temperature);
  }
  EvalStore store(std::move(bots), o.store, utc_now, o.bot_options.seed);
  EvalServer server(store, o.static_dir);
  const auto [host, port] = parse_bind(o.bind);
  out << json{{"listening", o.bind}, {"store", o.store}}.dump() << std::endl;
  server.run(host, port);
}

void run_report_trajectories(const ReportTrajectories& o, const Invocation& inv, std::ostream& out) {
  const auto conversations = read_conversations_file(o.conversations);
  const auto ratings = filter_annotators(read_ratings_file(o.ratings), o.min_ratings);
  const auto providers = make_providers(o.providers, conversations);
  const auto groups = trajectory_groups(conversations, mean_quality(ratings), o.top_n, o.bottom_n);
  std::filesystem::create_directories(o.out_dir);
  std::vector<std::string> outputs;
  json sizes = json::object();
  for (const auto& g : groups) {
    const auto path = (std::filesystem::path(o.out_dir) / ("trajectories_" + g.name + ".csv")).string();
    write_text(path, trajectory_csv(g, providers.context, o.level));
    outputs.push_back(path);
    sizes[g.name] = g.conversations.size();
  }
  out << json{{"groups", sizes}}.dump() << '\n';
  json config = o.providers.snapshot();
  config.update({{"top_n", o.top_n}, {"bottom_n", o.bottom_n}, {"level", o.level},
                 {"min_ratings", o.min_ratings}});
  write_manifest(inv, "report trajectories", config, o.providers.seed,
                 {o.conversations, o.ratings}, outputs);
}

// ---------------------------------------------------------------------------

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
             int depth);

void run_manifest_replay(const std::string& path, std::ostream& out, std::ostream& err,
                         int depth) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  std::vector<std::string> argv;
  try {
    argv = json::parse(in).at("argv").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
  if (depth > 0 || (argv.size() >= 1 && argv[0] == "manifest")) {
    throw Error(ErrorCode::InvalidArgument, "a manifest cannot replay another manifest");
  }
  const int code = dispatch(argv, out, err, depth + 1);
  if (code != 0) throw Error(ErrorCode::InvalidArgument, "replayed command exited with " + std::to_string(code));
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
             int depth) {
  CLI::App app{"Dialog evaluation toolkit: corpus extraction, metrics, hybrid fitting, self-play, "
               "bot serving and interactive evaluation."};
  app.name("convo");
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough(false);

  Invocation inv{args, std::chrono::steady_clock::now()};
  std::function<void()> action;

  // corpus
  auto* corpus = app.add_subcommand("corpus", "Reddit extraction and corpus statistics");
  corpus->require_subcommand(1);
  CorpusExtract extract;
  auto* c_extract = corpus->add_subcommand("extract", "Comment dump JSONL -> conversation JSONL");
  c_extract->add_option("--in", extract.in, "Comment JSONL")->required()->check(CLI::ExistingFile);
  c_extract->add_option("--out", extract.out, "Conversation JSONL")->required();
  c_extract->add_option("--min-turns", extract.min_turns, "Minimum utterances per conversation");
  c_extract->add_option("--dataset", extract.dataset, "Dataset name recorded in bot ids");
  c_extract->callback([&] { action = [&] { run_corpus_extract(extract, inv, out); }; });

  CorpusStatsCmd cstats;
  auto* c_stats = corpus->add_subcommand("stats", "Conversation count, median turns, vocabulary size");
  c_stats->add_option("--in", cstats.in, "Conversation JSONL")->required()->check(CLI::ExistingFile);
  c_stats->add_option("--out", cstats.out, "Also write the JSON result here");
  c_stats->add_option("--min-turns", cstats.min_turns, "Drop shorter conversations first");
  c_stats->callback([&] { action = [&] { run_corpus_stats(cstats, inv, out); }; });

  // metrics
  auto* metrics = app.add_subcommand("metrics", "Conversation-level metrics");
  metrics->require_subcommand(1);
  MetricsCompute mcompute;
  auto* m_compute = metrics->add_subcommand("compute", "Conversation JSONL -> metrics CSV");
  m_compute->add_option("--in", mcompute.in, "Conversation JSONL")->required()->check(CLI::ExistingFile);
  m_compute->add_option("--out", mcompute.out, "Metrics CSV")->required();
  m_compute->add_option("--pairing", mcompute.pairing, "user-bot or bot-bot")
      ->check(CLI::IsMember({"user-bot", "bot-bot"}));
  add_provider_options(m_compute, mcompute.providers);
  m_compute->callback([&] { action = [&] { run_metrics_compute(mcompute, inv, out); }; });

  // hybrid
  auto* hybrid = app.add_subcommand("hybrid", "Hybrid metric fitting");
  hybrid->require_subcommand(1);
  HybridFit hfit;
  auto* h_fit = hybrid->add_subcommand("fit", "Fit one leave-bot-out model");
  h_fit->add_option("--metrics", hfit.metrics, "Metrics CSV")->required()->check(CLI::ExistingFile);
  h_fit->add_option("--ratings", hfit.ratings, "Rating JSONL")->required()->check(CLI::ExistingFile);
  h_fit->add_option("--held-out", hfit.held_out, "Bot id to hold out (name@dataset/variant)")->required();
  h_fit->add_option("--out", hfit.out, "Model JSON")->required();
  h_fit->add_option("--min-annotator-ratings", hfit.min_ratings,
                    "Ignore annotators with fewer ratings");
  h_fit->callback([&] { action = [&] { run_hybrid_fit(hfit, inv, out); }; });

  HybridReport hreport;
  auto* h_report = hybrid->add_subcommand("report", "Fit every fold and summarize coefficients");
  h_report->add_option("--metrics", hreport.metrics, "Metrics CSV")->required()->check(CLI::ExistingFile);
  h_report->add_option("--ratings", hreport.ratings, "Rating JSONL")->required()->check(CLI::ExistingFile);
  h_report->add_option("--out", hreport.out, "Report JSON")->required();
  h_report->add_option("--level", hreport.level, "Confidence level")->check(CLI::Range(0.5, 0.999));
  h_report->add_option("--min-annotator-ratings", hreport.min_ratings,
                       "Ignore annotators with fewer ratings");
  h_report->callback([&] { action = [&] { run_hybrid_report(hreport, inv, out); }; });

  // stats
  auto* stats = app.add_subcommand("stats", "Correlation analyses");
  stats->require_subcommand(1);
  StatsCorrelate scorr;
  auto* s_corr = stats->add_subcommand("correlate", "Metric x rating correlation matrix CSV");
  s_corr->add_option("--metrics", scorr.metrics, "Metrics CSV")->required()->check(CLI::ExistingFile);
  s_corr->add_option("--ratings", scorr.ratings, "Rating JSONL")->required()->check(CLI::ExistingFile);
  s_corr->add_option("--out", scorr.out, "Correlation CSV")->required();
  s_corr->add_option("--method", scorr.method, "pearson, spearman or kendall")
      ->check(CLI::IsMember({"pearson", "spearman", "kendall"}));
  s_corr->add_option("--level", scorr.level, "conversation or bot")
      ->check(CLI::IsMember({"conversation", "bot"}));
  s_corr->add_option("--scores", scorr.scores, "Self-play score CSVs (bot level only)");
  s_corr->add_option("--min-annotator-ratings", scorr.min_ratings,
                     "Ignore annotators with fewer ratings");
  s_corr->add_option("--permutations", scorr.permutations, "Permutations for p-values");
  s_corr->add_option("--seed", scorr.seed, "Permutation seed");
  s_corr->callback([&] { action = [&] { run_stats_correlate(scorr, inv, out); }; });

  // selfplay
  auto* selfplay = app.add_subcommand("selfplay", "Bot-bot conversations and their analysis");
  selfplay->require_subcommand(1);
  SelfplayRun srun;
  auto* sp_run = selfplay->add_subcommand("run", "Generate self-play transcripts");
  sp_run->add_option("--bot", srun.bot, "builtin:NAME or bot server URL")->required();
  sp_run->add_option("--n", srun.n, "Conversations")->check(CLI::PositiveNumber);
  sp_run->add_option("--turns", srun.turns, "Utterances per conversation")->check(CLI::Range(2, 1000));
  sp_run->add_option("--seed", srun.seed, "Seed");
  sp_run->add_option("--openers", srun.openers, "Opener prompts, one per line")->check(CLI::ExistingFile);
  sp_run->add_option("--temperature", srun.temperature, "Sampling temperature")
      ->check(CLI::NonNegativeNumber);
  sp_run->add_option("--out", srun.out, "Conversation JSONL")->required();
  add_bot_options(sp_run, srun.bot_options);
  sp_run->callback([&] {
    srun.bot_options.seed = srun.seed;
    action = [&] { run_selfplay_run(srun, inv, out); };
  });

  SelfplayScore sscore;
  auto* sp_score = selfplay->add_subcommand("score", "Score transcripts with a hybrid model");
  sp_score->add_option("--in", sscore.in, "Self-play JSONL")->required()->check(CLI::ExistingFile);
  sp_score->add_option("--model", sscore.model, "Model JSON")->required()->check(CLI::ExistingFile);
  sp_score->add_option("--out", sscore.out, "Per-conversation CSV")->required();
  add_provider_options(sp_score, sscore.providers);
  sp_score->callback([&] { action = [&] { run_selfplay_score(sscore, inv, out); }; });

  SelfplayOverlap soverlap;
  auto* sp_overlap = selfplay->add_subcommand("overlap", "Repeated-run overlap percentages");
  sp_overlap->add_option("--in", soverlap.in, "Self-play JSONL")->required()->check(CLI::ExistingFile);
  sp_overlap->add_option("--window", soverlap.window, "Run length")->check(CLI::PositiveNumber);
  sp_overlap->add_option("--training", soverlap.training, "Training conversation JSONL")
      ->check(CLI::ExistingFile);
  sp_overlap->add_option("--out", soverlap.out, "CSV output (stdout when omitted)");
  sp_overlap->callback([&] { action = [&] { run_selfplay_overlap(soverlap, inv, out); }; });

  // bot
  auto* bot = app.add_subcommand("bot", "Bot wire-protocol server");
  bot->require_subcommand(1);
  BotServe bserve;
  auto* b_serve = bot->add_subcommand("serve", "Serve a bot over HTTP");
  b_serve->add_option("--bot", bserve.bot, "builtin:NAME or upstream URL")->required();
  b_serve->add_option("--host", bserve.host, "Bind host");
  b_serve->add_option("--port", bserve.port, "Bind port (0 picks a free port)");
  b_serve->add_option("--seed", bserve.bot_options.seed, "Server seed");
  add_bot_options(b_serve, bserve.bot_options);
  b_serve->callback([&] { action = [&] { run_bot_serve(bserve, out); }; });

  // eval
  auto* eval = app.add_subcommand("eval", "Interactive evaluation server");
  eval->require_subcommand(1);
  EvalServe eserve;
  auto* e_serve = eval->add_subcommand("serve", "Serve the evaluation REST API");
  e_serve->add_option("--bot", eserve.bots, "Bots to evaluate (repeatable)")->required();
  e_serve->add_option("--store", eserve.store, "Event log path")->envname("EVAL_STORE_PATH")->required();
  e_serve->add_option("--bind", eserve.bind, "HOST:PORT")->envname("EVAL_BIND_ADDR");
  e_serve->add_option("--static", eserve.static_dir, "Web UI bundle directory")
      ->check(CLI::ExistingDirectory);
  e_serve->add_option("--temperature", eserve.temperature, "Bot sampling temperature")
      ->check(CLI::NonNegativeNumber);
  e_serve->add_option("--seed", eserve.bot_options.seed, "Seed for bot sampling");
  add_bot_options(e_serve, eserve.bot_options);
  e_serve->callback([&] { action = [&] { run_eval_serve(eserve, out); }; });

  // report
  auto* report = app.add_subcommand("report", "Figure data");
  report->require_subcommand(1);
  ReportTrajectories rtraj;
  auto* r_traj = report->add_subcommand("trajectories", "Per-turn means and intervals per group");
  r_traj->add_option("--conversations", rtraj.conversations, "Conversation JSONL")
      ->required()
      ->check(CLI::ExistingFile);
  r_traj->add_option("--ratings", rtraj.ratings, "Rating JSONL")->required()->check(CLI::ExistingFile);
  r_traj->add_option("--out-dir", rtraj.out_dir, "Output directory")->required();
  r_traj->add_option("--top-n", rtraj.top_n, "Highest-rated conversations");
  r_traj->add_option("--bottom-n", rtraj.bottom_n, "Lowest-rated conversations");
  r_traj->add_option("--level", rtraj.level, "Confidence level")->check(CLI::Range(0.5, 0.999));
  r_traj->add_option("--min-annotator-ratings", rtraj.min_ratings,
                     "Ignore annotators with fewer ratings");
  add_provider_options(r_traj, rtraj.providers);
  r_traj->callback([&] { action = [&] { run_report_trajectories(rtraj, inv, out); }; });

  // manifest
  auto* manifest = app.add_subcommand("manifest", "Run manifests");
  manifest->require_subcommand(1);
  std::string manifest_path;
  auto* m_replay = manifest->add_subcommand("replay", "Re-run the command recorded in a manifest");
  m_replay->add_option("--manifest", manifest_path, "Manifest JSON")->required()->check(CLI::ExistingFile);
  m_replay->callback([&] {
    action = [&] { run_manifest_replay(manifest_path, out, err, depth); };
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << (dynamic_cast<const CLI::CallForVersion*>(&e) != nullptr ? std::string(e.what()) + "\n"
                                                                       : app.help());
      return 0;
    }
    err << "error: " << e.what() << "\nRun with --help for usage.\n";
    return 2;
  }

  try {
    action();
  } catch (const Error& e) {
    err << json{{"error", e.what()}, {"code", std::string(to_string(e.code()))}}.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << json{{"error", e.what()}, {"code", "Internal"}}.dump() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  return dispatch(args, out, err, 0);
}

}  // namespace convo::cli
