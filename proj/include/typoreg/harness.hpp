#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "typoreg/alchemy.hpp"
#include "typoreg/synthlang.hpp"
#include "typoreg/uriel_store.hpp"

namespace typoreg {

/// Settings of the generated benchmark used when no data files are given.
struct SyntheticSettings {
  std::size_t languages = 12;
  std::size_t families = 3;
  std::size_t train_per_lang = 60;
  std::size_t test_per_lang = 200;
  std::size_t classes = 4;
  double marker_noise = 0.7;

  bool operator==(const SyntheticSettings&) const = default;
};

/// Where projection parameters start.
///  - target_mean: bias = mean linguistic vector of the training languages,
///    weights scaled by 0.1
///  - uniform: the default uniform init
enum class ProjectionInit { TargetMean, Uniform };

struct ExperimentConfig {
  Task task = Task::Classification;
  std::vector<FeatureSet> feature_sets{kAllFeatureSets[0], kAllFeatureSets[1], kAllFeatureSets[2]};

  ScalingMode scaling = ScalingMode::Constant;
  double scaling_factor = 10.0;
  double scaling_beta = 0.9;
  std::size_t scaling_period = 100;

  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t max_seq_len = 32;
  double dropout = 0.0;
  ProjectionInit projection_init = ProjectionInit::TargetMean;

  std::vector<std::string> seen_langs;    // empty: every training language not listed as unseen
  std::vector<std::string> unseen_langs;  // empty with synthetic data: the built-in held-out set
  std::vector<std::vector<std::string>> family_groups;  // cumulative
  std::map<std::string, std::string> categories;        // lang -> user tag (low/medium/high ...)

  std::map<FeatureSet, std::filesystem::path> store_files;  // empty: synthetic
  std::optional<std::filesystem::path> train_corpus;
  std::optional<std::filesystem::path> test_corpus;
  SyntheticSettings synthetic;

  std::filesystem::path output_dir = "out";
  std::size_t threads = 0;  // 0: hardware concurrency

  bool synthetic_data() const { return store_files.empty(); }
  /// Throws ConfigError on violated invariants.
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

std::string_view to_string(ProjectionInit init);

/// `[section]` headers with `key = value` lines; `#` starts a comment.
ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& source = "<config>");
/// Canonical text listing every key; parses back to an equal config.
std::string serialize_config(const ExperimentConfig& cfg);
/// 16 hex digits of FNV-1a over the canonical text.
std::string config_hash(const ExperimentConfig& cfg);

/// Key reference shown by `--help`.
std::string config_reference();

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> gold);
/// Sample Pearson correlation.
double pearson(std::span<const double> x, std::span<const double> y);

/// Languages, corpora and vocabulary for one run.
struct PreparedData {
  UrielStore store;
  Corpus train;  // training languages only
  Corpus test;   // every evaluated language
  Vocab vocab;   // built from the training text
  std::vector<std::string> seen;
  std::vector<std::string> unseen;
  std::vector<SynthLanguageSpec> specs;  // synthetic data only
};

/// Generated languages with full training and test corpora for one seed.
struct SyntheticBenchmark {
  SynthLanguages languages;
  Corpus train;
  Corpus test;
};

SyntheticBenchmark generate_benchmark(const ExperimentConfig& cfg, std::uint64_t seed);

/// Built-in held-out languages of the synthetic benchmark.
std::vector<std::string> default_unseen_languages(const SyntheticSettings& settings);

PreparedData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed);

struct MetricRow {
  std::string lang;    // language code, or "@mean" / "@<category>" for aggregates
  std::string split;   // seen | unseen
  std::string metric;  // accuracy | pearson | unk_pct
  double value = 0.0;
  bool operator==(const MetricRow&) const = default;
};

struct MetricsReport {
  std::vector<MetricRow> rows;
  std::vector<TraceRow> trace;
  std::string config_hash;
  std::string resolved_config;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;

  /// Value of the "@mean" aggregate of the task metric for `split`.
  double mean(std::string_view split) const;
  std::optional<double> value(std::string_view lang, std::string_view split, std::string_view metric) const;
};

std::string_view task_metric(Task task);

ModelConfig model_config(const ExperimentConfig& cfg, const PreparedData& data, std::uint64_t seed);
ScalingState scaling_state(const ExperimentConfig& cfg);

/// Per-language task metric and UNK percentage, then the per-split means and
/// per-category means. Uses model outputs only.
std::vector<MetricRow> evaluate(const AlchemyModel& model, const PreparedData& data, std::size_t max_seq_len,
                                const std::map<std::string, std::string>& categories = {});

/// Trains on the seen languages and evaluates seen and unseen ones. With
/// `out_dir` the report, trace, resolved config, plot, checkpoint and
/// vocabulary are written there; a failed run leaves no partial outputs.
MetricsReport run_experiment(const ExperimentConfig& cfg, std::uint64_t seed,
                             const std::optional<std::filesystem::path>& out_dir = std::nullopt);
/// First configured seed.
MetricsReport run_experiment(const ExperimentConfig& cfg);

/// One report per cumulative training group, all evaluated on the same
/// unseen set.
std::vector<MetricsReport> family_split_experiment(const ExperimentConfig& cfg, std::uint64_t seed);

struct SweepRow {
  std::string setting;
  std::vector<double> seen;    // per seed
  std::vector<double> unseen;  // per seed
  bool flagged = false;

  double seen_mean() const;
  double unseen_mean() const;
};

struct SweepTable {
  std::string name;
  std::string metric;
  std::vector<std::uint64_t> seeds;
  std::vector<SweepRow> rows;
  std::size_t baseline = 0;  // row the paired deltas are taken against

  const SweepRow& row(std::string_view setting) const;
  /// unseen[row] - unseen[baseline], per seed.
  std::vector<double> paired_deltas(std::string_view setting) const;
};

/// All seven non-empty feature-set combinations over the configured seeds.
SweepTable ablation_sweep(const ExperimentConfig& cfg);
/// Constant factors 0, 10, 25, 50, 100, then balanced and learned.
SweepTable scaling_sweep(const ExperimentConfig& cfg);
/// Unseen metric per training group (rows) over the configured seeds.
SweepTable family_sweep(const ExperimentConfig& cfg);

inline constexpr double kScalingFactors[] = {0.0, 10.0, 25.0, 50.0, 100.0};

/// Runs `fn(i)` for i in [0, n) on at most `threads` workers (0: hardware
/// concurrency). Results keep index order; the first failure by index is
/// rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// report.csv, trace.csv, config.resolved and plot.svg.
void export_report(const MetricsReport& report, const std::filesystem::path& dir);
/// sweep.csv (per seed), summary.csv and plot.svg.
void export_sweep(const SweepTable& table, const std::filesystem::path& dir);

void write_report_csv(const std::filesystem::path& path, std::span<const MetricRow> rows);

struct SvgSeries {
  std::string label;
  std::vector<double> values;
};

/// Self-contained SVG line chart; `categories` label the x positions.
std::string svg_line_chart(const std::string& title, const std::vector<std::string>& categories,
                           const std::vector<SvgSeries>& series);
/// Self-contained SVG bar chart.
std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& values, const std::vector<std::string>& groups);

}  // namespace typoreg
