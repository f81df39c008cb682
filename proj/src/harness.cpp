#include "typoreg/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <set>
#include <thread>
#include <unistd.h>

#include "typoreg/autodiff/checkpoint.hpp"
#include "typoreg/error.hpp"
#include "typoreg/rng.hpp"
#include "typoreg/text.hpp"

namespace typoreg {

namespace {

constexpr std::uint64_t kLanguagesStream = 0x4c414e47;
constexpr std::uint64_t kTrainStream = 0x5452414e;
constexpr std::uint64_t kTestStream = 0x54455354;

constexpr std::string_view kMean = "@mean";
constexpr std::string_view kUnk = "unk_pct";

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> gold) {
  if (preds.size() != gold.size()) {
    throw ArgumentError("accuracy: " + std::to_string(preds.size()) + " predictions for " +
                        std::to_string(gold.size()) + " labels");
  }
  if (preds.empty()) throw ArgumentError("accuracy: no examples");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == gold[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ArgumentError("pearson: length mismatch");
  if (x.size() < 2) throw ArgumentError("pearson: need at least 2 points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericError("pearson: undefined for a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<std::string> default_unseen_languages(const SyntheticSettings& settings) {
  // The last languages; with codes assigned round-robin over families this
  // holds out about one language in three from every family.
  const std::size_t n = std::max<std::size_t>(1, settings.languages / 3);
  std::vector<std::string> out;
  for (std::size_t i = settings.languages - n; i < settings.languages; ++i) out.push_back(synth_language_code(i));
  return out;
}

SyntheticBenchmark generate_benchmark(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto& s = cfg.synthetic;
  SyntheticBenchmark b;
  b.languages = generate_languages(s.languages, s.families, derive_seed(seed, {kLanguagesStream}));
  CorpusOptions co;
  co.marker_noise = s.marker_noise;
  b.train = generate_corpus(b.languages.specs, s.train_per_lang, s.classes, derive_seed(seed, {kTrainStream}),
                            cfg.task, co);
  b.test = generate_corpus(b.languages.specs, s.test_per_lang, s.classes, derive_seed(seed, {kTestStream}),
                           cfg.task, co);
  return b;
}

PreparedData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  PreparedData d;
  Corpus train, test;
  std::vector<std::string> available;
  if (cfg.synthetic_data()) {
    SyntheticBenchmark b = generate_benchmark(cfg, seed);
    train = std::move(b.train);
    test = std::move(b.test);
    d.store = std::move(b.languages.store);
    d.specs = std::move(b.languages.specs);
    for (const auto& spec : d.specs) available.push_back(spec.lang);
    d.unseen = cfg.unseen_langs.empty() ? default_unseen_languages(cfg.synthetic) : cfg.unseen_langs;
  } else {
    d.store = UrielStore::load_tsv(cfg.store_files);
    train = read_corpus_tsv(*cfg.train_corpus, cfg.task);
    test = read_corpus_tsv(*cfg.test_corpus, cfg.task);
    available = train.languages();
    d.unseen = cfg.unseen_langs;
    if (d.unseen.empty()) {
      for (const auto& l : test.languages()) {
        if (!contains(available, l) && !contains(cfg.seen_langs, l)) d.unseen.push_back(l);
      }
    }
  }
  if (cfg.seen_langs.empty()) {
    for (const auto& l : available) {
      if (!contains(d.unseen, l)) d.seen.push_back(l);
    }
  } else {
    d.seen = cfg.seen_langs;
  }
  if (d.seen.empty()) throw DataError("no training languages left after removing the unseen set");

  d.train = filter_languages(train, d.seen);
  const auto train_langs = d.train.languages();
  for (const auto& l : d.seen) {
    if (!contains(train_langs, l)) throw DataError("seen language " + l + " has no training examples");
    if (!d.store.has_language(l)) throw DataError("seen language " + l + " has no linguistic vector");
  }
  std::vector<std::string> evaluated = d.seen;
  evaluated.insert(evaluated.end(), d.unseen.begin(), d.unseen.end());
  d.test = filter_languages(test, evaluated);
  const auto test_langs = d.test.languages();
  for (const auto& l : evaluated) {
    if (!contains(test_langs, l)) throw DataError("language " + l + " has no test examples");
  }
  if (cfg.task == Task::Classification) {
    d.train.n_classes = d.test.n_classes = std::max(train.n_classes, test.n_classes);
  }
  d.vocab = Vocab::build(d.train);
  return d;
}

std::string_view task_metric(Task task) { return task == Task::Classification ? "accuracy" : "pearson"; }

double MetricsReport::mean(std::string_view split) const {
  for (const auto& r : rows) {
    if (r.lang == kMean && r.split == split && r.metric != kUnk) return r.value;
  }
  throw LookupError("report has no mean for split '" + std::string(split) + "'");
}

std::optional<double> MetricsReport::value(std::string_view lang, std::string_view split,
                                           std::string_view metric) const {
  for (const auto& r : rows) {
    if (r.lang == lang && r.split == split && r.metric == metric) return r.value;
  }
  return std::nullopt;
}

ModelConfig model_config(const ExperimentConfig& cfg, const PreparedData& data, std::uint64_t seed) {
  ModelConfig m;
  m.encoder.vocab_size = data.vocab.size();
  m.encoder.d_model = cfg.d_model;
  m.encoder.n_heads = cfg.n_heads;
  m.encoder.n_layers = cfg.n_layers;
  m.encoder.max_seq_len = cfg.max_seq_len;
  m.encoder.dropout = cfg.dropout;
  m.encoder.seed = seed;
  m.task = cfg.task;
  m.n_classes = cfg.task == Task::Classification ? std::max<std::size_t>(2, data.train.n_classes) : 1;
  m.d_uriel = data.store.dim(cfg.feature_sets);
  if (cfg.projection_init == ProjectionInit::TargetMean) {
    m.projection_bias.assign(m.d_uriel, 0.0);
    for (const auto& l : data.seen) {
      const auto v = data.store.get_vector(l, cfg.feature_sets).values;
      for (std::size_t j = 0; j < v.size(); ++j) m.projection_bias[j] += v[j] / static_cast<double>(data.seen.size());
    }
    m.projection_weight_scale = 0.1;
  }
  return m;
}

ScalingState scaling_state(const ExperimentConfig& cfg) {
  switch (cfg.scaling) {
    case ScalingMode::Constant:
      return ScalingState::constant(cfg.scaling_factor);
    case ScalingMode::Balanced:
      return ScalingState::balanced(cfg.scaling_beta, cfg.scaling_period);
    case ScalingMode::Learned:
      return ScalingState::learned();
  }
  throw ConfigError("unknown scaling mode");
}

std::vector<MetricRow> evaluate(const AlchemyModel& model, const PreparedData& data, std::size_t max_seq_len,
                                const std::map<std::string, std::string>& categories) {
  const Task task = model.config().task;
  const std::string metric(task_metric(task));
  std::vector<MetricRow> rows;
  for (const std::string split : {"seen", "unseen"}) {
    const auto& langs = split == "seen" ? data.seen : data.unseen;
    for (const auto& lang : langs) {
      const Corpus sub = filter_languages(data.test, {lang});
      const auto enc = encode(sub, data.vocab, max_seq_len);
      double value = 0.0;
      if (task == Task::Classification) {
        std::vector<std::size_t> gold;
        for (const auto& e : enc) gold.push_back(e.label);
        value = accuracy(predict_classes(model, enc), gold);
      } else {
        std::vector<double> gold;
        for (const auto& e : enc) gold.push_back(e.target);
        value = pearson(predict_scores(model, enc), gold);
      }
      rows.push_back({lang, split, metric, value});
      const auto unk = unk_rate(sub, data.vocab);
      const auto it = unk.find(lang);
      rows.push_back({lang, split, std::string(kUnk), it == unk.end() ? 0.0 : it->second});
    }
  }

  // Aggregates: plain means over member languages.
  std::set<std::string> tags;
  for (const auto& [lang, tag] : categories) tags.insert(tag);
  const std::size_t n_lang_rows = rows.size();
  for (const std::string split : {"seen", "unseen"}) {
    std::vector<std::pair<std::string, std::function<bool(const std::string&)>>> groups;
    groups.emplace_back(std::string(kMean), [](const std::string&) { return true; });
    for (const auto& tag : tags) {
      groups.emplace_back("@" + tag, [&categories, tag](const std::string& lang) {
        const auto it = categories.find(lang);
        return it != categories.end() && it->second == tag;
      });
    }
    for (const auto& [name, member] : groups) {
      for (const std::string& m : {metric, std::string(kUnk)}) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < n_lang_rows; ++i) {
          const auto& r = rows[i];
          if (r.split == split && r.metric == m && member(r.lang)) {
            sum += r.value;
            ++n;
          }
        }
        if (n > 0) rows.push_back({name, split, m, sum / static_cast<double>(n)});
      }
    }
  }
  return rows;
}

namespace {

struct TrainedRun {
  AlchemyModel model;
  PreparedData data;
  std::vector<TraceRow> trace;
};

TrainedRun train_run(const ExperimentConfig& cfg, std::uint64_t seed) {
  PreparedData data = prepare_data(cfg, seed);
  AlchemyModel model(model_config(cfg, data, seed));
  const auto enc = encode(data.train, data.vocab, cfg.max_seq_len);
  ScalingState scaling = scaling_state(cfg);
  TrainOptions opts;
  opts.epochs = cfg.epochs;
  opts.batch_size = cfg.batch_size;
  opts.lr = cfg.lr;
  opts.weight_decay = cfg.weight_decay;
  opts.seed = seed;
  auto result = train_loop(model, enc, &data.store, cfg.feature_sets, scaling, opts);
  return {std::move(model), std::move(data), std::move(result.trace)};
}

}  // namespace

MetricsReport run_experiment(const ExperimentConfig& cfg, std::uint64_t seed,
                             const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TrainedRun run = train_run(cfg, seed);

  MetricsReport report;
  report.rows = evaluate(run.model, run.data, cfg.max_seq_len, cfg.categories);
  report.trace = std::move(run.trace);
  report.config_hash = config_hash(cfg);
  report.resolved_config = serialize_config(cfg);
  report.seed = seed;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (out_dir) {
    namespace fs = std::filesystem;
    const fs::path staging = out_dir->string() + ".partial-" + std::to_string(::getpid());
    try {
      fs::remove_all(staging);
      fs::create_directories(staging);
      export_report(report, staging);
      ad::save_params(staging / "model.ckpt", run.model.parameters());
      run.data.vocab.save(staging / "vocab.txt");
      fs::create_directories(*out_dir);
      for (const auto& entry : fs::directory_iterator(staging)) {
        fs::rename(entry.path(), *out_dir / entry.path().filename());
      }
      fs::remove_all(staging);
    } catch (...) {
      std::error_code ec;
      fs::remove_all(staging, ec);
      throw;
    }
  }
  return report;
}

MetricsReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  return run_experiment(cfg, cfg.seeds.front());
}

namespace {

std::vector<std::vector<std::string>> resolved_groups(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (!cfg.family_groups.empty()) return cfg.family_groups;
  if (!cfg.synthetic_data()) {
    throw ConfigError("languages.group: family groups are required with file-based data");
  }
  // Cumulative groups over the synthetic families, in family order.
  const PreparedData d = prepare_data(cfg, seed);
  std::vector<std::vector<std::string>> groups;
  std::vector<std::string> acc;
  for (std::size_t f = 0; f < cfg.synthetic.families; ++f) {
    for (const auto& spec : d.specs) {
      if (spec.family == f && contains(d.seen, spec.lang)) acc.push_back(spec.lang);
    }
    groups.push_back(acc);
  }
  return groups;
}

}  // namespace

std::vector<MetricsReport> family_split_experiment(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<MetricsReport> out;
  for (const auto& group : resolved_groups(cfg, seed)) {
    ExperimentConfig g = cfg;
    g.seen_langs = group;
    g.family_groups.clear();
    if (g.unseen_langs.empty() && g.synthetic_data()) g.unseen_langs = default_unseen_languages(g.synthetic);
    out.push_back(run_experiment(g, seed));
  }
  return out;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  std::size_t width = threads != 0 ? threads : std::max(1u, std::thread::hardware_concurrency());
  width = std::min(width, n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (width == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < width; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double SweepRow::seen_mean() const { return mean_of(seen); }
double SweepRow::unseen_mean() const { return mean_of(unseen); }

const SweepRow& SweepTable::row(std::string_view setting) const {
  for (const auto& r : rows) {
    if (r.setting == setting) return r;
  }
  throw LookupError("sweep " + name + " has no row '" + std::string(setting) + "'");
}

std::vector<double> SweepTable::paired_deltas(std::string_view setting) const {
  const auto& r = row(setting);
  const auto& b = rows.at(baseline);
  std::vector<double> out;
  for (std::size_t i = 0; i < r.unseen.size(); ++i) out.push_back(r.unseen[i] - b.unseen[i]);
  return out;
}

namespace {

struct Variant {
  std::string setting;
  ExperimentConfig cfg;
  bool flagged = false;
};

SweepTable run_variants(const std::string& name, const ExperimentConfig& base, const std::vector<Variant>& variants,
                        std::size_t baseline) {
  base.validate();
  SweepTable table;
  table.name = name;
  table.metric = std::string(task_metric(base.task));
  table.seeds = base.seeds;
  table.baseline = baseline;
  const std::size_t n_seeds = base.seeds.size();
  for (const auto& v : variants) {
    v.cfg.validate();
    table.rows.push_back({v.setting, std::vector<double>(n_seeds), std::vector<double>(n_seeds), v.flagged});
  }
  parallel_for(variants.size() * n_seeds, base.threads, [&](std::size_t job) {
    const std::size_t vi = job / n_seeds, si = job % n_seeds;
    const MetricsReport r = run_experiment(variants[vi].cfg, base.seeds[si]);
    table.rows[vi].seen[si] = r.mean("seen");
    table.rows[vi].unseen[si] = r.mean("unseen");
  });
  return table;
}

std::string factor_label(double f) { return "constant_" + format_double(f); }

}  // namespace

SweepTable scaling_sweep(const ExperimentConfig& cfg) {
  std::vector<Variant> variants;
  for (double f : kScalingFactors) {
    ExperimentConfig c = cfg;
    c.scaling = ScalingMode::Constant;
    c.scaling_factor = f;
    variants.push_back({factor_label(f), c});
  }
  for (ScalingMode m : {ScalingMode::Balanced, ScalingMode::Learned}) {
    ExperimentConfig c = cfg;
    c.scaling = m;
    variants.push_back({std::string(to_string(m)), c});
  }
  return run_variants("scaling", cfg, variants, 0);
}

SweepTable ablation_sweep(const ExperimentConfig& cfg) {
  using F = FeatureSet;
  const std::vector<std::vector<F>> combos{
      {F::Geo},
      {F::SyntaxAverage, F::Geo},
      {F::SyntaxAverage},
      {F::SyntaxKnn, F::Geo},
      {F::SyntaxKnn},
      {F::SyntaxKnn, F::SyntaxAverage, F::Geo},
      {F::SyntaxKnn, F::SyntaxAverage},
  };
  std::vector<Variant> variants;
  std::size_t full = 0;
  for (const auto& sets : combos) {
    ExperimentConfig c = cfg;
    c.feature_sets = sets;
    const bool all = sets.size() == 3;
    if (all) full = variants.size();
    variants.push_back({join_feature_sets(sets), c, all});
  }
  return run_variants("features", cfg, variants, full);
}

SweepTable family_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<Variant> variants;
  const auto groups = resolved_groups(cfg, cfg.seeds.front());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    ExperimentConfig c = cfg;
    c.seen_langs = groups[g];
    c.family_groups.clear();
    if (c.unseen_langs.empty() && c.synthetic_data()) c.unseen_langs = default_unseen_languages(c.synthetic);
    variants.push_back({"group" + std::to_string(g + 1), c});
  }
  return run_variants("family", cfg, variants, 0);
}

}  // namespace typoreg
