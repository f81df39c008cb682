#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "typoreg/error.hpp"
#include "typoreg/harness.hpp"

using namespace typoreg;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.synthetic.train_per_lang = 8;
  c.synthetic.test_per_lang = 6;
  c.epochs = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.max_seq_len = 16;
  c.seeds = {1};
  c.threads = 1;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("typoreg_harness_" + name);
  fs::remove_all(p);
  return p;
}

/// Minimal well-formedness oracle: balanced tags, quoted attributes, one root.
bool well_formed_xml(const std::string& s) {
  std::vector<std::string> stack;
  std::size_t i = 0, roots = 0;
  while ((i = s.find('<', i)) != std::string::npos) {
    const std::size_t end = s.find('>', i);
    if (end == std::string::npos) return false;
    std::string tag = s.substr(i + 1, end - i - 1);
    i = end + 1;
    if (tag.empty()) return false;
    if (tag.front() == '?') {
      if (tag.back() != '?') return false;
      continue;
    }
    if (std::count(tag.begin(), tag.end(), '"') % 2 != 0) return false;
    if (tag.front() == '/') {
      if (stack.empty() || stack.back() != tag.substr(1)) return false;
      stack.pop_back();
      continue;
    }
    const bool self_closing = tag.back() == '/';
    const std::string name = tag.substr(0, tag.find_first_of(" /"));
    if (stack.empty()) ++roots;
    if (!self_closing) stack.push_back(name);
  }
  // Text must not contain raw '&' that is not an entity.
  for (std::size_t a = s.find('&'); a != std::string::npos; a = s.find('&', a + 1)) {
    if (s.find(';', a) == std::string::npos) return false;
  }
  return stack.empty() && roots == 1;
}

}  // namespace

TEST_CASE("minimal config gets every default") {
  const auto cfg = parse_config_text("[experiment]\ntask = classification\n");
  CHECK(cfg == ExperimentConfig{});
  CHECK(cfg.scaling == ScalingMode::Constant);
  CHECK(cfg.scaling_factor == 10.0);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
  CHECK(cfg.synthetic_data());

  const auto files = parse_config_text(
      "[experiment]\ntask = relatedness\n[data]\ngeo = g.tsv\nsyntax_knn = k.tsv\nsyntax_average = a.tsv\n"
      "train_corpus = train.tsv\ntest_corpus = test.tsv\n");
  CHECK(files.task == Task::Relatedness);
  CHECK(files.store_files.size() == 3);
  CHECK(files.scaling_factor == 10.0);
  CHECK(files.epochs == ExperimentConfig{}.epochs);
}

TEST_CASE("config errors carry line numbers") {
  auto message = [](const std::string& text) {
    try {
      parse_config_text(text, "cfg");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message("[train]\nepochs = 3\nepochz = 4\n").rfind("cfg:3:", 0) == 0);
  CHECK(message("[train]\n\n# comment\nepochs = many\n").rfind("cfg:4:", 0) == 0);
  CHECK(message("[train]\nlr = 0.1x\n").rfind("cfg:2:", 0) == 0);
  CHECK(message("[nope]\n").rfind("cfg:1:", 0) == 0);
  CHECK(message("epochs = 3\n").rfind("cfg:1:", 0) == 0);
  CHECK(message("[train]\nepochs = 3\nepochs = 4\n").rfind("cfg:3:", 0) == 0);
  CHECK(message("[scaling]\nmode = fancy\n").rfind("cfg:2:", 0) == 0);
  CHECK(message("[features]\nsets = geo+phonology\n").rfind("cfg:2:", 0) == 0);
  CHECK(message("[model]\nd_model = 30\nn_heads = 4\n").find("cfg:2:") != std::string::npos);

  const auto overlap = message("[languages]\nseen = aa, bb, cc\n\nunseen = dd, cc, aa\n");
  CHECK(overlap.rfind("cfg:4:", 0) == 0);
  CHECK(overlap.find("aa") != std::string::npos);
  CHECK(overlap.find("cc") != std::string::npos);
  CHECK(overlap.find("bb") == std::string::npos);

  const auto groups = message("[languages]\ngroup = aa, bb\ngroup = aa, cc\n");
  CHECK(groups.find("not cumulative") != std::string::npos);
  CHECK(groups.find("bb") != std::string::npos);
  CHECK(message("[languages]\ngroup = aa\ngroup = aa, bb\n") == "no error");

  CHECK(message("[data]\ngeo = g.tsv\ntrain_corpus = t.tsv\ntest_corpus = u.tsv\n").find("syntax_knn") !=
        std::string::npos);
  CHECK_THROWS_AS(parse_config(fs::temp_directory_path() / "typoreg_no_such_config.ini"), ConfigError);
}

TEST_CASE("serialize then parse is the identity") {
  ExperimentConfig c;
  c.task = Task::Relatedness;
  c.feature_sets = {FeatureSet::Geo, FeatureSet::SyntaxKnn};
  c.scaling = ScalingMode::Balanced;
  c.scaling_factor = 0.1 + 0.2;  // not exactly representable in short decimal
  c.scaling_beta = 0.95;
  c.scaling_period = 7;
  c.epochs = 3;
  c.lr = 3e-4;
  c.seeds = {9, 4};
  c.seen_langs = {"aa", "bb", "cc"};
  c.unseen_langs = {"dd"};
  c.family_groups = {{"aa"}, {"aa", "bb"}, {"aa", "bb", "cc"}};
  c.categories = {{"aa", "low"}, {"dd", "high"}};
  c.store_files = {{FeatureSet::Geo, "geo.tsv"}, {FeatureSet::SyntaxKnn, "dir with space/knn.tsv"}};
  c.train_corpus = "train.tsv";
  c.test_corpus = "test.tsv";
  c.projection_init = ProjectionInit::Uniform;
  c.output_dir = "results/x";
  c.threads = 3;
  const std::string text = serialize_config(c);
  const auto back = parse_config_text(text);
  CHECK(back == c);
  CHECK(serialize_config(back) == text);
  CHECK(config_hash(back) == config_hash(c));

  const auto defaults = parse_config_text(serialize_config(ExperimentConfig{}));
  CHECK(defaults == ExperimentConfig{});
  ExperimentConfig other = c;
  other.epochs = 4;
  CHECK(config_hash(other) != config_hash(c));
  CHECK(config_hash(c).size() == 16);
}

TEST_CASE("accuracy and tie-break") {
  const std::vector<std::size_t> gold{0, 1, 2, 3};
  CHECK(accuracy(gold, gold) == 1.0);
  const std::vector<std::size_t> three{0, 1, 2, 0};
  CHECK(accuracy(three, gold) == 0.75);
  CHECK_THROWS_AS(accuracy(std::vector<std::size_t>{0}, gold), ArgumentError);
  CHECK_THROWS_AS(accuracy(std::vector<std::size_t>{}, std::vector<std::size_t>{}), ArgumentError);
  const std::vector<double> tie{0.5, 0.5};
  CHECK(argmax(tie) == 0);
}

TEST_CASE("pearson examples") {
  const std::vector<double> x{1, 2, 3};
  CHECK(pearson(x, x) == doctest::Approx(1.0));
  const std::vector<double> neg{-1, -2, -3};
  CHECK(pearson(x, neg) == doctest::Approx(-1.0));
  const std::vector<double> y{1, 2, 4};
  CHECK(pearson(x, y) == doctest::Approx(0.9820).epsilon(1e-4));
  // Hand computation: sxy = 3, sxx = 2, syy = 14/3.
  CHECK(pearson(x, y) == doctest::Approx(3.0 / std::sqrt(2.0 * 14.0 / 3.0)).epsilon(1e-12));
  CHECK_THROWS_AS(pearson(x, std::vector<double>{2, 2, 2}), NumericError);
  CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{1}), ArgumentError);
  CHECK_THROWS_AS(pearson(x, std::vector<double>{1, 2}), ArgumentError);
}

TEST_CASE("parallel_for covers every index and bounds the pool") {
  for (std::size_t threads : {0u, 1u, 3u}) {
    std::vector<int> hits(50, 0);
    std::mutex mu;
    std::set<std::thread::id> ids;
    parallel_for(hits.size(), threads, [&](std::size_t i) {
      std::lock_guard<std::mutex> lock(mu);
      ++hits[i];
      ids.insert(std::this_thread::get_id());
    });
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
    if (threads != 0) CHECK(ids.size() <= threads);
  }
  try {
    parallel_for(10, 2, [](std::size_t i) {
      if (i == 7) throw DataError("seven");
      if (i == 3) throw NumericError("three");
    });
    FAIL("expected an exception");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()) == "three");
  }
  parallel_for(0, 4, [](std::size_t) { FAIL("no work expected"); });
}

TEST_CASE("prepared data respects the split") {
  const auto cfg = tiny_config();
  const auto d = prepare_data(cfg, 1);
  CHECK(d.unseen == default_unseen_languages(cfg.synthetic));
  CHECK(d.unseen == std::vector<std::string>{"syn08", "syn09", "syn10", "syn11"});
  CHECK(d.seen.size() == 8);
  for (const auto& l : d.train.languages()) {
    CHECK(std::find(d.seen.begin(), d.seen.end(), l) != d.seen.end());
  }
  CHECK(d.test.languages().size() == 12);
  CHECK(d.train.examples.size() == 8 * 8);

  ExperimentConfig bad = cfg;
  bad.seen_langs = {"syn00", "nope"};
  CHECK_THROWS_AS(prepare_data(bad, 1), DataError);
}

TEST_CASE("run_experiment report contract") {
  const auto cfg = tiny_config();
  const auto r = run_experiment(cfg, 1);
  const auto d = prepare_data(cfg, 1);
  for (const auto& split : {std::string("seen"), std::string("unseen")}) {
    const auto& langs = split == "seen" ? d.seen : d.unseen;
    double sum = 0.0;
    for (const auto& l : langs) {
      const auto v = r.value(l, split, "accuracy");
      REQUIRE(v);
      CHECK(*v >= 0.0);
      CHECK(*v <= 1.0);
      CHECK(r.value(l, split, "unk_pct"));
      sum += *v;
    }
    CHECK(std::abs(r.mean(split) - sum / static_cast<double>(langs.size())) <= 1e-12);
  }
  // Per-language rows: 2 metrics x 12 languages, then 2 metrics x 2 splits of means.
  CHECK(r.rows.size() == 2 * 12 + 2 * 2);
  CHECK(r.trace.size() == cfg.epochs);
  CHECK(r.config_hash == config_hash(cfg));
  // Unseen languages get UNK tokens from their shifted word forms or unseen markers.
  double unk_unseen = 0.0;
  for (const auto& l : d.unseen) unk_unseen += *r.value(l, "unseen", "unk_pct");
  CHECK(unk_unseen >= 0.0);

  // Determinism.
  const auto again = run_experiment(cfg, 1);
  CHECK(again.rows == r.rows);
}

TEST_CASE("category aggregates are means of their members") {
  auto cfg = tiny_config();
  cfg.categories = {{"syn00", "low"}, {"syn01", "low"}, {"syn08", "low"}, {"syn02", "high"}};
  const auto r = run_experiment(cfg, 2);
  const double low_seen = (*r.value("syn00", "seen", "accuracy") + *r.value("syn01", "seen", "accuracy")) / 2.0;
  CHECK(std::abs(*r.value("@low", "seen", "accuracy") - low_seen) <= 1e-12);
  CHECK(*r.value("@low", "unseen", "accuracy") == *r.value("syn08", "unseen", "accuracy"));
  CHECK(*r.value("@high", "seen", "accuracy") == *r.value("syn02", "seen", "accuracy"));
  CHECK_FALSE(r.value("@high", "unseen", "accuracy"));
}

TEST_CASE("constant zero equals a regularizer-free run") {
  auto cfg = tiny_config();
  cfg.scaling_factor = 0.0;
  const auto with_zero = run_experiment(cfg, 3);

  const PreparedData data = prepare_data(cfg, 3);
  AlchemyModel plain(model_config(cfg, data, 3));
  const auto enc = encode(data.train, data.vocab, cfg.max_seq_len);
  ScalingState none = ScalingState::constant(0.0);
  TrainOptions opts;
  opts.epochs = cfg.epochs;
  opts.batch_size = cfg.batch_size;
  opts.lr = cfg.lr;
  opts.weight_decay = cfg.weight_decay;
  opts.seed = 3;
  train_loop(plain, enc, nullptr, cfg.feature_sets, none, opts);
  CHECK(evaluate(plain, data, cfg.max_seq_len) == with_zero.rows);
}

TEST_CASE("evaluation never consults the linguistic store") {
  const auto cfg = tiny_config();
  PreparedData data = prepare_data(cfg, 4);
  AlchemyModel model(model_config(cfg, data, 4));
  ScalingState s = scaling_state(cfg);
  TrainOptions opts;
  opts.epochs = 1;
  opts.seed = 4;
  const auto enc = encode(data.train, data.vocab, cfg.max_seq_len);
  train_loop(model, enc, &data.store, cfg.feature_sets, s, opts);
  const auto before = evaluate(model, data, cfg.max_seq_len);
  data.store = UrielStore{};
  CHECK(evaluate(model, data, cfg.max_seq_len) == before);
}

TEST_CASE("run outputs and re-export are deterministic") {
  const auto cfg = tiny_config();
  const fs::path dir = scratch("run");
  const auto r = run_experiment(cfg, 1, dir);
  for (const char* f : {"report.csv", "trace.csv", "config.resolved", "plot.svg", "model.ckpt", "vocab.txt"}) {
    CHECK(fs::exists(dir / f));
  }
  const std::string report = slurp(dir / "report.csv");
  CHECK(std::count(report.begin(), report.end(), '\n') == static_cast<long>(r.rows.size() + 1));
  CHECK(report.rfind("lang,split,metric,value\n", 0) == 0);
  CHECK(well_formed_xml(slurp(dir / "plot.svg")));
  CHECK(parse_config(dir / "config.resolved") == cfg);

  const fs::path again = scratch("reexport");
  export_report(r, again);
  for (const char* f : {"report.csv", "trace.csv", "config.resolved", "plot.svg"}) {
    CHECK(slurp(dir / f) == slurp(again / f));
  }
  export_report(r, again);
  CHECK(slurp(dir / "plot.svg") == slurp(again / "plot.svg"));

  // Second full run: report.csv byte-identical.
  const fs::path second = scratch("run2");
  run_experiment(cfg, 1, second);
  CHECK(slurp(second / "report.csv") == report);
  fs::remove_all(dir);
  fs::remove_all(again);
  fs::remove_all(second);
}

TEST_CASE("failed run leaves no partial outputs") {
  auto cfg = tiny_config();
  const fs::path base = scratch("fail");
  fs::create_directories(base);
  {
    std::ofstream blocker(base / "taken");
    blocker << "x";
  }
  // The output path is an existing file, so publishing fails after staging.
  CHECK_THROWS(run_experiment(cfg, 1, base / "taken"));
  std::size_t entries = 0;
  for (const auto& e : fs::directory_iterator(base)) {
    (void)e;
    ++entries;
  }
  CHECK(entries == 1);

  cfg.seen_langs = {"syn00", "missing"};
  CHECK_THROWS_AS(run_experiment(cfg, 1, base / "out"), DataError);
  CHECK_FALSE(fs::exists(base / "out"));
  fs::remove_all(base);
}

TEST_CASE("family split experiment") {
  auto cfg = tiny_config();
  cfg.family_groups = {{"syn00", "syn03"}};
  const auto one = family_split_experiment(cfg, 1);
  REQUIRE(one.size() == 1);
  ExperimentConfig plain = cfg;
  plain.family_groups.clear();
  plain.seen_langs = {"syn00", "syn03"};
  plain.unseen_langs = default_unseen_languages(cfg.synthetic);
  CHECK(one.front().rows == run_experiment(plain, 1).rows);

  cfg.family_groups = {{"syn00", "syn03"}, {"syn00", "syn03", "syn01", "syn04"}};
  const auto two = family_split_experiment(cfg, 1);
  REQUIRE(two.size() == 2);
  auto unseen_langs = [](const MetricsReport& r) {
    std::vector<std::string> out;
    for (const auto& row : r.rows) {
      if (row.split == "unseen" && row.lang.front() != '@' && row.metric == "accuracy") out.push_back(row.lang);
    }
    return out;
  };
  CHECK(unseen_langs(two[0]) == unseen_langs(two[1]));
  CHECK(unseen_langs(two[0]).size() == 4);

  // Default groups follow the synthetic families cumulatively.
  cfg.family_groups.clear();
  const auto table = family_sweep(cfg);
  CHECK(table.rows.size() == cfg.synthetic.families);
}

TEST_CASE("ablation sweep rows") {
  auto cfg = tiny_config();
  cfg.seeds = {1, 2};
  const auto t = ablation_sweep(cfg);
  REQUIRE(t.rows.size() == 7);
  std::set<std::string> names;
  for (const auto& r : t.rows) names.insert(r.setting);
  CHECK(names.size() == 7);
  CHECK(t.rows.front().setting == "geo");
  const auto& best = t.row("syntax_knn+syntax_avg+geo");
  CHECK(best.flagged);
  CHECK(std::count_if(t.rows.begin(), t.rows.end(), [](const SweepRow& r) { return r.flagged; }) == 1);

  // Each row is reproducible on its own.
  ExperimentConfig single = cfg;
  single.feature_sets = {FeatureSet::SyntaxKnn, FeatureSet::Geo};
  const auto& row = t.row("syntax_knn+geo");
  CHECK(row.unseen[1] == run_experiment(single, 2).mean("unseen"));
  CHECK(row.seen[0] == run_experiment(single, 1).mean("seen"));

  const fs::path dir = scratch("sweep");
  export_sweep(t, dir);
  const std::string summary = slurp(dir / "summary.csv");
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 8);
  const std::string per_seed = slurp(dir / "sweep.csv");
  CHECK(std::count(per_seed.begin(), per_seed.end(), '\n') == 1 + 7 * 2);
  CHECK(well_formed_xml(slurp(dir / "plot.svg")));
  fs::remove_all(dir);
}

TEST_CASE("scaling sweep rows") {
  auto cfg = tiny_config();
  cfg.epochs = 1;
  const auto t = scaling_sweep(cfg);
  REQUIRE(t.rows.size() == 7);
  CHECK(t.rows[0].setting == "constant_0");
  CHECK(t.rows[1].setting == "constant_10");
  CHECK(t.rows[4].setting == "constant_100");
  CHECK(t.rows[5].setting == "balanced");
  CHECK(t.rows[6].setting == "learned");
  CHECK(t.paired_deltas("constant_0") == std::vector<double>{0.0});
  ExperimentConfig c25 = cfg;
  c25.scaling_factor = 25.0;
  CHECK(t.row("constant_25").unseen[0] == run_experiment(c25, 1).mean("unseen"));
  CHECK_THROWS_AS(t.row("constant_7"), LookupError);
}

TEST_CASE("svg charts escape text and stay well formed") {
  const std::string line = svg_line_chart("a < b & c", {"x&y", "z"}, {{"s\"1", {0.2, 0.9}}, {"s2", {-0.5, 2.0}}});
  CHECK(well_formed_xml(line));
  CHECK(line.find("a &lt; b &amp; c") != std::string::npos);
  const std::string bars = svg_bar_chart("bars", {"a", "b"}, {0.1, std::nan("")}, {"seen", "unseen"});
  CHECK(well_formed_xml(bars));
  CHECK_THROWS_AS(svg_bar_chart("bars", {"a"}, {0.1, 0.2}, {"g", "g"}), ArgumentError);
  CHECK_FALSE(well_formed_xml("<svg><g></svg>"));
}
