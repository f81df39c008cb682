#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "typoreg/error.hpp"
#include "typoreg/synthlang.hpp"

using namespace typoreg;
namespace fs = std::filesystem;

namespace {

const std::vector<FeatureSet> kSyntax{FeatureSet::SyntaxKnn, FeatureSet::SyntaxAverage};

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("great-circle features") {
  const GeoPoint here{0.3, -1.2};
  CHECK(normalized_great_circle(here, here) == 0.0);
  CHECK(normalized_great_circle({0.4, 0.5}, {-0.4, 0.5 - std::numbers::pi}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(normalized_great_circle({0.0, 0.0}, {0.0, std::numbers::pi / 2}) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(geo_anchors().size() == 5);
}

TEST_CASE("language generation") {
  auto a = generate_languages(12, 3, 42);
  auto b = generate_languages(12, 3, 42);
  CHECK(a.store == b.store);
  REQUIRE(a.specs.size() == 12);
  CHECK(a.specs[0].lang == "syn00");
  CHECK(a.specs[11].lang == "syn11");
  CHECK(a.store.list_languages().size() == 12);
  CHECK(a.store.dim(FeatureSet::SyntaxKnn) == 4);
  CHECK(a.store.dim(FeatureSet::SyntaxAverage) == 4);
  CHECK(a.store.dim(FeatureSet::Geo) == 5);
  CHECK_FALSE(generate_languages(12, 3, 43).store == a.store);

  for (const auto& s : a.specs) {
    // The syntax_average row is the family centroid.
    const auto c = a.store.get_vector(s.lang, std::vector<FeatureSet>{FeatureSet::SyntaxAverage}).values;
    for (std::size_t k = 0; k < SyntaxParams::kSize; ++k) {
      CHECK(std::abs(s.syntax.values[k] - c[k]) <= 0.2);
      CHECK(s.syntax.values[k] >= 0.0);
      CHECK(s.syntax.values[k] <= 1.0);
    }
  }

  CHECK_THROWS_AS(generate_languages(2, 3, 1), ArgumentError);
  CHECK_THROWS_AS(generate_languages(3, 0, 1), ArgumentError);
  CHECK(generate_languages(1, 1, 1).store.list_languages().size() == 1);
}

TEST_CASE("syntax_knn is the mean of the three nearest parameter vectors") {
  auto g = generate_languages(6, 2, 9);
  const auto& s = g.specs;
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (j == i) continue;
      double acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k) acc += std::pow(s[i].syntax.values[k] - s[j].syntax.values[k], 2);
      d.emplace_back(acc, j);
    }
    std::sort(d.begin(), d.end());
    const auto knn = g.store.get_vector(s[i].lang, std::vector<FeatureSet>{FeatureSet::SyntaxKnn}).values;
    for (std::size_t k = 0; k < 4; ++k) {
      const double expect = (s[d[0].second].syntax.values[k] + s[d[1].second].syntax.values[k] +
                             s[d[2].second].syntax.values[k]) / 3.0;
      CHECK(knn[k] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("families are mutually nearer than outsiders") {
  std::size_t good = 0, total = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto g = generate_languages(12, 3, seed);
    std::map<std::string, std::size_t> family;
    for (const auto& s : g.specs) family[s.lang] = s.family;
    for (const auto& a : g.specs) {
      const auto all = g.store.nearest_languages(a.lang, kSyntax, 11);
      double nearest_out = 1e300;
      for (const auto& [lang, dist] : all) {
        if (family[lang] != a.family) nearest_out = std::min(nearest_out, dist);
      }
      for (const auto& [lang, dist] : all) {
        if (family[lang] != a.family) continue;
        ++total;
        good += dist < nearest_out ? 1 : 0;
      }
    }
  }
  CHECK(static_cast<double>(good) >= 0.95 * static_cast<double>(total));
}

TEST_CASE("generated store survives a TSV round trip") {
  auto g = generate_languages(12, 3, 5);
  auto dir = fresh_dir("typoreg_synth_store");
  std::map<FeatureSet, fs::path> files;
  for (FeatureSet s : kAllFeatureSets) {
    files[s] = dir / (std::string(to_string(s)) + ".tsv");
    g.store.write_tsv(s, files[s]);
  }
  CHECK(UrielStore::load_tsv(files) == g.store);
  fs::remove_all(dir);
}

TEST_CASE("corpus generation") {
  auto langs = generate_languages(4, 2, 3).specs;
  auto c1 = generate_corpus(langs, 23, 4, 11, Task::Classification);
  auto c2 = generate_corpus(langs, 23, 4, 11, Task::Classification);
  CHECK(c1 == c2);
  CHECK(c1.examples.size() == 4 * 23);
  CHECK(c1.n_classes == 4);
  CHECK_FALSE(generate_corpus(langs, 23, 4, 12, Task::Classification) == c1);

  for (const auto& l : langs) {
    std::vector<int> hist(4, 0);
    for (const auto& e : c1.examples) {
      if (e.lang == l.lang) ++hist[e.class_index()];
    }
    CHECK(*std::max_element(hist.begin(), hist.end()) - *std::min_element(hist.begin(), hist.end()) <= 1);
  }

  CHECK_THROWS_AS(generate_corpus(langs, 10, 1, 1, Task::Classification), ArgumentError);
  CHECK_THROWS_AS(generate_corpus(langs, 0, 4, 1, Task::Classification), ArgumentError);
  CHECK_THROWS_AS(generate_corpus({}, 10, 4, 1, Task::Classification), ArgumentError);
}

TEST_CASE("equal parameters without lexicon shift give equal text") {
  SynthLanguageSpec a;
  a.lang = "twin1";
  a.syntax.values = {0.3, 0.6, 0.0, 0.2};
  SynthLanguageSpec b = a;
  b.lang = "twin2";
  b.latitude = 1.0;
  auto c = generate_corpus({a, b}, 40, 3, 8, Task::Classification);
  for (std::size_t i = 0; i < 40; ++i) {
    CHECK(c.examples[i].tokens == c.examples[40 + i].tokens);
    CHECK(c.examples[i].label == c.examples[40 + i].label);
  }
  b.syntax.values[2] = 1.0;
  auto shifted = generate_corpus({a, b}, 40, 3, 8, Task::Classification);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < 40; ++i) differ += shifted.examples[i].tokens != shifted.examples[40 + i].tokens;
  CHECK(differ > 0);
}

TEST_CASE("relatedness pairs") {
  auto langs = generate_languages(3, 1, 3).specs;
  auto c = generate_corpus(langs, 30, 4, 2, Task::Relatedness);
  CHECK(c.task == Task::Relatedness);
  CHECK(c.n_classes == 0);
  bool saw_high = false, saw_low = false;
  for (const auto& e : c.examples) {
    CHECK(e.label >= 0.0);
    CHECK(e.label <= 1.0);
    CHECK(std::count(e.tokens.begin(), e.tokens.end(), std::string(kPairSeparator)) == 1);
    saw_high |= e.label > 0.5;
    saw_low |= e.label < 0.3;
  }
  CHECK(saw_high);
  CHECK(saw_low);
}

TEST_CASE("tokenize") {
  Corpus c;
  c.examples.push_back({"x", 0, {"a", "b"}});
  auto v = Vocab::build(c);
  CHECK(v.size() == 4);
  CHECK(v.id("a") == 2);
  CHECK(v.id("b") == 3);
  CHECK(tokenize(v, {"a", "b", "a"}) == std::vector<std::int32_t>{0, 2, 3, 2});
  CHECK(tokenize(v, {"x"}) == std::vector<std::int32_t>{0, 1});
  CHECK(tokenize(v, {}) == std::vector<std::int32_t>{0});
}

TEST_CASE("UNK rates") {
  Corpus train;
  train.examples.push_back({"aa", 0, {"t0", "t1", "t2", "t3"}});
  auto vocab = Vocab::build(train);

  Corpus c;
  c.examples.push_back({"aa", 0, {"t0", "t1", "t2", "t3"}});
  std::vector<std::string> toks;
  for (int i = 0; i < 41; ++i) toks.push_back("t" + std::to_string(i % 4));
  toks.insert(toks.end(), {"u1", "u2", "u3"});
  c.examples.push_back({"bb", 1, toks});
  c.examples.push_back({"cc", 1, {"z", "y"}});
  c.examples.push_back({"dd", 1, {}});
  std::vector<std::string> warnings;
  auto r = unk_rate(c, vocab, &warnings);
  CHECK(r.size() == 3);
  CHECK(r.at("aa") == 0.00);
  CHECK(r.at("bb") == 6.82);
  CHECK(r.at("cc") == 100.00);
  CHECK(r.count("dd") == 0);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("dd") != std::string::npos);
}

TEST_CASE("vocabulary from seen languages only") {
  auto g = generate_languages(12, 3, 7);
  auto corpus = generate_corpus(g.specs, 40, 4, 1, Task::Classification);
  const std::vector<std::string> seen{"syn00", "syn01", "syn02", "syn04", "syn05", "syn07", "syn08", "syn10"};
  auto seen_vocab = Vocab::build(corpus, seen);
  auto full_vocab = Vocab::build(corpus);
  auto full = unk_rate(corpus, full_vocab);
  for (const auto& [lang, rate] : full) CHECK(rate == 0.0);
  auto partial = unk_rate(corpus, seen_vocab);
  for (const auto& l : seen) CHECK(partial.at(l) == 0.0);
  double unseen_total = 0.0;
  for (const char* l : {"syn03", "syn06", "syn09", "syn11"}) unseen_total += partial.at(l);
  CHECK(unseen_total > 0.0);

  for (const auto& e : encode(corpus, seen_vocab, 32)) {
    for (auto id : e.ids) CHECK(static_cast<std::size_t>(id) < seen_vocab.size());
  }

  auto dir = fresh_dir("typoreg_synth_vocab");
  seen_vocab.save(dir / "vocab.txt");
  auto back = Vocab::load(dir / "vocab.txt");
  CHECK(back == seen_vocab);
  CHECK(back.id("w1.0") == seen_vocab.id("w1.0"));
  std::ofstream(dir / "bad.txt") << "<cls>\n<unk>\nfoo\nfoo\n";
  CHECK_THROWS_AS(Vocab::load(dir / "bad.txt"), ParseError);
  fs::remove_all(dir);
}

TEST_CASE("encode truncates and carries labels") {
  Corpus c;
  c.task = Task::Classification;
  c.n_classes = 3;
  c.examples.push_back({"aa", 2, {"a", "b", "c", "d"}});
  auto v = Vocab::build(c);
  auto e = encode(c, v, 3);
  CHECK(e[0].ids.size() == 3);
  CHECK(e[0].label == 2);
  c.task = Task::Relatedness;
  c.examples[0].label = 0.25;
  CHECK(encode(c, v, 8)[0].target == 0.25);
}

TEST_CASE("corpus TSV round trip") {
  auto dir = fresh_dir("typoreg_synth_tsv");
  auto langs = generate_languages(3, 1, 3).specs;
  for (Task task : {Task::Classification, Task::Relatedness}) {
    auto c = generate_corpus(langs, 12, 3, 5, task);
    write_corpus_tsv(dir / "c.tsv", c);
    auto back = read_corpus_tsv(dir / "c.tsv", task);
    CHECK(back.examples == c.examples);
  }
  std::ofstream(dir / "bad.tsv") << "aa\t0\tx y\nbb\t1\n";
  try {
    (void)read_corpus_tsv(dir / "bad.tsv", Task::Classification);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  std::ofstream(dir / "label.tsv") << "aa\tx\tfoo\n";
  CHECK_THROWS_AS(read_corpus_tsv(dir / "label.tsv", Task::Classification), ParseError);
  fs::remove_all(dir);
}
