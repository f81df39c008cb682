#include "typoreg/synthlang.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "typoreg/error.hpp"
#include "typoreg/rng.hpp"
#include "typoreg/text.hpp"

namespace typoreg {

namespace {

constexpr std::uint64_t kLanguageStream = 0x6c616e67;
constexpr std::uint64_t kShiftStream = 0x73686966;

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double linf(const std::array<double, SyntaxParams::kSize>& a, const std::array<double, SyntaxParams::kSize>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

const std::array<std::array<int, 3>, 6> kOrders{{{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};

}  // namespace

std::string synth_language_code(std::size_t index) {
  std::string n = std::to_string(index);
  if (n.size() < 2) n.insert(0, 2 - n.size(), '0');
  return "syn" + n;
}

const std::array<GeoPoint, 5>& geo_anchors() {
  static const std::array<GeoPoint, 5> anchors{{{0.0, 0.0},
                                                {0.0, std::numbers::pi / 2},
                                                {std::numbers::pi / 3, 0.0},
                                                {-std::numbers::pi / 3, std::numbers::pi},
                                                {std::numbers::pi / 2, 0.0}}};
  return anchors;
}

double normalized_great_circle(GeoPoint a, GeoPoint b) {
  const double s_lat = std::sin((b.latitude - a.latitude) / 2.0);
  const double s_lon = std::sin((b.longitude - a.longitude) / 2.0);
  const double h = s_lat * s_lat + std::cos(a.latitude) * std::cos(b.latitude) * s_lon * s_lon;
  return 2.0 * std::asin(std::min(1.0, std::sqrt(h))) / std::numbers::pi;
}

SynthLanguages generate_languages(std::size_t count, std::size_t families, std::uint64_t seed,
                                  const LanguageOptions& options) {
  if (families < 1 || count < families) {
    throw ArgumentError("need count >= families >= 1, got count " + std::to_string(count) + ", families " +
                        std::to_string(families));
  }
  if (options.knn < 1) throw ArgumentError("knn must be >= 1");
  std::mt19937_64 rng(derive_seed(seed, {kLanguageStream}));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  using Params = std::array<double, SyntaxParams::kSize>;
  std::vector<Params> centroids;
  for (std::size_t attempt = 0; centroids.size() < families; ++attempt) {
    if (attempt > 100000) {
      throw ArgumentError("cannot place " + std::to_string(families) + " family centroids " +
                          format_double(options.centroid_separation) + " apart");
    }
    Params c;
    for (double& v : c) v = 0.1 + 0.8 * unit(rng);
    if (std::all_of(centroids.begin(), centroids.end(),
                    [&](const Params& o) { return linf(c, o) >= options.centroid_separation; })) {
      centroids.push_back(c);
    }
  }

  std::vector<SynthLanguageSpec> specs(count);
  const double fams = static_cast<double>(families);
  for (std::size_t i = 0; i < count; ++i) {
    SynthLanguageSpec& s = specs[i];
    s.lang = synth_language_code(i);
    s.family = i % families;
    for (std::size_t k = 0; k < SyntaxParams::kSize; ++k) {
      const double off = options.family_spread * (2.0 * unit(rng) - 1.0);
      s.syntax.values[k] = std::clamp(centroids[s.family][k] + off, 0.0, 1.0);
    }
    const double f = static_cast<double>(s.family);
    s.latitude = (f / fams - 0.5) * 1.5 + 0.1 * (2.0 * unit(rng) - 1.0);
    s.longitude = (f / fams) * 2.0 * std::numbers::pi - std::numbers::pi + 0.2 * (2.0 * unit(rng) - 1.0);
  }

  static const char* kParamNames[SyntaxParams::kSize] = {"order", "affix", "shift", "marking"};
  RawFeatureTable knn, avg, geo;
  for (const char* n : kParamNames) {
    knn.columns.push_back(std::string("knn_") + n);
    avg.columns.push_back(std::string("avg_") + n);
  }
  for (std::size_t a = 0; a < geo_anchors().size(); ++a) geo.columns.push_back("anchor" + std::to_string(a));

  const std::size_t k = std::min(options.knn, count - 1);
  for (std::size_t i = 0; i < count; ++i) {
    const SynthLanguageSpec& s = specs[i];
    std::vector<std::pair<double, std::size_t>> dist;
    for (std::size_t j = 0; j < count; ++j) {
      if (j == i) continue;
      double d = 0.0;
      for (std::size_t p = 0; p < SyntaxParams::kSize; ++p) {
        const double diff = s.syntax.values[p] - specs[j].syntax.values[p];
        d += diff * diff;
      }
      dist.emplace_back(d, j);
    }
    std::sort(dist.begin(), dist.end());
    Params mean{};
    if (k == 0) {
      mean = s.syntax.values;
    } else {
      for (std::size_t n = 0; n < k; ++n) {
        for (std::size_t p = 0; p < SyntaxParams::kSize; ++p) mean[p] += specs[dist[n].second].syntax.values[p];
      }
      for (double& v : mean) v /= static_cast<double>(k);
    }
    knn.rows.emplace(s.lang, std::vector<std::optional<double>>(mean.begin(), mean.end()));
    const Params& c = centroids[s.family];
    avg.rows.emplace(s.lang, std::vector<std::optional<double>>(c.begin(), c.end()));
    std::vector<std::optional<double>> g;
    for (const GeoPoint& a : geo_anchors()) g.emplace_back(normalized_great_circle({s.latitude, s.longitude}, a));
    geo.rows.emplace(s.lang, std::move(g));
  }

  std::map<FeatureSet, RawFeatureTable> tables{
      {FeatureSet::SyntaxKnn, std::move(knn)}, {FeatureSet::SyntaxAverage, std::move(avg)}, {FeatureSet::Geo, std::move(geo)}};
  return SynthLanguages{std::move(specs), UrielStore::from_tables(std::move(tables))};
}

std::vector<std::string> Corpus::languages() const {
  std::set<std::string> langs;
  for (const auto& e : examples) langs.insert(e.lang);
  return {langs.begin(), langs.end()};
}

namespace {

class SentenceMaker {
 public:
  SentenceMaker(const SynthLanguageSpec& spec, std::size_t n_classes, std::uint64_t seed, Task task,
                const CorpusOptions& o)
      : spec_(spec), classes_(n_classes), o_(o) {
    // The main stream depends on the parameters, not the code, so two
    // languages with equal parameters produce equal text.
    std::uint64_t h = derive_seed(seed, {static_cast<std::uint64_t>(task), n_classes});
    for (double v : spec.syntax.values) h = derive_seed(h, {std::bit_cast<std::uint64_t>(v)});
    rng_.seed(h);
    shift_rng_.seed(derive_seed(seed, {kShiftStream, fnv1a(spec.lang)}));
  }

  std::mt19937_64& rng() { return rng_; }

  std::vector<std::string> sentence(std::size_t label) {
    const SyntaxParams& p = spec_.syntax;
    std::uniform_int_distribution<std::size_t> variant(0, o_.content_variants - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<std::string> topic{"w" + std::to_string(label) + "." + std::to_string(variant(rng_))};
    if (unit(shift_rng_) < p.shift() * 0.5) topic[0] += "~" + spec_.lang;

    std::uniform_int_distribution<std::size_t> other(0, classes_ - 2);
    const std::size_t d = (label + 1 + other(rng_)) % classes_;
    std::vector<std::string> distractor{"w" + std::to_string(d) + "." + std::to_string(variant(rng_))};

    const double m = static_cast<double>(o_.order_markers - 1);
    std::normal_distribution<double> noise(0.0, o_.marker_noise);
    const double q = std::clamp(std::round(p.order() * m + noise(rng_)), 0.0, m);
    std::vector<std::string> marker{"m" + std::to_string(static_cast<int>(q))};

    const std::size_t form = std::min(o_.affix_forms - 1, static_cast<std::size_t>(p.marking() * o_.affix_forms));
    const std::string affix = "a" + std::to_string(form);
    for (auto* part : {&topic, &distractor}) {
      if (unit(rng_) < p.affix()) part->push_back(affix);
    }

    const auto& order = kOrders[std::min<std::size_t>(5, static_cast<std::size_t>(p.order() * 6.0))];
    const std::vector<std::string>* parts[3] = {&topic, &distractor, &marker};
    std::vector<std::string> out;
    for (int idx : order) out.insert(out.end(), parts[idx]->begin(), parts[idx]->end());

    std::uniform_int_distribution<int> n_fill(0, 2);
    std::uniform_int_distribution<std::size_t> filler(0, o_.filler_words - 1);
    for (int f = n_fill(rng_); f > 0; --f) out.push_back("n" + std::to_string(filler(rng_)));
    return out;
  }

 private:
  const SynthLanguageSpec& spec_;
  std::size_t classes_;
  const CorpusOptions& o_;
  std::mt19937_64 rng_;
  std::mt19937_64 shift_rng_;
};

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

Corpus generate_corpus(const std::vector<SynthLanguageSpec>& specs, std::size_t n_per_lang, std::size_t n_classes,
                       std::uint64_t seed, Task task, const CorpusOptions& options) {
  if (specs.empty()) throw ArgumentError("generate_corpus: no languages");
  if (n_per_lang == 0) throw ArgumentError("generate_corpus: n_per_lang must be positive");
  if (n_classes < 2) throw ArgumentError("generate_corpus: need at least 2 classes");
  if (options.content_variants == 0 || options.order_markers == 0 || options.affix_forms == 0 ||
      options.filler_words == 0) {
    throw ArgumentError("generate_corpus: vocabulary sizes must be positive");
  }
  Corpus corpus;
  corpus.task = task;
  corpus.n_classes = task == Task::Classification ? n_classes : 0;
  for (const auto& spec : specs) {
    SentenceMaker maker(spec, n_classes, seed, task, options);
    if (task == Task::Classification) {
      std::vector<std::size_t> labels(n_per_lang);
      for (std::size_t i = 0; i < n_per_lang; ++i) labels[i] = i % n_classes;
      std::shuffle(labels.begin(), labels.end(), maker.rng());
      for (std::size_t y : labels) {
        corpus.examples.push_back({spec.lang, static_cast<double>(y), maker.sentence(y)});
      }
    } else {
      std::uniform_int_distribution<std::size_t> cls(0, n_classes - 1);
      std::bernoulli_distribution same(0.5);
      for (std::size_t i = 0; i < n_per_lang; ++i) {
        const std::size_t y1 = cls(maker.rng());
        const std::size_t y2 = same(maker.rng()) ? y1 : cls(maker.rng());
        auto a = maker.sentence(y1);
        auto b = maker.sentence(y2);
        const double score = jaccard(a, b);
        a.push_back(kPairSeparator);
        a.insert(a.end(), b.begin(), b.end());
        corpus.examples.push_back({spec.lang, score, std::move(a)});
      }
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocab::Vocab() {
  add("<cls>");
  add("<unk>");
}

void Vocab::add(const std::string& token) {
  if (ids_.count(token)) throw DataError("duplicate vocabulary token '" + token + "'");
  ids_.emplace(token, static_cast<std::int32_t>(tokens_.size()));
  tokens_.push_back(token);
}

Vocab Vocab::build(const Corpus& corpus, const std::vector<std::string>& langs) {
  const std::set<std::string> keep(langs.begin(), langs.end());
  std::set<std::string> seen;
  for (const auto& e : corpus.examples) {
    if (!keep.empty() && !keep.count(e.lang)) continue;
    seen.insert(e.tokens.begin(), e.tokens.end());
  }
  Vocab v;
  for (const auto& t : seen) {
    if (t != "<cls>" && t != "<unk>") v.add(t);
  }
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary " + path.string());
  Vocab v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno <= 2) {
      if (line != v.tokens_[lineno - 1]) {
        throw ParseError(path.string(), lineno, "expected reserved token '" + v.tokens_[lineno - 1] + "'");
      }
      continue;
    }
    if (line.empty()) throw ParseError(path.string(), lineno, "empty token");
    if (v.ids_.count(line)) throw ParseError(path.string(), lineno, "duplicate token '" + line + "'");
    v.add(line);
  }
  if (lineno < 2) throw DataError(path.string() + ": missing reserved tokens");
  return v;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw DataError("error writing vocabulary " + path.string());
}

std::int32_t Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ArgumentError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> tokenize(const Vocab& vocab, const std::vector<std::string>& tokens) {
  std::vector<std::int32_t> ids{Vocab::kCls};
  ids.reserve(tokens.size() + 1);
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  return ids;
}

std::map<std::string, double> unk_rate(const Corpus& corpus, const Vocab& vocab, std::vector<std::string>* warnings) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // lang -> (unk, total)
  for (const auto& e : corpus.examples) {
    auto& c = counts[e.lang];
    for (const auto& t : e.tokens) {
      c.first += vocab.id(t) == Vocab::kUnk ? 1 : 0;
      ++c.second;
    }
  }
  std::map<std::string, double> out;
  for (const auto& [lang, c] : counts) {
    if (c.second == 0) {
      if (warnings) warnings->push_back("language '" + lang + "' has no tokens; UNK rate undefined");
      continue;
    }
    const double pct = 100.0 * static_cast<double>(c.first) / static_cast<double>(c.second);
    out[lang] = std::round(pct * 100.0) / 100.0;
  }
  return out;
}

std::vector<EncodedExample> encode(const Corpus& corpus, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 1) throw ArgumentError("encode: max_len must be positive");
  std::vector<EncodedExample> out;
  out.reserve(corpus.examples.size());
  for (const auto& e : corpus.examples) {
    EncodedExample x;
    x.lang = e.lang;
    x.ids = tokenize(vocab, e.tokens);
    if (x.ids.size() > max_len) x.ids.resize(max_len);
    if (corpus.task == Task::Classification) {
      x.label = e.class_index();
    } else {
      x.target = e.label;
    }
    out.push_back(std::move(x));
  }
  return out;
}

// ---------------------------------------------------------------------------
// TSV

void write_corpus_tsv(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write corpus " + path.string());
  for (const auto& e : corpus.examples) {
    out << e.lang << '\t'
        << (corpus.task == Task::Classification ? std::to_string(e.class_index()) : format_double(e.label)) << '\t';
    for (std::size_t i = 0; i < e.tokens.size(); ++i) out << (i ? " " : "") << e.tokens[i];
    out << '\n';
  }
  if (!out) throw DataError("error writing corpus " + path.string());
}

Corpus read_corpus_tsv(const std::filesystem::path& path, Task task) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus " + path.string());
  const std::string where = path.string();
  Corpus corpus;
  corpus.task = task;
  std::string line;
  std::size_t lineno = 0;
  std::size_t max_label = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line, '\t');
    if (cells.size() != 3) {
      throw ParseError(where, lineno, "expected 3 tab-separated columns, got " + std::to_string(cells.size()));
    }
    Example e;
    e.lang = cells[0];
    if (e.lang.empty() || e.lang.find(' ') != std::string::npos) {
      throw ParseError(where, lineno, "invalid language code '" + e.lang + "'");
    }
    if (task == Task::Classification) {
      const auto v = parse_int(cells[1]);
      if (!v || *v < 0) throw ParseError(where, lineno, "label '" + cells[1] + "' is not a class index");
      e.label = static_cast<double>(*v);
      max_label = std::max(max_label, static_cast<std::size_t>(*v));
    } else {
      const auto v = parse_double(cells[1]);
      if (!v || !std::isfinite(*v)) throw ParseError(where, lineno, "label '" + cells[1] + "' is not a number");
      e.label = *v;
    }
    e.tokens = split_ws(cells[2]);
    corpus.examples.push_back(std::move(e));
  }
  if (corpus.examples.empty()) throw DataError(where + ": corpus has no examples");
  if (task == Task::Classification) corpus.n_classes = std::max<std::size_t>(2, max_label + 1);
  return corpus;
}

Corpus filter_languages(const Corpus& corpus, const std::vector<std::string>& langs) {
  const std::set<std::string> keep(langs.begin(), langs.end());
  Corpus out;
  out.task = corpus.task;
  out.n_classes = corpus.n_classes;
  for (const auto& e : corpus.examples) {
    if (keep.count(e.lang)) out.examples.push_back(e);
  }
  return out;
}

}  // namespace typoreg
