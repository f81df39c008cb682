#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "typoreg/alchemy.hpp"
#include "typoreg/uriel_store.hpp"

namespace typoreg {

/// Surface-realization parameters of a synthetic language, each in [0, 1].
///  order:   picks one of 6 constituent orders and the order-marker token
///  affix:   probability of attaching an affix after a content word
///  shift:   probability (x 0.5) of a language-specific topic word form
///  marking: which affix form is used
struct SyntaxParams {
  static constexpr std::size_t kSize = 4;
  std::array<double, kSize> values{};
  double order() const { return values[0]; }
  double affix() const { return values[1]; }
  double shift() const { return values[2]; }
  double marking() const { return values[3]; }
};

struct SynthLanguageSpec {
  std::string lang;
  double latitude = 0.0;   // radians
  double longitude = 0.0;  // radians
  SyntaxParams syntax;
  std::size_t family = 0;
};

struct GeoPoint {
  double latitude;   // radians
  double longitude;  // radians
};

/// Fixed reference points for the geo features.
const std::array<GeoPoint, 5>& geo_anchors();

/// Great-circle distance between two points divided by half the Earth's
/// circumference, so antipodes are 1.
double normalized_great_circle(GeoPoint a, GeoPoint b);

struct LanguageOptions {
  double family_spread = 0.15;      // max per-parameter offset from the family centroid
  double centroid_separation = 0.4;  // min L-infinity distance between family centroids
  std::size_t knn = 3;
};

struct SynthLanguages {
  std::vector<SynthLanguageSpec> specs;
  UrielStore store;
};

/// "syn00", "syn01", ...
std::string synth_language_code(std::size_t index);

/// `count` languages syn00.. spread over `families` clusters, with their
/// syntax_knn, syntax_average and geo tables.
SynthLanguages generate_languages(std::size_t count, std::size_t families, std::uint64_t seed,
                                  const LanguageOptions& options = {});

struct Example {
  std::string lang;
  double label = 0.0;  // class index, or relatedness score in [0, 1]
  std::vector<std::string> tokens;

  std::size_t class_index() const { return static_cast<std::size_t>(label); }
  bool operator==(const Example&) const = default;
};

struct Corpus {
  Task task = Task::Classification;
  std::size_t n_classes = 0;  // 0 for relatedness
  std::vector<Example> examples;

  bool operator==(const Corpus&) const = default;
  std::vector<std::string> languages() const;
};

inline constexpr const char* kPairSeparator = "<sep>";

struct CorpusOptions {
  std::size_t content_variants = 3;  // surface forms per class word
  std::size_t order_markers = 10;
  std::size_t affix_forms = 4;
  std::size_t filler_words = 6;
  double marker_noise = 0.7;
};

/// `n_per_lang` examples per language. Classification labels are balanced
/// within one example per language; relatedness labels are the Jaccard
/// overlap of the two sentences' token sets.
Corpus generate_corpus(const std::vector<SynthLanguageSpec>& specs, std::size_t n_per_lang, std::size_t n_classes,
                       std::uint64_t seed, Task task, const CorpusOptions& options = {});

/// Token vocabulary with reserved ids 0 (CLS) and 1 (UNK).
class Vocab {
 public:
  static constexpr std::int32_t kCls = 0;
  static constexpr std::int32_t kUnk = 1;

  Vocab();
  /// Every token of `corpus` whose language is in `langs` (all when empty),
  /// assigned ids in lexicographic order.
  static Vocab build(const Corpus& corpus, const std::vector<std::string>& langs = {});
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const noexcept { return tokens_.size(); }
  std::int32_t id(const std::string& token) const;
  const std::string& token(std::int32_t id) const;
  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  void add(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

/// CLS-prefixed ids; unknown tokens map to UNK.
std::vector<std::int32_t> tokenize(const Vocab& vocab, const std::vector<std::string>& tokens);

/// Percentage of UNK among non-CLS tokens per language, rounded to 2
/// decimals. Languages without tokens are left out and reported in `warnings`.
std::map<std::string, double> unk_rate(const Corpus& corpus, const Vocab& vocab,
                                       std::vector<std::string>* warnings = nullptr);

/// Tokenized examples truncated to `max_len` ids (CLS included).
std::vector<EncodedExample> encode(const Corpus& corpus, const Vocab& vocab, std::size_t max_len);

/// `lang<TAB>label<TAB>space-joined tokens`, one example per line.
void write_corpus_tsv(const std::filesystem::path& path, const Corpus& corpus);
Corpus read_corpus_tsv(const std::filesystem::path& path, Task task);

/// Subset of examples whose language is in `langs`.
Corpus filter_languages(const Corpus& corpus, const std::vector<std::string>& langs);

}  // namespace typoreg
