#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace typoreg {

/// URIEL-style feature families served by the store.
enum class FeatureSet { SyntaxKnn, SyntaxAverage, Geo };

inline constexpr FeatureSet kAllFeatureSets[] = {FeatureSet::SyntaxKnn, FeatureSet::SyntaxAverage,
                                                 FeatureSet::Geo};

std::string_view to_string(FeatureSet set);
/// Accepts "syntax_knn", "syntax_average" (or "syntax_avg") and "geo".
FeatureSet parse_feature_set(std::string_view text);
/// '+'-joined list, e.g. "syntax_knn+syntax_avg+geo".
std::vector<FeatureSet> parse_feature_sets(std::string_view text);
std::string join_feature_sets(std::span<const FeatureSet> sets);

struct LinguisticVector {
  std::string lang;
  std::vector<double> values;
  std::vector<bool> mask;  // true where the value was observed
  std::vector<FeatureSet> feature_sets;
};

/// One feature set before normalization: rows keyed by language, with
/// std::nullopt for missing cells.
struct RawFeatureTable {
  std::vector<std::string> columns;
  std::map<std::string, std::vector<std::optional<double>>> rows;
  bool operator==(const RawFeatureTable&) const = default;
};

RawFeatureTable read_feature_tsv(const std::filesystem::path& path);
void write_feature_tsv(const std::filesystem::path& path, const RawFeatureTable& table);

/// Immutable per-language feature store. Languages are the inner join of all
/// loaded feature sets; geo columns are min-max scaled per dimension using the
/// extremes in the source table, syntax columns must already lie in [0, 1].
class UrielStore {
 public:
  static UrielStore load_tsv(const std::map<FeatureSet, std::filesystem::path>& files);
  static UrielStore from_tables(std::map<FeatureSet, RawFeatureTable> tables);

  LinguisticVector get_vector(std::string_view lang, std::span<const FeatureSet> sets) const;

  /// k closest other languages by Euclidean distance over dimensions observed
  /// in both vectors; ties go to the lexicographically smaller code.
  std::vector<std::pair<std::string, double>> nearest_languages(std::string_view lang,
                                                                std::span<const FeatureSet> sets,
                                                                std::size_t k) const;

  std::vector<std::string> list_languages() const;
  bool has_language(std::string_view lang) const;
  bool has_feature_set(FeatureSet set) const { return tables_.count(set) != 0; }
  std::size_t dim(FeatureSet set) const;
  std::size_t dim(std::span<const FeatureSet> sets) const;

  /// Un-normalized source table as loaded, including rows dropped by the join.
  const RawFeatureTable& raw_table(FeatureSet set) const;
  void write_tsv(FeatureSet set, const std::filesystem::path& path) const;

  bool operator==(const UrielStore& other) const = default;

 private:
  struct Table {
    RawFeatureTable raw;
    std::map<std::string, std::vector<double>> values;
    std::map<std::string, std::vector<bool>> mask;
    std::vector<double> min;  // geo only
    std::vector<double> max;
    bool operator==(const Table&) const = default;
  };

  const Table& table(FeatureSet set) const;

  std::map<FeatureSet, Table> tables_;
  std::vector<std::string> languages_;
};

}  // namespace typoreg
