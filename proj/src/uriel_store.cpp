#include "typoreg/uriel_store.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <cctype>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>

#include "typoreg/error.hpp"
#include "typoreg/text.hpp"

namespace typoreg {

std::string_view to_string(FeatureSet set) {
  switch (set) {
    case FeatureSet::SyntaxKnn: return "syntax_knn";
    case FeatureSet::SyntaxAverage: return "syntax_average";
    case FeatureSet::Geo: return "geo";
  }
  return "?";
}

FeatureSet parse_feature_set(std::string_view text) {
  if (text == "syntax_knn") return FeatureSet::SyntaxKnn;
  if (text == "syntax_average" || text == "syntax_avg") return FeatureSet::SyntaxAverage;
  if (text == "geo") return FeatureSet::Geo;
  throw ArgumentError("unknown feature set '" + std::string(text) + "'");
}

std::vector<FeatureSet> parse_feature_sets(std::string_view text) {
  std::vector<FeatureSet> sets;
  for (const auto& part : split(text, '+')) {
    const FeatureSet s = parse_feature_set(trim(part));
    if (std::find(sets.begin(), sets.end(), s) != sets.end()) {
      throw ArgumentError("duplicate feature set '" + std::string(to_string(s)) + "'");
    }
    sets.push_back(s);
  }
  if (sets.empty()) throw ArgumentError("empty feature set list");
  return sets;
}

std::string join_feature_sets(std::span<const FeatureSet> sets) {
  std::string out;
  for (FeatureSet s : sets) {
    if (!out.empty()) out += '+';
    out += s == FeatureSet::SyntaxAverage ? "syntax_avg" : std::string(to_string(s));
  }
  return out;
}

namespace {

bool valid_lang_code(std::string_view code) {
  return !code.empty() && std::none_of(code.begin(), code.end(), [](unsigned char c) { return std::isspace(c); });
}

RawFeatureTable read_table(const std::filesystem::path& path, bool unit_range) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open feature file " + path.string());
  const std::string where = path.string();
  RawFeatureTable table;
  bool have_header = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto cells = split(line, '\t');
    if (!have_header) {
      if (cells.empty() || cells[0] != "lang") throw ParseError(where, lineno, "header must start with 'lang'");
      table.columns.assign(cells.begin() + 1, cells.end());
      if (table.columns.empty()) throw ParseError(where, lineno, "header has no feature columns");
      have_header = true;
      continue;
    }
    if (cells.size() != table.columns.size() + 1) {
      throw ParseError(where, lineno,
                       "expected " + std::to_string(table.columns.size() + 1) + " columns, got " +
                           std::to_string(cells.size()));
    }
    const std::string& lang = cells[0];
    if (!valid_lang_code(lang)) throw ParseError(where, lineno, "invalid language code '" + lang + "'");
    if (table.rows.count(lang)) throw ParseError(where, lineno, "duplicate language '" + lang + "'");
    std::vector<std::optional<double>> row;
    row.reserve(table.columns.size());
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const std::string& cell = cells[c];
      if (cell == "--") {
        row.emplace_back(std::nullopt);
        continue;
      }
      auto v = parse_double(cell);
      if (!v || !std::isfinite(*v)) throw ParseError(where, lineno, "non-numeric cell '" + cell + "'");
      if (unit_range && (*v < 0.0 || *v > 1.0)) {
        throw ParseError(where, lineno, "value " + cell + " outside [0, 1]");
      }
      row.emplace_back(*v);
    }
    table.rows.emplace(lang, std::move(row));
  }
  if (!have_header) throw ParseError(where, lineno, "missing header");
  if (table.rows.empty()) throw DataError(where + ": no language rows");
  return table;
}

}  // namespace

RawFeatureTable read_feature_tsv(const std::filesystem::path& path) { return read_table(path, false); }

void write_feature_tsv(const std::filesystem::path& path, const RawFeatureTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write feature file " + path.string());
  out << "lang";
  for (const auto& c : table.columns) out << '\t' << c;
  out << '\n';
  for (const auto& [lang, row] : table.rows) {
    out << lang;
    for (const auto& v : row) out << '\t' << (v ? format_double(*v) : std::string("--"));
    out << '\n';
  }
  if (!out) throw DataError("error writing feature file " + path.string());
}

UrielStore UrielStore::load_tsv(const std::map<FeatureSet, std::filesystem::path>& files) {
  if (files.empty()) throw ArgumentError("no feature files given");
  std::map<FeatureSet, RawFeatureTable> tables;
  for (const auto& [set, path] : files) tables.emplace(set, read_table(path, set != FeatureSet::Geo));
  return from_tables(std::move(tables));
}

UrielStore UrielStore::from_tables(std::map<FeatureSet, RawFeatureTable> tables) {
  if (tables.empty()) throw ArgumentError("no feature tables given");
  UrielStore store;

  // Inner join on language.
  std::set<std::string> joined;
  bool first = true;
  for (const auto& [set, t] : tables) {
    std::set<std::string> langs;
    for (const auto& [lang, row] : t.rows) {
      if (row.size() != t.columns.size()) {
        throw DataError(std::string(to_string(set)) + ": ragged row for '" + lang + "'");
      }
      langs.insert(lang);
    }
    if (first) {
      joined = std::move(langs);
      first = false;
    } else {
      std::set<std::string> both;
      std::set_intersection(joined.begin(), joined.end(), langs.begin(), langs.end(),
                            std::inserter(both, both.end()));
      joined = std::move(both);
    }
  }
  if (joined.empty()) throw DataError("feature files share no language");

  for (auto& [set, raw] : tables) {
    Table t;
    const std::size_t dims = raw.columns.size();
    if (set == FeatureSet::Geo) {
      // Extremes come from every row of the source table, not only joined ones.
      t.min.assign(dims, std::numeric_limits<double>::infinity());
      t.max.assign(dims, -std::numeric_limits<double>::infinity());
      for (const auto& [lang, row] : raw.rows) {
        for (std::size_t j = 0; j < dims; ++j) {
          if (!row[j]) continue;
          t.min[j] = std::min(t.min[j], *row[j]);
          t.max[j] = std::max(t.max[j], *row[j]);
        }
      }
    }
    for (const auto& lang : joined) {
      const auto& row = raw.rows.at(lang);
      std::vector<double> values(dims, 0.0);
      std::vector<bool> mask(dims, false);
      for (std::size_t j = 0; j < dims; ++j) {
        if (!row[j]) continue;
        double v = *row[j];
        if (set == FeatureSet::Geo) {
          const double span = t.max[j] - t.min[j];
          v = span > 0.0 ? (v - t.min[j]) / span : 0.0;
        } else if (v < 0.0 || v > 1.0) {
          throw DataError(std::string(to_string(set)) + ": value for '" + lang + "' outside [0, 1]");
        }
        values[j] = v;
        mask[j] = true;
      }
      t.values.emplace(lang, std::move(values));
      t.mask.emplace(lang, std::move(mask));
    }
    t.raw = std::move(raw);
    store.tables_.emplace(set, std::move(t));
  }
  store.languages_.assign(joined.begin(), joined.end());
  return store;
}

const UrielStore::Table& UrielStore::table(FeatureSet set) const {
  auto it = tables_.find(set);
  if (it == tables_.end()) {
    throw ArgumentError("feature set '" + std::string(to_string(set)) + "' not loaded");
  }
  return it->second;
}

std::size_t UrielStore::dim(FeatureSet set) const { return table(set).raw.columns.size(); }

std::size_t UrielStore::dim(std::span<const FeatureSet> sets) const {
  std::size_t total = 0;
  for (FeatureSet s : sets) total += dim(s);
  return total;
}

bool UrielStore::has_language(std::string_view lang) const {
  return std::binary_search(languages_.begin(), languages_.end(), lang);
}

std::vector<std::string> UrielStore::list_languages() const { return languages_; }

const RawFeatureTable& UrielStore::raw_table(FeatureSet set) const { return table(set).raw; }

void UrielStore::write_tsv(FeatureSet set, const std::filesystem::path& path) const {
  write_feature_tsv(path, raw_table(set));
}

LinguisticVector UrielStore::get_vector(std::string_view lang, std::span<const FeatureSet> sets) const {
  if (sets.empty()) throw ArgumentError("get_vector: empty feature set list");
  for (std::size_t i = 0; i < sets.size(); ++i) {
    for (std::size_t j = i + 1; j < sets.size(); ++j) {
      if (sets[i] == sets[j]) {
        throw ArgumentError("get_vector: duplicate feature set '" + std::string(to_string(sets[i])) + "'");
      }
    }
  }
  if (!has_language(lang)) throw LookupError("unknown language '" + std::string(lang) + "'");
  LinguisticVector out;
  out.lang = std::string(lang);
  out.feature_sets.assign(sets.begin(), sets.end());
  for (FeatureSet s : sets) {
    const Table& t = table(s);
    const std::string key(lang);
    const auto& v = t.values.at(key);
    const auto& m = t.mask.at(key);
    out.values.insert(out.values.end(), v.begin(), v.end());
    out.mask.insert(out.mask.end(), m.begin(), m.end());
  }
  return out;
}

std::vector<std::pair<std::string, double>> UrielStore::nearest_languages(std::string_view lang,
                                                                          std::span<const FeatureSet> sets,
                                                                          std::size_t k) const {
  if (k == 0 || k >= languages_.size()) {
    throw ArgumentError("nearest_languages: k must be in [1, " + std::to_string(languages_.size()) + ")");
  }
  const LinguisticVector q = get_vector(lang, sets);
  std::vector<std::pair<std::string, double>> all;
  all.reserve(languages_.size() - 1);
  for (const auto& other : languages_) {
    if (other == lang) continue;
    const LinguisticVector o = get_vector(other, sets);
    double s = 0.0;
    for (std::size_t j = 0; j < q.values.size(); ++j) {
      if (q.mask[j] && o.mask[j]) s += (q.values[j] - o.values[j]) * (q.values[j] - o.values[j]);
    }
    all.emplace_back(other, std::sqrt(s));
  }
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  all.resize(k);
  return all;
}

}  // namespace typoreg
