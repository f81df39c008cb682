#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "typoreg/error.hpp"
#include "typoreg/harness.hpp"
#include "typoreg/text.hpp"

namespace typoreg {

std::string_view to_string(ProjectionInit init) {
  return init == ProjectionInit::TargetMean ? "target_mean" : "uniform";
}

namespace {

ProjectionInit parse_projection_init(std::string_view text) {
  if (text == "target_mean") return ProjectionInit::TargetMean;
  if (text == "uniform") return ProjectionInit::Uniform;
  throw ConfigError("expected target_mean or uniform, got '" + std::string(text) + "'");
}

std::size_t to_size(std::string_view v) {
  const auto n = parse_int(v);
  if (!n || *n < 0) throw ConfigError("expected a non-negative integer, got '" + std::string(v) + "'");
  return static_cast<std::size_t>(*n);
}

double to_real(std::string_view v) {
  const auto d = parse_double(v);
  if (!d) throw ConfigError("expected a number, got '" + std::string(v) + "'");
  return *d;
}

std::vector<std::string> to_list(std::string_view v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  for (const auto& part : split(v, ',')) {
    const auto item = trim(part);
    if (item.empty()) throw ConfigError("empty item in list '" + std::string(v) + "'");
    out.emplace_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += ", ";
    out += s;
  }
  return out;
}

struct KeySpec {
  const char* section;
  const char* key;
  const char* help;
  bool repeatable;
  void (*set)(ExperimentConfig&, std::string_view);
  std::vector<std::string> (*get)(const ExperimentConfig&);
};

#define ONE(expr) [](const ExperimentConfig& c) -> std::vector<std::string> { return {expr}; }

std::string path_or_empty(const std::optional<std::filesystem::path>& p) { return p ? p->string() : std::string(); }

std::string store_file(const ExperimentConfig& c, FeatureSet s) {
  const auto it = c.store_files.find(s);
  return it == c.store_files.end() ? std::string() : it->second.string();
}

void set_store_file(ExperimentConfig& c, FeatureSet s, std::string_view v) {
  if (trim(v).empty()) {
    c.store_files.erase(s);
  } else {
    c.store_files[s] = std::string(v);
  }
}

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs{
      {"experiment", "task", "classification | relatedness", false,
       [](ExperimentConfig& c, std::string_view v) {
         try {
           c.task = parse_task(v);
         } catch (const Error& e) {
           throw ConfigError(e.what());
         }
       },
       ONE(std::string(to_string(c.task)))},
      {"experiment", "seeds", "comma-separated run seeds", false,
       [](ExperimentConfig& c, std::string_view v) {
         c.seeds.clear();
         for (const auto& s : to_list(v)) c.seeds.push_back(to_size(s));
       },
       [](const ExperimentConfig& c) -> std::vector<std::string> {
         std::vector<std::string> s;
         for (auto x : c.seeds) s.push_back(std::to_string(x));
         return {join(s)};
       }},
      {"experiment", "output_dir", "directory for reports", false,
       [](ExperimentConfig& c, std::string_view v) { c.output_dir = std::string(v); }, ONE(c.output_dir.string())},
      {"experiment", "threads", "sweep workers, 0 = all cores", false,
       [](ExperimentConfig& c, std::string_view v) { c.threads = to_size(v); }, ONE(std::to_string(c.threads))},

      {"data", "syntax_knn", "syntax_knn feature TSV (empty: synthetic benchmark)", false,
       [](ExperimentConfig& c, std::string_view v) { set_store_file(c, FeatureSet::SyntaxKnn, v); },
       ONE(store_file(c, FeatureSet::SyntaxKnn))},
      {"data", "syntax_average", "syntax_average feature TSV", false,
       [](ExperimentConfig& c, std::string_view v) { set_store_file(c, FeatureSet::SyntaxAverage, v); },
       ONE(store_file(c, FeatureSet::SyntaxAverage))},
      {"data", "geo", "geo feature TSV", false,
       [](ExperimentConfig& c, std::string_view v) { set_store_file(c, FeatureSet::Geo, v); },
       ONE(store_file(c, FeatureSet::Geo))},
      {"data", "train_corpus", "training corpus TSV", false,
       [](ExperimentConfig& c, std::string_view v) {
         c.train_corpus = trim(v).empty() ? std::nullopt : std::optional<std::filesystem::path>(std::string(v));
       },
       ONE(path_or_empty(c.train_corpus))},
      {"data", "test_corpus", "evaluation corpus TSV", false,
       [](ExperimentConfig& c, std::string_view v) {
         c.test_corpus = trim(v).empty() ? std::nullopt : std::optional<std::filesystem::path>(std::string(v));
       },
       ONE(path_or_empty(c.test_corpus))},

      {"synthetic", "languages", "generated languages", false,
       [](ExperimentConfig& c, std::string_view v) { c.synthetic.languages = to_size(v); },
       ONE(std::to_string(c.synthetic.languages))},
      {"synthetic", "families", "language families", false,
       [](ExperimentConfig& c, std::string_view v) { c.synthetic.families = to_size(v); },
       ONE(std::to_string(c.synthetic.families))},
      {"synthetic", "train_per_lang", "training sentences per language", false,
       [](ExperimentConfig& c, std::string_view v) { c.synthetic.train_per_lang = to_size(v); },
       ONE(std::to_string(c.synthetic.train_per_lang))},
      {"synthetic", "test_per_lang", "test sentences per language", false,
       [](ExperimentConfig& c, std::string_view v) { c.synthetic.test_per_lang = to_size(v); },
       ONE(std::to_string(c.synthetic.test_per_lang))},
      {"synthetic", "classes", "label classes", false,
       [](ExperimentConfig& c, std::string_view v) { c.synthetic.classes = to_size(v); },
       ONE(std::to_string(c.synthetic.classes))},
      {"synthetic", "marker_noise", "std. dev. of the order-marker index", false,
       [](ExperimentConfig& c, std::string_view v) { c.synthetic.marker_noise = to_real(v); },
       ONE(format_double(c.synthetic.marker_noise))},

      {"languages", "seen", "training languages (empty: all but unseen)", false,
       [](ExperimentConfig& c, std::string_view v) { c.seen_langs = to_list(v); }, ONE(join(c.seen_langs))},
      {"languages", "unseen", "held-out languages (empty: built-in set)", false,
       [](ExperimentConfig& c, std::string_view v) { c.unseen_langs = to_list(v); }, ONE(join(c.unseen_langs))},
      {"languages", "group", "cumulative training group, repeat per step", true,
       [](ExperimentConfig& c, std::string_view v) { c.family_groups.push_back(to_list(v)); },
       [](const ExperimentConfig& c) {
         std::vector<std::string> out;
         for (const auto& g : c.family_groups) out.push_back(join(g));
         return out;
       }},

      {"features", "sets", "'+'-joined syntax_knn, syntax_avg, geo", false,
       [](ExperimentConfig& c, std::string_view v) {
         try {
           c.feature_sets = parse_feature_sets(v);
         } catch (const Error& e) {
           throw ConfigError(e.what());
         }
       },
       ONE(join_feature_sets(c.feature_sets))},

      {"scaling", "mode", "constant | balanced | learned", false,
       [](ExperimentConfig& c, std::string_view v) { c.scaling = parse_scaling_mode(v); },
       ONE(std::string(to_string(c.scaling)))},
      {"scaling", "factor", "linguistic loss weight in constant mode", false,
       [](ExperimentConfig& c, std::string_view v) { c.scaling_factor = to_real(v); },
       ONE(format_double(c.scaling_factor))},
      {"scaling", "beta", "EMA decay in balanced mode", false,
       [](ExperimentConfig& c, std::string_view v) { c.scaling_beta = to_real(v); },
       ONE(format_double(c.scaling_beta))},
      {"scaling", "period", "steps between rebalancing in balanced mode", false,
       [](ExperimentConfig& c, std::string_view v) { c.scaling_period = to_size(v); },
       ONE(std::to_string(c.scaling_period))},

      {"train", "epochs", "training epochs", false,
       [](ExperimentConfig& c, std::string_view v) { c.epochs = to_size(v); }, ONE(std::to_string(c.epochs))},
      {"train", "batch_size", "minibatch size", false,
       [](ExperimentConfig& c, std::string_view v) { c.batch_size = to_size(v); },
       ONE(std::to_string(c.batch_size))},
      {"train", "lr", "AdamW learning rate", false,
       [](ExperimentConfig& c, std::string_view v) { c.lr = to_real(v); }, ONE(format_double(c.lr))},
      {"train", "weight_decay", "AdamW decoupled weight decay", false,
       [](ExperimentConfig& c, std::string_view v) { c.weight_decay = to_real(v); },
       ONE(format_double(c.weight_decay))},

      {"model", "d_model", "hidden width", false,
       [](ExperimentConfig& c, std::string_view v) { c.d_model = to_size(v); }, ONE(std::to_string(c.d_model))},
      {"model", "n_heads", "attention heads", false,
       [](ExperimentConfig& c, std::string_view v) { c.n_heads = to_size(v); }, ONE(std::to_string(c.n_heads))},
      {"model", "n_layers", "encoder blocks", false,
       [](ExperimentConfig& c, std::string_view v) { c.n_layers = to_size(v); }, ONE(std::to_string(c.n_layers))},
      {"model", "max_seq_len", "maximum ids per sentence, CLS included", false,
       [](ExperimentConfig& c, std::string_view v) { c.max_seq_len = to_size(v); },
       ONE(std::to_string(c.max_seq_len))},
      {"model", "dropout", "dropout rate during training", false,
       [](ExperimentConfig& c, std::string_view v) { c.dropout = to_real(v); }, ONE(format_double(c.dropout))},
      {"model", "projection_init", "target_mean | uniform", false,
       [](ExperimentConfig& c, std::string_view v) { c.projection_init = parse_projection_init(v); },
       ONE(std::string(to_string(c.projection_init)))},
  };
  return specs;
}

#undef ONE

const KeySpec* find_key(std::string_view section, std::string_view key) {
  for (const auto& k : key_specs()) {
    if (section == k.section && key == k.key) return &k;
  }
  return nullptr;
}

struct Issue {
  std::string key;  // section.key
  std::string message;
};

std::optional<Issue> first_issue(const ExperimentConfig& c) {
  auto issue = [](std::string key, std::string msg) { return std::optional<Issue>(Issue{std::move(key), std::move(msg)}); };
  if (c.seeds.empty()) return issue("experiment.seeds", "at least one seed is required");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
    return issue("experiment.seeds", "duplicate seed");
  }
  if (c.output_dir.empty()) return issue("experiment.output_dir", "output_dir must not be empty");
  if (c.feature_sets.empty()) return issue("features.sets", "no feature sets");

  if (c.synthetic_data()) {
    if (c.train_corpus || c.test_corpus) {
      return issue(c.train_corpus ? "data.train_corpus" : "data.test_corpus",
                   "corpus files need the feature store files as well");
    }
    const auto& s = c.synthetic;
    if (s.families < 1 || s.languages < s.families) {
      return issue("synthetic.languages", "need languages >= families >= 1");
    }
    if (s.languages < 2) return issue("synthetic.languages", "need at least 2 languages");
    if (s.train_per_lang == 0) return issue("synthetic.train_per_lang", "must be positive");
    if (s.test_per_lang < 2) return issue("synthetic.test_per_lang", "must be at least 2");
    if (s.classes < 2) return issue("synthetic.classes", "need at least 2 classes");
    if (!(s.marker_noise >= 0.0)) return issue("synthetic.marker_noise", "must be >= 0");
  } else {
    if (!c.train_corpus) return issue("data.train_corpus", "required when feature files are given");
    if (!c.test_corpus) return issue("data.test_corpus", "required when feature files are given");
    for (FeatureSet f : c.feature_sets) {
      if (!c.store_files.count(f)) {
        return issue("features.sets", "feature set " + std::string(to_string(f)) + " has no data file");
      }
    }
  }

  std::vector<std::string> both;
  for (const auto& l : c.seen_langs) {
    if (std::find(c.unseen_langs.begin(), c.unseen_langs.end(), l) != c.unseen_langs.end()) both.push_back(l);
  }
  if (!both.empty()) return issue("languages.unseen", "languages listed as both seen and unseen: " + join(both));
  for (const auto* list : {&c.seen_langs, &c.unseen_langs}) {
    if (std::set<std::string>(list->begin(), list->end()).size() != list->size()) {
      return issue(list == &c.seen_langs ? "languages.seen" : "languages.unseen", "duplicate language code");
    }
  }
  for (std::size_t g = 0; g < c.family_groups.size(); ++g) {
    const auto& group = c.family_groups[g];
    if (group.empty()) return issue("languages.group", "group " + std::to_string(g + 1) + " is empty");
    for (const auto& l : group) {
      if (std::find(c.unseen_langs.begin(), c.unseen_langs.end(), l) != c.unseen_langs.end()) {
        return issue("languages.group", "group " + std::to_string(g + 1) + " contains unseen language " + l);
      }
    }
    if (g > 0) {
      std::vector<std::string> missing;
      for (const auto& l : c.family_groups[g - 1]) {
        if (std::find(group.begin(), group.end(), l) == group.end()) missing.push_back(l);
      }
      if (!missing.empty()) {
        return issue("languages.group", "group " + std::to_string(g + 1) + " is not cumulative, it drops " +
                                            join(missing));
      }
    }
  }
  for (const auto& [lang, tag] : c.categories) {
    if (tag.empty()) return issue("categories." + lang, "empty category tag");
  }

  if (!(c.scaling_factor >= 0.0)) return issue("scaling.factor", "must be >= 0");
  if (!(c.scaling_beta >= 0.0 && c.scaling_beta < 1.0)) return issue("scaling.beta", "must lie in [0, 1)");
  if (c.scaling_period == 0) return issue("scaling.period", "must be positive");
  if (c.epochs == 0) return issue("train.epochs", "must be positive");
  if (c.batch_size == 0) return issue("train.batch_size", "must be positive");
  if (!(c.lr > 0.0)) return issue("train.lr", "must be > 0");
  if (!(c.weight_decay >= 0.0)) return issue("train.weight_decay", "must be >= 0");

  EncoderConfig enc;
  enc.vocab_size = 2;
  enc.d_model = c.d_model;
  enc.n_heads = c.n_heads;
  enc.n_layers = c.n_layers;
  enc.max_seq_len = c.max_seq_len;
  enc.dropout = c.dropout;
  try {
    enc.validate();
  } catch (const ConfigError& e) {
    return issue("model.d_model", e.what());
  }
  return std::nullopt;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (const auto i = first_issue(*this)) throw ConfigError(i->key + ": " + i->message);
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& source) {
  ExperimentConfig cfg;
  std::map<std::string, std::size_t> key_line;
  std::set<std::string> seen_keys;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  auto fail = [&](std::size_t line, const std::string& msg) -> ConfigError {
    return ConfigError(source + ":" + std::to_string(line) + ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw fail(line_no, "malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      const bool known = section == "categories" ||
                         std::any_of(key_specs().begin(), key_specs().end(),
                                     [&](const KeySpec& k) { return section == k.section; });
      if (!known) throw fail(line_no, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw fail(line_no, "expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (key.empty()) throw fail(line_no, "empty key");
    if (section.empty()) throw fail(line_no, "key '" + key + "' outside any section");
    const std::string full = section + "." + key;

    if (section == "categories") {
      if (cfg.categories.count(key)) throw fail(line_no, "duplicate key '" + full + "'");
      cfg.categories[key] = std::string(value);
      key_line[full] = line_no;
      continue;
    }
    const KeySpec* spec = find_key(section, key);
    if (!spec) throw fail(line_no, "unknown key '" + key + "' in [" + section + "]");
    if (!spec->repeatable && !seen_keys.insert(full).second) throw fail(line_no, "duplicate key '" + full + "'");
    try {
      spec->set(cfg, value);
    } catch (const Error& e) {
      throw fail(line_no, full + ": " + e.what());
    }
    key_line[full] = line_no;
  }
  if (const auto i = first_issue(cfg)) {
    const auto it = key_line.find(i->key);
    throw fail(it == key_line.end() ? 0 : it->second, i->key + ": " + i->message);
  }
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  auto emit_section = [&](const std::string& name) {
    if (!out.empty()) out += '\n';
    out += "[" + name + "]\n";
    section = name;
  };
  for (const auto& k : key_specs()) {
    if (section != k.section) {
      if (section == "languages") {
        emit_section("categories");
        for (const auto& [lang, tag] : cfg.categories) out += lang + " = " + tag + "\n";
      }
      emit_section(k.section);
    }
    for (const auto& v : k.get(cfg)) {
      out += std::string(k.key) + " =";
      if (!v.empty()) out += " " + v;
      out += '\n';
    }
  }
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : serialize_config(cfg)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_reference() {
  const ExperimentConfig defaults;
  std::string out = "Config file keys ([section] key = default  # meaning):\n";
  std::string section;
  for (const auto& k : key_specs()) {
    if (section != k.section) {
      if (section == "languages") out += "  [categories]\n    <lang> = <tag>  # optional user label such as low/medium/high\n";
      section = k.section;
      out += "  [" + section + "]\n";
    }
    const auto values = k.get(defaults);
    out += "    " + std::string(k.key) + " = " + (values.empty() ? std::string() : values.front()) + "  # " + k.help +
           "\n";
  }
  return out;
}

}  // namespace typoreg
