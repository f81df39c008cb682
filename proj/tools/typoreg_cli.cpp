// Command-line front end: corpus generation, training, evaluation, alignment
// and the sweep protocols.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "typoreg/alignment.hpp"
#include "typoreg/autodiff/checkpoint.hpp"
#include "typoreg/error.hpp"
#include "typoreg/harness.hpp"
#include "typoreg/synthlang.hpp"
#include "typoreg/text.hpp"

namespace fs = std::filesystem;
using namespace typoreg;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
};

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : parse_config(g.config);
  if (g.seed) cfg.seeds = {*g.seed};
  if (g.out) cfg.output_dir = *g.out;
  if (g.threads) cfg.threads = *g.threads;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("error writing " + path.string());
}

int cmd_gen(const ExperimentConfig& cfg) {
  if (!cfg.synthetic_data()) throw ConfigError("gen: the config points at data files; nothing to generate");
  const std::uint64_t seed = cfg.seeds.front();
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  const PreparedData d = prepare_data(cfg, seed);

  std::map<FeatureSet, fs::path> files;
  for (FeatureSet s : kAllFeatureSets) {
    const fs::path p = dir / (std::string(to_string(s)) + ".tsv");
    d.store.write_tsv(s, p);
    files[s] = p;
  }
  std::string specs = "lang,family,latitude,longitude,order,affix,shift,marking\n";
  for (const auto& s : d.specs) {
    specs += s.lang + "," + std::to_string(s.family) + "," + format_double(s.latitude) + "," +
             format_double(s.longitude);
    for (double v : s.syntax.values) specs += "," + format_double(v);
    specs += "\n";
  }
  write_text(dir / "languages.csv", specs);

  // Full corpora: the training file keeps every language so other splits can
  // be chosen later through the config.
  const SyntheticBenchmark full = generate_benchmark(cfg, seed);
  const Corpus& train_all = full.train;
  const Corpus& test_all = full.test;
  write_corpus_tsv(dir / "train.tsv", train_all);
  write_corpus_tsv(dir / "test.tsv", test_all);
  d.vocab.save(dir / "vocab.txt");

  std::vector<std::string> warnings;
  const auto unk = unk_rate(test_all, d.vocab, &warnings);
  std::string unk_csv = "lang,split,unk_pct\n";
  for (const auto& [lang, pct] : unk) {
    const bool seen = std::find(d.seen.begin(), d.seen.end(), lang) != d.seen.end();
    unk_csv += lang + "," + (seen ? "seen" : "unseen") + "," + format_fixed(pct, 2) + "\n";
  }
  write_text(dir / "unk.csv", unk_csv);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

  ExperimentConfig file_cfg = cfg;
  file_cfg.store_files = files;
  for (auto& [set, path] : file_cfg.store_files) path = fs::absolute(path);
  file_cfg.train_corpus = fs::absolute(dir / "train.tsv");
  file_cfg.test_corpus = fs::absolute(dir / "test.tsv");
  file_cfg.seen_langs = d.seen;
  file_cfg.unseen_langs = d.unseen;
  write_text(dir / "experiment.ini", serialize_config(file_cfg));

  std::cout << "wrote " << d.specs.size() << " languages, " << train_all.examples.size() << " training and "
            << test_all.examples.size() << " test sentences to " << dir.string() << "\n";
  return kOk;
}

void print_report(const MetricsReport& r) {
  std::cout << "seed " << r.seed << ": seen " << format_fixed(r.mean("seen"), 4) << ", unseen "
            << format_fixed(r.mean("unseen"), 4) << " (" << format_fixed(r.wall_seconds, 1) << " s)\n";
}

int cmd_train(const ExperimentConfig& cfg) {
  std::vector<MetricsReport> reports(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.threads, [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    const fs::path dir = cfg.seeds.size() == 1 ? cfg.output_dir : cfg.output_dir / ("seed-" + std::to_string(seed));
    reports[i] = run_experiment(cfg, seed, dir);
  });
  for (const auto& r : reports) print_report(r);
  return kOk;
}

struct LoadedRun {
  ExperimentConfig cfg;
  std::uint64_t seed = 0;
  PreparedData data;
  std::unique_ptr<AlchemyModel> model;
};

LoadedRun load_run(const fs::path& dir) {
  LoadedRun run;
  const fs::path resolved = dir / "config.resolved";
  run.cfg = parse_config(resolved);
  std::ifstream in(resolved);
  std::string line;
  bool found = false;
  while (std::getline(in, line)) {
    if (line.rfind("# seed = ", 0) == 0) {
      const auto v = parse_int(trim(line.substr(9)));
      if (!v || *v < 0) throw DataError(resolved.string() + ": malformed seed comment");
      run.seed = static_cast<std::uint64_t>(*v);
      found = true;
    }
  }
  if (!found) throw DataError(resolved.string() + ": missing seed comment");
  run.data = prepare_data(run.cfg, run.seed);
  run.data.vocab = Vocab::load(dir / "vocab.txt");
  run.model = std::make_unique<AlchemyModel>(model_config(run.cfg, run.data, run.seed));
  ad::load_params(dir / "model.ckpt", run.model->parameters());
  return run;
}

int cmd_eval(const fs::path& run_dir) {
  const LoadedRun run = load_run(run_dir);
  const auto rows = evaluate(*run.model, run.data, run.cfg.max_seq_len, run.cfg.categories);
  write_report_csv(run_dir / "eval.csv", rows);
  for (const auto& r : rows) {
    if (!r.lang.empty() && r.lang.front() == '@' && r.metric != "unk_pct") {
      std::cout << r.lang << " " << r.split << " " << r.metric << " " << format_fixed(r.value, 4) << "\n";
    }
  }
  return kOk;
}

int cmd_align(const fs::path& run_dir, double ridge, double lr, std::size_t iters) {
  const LoadedRun run = load_run(run_dir);
  std::vector<std::string> langs;
  for (const auto& l : run.data.test.languages()) {
    if (run.data.store.has_language(l)) langs.push_back(l);
  }
  const auto test = encode(filter_languages(run.data.test, langs), run.data.vocab, run.cfg.max_seq_len);
  const SentenceRepSet reps = collect_sentence_reps(*run.model, test, run.data.store, run.cfg.feature_sets);
  std::vector<AlignmentFit> fits;
  fits.push_back(fit_alignment(reps, AlignmentMethod::closed_form(ridge)));
  fits.push_back(fit_alignment(reps, AlignmentMethod::gradient_descent(lr, iters, run.seed)));
  write_alignment_csv(run_dir / "alignment.csv", fits);
  write_pca_csv(run_dir / "pca.csv", align_representations(fits.front(), reps.reps), reps.langs, run.data.store,
                run.cfg.feature_sets);
  for (const auto& f : fits) {
    std::cout << f.method.name() << ": r_squared " << format_fixed(f.r_squared, 4) << ", residual_mse "
              << format_fixed(f.residual_mse, 6) << "\n";
  }
  return kOk;
}

void print_sweep(const SweepTable& t) {
  std::cout << "setting seen_mean unseen_mean delta_vs_" << t.rows.at(t.baseline).setting << " positive\n";
  for (const auto& r : t.rows) {
    const auto d = t.paired_deltas(r.setting);
    double sum = 0.0;
    int pos = 0;
    for (double x : d) {
      sum += x;
      pos += x > 0.0;
    }
    std::cout << r.setting << (r.flagged ? "*" : "") << " " << format_fixed(r.seen_mean(), 4) << " "
              << format_fixed(r.unseen_mean(), 4) << " " << format_fixed(sum / static_cast<double>(d.size()), 4)
              << " " << pos << "/" << d.size() << "\n";
  }
}

int cmd_family(const ExperimentConfig& cfg) {
  std::vector<std::vector<MetricsReport>> per_seed(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.threads,
               [&](std::size_t i) { per_seed[i] = family_split_experiment(cfg, cfg.seeds[i]); });
  const fs::path dir = cfg.output_dir / "family-gen";
  fs::create_directories(dir);
  std::string csv = "group,seed,lang,metric,value\n";
  for (std::size_t s = 0; s < per_seed.size(); ++s) {
    for (std::size_t g = 0; g < per_seed[s].size(); ++g) {
      for (const auto& r : per_seed[s][g].rows) {
        if (r.split != "unseen" || r.metric == "unk_pct") continue;
        csv += std::to_string(g + 1) + "," + std::to_string(cfg.seeds[s]) + "," + r.lang + "," + r.metric + "," +
               format_double(r.value) + "\n";
      }
    }
  }
  write_text(dir / "trajectory.csv", csv);

  SweepTable table;
  table.name = "family";
  table.metric = std::string(task_metric(cfg.task));
  table.seeds = cfg.seeds;
  const std::size_t groups = per_seed.front().size();
  for (std::size_t g = 0; g < groups; ++g) {
    SweepRow row{"group" + std::to_string(g + 1), {}, {}, false};
    for (const auto& reports : per_seed) {
      row.seen.push_back(reports[g].mean("seen"));
      row.unseen.push_back(reports[g].mean("unseen"));
    }
    table.rows.push_back(row);
  }
  export_sweep(table, dir);
  print_sweep(table);
  return kOk;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ArgumentError*>(&e)) return kConfig;
  if (dynamic_cast<const DataError*>(&e)) return kData;
  if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
  return kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linguistic-vector regularized text classification: experiments on synthetic or user data.\n"
               "Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure."};
  app.fallthrough();
  app.require_subcommand(1);
  app.footer(config_reference());

  Globals g;
  app.add_option("--config", g.config, "experiment config file (defaults apply when omitted)");
  app.add_option("--seed", g.seed, "run only this seed");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--threads", g.threads, "worker threads for multi-run commands (0 = all cores)");

  auto* gen = app.add_subcommand("gen", "generate synthetic languages, feature tables and corpora");
  auto* train = app.add_subcommand("train", "train on seen languages and evaluate seen and unseen ones");
  auto* eval = app.add_subcommand("eval", "re-evaluate a trained run directory");
  auto* align = app.add_subcommand("align", "fit the representation alignment for a trained run");
  auto* sweep_scale = app.add_subcommand("sweep-scale", "constant factors 0/10/25/50/100 plus dynamic scaling");
  auto* sweep_features = app.add_subcommand("sweep-features", "all seven feature-set combinations");
  auto* family = app.add_subcommand("family-gen", "cumulative family groups against a fixed unseen set");

  std::string run_dir;
  eval->add_option("--run", run_dir, "directory written by train")->required();
  std::string align_dir;
  double ridge = 1e-6, align_lr = 1e-2;
  std::size_t iters = 2000;
  align->add_option("--run", align_dir, "directory written by train")->required();
  align->add_option("--ridge", ridge, "closed-form ridge term")->capture_default_str();
  align->add_option("--lr", align_lr, "gradient descent step size")->capture_default_str();
  align->add_option("--iters", iters, "gradient descent iterations")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*eval) return cmd_eval(run_dir);
    if (*align) return cmd_align(align_dir, ridge, align_lr, iters);
    const ExperimentConfig cfg = load_config(g);
    if (*gen) return cmd_gen(cfg);
    if (*train) return cmd_train(cfg);
    if (*sweep_scale) {
      const SweepTable t = scaling_sweep(cfg);
      export_sweep(t, cfg.output_dir / "sweep-scale");
      print_sweep(t);
      return kOk;
    }
    if (*sweep_features) {
      const SweepTable t = ablation_sweep(cfg);
      export_sweep(t, cfg.output_dir / "sweep-features");
      print_sweep(t);
      return kOk;
    }
    if (*family) return cmd_family(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  }
  return kFailure;
}
