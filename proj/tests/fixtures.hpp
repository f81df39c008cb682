#pragma once

#include <random>
#include <string>
#include <vector>

#include "typoreg/alchemy.hpp"
#include "typoreg/uriel_store.hpp"

namespace typoreg::testing {

/// Store with languages l0..l{n-1} and a single Geo table of width `dims`.
inline UrielStore toy_store(std::size_t n_langs, std::size_t dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RawFeatureTable t;
  for (std::size_t j = 0; j < dims; ++j) t.columns.push_back("f" + std::to_string(j));
  for (std::size_t i = 0; i < n_langs; ++i) {
    std::vector<std::optional<double>> row;
    for (std::size_t j = 0; j < dims; ++j) row.emplace_back(u(rng));
    t.rows.emplace("l" + std::to_string(i), std::move(row));
  }
  return UrielStore::from_tables({{FeatureSet::Geo, t}});
}

/// Class c is signalled by token 2 + c, followed by random filler tokens.
inline std::vector<EncodedExample> toy_examples(std::size_t n, std::size_t n_classes, std::size_t n_langs,
                                                std::uint64_t seed, std::int32_t vocab = 16) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int32_t> filler(static_cast<std::int32_t>(2 + n_classes), vocab - 1);
  std::uniform_int_distribution<int> len(1, 4);
  std::vector<EncodedExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    EncodedExample ex;
    ex.lang = "l" + std::to_string(i % n_langs);
    ex.label = i % n_classes;
    ex.target = static_cast<double>(ex.label) / static_cast<double>(n_classes);
    ex.ids.push_back(0);
    const int before = len(rng) - 1;
    for (int k = 0; k < before; ++k) ex.ids.push_back(filler(rng));
    ex.ids.push_back(static_cast<std::int32_t>(2 + ex.label));
    for (int k = 0; k < 2; ++k) ex.ids.push_back(filler(rng));
    out.push_back(std::move(ex));
  }
  return out;
}

inline ModelConfig toy_model_config(std::size_t d_uriel, std::size_t n_classes = 4, std::uint64_t seed = 1) {
  ModelConfig m;
  m.encoder.vocab_size = 16;
  m.encoder.d_model = 16;
  m.encoder.n_heads = 2;
  m.encoder.n_layers = 1;
  m.encoder.max_seq_len = 12;
  m.encoder.seed = seed;
  m.n_classes = n_classes;
  m.d_uriel = d_uriel;
  return m;
}

}  // namespace typoreg::testing
