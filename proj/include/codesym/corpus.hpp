#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "codesym/generator.hpp"
#include "codesym/ir.hpp"
#include "codesym/symmetry.hpp"
#include "codesym/train.hpp"

#include <nlohmann/json.hpp>

namespace codesym {

// ---------------------------------------------------------------------------
// On-disk corpora. A corpus directory holds numbered .ir program files plus
// manifest.json with the task, the resolved generation config, and the
// labels. Generation is seeded and file emission is byte-stable.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kTaskParity = "parity";
inline constexpr std::string_view kTaskRegionCount = "regioncount";
inline constexpr std::string_view kTaskPairs = "pairs";

namespace detail {

inline std::string corpus_file_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "prog_%05zu.ir", i);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text;
}

}  // namespace detail

/// Generates a labeled corpus directory. parity: unit labels. regioncount:
/// per-token labels. pairs: similar pairs made by legal reorderings of one
/// program, dissimilar pairs from two distinct programs.
inline nlohmann::json generate_corpus(const std::filesystem::path& dir, std::string_view task,
                                      std::size_t programs, std::uint64_t seed,
                                      const GeneratorConfig& gen_cfg) {
  std::filesystem::create_directories(dir);
  Rng rng(seed);
  nlohmann::json items = nlohmann::json::array();

  if (task == kTaskParity || task == kTaskRegionCount) {
    for (std::size_t i = 0; i < programs; ++i) {
      const CodeUnit unit = random_program(rng, gen_cfg);
      const std::string file = detail::corpus_file_name(i);
      detail::write_text(dir / file, render(unit));
      if (task == kTaskParity) {
        items.push_back({{"file", file}, {"label", parity_label(unit)}});
      } else {
        items.push_back({{"file", file}, {"labels", memory_touch_labels(unit)}});
      }
    }
  } else if (task == kTaskPairs) {
    for (std::size_t i = 0; i < programs; ++i) {
      const CodeUnit base = random_program(rng, gen_cfg);
      const std::string file_a = detail::corpus_file_name(2 * i);
      const std::string file_b = detail::corpus_file_name(2 * i + 1);
      detail::write_text(dir / file_a, render(base));
      const bool positive = i % 2 == 0;
      if (positive) {
        const Pdg g = build_pdg(base);
        const CodeUnit variant = apply(sample_reordering(g, 100, rng.next_u64()), base);
        detail::write_text(dir / file_b, render(variant));
      } else {
        detail::write_text(dir / file_b, render(random_program(rng, gen_cfg)));
      }
      items.push_back({{"a", file_a}, {"b", file_b}, {"label", positive ? 1 : -1}});
    }
  } else {
    throw std::invalid_argument("unknown task '" + std::string(task) + "'");
  }

  const nlohmann::json manifest = {{"task", std::string(task)},
                                   {"seed", seed},
                                   {"generator", gen_cfg},
                                   {"count", programs},
                                   {"items", items}};
  detail::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
  return nlohmann::json::parse(detail::read_text(dir / "manifest.json"));
}

inline std::vector<UnitSample> read_unit_corpus(const std::filesystem::path& dir) {
  const nlohmann::json manifest = read_manifest(dir);
  if (manifest.at("task") != kTaskParity)
    throw std::runtime_error("corpus task is not unit-labeled");
  std::vector<UnitSample> samples;
  for (const auto& item : manifest.at("items")) {
    samples.push_back({parse(detail::read_text(dir / item.at("file").get<std::string>())),
                       item.at("label").get<int>()});
  }
  return samples;
}

inline std::vector<TokenSample> read_token_corpus(const std::filesystem::path& dir) {
  const nlohmann::json manifest = read_manifest(dir);
  if (manifest.at("task") != kTaskRegionCount)
    throw std::runtime_error("corpus task is not token-labeled");
  std::vector<TokenSample> samples;
  for (const auto& item : manifest.at("items")) {
    samples.push_back({parse(detail::read_text(dir / item.at("file").get<std::string>())),
                       item.at("labels").get<std::vector<int>>()});
  }
  return samples;
}

inline std::vector<PairSample> read_pair_corpus(const std::filesystem::path& dir) {
  const nlohmann::json manifest = read_manifest(dir);
  if (manifest.at("task") != kTaskPairs)
    throw std::runtime_error("corpus task is not pair-labeled");
  std::vector<PairSample> samples;
  for (const auto& item : manifest.at("items")) {
    samples.push_back({parse(detail::read_text(dir / item.at("a").get<std::string>())),
                       parse(detail::read_text(dir / item.at("b").get<std::string>())),
                       item.at("label").get<int>()});
  }
  return samples;
}

}  // namespace codesym
