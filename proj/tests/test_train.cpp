#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <vector>

#include "codesym/corpus.hpp"
#include "codesym/generator.hpp"
#include "codesym/train.hpp"

using namespace codesym;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.max_distance_bucket = 8;
  cfg.seed = 5;
  return cfg;
}

std::vector<UnitSample> parity_corpus(std::size_t count, std::uint64_t seed,
                                      const GeneratorConfig& gen) {
  Rng rng(seed);
  std::vector<UnitSample> out;
  out.reserve(count);
  while (out.size() < count) {
    const CodeUnit unit = random_program(rng, gen);
    if (unit.token_count() == 0) continue;
    out.push_back({unit, parity_label(unit)});
  }
  return out;
}

}  // namespace

TEST_CASE("binary F1 counts the confusion cells") {
  const F1Result r = binary_f1({1, 1, 0, 0, 1}, {1, 0, 0, 1, 1});
  CHECK(r.tp == 2);
  CHECK(r.fp == 1);
  CHECK(r.fn == 1);
  CHECK_THAT(r.f1, Catch::Matchers::WithinAbs(2.0 * (2.0 / 3.0) * (2.0 / 3.0) / (4.0 / 3.0), 1e-12));
}

TEST_CASE("exact AUC is the rank statistic") {
  CHECK_THAT(exact_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}),
             Catch::Matchers::WithinAbs(0.75, 1e-12));
  CHECK_THAT(exact_auc({0.9, 0.1}, {1, 0}), Catch::Matchers::WithinAbs(1.0, 1e-12));
  CHECK_THAT(exact_auc({0.5, 0.5}, {1, 0}), Catch::Matchers::WithinAbs(0.5, 1e-12));
  CHECK_THROWS_AS(exact_auc({0.5, 0.5}, {1, 1}), std::invalid_argument);
}

TEST_CASE("training on an empty corpus is rejected") {
  CHECK_THROWS_AS(train_unit({}, small_config(), TrainOptions{}), std::invalid_argument);
}

TEST_CASE("labels outside the configured range are rejected") {
  const CodeUnit unit = parse("a=1");
  CHECK_THROWS_AS(train_unit({{unit, 7}}, small_config(), TrainOptions{}),
                  std::invalid_argument);
  CHECK_THROWS_AS(train_pair({{unit, unit, 0}}, small_config(), TrainOptions{}),
                  std::invalid_argument);
}

TEST_CASE("a one-sample corpus is memorized to near-zero loss") {
  TrainOptions opts;
  opts.epochs = 400;
  opts.batch_size = 1;
  opts.learning_rate = 1.0;
  TrainTrace trace;
  const GaModel m = train_unit({{parse("a=1;b=a;c=a+b"), 1}}, small_config(), opts, &trace);
  REQUIRE_FALSE(trace.epoch_loss.empty());
  CHECK(trace.epoch_loss.back() < 1e-3);
}

TEST_CASE("training is bitwise reproducible under a fixed seed") {
  GeneratorConfig gen;
  gen.max_instructions = 6;
  const auto corpus = parity_corpus(8, 42, gen);
  TrainOptions opts;
  opts.epochs = 3;
  opts.batch_size = 4;

  const GaModel a = train_unit(corpus, small_config(), opts);
  const GaModel b = train_unit(corpus, small_config(), opts);
  auto pa = a.params.collect();
  auto pb = b.params.collect();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i]->data() == pb[i]->data());
  }
}

TEST_CASE("the parity task is learned past the majority baseline") {
  GeneratorConfig gen;
  gen.min_instructions = 6;
  gen.max_instructions = 10;
  gen.branch_probability = 0.0;
  gen.label_probability = 0.0;
  gen.halt_probability = 0.0;
  const auto train_set = parity_corpus(240, 1001, gen);
  const auto test_set = parity_corpus(80, 1002, gen);

  ModelConfig cfg = small_config();
  cfg.d_model = 32;
  cfg.heads = 4;
  cfg.layers = 2;
  TrainOptions opts;
  opts.epochs = 30;
  opts.batch_size = 16;
  opts.learning_rate = 0.6;
  const GaModel m = train_unit(train_set, cfg, opts);

  std::vector<int> gold;
  std::size_t positives = 0;
  for (const auto& s : test_set) {
    gold.push_back(s.label);
    positives += static_cast<std::size_t>(s.label);
  }
  // Majority baseline: predict the more frequent class everywhere.
  const bool majority_is_one = 2 * positives >= test_set.size();
  const F1Result baseline =
      binary_f1(std::vector<int>(test_set.size(), majority_is_one ? 1 : 0), gold);
  const F1Result trained = evaluate_unit(m, test_set);
  INFO("trained F1 " << trained.f1 << " vs baseline " << baseline.f1);
  CHECK(trained.f1 > baseline.f1);
}

TEST_CASE("evaluation on permuted copies matches the original") {
  GeneratorConfig gen;
  gen.max_instructions = 8;
  const auto test_set = parity_corpus(20, 77, gen);
  ModelConfig cfg = small_config();
  TrainOptions opts;
  opts.epochs = 2;
  const GaModel m = train_unit(test_set, cfg, opts);

  const auto base = unit_predictions(m, test_set, 0, 9);
  for (int percent : {25, 50, 75, 100}) {
    REQUIRE(unit_predictions(m, test_set, percent, 9) == base);
  }
}

TEST_CASE("token task evaluation moves labels with their tokens") {
  GeneratorConfig gen;
  gen.max_instructions = 8;
  Rng rng(555);
  std::vector<TokenSample> samples;
  while (samples.size() < 12) {
    const CodeUnit unit = random_program(rng, gen);
    if (unit.token_count() == 0) continue;
    samples.push_back({unit, memory_touch_labels(unit)});
  }
  ModelConfig cfg = small_config();
  TrainOptions opts;
  opts.epochs = 2;
  const GaModel m = train_token(samples, cfg, opts);
  const F1Result base = evaluate_token(m, samples, 0, 4);
  const F1Result moved = evaluate_token(m, samples, 100, 4);
  CHECK(base.tp == moved.tp);
  CHECK(base.fp == moved.fp);
  CHECK(base.fn == moved.fn);
}

TEST_CASE("pair corpora generate verifiable positives") {
  const auto dir = std::filesystem::temp_directory_path() / "codesym_pairs_test";
  std::filesystem::remove_all(dir);
  GeneratorConfig gen;
  gen.max_instructions = 8;
  generate_corpus(dir, kTaskPairs, 10, 31, gen);
  const auto pairs = read_pair_corpus(dir);
  REQUIRE(pairs.size() == 10);
  for (const auto& p : pairs) {
    if (p.label == 1) {
      CHECK(io_equivalent(p.a, p.b, 15, 99).verdict != EquivVerdict::Inequivalent);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("corpus manifests are byte-stable and labels recount") {
  const auto dir = std::filesystem::temp_directory_path() / "codesym_parity_test";
  std::filesystem::remove_all(dir);
  GeneratorConfig gen;
  gen.max_instructions = 8;
  const nlohmann::json manifest = generate_corpus(dir, kTaskParity, 12, 7, gen);
  CHECK(manifest.at("task") == "parity");
  CHECK(manifest.at("count") == 12);

  // Independent recount straight from the emitted files.
  for (const auto& item : manifest.at("items")) {
    const CodeUnit unit =
        parse(codesym::detail::read_text(dir / item.at("file").get<std::string>()));
    int writes = 0;
    for (const Instruction& in : unit.instructions) {
      if (in.dest == "a") ++writes;
    }
    REQUIRE(item.at("label").get<int>() == writes % 2);
  }

  const auto dir2 = std::filesystem::temp_directory_path() / "codesym_parity_test2";
  std::filesystem::remove_all(dir2);
  generate_corpus(dir2, kTaskParity, 12, 7, gen);
  CHECK(codesym::detail::read_text(dir / "manifest.json") ==
        codesym::detail::read_text(dir2 / "manifest.json"));
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("an empty corpus writes an empty manifest") {
  const auto dir = std::filesystem::temp_directory_path() / "codesym_empty_corpus";
  std::filesystem::remove_all(dir);
  const nlohmann::json manifest = generate_corpus(dir, kTaskParity, 0, 1, {});
  CHECK(manifest.at("count") == 0);
  CHECK(manifest.at("items").empty());
  std::filesystem::remove_all(dir);
}
