// Command-line surface: parse and inspect programs, emit dependence graphs,
// sample semantics-preserving reorderings, run the audit suites, and train
// and evaluate the toy models on generated corpora.
//
// Exit codes: 0 success, 1 a checked property failed, 2 usage or input error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "codesym/audit.hpp"
#include "codesym/checkpoint.hpp"
#include "codesym/corpus.hpp"
#include "codesym/train.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitPropertyFailure = 1;
constexpr int kExitUsage = 2;

std::string read_input(const std::string& path) {
  if (path == "-") {
    return {std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>()};
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open input file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  out << text;
}

/// Values from --config files fill in flags the user did not pass.
void apply_config_defaults(const std::string& config_path,
                           const std::function<void(const json&)>& apply) {
  if (config_path.empty()) return;
  const json cfg = json::parse(read_input(config_path));
  apply(cfg);
}

template <typename T>
void config_override(const CLI::App& cmd, const json& cfg, const std::string& flag,
                     const std::string& key, T& value) {
  const CLI::Option* opt = cmd.get_option_no_throw("--" + flag);
  if (opt != nullptr && opt->count() > 0) return;  // explicit flag wins
  if (cfg.contains(key)) value = cfg.at(key).get<T>();
}

struct ModelFlags {
  std::size_t d_model = 32;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t buckets = 16;
  bool residual_norm = false;
  bool narrow = false;
  std::uint64_t seed = 1;

  void attach(CLI::App& cmd) {
    cmd.add_option("--d-model", d_model, "embedding width");
    cmd.add_option("--heads", heads, "attention head count (even)");
    cmd.add_option("--layers", layers, "attention layer count");
    cmd.add_option("--buckets", buckets, "distance bias bucket clamp");
    cmd.add_flag("--residual-norm", residual_norm, "enable the residual+norm variant");
    cmd.add_flag("--narrow", narrow, "evaluate in narrowed (bf16-like) precision");
  }

  codesym::ModelConfig to_config() const {
    codesym::ModelConfig cfg;
    cfg.d_model = d_model;
    cfg.heads = heads;
    cfg.layers = layers;
    cfg.max_distance_bucket = buckets;
    cfg.residual_norm = residual_norm;
    cfg.precision = narrow ? codesym::Precision::Narrow : codesym::Precision::Wide;
    cfg.seed = seed;
    return cfg;
  }
};

void attach_generator_flags(CLI::App& cmd, codesym::GeneratorConfig& gen) {
  cmd.add_option("--min-instructions", gen.min_instructions);
  cmd.add_option("--max-instructions", gen.max_instructions);
  cmd.add_option("--variable-pool", gen.variable_pool);
  cmd.add_option("--branch-prob", gen.branch_probability);
  cmd.add_option("--back-edge-prob", gen.back_edge_probability);
  cmd.add_option("--label-prob", gen.label_probability);
  cmd.add_option("--halt-prob", gen.halt_probability);
  cmd.add_option("--memory-prob", gen.memory_probability);
}

int run(int argc, char** argv) {
  CLI::App app{"dependence-graph symmetry toolkit"};
  app.require_subcommand(1);

  std::uint64_t global_seed = 1;
  app.add_option("--seed", global_seed, "global random seed")
      ->envname("CODESYM_SEED");

  // parse -------------------------------------------------------------
  auto* cmd_parse = app.add_subcommand("parse", "parse a program and dump its structure");
  std::string parse_input;
  std::string parse_output;
  cmd_parse->add_option("input", parse_input, "program file, or - for stdin")->required();
  cmd_parse->add_option("-o,--output", parse_output, "output path (default stdout)");

  // pdg ---------------------------------------------------------------
  auto* cmd_pdg = app.add_subcommand("pdg", "emit the dependence graph of a program");
  std::string pdg_input, pdg_output;
  std::string pdg_format = "json";
  cmd_pdg->add_option("input", pdg_input)->required();
  cmd_pdg->add_option("--format", pdg_format)->check(CLI::IsMember({"json", "dot"}));
  cmd_pdg->add_option("-o,--output", pdg_output);

  // perm --------------------------------------------------------------
  auto* cmd_perm = app.add_subcommand("perm", "emit reordered variants of a program");
  std::string perm_input, perm_outdir = "perm_out";
  int perm_percent = 100;
  std::size_t perm_count = 1;
  bool perm_verify = false;
  std::size_t perm_trials = 25;
  cmd_perm->add_option("input", perm_input)->required();
  cmd_perm->add_option("--percent", perm_percent)->check(CLI::Range(0, 100));
  cmd_perm->add_option("--count", perm_count);
  cmd_perm->add_option("--trials", perm_trials, "io-equivalence trials per variant");
  cmd_perm->add_flag("--verify", perm_verify, "check io-equivalence of every variant");
  cmd_perm->add_option("-o,--output", perm_outdir, "output directory");

  // audit ---------------------------------------------------------------
  auto* cmd_audit = app.add_subcommand("audit", "run the property suites");
  std::string audit_suite = "all";
  std::string audit_output;
  std::size_t audit_programs = 0;  // 0 = per-suite default
  std::size_t audit_trials = 50;
  bool audit_negative = false;
  bool audit_timing = false;
  cmd_audit->add_option("--suite", audit_suite)
      ->check(CLI::IsMember({"equivariance", "distance", "semantics", "gradients", "all"}));
  cmd_audit->add_option("--programs", audit_programs);
  cmd_audit->add_option("--trials", audit_trials);
  cmd_audit->add_flag("--negative-control", audit_negative,
                      "swap in absolute positions to demonstrate the broken variant");
  cmd_audit->add_flag("--timing", audit_timing, "include wall time in the report");
  cmd_audit->add_option("-o,--output", audit_output);

  // gen -----------------------------------------------------------------
  auto* cmd_gen = app.add_subcommand("gen", "generate a labeled synthetic corpus");
  std::string gen_task = "parity";
  std::string gen_outdir;
  std::size_t gen_programs = 100;
  codesym::GeneratorConfig gen_cfg;
  cmd_gen->add_option("--task", gen_task)
      ->check(CLI::IsMember({std::string(codesym::kTaskParity),
                             std::string(codesym::kTaskRegionCount),
                             std::string(codesym::kTaskPairs)}));
  cmd_gen->add_option("--programs", gen_programs);
  cmd_gen->add_option("-o,--output", gen_outdir)->required();
  attach_generator_flags(*cmd_gen, gen_cfg);

  // train -----------------------------------------------------------------
  auto* cmd_train = app.add_subcommand("train", "train a model on a corpus directory");
  std::string train_corpus, train_output = "model.bin", train_trace, train_config;
  ModelFlags train_model;
  std::size_t train_epochs = 10, train_batch = 32;
  double train_lr = 0.1;
  cmd_train->add_option("--corpus", train_corpus)->required();
  cmd_train->add_option("-o,--output", train_output);
  cmd_train->add_option("--trace", train_trace, "write the loss trace JSON here");
  cmd_train->add_option("--config", train_config, "JSON config file (flags override)");
  cmd_train->add_option("--epochs", train_epochs);
  cmd_train->add_option("--batch", train_batch);
  cmd_train->add_option("--lr", train_lr);
  train_model.attach(*cmd_train);

  // eval ------------------------------------------------------------------
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  std::string eval_corpus, eval_model, eval_output;
  int eval_percent = 0;
  bool eval_narrow = false;
  cmd_eval->add_option("--corpus", eval_corpus)->required();
  cmd_eval->add_option("--model", eval_model)->required();
  cmd_eval->add_option("--percent", eval_percent)->check(CLI::Range(0, 100));
  cmd_eval->add_flag("--narrow", eval_narrow, "evaluate in narrowed precision");
  cmd_eval->add_option("-o,--output", eval_output);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (cmd_parse->parsed()) {
    const codesym::CodeUnit unit = codesym::parse(read_input(parse_input));
    json instructions = json::array();
    for (const auto& in : unit.instructions) {
      instructions.push_back({{"index", in.index}, {"text", codesym::render_instruction(in)}});
    }
    const json out = {{"instructions", instructions},
                      {"tokens", unit.tokens},
                      {"token_owner", unit.token_owner},
                      {"intra_pos", unit.intra_pos}};
    write_output(parse_output, out.dump(2) + "\n");
    return kExitOk;
  }

  if (cmd_pdg->parsed()) {
    const codesym::CodeUnit unit = codesym::parse(read_input(pdg_input));
    const codesym::Pdg g = codesym::build_pdg(unit);
    if (pdg_format == "dot") {
      write_output(pdg_output, codesym::pdg_to_dot(g, unit));
    } else {
      write_output(pdg_output, codesym::pdg_to_json(g, unit).dump(2) + "\n");
    }
    return kExitOk;
  }

  if (cmd_perm->parsed()) {
    const codesym::CodeUnit unit = codesym::parse(read_input(perm_input));
    const codesym::Pdg g = codesym::build_pdg(unit);
    std::filesystem::create_directories(perm_outdir);
    json variants = json::array();
    bool all_verified = true;
    for (std::size_t i = 0; i < perm_count; ++i) {
      const std::uint64_t variant_seed = global_seed + i;
      const codesym::BlockPermutation pi =
          codesym::sample_reordering(g, perm_percent, variant_seed);
      const codesym::CodeUnit variant = codesym::apply(pi, unit);
      char name[32];
      std::snprintf(name, sizeof(name), "variant_%03zu.ir", i);
      codesym::detail::write_text(std::filesystem::path(perm_outdir) / name,
                                  codesym::render(variant));
      json entry = {{"file", name}, {"seed", variant_seed}, {"permutation", pi.map()}};
      if (perm_verify) {
        const codesym::EquivResult r =
            codesym::io_equivalent(unit, variant, perm_trials, variant_seed);
        entry["verified"] = r.equivalent();
        entry["verdict"] = r.verdict == codesym::EquivVerdict::Equivalent     ? "equivalent"
                           : r.verdict == codesym::EquivVerdict::Inequivalent ? "inequivalent"
                                                                              : "inconclusive";
        if (r.verdict == codesym::EquivVerdict::Inequivalent) all_verified = false;
      }
      variants.push_back(entry);
    }
    const json manifest = {{"input", perm_input},
                           {"percent", perm_percent},
                           {"seed", global_seed},
                           {"count", perm_count},
                           {"verify", perm_verify},
                           {"variants", variants}};
    codesym::detail::write_text(std::filesystem::path(perm_outdir) / "manifest.json",
                                manifest.dump(2) + "\n");
    if (!all_verified) {
      std::cerr << "permutation verification failed, see manifest\n";
      return kExitPropertyFailure;
    }
    return kExitOk;
  }

  if (cmd_audit->parsed()) {
    codesym::ModelConfig model_cfg;  // audit default: the desk-scale model
    std::vector<codesym::AuditReport> reports;
    const auto want = [&](const std::string& s) {
      return audit_suite == "all" || audit_suite == s;
    };
    if (want("equivariance")) {
      reports.push_back(codesym::audit_equivariance(
          model_cfg, audit_programs ? audit_programs : 50, global_seed, audit_negative));
    }
    if (want("distance")) {
      reports.push_back(
          codesym::audit_distance_invariance(audit_programs ? audit_programs : 50, global_seed));
    }
    if (want("semantics")) {
      reports.push_back(codesym::audit_semantics(audit_programs ? audit_programs : 100,
                                                 audit_trials, global_seed));
    }
    if (want("gradients")) {
      codesym::ModelConfig grad_cfg;
      grad_cfg.d_model = 16;
      grad_cfg.heads = 2;
      grad_cfg.layers = 2;
      reports.push_back(codesym::audit_gradients(grad_cfg, global_seed));
    }
    json out = json::array();
    bool pass = true;
    for (const auto& r : reports) {
      out.push_back(r.to_json(audit_timing));
      pass = pass && r.pass;
    }
    write_output(audit_output, out.dump(2) + "\n");
    if (!pass) {
      for (const auto& r : reports) {
        for (const auto& p : r.properties) {
          if (!p.pass) std::cerr << "FAILED property: " << r.suite << "/" << p.name << "\n";
        }
      }
      return kExitPropertyFailure;
    }
    return kExitOk;
  }

  if (cmd_gen->parsed()) {
    codesym::generate_corpus(gen_outdir, gen_task, gen_programs, global_seed, gen_cfg);
    return kExitOk;
  }

  if (cmd_train->parsed()) {
    apply_config_defaults(train_config, [&](const json& cfg) {
      config_override(*cmd_train, cfg, "d-model", "d_model", train_model.d_model);
      config_override(*cmd_train, cfg, "heads", "heads", train_model.heads);
      config_override(*cmd_train, cfg, "layers", "layers", train_model.layers);
      config_override(*cmd_train, cfg, "buckets", "max_distance_bucket", train_model.buckets);
      config_override(*cmd_train, cfg, "epochs", "epochs", train_epochs);
      config_override(*cmd_train, cfg, "batch", "batch", train_batch);
      config_override(*cmd_train, cfg, "lr", "lr", train_lr);
    });
    train_model.seed = global_seed;
    codesym::ModelConfig cfg = train_model.to_config();
    codesym::TrainOptions opts;
    opts.epochs = train_epochs;
    opts.batch_size = train_batch;
    opts.learning_rate = train_lr;
    opts.shuffle_seed = global_seed;

    const json manifest = codesym::read_manifest(train_corpus);
    const std::string task = manifest.at("task");
    codesym::TrainTrace trace;
    codesym::GaModel model;
    if (task == codesym::kTaskParity) {
      model = codesym::train_unit(codesym::read_unit_corpus(train_corpus), cfg, opts, &trace);
    } else if (task == codesym::kTaskRegionCount) {
      model = codesym::train_token(codesym::read_token_corpus(train_corpus), cfg, opts, &trace);
    } else {
      model = codesym::train_pair(codesym::read_pair_corpus(train_corpus), cfg, opts, &trace);
    }
    codesym::save_model(model, train_output);
    const json trace_json = {{"task", task},
                             {"corpus", train_corpus},
                             {"seed", global_seed},
                             {"model", cfg},
                             {"epochs", train_epochs},
                             {"batch", train_batch},
                             {"lr", train_lr},
                             {"epoch_loss", trace.epoch_loss}};
    if (!train_trace.empty()) write_output(train_trace, trace_json.dump(2) + "\n");
    std::cerr << "saved " << train_output << "\n";
    return kExitOk;
  }

  if (cmd_eval->parsed()) {
    codesym::GaModel model = codesym::load_model(eval_model);
    if (eval_narrow) model.cfg.precision = codesym::Precision::Narrow;
    const json manifest = codesym::read_manifest(eval_corpus);
    const std::string task = manifest.at("task");
    json out = {{"task", task},
                {"corpus", eval_corpus},
                {"percent", eval_percent},
                {"seed", global_seed},
                {"narrow", eval_narrow},
                {"model", model.cfg}};
    if (task == codesym::kTaskParity) {
      const auto samples = codesym::read_unit_corpus(eval_corpus);
      const auto preds = codesym::unit_predictions(model, samples, eval_percent, global_seed);
      std::vector<int> gold;
      std::vector<double> scores;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        gold.push_back(samples[i].label);
        const codesym::CodeUnit unit =
            codesym::permuted_copy(samples[i].unit, eval_percent, global_seed + i);
        const auto logits = codesym::pool_logits(
            codesym::forward_stack(codesym::make_features(unit, model.cfg), model), model);
        scores.push_back(logits[1] - logits[0]);
      }
      const codesym::F1Result f1 = codesym::binary_f1(preds, gold);
      out["count"] = samples.size();
      out["f1"] = f1.f1;
      out["precision"] = f1.precision;
      out["recall"] = f1.recall;
      out["auc"] = codesym::exact_auc(scores, gold);
      out["predictions"] = preds;
      std::string digest_input;
      for (int p : preds) digest_input += std::to_string(p) + ",";
      out["predictions_digest"] = codesym::fnv1a(digest_input);
    } else if (task == codesym::kTaskRegionCount) {
      const auto samples = codesym::read_token_corpus(eval_corpus);
      const codesym::F1Result f1 =
          codesym::evaluate_token(model, samples, eval_percent, global_seed);
      out["count"] = samples.size();
      out["f1"] = f1.f1;
      out["precision"] = f1.precision;
      out["recall"] = f1.recall;
    } else {
      const auto samples = codesym::read_pair_corpus(eval_corpus);
      const codesym::PairEvaluation pe =
          codesym::evaluate_pair(model, samples, eval_percent, global_seed);
      out["count"] = samples.size();
      out["auc"] = pe.auc;
      out["scores"] = pe.scores;
    }
    write_output(eval_output, out.dump(2) + "\n");
    return kExitOk;
  }

  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const codesym::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const codesym::CycleError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
