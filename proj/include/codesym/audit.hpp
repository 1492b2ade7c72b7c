#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "codesym/generator.hpp"
#include "codesym/model.hpp"
#include "codesym/symmetry.hpp"
#include "codesym/train.hpp"

#include <nlohmann/json.hpp>

namespace codesym {

// ---------------------------------------------------------------------------
// Machine-checked properties over seeded random corpora. Each suite returns
// an AuditReport; a report passes only if every property does. Reports
// serialize deterministically: the same seed yields byte-identical JSON
// (timing is kept out of the canonical form for that reason).
//
// Tolerance ladder: integer and lookup properties are exact, wide-precision
// float equivariance allows 1e-9, gradients and narrow precision 1e-4.
// ---------------------------------------------------------------------------

inline constexpr double kWideTolerance = 1e-9;
inline constexpr double kNarrowTolerance = 1e-4;
inline constexpr double kGradTolerance = 1e-4;

struct PropertyResult {
  std::string name;
  std::size_t instances = 0;
  std::size_t violations = 0;
  std::size_t inconclusive = 0;
  double max_abs_deviation = 0.0;
  double max_rel_deviation = 0.0;
  double tolerance = 0.0;
  bool pass = true;
  nlohmann::json extra;  // per-property details (rates, counts)

  void record(double abs_dev, double rel_dev = 0.0) {
    ++instances;
    max_abs_deviation = std::max(max_abs_deviation, abs_dev);
    max_rel_deviation = std::max(max_rel_deviation, rel_dev);
    if (abs_dev > tolerance) ++violations;
  }

  void finalize() { pass = violations == 0; }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"name", name},
                        {"instances", instances},
                        {"violations", violations},
                        {"inconclusive", inconclusive},
                        {"max_abs_deviation", max_abs_deviation},
                        {"max_rel_deviation", max_rel_deviation},
                        {"tolerance", tolerance},
                        {"pass", pass}};
    if (!extra.is_null()) j["extra"] = extra;
    return j;
  }
};

struct AuditReport {
  std::string suite;
  std::uint64_t seed = 0;
  nlohmann::json config;
  std::vector<PropertyResult> properties;
  bool pass = true;
  double wall_ms = 0.0;  // informational, excluded from canonical JSON

  void add(PropertyResult r) {
    r.finalize();
    pass = pass && r.pass;
    properties.push_back(std::move(r));
  }

  nlohmann::json to_json(bool include_timing = false) const {
    nlohmann::json props = nlohmann::json::array();
    for (const auto& p : properties) props.push_back(p.to_json());
    nlohmann::json j = {
        {"suite", suite}, {"seed", seed}, {"config", config}, {"properties", props}, {"pass", pass}};
    if (include_timing) j["wall_ms"] = wall_ms;
    return j;
  }
};

namespace detail {

class WallClock {
public:
  WallClock() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
        .count();
  }

private:
  std::chrono::steady_clock::time_point start_;
};

/// Instruction permutations to exercise for one program: the full
/// automorphism group when enumeration is feasible, otherwise sampled legal
/// reorderings.
inline std::vector<BlockPermutation> exercise_permutations(const Pdg& g, Rng& rng,
                                                           std::size_t enumeration_cap = 10,
                                                           std::size_t samples_when_large = 20) {
  if (g.n <= enumeration_cap) return automorphisms(g, enumeration_cap).elements;
  std::vector<BlockPermutation> out;
  out.reserve(samples_when_large);
  for (std::size_t i = 0; i < samples_when_large; ++i) {
    out.push_back(sample_reordering(g, 100, rng.next_u64()));
  }
  return out;
}

}  // namespace detail

/// Equivariance of the attention stack and invariance of the heads.
///
/// Exact checks: embedding equivariance against rebuilt features and pooled
/// head invariance under row permutation. Tolerance checks: per-layer and
/// full-stack equivariance, token head value drift, end-to-end prediction
/// drift under rebuilt reorderings, and the all-permutations property of the
/// unbiased stack. With negative_control set, positions switch to absolute
/// token indices and the report records how often equivariance breaks.
inline AuditReport audit_equivariance(const ModelConfig& base_cfg, std::size_t programs,
                                      std::uint64_t seed, bool negative_control = false,
                                      const GeneratorConfig& gen_cfg = {}) {
  detail::WallClock clock;
  ModelConfig cfg = base_cfg;
  cfg.absolute_positions = negative_control;
  const double tolerance = cfg.precision == Precision::Wide ? kWideTolerance : kNarrowTolerance;

  AuditReport report;
  report.suite = negative_control ? "equivariance-negative-control" : "equivariance";
  report.seed = seed;
  report.config = {{"programs", programs}, {"generator", gen_cfg}, {"model", cfg}};

  PropertyResult embed_exact{.name = "embed_equivariance_exact", .tolerance = 0.0};
  PropertyResult layer_equiv{.name = "layer_equivariance", .tolerance = tolerance};
  PropertyResult stack_equiv{.name = "stack_equivariance", .tolerance = tolerance};
  PropertyResult token_inv{.name = "token_head_value_invariance", .tolerance = tolerance};
  PropertyResult pool_exact{.name = "pooled_head_invariance_exact", .tolerance = 0.0};
  PropertyResult all_perm{.name = "unbiased_all_permutations", .tolerance = tolerance};
  constexpr double kBreakThreshold = 1e-3;  // deviation that counts as broken

  Rng rng(seed);
  std::size_t programs_with_nontrivial = 0;
  std::size_t programs_broken = 0;

  for (std::size_t p = 0; p < programs; ++p) {
    const CodeUnit unit = random_program(rng, gen_cfg);
    if (unit.token_count() == 0) continue;
    const Pdg g = build_pdg(unit);
    ModelConfig model_cfg = cfg;
    model_cfg.seed = rng.next_u64();
    const GaModel model = GaModel::init(model_cfg, 0.25);
    const Features features = make_features(unit, g, model_cfg);
    const Matrix embedded = embed(features, model);
    const Matrix activation = forward_stack(features, model);
    const Matrix logits = token_logits(activation, model);
    const std::vector<double> pooled = pool_logits(activation, model);

    const auto perms = detail::exercise_permutations(g, rng);
    bool program_broke = false;
    bool program_nontrivial = false;
    for (const auto& sigma_raw : perms) {
      const BlockPermutation sigma = sigma_raw.rebind(unit);
      const auto& tok = sigma.token_map();
      if (!sigma.is_identity()) program_nontrivial = true;

      // Rebuilt-input path: permuted program, features recomputed from its
      // own dependence graph.
      const CodeUnit permuted_unit = apply(sigma, unit);
      const Features rebuilt_features = make_features(permuted_unit, model_cfg);
      embed_exact.record(max_abs_diff(embed(rebuilt_features, model), permute_rows(embedded, tok)));

      const Matrix permuted_activation = forward_stack(rebuilt_features, model);
      const double stack_dev = max_abs_diff(permuted_activation, permute_rows(activation, tok));
      stack_equiv.record(stack_dev);
      if (stack_dev > kBreakThreshold) program_broke = true;

      // Activation-level path: one layer in isolation, both sides fed the
      // consistently permuted distance matrix.
      const Matrix lhs = ga_forward(permute_rows(embedded, tok),
                                    permute_features(features, tok).dist, model, 0);
      const Matrix rhs = permute_rows(ga_forward(embedded, features.dist, model, 0), tok);
      layer_equiv.record(max_abs_diff(lhs, rhs));

      // Token head: each token keeps its logits wherever it moves.
      const Matrix permuted_logits = token_logits(permuted_activation, model);
      double token_dev = 0.0;
      for (std::size_t t = 0; t < logits.rows(); ++t) {
        for (std::size_t j = 0; j < logits.cols(); ++j) {
          token_dev = std::max(token_dev, std::abs(permuted_logits(tok[t], j) - logits(t, j)));
        }
      }
      token_inv.record(token_dev);

      // Pooled head on the same activation, rows permuted: bit-exact.
      pool_exact.record(max_abs_diff(pool_logits(permute_rows(activation, tok), model), pooled));
    }
    if (program_nontrivial) {
      ++programs_with_nontrivial;
      if (program_broke) ++programs_broken;
    }

    // Unbiased attention with token-content embeddings only is equivariant
    // to arbitrary token permutations, not just block moves.
    GaModel unbiased = model;
    for (double& v : unbiased.params.bias_pos.data()) v = 0.0;
    for (double& v : unbiased.params.bias_neg.data()) v = 0.0;
    Features content_only = features;
    for (std::size_t t = 0; t < content_only.token_count; ++t) {
      content_only.row_pos[t] = 0;
      content_only.row_ind[t] = 0;
      content_only.row_outd[t] = 0;
    }
    const Matrix e0 = embed(content_only, unbiased);
    const Matrix y0 = forward_stack(content_only, unbiased);
    std::vector<std::size_t> token_perm(unit.token_count());
    std::iota(token_perm.begin(), token_perm.end(), 0);
    for (std::size_t r = 0; r < 3; ++r) {
      rng.shuffle(token_perm);
      const Features shuffled = permute_features(content_only, token_perm);
      all_perm.record(max_abs_diff(forward_stack(shuffled, unbiased), permute_rows(y0, token_perm)));
    }
  }

  const double break_rate = programs_with_nontrivial == 0
                                ? 0.0
                                : static_cast<double>(programs_broken) /
                                      static_cast<double>(programs_with_nontrivial);
  stack_equiv.extra = {{"programs_with_nontrivial_permutation", programs_with_nontrivial},
                       {"programs_broken", programs_broken},
                       {"break_rate", break_rate}};

  report.add(embed_exact);
  report.add(layer_equiv);
  report.add(stack_equiv);
  report.add(token_inv);
  report.add(pool_exact);
  report.add(all_perm);
  report.wall_ms = clock.elapsed_ms();
  return report;
}

/// Distance-matrix invariance under automorphisms and commutation with their
/// permutation matrices. Both checks are integer-exact. For programs too
/// large to enumerate, sampled reorderings are filtered through the
/// automorphism predicate first; the relabeling consistency of rebuilt
/// matrices is checked for every sampled reordering.
inline AuditReport audit_distance_invariance(std::size_t programs, std::uint64_t seed,
                                             const GeneratorConfig& gen_cfg = {}) {
  detail::WallClock clock;
  AuditReport report;
  report.suite = "distance";
  report.seed = seed;
  report.config = {{"programs", programs}, {"generator", gen_cfg}};

  PropertyResult invariance{.name = "distance_automorphism_invariance", .tolerance = 0.0};
  PropertyResult commutation{.name = "distance_commutes_with_permutation", .tolerance = 0.0};
  PropertyResult rebuilt{.name = "distance_rebuild_consistency", .tolerance = 0.0};
  std::size_t automorphisms_checked = 0;

  Rng rng(seed);
  for (std::size_t p = 0; p < programs; ++p) {
    const CodeUnit unit = random_program(rng, gen_cfg);
    const Pdg g = build_pdg(unit);
    const DistanceMatrix d = distance_matrix(g);

    const auto perms = detail::exercise_permutations(g, rng);
    for (const auto& sigma : perms) {
      if (is_automorphism(g, sigma)) {
        ++automorphisms_checked;
        // D(sigma i, sigma j) == D(i, j), exact integers.
        std::size_t bad = 0;
        for (std::size_t i = 0; i < g.n; ++i) {
          for (std::size_t j = 0; j < g.n; ++j) {
            if (!(d.at(sigma(i), sigma(j)) == d.at(i, j))) ++bad;
          }
        }
        invariance.record(static_cast<double>(bad));

        // Scalar matrices built from either tuple component commute with
        // the permutation matrix.
        const Matrix p_sigma = permutation_matrix(sigma.map());
        std::size_t bad_commute = 0;
        for (int component = 0; component < 2; ++component) {
          Matrix scalar(g.n, g.n);
          for (std::size_t i = 0; i < g.n; ++i) {
            for (std::size_t j = 0; j < g.n; ++j) {
              const DistEntry& e = d.at(i, j);
              scalar(i, j) = component == 0 ? e.pos : e.neg;
            }
          }
          if (max_abs_diff(scalar * p_sigma, p_sigma * scalar) != 0.0) ++bad_commute;
        }
        commutation.record(static_cast<double>(bad_commute));
      }

      // Rebuilding from the permuted program relabels the matrix.
      const CodeUnit permuted = apply(sigma, unit);
      const DistanceMatrix rebuilt_d = distance_matrix(build_pdg(permuted));
      std::size_t bad_rebuild = 0;
      for (std::size_t i = 0; i < g.n; ++i) {
        for (std::size_t j = 0; j < g.n; ++j) {
          if (!(rebuilt_d.at(sigma(i), sigma(j)) == d.at(i, j))) ++bad_rebuild;
        }
      }
      rebuilt.record(static_cast<double>(bad_rebuild));
    }
  }
  invariance.extra = {{"automorphisms_checked", automorphisms_checked}};

  report.add(invariance);
  report.add(commutation);
  report.add(rebuilt);
  report.wall_ms = clock.elapsed_ms();
  return report;
}

/// Interpreter oracle: every sampled reordering and every enumerated
/// automorphism leaves input-output behavior unchanged. Fuel-limited runs
/// count as inconclusive, never as violations.
inline AuditReport audit_semantics(std::size_t programs, std::size_t trials, std::uint64_t seed,
                                   const GeneratorConfig& gen_cfg = {}) {
  detail::WallClock clock;
  AuditReport report;
  report.suite = "semantics";
  report.seed = seed;
  report.config = {{"programs", programs}, {"trials", trials}, {"generator", gen_cfg}};

  PropertyResult reorderings{.name = "sampled_reorderings_io_equivalent", .tolerance = 0.0};
  PropertyResult autos{.name = "automorphisms_io_equivalent", .tolerance = 0.0};
  std::size_t order_compatible = 0, automorphism_count = 0;

  Rng rng(seed);
  for (std::size_t p = 0; p < programs; ++p) {
    const CodeUnit unit = random_program(rng, gen_cfg);
    const Pdg g = build_pdg(unit);

    for (int percent : {25, 50, 75, 100}) {
      const BlockPermutation pi = sample_reordering(g, percent, rng.next_u64());
      const EquivResult r = io_equivalent(unit, apply(pi, unit), trials, rng.next_u64());
      if (r.verdict == EquivVerdict::Inconclusive) {
        ++reorderings.instances;
        ++reorderings.inconclusive;
      } else {
        reorderings.record(r.equivalent() ? 0.0 : 1.0);
      }
    }

    if (g.n <= 10) {
      for (const auto& sigma : automorphisms(g).elements) {
        ++automorphism_count;
        // Every forward-edge automorphism is order-compatible on dependent
        // pairs; recorded, not assumed.
        bool compatible = true;
        for (const Edge& e : g.edges) {
          if (sigma(e.src) >= sigma(e.dst)) compatible = false;
        }
        if (compatible) ++order_compatible;
        const EquivResult r = io_equivalent(unit, apply(sigma, unit), trials, rng.next_u64());
        if (r.verdict == EquivVerdict::Inconclusive) {
          ++autos.instances;
          ++autos.inconclusive;
        } else {
          autos.record(r.equivalent() ? 0.0 : 1.0);
        }
      }
    }
  }
  autos.extra = {{"automorphisms", automorphism_count},
                 {"order_compatible", order_compatible}};

  report.add(reorderings);
  report.add(autos);
  report.wall_ms = clock.elapsed_ms();
  return report;
}

/// Central finite differences against the analytic gradients for every
/// parameter tensor, one task head at a time.
inline AuditReport audit_gradients(const ModelConfig& base_cfg, std::uint64_t seed,
                                   const GeneratorConfig& gen_cfg = {}) {
  detail::WallClock clock;
  AuditReport report;
  report.suite = "gradients";
  report.seed = seed;
  report.config = {{"model", base_cfg}, {"generator", gen_cfg}};

  Rng rng(seed);
  GeneratorConfig small = gen_cfg;
  small.min_instructions = 2;
  small.max_instructions = 5;

  ModelConfig cfg = base_cfg;
  cfg.seed = rng.next_u64();
  cfg.validate();

  const CodeUnit unit_a = random_program(rng, small);
  const CodeUnit unit_b = random_program(rng, small);
  const Features fa = make_features(unit_a, cfg);
  const Features fb = make_features(unit_b, cfg);
  const std::size_t label = 1 % cfg.label_count;
  std::vector<int> token_labels(unit_a.token_count());
  for (std::size_t t = 0; t < token_labels.size(); ++t) {
    token_labels[t] = static_cast<int>(t % cfg.label_count);
  }

  struct TaskSpec {
    std::string name;
    std::function<double(const GaModel&, ParamSet&)> backward;
    std::function<double(const GaModel&)> loss;
  };
  const std::vector<TaskSpec> tasks = {
      {"grad_check_pooled",
       [&](const GaModel& m, ParamSet& g) { return backward_unit(fa, label, m, g); },
       [&](const GaModel& m) { return loss_unit(fa, label, m); }},
      {"grad_check_token",
       [&](const GaModel& m, ParamSet& g) { return backward_token(fa, token_labels, m, g); },
       [&](const GaModel& m) { return loss_token(fa, token_labels, m); }},
      {"grad_check_pair",
       [&](const GaModel& m, ParamSet& g) { return backward_pair(fa, fb, 1, m, g); },
       [&](const GaModel& m) { return loss_pair(fa, fb, 1, m); }},
  };

  constexpr double kStep = 1e-5;
  for (const TaskSpec& task : tasks) {
    PropertyResult prop{.name = task.name, .tolerance = kGradTolerance};
    GaModel model = GaModel::init(cfg, 0.3);
    ParamSet grads = ParamSet::shaped(cfg);
    task.backward(model, grads);

    auto params = model.params.collect();
    auto grad_mats = grads.collect();
    for (std::size_t m = 0; m < params.size(); ++m) {
      auto& data = params[m]->data();
      const auto& grad = grad_mats[m]->data();
      for (std::size_t k = 0; k < data.size(); ++k) {
        const double saved = data[k];
        data[k] = saved + kStep;
        const double up = task.loss(model);
        data[k] = saved - kStep;
        const double down = task.loss(model);
        data[k] = saved;
        const double fd = (up - down) / (2.0 * kStep);
        const double analytic = grad[k];
        const double rel = std::abs(analytic - fd) /
                           std::max({std::abs(analytic), std::abs(fd), 1e-6});
        prop.record(rel, rel);
      }
    }
    report.add(prop);
  }
  report.wall_ms = clock.elapsed_ms();
  return report;
}

}  // namespace codesym
