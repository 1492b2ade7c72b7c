#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "codesym/ir.hpp"
#include "codesym/rng.hpp"

#include <nlohmann/json.hpp>

namespace codesym {

/// Random program shape knobs. The defaults are the fixed verification
/// profile recorded in every audit report.
struct GeneratorConfig {
  std::size_t min_instructions = 2;
  std::size_t max_instructions = 16;
  std::size_t variable_pool = 4;  // a, b, c, ...
  double branch_probability = 0.2;
  double back_edge_probability = 0.05;
  double label_probability = 0.15;
  double halt_probability = 0.03;
  double memory_probability = 0.15;  // chance a data instruction is load/store
};

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"min_instructions", c.min_instructions},
       {"max_instructions", c.max_instructions},
       {"variable_pool", c.variable_pool},
       {"branch_probability", c.branch_probability},
       {"back_edge_probability", c.back_edge_probability},
       {"label_probability", c.label_probability},
       {"halt_probability", c.halt_probability},
       {"memory_probability", c.memory_probability}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  j.at("min_instructions").get_to(c.min_instructions);
  j.at("max_instructions").get_to(c.max_instructions);
  j.at("variable_pool").get_to(c.variable_pool);
  j.at("branch_probability").get_to(c.branch_probability);
  j.at("back_edge_probability").get_to(c.back_edge_probability);
  j.at("label_probability").get_to(c.label_probability);
  j.at("halt_probability").get_to(c.halt_probability);
  j.at("memory_probability").get_to(c.memory_probability);
}

namespace detail {

inline std::string pool_variable(std::size_t i) {
  std::string name(1, static_cast<char>('a' + i % 26));
  if (i >= 26) name += std::to_string(i / 26);
  return name;
}

}  // namespace detail

/// Draws a syntactically valid program: labels are unique, every branch
/// resolves, and all operands come from a small shared variable pool. Labels
/// are placed first so branches can aim forward or (rarely) backward.
inline CodeUnit random_program(Rng& rng, const GeneratorConfig& cfg = {}) {
  const std::size_t n =
      static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(cfg.min_instructions),
                                               static_cast<std::int64_t>(cfg.max_instructions)));
  std::vector<std::string> vars(cfg.variable_pool);
  for (std::size_t i = 0; i < cfg.variable_pool; ++i) vars[i] = detail::pool_variable(i);
  auto pick_var = [&] { return vars[rng.index(vars.size())]; };
  auto pick_operand = [&]() -> Operand {
    if (rng.bernoulli(0.35)) return Operand::literal(rng.uniform_int(0, 9));
    return Operand::variable(pick_var());
  };

  // Which positions carry a label.
  std::vector<bool> is_label(n, false);
  std::vector<std::size_t> label_positions;
  for (std::size_t i = 0; i < n; ++i) {
    if (rng.bernoulli(cfg.label_probability)) {
      is_label[i] = true;
      label_positions.push_back(i);
    }
  }

  std::vector<Instruction> instrs(n);
  std::size_t label_counter = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Instruction& in = instrs[i];
    if (is_label[i]) {
      in.kind = Opcode::Label;
      in.target = "L" + std::to_string(label_counter++);
      continue;
    }
    if (rng.bernoulli(cfg.branch_probability) && !label_positions.empty()) {
      std::vector<std::size_t> forward, backward;
      for (std::size_t p : label_positions) {
        (p > i ? forward : backward).push_back(p);
      }
      const bool go_back = !backward.empty() && (forward.empty() || rng.bernoulli(cfg.back_edge_probability));
      const auto& targets = go_back ? backward : forward;
      if (!targets.empty()) {
        const std::size_t target_pos = targets[rng.index(targets.size())];
        in.kind = Opcode::Branch;
        in.operands.push_back(Operand::variable(pick_var()));
        // Label names are assigned in position order.
        std::size_t ordinal = 0;
        for (std::size_t p : label_positions) {
          if (p == target_pos) break;
          ++ordinal;
        }
        in.target = "L" + std::to_string(ordinal);
        continue;
      }
    }
    if (rng.bernoulli(cfg.halt_probability)) {
      in.kind = Opcode::Halt;
      continue;
    }
    if (rng.bernoulli(cfg.memory_probability)) {
      if (rng.bernoulli(0.5)) {
        in.kind = Opcode::Load;
        in.dest = pick_var();
      } else {
        in.kind = Opcode::Store;
        in.operands.push_back(Operand::variable(pick_var()));
      }
      continue;
    }
    const double shape = rng.uniform01();
    if (shape < 0.35) {
      in.kind = Opcode::AssignConst;
      in.dest = pick_var();
      in.operands.push_back(Operand::literal(rng.uniform_int(0, 9)));
    } else if (shape < 0.55) {
      in.kind = Opcode::AssignCopy;
      in.dest = pick_var();
      in.operands.push_back(Operand::variable(pick_var()));
    } else {
      in.kind = Opcode::AssignBinop;
      in.dest = pick_var();
      const std::array<BinOp, 5> ops{BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Less, BinOp::Equal};
      in.binop = ops[rng.index(ops.size())];
      in.operands.push_back(pick_operand());
      in.operands.push_back(pick_operand());
    }
  }
  return CodeUnit::from_instructions(std::move(instrs));
}

// ---------------------------------------------------------------------------
// Task labels for synthetic corpora.
// ---------------------------------------------------------------------------

/// Number of instructions writing variable `a`, mod 2. Writes travel with
/// their instruction, so any reordering leaves the label unchanged.
inline int parity_label(const CodeUnit& unit) {
  int writes = 0;
  for (const Instruction& in : unit.instructions) {
    if (in.dest == "a") ++writes;
  }
  return writes % 2;
}

/// Per-token label: 1 when the owning instruction touches the memory cell.
inline std::vector<int> memory_touch_labels(const CodeUnit& unit) {
  std::vector<int> labels(unit.token_count(), 0);
  for (std::size_t t = 0; t < unit.token_count(); ++t) {
    const Instruction& in = unit.instructions[unit.token_owner[t]];
    labels[t] = (in.kind == Opcode::Load || in.kind == Opcode::Store) ? 1 : 0;
  }
  return labels;
}

}  // namespace codesym
