#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "codesym/rng.hpp"

namespace codesym {

// ---------------------------------------------------------------------------
// A miniature three-address instruction language.
//
// Grammar, one instruction per line or separated by ';':
//
//   var = literal            constant assignment
//   var = opnd op opnd       op in { + - * < == }, opnd is a var or literal
//   var = var                copy
//   var = load               read the single memory cell
//   store var                write the single memory cell
//   if var goto LABEL        jump when var is nonzero
//   LABEL:                   jump target
//   halt                     stop execution
//
// Variables match [a-z][a-z0-9]*, labels match [A-Z][A-Z0-9]*, literals are
// non-negative decimals (negative values arise from arithmetic). '<' and '=='
// yield 0/1, so branches need no separate boolean type. Arithmetic is signed
// 64-bit with two's-complement wraparound. '#' starts a comment to end of
// line. The keywords if/goto/load/store/halt are reserved.
// ---------------------------------------------------------------------------

enum class Opcode {
  AssignConst,
  AssignBinop,
  AssignCopy,
  Load,
  Store,
  Branch,
  Label,
  Halt,
};

enum class BinOp { Add, Sub, Mul, Less, Equal };

inline std::string_view binop_text(BinOp op) {
  switch (op) {
    case BinOp::Add: return "+";
    case BinOp::Sub: return "-";
    case BinOp::Mul: return "*";
    case BinOp::Less: return "<";
    case BinOp::Equal: return "==";
  }
  return "?";
}

/// A variable name or a literal value.
class Operand {
public:
  static Operand literal(std::int64_t v) {
    Operand o;
    o.literal_ = v;
    return o;
  }
  static Operand variable(std::string name) {
    Operand o;
    o.var_ = std::move(name);
    return o;
  }

  bool is_literal() const { return literal_.has_value(); }
  std::int64_t value() const { return *literal_; }
  const std::string& var() const { return var_; }

  std::string text() const {
    return is_literal() ? std::to_string(*literal_) : var_;
  }

  bool operator==(const Operand&) const = default;

private:
  std::optional<std::int64_t> literal_;
  std::string var_;
};

struct Instruction {
  std::size_t index = 0;
  Opcode kind = Opcode::Halt;
  std::string dest;               // written variable, empty if none
  std::vector<Operand> operands;  // read operands in source order
  BinOp binop = BinOp::Add;       // meaningful for AssignBinop only
  std::string target;             // branch target, or own name for Label

  bool operator==(const Instruction&) const = default;
};

/// Dependence location: a named variable or the single aliased memory cell.
/// Variables cannot start with '@', so this key never collides.
inline const std::string kMemLocation = "@mem";

inline std::optional<std::string> written_location(const Instruction& in) {
  switch (in.kind) {
    case Opcode::AssignConst:
    case Opcode::AssignBinop:
    case Opcode::AssignCopy:
    case Opcode::Load:
      return in.dest;
    case Opcode::Store:
      return kMemLocation;
    default:
      return std::nullopt;
  }
}

inline std::vector<std::string> read_locations(const Instruction& in) {
  std::vector<std::string> locs;
  for (const Operand& o : in.operands) {
    if (!o.is_literal()) locs.push_back(o.var());
  }
  if (in.kind == Opcode::Load) locs.push_back(kMemLocation);
  return locs;
}

inline bool is_control(const Instruction& in) {
  return in.kind == Opcode::Branch || in.kind == Opcode::Label ||
         in.kind == Opcode::Halt;
}

inline std::string render_instruction(const Instruction& in) {
  switch (in.kind) {
    case Opcode::AssignConst:
    case Opcode::AssignCopy:
      return in.dest + " = " + in.operands[0].text();
    case Opcode::AssignBinop:
      return in.dest + " = " + in.operands[0].text() + " " +
             std::string(binop_text(in.binop)) + " " + in.operands[1].text();
    case Opcode::Load:
      return in.dest + " = load";
    case Opcode::Store:
      return "store " + in.operands[0].text();
    case Opcode::Branch:
      return "if " + in.operands[0].text() + " goto " + in.target;
    case Opcode::Label:
      return in.target + ":";
    case Opcode::Halt:
      return "halt";
  }
  return "";
}

/// Token strings of one instruction, matching what the tokenizer would emit.
inline std::vector<std::string> instruction_tokens(const Instruction& in) {
  switch (in.kind) {
    case Opcode::AssignConst:
    case Opcode::AssignCopy:
      return {in.dest, "=", in.operands[0].text()};
    case Opcode::AssignBinop:
      return {in.dest, "=", in.operands[0].text(),
              std::string(binop_text(in.binop)), in.operands[1].text()};
    case Opcode::Load:
      return {in.dest, "=", "load"};
    case Opcode::Store:
      return {"store", in.operands[0].text()};
    case Opcode::Branch:
      return {"if", in.operands[0].text(), "goto", in.target};
    case Opcode::Label:
      return {in.target, ":"};
    case Opcode::Halt:
      return {"halt"};
  }
  return {};
}

/// A parsed unit: ordered instructions plus the flattened token stream.
///
/// token_owner maps each token to its instruction, intra_pos restarts at 1 at
/// every instruction boundary. Units are immutable after construction.
struct CodeUnit {
  std::vector<Instruction> instructions;
  std::vector<std::string> tokens;
  std::vector<std::size_t> token_owner;
  std::vector<std::size_t> intra_pos;  // 1-based within the instruction

  std::size_t size() const { return instructions.size(); }
  std::size_t token_count() const { return tokens.size(); }

  /// First token index of each instruction, plus a final sentinel.
  std::vector<std::size_t> block_starts() const {
    std::vector<std::size_t> starts(instructions.size() + 1, 0);
    for (std::size_t i = 0; i < instructions.size(); ++i) {
      starts[i + 1] = starts[i] + instruction_tokens(instructions[i]).size();
    }
    return starts;
  }

  static CodeUnit from_instructions(std::vector<Instruction> instrs) {
    CodeUnit unit;
    unit.instructions = std::move(instrs);
    for (std::size_t i = 0; i < unit.instructions.size(); ++i) {
      unit.instructions[i].index = i;
      for (std::size_t p = 0; auto& tok : instruction_tokens(unit.instructions[i])) {
        unit.tokens.push_back(std::move(tok));
        unit.token_owner.push_back(i);
        unit.intra_pos.push_back(++p);
      }
    }
    return unit;
  }
};

struct ParseError : std::runtime_error {
  ParseError(std::size_t line, std::size_t column, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ", col " +
                           std::to_string(column) + ": " + what),
        line(line),
        column(column) {}
  std::size_t line;
  std::size_t column;
};

namespace detail {

struct RawToken {
  std::string text;
  std::size_t line;
  std::size_t column;
};

inline bool is_lower(char c) { return c >= 'a' && c <= 'z'; }
inline bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }
inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

/// Splits source into per-instruction token groups. Instruction boundaries
/// are newlines and ';'. Blank groups are dropped.
inline std::vector<std::vector<RawToken>> tokenize(std::string_view src) {
  std::vector<std::vector<RawToken>> groups;
  std::vector<RawToken> current;
  std::size_t line = 1, col = 1;

  auto flush = [&] {
    if (!current.empty()) groups.push_back(std::move(current));
    current.clear();
  };

  std::size_t i = 0;
  while (i < src.size()) {
    const char c = src[i];
    if (c == '\n') {
      flush();
      ++line;
      col = 1;
      ++i;
      continue;
    }
    if (c == ';') {
      flush();
      ++col;
      ++i;
      continue;
    }
    if (c == ' ' || c == '\t' || c == '\r') {
      ++col;
      ++i;
      continue;
    }
    if (c == '#') {  // comment to end of line
      while (i < src.size() && src[i] != '\n') ++i;
      continue;
    }
    const std::size_t start_col = col;
    if (is_lower(c)) {
      std::string word;
      while (i < src.size() && (is_lower(src[i]) || is_digit(src[i]))) {
        word.push_back(src[i]);
        ++i;
        ++col;
      }
      current.push_back({std::move(word), line, start_col});
      continue;
    }
    if (is_upper(c)) {
      std::string word;
      while (i < src.size() && (is_upper(src[i]) || is_digit(src[i]))) {
        word.push_back(src[i]);
        ++i;
        ++col;
      }
      current.push_back({std::move(word), line, start_col});
      continue;
    }
    if (is_digit(c)) {
      std::string num;
      while (i < src.size() && is_digit(src[i])) {
        num.push_back(src[i]);
        ++i;
        ++col;
      }
      current.push_back({std::move(num), line, start_col});
      continue;
    }
    if (c == '=' && i + 1 < src.size() && src[i + 1] == '=') {
      current.push_back({"==", line, start_col});
      i += 2;
      col += 2;
      continue;
    }
    if (c == '=' || c == '+' || c == '-' || c == '*' || c == '<' || c == ':') {
      current.push_back({std::string(1, c), line, start_col});
      ++i;
      ++col;
      continue;
    }
    throw ParseError(line, col, std::string("unexpected character '") + c + "'");
  }
  flush();
  return groups;
}

inline bool is_keyword(std::string_view w) {
  return w == "if" || w == "goto" || w == "load" || w == "store" || w == "halt";
}

inline bool is_identifier(const RawToken& t) {
  return is_lower(t.text[0]) && !is_keyword(t.text);
}

inline bool is_label_name(const RawToken& t) { return is_upper(t.text[0]); }

inline bool is_number(const RawToken& t) { return is_digit(t.text[0]); }

inline std::int64_t parse_number(const RawToken& t) {
  try {
    return std::stoll(t.text);
  } catch (const std::out_of_range&) {
    throw ParseError(t.line, t.column, "literal out of 64-bit range");
  }
}

inline std::optional<BinOp> parse_binop(std::string_view s) {
  if (s == "+") return BinOp::Add;
  if (s == "-") return BinOp::Sub;
  if (s == "*") return BinOp::Mul;
  if (s == "<") return BinOp::Less;
  if (s == "==") return BinOp::Equal;
  return std::nullopt;
}

inline Operand parse_operand(const RawToken& t) {
  if (is_number(t)) return Operand::literal(parse_number(t));
  if (is_identifier(t)) return Operand::variable(t.text);
  throw ParseError(t.line, t.column, "expected variable or literal, got '" + t.text + "'");
}

inline Instruction parse_instruction(const std::vector<RawToken>& toks) {
  const RawToken& head = toks.front();
  auto fail = [&](const std::string& msg) -> ParseError {
    return ParseError(head.line, head.column, msg);
  };
  auto expect_size = [&](std::size_t n, const char* shape) {
    if (toks.size() != n) throw fail(std::string("malformed instruction, expected ") + shape);
  };

  Instruction in;
  if (head.text == "halt") {
    expect_size(1, "'halt'");
    in.kind = Opcode::Halt;
    return in;
  }
  if (head.text == "store") {
    expect_size(2, "'store var'");
    if (!is_identifier(toks[1])) throw fail("store takes a variable");
    in.kind = Opcode::Store;
    in.operands.push_back(Operand::variable(toks[1].text));
    return in;
  }
  if (head.text == "if") {
    expect_size(4, "'if var goto LABEL'");
    if (!is_identifier(toks[1])) throw fail("branch condition must be a variable");
    if (toks[2].text != "goto") throw fail("expected 'goto'");
    if (!is_label_name(toks[3])) throw fail("branch target must be a LABEL");
    in.kind = Opcode::Branch;
    in.operands.push_back(Operand::variable(toks[1].text));
    in.target = toks[3].text;
    return in;
  }
  if (is_label_name(head)) {
    expect_size(2, "'LABEL:'");
    if (toks[1].text != ":") throw fail("expected ':' after label");
    in.kind = Opcode::Label;
    in.target = head.text;
    return in;
  }
  if (!is_identifier(head)) throw fail("expected instruction, got '" + head.text + "'");
  if (toks.size() < 3 || toks[1].text != "=") throw fail("expected '=' after variable");

  in.dest = head.text;
  if (toks.size() == 3) {
    const RawToken& rhs = toks[2];
    if (rhs.text == "load") {
      in.kind = Opcode::Load;
    } else if (is_number(rhs)) {
      in.kind = Opcode::AssignConst;
      in.operands.push_back(Operand::literal(parse_number(rhs)));
    } else if (is_identifier(rhs)) {
      in.kind = Opcode::AssignCopy;
      in.operands.push_back(Operand::variable(rhs.text));
    } else {
      throw ParseError(rhs.line, rhs.column, "bad right-hand side '" + rhs.text + "'");
    }
    return in;
  }
  if (toks.size() == 5) {
    auto op = parse_binop(toks[3].text);
    if (!op) throw ParseError(toks[3].line, toks[3].column, "unknown operator '" + toks[3].text + "'");
    in.kind = Opcode::AssignBinop;
    in.binop = *op;
    in.operands.push_back(parse_operand(toks[2]));
    in.operands.push_back(parse_operand(toks[4]));
    return in;
  }
  throw fail("malformed assignment");
}

}  // namespace detail

inline CodeUnit parse(std::string_view source) {
  const auto groups = detail::tokenize(source);
  std::vector<Instruction> instrs;
  instrs.reserve(groups.size());
  std::map<std::string, std::size_t> labels;
  std::vector<std::pair<std::size_t, detail::RawToken>> label_sites;
  for (const auto& group : groups) {
    Instruction in = detail::parse_instruction(group);
    if (in.kind == Opcode::Label) {
      if (labels.count(in.target)) {
        throw ParseError(group.front().line, group.front().column,
                         "duplicate label '" + in.target + "'");
      }
      labels.emplace(in.target, instrs.size());
    }
    if (in.kind == Opcode::Branch) label_sites.emplace_back(instrs.size(), group[3]);
    instrs.push_back(std::move(in));
  }
  for (const auto& [idx, tok] : label_sites) {
    if (!labels.count(instrs[idx].target)) {
      throw ParseError(tok.line, tok.column,
                       "unresolved branch target '" + instrs[idx].target + "'");
    }
  }
  return CodeUnit::from_instructions(std::move(instrs));
}

inline std::string render(const CodeUnit& unit) {
  std::string out;
  for (const Instruction& in : unit.instructions) {
    out += render_instruction(in);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reference interpreter. This is the semantics oracle: two units are deemed
// equivalent exactly when their interpreted input-output behavior matches.
// ---------------------------------------------------------------------------

/// Machine state: named variables plus one memory cell. std::map keeps
/// comparison and iteration order deterministic.
struct Store {
  std::map<std::string, std::int64_t> vars;
  std::int64_t mem = 0;

  bool operator==(const Store&) const = default;

  std::string text() const {
    std::string s = "{";
    for (const auto& [k, v] : vars) s += k + ":" + std::to_string(v) + " ";
    s += "mem:" + std::to_string(mem) + "}";
    return s;
  }
};

enum class ExecStatus { Ok, FuelExhausted, UndefinedVariable };

struct ExecResult {
  ExecStatus status = ExecStatus::Ok;
  Store store;
  std::size_t steps = 0;
  std::string detail;

  bool ok() const { return status == ExecStatus::Ok; }
};

namespace detail {

inline std::int64_t wrap_add(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) + static_cast<std::uint64_t>(b));
}
inline std::int64_t wrap_sub(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) - static_cast<std::uint64_t>(b));
}
inline std::int64_t wrap_mul(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) * static_cast<std::uint64_t>(b));
}

}  // namespace detail

inline std::int64_t eval_binop(BinOp op, std::int64_t a, std::int64_t b) {
  switch (op) {
    case BinOp::Add: return detail::wrap_add(a, b);
    case BinOp::Sub: return detail::wrap_sub(a, b);
    case BinOp::Mul: return detail::wrap_mul(a, b);
    case BinOp::Less: return a < b ? 1 : 0;
    case BinOp::Equal: return a == b ? 1 : 0;
  }
  return 0;
}

/// Runs the unit from the first instruction until halt, fall-through, or fuel
/// exhaustion. Reads of variables absent from the store are errors.
inline ExecResult interpret(const CodeUnit& unit, const Store& input,
                            std::size_t fuel = 4096) {
  ExecResult result;
  result.store = input;

  std::map<std::string, std::size_t> labels;
  for (const Instruction& in : unit.instructions) {
    if (in.kind == Opcode::Label) labels.emplace(in.target, in.index);
  }

  auto read = [&](const Operand& o, std::int64_t& out) -> bool {
    if (o.is_literal()) {
      out = o.value();
      return true;
    }
    auto it = result.store.vars.find(o.var());
    if (it == result.store.vars.end()) {
      result.status = ExecStatus::UndefinedVariable;
      result.detail = "read of undefined variable '" + o.var() + "'";
      return false;
    }
    out = it->second;
    return true;
  };

  std::size_t pc = 0;
  while (pc < unit.instructions.size()) {
    if (result.steps == fuel) {
      result.status = ExecStatus::FuelExhausted;
      result.detail = "fuel exhausted after " + std::to_string(fuel) + " steps";
      return result;
    }
    ++result.steps;
    const Instruction& in = unit.instructions[pc];
    std::int64_t a = 0, b = 0;
    switch (in.kind) {
      case Opcode::AssignConst:
      case Opcode::AssignCopy:
        if (!read(in.operands[0], a)) return result;
        result.store.vars[in.dest] = a;
        break;
      case Opcode::AssignBinop:
        if (!read(in.operands[0], a) || !read(in.operands[1], b)) return result;
        result.store.vars[in.dest] = eval_binop(in.binop, a, b);
        break;
      case Opcode::Load:
        result.store.vars[in.dest] = result.store.mem;
        break;
      case Opcode::Store:
        if (!read(in.operands[0], a)) return result;
        result.store.mem = a;
        break;
      case Opcode::Branch:
        if (!read(in.operands[0], a)) return result;
        if (a != 0) {
          pc = labels.at(in.target);
          continue;
        }
        break;
      case Opcode::Label:
        break;
      case Opcode::Halt:
        return result;
    }
    ++pc;
  }
  return result;
}

/// Every variable mentioned anywhere in the unit.
inline std::vector<std::string> referenced_variables(const CodeUnit& unit) {
  std::map<std::string, bool> seen;
  for (const Instruction& in : unit.instructions) {
    if (!in.dest.empty()) seen[in.dest] = true;
    for (const Operand& o : in.operands) {
      if (!o.is_literal()) seen[o.var()] = true;
    }
  }
  std::vector<std::string> names;
  names.reserve(seen.size());
  for (const auto& [k, v] : seen) names.push_back(k);
  return names;
}

enum class EquivVerdict { Equivalent, Inequivalent, Inconclusive };

struct EquivResult {
  EquivVerdict verdict = EquivVerdict::Equivalent;
  std::optional<Store> witness;  // input that separated (or stalled) the pair
  std::string detail;

  bool equivalent() const { return verdict == EquivVerdict::Equivalent; }
};

/// Behavioral equivalence under random testing: runs both units on `trials`
/// seeded random input stores and compares the final stores. Interpreter
/// failures (fuel, in practice) yield Inconclusive rather than Inequivalent.
inline EquivResult io_equivalent(const CodeUnit& c1, const CodeUnit& c2,
                                 std::size_t trials, std::uint64_t seed,
                                 std::size_t fuel = 4096) {
  EquivResult res;
  Rng rng(seed);

  std::map<std::string, bool> vars;
  for (const auto& v : referenced_variables(c1)) vars[v] = true;
  for (const auto& v : referenced_variables(c2)) vars[v] = true;

  for (std::size_t t = 0; t < trials; ++t) {
    Store input;
    for (const auto& [name, unused] : vars) {
      input.vars[name] = rng.uniform_int(-4, 4);
    }
    input.mem = rng.uniform_int(-4, 4);

    const ExecResult r1 = interpret(c1, input, fuel);
    const ExecResult r2 = interpret(c2, input, fuel);
    if (!r1.ok() || !r2.ok()) {
      res.verdict = EquivVerdict::Inconclusive;
      res.witness = input;
      res.detail = !r1.ok() ? r1.detail : r2.detail;
      return res;
    }
    if (r1.store != r2.store) {
      res.verdict = EquivVerdict::Inequivalent;
      res.witness = input;
      res.detail = "final stores differ: " + r1.store.text() + " vs " + r2.store.text();
      return res;
    }
  }
  return res;
}

}  // namespace codesym
