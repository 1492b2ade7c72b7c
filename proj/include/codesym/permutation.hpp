#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "codesym/ir.hpp"
#include "codesym/matrix.hpp"

namespace codesym {

/// An instruction-level permutation together with its token-level expansion.
///
/// map(i) is the position the instruction at source index i moves to. The
/// token map moves whole instruction token blocks, preserving token order
/// inside each block. Block sizes default to one token per instruction;
/// rebind() attaches the real token layout of a unit.
class BlockPermutation {
public:
  explicit BlockPermutation(std::vector<std::size_t> map)
      : BlockPermutation(std::move(map), std::vector<std::size_t>{}) {}

  BlockPermutation(std::vector<std::size_t> map, const CodeUnit& unit)
      : BlockPermutation(std::move(map), block_sizes_of(unit)) {}

  BlockPermutation(std::vector<std::size_t> map, std::vector<std::size_t> block_sizes)
      : map_(std::move(map)), block_sizes_(std::move(block_sizes)) {
    if (block_sizes_.empty()) block_sizes_.assign(map_.size(), 1);
    if (block_sizes_.size() != map_.size())
      throw std::invalid_argument("block size list does not match permutation size");
    check_bijection();
    build_token_map();
  }

  static BlockPermutation identity(std::size_t n) {
    std::vector<std::size_t> map(n);
    std::iota(map.begin(), map.end(), 0);
    return BlockPermutation(std::move(map));
  }

  std::size_t size() const { return map_.size(); }
  std::size_t operator()(std::size_t i) const { return map_[i]; }
  const std::vector<std::size_t>& map() const { return map_; }
  const std::vector<std::size_t>& token_map() const { return token_map_; }
  std::size_t token_count() const { return token_map_.size(); }

  bool is_identity() const {
    for (std::size_t i = 0; i < map_.size(); ++i) {
      if (map_[i] != i) return false;
    }
    return true;
  }

  BlockPermutation inverse() const {
    std::vector<std::size_t> inv(map_.size());
    for (std::size_t i = 0; i < map_.size(); ++i) inv[map_[i]] = i;
    // The inverse acts on the permuted layout, whose block sizes are the
    // originals moved to their new positions.
    std::vector<std::size_t> sizes(map_.size());
    for (std::size_t i = 0; i < map_.size(); ++i) sizes[map_[i]] = block_sizes_[i];
    return BlockPermutation(std::move(inv), std::move(sizes));
  }

  /// Composition (this after other): i -> this(other(i)).
  BlockPermutation compose_after(const BlockPermutation& other) const {
    if (size() != other.size()) throw std::invalid_argument("permutation size mismatch");
    std::vector<std::size_t> composed(size());
    for (std::size_t i = 0; i < size(); ++i) composed[i] = map_[other(i)];
    return BlockPermutation(std::move(composed), other.block_sizes_);
  }

  /// Same instruction map with the token layout of a specific unit.
  BlockPermutation rebind(const CodeUnit& unit) const {
    return BlockPermutation(map_, unit);
  }

  bool operator==(const BlockPermutation& o) const { return map_ == o.map_; }

private:
  static std::vector<std::size_t> block_sizes_of(const CodeUnit& unit) {
    std::vector<std::size_t> sizes;
    sizes.reserve(unit.size());
    for (const Instruction& in : unit.instructions) {
      sizes.push_back(instruction_tokens(in).size());
    }
    return sizes;
  }

  void check_bijection() const {
    std::vector<bool> seen(map_.size(), false);
    for (std::size_t v : map_) {
      if (v >= map_.size() || seen[v])
        throw std::invalid_argument("permutation map is not a bijection");
      seen[v] = true;
    }
  }

  void build_token_map() {
    const std::size_t n = map_.size();
    // Token offsets of blocks in the permuted layout.
    std::vector<std::size_t> new_sizes(n);
    for (std::size_t i = 0; i < n; ++i) new_sizes[map_[i]] = block_sizes_[i];
    std::vector<std::size_t> new_start(n + 1, 0);
    for (std::size_t j = 0; j < n; ++j) new_start[j + 1] = new_start[j] + new_sizes[j];

    std::size_t total = 0;
    for (std::size_t s : block_sizes_) total += s;
    token_map_.resize(total);
    std::size_t t = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t o = 0; o < block_sizes_[i]; ++o) {
        token_map_[t++] = new_start[map_[i]] + o;
      }
    }
  }

  std::vector<std::size_t> map_;
  std::vector<std::size_t> block_sizes_;
  std::vector<std::size_t> token_map_;
};

/// Rearranges instructions so the one at source index i lands at pi(i).
/// Tokens, owners, and intra positions are recomputed from scratch.
inline CodeUnit apply(const BlockPermutation& pi, const CodeUnit& unit) {
  if (pi.size() != unit.size())
    throw std::invalid_argument("permutation size does not match unit");
  std::vector<Instruction> rearranged(unit.size());
  for (std::size_t i = 0; i < unit.size(); ++i) {
    rearranged[pi(i)] = unit.instructions[i];
  }
  return CodeUnit::from_instructions(std::move(rearranged));
}

/// 0/1 matrix at token granularity with p(t, pi_tok(t)) = 1. Right-multiplying
/// a (d x tokens) embedding by it permutes columns; p is orthogonal.
inline Matrix permutation_matrix(const BlockPermutation& pi) {
  const auto& tok = pi.token_map();
  Matrix p(tok.size(), tok.size());
  for (std::size_t t = 0; t < tok.size(); ++t) p(t, tok[t]) = 1.0;
  return p;
}

/// Generic permutation matrix from any bijection map.
inline Matrix permutation_matrix(const std::vector<std::size_t>& map) {
  Matrix p(map.size(), map.size());
  for (std::size_t t = 0; t < map.size(); ++t) p(t, map[t]) = 1.0;
  return p;
}

/// Permutes sequence rows: row t of the input lands at row map(t).
inline Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& map) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t t = 0; t < m.rows(); ++t) {
    for (std::size_t j = 0; j < m.cols(); ++j) out(map[t], j) = m(t, j);
  }
  return out;
}

}  // namespace codesym
