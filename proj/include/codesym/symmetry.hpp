#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "codesym/pdg.hpp"
#include "codesym/permutation.hpp"
#include "codesym/rng.hpp"

namespace codesym {

/// True when sigma maps every typed edge onto an existing edge of the same
/// kind. Since sigma is a bijection and the edge set is finite, that already
/// makes the relabeled graph identical to the original, kinds included.
inline bool is_automorphism(const Pdg& g, const BlockPermutation& sigma) {
  if (sigma.size() != g.n) throw std::invalid_argument("permutation size does not match graph");
  for (const Edge& e : g.edges) {
    if (!g.has_edge(sigma(e.src), sigma(e.dst), e.kind)) return false;
  }
  return true;
}

struct CycleError : std::runtime_error {
  CycleError(std::string what, std::vector<std::size_t> cycle)
      : std::runtime_error(std::move(what)), cycle(std::move(cycle)) {}
  std::vector<std::size_t> cycle;
};

struct AutomorphismGroup {
  std::vector<BlockPermutation> elements;  // lexicographic map order
  std::size_t order() const { return elements.size(); }

  bool contains(const std::vector<std::size_t>& map) const {
    return std::binary_search(
        elements.begin(), elements.end(), map,
        [](const auto& a, const auto& b) { return maps_of(a) < maps_of(b); });
  }

private:
  static const std::vector<std::size_t>& maps_of(const BlockPermutation& p) { return p.map(); }
  static const std::vector<std::size_t>& maps_of(const std::vector<std::size_t>& m) { return m; }
};

namespace detail {

/// Node signature under automorphism: per-kind in and out edge counts.
/// Automorphic nodes must agree on it, which prunes the search sharply.
using NodeSignature = std::array<std::size_t, 8>;

inline std::vector<NodeSignature> node_signatures(const Pdg& g) {
  std::vector<NodeSignature> sig(g.n, NodeSignature{});
  for (const Edge& e : g.edges) {
    sig[e.src][static_cast<std::size_t>(e.kind)] += 1;
    sig[e.dst][4 + static_cast<std::size_t>(e.kind)] += 1;
  }
  return sig;
}

inline void search_automorphisms(const Pdg& g, const std::vector<NodeSignature>& sig,
                                 std::vector<std::size_t>& partial,
                                 std::vector<bool>& used,
                                 std::vector<std::vector<std::size_t>>& out) {
  const std::size_t v = partial.size();
  if (v == g.n) {
    out.push_back(partial);
    return;
  }
  for (std::size_t w = 0; w < g.n; ++w) {
    if (used[w] || sig[w] != sig[v]) continue;
    bool ok = true;
    for (std::size_t u = 0; u < v && ok; ++u) {
      for (EdgeKind k : {EdgeKind::Raw, EdgeKind::War, EdgeKind::Waw, EdgeKind::Ctrl}) {
        if (g.has_edge(u, v, k) != g.has_edge(partial[u], w, k) ||
            g.has_edge(v, u, k) != g.has_edge(w, partial[u], k)) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) continue;
    partial.push_back(w);
    used[w] = true;
    search_automorphisms(g, sig, partial, used, out);
    used[w] = false;
    partial.pop_back();
  }
}

}  // namespace detail

/// All automorphisms of g by exhaustive signature-pruned search. Before
/// returning, the group axioms are verified on the element list: identity
/// present, every inverse present, and closure under composition. Closure is
/// checked pairwise up to 5000 elements and on a seeded sample of pairs
/// beyond that.
inline AutomorphismGroup automorphisms(const Pdg& g, std::size_t cap = 10) {
  if (g.n > cap) {
    throw std::invalid_argument(
        "graph has " + std::to_string(g.n) + " nodes, exhaustive search capped at " +
        std::to_string(cap) + "; use sampling instead");
  }
  const auto sig = detail::node_signatures(g);
  std::vector<std::vector<std::size_t>> maps;
  std::vector<std::size_t> partial;
  std::vector<bool> used(g.n, false);
  partial.reserve(g.n);
  detail::search_automorphisms(g, sig, partial, used, maps);

  AutomorphismGroup group;
  group.elements.reserve(maps.size());
  for (auto& m : maps) group.elements.emplace_back(std::move(m));

  // Executable group axioms.
  const auto find = [&](const std::vector<std::size_t>& m) {
    return std::binary_search(maps.begin(), maps.end(), m);
  };
  maps.clear();
  for (const auto& e : group.elements) maps.push_back(e.map());

  if (!find(BlockPermutation::identity(g.n).map()))
    throw std::logic_error("automorphism set is missing the identity");
  for (const auto& e : group.elements) {
    if (!find(e.inverse().map()))
      throw std::logic_error("automorphism set is not closed under inverse");
  }
  const std::size_t order = group.order();
  if (order <= 5000) {
    for (const auto& a : group.elements) {
      for (const auto& b : group.elements) {
        if (!find(a.compose_after(b).map()))
          throw std::logic_error("automorphism set is not closed under composition");
      }
    }
  } else {
    Rng rng(0x9e3779b97f4a7c15ull);
    for (std::size_t t = 0; t < 1000000; ++t) {
      const auto& a = group.elements[rng.index(order)];
      const auto& b = group.elements[rng.index(order)];
      if (!find(a.compose_after(b).map()))
        throw std::logic_error("automorphism set is not closed under composition");
    }
  }
  return group;
}

/// Kahn peeling layers: layer 0 holds the initially dependency-free nodes,
/// each next layer the nodes freed by removing the previous one. There are
/// no edges inside a layer. Throws CycleError with a witness when the edge
/// relation has a cycle.
inline std::vector<std::size_t> kahn_layers(const Pdg& g) {
  std::vector<std::size_t> layer(g.n, 0);
  std::vector<std::size_t> remaining_in(g.n, 0);
  for (std::size_t v = 0; v < g.n; ++v) remaining_in[v] = g.predecessors[v].size();

  std::vector<std::size_t> current;
  for (std::size_t v = 0; v < g.n; ++v) {
    if (remaining_in[v] == 0) current.push_back(v);
  }
  std::size_t peeled = 0, depth = 0;
  while (!current.empty()) {
    std::vector<std::size_t> next;
    for (std::size_t v : current) {
      layer[v] = depth;
      ++peeled;
      for (std::size_t s : g.successors[v]) {
        if (--remaining_in[s] == 0) next.push_back(s);
      }
    }
    current = std::move(next);
    ++depth;
  }
  if (peeled != g.n) {
    // Unpeeled nodes are exactly those with unpeeled predecessors left, so
    // walking predecessors inside that set must eventually revisit a node.
    std::vector<std::size_t> trail;
    std::vector<std::size_t> mark(g.n, g.n);
    std::size_t v = 0;
    while (remaining_in[v] == 0) ++v;
    while (mark[v] == g.n) {
      mark[v] = trail.size();
      trail.push_back(v);
      for (std::size_t p : g.predecessors[v]) {
        if (remaining_in[p] != 0) {
          v = p;
          break;
        }
      }
    }
    std::vector<std::size_t> cycle(trail.begin() + static_cast<std::ptrdiff_t>(mark[v]), trail.end());
    std::reverse(cycle.begin(), cycle.end());  // trail followed edges backwards
    std::string what = "dependence relation has a cycle:";
    for (std::size_t node : cycle) what += " " + std::to_string(node);
    throw CycleError(std::move(what), std::move(cycle));
  }
  return layer;
}

/// Draws a legal reordering: a seeded Kahn walk whose tie-breaking is
/// randomized inside a `percent` fraction of the layers and follows source
/// order elsewhere. Every output is a linear extension of the edge partial
/// order; percent 0 is exactly the identity, percent 100 randomizes every
/// choice.
inline BlockPermutation sample_reordering(const Pdg& g, int percent, std::uint64_t seed) {
  if (percent < 0 || percent > 100) throw std::invalid_argument("percent must be in [0, 100]");
  const std::vector<std::size_t> layer = kahn_layers(g);
  const std::size_t layer_count = g.n == 0 ? 0 : 1 + *std::max_element(layer.begin(), layer.end());

  Rng rng(seed);
  std::vector<bool> shuffled_layer(layer_count, false);
  if (layer_count > 0) {
    const std::size_t k = (static_cast<std::size_t>(percent) * layer_count + 50) / 100;
    std::vector<std::size_t> ids(layer_count);
    std::iota(ids.begin(), ids.end(), 0);
    rng.shuffle(ids);
    for (std::size_t i = 0; i < k; ++i) shuffled_layer[ids[i]] = true;
  }

  std::vector<std::size_t> remaining_in(g.n);
  for (std::size_t v = 0; v < g.n; ++v) remaining_in[v] = g.predecessors[v].size();
  std::set<std::size_t> ready;
  for (std::size_t v = 0; v < g.n; ++v) {
    if (remaining_in[v] == 0) ready.insert(v);
  }

  std::vector<std::size_t> order;
  order.reserve(g.n);
  std::vector<std::size_t> candidates;
  while (!ready.empty()) {
    const std::size_t front = *ready.begin();
    std::size_t pick = front;
    if (shuffled_layer[layer[front]]) {
      candidates.clear();
      for (std::size_t v : ready) {
        if (shuffled_layer[layer[v]]) candidates.push_back(v);
      }
      pick = candidates[rng.index(candidates.size())];
    }
    ready.erase(pick);
    order.push_back(pick);
    for (std::size_t s : g.successors[pick]) {
      if (--remaining_in[s] == 0) ready.insert(s);
    }
  }

  std::vector<std::size_t> map(g.n);
  for (std::size_t position = 0; position < order.size(); ++position) {
    map[order[position]] = position;
  }
  return BlockPermutation(std::move(map));
}

}  // namespace codesym
