#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "codesym/ir.hpp"

#include <nlohmann/json.hpp>

namespace codesym {

// ---------------------------------------------------------------------------
// Program dependence graph over the instructions of a CodeUnit.
//
// Data edges (per location, variables by name, one aliased memory cell):
//   RAW i->j  j reads what i wrote, with no intervening write
//   WAR i->j  j writes what i read
//   WAW i->j  j writes what i wrote
// Control edges: branch, label, and halt instructions pin their position.
// Every earlier instruction gets a CTRL edge into the control instruction and
// the control instruction gets a CTRL edge to every later one. Reorderings
// that respect the edges therefore only move straight-line data code between
// control points, which keeps the graph stable under its own legal
// reorderings (rebuilding from a reordered unit yields the relabeled graph).
//
// All edges point from an earlier source index to a later one, so the edge
// relation is a DAG and source order is one of its linear extensions.
// ---------------------------------------------------------------------------

enum class EdgeKind : std::uint8_t { Raw, War, Waw, Ctrl };

inline std::string_view edge_kind_text(EdgeKind k) {
  switch (k) {
    case EdgeKind::Raw: return "RAW";
    case EdgeKind::War: return "WAR";
    case EdgeKind::Waw: return "WAW";
    case EdgeKind::Ctrl: return "CTRL";
  }
  return "?";
}

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  EdgeKind kind = EdgeKind::Raw;

  auto operator<=>(const Edge&) const = default;
};

struct Pdg {
  std::size_t n = 0;
  std::vector<Edge> edges;  // sorted by (src, dst, kind), no duplicates

  // Node-level adjacency, deduplicated across edge kinds.
  std::vector<std::vector<std::size_t>> successors;
  std::vector<std::vector<std::size_t>> predecessors;

  // Degrees count typed edges, so a pair linked by RAW and WAR contributes 2.
  std::vector<std::size_t> in_degree;
  std::vector<std::size_t> out_degree;

  bool has_edge(std::size_t src, std::size_t dst, EdgeKind kind) const {
    return std::binary_search(edges.begin(), edges.end(), Edge{src, dst, kind});
  }

  static Pdg from_edges(std::size_t n, std::set<Edge> edge_set) {
    Pdg g;
    g.n = n;
    g.edges.assign(edge_set.begin(), edge_set.end());
    g.successors.assign(n, {});
    g.predecessors.assign(n, {});
    g.in_degree.assign(n, 0);
    g.out_degree.assign(n, 0);
    for (const Edge& e : g.edges) {
      ++g.out_degree[e.src];
      ++g.in_degree[e.dst];
      // Edges are sorted, so duplicates of a node pair are adjacent.
      if (g.successors[e.src].empty() || g.successors[e.src].back() != e.dst) {
        g.successors[e.src].push_back(e.dst);
      }
    }
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t d : g.successors[s]) g.predecessors[d].push_back(s);
    }
    for (auto& v : g.predecessors) std::sort(v.begin(), v.end());
    return g;
  }
};

inline Pdg build_pdg(const CodeUnit& unit) {
  const std::size_t n = unit.size();
  std::set<Edge> edges;

  struct Access {
    std::vector<std::size_t> reads;
    std::vector<std::size_t> writes;
  };
  std::map<std::string, Access> by_location;
  for (const Instruction& in : unit.instructions) {
    for (const std::string& loc : read_locations(in)) {
      by_location[loc].reads.push_back(in.index);
    }
    if (auto w = written_location(in)) by_location[*w].writes.push_back(in.index);
  }

  for (const auto& [loc, acc] : by_location) {
    for (std::size_t wi = 0; wi < acc.writes.size(); ++wi) {
      const std::size_t w = acc.writes[wi];
      // write-after-write: every later write of the same location
      for (std::size_t wj = wi + 1; wj < acc.writes.size(); ++wj) {
        edges.insert({w, acc.writes[wj], EdgeKind::Waw});
      }
      // read-after-write: reads before the next write of the location
      const std::size_t next_write = wi + 1 < acc.writes.size()
                                         ? acc.writes[wi + 1]
                                         : std::numeric_limits<std::size_t>::max();
      for (std::size_t r : acc.reads) {
        if (r > w && r <= next_write && r != w) edges.insert({w, r, EdgeKind::Raw});
      }
    }
    // write-after-read: every write after a read of the same location
    for (std::size_t r : acc.reads) {
      for (std::size_t w : acc.writes) {
        if (w > r) edges.insert({r, w, EdgeKind::War});
      }
    }
  }

  // Control barriers.
  for (const Instruction& in : unit.instructions) {
    if (!is_control(in)) continue;
    for (std::size_t i = 0; i < in.index; ++i) edges.insert({i, in.index, EdgeKind::Ctrl});
    for (std::size_t j = in.index + 1; j < n; ++j) edges.insert({in.index, j, EdgeKind::Ctrl});
  }

  // An instruction that reads and writes the same location depends on itself
  // only trivially; self edges are excluded by construction (src < dst above,
  // and r != w guards the read-after-write case).
  return Pdg::from_edges(n, std::move(edges));
}

// ---------------------------------------------------------------------------
// Token-level input sequences.
// ---------------------------------------------------------------------------

/// Stable token id. Structural tokens get fixed small ids; identifiers,
/// labels and literals share a hashed range. Ids depend only on the token
/// text, never on its position.
inline std::uint32_t token_id(std::string_view tok) {
  if (tok == "=") return 1;
  if (tok == "+") return 2;
  if (tok == "-") return 3;
  if (tok == "*") return 4;
  if (tok == "<") return 5;
  if (tok == "==") return 6;
  if (tok == ":") return 7;
  if (tok == "if") return 8;
  if (tok == "goto") return 9;
  if (tok == "load") return 10;
  if (tok == "store") return 11;
  if (tok == "halt") return 12;
  return 13 + static_cast<std::uint32_t>(fnv1a(tok) % (1u << 20));
}

inline constexpr std::uint32_t kFirstHashedTokenId = 13;

/// Per-token model inputs: token ids, intra-instruction positions, and the
/// in/out degree of the owning instruction.
struct DegreeSequences {
  std::vector<std::uint32_t> x_c;
  std::vector<std::uint32_t> x_pos;
  std::vector<std::uint32_t> x_ind;
  std::vector<std::uint32_t> x_outd;
};

inline DegreeSequences degree_sequences(const CodeUnit& unit, const Pdg& g) {
  DegreeSequences seq;
  const std::size_t t = unit.token_count();
  seq.x_c.reserve(t);
  seq.x_pos.reserve(t);
  seq.x_ind.reserve(t);
  seq.x_outd.reserve(t);
  for (std::size_t k = 0; k < t; ++k) {
    const std::size_t owner = unit.token_owner[k];
    seq.x_c.push_back(token_id(unit.tokens[k]));
    seq.x_pos.push_back(static_cast<std::uint32_t>(unit.intra_pos[k]));
    seq.x_ind.push_back(static_cast<std::uint32_t>(g.in_degree[owner]));
    seq.x_outd.push_back(static_cast<std::uint32_t>(g.out_degree[owner]));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Pairwise ancestor distances.
//
// For nodes i and j, every node a with directed paths to both (a node reaches
// itself at distance 0) contributes the candidate (dist(a,i), dist(a,j)).
// The entry is the candidate with minimal sum, ties broken by lexicographic
// order. The winner is a function of the candidate set alone, and an
// automorphism maps the candidate set of (i,j) onto that of (sigma i,
// sigma j) unchanged, so entries are invariant under automorphisms.
// ---------------------------------------------------------------------------

struct DistEntry {
  std::int32_t pos = -1;
  std::int32_t neg = -1;

  bool none() const { return pos < 0; }
  bool operator==(const DistEntry&) const = default;
};

inline constexpr DistEntry kNoAncestor{};

struct DistanceMatrix {
  std::size_t n = 0;
  std::vector<DistEntry> cells;

  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n) : n(n), cells(n * n) {}

  DistEntry& at(std::size_t i, std::size_t j) { return cells[i * n + j]; }
  const DistEntry& at(std::size_t i, std::size_t j) const { return cells[i * n + j]; }

  bool operator==(const DistanceMatrix&) const = default;
};

namespace detail {

inline constexpr std::int32_t kUnreachable = -1;

/// Unweighted shortest path lengths from src over directed edges.
inline std::vector<std::int32_t> bfs_distances(const Pdg& g, std::size_t src) {
  std::vector<std::int32_t> dist(g.n, kUnreachable);
  std::deque<std::size_t> queue{src};
  dist[src] = 0;
  while (!queue.empty()) {
    const std::size_t v = queue.front();
    queue.pop_front();
    for (std::size_t s : g.successors[v]) {
      if (dist[s] == kUnreachable) {
        dist[s] = dist[v] + 1;
        queue.push_back(s);
      }
    }
  }
  return dist;
}

}  // namespace detail

inline DistanceMatrix distance_matrix(const Pdg& g) {
  DistanceMatrix d(g.n);
  std::vector<std::vector<std::int32_t>> from(g.n);
  for (std::size_t a = 0; a < g.n; ++a) from[a] = detail::bfs_distances(g, a);

  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t j = 0; j < g.n; ++j) {
      DistEntry best = kNoAncestor;
      for (std::size_t a = 0; a < g.n; ++a) {
        const std::int32_t di = from[a][i];
        const std::int32_t dj = from[a][j];
        if (di == detail::kUnreachable || dj == detail::kUnreachable) continue;
        if (best.none() || di + dj < best.pos + best.neg ||
            (di + dj == best.pos + best.neg &&
             std::pair(di, dj) < std::pair(best.pos, best.neg))) {
          best = DistEntry{di, dj};
        }
      }
      d.at(i, j) = best;
    }
  }
  return d;
}

/// Lifts an instruction-level matrix to token level: a token pair inherits
/// the entry of its owner instructions, same-owner pairs are (0,0).
inline DistanceMatrix expand_to_tokens(const DistanceMatrix& d, const CodeUnit& unit) {
  DistanceMatrix t(unit.token_count());
  for (std::size_t s = 0; s < t.n; ++s) {
    const std::size_t oi = unit.token_owner[s];
    for (std::size_t k = 0; k < t.n; ++k) {
      const std::size_t oj = unit.token_owner[k];
      t.at(s, k) = oi == oj ? DistEntry{0, 0} : d.at(oi, oj);
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Serialization. Both emitters are byte-stable: object keys and edge lists
// are sorted, and the same graph always serializes to the same bytes.
// ---------------------------------------------------------------------------

inline nlohmann::json pdg_to_json(const Pdg& g, const CodeUnit& unit) {
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t i = 0; i < g.n; ++i) {
    nodes.push_back({{"id", i},
                     {"text", render_instruction(unit.instructions[i])},
                     {"in_deg", g.in_degree[i]},
                     {"out_deg", g.out_degree[i]}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const Edge& e : g.edges) {
    edges.push_back({{"src", e.src},
                     {"dst", e.dst},
                     {"kind", std::string(edge_kind_text(e.kind))}});
  }
  return {{"nodes", nodes}, {"edges", edges}};
}

inline std::string pdg_to_dot(const Pdg& g, const CodeUnit& unit) {
  std::string out = "digraph pdg {\n";
  for (std::size_t i = 0; i < g.n; ++i) {
    out += "  n" + std::to_string(i) + " [label=\"" + std::to_string(i) + ": " +
           render_instruction(unit.instructions[i]) + "\"];\n";
  }
  for (const Edge& e : g.edges) {
    out += "  n" + std::to_string(e.src) + " -> n" + std::to_string(e.dst) +
           " [label=\"" + std::string(edge_kind_text(e.kind)) + "\"];\n";
  }
  out += "}\n";
  return out;
}

}  // namespace codesym
