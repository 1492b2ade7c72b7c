#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <set>
#include <vector>

#include "codesym/generator.hpp"
#include "codesym/symmetry.hpp"

using namespace codesym;

namespace {

Pdg graph_from(std::size_t n, std::initializer_list<Edge> edges) {
  return Pdg::from_edges(n, std::set<Edge>(edges));
}

// Oracle: filter all n! permutations through the definition directly.
std::vector<std::vector<std::size_t>> brute_force_automorphisms(const Pdg& g) {
  std::vector<std::size_t> perm(g.n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::vector<std::size_t>> found;
  do {
    bool ok = true;
    for (const Edge& e : g.edges) {
      if (!g.has_edge(perm[e.src], perm[e.dst], e.kind)) {
        ok = false;
        break;
      }
    }
    if (ok) found.push_back(perm);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return found;
}

}  // namespace

TEST_CASE("any swap of an edgeless pair is an automorphism") {
  const Pdg g = graph_from(2, {});
  CHECK(is_automorphism(g, BlockPermutation({1, 0})));
}

TEST_CASE("reversing a chain is not an automorphism") {
  const Pdg g = graph_from(2, {{0, 1, EdgeKind::Raw}});
  CHECK_FALSE(is_automorphism(g, BlockPermutation({1, 0})));
  CHECK(is_automorphism(g, BlockPermutation::identity(2)));
}

TEST_CASE("edge kinds must survive the relabeling") {
  // Two parallel arcs of different kinds; swapping sources would exchange them.
  const Pdg g = graph_from(3, {{0, 2, EdgeKind::Raw}, {1, 2, EdgeKind::Waw}});
  CHECK_FALSE(is_automorphism(g, BlockPermutation({1, 0, 2})));
}

TEST_CASE("diamond midpoints swap and nothing else moves") {
  const Pdg g = graph_from(4, {{0, 1, EdgeKind::Raw},
                               {0, 2, EdgeKind::Raw},
                               {1, 3, EdgeKind::Raw},
                               {2, 3, EdgeKind::Raw}});
  CHECK(is_automorphism(g, BlockPermutation({0, 2, 1, 3})));
  const AutomorphismGroup group = automorphisms(g);
  CHECK(group.order() == 2);
  // Full factorial filter agrees.
  const auto oracle = brute_force_automorphisms(g);
  REQUIRE(oracle.size() == group.order());
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    REQUIRE(group.elements[i].map() == oracle[i]);
  }
}

TEST_CASE("automorphism size mismatch is rejected") {
  const Pdg g = graph_from(3, {});
  CHECK_THROWS_AS(is_automorphism(g, BlockPermutation({1, 0})), std::invalid_argument);
}

TEST_CASE("a total order admits only the identity") {
  const Pdg g = graph_from(3, {{0, 1, EdgeKind::Raw}, {1, 2, EdgeKind::Raw}});
  const AutomorphismGroup group = automorphisms(g);
  REQUIRE(group.order() == 1);
  CHECK(group.elements[0].is_identity());
}

TEST_CASE("an edgeless graph admits the full symmetric group") {
  const AutomorphismGroup group = automorphisms(graph_from(3, {}));
  CHECK(group.order() == 6);
}

TEST_CASE("two disjoint isomorphic chains swap as wholes") {
  // a=1;b=a;c=1;d=c gives the two RAW arcs 0->1 and 2->3.
  const Pdg g = build_pdg(parse("a=1;b=a;c=1;d=c"));
  REQUIRE(g.edges.size() == 2);
  const AutomorphismGroup group = automorphisms(g);
  CHECK(group.order() == 2);
  const auto oracle = brute_force_automorphisms(g);
  CHECK(oracle.size() == 2);
}

TEST_CASE("enumeration refuses graphs over the cap") {
  const Pdg g = graph_from(11, {});
  CHECK_THROWS_WITH(automorphisms(g), Catch::Matchers::ContainsSubstring("use sampling instead"));
}

TEST_CASE("enumerated groups satisfy the group axioms") {
  Rng rng(507);
  GeneratorConfig small;
  small.max_instructions = 8;
  for (int i = 0; i < 30; ++i) {
    const Pdg g = build_pdg(random_program(rng, small));
    const AutomorphismGroup group = automorphisms(g);

    std::set<std::vector<std::size_t>> members;
    for (const auto& e : group.elements) members.insert(e.map());
    REQUIRE(members.count(BlockPermutation::identity(g.n).map()) == 1);
    for (const auto& a : group.elements) {
      REQUIRE(members.count(a.inverse().map()) == 1);
      for (const auto& b : group.elements) {
        REQUIRE(members.count(a.compose_after(b).map()) == 1);
      }
    }
  }
}

TEST_CASE("zero percent sampling is exactly the identity") {
  Rng rng(62);
  for (int i = 0; i < 40; ++i) {
    const Pdg g = build_pdg(random_program(rng));
    const BlockPermutation pi = sample_reordering(g, 0, rng.next_u64());
    REQUIRE(pi.is_identity());
  }
}

TEST_CASE("full sampling of the free pair reaches both orders and nothing else") {
  const CodeUnit unit = parse("x=2;y=4");
  const Pdg g = build_pdg(unit);
  std::set<std::vector<std::size_t>> seen;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    seen.insert(sample_reordering(g, 100, seed).map());
  }
  CHECK(seen == std::set<std::vector<std::size_t>>{{0, 1}, {1, 0}});
}

TEST_CASE("a chain has a unique linear extension") {
  const Pdg g = graph_from(3, {{0, 1, EdgeKind::Raw}, {1, 2, EdgeKind::Raw}});
  for (int percent : {0, 25, 50, 75, 100}) {
    for (std::uint64_t seed = 0; seed < 16; ++seed) {
      REQUIRE(sample_reordering(g, percent, seed).is_identity());
    }
  }
}

TEST_CASE("sampled reorderings are always linear extensions") {
  Rng rng(88);
  for (int i = 0; i < 80; ++i) {
    const Pdg g = build_pdg(random_program(rng));
    const int percent = static_cast<int>(rng.index(101));
    const BlockPermutation pi = sample_reordering(g, percent, rng.next_u64());
    for (const Edge& e : g.edges) {
      REQUIRE(pi(e.src) < pi(e.dst));
    }
  }
}

TEST_CASE("cycles are rejected with a witness") {
  const Pdg g = graph_from(3, {{0, 1, EdgeKind::Raw},
                               {1, 2, EdgeKind::Raw},
                               {2, 0, EdgeKind::Raw}});
  try {
    sample_reordering(g, 100, 1);
    FAIL("expected a cycle error");
  } catch (const CycleError& e) {
    REQUIRE(e.cycle.size() == 3);
    CHECK(std::string(e.what()).find("cycle") != std::string::npos);
  }
}

TEST_CASE("apply with the identity returns the unit unchanged") {
  const CodeUnit unit = parse("a=a+1;b=a");
  const CodeUnit same = apply(BlockPermutation::identity(2), unit);
  CHECK(same.instructions == unit.instructions);
  CHECK(same.tokens == unit.tokens);
}

TEST_CASE("apply realizes the motivating swap") {
  const CodeUnit unit = parse("x=2;y=4");
  const CodeUnit swapped = apply(BlockPermutation({1, 0}), unit);
  CHECK(render(swapped) == "y = 4\nx = 2\n");
}

TEST_CASE("apply rejects a size mismatch") {
  CHECK_THROWS_AS(apply(BlockPermutation::identity(3), parse("x=1")), std::invalid_argument);
}

TEST_CASE("sampled reorderings of larger programs preserve behavior") {
  Rng rng(954);
  GeneratorConfig big;
  big.min_instructions = 16;
  big.max_instructions = 16;
  for (int i = 0; i < 10; ++i) {
    const CodeUnit unit = random_program(rng, big);
    const Pdg g = build_pdg(unit);
    const BlockPermutation pi = sample_reordering(g, 100, rng.next_u64());
    const EquivResult r = io_equivalent(unit, apply(pi, unit), 50, rng.next_u64());
    REQUIRE(r.verdict != EquivVerdict::Inequivalent);
  }
}

TEST_CASE("permutation matrices are orthogonal") {
  CHECK(permutation_matrix(BlockPermutation::identity(3)) == Matrix::identity(3));

  // Two one-token instructions swapped: the antidiagonal.
  const CodeUnit unit = parse("halt;halt");
  const BlockPermutation swap = BlockPermutation({1, 0}, unit);
  Matrix anti(2, 2);
  anti(0, 1) = anti(1, 0) = 1.0;
  CHECK(permutation_matrix(swap) == anti);

  Rng rng(4242);
  for (int i = 0; i < 20; ++i) {
    const CodeUnit u = random_program(rng);
    const Pdg g = build_pdg(u);
    const BlockPermutation pi = sample_reordering(g, 100, rng.next_u64()).rebind(u);
    const Matrix p = permutation_matrix(pi);
    REQUIRE(p * p.transposed() == Matrix::identity(p.rows()));
  }
}

TEST_CASE("token maps move blocks without reordering their insides") {
  Rng rng(111);
  for (int i = 0; i < 30; ++i) {
    const CodeUnit unit = random_program(rng);
    const Pdg g = build_pdg(unit);
    const BlockPermutation pi = sample_reordering(g, 100, rng.next_u64()).rebind(unit);
    const auto& tok = pi.token_map();
    const auto starts = unit.block_starts();
    for (std::size_t inst = 0; inst < unit.size(); ++inst) {
      for (std::size_t t = starts[inst] + 1; t < starts[inst + 1]; ++t) {
        REQUIRE(tok[t] == tok[t - 1] + 1);  // contiguous, order preserved
      }
    }
    // Bijection over tokens.
    std::vector<bool> hit(tok.size(), false);
    for (std::size_t v : tok) {
      REQUIRE(!hit[v]);
      hit[v] = true;
    }
  }
}

TEST_CASE("composing with the inverse yields the identity") {
  Rng rng(31337);
  for (int i = 0; i < 30; ++i) {
    const Pdg g = build_pdg(random_program(rng));
    const BlockPermutation pi = sample_reordering(g, 100, rng.next_u64());
    CHECK(pi.compose_after(pi.inverse()).is_identity());
    CHECK(pi.inverse().compose_after(pi).is_identity());
  }
}

TEST_CASE("non-bijective maps are rejected") {
  CHECK_THROWS_AS(BlockPermutation({0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(BlockPermutation({0, 2}), std::invalid_argument);
}
