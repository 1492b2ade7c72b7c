#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "codesym/checkpoint.hpp"
#include "codesym/generator.hpp"
#include "codesym/model.hpp"
#include "codesym/symmetry.hpp"

using namespace codesym;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.max_distance_bucket = 8;
  cfg.seed = 99;
  return cfg;
}

GaModel zero_model(const ModelConfig& cfg) {
  GaModel m;
  m.cfg = cfg;
  m.params = ParamSet::shaped(cfg);
  return m;
}

}  // namespace

TEST_CASE("model config rejects odd head counts") {
  ModelConfig cfg = tiny_config();
  cfg.heads = 3;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.heads = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("embedding with zero tables is the zero activation") {
  const CodeUnit unit = parse("a=a+1;b=a");
  const GaModel m = zero_model(tiny_config());
  const Features f = make_features(unit, m.cfg);
  const Matrix e = embed(f, m);
  for (double v : e.data()) REQUIRE(v == 0.0);
}

TEST_CASE("a single token embeds as the sum of its four table rows") {
  const CodeUnit unit = parse("halt");
  const GaModel m = GaModel::init(tiny_config(), 0.2);
  const Features f = make_features(unit, m.cfg);
  const Matrix e = embed(f, m);
  REQUIRE(e.rows() == 1);
  for (std::size_t j = 0; j < m.cfg.d_model; ++j) {
    const double expected = m.params.emb_token(f.row_token[0], j) +
                            m.params.emb_pos(f.row_pos[0], j) +
                            m.params.emb_ind(f.row_ind[0], j) +
                            m.params.emb_outd(f.row_outd[0], j);
    REQUIRE(e(0, j) == expected);
  }
}

TEST_CASE("embedding commutes exactly with graph-preserving moves") {
  const CodeUnit unit = parse("x=2;y=4");
  const GaModel m = GaModel::init(tiny_config(), 0.3);
  const Features f = make_features(unit, m.cfg);
  const BlockPermutation sigma = BlockPermutation({1, 0}, unit);

  const Features rebuilt = make_features(apply(sigma, unit), m.cfg);
  const Matrix lhs = embed(rebuilt, m);
  const Matrix rhs = permute_rows(embed(f, m), sigma.token_map());
  REQUIRE(lhs == rhs);  // bit-exact
}

TEST_CASE("absolute positions break embedding equivariance") {
  ModelConfig cfg = tiny_config();
  cfg.absolute_positions = true;
  const CodeUnit unit = parse("x=2;y=4");
  const GaModel m = GaModel::init(cfg, 0.3);
  const Features f = make_features(unit, cfg);
  const BlockPermutation sigma = BlockPermutation({1, 0}, unit);
  const Features rebuilt = make_features(apply(sigma, unit), cfg);
  const double dev = max_abs_diff(embed(rebuilt, m), permute_rows(embed(f, m), sigma.token_map()));
  CHECK(dev > 1e-3);
}

TEST_CASE("attention with zero queries and bias averages the values") {
  ModelConfig cfg = tiny_config();
  cfg.layers = 1;
  GaModel m = GaModel::init(cfg, 0.4);
  for (auto& layer : m.params.layers) {
    for (auto& w : layer.w_q)
      for (double& v : w.data()) v = 0.0;
    for (auto& w : layer.w_k)
      for (double& v : w.data()) v = 0.0;
    layer.w_o = Matrix::identity(cfg.d_model);
  }
  for (double& v : m.params.bias_pos.data()) v = 0.0;
  for (double& v : m.params.bias_neg.data()) v = 0.0;

  const CodeUnit unit = parse("a=1;b=2;c=a+b");
  const Features f = make_features(unit, cfg);
  const Matrix e = embed(f, m);
  LayerCache cache;
  const Matrix out = ga_forward(e, f.dist, m, 0, &cache);

  const std::size_t n = e.rows();
  const std::size_t dh = cfg.head_dim();
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    for (std::size_t j = 0; j < dh; ++j) {
      double mean = 0.0;
      for (std::size_t s = 0; s < n; ++s) mean += cache.heads[h].v(s, j);
      mean /= static_cast<double>(n);
      for (std::size_t t = 0; t < n; ++t) {
        REQUIRE_THAT(out(t, h * dh + j), Catch::Matchers::WithinAbs(mean, 1e-12));
      }
    }
  }
}

TEST_CASE("the attention stack commutes with legal reorderings") {
  Rng rng(640);
  GeneratorConfig gen;
  gen.max_instructions = 10;
  for (int i = 0; i < 15; ++i) {
    const CodeUnit unit = random_program(rng, gen);
    if (unit.token_count() == 0) continue;
    ModelConfig cfg = tiny_config();
    cfg.seed = rng.next_u64();
    const GaModel m = GaModel::init(cfg, 0.25);
    const Features f = make_features(unit, cfg);
    const Pdg g = build_pdg(unit);
    const BlockPermutation pi = sample_reordering(g, 100, rng.next_u64()).rebind(unit);

    const Matrix direct = forward_stack(make_features(apply(pi, unit), cfg), m);
    const Matrix permuted = permute_rows(forward_stack(f, m), pi.token_map());
    REQUIRE(max_abs_diff(direct, permuted) < 1e-9);
  }
}

TEST_CASE("the residual and norm variant stays equivariant") {
  Rng rng(641);
  ModelConfig cfg = tiny_config();
  cfg.residual_norm = true;
  for (int i = 0; i < 10; ++i) {
    const CodeUnit unit = random_program(rng);
    if (unit.token_count() == 0) continue;
    cfg.seed = rng.next_u64();
    const GaModel m = GaModel::init(cfg, 0.25);
    const Features f = make_features(unit, cfg);
    const Pdg g = build_pdg(unit);
    const BlockPermutation pi = sample_reordering(g, 100, rng.next_u64()).rebind(unit);

    const Matrix direct = forward_stack(make_features(apply(pi, unit), cfg), m);
    const Matrix permuted = permute_rows(forward_stack(f, m), pi.token_map());
    REQUIRE(max_abs_diff(direct, permuted) < 1e-9);
  }
}

TEST_CASE("token head matches a naive affine oracle") {
  const CodeUnit unit = parse("a=1;b=a;c=b");
  const GaModel m = GaModel::init(tiny_config(), 0.3);
  const Features f = make_features(unit, m.cfg);
  const Matrix e = forward_stack(f, m);
  const Matrix logits = token_logits(e, m);
  for (std::size_t t = 0; t < e.rows(); ++t) {
    for (std::size_t j = 0; j < m.cfg.label_count; ++j) {
      double acc = m.params.token_b(0, j);
      for (std::size_t k = 0; k < m.cfg.d_model; ++k) acc += e(t, k) * m.params.token_w(k, j);
      REQUIRE_THAT(logits(t, j), Catch::Matchers::WithinAbs(acc, 1e-12));
    }
  }
}

TEST_CASE("zero token head weights give zero logits") {
  const CodeUnit unit = parse("x = 1");
  GaModel m = GaModel::init(tiny_config(), 0.3);
  for (double& v : m.params.token_w.data()) v = 0.0;
  for (double& v : m.params.token_b.data()) v = 0.0;
  const Matrix logits = token_logits(forward_stack(make_features(unit, m.cfg), m), m);
  for (double v : logits.data()) REQUIRE(v == 0.0);
}

TEST_CASE("pooling one token returns that token") {
  Matrix e(1, 4);
  for (std::size_t j = 0; j < 4; ++j) e(0, j) = 0.25 * static_cast<double>(j) - 0.3;
  const std::vector<double> mean = pooled_mean(e);
  for (std::size_t j = 0; j < 4; ++j) REQUIRE(mean[j] == e(0, j));
}

TEST_CASE("opposite tokens pool to the zero vector") {
  const GaModel m = GaModel::init(tiny_config(), 0.3);
  Matrix e(2, m.cfg.d_model);
  Rng rng(15);
  for (std::size_t j = 0; j < m.cfg.d_model; ++j) {
    e(0, j) = rng.normal();
    e(1, j) = -e(0, j);
  }
  const std::vector<double> mean = pooled_mean(e);
  for (double v : mean) REQUIRE(v == 0.0);

  Matrix zero(1, m.cfg.d_model);
  CHECK(pool_logits(e, m) == pool_logits(zero, m));
}

TEST_CASE("pooled head is bit-exact under any row permutation") {
  Rng rng(16);
  const GaModel m = GaModel::init(tiny_config(), 0.3);
  Matrix e(7, m.cfg.d_model);
  for (double& v : e.data()) v = rng.normal();
  const std::vector<double> base = pool_logits(e, m);
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  for (int r = 0; r < 20; ++r) {
    rng.shuffle(perm);
    REQUIRE(pool_logits(permute_rows(e, perm), m) == base);
  }
}

TEST_CASE("pooling an empty activation is an error") {
  const GaModel m = GaModel::init(tiny_config(), 0.3);
  CHECK_THROWS_AS(pool_logits(Matrix(0, m.cfg.d_model), m), std::invalid_argument);
}

TEST_CASE("pair similarity of an activation with itself is one") {
  const GaModel m = GaModel::init(tiny_config(), 0.3);
  Matrix e(3, m.cfg.d_model);
  Rng rng(17);
  for (double& v : e.data()) v = rng.normal();
  const Similarity s = pair_similarity(e, e, m);
  CHECK_FALSE(s.degenerate);
  CHECK_THAT(s.value, Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("antipodal projections give similarity minus one") {
  ModelConfig cfg = tiny_config();
  GaModel m = GaModel::init(cfg, 0.3);
  // tanh is odd, so with zero biases the projection of -e is the negated
  // projection of e.
  for (double& v : m.params.pair_b1.data()) v = 0.0;
  for (double& v : m.params.pair_b2.data()) v = 0.0;
  Matrix e(1, cfg.d_model);
  Rng rng(18);
  for (double& v : e.data()) v = rng.normal();
  Matrix neg = e;
  neg.scale(-1.0);
  const Similarity s = pair_similarity(e, neg, m);
  CHECK_FALSE(s.degenerate);
  CHECK_THAT(s.value, Catch::Matchers::WithinAbs(-1.0, 1e-12));
}

TEST_CASE("zero-norm projections are flagged, not divided by") {
  const GaModel m = zero_model(tiny_config());
  Matrix e(2, m.cfg.d_model);
  const Similarity s = pair_similarity(e, e, m);
  CHECK(s.degenerate);
  CHECK(s.value == 0.0);
}

TEST_CASE("a loss pinned to a constant has zero gradients") {
  // Zeroed projection weights make the pair loss identically zero, so every
  // gradient must be zero as well.
  ModelConfig cfg = tiny_config();
  GaModel rigged = GaModel::init(cfg, 0.3);
  rigged.params.pair_w2.scale(0.0);
  rigged.params.pair_b2 = Matrix(1, cfg.d_model);

  const Features f = make_features(parse("a=1;b=a"), cfg);
  ParamSet grads = ParamSet::shaped(cfg);
  const double loss = backward_pair(f, f, -1, rigged, grads);
  CHECK(loss == 0.0);
  for (const Matrix* g : grads.collect()) {
    for (double v : g->data()) REQUIRE(v == 0.0);
  }
}

TEST_CASE("bias buckets no token pair uses get zero gradient") {
  ModelConfig cfg = tiny_config();
  const CodeUnit unit = parse("x = 1");  // one instruction, all pairs at distance (0,0)
  const GaModel m = GaModel::init(cfg, 0.3);
  const Features f = make_features(unit, cfg);
  ParamSet grads = ParamSet::shaped(cfg);
  backward_unit(f, 1, m, grads);
  for (std::size_t b = 1; b < cfg.bucket_count(); ++b) {
    REQUIRE(grads.bias_pos(0, b) == 0.0);
    REQUIRE(grads.bias_neg(0, b) == 0.0);
  }
  CHECK(grads.bias_pos(0, 0) != 0.0);
}

TEST_CASE("narrow precision tracks wide within bf16 noise") {
  const CodeUnit unit = parse("a=1;b=a;c=a+b");
  ModelConfig wide = tiny_config();
  ModelConfig narrow = wide;
  narrow.precision = Precision::Narrow;
  const GaModel mw = GaModel::init(wide, 0.2);
  GaModel mn = mw;
  mn.cfg = narrow;

  const Features f = make_features(unit, wide);
  const Matrix yw = forward_stack(f, mw);
  const Matrix yn = forward_stack(f, mn);
  const double dev = max_abs_diff(yw, yn);
  CHECK(dev > 0.0);
  CHECK(dev < 0.05);
}

TEST_CASE("narrow rounding is idempotent and preserves specials") {
  CHECK(narrow_round(narrow_round(0.1234567)) == narrow_round(0.1234567));
  CHECK(narrow_round(0.0) == 0.0);
  CHECK(narrow_round(1.0) == 1.0);
  CHECK(std::isinf(narrow_round(std::numeric_limits<double>::infinity())));
}

TEST_CASE("checkpoints round-trip bit for bit") {
  const GaModel m = GaModel::init(tiny_config(), 0.3);
  const auto path = std::filesystem::temp_directory_path() / "codesym_ckpt_test.bin";
  save_model(m, path);
  const GaModel loaded = load_model(path);
  CHECK(loaded.cfg.d_model == m.cfg.d_model);
  auto a = m.params.collect();
  auto b = loaded.params.collect();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i]->data() == b[i]->data());
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loading rejects foreign files") {
  const auto path = std::filesystem::temp_directory_path() / "codesym_ckpt_bad.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "definitely not a checkpoint";
  }
  CHECK_THROWS_WITH(load_model(path), Catch::Matchers::ContainsSubstring("not a model checkpoint"));
  std::filesystem::remove(path);
}
