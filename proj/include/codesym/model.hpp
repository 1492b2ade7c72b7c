#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "codesym/matrix.hpp"
#include "codesym/pdg.hpp"
#include "codesym/rng.hpp"

#include <nlohmann/json.hpp>

namespace codesym {

// ---------------------------------------------------------------------------
// A small self-attention encoder over instruction tokens.
//
// Each token embeds as the sum of four table lookups: token id, position
// inside its instruction, and the in/out degree of the owning instruction's
// dependence-graph node. Attention scores are biased per token pair by a
// learned scalar looked up from the pairwise ancestor-distance matrix; the
// first half of the heads reads the positive component, the second half the
// negative one. The bias is added to the attention probabilities after the
// softmax and rows of the mixed matrix are not renormalized.
//
// None of the inputs mention absolute sequence positions, and the bias
// depends only on the distance matrix, so the encoder commutes with any
// relabeling that leaves the dependence graph intact.
// ---------------------------------------------------------------------------

enum class Precision { Wide, Narrow };

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t heads = 4;  // even: the two halves read different bias tables
  std::size_t layers = 2;
  std::size_t max_distance_bucket = 16;
  std::size_t vocab_tokens = 64;
  std::size_t vocab_positions = 32;
  std::size_t vocab_degrees = 32;
  std::size_t label_count = 2;
  bool residual_norm = false;
  // Diagnostic mode: replace intra-instruction positions with absolute token
  // indices. Breaks the permutation structure on purpose.
  bool absolute_positions = false;
  Precision precision = Precision::Wide;
  std::uint64_t seed = 1;

  void validate() const {
    if (d_model == 0 || heads == 0 || layers == 0 || label_count == 0)
      throw std::invalid_argument("model sizes must be positive");
    if (heads % 2 != 0) throw std::invalid_argument("head count must be even");
    if (d_model % heads != 0)
      throw std::invalid_argument("d_model must be divisible by the head count");
    if (vocab_tokens <= kFirstHashedTokenId)
      throw std::invalid_argument("token vocabulary too small");
    if (vocab_positions == 0 || vocab_degrees == 0)
      throw std::invalid_argument("vocabulary sizes must be positive");
  }

  std::size_t head_dim() const { return d_model / heads; }
  std::size_t bucket_count() const { return max_distance_bucket + 2; }
  std::size_t none_bucket() const { return max_distance_bucket + 1; }

  std::size_t bucket_of(std::int32_t distance) const {
    if (distance < 0) return none_bucket();
    return std::min<std::size_t>(static_cast<std::size_t>(distance), max_distance_bucket);
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"d_model", c.d_model},
       {"heads", c.heads},
       {"layers", c.layers},
       {"max_distance_bucket", c.max_distance_bucket},
       {"vocab_tokens", c.vocab_tokens},
       {"vocab_positions", c.vocab_positions},
       {"vocab_degrees", c.vocab_degrees},
       {"label_count", c.label_count},
       {"residual_norm", c.residual_norm},
       {"absolute_positions", c.absolute_positions},
       {"precision", c.precision == Precision::Wide ? "wide" : "narrow"},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("d_model").get_to(c.d_model);
  j.at("heads").get_to(c.heads);
  j.at("layers").get_to(c.layers);
  j.at("max_distance_bucket").get_to(c.max_distance_bucket);
  j.at("vocab_tokens").get_to(c.vocab_tokens);
  j.at("vocab_positions").get_to(c.vocab_positions);
  j.at("vocab_degrees").get_to(c.vocab_degrees);
  j.at("label_count").get_to(c.label_count);
  j.at("residual_norm").get_to(c.residual_norm);
  j.at("absolute_positions").get_to(c.absolute_positions);
  c.precision = j.at("precision").get<std::string>() == "narrow" ? Precision::Narrow
                                                                 : Precision::Wide;
  j.at("seed").get_to(c.seed);
}

// ---------------------------------------------------------------------------
// Parameters. Every tensor lives in one ParamSet so gradients, updates,
// finite differences, and serialization can all walk the same structure.
// ---------------------------------------------------------------------------

struct LayerParams {
  std::vector<Matrix> w_q, w_k, w_v;  // per head, d_model x head_dim
  Matrix w_o;                         // d_model x d_model
  Matrix ln_gamma, ln_beta;           // 1 x d_model, residual_norm only
};

struct ParamSet {
  Matrix emb_token, emb_pos, emb_ind, emb_outd;  // vocab x d_model
  std::vector<LayerParams> layers;
  Matrix bias_pos, bias_neg;  // 1 x bucket_count

  Matrix token_w;              // d_model x label_count
  Matrix token_b;              // 1 x label_count
  Matrix pool_w1, pool_w2;     // d_model x d_model, d_model x label_count
  Matrix pool_b1, pool_b2;     // 1 x d_model, 1 x label_count
  Matrix pair_w1, pair_w2;     // d_model x d_model, d_model x d_model
  Matrix pair_b1, pair_b2;     // 1 x d_model, 1 x d_model

  static ParamSet shaped(const ModelConfig& cfg) {
    ParamSet p;
    p.emb_token = Matrix(cfg.vocab_tokens, cfg.d_model);
    p.emb_pos = Matrix(cfg.vocab_positions, cfg.d_model);
    p.emb_ind = Matrix(cfg.vocab_degrees, cfg.d_model);
    p.emb_outd = Matrix(cfg.vocab_degrees, cfg.d_model);
    p.layers.resize(cfg.layers);
    for (auto& layer : p.layers) {
      layer.w_q.assign(cfg.heads, Matrix(cfg.d_model, cfg.head_dim()));
      layer.w_k.assign(cfg.heads, Matrix(cfg.d_model, cfg.head_dim()));
      layer.w_v.assign(cfg.heads, Matrix(cfg.d_model, cfg.head_dim()));
      layer.w_o = Matrix(cfg.d_model, cfg.d_model);
      if (cfg.residual_norm) {
        layer.ln_gamma = Matrix(1, cfg.d_model);
        layer.ln_beta = Matrix(1, cfg.d_model);
      }
    }
    p.bias_pos = Matrix(1, cfg.bucket_count());
    p.bias_neg = Matrix(1, cfg.bucket_count());
    p.token_w = Matrix(cfg.d_model, cfg.label_count);
    p.token_b = Matrix(1, cfg.label_count);
    p.pool_w1 = Matrix(cfg.d_model, cfg.d_model);
    p.pool_b1 = Matrix(1, cfg.d_model);
    p.pool_w2 = Matrix(cfg.d_model, cfg.label_count);
    p.pool_b2 = Matrix(1, cfg.label_count);
    p.pair_w1 = Matrix(cfg.d_model, cfg.d_model);
    p.pair_b1 = Matrix(1, cfg.d_model);
    p.pair_w2 = Matrix(cfg.d_model, cfg.d_model);
    p.pair_b2 = Matrix(1, cfg.d_model);
    return p;
  }

  template <typename Self, typename F>
  static void visit_impl(Self& self, F&& f) {
    f("emb_token", self.emb_token);
    f("emb_pos", self.emb_pos);
    f("emb_ind", self.emb_ind);
    f("emb_outd", self.emb_outd);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& layer = self.layers[l];
      const std::string prefix = "layer" + std::to_string(l) + ".";
      for (std::size_t h = 0; h < layer.w_q.size(); ++h) {
        const std::string hp = prefix + "head" + std::to_string(h) + ".";
        f(hp + "w_q", layer.w_q[h]);
        f(hp + "w_k", layer.w_k[h]);
        f(hp + "w_v", layer.w_v[h]);
      }
      f(prefix + "w_o", layer.w_o);
      if (layer.ln_gamma.rows() > 0) {
        f(prefix + "ln_gamma", layer.ln_gamma);
        f(prefix + "ln_beta", layer.ln_beta);
      }
    }
    f("bias_pos", self.bias_pos);
    f("bias_neg", self.bias_neg);
    f("token_w", self.token_w);
    f("token_b", self.token_b);
    f("pool_w1", self.pool_w1);
    f("pool_b1", self.pool_b1);
    f("pool_w2", self.pool_w2);
    f("pool_b2", self.pool_b2);
    f("pair_w1", self.pair_w1);
    f("pair_b1", self.pair_b1);
    f("pair_w2", self.pair_w2);
    f("pair_b2", self.pair_b2);
  }

  template <typename F> void visit(F&& f) { visit_impl(*this, f); }
  template <typename F> void visit(F&& f) const { visit_impl(*this, f); }

  void add_scaled(const ParamSet& other, double factor) {
    auto it = collect();
    auto ot = other.collect();
    for (std::size_t i = 0; i < it.size(); ++i) {
      auto& dst = it[i]->data();
      const auto& src = ot[i]->data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += factor * src[k];
    }
  }

  std::vector<Matrix*> collect() {
    std::vector<Matrix*> out;
    visit([&](const std::string&, Matrix& m) { out.push_back(&m); });
    return out;
  }
  std::vector<const Matrix*> collect() const {
    std::vector<const Matrix*> out;
    visit([&](const std::string&, const Matrix& m) { out.push_back(&m); });
    return out;
  }
};

struct GaModel {
  ModelConfig cfg;
  ParamSet params;

  /// Seeded random initialization. The scale matters for audits: shipped
  /// defaults keep attention unsaturated while leaving room for bias terms.
  static GaModel init(const ModelConfig& cfg, double weight_scale = 0.08) {
    cfg.validate();
    GaModel m;
    m.cfg = cfg;
    m.params = ParamSet::shaped(cfg);
    Rng rng(cfg.seed);
    m.params.visit([&](const std::string& name, Matrix& mat) {
      if (name.ends_with("ln_gamma")) {
        for (double& v : mat.data()) v = 1.0;
      } else if (name.ends_with("ln_beta")) {
        // zeros
      } else {
        for (double& v : mat.data()) v = rng.normal(0.0, weight_scale);
      }
    });
    return m;
  }
};

// ---------------------------------------------------------------------------
// Model inputs derived from a unit and its dependence graph.
// ---------------------------------------------------------------------------

struct Features {
  std::size_t token_count = 0;
  std::vector<std::uint32_t> row_token, row_pos, row_ind, row_outd;
  DistanceMatrix dist;  // token level
};

inline Features make_features(const CodeUnit& unit, const Pdg& g, const ModelConfig& cfg) {
  const DegreeSequences seq = degree_sequences(unit, g);
  Features f;
  f.token_count = unit.token_count();
  f.row_token.reserve(f.token_count);
  f.row_pos.reserve(f.token_count);
  f.row_ind.reserve(f.token_count);
  f.row_outd.reserve(f.token_count);
  for (std::size_t t = 0; t < f.token_count; ++t) {
    const std::uint32_t id = seq.x_c[t];
    f.row_token.push_back(
        id < kFirstHashedTokenId
            ? id
            : kFirstHashedTokenId +
                  (id - kFirstHashedTokenId) %
                      static_cast<std::uint32_t>(cfg.vocab_tokens - kFirstHashedTokenId));
    const std::uint32_t pos = cfg.absolute_positions ? static_cast<std::uint32_t>(t) : seq.x_pos[t];
    f.row_pos.push_back(std::min<std::uint32_t>(pos, static_cast<std::uint32_t>(cfg.vocab_positions - 1)));
    f.row_ind.push_back(std::min<std::uint32_t>(seq.x_ind[t], static_cast<std::uint32_t>(cfg.vocab_degrees - 1)));
    f.row_outd.push_back(std::min<std::uint32_t>(seq.x_outd[t], static_cast<std::uint32_t>(cfg.vocab_degrees - 1)));
  }
  f.dist = expand_to_tokens(distance_matrix(g), unit);
  return f;
}

inline Features make_features(const CodeUnit& unit, const ModelConfig& cfg) {
  return make_features(unit, build_pdg(unit), cfg);
}

/// Applies a token permutation to precomputed features. Matches rebuilding
/// features from the permuted unit whenever the graph relabels consistently.
inline Features permute_features(const Features& f, const std::vector<std::size_t>& token_map) {
  Features out;
  out.token_count = f.token_count;
  out.row_token.resize(f.token_count);
  out.row_pos.resize(f.token_count);
  out.row_ind.resize(f.token_count);
  out.row_outd.resize(f.token_count);
  out.dist = DistanceMatrix(f.token_count);
  for (std::size_t t = 0; t < f.token_count; ++t) {
    out.row_token[token_map[t]] = f.row_token[t];
    out.row_pos[token_map[t]] = f.row_pos[t];
    out.row_ind[token_map[t]] = f.row_ind[t];
    out.row_outd[token_map[t]] = f.row_outd[t];
    for (std::size_t s = 0; s < f.token_count; ++s) {
      out.dist.at(token_map[t], token_map[s]) = f.dist.at(t, s);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward pass.
// ---------------------------------------------------------------------------

/// Round-to-nearest-even bfloat16, widened back to double. Narrow precision
/// applies this after every forward operation.
inline double narrow_round(double x) {
  float f = static_cast<float>(x);
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof(bits));
  bits += 0x7fffu + ((bits >> 16) & 1u);
  bits &= 0xffff0000u;
  std::memcpy(&f, &bits, sizeof(bits));
  return static_cast<double>(f);
}

namespace detail {

inline void maybe_narrow(Matrix& m, Precision p) {
  if (p != Precision::Narrow) return;
  for (double& v : m.data()) v = narrow_round(v);
}

inline void maybe_narrow(std::vector<double>& v, Precision p) {
  if (p != Precision::Narrow) return;
  for (double& x : v) x = narrow_round(x);
}

}  // namespace detail

inline Matrix embed(const Features& f, const GaModel& m) {
  const std::size_t d = m.cfg.d_model;
  Matrix e(f.token_count, d);
  const ParamSet& p = m.params;
  for (std::size_t t = 0; t < f.token_count; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      e(t, j) = p.emb_token(f.row_token[t], j) + p.emb_pos(f.row_pos[t], j) +
                p.emb_ind(f.row_ind[t], j) + p.emb_outd(f.row_outd[t], j);
    }
  }
  detail::maybe_narrow(e, m.cfg.precision);
  return e;
}

struct HeadCache {
  Matrix q, k, v;   // tokens x head_dim
  Matrix probs;     // key x query, columns sum to 1
  Matrix mixed;     // probs + bias, not renormalized
};

struct LayerCache {
  Matrix input;
  std::vector<HeadCache> heads;
  Matrix concat;    // tokens x d_model
  Matrix attn_out;  // concat * w_o
  // residual_norm extras
  Matrix pre_norm;
  std::vector<double> inv_std;
  Matrix output;
};

struct ForwardCache {
  Features features;
  Matrix embedded;
  std::vector<LayerCache> layers;
  Matrix final_activation;
};

namespace detail {

/// Softmax over keys: column t of `scores` normalizes independently.
inline Matrix column_softmax(const Matrix& scores) {
  const std::size_t n = scores.rows();
  Matrix probs(n, n);
  for (std::size_t t = 0; t < n; ++t) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < n; ++s) hi = std::max(hi, scores(s, t));
    double total = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      probs(s, t) = std::exp(scores(s, t) - hi);
      total += probs(s, t);
    }
    for (std::size_t s = 0; s < n; ++s) probs(s, t) /= total;
  }
  return probs;
}

inline void layer_norm_forward(const Matrix& gamma, const Matrix& beta, LayerCache& cache,
                               Precision precision) {
  const std::size_t n = cache.pre_norm.rows();
  const std::size_t d = cache.pre_norm.cols();
  cache.output = Matrix(n, d);
  cache.inv_std.assign(n, 0.0);
  constexpr double kEps = 1e-6;
  for (std::size_t t = 0; t < n; ++t) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += cache.pre_norm(t, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = cache.pre_norm(t, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kEps);
    cache.inv_std[t] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      cache.output(t, j) = gamma(0, j) * (cache.pre_norm(t, j) - mean) * inv + beta(0, j);
    }
  }
  maybe_narrow(cache.output, precision);
}

}  // namespace detail

/// One biased attention layer. Per head: scores = (K^T Q) / sqrt(head_dim),
/// probabilities by softmax over keys, then the distance bias is added and
/// values are mixed by the biased matrix. Heads concatenate and project.
inline Matrix ga_forward(const Matrix& e, const DistanceMatrix& dist, const GaModel& m,
                         std::size_t layer_index, LayerCache* cache = nullptr) {
  const ModelConfig& cfg = m.cfg;
  if (e.rows() != dist.n) throw std::invalid_argument("activation and distance matrix disagree");
  if (e.cols() != cfg.d_model) throw std::invalid_argument("activation width mismatch");
  const LayerParams& lp = m.params.layers.at(layer_index);
  const std::size_t n = e.rows();
  const std::size_t dh = cfg.head_dim();
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  LayerCache local;
  LayerCache& lc = cache ? *cache : local;
  lc.input = e;
  lc.heads.assign(cfg.heads, HeadCache{});
  lc.concat = Matrix(n, cfg.d_model);

  for (std::size_t h = 0; h < cfg.heads; ++h) {
    HeadCache& hc = lc.heads[h];
    hc.q = e * lp.w_q[h];
    hc.k = e * lp.w_k[h];
    hc.v = e * lp.w_v[h];
    detail::maybe_narrow(hc.q, cfg.precision);
    detail::maybe_narrow(hc.k, cfg.precision);
    detail::maybe_narrow(hc.v, cfg.precision);

    Matrix scores(n, n);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t t = 0; t < n; ++t) {
        double dot = 0.0;
        for (std::size_t j = 0; j < dh; ++j) dot += hc.k(s, j) * hc.q(t, j);
        scores(s, t) = dot * inv_scale;
      }
    }
    detail::maybe_narrow(scores, cfg.precision);
    hc.probs = detail::column_softmax(scores);
    detail::maybe_narrow(hc.probs, cfg.precision);

    const bool positive_half = h < cfg.heads / 2;
    const Matrix& table = positive_half ? m.params.bias_pos : m.params.bias_neg;
    hc.mixed = hc.probs;
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t t = 0; t < n; ++t) {
        const DistEntry& entry = dist.at(s, t);
        const std::size_t bucket = cfg.bucket_of(positive_half ? entry.pos : entry.neg);
        hc.mixed(s, t) += table(0, bucket);
      }
    }
    detail::maybe_narrow(hc.mixed, cfg.precision);

    // out(t, :) = sum_s mixed(s, t) v(s, :)
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t j = 0; j < dh; ++j) {
        double acc = 0.0;
        for (std::size_t s = 0; s < n; ++s) acc += hc.mixed(s, t) * hc.v(s, j);
        lc.concat(t, h * dh + j) = acc;
      }
    }
  }
  detail::maybe_narrow(lc.concat, cfg.precision);

  lc.attn_out = lc.concat * lp.w_o;
  detail::maybe_narrow(lc.attn_out, cfg.precision);

  if (!cfg.residual_norm) {
    lc.output = lc.attn_out;
    return lc.output;
  }
  lc.pre_norm = lc.input;
  lc.pre_norm += lc.attn_out;
  detail::maybe_narrow(lc.pre_norm, cfg.precision);
  detail::layer_norm_forward(lp.ln_gamma, lp.ln_beta, lc, cfg.precision);
  return lc.output;
}

/// Embedding plus all attention layers.
inline Matrix forward_stack(const Features& f, const GaModel& m, ForwardCache* cache = nullptr) {
  ForwardCache local;
  ForwardCache& fc = cache ? *cache : local;
  fc.features = f;
  fc.embedded = embed(f, m);
  fc.layers.assign(m.cfg.layers, LayerCache{});
  Matrix e = fc.embedded;
  for (std::size_t l = 0; l < m.cfg.layers; ++l) {
    e = ga_forward(e, f.dist, m, l, &fc.layers[l]);
  }
  fc.final_activation = e;
  return e;
}

// ---------------------------------------------------------------------------
// Prediction heads.
// ---------------------------------------------------------------------------

/// Per-token affine map to label logits. Applied independently per token, so
/// a token keeps its logits wherever a permutation moves it.
inline Matrix token_logits(const Matrix& e_final, const GaModel& m) {
  Matrix logits = e_final * m.params.token_w;
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    for (std::size_t j = 0; j < logits.cols(); ++j) logits(t, j) += m.params.token_b(0, j);
  }
  detail::maybe_narrow(logits, m.cfg.precision);
  return logits;
}

/// Mean over tokens, summed per dimension in ascending value order. The
/// sorted order is a canonical order shared by every permutation of the same
/// rows, which makes the result bit-identical rather than merely close.
inline std::vector<double> pooled_mean(const Matrix& e) {
  if (e.rows() == 0) throw std::invalid_argument("cannot pool an empty activation");
  std::vector<double> mean(e.cols(), 0.0);
  std::vector<double> column(e.rows());
  for (std::size_t j = 0; j < e.cols(); ++j) {
    for (std::size_t t = 0; t < e.rows(); ++t) column[t] = e(t, j);
    std::sort(column.begin(), column.end());
    double acc = 0.0;
    for (double v : column) acc += v;
    mean[j] = acc / static_cast<double>(e.rows());
  }
  return mean;
}

namespace detail {

struct FeedForwardCache {
  std::vector<double> input, hidden;
};

/// input (d) -> tanh(input W1 + b1) W2 + b2
inline std::vector<double> feed_forward(const std::vector<double>& u, const Matrix& w1,
                                        const Matrix& b1, const Matrix& w2, const Matrix& b2,
                                        Precision precision, FeedForwardCache* cache) {
  const std::size_t d = w1.rows();
  const std::size_t hidden_dim = w1.cols();
  const std::size_t out_dim = w2.cols();
  std::vector<double> hidden(hidden_dim, 0.0);
  for (std::size_t j = 0; j < hidden_dim; ++j) {
    double acc = b1(0, j);
    for (std::size_t i = 0; i < d; ++i) acc += u[i] * w1(i, j);
    hidden[j] = std::tanh(acc);
  }
  maybe_narrow(hidden, precision);
  std::vector<double> out(out_dim, 0.0);
  for (std::size_t j = 0; j < out_dim; ++j) {
    double acc = b2(0, j);
    for (std::size_t i = 0; i < hidden_dim; ++i) acc += hidden[i] * w2(i, j);
    out[j] = acc;
  }
  maybe_narrow(out, precision);
  if (cache) {
    cache->input = u;
    cache->hidden = hidden;
  }
  return out;
}

}  // namespace detail

/// Unit-level logits: pooled mean through a two-layer feed-forward head.
inline std::vector<double> pool_logits(const Matrix& e_final, const GaModel& m,
                                       detail::FeedForwardCache* cache = nullptr) {
  std::vector<double> u = pooled_mean(e_final);
  detail::maybe_narrow(u, m.cfg.precision);
  return detail::feed_forward(u, m.params.pool_w1, m.params.pool_b1, m.params.pool_w2,
                              m.params.pool_b2, m.cfg.precision, cache);
}

/// Pooled projection used by the pair head.
inline std::vector<double> pair_projection(const Matrix& e_final, const GaModel& m,
                                           detail::FeedForwardCache* cache = nullptr) {
  std::vector<double> u = pooled_mean(e_final);
  detail::maybe_narrow(u, m.cfg.precision);
  return detail::feed_forward(u, m.params.pair_w1, m.params.pair_b1, m.params.pair_w2,
                              m.params.pair_b2, m.cfg.precision, cache);
}

struct Similarity {
  double value = 0.0;
  bool degenerate = false;  // a projection had zero norm; value forced to 0
};

inline Similarity pair_similarity(const Matrix& e1_final, const Matrix& e2_final,
                                  const GaModel& m) {
  const std::vector<double> a = pair_projection(e1_final, m);
  const std::vector<double> b = pair_projection(e2_final, m);
  double na = 0.0, nb = 0.0, dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i] * a[i];
    nb += b[i] * b[i];
    dot += a[i] * b[i];
  }
  if (na < 1e-24 || nb < 1e-24) return {0.0, true};
  return {dot / (std::sqrt(na) * std::sqrt(nb)), false};
}

// ---------------------------------------------------------------------------
// Losses and reverse-mode gradients. The backward pass is hand written per
// stage and mirrors the cached forward exactly.
// ---------------------------------------------------------------------------

namespace detail {

/// Softmax cross-entropy; returns loss and writes d(logits) into dlogits.
inline double softmax_cross_entropy(const std::vector<double>& logits, std::size_t label,
                                    std::vector<double>& dlogits) {
  double hi = logits[0];
  for (double v : logits) hi = std::max(hi, v);
  double total = 0.0;
  dlogits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    dlogits[i] = std::exp(logits[i] - hi);
    total += dlogits[i];
  }
  for (double& v : dlogits) v /= total;
  const double loss = -std::log(std::max(dlogits[label], 1e-300));
  dlogits[label] -= 1.0;
  return loss;
}

inline void feed_forward_backward(const FeedForwardCache& cache, const std::vector<double>& dout,
                                  const Matrix& w1, const Matrix& w2, Matrix& dw1, Matrix& db1,
                                  Matrix& dw2, Matrix& db2, std::vector<double>& dinput) {
  const std::size_t d = w1.rows();
  const std::size_t hidden_dim = w1.cols();
  const std::size_t out_dim = w2.cols();
  std::vector<double> dhidden(hidden_dim, 0.0);
  for (std::size_t j = 0; j < out_dim; ++j) {
    db2(0, j) += dout[j];
    for (std::size_t i = 0; i < hidden_dim; ++i) {
      dw2(i, j) += cache.hidden[i] * dout[j];
      dhidden[i] += w2(i, j) * dout[j];
    }
  }
  for (std::size_t i = 0; i < hidden_dim; ++i) {
    dhidden[i] *= 1.0 - cache.hidden[i] * cache.hidden[i];  // through tanh
  }
  dinput.assign(d, 0.0);
  for (std::size_t j = 0; j < hidden_dim; ++j) {
    db1(0, j) += dhidden[j];
    for (std::size_t i = 0; i < d; ++i) {
      dw1(i, j) += cache.input[i] * dhidden[j];
      dinput[i] += w1(i, j) * dhidden[j];
    }
  }
}

}  // namespace detail

/// Forward-only losses, shared by evaluation and finite-difference checks.
inline double loss_unit(const Features& f, std::size_t label, const GaModel& m) {
  const std::vector<double> logits = pool_logits(forward_stack(f, m), m);
  std::vector<double> scratch;
  return detail::softmax_cross_entropy(logits, label, scratch);
}

inline double loss_token(const Features& f, const std::vector<int>& labels, const GaModel& m) {
  const Matrix logits = token_logits(forward_stack(f, m), m);
  double loss = 0.0;
  std::vector<double> row(logits.cols()), scratch;
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    for (std::size_t j = 0; j < logits.cols(); ++j) row[j] = logits(t, j);
    loss += detail::softmax_cross_entropy(row, static_cast<std::size_t>(labels[t]), scratch);
  }
  return loss / static_cast<double>(logits.rows());
}

inline double loss_pair(const Features& fa, const Features& fb, int label, const GaModel& m) {
  const Similarity sim = pair_similarity(forward_stack(fa, m), forward_stack(fb, m), m);
  if (sim.degenerate) return 0.0;
  if (label > 0) return 1.0 - sim.value;
  return std::max(0.0, sim.value);
}

/// Backward through one attention layer. Consumes d(output), accumulates
/// parameter gradients, returns d(input).
inline Matrix ga_backward(const LayerCache& lc, const DistanceMatrix& dist, const GaModel& m,
                          std::size_t layer_index, const Matrix& d_output, ParamSet& grads) {
  const ModelConfig& cfg = m.cfg;
  const LayerParams& lp = m.params.layers.at(layer_index);
  LayerParams& gp = grads.layers.at(layer_index);
  const std::size_t n = lc.input.rows();
  const std::size_t dh = cfg.head_dim();
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix d_attn = d_output;
  Matrix d_input_residual(n, cfg.d_model);
  if (cfg.residual_norm) {
    // Through y = gamma * (x - mean)/std + beta, per token row.
    Matrix d_pre(n, cfg.d_model);
    const std::size_t d = cfg.d_model;
    for (std::size_t t = 0; t < n; ++t) {
      double mean = 0.0;
      for (std::size_t j = 0; j < d; ++j) mean += lc.pre_norm(t, j);
      mean /= static_cast<double>(d);
      const double inv = lc.inv_std[t];
      double sum_dg = 0.0, sum_dgc = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double centered = lc.pre_norm(t, j) - mean;
        const double dg = d_output(t, j) * lp.ln_gamma(0, j);
        gp.ln_gamma(0, j) += d_output(t, j) * centered * inv;
        gp.ln_beta(0, j) += d_output(t, j);
        sum_dg += dg;
        sum_dgc += dg * centered;
      }
      for (std::size_t j = 0; j < d; ++j) {
        const double centered = lc.pre_norm(t, j) - mean;
        const double dg = d_output(t, j) * lp.ln_gamma(0, j);
        d_pre(t, j) = inv * (dg - sum_dg / static_cast<double>(d) -
                             centered * inv * inv * sum_dgc / static_cast<double>(d));
      }
    }
    d_attn = d_pre;
    d_input_residual = d_pre;  // the residual branch
  }

  // attn_out = concat * w_o
  Matrix d_concat = d_attn * lp.w_o.transposed();
  gp.w_o += lc.concat.transposed() * d_attn;

  Matrix d_input(n, cfg.d_model);
  if (cfg.residual_norm) d_input = d_input_residual;

  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const HeadCache& hc = lc.heads[h];
    Matrix d_head(n, dh);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t j = 0; j < dh; ++j) d_head(t, j) = d_concat(t, h * dh + j);
    }

    // out(t,:) = sum_s mixed(s,t) v(s,:)
    Matrix d_mixed(n, n);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t t = 0; t < n; ++t) {
        double acc = 0.0;
        for (std::size_t j = 0; j < dh; ++j) acc += hc.v(s, j) * d_head(t, j);
        d_mixed(s, t) = acc;
      }
    }
    Matrix d_v(n, dh);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t j = 0; j < dh; ++j) {
        double acc = 0.0;
        for (std::size_t t = 0; t < n; ++t) acc += hc.mixed(s, t) * d_head(t, j);
        d_v(s, j) = acc;
      }
    }

    // Bias table gradients: one scalar per distance bucket.
    const bool positive_half = h < cfg.heads / 2;
    Matrix& bias_grad = positive_half ? grads.bias_pos : grads.bias_neg;
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t t = 0; t < n; ++t) {
        const DistEntry& entry = dist.at(s, t);
        const std::size_t bucket = cfg.bucket_of(positive_half ? entry.pos : entry.neg);
        bias_grad(0, bucket) += d_mixed(s, t);
      }
    }

    // Column softmax backward.
    Matrix d_scores(n, n);
    for (std::size_t t = 0; t < n; ++t) {
      double inner = 0.0;
      for (std::size_t s = 0; s < n; ++s) inner += hc.probs(s, t) * d_mixed(s, t);
      for (std::size_t s = 0; s < n; ++s) {
        d_scores(s, t) = hc.probs(s, t) * (d_mixed(s, t) - inner);
      }
    }

    // scores(s,t) = dot(k_s, q_t) * inv_scale
    Matrix d_k(n, dh), d_q(n, dh);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t j = 0; j < dh; ++j) {
        double acc = 0.0;
        for (std::size_t t = 0; t < n; ++t) acc += d_scores(s, t) * hc.q(t, j);
        d_k(s, j) = acc * inv_scale;
      }
    }
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t j = 0; j < dh; ++j) {
        double acc = 0.0;
        for (std::size_t s = 0; s < n; ++s) acc += d_scores(s, t) * hc.k(s, j);
        d_q(t, j) = acc * inv_scale;
      }
    }

    gp.w_q[h] += lc.input.transposed() * d_q;
    gp.w_k[h] += lc.input.transposed() * d_k;
    gp.w_v[h] += lc.input.transposed() * d_v;
    d_input += d_q * lp.w_q[h].transposed();
    d_input += d_k * lp.w_k[h].transposed();
    d_input += d_v * lp.w_v[h].transposed();
  }
  return d_input;
}

/// Backward from the final activation to the embedding tables.
inline void stack_backward(const ForwardCache& fc, const GaModel& m, Matrix d_final,
                           ParamSet& grads) {
  for (std::size_t l = m.cfg.layers; l-- > 0;) {
    d_final = ga_backward(fc.layers[l], fc.features.dist, m, l, d_final, grads);
  }
  const Features& f = fc.features;
  for (std::size_t t = 0; t < f.token_count; ++t) {
    for (std::size_t j = 0; j < m.cfg.d_model; ++j) {
      const double g = d_final(t, j);
      grads.emb_token(f.row_token[t], j) += g;
      grads.emb_pos(f.row_pos[t], j) += g;
      grads.emb_ind(f.row_ind[t], j) += g;
      grads.emb_outd(f.row_outd[t], j) += g;
    }
  }
}

/// Pooled-head cross-entropy for one unit; accumulates gradients, returns loss.
inline double backward_unit(const Features& f, std::size_t label, const GaModel& m,
                            ParamSet& grads) {
  ForwardCache fc;
  forward_stack(f, m, &fc);
  detail::FeedForwardCache head_cache;
  const std::vector<double> logits = pool_logits(fc.final_activation, m, &head_cache);
  std::vector<double> dlogits;
  const double loss = detail::softmax_cross_entropy(logits, label, dlogits);

  std::vector<double> d_pooled;
  detail::feed_forward_backward(head_cache, dlogits, m.params.pool_w1, m.params.pool_w2,
                                grads.pool_w1, grads.pool_b1, grads.pool_w2, grads.pool_b2,
                                d_pooled);
  const std::size_t n = fc.final_activation.rows();
  Matrix d_final(n, m.cfg.d_model);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < m.cfg.d_model; ++j) {
      d_final(t, j) = d_pooled[j] / static_cast<double>(n);
    }
  }
  stack_backward(fc, m, std::move(d_final), grads);
  return loss;
}

/// Token-head cross-entropy averaged over tokens.
inline double backward_token(const Features& f, const std::vector<int>& labels, const GaModel& m,
                             ParamSet& grads) {
  ForwardCache fc;
  forward_stack(f, m, &fc);
  const Matrix logits = token_logits(fc.final_activation, m);
  const std::size_t n = logits.rows();
  if (labels.size() != n) throw std::invalid_argument("token label count mismatch");

  Matrix d_logits(n, m.cfg.label_count);
  double loss = 0.0;
  std::vector<double> row(m.cfg.label_count), drow;
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < m.cfg.label_count; ++j) row[j] = logits(t, j);
    loss += detail::softmax_cross_entropy(row, static_cast<std::size_t>(labels[t]), drow);
    for (std::size_t j = 0; j < m.cfg.label_count; ++j) {
      d_logits(t, j) = drow[j] / static_cast<double>(n);
    }
  }
  loss /= static_cast<double>(n);

  grads.token_w += fc.final_activation.transposed() * d_logits;
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < m.cfg.label_count; ++j) grads.token_b(0, j) += d_logits(t, j);
  }
  Matrix d_final = d_logits * m.params.token_w.transposed();
  stack_backward(fc, m, std::move(d_final), grads);
  return loss;
}

/// Cosine embedding loss for a pair: 1 - cos for positives (label +1),
/// max(0, cos) for negatives (label -1).
inline double backward_pair(const Features& fa, const Features& fb, int label, const GaModel& m,
                            ParamSet& grads) {
  ForwardCache fca, fcb;
  forward_stack(fa, m, &fca);
  forward_stack(fb, m, &fcb);
  detail::FeedForwardCache ha, hb;
  const std::vector<double> pa = pair_projection(fca.final_activation, m, &ha);
  const std::vector<double> pb = pair_projection(fcb.final_activation, m, &hb);

  double na2 = 0.0, nb2 = 0.0, dot = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    na2 += pa[i] * pa[i];
    nb2 += pb[i] * pb[i];
    dot += pa[i] * pb[i];
  }
  if (na2 < 1e-24 || nb2 < 1e-24) return 0.0;  // degenerate pair contributes nothing
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  const double cosine = dot / (na * nb);

  double loss, dcos;
  if (label > 0) {
    loss = 1.0 - cosine;
    dcos = -1.0;
  } else if (cosine > 0.0) {
    loss = cosine;
    dcos = 1.0;
  } else {
    return 0.0;
  }

  std::vector<double> dpa(pa.size()), dpb(pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    dpa[i] = dcos * (pb[i] / (na * nb) - cosine * pa[i] / na2);
    dpb[i] = dcos * (pa[i] / (na * nb) - cosine * pb[i] / nb2);
  }

  auto backprop_side = [&](const ForwardCache& fc, const detail::FeedForwardCache& head_cache,
                           const std::vector<double>& dproj) {
    std::vector<double> d_pooled;
    detail::feed_forward_backward(head_cache, dproj, m.params.pair_w1, m.params.pair_w2,
                                  grads.pair_w1, grads.pair_b1, grads.pair_w2, grads.pair_b2,
                                  d_pooled);
    const std::size_t n = fc.final_activation.rows();
    Matrix d_final(n, m.cfg.d_model);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t j = 0; j < m.cfg.d_model; ++j) {
        d_final(t, j) = d_pooled[j] / static_cast<double>(n);
      }
    }
    stack_backward(fc, m, std::move(d_final), grads);
  };
  backprop_side(fca, ha, dpa);
  backprop_side(fcb, hb, dpb);
  return loss;
}

}  // namespace codesym
