#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "codesym/model.hpp"
#include "codesym/symmetry.hpp"

namespace codesym {

struct UnitSample {
  CodeUnit unit;
  int label = 0;
};

struct TokenSample {
  CodeUnit unit;
  std::vector<int> labels;  // one per token
};

struct PairSample {
  CodeUnit a, b;
  int label = 1;  // +1 similar, -1 dissimilar
};

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.1;
  std::uint64_t shuffle_seed = 7;
  double init_scale = 0.08;
};

struct TrainTrace {
  std::vector<double> epoch_loss;
};

namespace detail {

/// Deterministic minibatch SGD: fixed shuffle stream, fixed batch walk,
/// single thread. The same seed, corpus, and options reproduce the model
/// bit for bit.
template <typename Item, typename BackwardFn>
GaModel train_loop(const std::vector<Item>& items, const ModelConfig& cfg,
                   const TrainOptions& opts, BackwardFn&& backward, TrainTrace* trace) {
  if (items.empty()) throw std::invalid_argument("training corpus is empty");
  GaModel model = GaModel::init(cfg, opts.init_scale);
  Rng shuffle_rng(opts.shuffle_seed);
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      const std::size_t end = std::min(order.size(), start + opts.batch_size);
      ParamSet grads = ParamSet::shaped(cfg);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        batch_loss += backward(items[order[i]], model, grads);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      model.params.add_scaled(grads, -opts.learning_rate * scale);
      epoch_loss += batch_loss;
    }
    if (trace) trace->epoch_loss.push_back(epoch_loss / static_cast<double>(items.size()));
  }
  return model;
}

}  // namespace detail

inline GaModel train_unit(const std::vector<UnitSample>& corpus, const ModelConfig& cfg,
                          const TrainOptions& opts, TrainTrace* trace = nullptr) {
  struct Item {
    Features features;
    std::size_t label;
  };
  std::vector<Item> items;
  items.reserve(corpus.size());
  for (const UnitSample& s : corpus) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= cfg.label_count)
      throw std::invalid_argument("unit label out of range");
    items.push_back({make_features(s.unit, cfg), static_cast<std::size_t>(s.label)});
  }
  return detail::train_loop(
      items, cfg, opts,
      [](const Item& it, const GaModel& m, ParamSet& g) {
        return backward_unit(it.features, it.label, m, g);
      },
      trace);
}

inline GaModel train_token(const std::vector<TokenSample>& corpus, const ModelConfig& cfg,
                           const TrainOptions& opts, TrainTrace* trace = nullptr) {
  struct Item {
    Features features;
    std::vector<int> labels;
  };
  std::vector<Item> items;
  items.reserve(corpus.size());
  for (const TokenSample& s : corpus) {
    for (int l : s.labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= cfg.label_count)
        throw std::invalid_argument("token label out of range");
    }
    items.push_back({make_features(s.unit, cfg), s.labels});
  }
  return detail::train_loop(
      items, cfg, opts,
      [](const Item& it, const GaModel& m, ParamSet& g) {
        return backward_token(it.features, it.labels, m, g);
      },
      trace);
}

inline GaModel train_pair(const std::vector<PairSample>& corpus, const ModelConfig& cfg,
                          const TrainOptions& opts, TrainTrace* trace = nullptr) {
  struct Item {
    Features a, b;
    int label;
  };
  std::vector<Item> items;
  items.reserve(corpus.size());
  for (const PairSample& s : corpus) {
    if (s.label != 1 && s.label != -1)
      throw std::invalid_argument("pair label must be +1 or -1");
    items.push_back({make_features(s.a, cfg), make_features(s.b, cfg), s.label});
  }
  return detail::train_loop(
      items, cfg, opts,
      [](const Item& it, const GaModel& m, ParamSet& g) {
        return backward_pair(it.a, it.b, it.label, m, g);
      },
      trace);
}

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

struct F1Result {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
};

/// Binary F1 with class 1 as the positive class.
inline F1Result binary_f1(const std::vector<int>& predictions, const std::vector<int>& gold) {
  if (predictions.size() != gold.size())
    throw std::invalid_argument("prediction and label counts differ");
  F1Result r;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == 1 && gold[i] == 1) ++r.tp;
    if (predictions[i] == 1 && gold[i] == 0) ++r.fp;
    if (predictions[i] == 0 && gold[i] == 1) ++r.fn;
  }
  r.precision = r.tp + r.fp == 0 ? 0.0 : static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
  r.recall = r.tp + r.fn == 0 ? 0.0 : static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn);
  r.f1 = r.precision + r.recall == 0.0 ? 0.0
                                       : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

/// Exact ROC AUC as the Mann-Whitney rank statistic, ties counted half.
inline double exact_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("score and label counts differ");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double positives = 0.0, negatives = 0.0;
  for (int l : labels) (l == 1 ? positives : negatives) += 1.0;
  if (positives == 0.0 || negatives == 0.0)
    throw std::invalid_argument("AUC needs both classes present");

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] == 1) rank_sum_pos += avg_rank;
    }
    i = j;
  }
  return (rank_sum_pos - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

// ---------------------------------------------------------------------------
// Evaluation with optional on-the-fly reordering. Features are rebuilt from
// the permuted unit, exactly as a fresh input would be.
// ---------------------------------------------------------------------------

inline CodeUnit permuted_copy(const CodeUnit& unit, int percent, std::uint64_t seed) {
  if (percent == 0) return unit;
  const Pdg g = build_pdg(unit);
  return apply(sample_reordering(g, percent, seed), unit);
}

inline std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline std::vector<int> unit_predictions(const GaModel& model, const std::vector<UnitSample>& test,
                                         int percent = 0, std::uint64_t seed = 0) {
  std::vector<int> preds;
  preds.reserve(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const CodeUnit unit = permuted_copy(test[i].unit, percent, seed + i);
    const Features f = make_features(unit, model.cfg);
    const Matrix e = forward_stack(f, model);
    preds.push_back(static_cast<int>(argmax(pool_logits(e, model))));
  }
  return preds;
}

inline F1Result evaluate_unit(const GaModel& model, const std::vector<UnitSample>& test,
                              int percent = 0, std::uint64_t seed = 0) {
  std::vector<int> gold;
  gold.reserve(test.size());
  for (const UnitSample& s : test) gold.push_back(s.label);
  return binary_f1(unit_predictions(model, test, percent, seed), gold);
}

inline F1Result evaluate_token(const GaModel& model, const std::vector<TokenSample>& test,
                               int percent = 0, std::uint64_t seed = 0) {
  std::vector<int> preds, gold;
  for (std::size_t i = 0; i < test.size(); ++i) {
    CodeUnit unit = test[i].unit;
    std::vector<int> labels = test[i].labels;
    if (percent != 0) {
      const Pdg g = build_pdg(unit);
      const BlockPermutation pi = sample_reordering(g, percent, seed + i).rebind(unit);
      std::vector<int> moved(labels.size());
      for (std::size_t t = 0; t < labels.size(); ++t) moved[pi.token_map()[t]] = labels[t];
      labels = std::move(moved);
      unit = apply(pi, unit);
    }
    const Features f = make_features(unit, model.cfg);
    const Matrix logits = token_logits(forward_stack(f, model), model);
    for (std::size_t t = 0; t < logits.rows(); ++t) {
      double best = logits(t, 0);
      std::size_t best_j = 0;
      for (std::size_t j = 1; j < logits.cols(); ++j) {
        if (logits(t, j) > best) {
          best = logits(t, j);
          best_j = j;
        }
      }
      preds.push_back(static_cast<int>(best_j));
      gold.push_back(labels[t]);
    }
  }
  return binary_f1(preds, gold);
}

struct PairEvaluation {
  double auc = 0.0;
  std::vector<double> scores;
};

inline PairEvaluation evaluate_pair(const GaModel& model, const std::vector<PairSample>& test,
                                    int percent = 0, std::uint64_t seed = 0) {
  PairEvaluation out;
  std::vector<int> labels01;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const CodeUnit a = permuted_copy(test[i].a, percent, seed + 2 * i);
    const CodeUnit b = permuted_copy(test[i].b, percent, seed + 2 * i + 1);
    const Matrix ea = forward_stack(make_features(a, model.cfg), model);
    const Matrix eb = forward_stack(make_features(b, model.cfg), model);
    out.scores.push_back(pair_similarity(ea, eb, model).value);
    labels01.push_back(test[i].label == 1 ? 1 : 0);
  }
  out.auc = exact_auc(out.scores, labels01);
  return out;
}

}  // namespace codesym
