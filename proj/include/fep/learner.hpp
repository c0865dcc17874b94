#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fep/common.hpp"
#include "fep/features.hpp"
#include "fep/rng.hpp"

namespace fep {

struct LearnerConfig {
  int max_depth = 4;
  int n_rounds = 100;
  double learning_rate = 0.1;
  double lambda = 1.0;
  double min_child_weight = 1.0;
  double subsample = 1.0;
  std::uint64_t seed = 0;

  bool operator==(const LearnerConfig&) const = default;

  void validate() const {
    if (max_depth < 1) throw ConfigError("learner: max_depth must be at least 1");
    if (n_rounds < 0) throw ConfigError("learner: n_rounds must be non-negative");
    if (!(learning_rate > 0 && learning_rate <= 1)) throw ConfigError("learner: learning_rate must be in (0,1]");
    if (!(lambda >= 0)) throw ConfigError("learner: lambda must be non-negative");
    if (!(min_child_weight >= 0)) throw ConfigError("learner: min_child_weight must be non-negative");
    if (!(subsample > 0 && subsample <= 1)) throw ConfigError("learner: subsample must be in (0,1]");
  }
};

inline constexpr double kProbabilityClamp = 1e-15;
inline constexpr double kPriorClamp = 5.0;

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct LossTerms {
  double loss;
  double gradient;  // with respect to the log-odds
  double hessian;
};

// Logistic loss of probability `p` against label `y` (0 or 1).
inline LossTerms logistic_loss_and_gradient(double p, int y) {
  p = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
  const double loss = -(y * std::log(p) + (1 - y) * std::log(1.0 - p));
  return {loss, p - y, p * (1.0 - p)};
}

struct Prediction {
  StudentId student_id;
  double p_success = 0.5;
  Outcome predicted_class = Outcome::Success;
  double confidence = 0.5;

  bool operator==(const Prediction&) const = default;

  // p = 0.5 resolves to Success.
  static Prediction from_probability(StudentId id, double p) {
    return {std::move(id), p, p >= 0.5 ? Outcome::Success : Outcome::Failure, std::max(p, 1.0 - p)};
  }
};

// Binary classifier contract used by the pipeline.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::vector<double> predict_proba(const FeatureMatrix& features) const = 0;
};

using Trainer = std::function<std::unique_ptr<Classifier>(const FeatureMatrix&, const LabelVector&)>;

inline std::vector<Prediction> predict(const Classifier& model, const FeatureMatrix& features) {
  auto p = model.predict_proba(features);
  std::vector<Prediction> out;
  out.reserve(p.size());
  for (std::size_t r = 0; r < p.size(); ++r) out.push_back(Prediction::from_probability(features.student_ids[r], p[r]));
  return out;
}

// Flat binary tree; node 0 is the root.
struct Tree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    bool missing_left = true;
    int left = -1;
    int right = -1;
    double value = 0.0;

    bool is_leaf() const { return feature < 0; }
    bool operator==(const Node&) const = default;
  };

  std::vector<Node> nodes;

  // Structural: two trees are equal when they route and score every row the
  // same way, whatever their node storage order.
  bool operator==(const Tree& o) const {
    if (nodes.size() != o.nodes.size()) return false;
    if (nodes.empty()) return true;
    return same_subtree(0, o, 0);
  }

  // x < threshold goes left; a missing value follows the default direction.
  double evaluate(std::span<const double> row) const {
    int i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& n = nodes[i];
      double x = row[n.feature];
      bool left = is_missing(x) ? n.missing_left : x < n.threshold;
      i = left ? n.left : n.right;
    }
    return nodes[i].value;
  }

  bool same_subtree(int i, const Tree& o, int j) const {
    const auto& a = nodes[i];
    const auto& b = o.nodes[j];
    if (a.is_leaf() || b.is_leaf()) return a.is_leaf() && b.is_leaf() && a.value == b.value;
    return a.feature == b.feature && a.threshold == b.threshold && a.missing_left == b.missing_left &&
           same_subtree(a.left, o, b.left) && same_subtree(a.right, o, b.right);
  }

  int depth(int i = 0) const {
    if (nodes[i].is_leaf()) return 0;
    return 1 + std::max(depth(nodes[i].left), depth(nodes[i].right));
  }
};

class BoostedEnsemble : public Classifier {
 public:
  std::vector<Tree> trees;
  double learning_rate = 0.1;
  double base_score = 0.0;
  std::vector<std::string> feature_names;
  LearnerConfig config;

  bool operator==(const BoostedEnsemble& o) const {
    return trees == o.trees && learning_rate == o.learning_rate && base_score == o.base_score &&
           feature_names == o.feature_names && config == o.config;
  }

  // Log-odds using the first `n_trees` trees.
  double margin(std::span<const double> row, std::size_t n_trees) const {
    double sum = 0.0;
    for (std::size_t t = 0; t < std::min(n_trees, trees.size()); ++t) sum += trees[t].evaluate(row);
    return base_score + learning_rate * sum;
  }

  double margin(std::span<const double> row) const { return margin(row, trees.size()); }

  std::vector<double> predict_proba(const FeatureMatrix& features) const override {
    const auto order = column_order(features);
    std::vector<double> out;
    out.reserve(features.rows());
    std::vector<double> row(order.size());
    for (std::size_t r = 0; r < features.rows(); ++r) {
      auto src = features.row(r);
      for (std::size_t c = 0; c < order.size(); ++c) row[c] = src[order[c]];
      out.push_back(sigmoid(margin(row)));
    }
    return out;
  }

 private:
  // Maps model columns to the matrix's columns by name.
  std::vector<std::size_t> column_order(const FeatureMatrix& features) const {
    std::vector<std::size_t> order;
    if (features.feature_names == feature_names) {
      order.resize(feature_names.size());
      std::iota(order.begin(), order.end(), 0);
      return order;
    }
    std::set<std::string> model(feature_names.begin(), feature_names.end());
    std::set<std::string> given(features.feature_names.begin(), features.feature_names.end());
    if (model != given) {
      std::vector<std::string> diff;
      std::set_symmetric_difference(model.begin(), model.end(), given.begin(), given.end(), std::back_inserter(diff));
      throw InvariantError("feature vocabulary mismatch: " + join(diff, ", "));
    }
    for (const auto& name : feature_names) order.push_back(*features.column(name));
    return order;
  }
};

namespace detail {

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
  bool missing_left = true;
};

inline constexpr double kMinSplitGain = 1e-10;

inline double leaf_score(double g, double h, double lambda) { return g * g / (h + lambda); }

// Grows one regression tree on gradients `g` and hessians `h` with exact
// greedy level-wise splitting over pre-sorted columns. Rows with
// `in_sample[r] == 0` are ignored.
inline Tree grow_tree(const FeatureMatrix& X, const std::vector<std::vector<std::uint32_t>>& sorted,
                      const std::vector<std::vector<std::uint32_t>>& missing, const std::vector<double>& g,
                      const std::vector<double>& h, const std::vector<std::uint8_t>& in_sample,
                      const LearnerConfig& cfg) {
  const std::size_t n = X.rows();
  const std::size_t m = X.cols();
  Tree tree;
  tree.nodes.emplace_back();
  std::vector<int> node_of(n, -1);
  std::vector<double> G(1, 0.0), H(1, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    if (!in_sample[r]) continue;
    node_of[r] = 0;
    G[0] += g[r];
    H[0] += h[r];
  }

  std::vector<int> frontier{0};
  for (int depth = 0; depth < cfg.max_depth && !frontier.empty(); ++depth) {
    const std::size_t k = frontier.size();
    std::vector<int> slot(tree.nodes.size(), -1);
    for (std::size_t s = 0; s < k; ++s) slot[frontier[s]] = static_cast<int>(s);
    std::vector<SplitCandidate> best(k);

    std::vector<double> gm(k), hm(k), gl(k), hl(k), last(k);
    std::vector<std::uint8_t> seen(k);
    for (std::size_t f = 0; f < m; ++f) {
      std::fill(gm.begin(), gm.end(), 0.0);
      std::fill(hm.begin(), hm.end(), 0.0);
      std::fill(gl.begin(), gl.end(), 0.0);
      std::fill(hl.begin(), hl.end(), 0.0);
      std::fill(seen.begin(), seen.end(), 0);
      for (auto r : missing[f]) {
        int node = node_of[r];
        if (node < 0 || slot[node] < 0) continue;
        gm[slot[node]] += g[r];
        hm[slot[node]] += h[r];
      }
      auto consider = [&](std::size_t s, double threshold) {
        const int node = frontier[s];
        const double g_present = G[node] - gm[s], h_present = H[node] - hm[s];
        const double gr = g_present - gl[s], hr = h_present - hl[s];
        const double parent = leaf_score(G[node], H[node], cfg.lambda);
        auto evaluate = [&](double GL, double HL, double GR, double HR, bool missing_left) {
          if (HL < cfg.min_child_weight || HR < cfg.min_child_weight) return;
          double gain = 0.5 * (leaf_score(GL, HL, cfg.lambda) + leaf_score(GR, HR, cfg.lambda) - parent);
          if (gain > best[s].gain) best[s] = {gain, static_cast<int>(f), threshold, missing_left};
        };
        if (hm[s] == 0.0 && gm[s] == 0.0) {
          // No missing rows here: default toward the heavier child.
          evaluate(gl[s], hl[s], gr, hr, hl[s] >= hr);
        } else {
          evaluate(gl[s], hl[s], gr + gm[s], hr + hm[s], false);
          evaluate(gl[s] + gm[s], hl[s] + hm[s], gr, hr, true);
        }
      };
      for (auto r : sorted[f]) {
        int node = node_of[r];
        if (node < 0 || slot[node] < 0) continue;
        const std::size_t s = static_cast<std::size_t>(slot[node]);
        const double x = X.at(r, f);
        if (seen[s] && x > last[s]) {
          double threshold = last[s] + (x - last[s]) / 2.0;
          if (!(threshold > last[s])) threshold = x;
          consider(s, threshold);
        }
        gl[s] += g[r];
        hl[s] += h[r];
        last[s] = x;
        seen[s] = 1;
      }
    }

    std::vector<int> next;
    std::vector<int> split_slot(tree.nodes.size(), -1);
    for (std::size_t s = 0; s < k; ++s) {
      if (best[s].feature < 0 || best[s].gain <= kMinSplitGain) continue;
      const int node = frontier[s];
      const int left = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      auto& parent = tree.nodes[node];
      parent.feature = best[s].feature;
      parent.threshold = best[s].threshold;
      parent.missing_left = best[s].missing_left;
      parent.left = left;
      parent.right = left + 1;
      G.resize(tree.nodes.size(), 0.0);
      H.resize(tree.nodes.size(), 0.0);
      next.push_back(left);
      next.push_back(left + 1);
      split_slot[node] = static_cast<int>(s);
    }
    for (std::size_t r = 0; r < n; ++r) {
      int node = node_of[r];
      if (node < 0 || node >= static_cast<int>(split_slot.size()) || split_slot[node] < 0) continue;
      const auto& p = tree.nodes[node];
      double x = X.at(r, static_cast<std::size_t>(p.feature));
      bool left = is_missing(x) ? p.missing_left : x < p.threshold;
      int child = left ? p.left : p.right;
      node_of[r] = child;
      G[child] += g[r];
      H[child] += h[r];
    }
    frontier = std::move(next);
  }

  for (std::size_t i = 0; i < tree.nodes.size(); ++i)
    if (tree.nodes[i].is_leaf()) tree.nodes[i].value = -G[i] / (H[i] + cfg.lambda);
  return tree;
}

}  // namespace detail

// Gradient boosting with logistic loss and second-order leaf weights.
// Single-class labels give a zero-tree ensemble at the clamped prior.
inline BoostedEnsemble train(const FeatureMatrix& X, const LabelVector& y, const LearnerConfig& cfg) {
  cfg.validate();
  if (X.rows() != y.size()) throw InvariantError("train: feature rows and labels differ in count");
  if (X.student_ids != y.student_ids) throw InvariantError("train: feature and label student order differs");
  if (X.rows() == 0) throw InvariantError("train: no training rows");

  BoostedEnsemble model;
  model.learning_rate = cfg.learning_rate;
  model.feature_names = X.feature_names;
  model.config = cfg;

  const std::size_t n = X.rows();
  std::vector<double> target(n);
  double positives = 0;
  for (std::size_t r = 0; r < n; ++r) {
    target[r] = y.labels[r] == Outcome::Success ? 1.0 : 0.0;
    positives += target[r];
  }
  const double rate = positives / static_cast<double>(n);
  if (rate <= 0.0 || rate >= 1.0) {
    model.base_score = rate >= 1.0 ? kPriorClamp : -kPriorClamp;
    return model;
  }
  model.base_score = std::clamp(std::log(rate / (1.0 - rate)), -kPriorClamp, kPriorClamp);

  std::vector<std::vector<std::uint32_t>> sorted(X.cols()), missing(X.cols());
  for (std::size_t f = 0; f < X.cols(); ++f) {
    for (std::uint32_t r = 0; r < n; ++r) (is_missing(X.at(r, f)) ? missing[f] : sorted[f]).push_back(r);
    std::stable_sort(sorted[f].begin(), sorted[f].end(),
                     [&](std::uint32_t a, std::uint32_t b) { return X.at(a, f) < X.at(b, f); });
  }

  std::vector<double> margin(n, model.base_score), g(n), h(n);
  std::vector<std::uint8_t> in_sample(n, 1);
  for (int round = 0; round < cfg.n_rounds; ++round) {
    for (std::size_t r = 0; r < n; ++r) {
      auto terms = logistic_loss_and_gradient(sigmoid(margin[r]), static_cast<int>(target[r]));
      g[r] = terms.gradient;
      h[r] = terms.hessian;
      if (cfg.subsample < 1.0) in_sample[r] = counter_uniform(cfg.seed, static_cast<std::uint64_t>(round), r) < cfg.subsample;
    }
    Tree tree = detail::grow_tree(X, sorted, missing, g, h, in_sample, cfg);
    for (std::size_t r = 0; r < n; ++r) margin[r] += cfg.learning_rate * tree.evaluate(X.row(r));
    model.trees.push_back(std::move(tree));
  }
  return model;
}

inline Trainer boosted_trainer(LearnerConfig cfg) {
  return [cfg](const FeatureMatrix& X, const LabelVector& y) -> std::unique_ptr<Classifier> {
    return std::make_unique<BoostedEnsemble>(train(X, y, cfg));
  };
}

// ---------------------------------------------------------------------------
// Model serialization: JSON text, trees as nested nodes.

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline nlohmann::json node_to_json(const Tree& t, int i) {
  const auto& n = t.nodes[i];
  if (n.is_leaf()) return {{"leaf", n.value}};
  return {{"feature", n.feature},
          {"threshold", n.threshold},
          {"missing_left", n.missing_left},
          {"left", node_to_json(t, n.left)},
          {"right", node_to_json(t, n.right)}};
}

inline int node_from_json(const nlohmann::json& j, Tree& t, std::size_t n_features) {
  const int index = static_cast<int>(t.nodes.size());
  t.nodes.emplace_back();
  if (j.contains("leaf")) {
    t.nodes[index].value = j.at("leaf").get<double>();
    return index;
  }
  Tree::Node node;
  node.feature = j.at("feature").get<int>();
  if (node.feature < 0 || static_cast<std::size_t>(node.feature) >= n_features)
    throw DataError("model: split feature index out of range");
  node.threshold = j.at("threshold").get<double>();
  node.missing_left = j.at("missing_left").get<bool>();
  node.left = node_from_json(j.at("left"), t, n_features);
  node.right = node_from_json(j.at("right"), t, n_features);
  t.nodes[index] = node;
  return index;
}

}  // namespace detail

inline std::string save_model(const BoostedEnsemble& model) {
  nlohmann::json j;
  j["format"] = "fep-boosted-ensemble";
  j["version"] = kModelFormatVersion;
  j["learning_rate"] = model.learning_rate;
  j["base_score"] = model.base_score;
  j["feature_names"] = model.feature_names;
  j["config"] = {{"max_depth", model.config.max_depth},
                 {"n_rounds", model.config.n_rounds},
                 {"learning_rate", model.config.learning_rate},
                 {"lambda", model.config.lambda},
                 {"min_child_weight", model.config.min_child_weight},
                 {"subsample", model.config.subsample},
                 {"seed", model.config.seed}};
  auto& trees = j["trees"] = nlohmann::json::array();
  for (const auto& t : model.trees) trees.push_back(detail::node_to_json(t, 0));
  return j.dump(1);
}

inline BoostedEnsemble load_model(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    if (j.at("format") != "fep-boosted-ensemble") throw DataError("model: unknown format");
    if (j.at("version").get<int>() != kModelFormatVersion) throw DataError("model: unsupported version");
    BoostedEnsemble m;
    m.learning_rate = j.at("learning_rate").get<double>();
    m.base_score = j.at("base_score").get<double>();
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    const auto& c = j.at("config");
    m.config.max_depth = c.at("max_depth").get<int>();
    m.config.n_rounds = c.at("n_rounds").get<int>();
    m.config.learning_rate = c.at("learning_rate").get<double>();
    m.config.lambda = c.at("lambda").get<double>();
    m.config.min_child_weight = c.at("min_child_weight").get<double>();
    m.config.subsample = c.at("subsample").get<double>();
    m.config.seed = c.at("seed").get<std::uint64_t>();
    for (const auto& t : j.at("trees")) {
      Tree tree;
      detail::node_from_json(t, tree, m.feature_names.size());
      m.trees.push_back(std::move(tree));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model: ") + e.what());
  }
}

}  // namespace fep
