#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tcr/error.hpp"
#include "tcr/rng.hpp"

namespace tcr::gbdt {

struct Options {
  int rounds = 200;
  int max_depth = 3;
  double learning_rate = 0.1;
  int min_leaf = 1;
  /// Row fraction drawn (without replacement) per tree; 1 uses every row.
  double subsample = 1.0;
};

/// Depth-limited regression tree; node 0 is the root.
struct Tree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    double value = 0.0;
  };
  std::vector<Node> nodes;

  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    int k = 0;
    while (nodes[static_cast<std::size_t>(k)].feature >= 0) {
      const Node& n = nodes[static_cast<std::size_t>(k)];
      k = x(n.feature) <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(k)].value;
  }
};

namespace detail {

struct Builder {
  const Eigen::MatrixXd& x;
  const std::vector<std::vector<int>>& order;  // per feature, rows sorted by value
  const Eigen::VectorXd& target;
  int max_depth;
  int min_leaf;
  Tree tree;
  std::vector<int> node_of;  // row -> current node, -1 if not sampled

  int leaf(double value) {
    tree.nodes.push_back({});
    tree.nodes.back().value = value;
    return static_cast<int>(tree.nodes.size()) - 1;
  }

  void build(const std::vector<int>& rows) {
    double sum = 0.0;
    for (int r : rows) sum += target(r);
    leaf(rows.empty() ? 0.0 : sum / static_cast<double>(rows.size()));
    for (int r : rows) node_of[static_cast<std::size_t>(r)] = 0;
    std::vector<int> frontier{0};
    for (int depth = 0; depth < max_depth && !frontier.empty(); ++depth) {
      std::vector<int> next;
      for (int node : frontier) split(node, next);
      frontier = std::move(next);
    }
  }

  void split(int node, std::vector<int>& next) {
    double total = 0.0;
    int count = 0;
    for (std::size_t r = 0; r < node_of.size(); ++r) {
      if (node_of[r] == node) {
        total += target(static_cast<Eigen::Index>(r));
        ++count;
      }
    }
    if (count < 2 * min_leaf) return;
    const double parent = total * total / count;
    double best_gain = 1e-12 * std::max(1.0, std::abs(parent));
    int best_feature = -1;
    double best_threshold = 0.0;
    for (int f = 0; f < static_cast<int>(x.cols()); ++f) {
      double left_sum = 0.0;
      int left_n = 0;
      int prev = -1;
      for (int r : order[static_cast<std::size_t>(f)]) {
        if (node_of[static_cast<std::size_t>(r)] != node) continue;
        if (prev >= 0 && x(r, f) > x(prev, f) && left_n >= min_leaf && count - left_n >= min_leaf) {
          const double right_sum = total - left_sum;
          const double gain =
              left_sum * left_sum / left_n + right_sum * right_sum / (count - left_n) - parent;
          if (gain > best_gain) {
            best_gain = gain;
            best_feature = f;
            best_threshold = 0.5 * (x(prev, f) + x(r, f));
          }
        }
        left_sum += target(r);
        ++left_n;
        prev = r;
      }
    }
    if (best_feature < 0) return;
    double ls = 0.0, rs = 0.0;
    int ln = 0, rn = 0;
    for (std::size_t r = 0; r < node_of.size(); ++r) {
      if (node_of[r] != node) continue;
      if (x(static_cast<Eigen::Index>(r), best_feature) <= best_threshold) {
        ls += target(static_cast<Eigen::Index>(r));
        ++ln;
      } else {
        rs += target(static_cast<Eigen::Index>(r));
        ++rn;
      }
    }
    const int l = leaf(ls / ln);
    const int rr = leaf(rs / rn);
    Tree::Node& n = tree.nodes[static_cast<std::size_t>(node)];
    n.feature = best_feature;
    n.threshold = best_threshold;
    n.left = l;
    n.right = rr;
    for (std::size_t r = 0; r < node_of.size(); ++r) {
      if (node_of[r] != node) continue;
      node_of[r] = x(static_cast<Eigen::Index>(r), best_feature) <= best_threshold ? l : rr;
    }
    next.push_back(l);
    next.push_back(rr);
  }
};

}  // namespace detail

/// One-vs-rest boosted regression trees on class-indicator residuals.
struct Classifier {
  std::vector<int> classes;  // original label per class slot
  Eigen::VectorXd prior;     // class frequencies, the boosting start
  std::vector<std::vector<Tree>> trees;  // [class][round]
  Options options;
  std::string recipe;
  double training_accuracy = 0.0;

  Eigen::VectorXd scores(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    Eigen::VectorXd s = prior;
    for (std::size_t c = 0; c < trees.size(); ++c) {
      for (const Tree& t : trees[c]) s(static_cast<Eigen::Index>(c)) += options.learning_rate * t.predict(x);
    }
    return s;
  }

  /// Highest score wins; ties go to the smallest label.
  int predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    const Eigen::VectorXd s = scores(x);
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < s.size(); ++c) {
      if (s(c) > s(best)) best = c;
    }
    return classes[static_cast<std::size_t>(best)];
  }

  std::vector<int> predict_all(const Eigen::MatrixXd& x) const {
    std::vector<int> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) out[static_cast<std::size_t>(i)] = predict(x.row(i));
    return out;
  }
};

inline Classifier train(const Eigen::MatrixXd& x, std::span<const int> labels, std::uint64_t seed,
                        const Options& opt = {}) {
  if (static_cast<Eigen::Index>(labels.size()) != x.rows()) fail(ErrorCategory::ShapeError, "labels and rows differ");
  if (!x.allFinite()) fail(ErrorCategory::DataError, "non-finite classifier features");
  std::map<int, int> slot;
  for (int l : labels) slot.emplace(l, 0);
  if (slot.size() < 2) fail(ErrorCategory::DegenerateLabels, "classifier needs at least two classes");
  Classifier clf;
  clf.options = opt;
  for (auto& [label, s] : slot) {
    s = static_cast<int>(clf.classes.size());
    clf.classes.push_back(label);
  }
  const Eigen::Index n = x.rows();
  const auto k = static_cast<Eigen::Index>(clf.classes.size());
  Eigen::MatrixXd indicator = Eigen::MatrixXd::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) indicator(i, slot.at(labels[static_cast<std::size_t>(i)])) = 1.0;
  clf.prior = indicator.colwise().mean().transpose();

  std::vector<std::vector<int>> order(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    auto& o = order[static_cast<std::size_t>(f)];
    o.resize(static_cast<std::size_t>(n));
    std::iota(o.begin(), o.end(), 0);
    std::stable_sort(o.begin(), o.end(), [&](int a, int b) { return x(a, f) < x(b, f); });
  }

  Rng rng(seed);
  Eigen::MatrixXd score = Eigen::MatrixXd::Zero(n, k);
  score.rowwise() = clf.prior.transpose();
  clf.trees.assign(static_cast<std::size_t>(k), {});
  std::vector<int> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  for (int round = 0; round < opt.rounds; ++round) {
    std::vector<int> rows = all;
    if (opt.subsample < 1.0) {
      rng.shuffle(std::span<int>(rows));
      rows.resize(std::max<std::size_t>(1, static_cast<std::size_t>(opt.subsample * static_cast<double>(n))));
      std::sort(rows.begin(), rows.end());
    }
    for (Eigen::Index c = 0; c < k; ++c) {
      const Eigen::VectorXd resid = indicator.col(c) - score.col(c);
      detail::Builder b{x, order, resid, opt.max_depth, std::max(1, opt.min_leaf), {},
                        std::vector<int>(static_cast<std::size_t>(n), -1)};
      b.build(rows);
      for (Eigen::Index i = 0; i < n; ++i) score(i, c) += opt.learning_rate * b.tree.predict(x.row(i));
      clf.trees[static_cast<std::size_t>(c)].push_back(std::move(b.tree));
    }
  }
  int correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) correct += clf.predict(x.row(i)) == labels[static_cast<std::size_t>(i)];
  clf.training_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return clf;
}

}  // namespace tcr::gbdt
