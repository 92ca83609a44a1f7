#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "lisa/dataset.hpp"

namespace lisa {

/// One node of a binary regression tree. Interior nodes hold a decision rule
/// (route left when x[split_var] <= split_value), terminal nodes hold a mean.
struct TreeNode {
  int split_var = -1;  // -1 marks a terminal node
  double split_value = 0.0;
  int left = -1;
  int right = -1;
  int parent = -1;
  double mu = 0.0;
};

/// Strictly binary tree stored as an index-linked node vector, root at 0.
/// Value semantics: copying the vector copies the tree, which is how move
/// proposals are built.
class DecisionTree {
 public:
  DecisionTree() : nodes_(1) {}

  static DecisionTree stump(double mu) {
    DecisionTree t;
    t.nodes_[0].mu = mu;
    return t;
  }

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const TreeNode& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  std::size_t n_nodes() const { return nodes_.size(); }
  bool is_leaf(int i) const { return node(i).left < 0; }

  int depth(int i) const {
    int d = 0;
    while (nodes_[static_cast<std::size_t>(i)].parent >= 0) {
      i = nodes_[static_cast<std::size_t>(i)].parent;
      ++d;
    }
    return d;
  }

  int route(std::span<const double> x) const {
    int i = 0;
    while (!is_leaf(i)) {
      const TreeNode& nd = nodes_[static_cast<std::size_t>(i)];
      i = (x[static_cast<std::size_t>(nd.split_var)] <= nd.split_value)
              ? nd.left
              : nd.right;
    }
    return i;
  }

  double predict(std::span<const double> x) const {
    return nodes_[static_cast<std::size_t>(route(x))].mu;
  }

  std::vector<int> leaves() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].left < 0) out.push_back(static_cast<int>(i));
    return out;
  }

  std::size_t n_leaves() const {
    std::size_t c = 0;
    for (const auto& nd : nodes_)
      if (nd.left < 0) ++c;
    return c;
  }

  /// Interior nodes whose two children are both terminal. These are the
  /// PRUNE candidates and, under the bartMachine restriction, also the
  /// CHANGE candidates.
  std::vector<int> prunable() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& nd = nodes_[i];
      if (nd.left >= 0 && node(nd.left).left < 0 && node(nd.right).left < 0)
        out.push_back(static_cast<int>(i));
    }
    return out;
  }

  /// Parent-child pairs of interior nodes, the SWAP candidates. Each pair is
  /// (parent, child).
  std::vector<std::pair<int, int>> swappable() const {
    std::vector<std::pair<int, int>> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& nd = nodes_[i];
      if (nd.left < 0) continue;
      if (!is_leaf(nd.left)) out.emplace_back(static_cast<int>(i), nd.left);
      if (!is_leaf(nd.right)) out.emplace_back(static_cast<int>(i), nd.right);
    }
    return out;
  }

  void set_mu(int leaf, double mu) {
    assert(is_leaf(leaf));
    nodes_[static_cast<std::size_t>(leaf)].mu = mu;
  }

  void set_rule(int inner, int var, double value) {
    assert(!is_leaf(inner));
    nodes_[static_cast<std::size_t>(inner)].split_var = var;
    nodes_[static_cast<std::size_t>(inner)].split_value = value;
  }

  /// Split a terminal node; the new children start as terminal nodes with
  /// zero means (leaf means are redrawn right after a structure move).
  void grow(int leaf, int var, double value) {
    assert(is_leaf(leaf));
    const int l = static_cast<int>(nodes_.size());
    const int r = l + 1;
    nodes_.emplace_back();
    nodes_.emplace_back();
    nodes_[static_cast<std::size_t>(l)].parent = leaf;
    nodes_[static_cast<std::size_t>(r)].parent = leaf;
    auto& nd = nodes_[static_cast<std::size_t>(leaf)];
    nd.split_var = var;
    nd.split_value = value;
    nd.left = l;
    nd.right = r;
    nd.mu = 0.0;
  }

  /// Collapse an interior node with two terminal children back to a leaf.
  void prune(int inner) {
    auto& nd = nodes_[static_cast<std::size_t>(inner)];
    assert(nd.left >= 0 && is_leaf(nd.left) && is_leaf(nd.right));
    int a = nd.left;
    int b = nd.right;
    nd.left = nd.right = -1;
    nd.split_var = -1;
    nd.split_value = 0.0;
    nd.mu = 0.0;
    if (a > b) std::swap(a, b);
    erase_node(b);
    erase_node(a);
  }

 private:
  void erase_node(int idx) {
    const int last = static_cast<int>(nodes_.size()) - 1;
    if (idx != last) {
      nodes_[static_cast<std::size_t>(idx)] = nodes_[static_cast<std::size_t>(last)];
      const auto& moved = nodes_[static_cast<std::size_t>(idx)];
      if (moved.parent >= 0) {
        auto& par = nodes_[static_cast<std::size_t>(moved.parent)];
        if (par.left == last) par.left = idx;
        if (par.right == last) par.right = idx;
      }
      if (moved.left >= 0) {
        nodes_[static_cast<std::size_t>(moved.left)].parent = idx;
        nodes_[static_cast<std::size_t>(moved.right)].parent = idx;
      }
    }
    nodes_.pop_back();
  }

  std::vector<TreeNode> nodes_;
};

/// Row indices reaching each node of a tree, for the rows of a design matrix.
struct NodeRows {
  std::vector<std::vector<int>> rows;  // indexed by node id
};

inline NodeRows route_rows(const DecisionTree& tree, const Matrix& x) {
  NodeRows nr;
  nr.rows.assign(tree.n_nodes(), {});
  nr.rows[0].resize(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) nr.rows[0][i] = static_cast<int>(i);
  // Node ids are not ordered parent-first after compaction, so walk explicitly.
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    const TreeNode& nd = tree.node(id);
    if (nd.left < 0) continue;
    auto& here = nr.rows[static_cast<std::size_t>(id)];
    auto& lrows = nr.rows[static_cast<std::size_t>(nd.left)];
    auto& rrows = nr.rows[static_cast<std::size_t>(nd.right)];
    lrows.clear();
    rrows.clear();
    for (int r : here) {
      if (x.at(static_cast<std::size_t>(r),
               static_cast<std::size_t>(nd.split_var)) <= nd.split_value)
        lrows.push_back(r);
      else
        rrows.push_back(r);
    }
    stack.push_back(nd.left);
    stack.push_back(nd.right);
  }
  return nr;
}

/// Sorted distinct observed values of one predictor over a row subset: the
/// candidate split values at a node.
inline std::vector<double> split_candidates(const Matrix& x,
                                            const std::vector<int>& rows,
                                            int var) {
  std::vector<double> vals;
  vals.reserve(rows.size());
  for (int r : rows)
    vals.push_back(
        x.at(static_cast<std::size_t>(r), static_cast<std::size_t>(var)));
  std::sort(vals.begin(), vals.end());
  vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
  return vals;
}

/// Log prior of a tree: depth terms alpha(1+d)^-beta for interior nodes,
/// their complements for terminal nodes, and the uniform variable/value
/// choice probabilities of each decision rule, all scaled by prior_temper.
/// Returns -inf when a rule's value is not among the candidates at its node.
inline double tree_log_prior(const DecisionTree& tree, const Matrix& x,
                             double alpha, double beta_depth,
                             double prior_temper = 1.0) {
  const NodeRows nr = route_rows(tree, x);
  const double p = static_cast<double>(x.cols);
  double total = 0.0;
  for (std::size_t i = 0; i < tree.n_nodes(); ++i) {
    const TreeNode& nd = tree.node(static_cast<int>(i));
    const double d = static_cast<double>(tree.depth(static_cast<int>(i)));
    const double p_split = alpha * std::pow(1.0 + d, -beta_depth);
    if (nd.left < 0) {
      total += std::log1p(-p_split);
      continue;
    }
    total += std::log(p_split) - std::log(p);
    const auto cand = split_candidates(x, nr.rows[i], nd.split_var);
    const bool present =
        std::binary_search(cand.begin(), cand.end(), nd.split_value);
    if (!present || nr.rows[i].empty())
      return -std::numeric_limits<double>::infinity();
    total -= std::log(static_cast<double>(cand.size()));
  }
  return prior_temper * total;
}

}  // namespace lisa
