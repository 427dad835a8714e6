#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "sepbart/rng.hpp"

namespace sepbart {

// Logistic gate; saturated tails short-circuit exp() (exact at double precision
// for |t| >= 40).
inline double gate(double t) {
  if (t > 40.0) return 1.0;
  if (t < -40.0) return 0.0;
  return 1.0 / (1.0 + std::exp(-t));
}

struct SoftRoutingParams {
  double bandwidth = 0.1;  // > 0
};

struct SplitProbs {
  Eigen::VectorXd probs;  // simplex over input dimensions

  static SplitProbs uniform(int dim) {
    SplitProbs s;
    s.probs = Eigen::VectorXd::Constant(dim, 1.0 / dim);
    return s;
  }
};

struct TreeNode {
  std::int32_t left = -1;   // -1 for leaf
  std::int32_t right = -1;
  std::int32_t var = -1;    // split variable, internal nodes only
  double cut = 0.0;         // in [0, 1]
  double leaf_value = 0.0;
  std::int32_t depth = 0;

  bool is_leaf() const { return left < 0; }
};

// Binary tree stored as an index vector, root at 0. Mutating moves produce
// compacted copies; a tree inside a retained draw is never mutated.
class Tree {
 public:
  Tree() { nodes_.push_back(TreeNode{}); }

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::vector<TreeNode>& nodes() { return nodes_; }

  int n_nodes() const { return static_cast<int>(nodes_.size()); }
  int n_leaves() const;
  int n_internal() const { return n_nodes() - n_leaves(); }
  int depth() const;

  // DFS (left-first) order; leaf weights and leaf parameters use this order.
  std::vector<int> leaf_ids() const;
  // leaves with depth < max_depth
  std::vector<int> growable_leaf_ids(int max_depth) const;
  // internal nodes whose children are both leaves
  std::vector<int> nog_ids() const;
  std::vector<int> internal_ids() const;

  // leaf parameters in leaf_ids() order
  Eigen::VectorXd leaf_values() const;
  void set_leaf_values(const Eigen::VectorXd& values);

  void grow(int leaf_id, int var, double cut);
  // collapses both children of a no-grandchild node; compacts storage
  void prune(int nog_id);

  bool same_structure(const Tree& other) const;

 private:
  std::vector<TreeNode> nodes_;
};

// Per-leaf routing weights at point v (leaf_ids order): product over the
// root-to-leaf path of branch probabilities, right branch taken with
// gate((v[var]-cut)/bandwidth). Appends nothing; out is resized.
void leaf_weights(const Tree& tree, const double* v, double bandwidth, std::vector<double>& out);

double predict(const Tree& tree, const double* v, double bandwidth);

inline double predict(const Tree& tree, const Eigen::VectorXd& v, const SoftRoutingParams& routing) {
  return predict(tree, v.data(), routing.bandwidth);
}

enum class MoveKind { Grow, Prune, Change };

struct TreePrior {
  double split_gamma = 0.95;  // p(split at depth d) = gamma * (1+d)^-beta, 0 at max_depth
  double split_beta = 2.0;
  int max_depth = 10;
  double p_grow = 0.4;
  double p_prune = 0.4;
  double p_change = 0.2;

  double split_prob(int depth) const {
    if (depth >= max_depth) return 0.0;
    return split_gamma * std::pow(1.0 + depth, -split_beta);
  }
};

struct MoveProposal {
  Tree tree;
  MoveKind kind = MoveKind::Grow;
  double log_proposal_ratio = 0.0;  // log q(T'->T) - log q(T->T')
  double log_prior_ratio = 0.0;     // log p(T') - log p(T), split rules included
};

// GROW/PRUNE/CHANGE mixture (renormalized over feasible moves). Cut points
// are continuous Uniform(0,1); split variables are drawn from s.
MoveProposal propose_move(const Tree& tree, const SplitProbs& s, const TreePrior& prior, Rng& rng);

}  // namespace sepbart
