#pragma once

#include <limits>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "sepbart/rng.hpp"
#include "sepbart/trees.hpp"

namespace sepbart {

struct ForestConfig {
  int n_trees = 50;
  TreePrior tree_prior;
  double tau_prior_rate = 10.0;   // Exponential prior on the bandwidth
  double sigma_mu_scale = 1.0;    // Half-Cauchy prior scale for sigma_mu
  double sigma_mu_cap = std::numeric_limits<double>::infinity();
  double dirichlet_a = 1.0;       // split-probability concentration a / r^xi
  double dirichlet_xi = 1.0;
  double log_tau_step = 0.3;      // random-walk steps on the log scale
  double log_sigma_mu_step = 0.3;
  bool update_tau = true;
  bool update_split_probs = true;
  bool update_sigma_mu = true;
};

// Soft-tree ensemble with one shared bandwidth; leaf prior N(0, sigma_mu^2/M)
// so the prior ensemble variance is sigma_mu^2.
struct Forest {
  std::vector<Tree> trees;
  double bandwidth = 0.1;
  double sigma_mu = 0.25;
  SplitProbs split_probs;
  ForestConfig config;
  int dim = 0;

  static Forest make(int dim, const ForestConfig& cfg);
  int n_trees() const { return static_cast<int>(trees.size()); }
  double predict(const double* v) const;
};

inline double predict_forest(const Forest& f, const Eigen::VectorXd& v) { return f.predict(v.data()); }

// One backfitting pass over all trees (marginal-likelihood MH on structures,
// joint Gaussian leaf draws), then bandwidth, split-probability, and sigma_mu
// updates. residual is the target for this forest: y minus all other model
// components. inputs is n x dim. Throws on non-finite residual.
void sweep(Forest& forest, const Eigen::VectorXd& residual, const Eigen::MatrixXd& inputs,
           double sigma2, Rng& rng);

namespace detail {

// Routing-weight design matrix for one tree: out(i, leaf) = path weight of
// observation i, times multiplier[i] when given. inputs_t is dim x n.
void leaf_weight_matrix(const Tree& tree, const Eigen::MatrixXd& inputs_t, double bandwidth,
                        const double* multiplier, Eigen::MatrixXd& out);

// Gaussian linear-model evidence for leaves integrated out under
// N(0, leaf_var) iid leaf prior, up to terms shared by trees fit to the same
// residual: -b/2 log(leaf_var) - 1/2 log|A| + 1/2 u'A^{-1}u with
// A = L'L/sigma2 + I/leaf_var, u = L'r/sigma2.
struct LeafSystem {
  double rel_log_evidence = 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt;  // of A
  Eigen::VectorXd u;
};

LeafSystem leaf_system(const Eigen::MatrixXd& lambda, const Eigen::VectorXd& residual,
                       double sigma2, double leaf_var);

Eigen::VectorXd draw_leaves(const LeafSystem& sys, Rng& rng);

// multipliers: n x M per-(observation, tree) design scaling, or nullptr.
void sweep_core(Forest& forest, const Eigen::VectorXd& residual, const Eigen::MatrixXd& inputs_t,
                double sigma2, Rng& rng, const Eigen::MatrixXd* multipliers);

}  // namespace detail

}  // namespace sepbart
