#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "sepbart/rng.hpp"
#include "sepbart/softbart.hpp"

namespace sepbart {

struct CosineBasisEntry {
  double omega = 0.0;
  double phase = 0.0;
};

// One random cosine feature per tree: B_m(u) = sqrt(2) cos(omega_m u + b_m),
// omega_m ~ N(0, rho^-2), b_m ~ U(0, 2pi), fixed for the run.
struct CosineBasis {
  double rho = 1.0;
  std::vector<CosineBasisEntry> entries;
};

inline double basis_eval(const CosineBasisEntry& e, double u) {
  return 1.4142135623730950488 * std::cos(e.omega * u + e.phase);
}

// Interaction ensemble h(x_j, w) = sum_m B_m(x_j) Tree_m(w): smooth in the
// targeted covariate, tree-flexible in the exposures, and a pure product by
// construction (no additive term in x_j or w alone). sigma_mu is hard-capped
// at 3.5 / (2 sqrt(M)).
struct InteractionForest {
  Forest forest;  // trees over the exposure dimensions
  CosineBasis basis;

  static InteractionForest make(int exposure_dim, const ForestConfig& cfg, double rho, Rng& rng);

  double cap() const { return forest.config.sigma_mu_cap; }
  int n_trees() const { return forest.n_trees(); }
  double predict(double x_j, const double* w) const;
};

inline double predict_interaction(const InteractionForest& f, double x_j, const Eigen::VectorXd& w) {
  return f.predict(x_j, w.data());
}

// n x M matrix of basis values at the targeted-covariate column.
Eigen::MatrixXd basis_matrix(const CosineBasis& basis, const Eigen::VectorXd& x_col);

// softbart sweep with each observation's design row for tree m scaled by
// B_m(x_col_i); sigma_mu proposals above the cap are rejected.
void sweep_interaction(InteractionForest& forest, const Eigen::VectorXd& residual,
                       const Eigen::VectorXd& x_col, const Eigen::MatrixXd& W, double sigma2,
                       Rng& rng);

// Variant with the basis matrix precomputed (it is fixed across a run).
void sweep_interaction_cached(InteractionForest& forest, const Eigen::VectorXd& residual,
                              const Eigen::MatrixXd& basis_values, const Eigen::MatrixXd& W_t,
                              double sigma2, Rng& rng);

}  // namespace sepbart
