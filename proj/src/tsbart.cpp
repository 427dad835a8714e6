#include "sepbart/tsbart.hpp"

#include <stdexcept>

namespace sepbart {

InteractionForest InteractionForest::make(int exposure_dim, const ForestConfig& cfg, double rho,
                                          Rng& rng) {
  InteractionForest f;
  ForestConfig c = cfg;
  c.sigma_mu_cap = 3.5 / (2.0 * std::sqrt(static_cast<double>(c.n_trees)));
  f.forest = Forest::make(exposure_dim, c);
  f.forest.sigma_mu = c.sigma_mu_cap;
  f.basis.rho = rho;
  f.basis.entries.resize(static_cast<std::size_t>(c.n_trees));
  for (auto& e : f.basis.entries) {
    e.omega = rng.normal() / rho;
    e.phase = rng.uniform() * 6.283185307179586476925287;
  }
  return f;
}

double InteractionForest::predict(double x_j, const double* w) const {
  double acc = 0.0;
  for (int m = 0; m < n_trees(); ++m)
    acc += basis_eval(basis.entries[static_cast<std::size_t>(m)], x_j) *
           sepbart::predict(forest.trees[static_cast<std::size_t>(m)], w, forest.bandwidth);
  return acc;
}

Eigen::MatrixXd basis_matrix(const CosineBasis& basis, const Eigen::VectorXd& x_col) {
  Eigen::MatrixXd out(x_col.size(), static_cast<Eigen::Index>(basis.entries.size()));
  for (std::size_t m = 0; m < basis.entries.size(); ++m)
    for (Eigen::Index i = 0; i < x_col.size(); ++i)
      out(i, static_cast<Eigen::Index>(m)) = basis_eval(basis.entries[m], x_col[i]);
  return out;
}

void sweep_interaction(InteractionForest& forest, const Eigen::VectorXd& residual,
                       const Eigen::VectorXd& x_col, const Eigen::MatrixXd& W, double sigma2,
                       Rng& rng) {
  if (W.rows() != residual.size() || x_col.size() != residual.size())
    throw std::invalid_argument("sweep_interaction: input size mismatch");
  if (!(sigma2 > 0.0)) throw std::invalid_argument("sweep_interaction: sigma2 must be positive");
  Eigen::MatrixXd W_t = W.transpose();
  Eigen::MatrixXd bm = basis_matrix(forest.basis, x_col);
  detail::sweep_core(forest.forest, residual, W_t, sigma2, rng, &bm);
}

void sweep_interaction_cached(InteractionForest& forest, const Eigen::VectorXd& residual,
                              const Eigen::MatrixXd& basis_values, const Eigen::MatrixXd& W_t,
                              double sigma2, Rng& rng) {
  detail::sweep_core(forest.forest, residual, W_t, sigma2, rng, &basis_values);
}

}  // namespace sepbart
