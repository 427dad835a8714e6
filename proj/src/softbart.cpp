#include "sepbart/softbart.hpp"

#include <cmath>
#include <stdexcept>

namespace sepbart {

Forest Forest::make(int dim, const ForestConfig& cfg) {
  Forest f;
  f.dim = dim;
  f.config = cfg;
  f.trees.assign(static_cast<std::size_t>(cfg.n_trees), Tree{});
  f.bandwidth = 1.0 / cfg.tau_prior_rate;  // prior mean
  f.sigma_mu = std::min(3.5 / (2.0 * std::sqrt(static_cast<double>(cfg.n_trees))), cfg.sigma_mu_cap);
  f.split_probs = SplitProbs::uniform(dim);
  return f;
}

double Forest::predict(const double* v) const {
  double acc = 0.0;
  for (const auto& t : trees) acc += sepbart::predict(t, v, bandwidth);
  return acc;
}

namespace detail {

void leaf_weight_matrix(const Tree& tree, const Eigen::MatrixXd& inputs_t, double bandwidth,
                        const double* multiplier, Eigen::MatrixXd& out) {
  const Eigen::Index n = inputs_t.cols();
  const auto& nodes = tree.nodes();
  const Eigen::Index b = tree.n_leaves();
  out.resize(n, b);

  if (b == 1) {
    if (multiplier)
      out.col(0) = Eigen::Map<const Eigen::VectorXd>(multiplier, n);
    else
      out.col(0).setOnes();
    return;
  }

  struct Item {
    int id;
    double w;
  };
  static thread_local std::vector<Item> stack;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* v = inputs_t.data() + i * inputs_t.rows();
    double base = multiplier ? multiplier[i] : 1.0;
    Eigen::Index leaf = 0;
    stack.clear();
    stack.push_back({0, base});
    while (!stack.empty()) {
      Item it = stack.back();
      stack.pop_back();
      const TreeNode& nd = nodes[static_cast<std::size_t>(it.id)];
      if (nd.is_leaf()) {
        out(i, leaf++) = it.w;
        continue;
      }
      double pr = gate((v[nd.var] - nd.cut) / bandwidth);
      stack.push_back({nd.right, it.w * pr});
      stack.push_back({nd.left, it.w * (1.0 - pr)});
    }
  }
}

LeafSystem leaf_system(const Eigen::MatrixXd& lambda, const Eigen::VectorXd& residual,
                       double sigma2, double leaf_var) {
  const Eigen::Index b = lambda.cols();
  LeafSystem sys;
  Eigen::MatrixXd A = (lambda.transpose() * lambda) / sigma2;
  A.diagonal().array() += 1.0 / leaf_var;
  sys.u = lambda.transpose() * residual / sigma2;
  sys.llt.compute(A);
  if (sys.llt.info() != Eigen::Success)
    throw std::runtime_error("leaf_system: Cholesky factorization failed");
  double logdet = 0.0;
  for (Eigen::Index k = 0; k < b; ++k) logdet += std::log(sys.llt.matrixLLT()(k, k));
  logdet *= 2.0;
  Eigen::VectorXd Ainv_u = sys.llt.solve(sys.u);
  sys.rel_log_evidence =
      -0.5 * static_cast<double>(b) * std::log(leaf_var) - 0.5 * logdet + 0.5 * sys.u.dot(Ainv_u);
  return sys;
}

Eigen::VectorXd draw_leaves(const LeafSystem& sys, Rng& rng) {
  const Eigen::Index b = sys.u.size();
  Eigen::VectorXd z(b);
  for (Eigen::Index k = 0; k < b; ++k) z[k] = rng.normal();
  // mean + L^{-T} z
  return sys.llt.solve(sys.u) + sys.llt.matrixU().solve(z);
}

namespace {

void tree_fit_column(const Tree& tree, const Eigen::MatrixXd& inputs_t, double bandwidth,
                     const double* multiplier, Eigen::VectorXd& out) {
  const Eigen::Index n = inputs_t.cols();
  out.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double v = predict(tree, inputs_t.data() + i * inputs_t.rows(), bandwidth);
    out[i] = multiplier ? multiplier[i] * v : v;
  }
}

double half_cauchy_log_density(double x, double scale) {
  return -std::log1p((x / scale) * (x / scale));  // up to a constant
}

}  // namespace

void sweep_core(Forest& forest, const Eigen::VectorXd& residual, const Eigen::MatrixXd& inputs_t,
                double sigma2, Rng& rng, const Eigen::MatrixXd* multipliers) {
  if (!residual.allFinite()) throw std::runtime_error("sweep: non-finite residual");
  const Eigen::Index n = residual.size();
  const int M = forest.n_trees();
  const ForestConfig& cfg = forest.config;
  const double leaf_var_scale = static_cast<double>(M);

  auto mult_col = [&](int m) -> const double* {
    return multipliers ? multipliers->col(m).data() : nullptr;
  };

  // current per-tree fits and their sum
  Eigen::MatrixXd fits(n, M);
  Eigen::VectorXd col(n);
  for (int m = 0; m < M; ++m) {
    tree_fit_column(forest.trees[m], inputs_t, forest.bandwidth, mult_col(m), col);
    fits.col(m) = col;
  }
  Eigen::VectorXd forest_fit = fits.rowwise().sum();

  Eigen::MatrixXd lam_cur, lam_prop;
  Eigen::VectorXd partial(n);

  for (int m = 0; m < M; ++m) {
    const double leaf_var = forest.sigma_mu * forest.sigma_mu / leaf_var_scale;
    partial = residual - forest_fit + fits.col(m);

    Tree& tree = forest.trees[m];
    leaf_weight_matrix(tree, inputs_t, forest.bandwidth, mult_col(m), lam_cur);
    LeafSystem cur = leaf_system(lam_cur, partial, sigma2, leaf_var);

    MoveProposal prop = propose_move(tree, forest.split_probs, cfg.tree_prior, rng);
    leaf_weight_matrix(prop.tree, inputs_t, forest.bandwidth, mult_col(m), lam_prop);
    LeafSystem cand = leaf_system(lam_prop, partial, sigma2, leaf_var);

    double log_accept = cand.rel_log_evidence - cur.rel_log_evidence + prop.log_prior_ratio +
                        prop.log_proposal_ratio;
    bool accept = std::log(rng.uniform_pos()) < log_accept;

    if (accept) tree = std::move(prop.tree);
    const LeafSystem& sys = accept ? cand : cur;
    const Eigen::MatrixXd& lam = accept ? lam_prop : lam_cur;
    tree.set_leaf_values(draw_leaves(sys, rng));

    Eigen::VectorXd new_fit = lam * tree.leaf_values();
    forest_fit += new_fit - fits.col(m);
    fits.col(m) = new_fit;
  }

  if (cfg.update_tau) {
    double cand_bw = std::exp(std::log(forest.bandwidth) + cfg.log_tau_step * rng.normal());
    Eigen::MatrixXd cand_fits(n, M);
    for (int m = 0; m < M; ++m) {
      tree_fit_column(forest.trees[m], inputs_t, cand_bw, mult_col(m), col);
      cand_fits.col(m) = col;
    }
    Eigen::VectorXd cand_sum = cand_fits.rowwise().sum();
    double ssr_cur = (residual - forest_fit).squaredNorm();
    double ssr_cand = (residual - cand_sum).squaredNorm();
    double log_accept = (ssr_cur - ssr_cand) / (2.0 * sigma2) -
                        cfg.tau_prior_rate * (cand_bw - forest.bandwidth) +
                        (std::log(cand_bw) - std::log(forest.bandwidth));
    if (std::log(rng.uniform_pos()) < log_accept) {
      forest.bandwidth = cand_bw;
      fits = std::move(cand_fits);
      forest_fit = std::move(cand_sum);
    }
  }

  if (cfg.update_split_probs) {
    Eigen::VectorXd conc = Eigen::VectorXd::Constant(
        forest.dim, cfg.dirichlet_a / std::pow(static_cast<double>(forest.dim), cfg.dirichlet_xi));
    for (const auto& t : forest.trees)
      for (const auto& nd : t.nodes())
        if (!nd.is_leaf()) conc[nd.var] += 1.0;
    forest.split_probs.probs = rng.dirichlet(conc);
  }

  if (cfg.update_sigma_mu) {
    double sum_sq = 0.0;
    long n_leaves = 0;
    for (const auto& t : forest.trees) {
      for (const auto& nd : t.nodes())
        if (nd.is_leaf()) {
          sum_sq += nd.leaf_value * nd.leaf_value;
          ++n_leaves;
        }
    }
    double cand = std::exp(std::log(forest.sigma_mu) + cfg.log_sigma_mu_step * rng.normal());
    double log_u = std::log(rng.uniform_pos());
    if (cand <= cfg.sigma_mu_cap) {
      auto loglik = [&](double s) {
        return -static_cast<double>(n_leaves) * std::log(s) -
               leaf_var_scale * sum_sq / (2.0 * s * s);
      };
      double log_accept = loglik(cand) - loglik(forest.sigma_mu) +
                          half_cauchy_log_density(cand, cfg.sigma_mu_scale) -
                          half_cauchy_log_density(forest.sigma_mu, cfg.sigma_mu_scale) +
                          (std::log(cand) - std::log(forest.sigma_mu));
      if (log_u < log_accept) forest.sigma_mu = cand;
    }
  }
}

}  // namespace detail

void sweep(Forest& forest, const Eigen::VectorXd& residual, const Eigen::MatrixXd& inputs,
           double sigma2, Rng& rng) {
  if (inputs.rows() != residual.size())
    throw std::invalid_argument("sweep: inputs/residual size mismatch");
  if (!(sigma2 > 0.0)) throw std::invalid_argument("sweep: sigma2 must be positive");
  Eigen::MatrixXd inputs_t = inputs.transpose();
  detail::sweep_core(forest, residual, inputs_t, sigma2, rng, nullptr);
}

}  // namespace sepbart
