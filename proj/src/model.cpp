#include "sepbart/model.hpp"

#include <cmath>
#include <stdexcept>

#include "sepbart/parallel.hpp"

namespace sepbart {

std::vector<std::string> FitConfig::validate() const {
  std::vector<std::string> errs;
  if (iterations < 1) errs.push_back("iterations must be >= 1");
  if (burn_in < 0) errs.push_back("burn_in must be >= 0");
  if (burn_in >= iterations) errs.push_back("burn_in must be < iterations");
  if (thin < 1) errs.push_back("thin must be >= 1");
  if (chains < 1) errs.push_back("chains must be >= 1");
  if (threads < 1) errs.push_back("threads must be >= 1");
  if (trees_f < 1) errs.push_back("trees_f must be >= 1");
  if (trees_g < 1) errs.push_back("trees_g must be >= 1");
  if (trees_h < 1) errs.push_back("trees_h must be >= 1");
  if (max_depth < 1) errs.push_back("max_depth must be >= 1");
  if (!(tau_prior_rate > 0)) errs.push_back("tau_prior_rate must be > 0");
  if (!(sigma_mu_scale > 0)) errs.push_back("sigma_mu_scale must be > 0");
  if (!(dirichlet_a > 0)) errs.push_back("dirichlet_a must be > 0");
  if (!(rho > 0)) errs.push_back("rho must be > 0");
  return errs;
}

void FitConfig::validate_or_throw() const {
  auto errs = validate();
  if (errs.empty()) return;
  std::string msg = "invalid config:";
  for (const auto& e : errs) msg += " [" + e + "]";
  throw std::invalid_argument(msg);
}

namespace {

ForestConfig main_effect_config(const FitConfig& cfg, int n_trees) {
  ForestConfig fc;
  fc.n_trees = n_trees;
  fc.tree_prior.max_depth = cfg.max_depth;
  fc.tau_prior_rate = cfg.tau_prior_rate;
  fc.sigma_mu_scale = cfg.sigma_mu_scale;
  fc.dirichlet_a = cfg.dirichlet_a;
  fc.dirichlet_xi = cfg.dirichlet_xi;
  return fc;
}

// Tree_m evaluated at every column of points_t, one tree per column of out.
void tree_values(const Forest& forest, const Eigen::MatrixXd& points_t, Eigen::MatrixXd& out) {
  const Eigen::Index n = points_t.cols();
  out.resize(n, forest.n_trees());
  for (int m = 0; m < forest.n_trees(); ++m)
    for (Eigen::Index i = 0; i < n; ++i)
      out(i, m) = predict(forest.trees[static_cast<std::size_t>(m)],
                          points_t.data() + i * points_t.rows(), forest.bandwidth);
}

Eigen::VectorXd forest_values(const Forest& forest, const Eigen::MatrixXd& points_t) {
  const Eigen::Index n = points_t.cols();
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = forest.predict(points_t.data() + i * points_t.rows());
  return out;
}

}  // namespace

IdentifiedView::IdentifiedView(const ModelState& state, const Eigen::VectorXd& x_anchor,
                               const Eigen::VectorXd& w_anchor)
    : state_(state), x_anchor_(x_anchor), w_anchor_(w_anchor) {
  const int p = static_cast<int>(state.interactions.size());
  const int mh = p > 0 ? state.interactions[0].n_trees() : 0;
  tree_at_wbar_.resize(mh, p);
  basis_at_xbar_.resize(mh, p);
  f0_anchor_ = state.forest_f.predict(x_anchor_.data());
  g0_anchor_ = state.forest_g.predict(w_anchor_.data());
  double h_anchor_sum = 0.0;
  for (int j = 0; j < p; ++j) {
    const InteractionForest& hf = state.interactions[static_cast<std::size_t>(j)];
    for (int m = 0; m < mh; ++m) {
      tree_at_wbar_(m, j) = predict(hf.forest.trees[static_cast<std::size_t>(m)], w_anchor_.data(),
                                    hf.forest.bandwidth);
      basis_at_xbar_(m, j) = basis_eval(hf.basis.entries[static_cast<std::size_t>(m)], x_anchor_[j]);
      h_anchor_sum += basis_at_xbar_(m, j) * tree_at_wbar_(m, j);
    }
  }
  c_ = state.c0 + f0_anchor_ + g0_anchor_ + h_anchor_sum;
}

double IdentifiedView::f(const Eigen::VectorXd& x) const {
  double acc = state_.forest_f.predict(x.data()) - f0_anchor_;
  for (int j = 0; j < static_cast<int>(state_.interactions.size()); ++j) {
    const InteractionForest& hf = state_.interactions[static_cast<std::size_t>(j)];
    for (int m = 0; m < hf.n_trees(); ++m) {
      double db = basis_eval(hf.basis.entries[static_cast<std::size_t>(m)], x[j]) - basis_at_xbar_(m, j);
      acc += db * tree_at_wbar_(m, j);
    }
  }
  return acc;
}

double IdentifiedView::g(const Eigen::VectorXd& w) const {
  double acc = state_.forest_g.predict(w.data()) - g0_anchor_;
  for (int j = 0; j < static_cast<int>(state_.interactions.size()); ++j) {
    const InteractionForest& hf = state_.interactions[static_cast<std::size_t>(j)];
    for (int m = 0; m < hf.n_trees(); ++m) {
      double dt = predict(hf.forest.trees[static_cast<std::size_t>(m)], w.data(), hf.forest.bandwidth) -
                  tree_at_wbar_(m, j);
      acc += basis_at_xbar_(m, j) * dt;
    }
  }
  return acc;
}

double IdentifiedView::h(int j, double x_j, const Eigen::VectorXd& w) const {
  const InteractionForest& hf = state_.interactions[static_cast<std::size_t>(j)];
  double acc = 0.0;
  for (int m = 0; m < hf.n_trees(); ++m) {
    double db = basis_eval(hf.basis.entries[static_cast<std::size_t>(m)], x_j) - basis_at_xbar_(m, j);
    double dt = predict(hf.forest.trees[static_cast<std::size_t>(m)], w.data(), hf.forest.bandwidth) -
                tree_at_wbar_(m, j);
    acc += db * dt;
  }
  return acc;
}

double IdentifiedView::mu(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const {
  double acc = c_ + f(x) + g(w);
  for (int j = 0; j < static_cast<int>(state_.interactions.size()); ++j) acc += h(j, x[j], w);
  return acc;
}

double IdentifiedView::mu_raw(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const {
  double acc = state_.c0 + state_.forest_f.predict(x.data()) + state_.forest_g.predict(w.data());
  for (int j = 0; j < static_cast<int>(state_.interactions.size()); ++j)
    acc += state_.interactions[static_cast<std::size_t>(j)].predict(x[j], w.data());
  return acc;
}

double predict_mu(const FitContext& ctx, const PosteriorDraw& draw, const Eigen::VectorXd& x,
                  const Eigen::VectorXd& w) {
  double acc = draw.state.c0 + draw.state.forest_f.predict(x.data()) +
               draw.state.forest_g.predict(w.data());
  for (int j = 0; j < static_cast<int>(draw.state.interactions.size()); ++j)
    acc += draw.state.interactions[static_cast<std::size_t>(j)].predict(x[j], w.data());
  return ctx.norm.destandardize_y(acc);
}

PosteriorDraw snapshot_draw(const FitContext& ctx, const ModelState& state) {
  const Eigen::Index n = ctx.n();
  const int p = static_cast<int>(ctx.p());
  Eigen::MatrixXd Xt = ctx.Xn.transpose();
  Eigen::MatrixXd Wt = ctx.Wn.transpose();

  PosteriorDraw d;
  d.state = state;

  Eigen::VectorXd f0 = forest_values(state.forest_f, Xt);
  Eigen::VectorXd g0 = forest_values(state.forest_g, Wt);
  double f0_anchor = state.forest_f.predict(ctx.norm.x_anchor.data());
  double g0_anchor = state.forest_g.predict(ctx.norm.w_anchor.data());

  d.f_ident = f0.array() - f0_anchor;
  d.g_ident = g0.array() - g0_anchor;
  d.h_ident.resize(n, p);
  d.c_ident = state.c0 + f0_anchor + g0_anchor;

  Eigen::MatrixXd treevals;  // n x M_h for one interaction forest
  for (int j = 0; j < p; ++j) {
    const InteractionForest& hf = state.interactions[static_cast<std::size_t>(j)];
    const int mh = hf.n_trees();
    tree_values(hf.forest, Wt, treevals);
    Eigen::VectorXd tree_wbar(mh), basis_xbar(mh);
    for (int m = 0; m < mh; ++m) {
      tree_wbar[m] = predict(hf.forest.trees[static_cast<std::size_t>(m)], ctx.norm.w_anchor.data(),
                             hf.forest.bandwidth);
      basis_xbar[m] = basis_eval(hf.basis.entries[static_cast<std::size_t>(m)],
                                 ctx.norm.x_anchor[j]);
      d.c_ident += basis_xbar[m] * tree_wbar[m];
    }
    Eigen::MatrixXd basis_vals = basis_matrix(hf.basis, ctx.Xn.col(j));
    // identified pieces, telescoped per tree
    d.f_ident += (basis_vals.rowwise() - basis_xbar.transpose()) * tree_wbar;
    d.g_ident += (treevals.rowwise() - tree_wbar.transpose()) * basis_xbar;
    d.h_ident.col(j) = ((basis_vals.rowwise() - basis_xbar.transpose()).array() *
                        (treevals.rowwise() - tree_wbar.transpose()).array())
                           .rowwise()
                           .sum();
  }
  return d;
}

namespace {

PosteriorSamples fit_chain(const FitContext& ctx, const FitConfig& cfg, int chain_index) {
  const Eigen::Index n = ctx.n();
  const int p = static_cast<int>(ctx.p());
  const int q = static_cast<int>(ctx.q());

  PosteriorSamples out;
  out.chain_index = chain_index;
  out.chain_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(chain_index));
  Rng rng(out.chain_seed);

  Eigen::MatrixXd Xt = ctx.Xn.transpose();
  Eigen::MatrixXd Wt = ctx.Wn.transpose();

  ModelState st;
  st.forest_f = Forest::make(p, main_effect_config(cfg, cfg.trees_f));
  st.forest_g = Forest::make(q, main_effect_config(cfg, cfg.trees_g));
  st.interactions.reserve(static_cast<std::size_t>(p));
  std::vector<Eigen::MatrixXd> basis_vals(static_cast<std::size_t>(p));
  for (int j = 0; j < p; ++j) {
    st.interactions.push_back(
        InteractionForest::make(q, main_effect_config(cfg, cfg.trees_h), cfg.rho, rng));
    basis_vals[static_cast<std::size_t>(j)] =
        basis_matrix(st.interactions.back().basis, ctx.Xn.col(j));
  }
  st.c0 = 0.0;
  st.sigma2 = 1.0;

  Eigen::VectorXd f_fit = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd g_fit = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd h_fit = Eigen::MatrixXd::Zero(n, p);
  Eigen::VectorXd resid(n);

  const double rho_grid[5] = {0.25, 0.5, 1.0, 2.0, 4.0};

  for (int t = 0; t < cfg.iterations; ++t) {
    Eigen::VectorXd h_sum = h_fit.rowwise().sum();

    resid = ctx.y_std.array() - st.c0 - g_fit.array() - h_sum.array();
    detail::sweep_core(st.forest_f, resid, Xt, st.sigma2, rng, nullptr);
    f_fit = forest_values(st.forest_f, Xt);

    resid = ctx.y_std.array() - st.c0 - f_fit.array() - h_sum.array();
    detail::sweep_core(st.forest_g, resid, Wt, st.sigma2, rng, nullptr);
    g_fit = forest_values(st.forest_g, Wt);

    for (int j = 0; j < p; ++j) {
      InteractionForest& hf = st.interactions[static_cast<std::size_t>(j)];
      h_sum = h_fit.rowwise().sum();
      resid = ctx.y_std.array() - st.c0 - f_fit.array() - g_fit.array() -
              (h_sum - h_fit.col(j)).array();
      detail::sweep_core(hf.forest, resid, Wt, st.sigma2, rng,
                         &basis_vals[static_cast<std::size_t>(j)]);
      Eigen::MatrixXd treevals;
      tree_values(hf.forest, Wt, treevals);
      h_fit.col(j) =
          (basis_vals[static_cast<std::size_t>(j)].array() * treevals.array()).rowwise().sum();

      if (cfg.rho_update) {
        double cand_rho = rho_grid[rng.uniform_int(5)];
        double log_u = std::log(rng.uniform_pos());
        if (cand_rho != hf.basis.rho) {
          CosineBasis cand_basis = hf.basis;
          double scale = hf.basis.rho / cand_rho;
          for (auto& e : cand_basis.entries) e.omega *= scale;
          Eigen::MatrixXd cand_bv = basis_matrix(cand_basis, ctx.Xn.col(j));
          Eigen::VectorXd cand_fit = (cand_bv.array() * treevals.array()).rowwise().sum();
          double ssr_cur = (resid - h_fit.col(j)).squaredNorm();
          double ssr_cand = (resid - cand_fit).squaredNorm();
          if (log_u < (ssr_cur - ssr_cand) / (2.0 * st.sigma2)) {
            hf.basis = std::move(cand_basis);
            basis_vals[static_cast<std::size_t>(j)] = std::move(cand_bv);
            h_fit.col(j) = cand_fit;
          }
        }
      }
    }

    h_sum = h_fit.rowwise().sum();
    Eigen::VectorXd rc = ctx.y_std - f_fit - g_fit - h_sum;
    st.c0 = rng.normal(rc.mean(), std::sqrt(st.sigma2 / static_cast<double>(n)));

    double ssr = (rc.array() - st.c0).square().sum();
    st.sigma2 = rng.inv_gamma(1.0 + 0.5 * static_cast<double>(n), 1.0 + 0.5 * ssr);

    if (!std::isfinite(st.c0) || !std::isfinite(st.sigma2) || !f_fit.allFinite() ||
        !g_fit.allFinite() || !h_fit.allFinite())
      throw std::runtime_error("fit: non-finite state at iteration " + std::to_string(t));

    if (t >= cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0)
      out.draws.push_back(snapshot_draw(ctx, st));
  }
  return out;
}

}  // namespace

PosteriorSet fit_model(const Dataset& normalized, const NormalizationInfo& info,
                       const FitConfig& cfg) {
  cfg.validate_or_throw();
  normalized.validate();

  PosteriorSet set;
  set.ctx.norm = info;
  set.ctx.Xn = normalized.X;
  set.ctx.Wn = normalized.W;
  set.ctx.y_std = normalized.y;
  set.ctx.outcome_name = normalized.outcome_name;
  set.ctx.covariate_names = normalized.covariate_names;
  set.ctx.exposure_names = normalized.exposure_names;
  set.config = cfg;
  set.chains.resize(static_cast<std::size_t>(cfg.chains));

  parallel_for(static_cast<std::size_t>(cfg.chains), cfg.threads, [&](std::size_t c) {
    set.chains[c] = fit_chain(set.ctx, cfg, static_cast<int>(c));
  });
  return set;
}

}  // namespace sepbart
