#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sepbart/dataset.hpp"
#include "sepbart/rng.hpp"
#include "sepbart/softbart.hpp"
#include "sepbart/tsbart.hpp"

namespace sepbart {

struct FitConfig {
  int iterations = 3000;
  int burn_in = 1500;
  int thin = 3;
  int chains = 1;
  std::uint64_t seed = 1;
  int threads = 1;

  int trees_f = 50;
  int trees_g = 50;
  int trees_h = 20;
  int max_depth = 10;
  double tau_prior_rate = 10.0;
  double sigma_mu_scale = 1.0;
  double dirichlet_a = 1.0;
  double dirichlet_xi = 1.0;
  double rho = 1.0;
  bool rho_update = false;

  // every problem at once; empty means valid
  std::vector<std::string> validate() const;
  void validate_or_throw() const;
};

struct ModelState {
  double c0 = 0.0;
  double sigma2 = 1.0;
  Forest forest_f;
  Forest forest_g;
  std::vector<InteractionForest> interactions;  // one per covariate
};

// Snapshot of one retained draw: full state plus identified-component values
// at the training points (standardized outcome scale). Caches are produced by
// fresh tree evaluation so that a reloaded draw reproduces them bit-exactly.
struct PosteriorDraw {
  ModelState state;
  double c_ident = 0.0;
  Eigen::VectorXd f_ident;  // n
  Eigen::VectorXd g_ident;  // n
  Eigen::MatrixXd h_ident;  // n x p
};

// Everything shared by the chains of one fit.
struct FitContext {
  NormalizationInfo norm;
  Eigen::MatrixXd Xn;  // normalized covariates, n x p
  Eigen::MatrixXd Wn;  // normalized exposures, n x q
  Eigen::VectorXd y_std;
  std::string outcome_name;
  std::vector<std::string> covariate_names;
  std::vector<std::string> exposure_names;

  Eigen::Index n() const { return y_std.size(); }
  Eigen::Index p() const { return Xn.cols(); }
  Eigen::Index q() const { return Wn.cols(); }
};

struct PosteriorSamples {
  std::vector<PosteriorDraw> draws;
  std::uint64_t chain_seed = 0;
  int chain_index = 0;
};

struct PosteriorSet {
  FitContext ctx;
  FitConfig config;
  std::vector<PosteriorSamples> chains;

  std::size_t n_draws() const {
    std::size_t k = 0;
    for (const auto& c : chains) k += c.draws.size();
    return k;
  }
  const PosteriorDraw& draw(std::size_t k) const {
    for (const auto& c : chains) {
      if (k < c.draws.size()) return c.draws[k];
      k -= c.draws.size();
    }
    throw std::out_of_range("PosteriorSet::draw");
  }
};

// Identified components of one draw under the anchor-shift constraints
// f(x̄) = g(w̄) = 0, h_j(x̄_j, ·) = h_j(·, w̄) = 0. The four-bracket shift is
// applied analytically (telescoped per tree), so the anchored values vanish
// to floating-point exactness and c + f + g + Σh_j reproduces the raw state.
class IdentifiedView {
 public:
  IdentifiedView(const ModelState& state, const Eigen::VectorXd& x_anchor,
                 const Eigen::VectorXd& w_anchor);

  double c() const { return c_; }
  double f(const Eigen::VectorXd& x) const;
  double g(const Eigen::VectorXd& w) const;
  double h(int j, double x_j, const Eigen::VectorXd& w) const;
  // c + f + g + sum_j h_j, standardized scale
  double mu(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const;
  // c0 + f0 + g0 + sum_j h_j0 (unshifted), standardized scale
  double mu_raw(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const;

 private:
  const ModelState& state_;
  Eigen::VectorXd x_anchor_, w_anchor_;
  double c_ = 0.0;
  double f0_anchor_ = 0.0;
  double g0_anchor_ = 0.0;
  Eigen::MatrixXd tree_at_wbar_;   // M_h x p : Tree_jm(w̄)
  Eigen::MatrixXd basis_at_xbar_;  // M_h x p : B_jm(x̄_j)
};

inline IdentifiedView recenter(const ModelState& state, const Eigen::VectorXd& x_anchor,
                               const Eigen::VectorXd& w_anchor) {
  return IdentifiedView(state, x_anchor, w_anchor);
}

// E[Y | x, w] on the original outcome scale; x, w on the normalized scale.
double predict_mu(const FitContext& ctx, const PosteriorDraw& draw, const Eigen::VectorXd& x,
                  const Eigen::VectorXd& w);

// Backfitting MCMC over (c, f, g, h_1..h_p, sigma^2); one entry per chain,
// chains run in parallel with seeds derived from config.seed.
PosteriorSet fit_model(const Dataset& normalized, const NormalizationInfo& info,
                       const FitConfig& cfg);

// Recomputes identified caches for a state by fresh evaluation (used at
// retention time and when loading draws from disk).
PosteriorDraw snapshot_draw(const FitContext& ctx, const ModelState& state);

}  // namespace sepbart
