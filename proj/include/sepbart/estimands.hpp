#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "sepbart/model.hpp"

namespace sepbart {

// Two exposure levels on the raw scale; estimand ops normalize internally.
struct ExposureContrast {
  Eigen::VectorXd w0;
  Eigen::VectorXd w1;
};

struct PosteriorSummary {
  double mean = 0.0;
  double sd = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
  int n_draws = 0;
};

PosteriorSummary summarize(const Eigen::VectorXd& draws, double level = 0.95);

// Block of tau values: entry (k, l) pairs exposure row k with covariate
// column l.
struct TauMatrix {
  Eigen::MatrixXd values;
  std::vector<int> row_idx;
  std::vector<int> col_idx;
};

// Mean over rows of the sample variance (n-1) across each row's columns.
// Throws when there are fewer than 2 columns.
double total_heterogeneity(const TauMatrix& matrix);

enum class Smoother { Mean, Kernel, Regression };

// ---------------------------------------------------------------------------
// Factorized tau engine.
//
// Every source presents tau as a bilinear form over "product features":
//   tau(x_col, w_row) = sum_t feat_t(x) * load_t(w),   feat_0(x) = 1.
// Conditional-expectation smoothing is linear in tau, so a smoothed matrix is
// the same bilinear form with smoothed feature columns; loadings never change.
// Row variances then reduce to quadratic forms in the feature covariance,
// which is what makes n ~ 10^6 oracle runs and the blocked VIM loop cheap.
// ---------------------------------------------------------------------------

// Product of per-covariate factors; empty = the constant-1 feature.
struct ProductFeature {
  std::vector<int> dims;
  std::vector<std::function<double(double)>> factors;
};

struct SmoothSpec {
  std::vector<int> targets;  // covariates integrated out (one, or a group)
  Smoother method = Smoother::Mean;
  std::uint64_t seed = 0;    // only used by stochastic fallbacks
};

class TauFactorSource {
 public:
  TauFactorSource(Eigen::MatrixXd covariates, std::vector<ProductFeature> features,
                  Eigen::MatrixXd loadings);

  int n_features() const { return static_cast<int>(features_.size()); }
  Eigen::Index n_obs() const { return covariates_.rows(); }
  const Eigen::MatrixXd& loadings() const { return loadings_; }

  Eigen::MatrixXd row_loadings(const std::vector<int>& rows) const;
  // cols double as the smoother's averaging/fitting sample
  Eigen::MatrixXd col_features(const std::vector<int>& cols, const SmoothSpec* spec) const;

  // Feature indices whose mean-smoothed columns are constant (every factor
  // targeted); nullopt when some feature straddles the target set, in which
  // case callers must materialize col_features with the spec.
  std::optional<std::vector<int>> mean_constant_features(const std::vector<int>& targets) const;

  TauMatrix dense(const std::vector<int>& rows, const std::vector<int>& cols,
                  const SmoothSpec* spec) const;

 private:
  Eigen::MatrixXd covariates_;  // n x p
  std::vector<ProductFeature> features_;
  Eigen::MatrixXd loadings_;  // L x n
};

// Factor source for one posterior draw: feature blocks are the per-covariate
// cosine bases, loadings are tree contrasts against w0; values carry the
// original outcome scale.
std::unique_ptr<TauFactorSource> draw_tau_source(const FitContext& ctx, const PosteriorDraw& draw,
                                                 const Eigen::VectorXd& w0_raw);

// ---------------------------------------------------------------------------
// Estimand operations over posterior draws
// ---------------------------------------------------------------------------

Eigen::VectorXd cate_draws(const PosteriorSet& set, const Eigen::VectorXd& x_raw,
                           const ExposureContrast& contrast);
PosteriorSummary cate(const PosteriorSet& set, const Eigen::VectorXd& x_raw,
                      const ExposureContrast& contrast, double level = 0.95);

Eigen::VectorXd ate_draws(const PosteriorSet& set, const ExposureContrast& contrast);
PosteriorSummary ate(const PosteriorSet& set, const ExposureContrast& contrast,
                     double level = 0.95);

// Per-draw CATE at each row of points_raw (rows are covariate points):
// out(draw, point).
Eigen::MatrixXd cate_draws_at(const PosteriorSet& set, const Eigen::MatrixXd& points_raw,
                              const ExposureContrast& contrast);

TauMatrix tau_matrix(const PosteriorSet& set, std::size_t draw_idx, const std::vector<int>& rows,
                     const std::vector<int>& cols, const Eigen::VectorXd& w0_raw);

TauMatrix smooth_out_covariate(const PosteriorSet& set, std::size_t draw_idx,
                               const std::vector<int>& rows, const std::vector<int>& cols,
                               const Eigen::VectorXd& w0_raw, const std::vector<int>& targets,
                               Smoother method);

struct VimOptions {
  Smoother smoother = Smoother::Mean;
  int blocks = 0;  // 0: ceil(n / 500)
  std::uint64_t seed = 0;
  std::vector<std::vector<int>> groups;  // empty: one target per covariate
  int threads = 1;
};

struct VimResult {
  Eigen::VectorXd phi;      // per draw
  Eigen::MatrixXd phi_t;    // draws x targets
  Eigen::MatrixXd psi_raw;  // 1 - phi_t/phi; NaN rows where phi ~ 0
  Eigen::MatrixXd psi;      // clamped to [0, 1]
  std::vector<int> defined;
  int undefined_count = 0;
  int blocks = 1;
  Smoother smoother = Smoother::Mean;
  std::vector<std::vector<int>> targets;
};

VimResult vim(const PosteriorSet& set, const Eigen::VectorXd& w0_raw, const VimOptions& options);

// Same engine against injected sources (analytic truths, oracles): one source
// per "draw".
VimResult vim_from_sources(
    const std::function<std::unique_ptr<TauFactorSource>(std::size_t)>& source_for_draw,
    std::size_t n_draws, Eigen::Index n_obs, const std::vector<std::vector<int>>& targets,
    const VimOptions& options);

struct DifferenceTest {
  double lower = 0.0;
  double upper = 0.0;
  bool reject = false;
};

// Equal-tailed (1-alpha) interval of per-draw psi_j - psi_k; rejects iff 0 is
// outside. Requires >= 50 defined draws.
DifferenceTest vim_difference_test(const VimResult& result, int j, int k, double alpha = 0.05);

struct HeteroCurve {
  Eigen::VectorXd grid_raw;
  Eigen::MatrixXd values;  // draws x grid: identified h_j(x_j, w1) - h_j(x_j, w0)
  std::vector<PosteriorSummary> summaries;
};

HeteroCurve hetero_curve(const PosteriorSet& set, int j, const ExposureContrast& contrast,
                         const Eigen::VectorXd& grid_raw, double level = 0.95);

// Exposure-side importance: the transpose estimand, mean smoother only.
// Dense path with per-entry re-evaluation; intended for modest n and a draw
// subsample (it has no factorization to lean on).
struct ExposureVimOptions {
  int blocks = 0;  // 0: ceil(n / 200)
  std::uint64_t seed = 0;
  std::size_t max_draws = 100;
  int threads = 1;
};

VimResult vim_exposure(const PosteriorSet& set, const Eigen::VectorXd& w0_raw,
                       const ExposureVimOptions& options);

// Per-coordinate range check of contrast levels against the raw exposure
// ranges recorded in the normalization maps.
std::vector<std::string> contrast_warnings(const FitContext& ctx, const ExposureContrast& contrast);

namespace detail {

// Seeded Fisher-Yates partition into K nearly equal blocks.
std::vector<std::vector<int>> make_blocks(Eigen::Index n, int k, std::uint64_t seed);

// Gauss-Hermite nodes/weights (physicists'), cached per order.
void gauss_hermite(int order, Eigen::VectorXd& nodes, Eigen::VectorXd& weights);

// mean over rows of Var_cols for a factor block, plus per-target values.
struct BlockPhi {
  double phi = 0.0;
  Eigen::VectorXd phi_t;
};

BlockPhi block_phi(const TauFactorSource& src, const std::vector<int>& block,
                   const std::vector<std::vector<int>>& targets, Smoother method,
                   std::uint64_t seed);

}  // namespace detail

}  // namespace sepbart
