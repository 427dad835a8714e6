#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sepbart/dataset.hpp"
#include "sepbart/estimands.hpp"
#include "sepbart/model.hpp"

namespace sepbart {

enum class ScenarioTag { None, Moderate, Strong, Violation1, Violation2 };

ScenarioTag scenario_from_string(const std::string& s);
std::string scenario_to_string(ScenarioTag tag);

struct Scenario {
  ScenarioTag tag = ScenarioTag::Strong;
  int n = 2000;
  std::uint64_t seed = 1;
};

struct GroundTruth {
  ScenarioTag tag = ScenarioTag::None;
  Eigen::VectorXd w0;  // reference level for tau*
  // tau*(x, w) = g*(w) - g*(w0) + h*(x, w) - h*(x, w0)
  std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)> tau;
  std::function<double(const Eigen::VectorXd&)> f_star;
  std::function<double(const Eigen::VectorXd&)> g_star;
  std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)> h_star;

  // analytic psi (Gauss-Hermite / closed-form moments); zero vector when
  // there is no heterogeneity
  Eigen::VectorXd psi;
  // phi via a seeded 2e5-draw MC at generation time (0 for the null scenario)
  double phi = 0.0;
};

// Exact §-style data-generating process: X ~ N(0, I5), W | X Gaussian with
// the nonlinear mean vector and equicorrelated covariance, outcome noise
// N(0, 1). Reproducible given the scenario seed.
std::pair<Dataset, GroundTruth> generate(const Scenario& scenario);

// the DGP's covariate and exposure samplers (shared by the oracles)
Eigen::MatrixXd sample_covariates(int n, Rng& rng);
Eigen::MatrixXd sample_exposures(const Eigen::MatrixXd& X, Rng& rng);

struct TrueQuantities {
  double phi = 0.0;
  Eigen::VectorXd psi;
  double ate = 0.0;  // E_X tau*(X, w1)
};

// Large-MC oracle (default 1e6 draws) evaluated through the estimand engine
// injected with tau*'s factor form; this is the brute-force check for the
// reported constants.
TrueQuantities true_quantities(ScenarioTag tag, const ExposureContrast& contrast,
                               int mc_draws = 1000000, std::uint64_t seed = 20240901);

// factor source for tau* over a given (X, W) sample (mean smoothing exact)
std::unique_ptr<TauFactorSource> truth_tau_source(ScenarioTag tag, const Eigen::MatrixXd& X,
                                                  const Eigen::MatrixXd& W,
                                                  const Eigen::VectorXd& w0);

struct StudyOptions {
  Scenario scenario;
  int replicates = 20;
  FitConfig fit;
  ExposureContrast contrast;  // defaults to +/-0.5 vectors when empty
  double alpha = 0.05;
  int cate_points = 100;
  VimOptions vim;
  bool blocking_compare = false;  // adds Small/Full/Block estimator variants
  int threads = 1;
};

struct ReplicateResult {
  bool ok = false;
  std::string error;
  double cate_rmse = 0.0;
  double coverage = 0.0;  // empirical 95% coverage over the test points
  Eigen::VectorXd psi_mean;
  Eigen::VectorXd psi_raw_mean;
  double phi_mean = 0.0;
  double ate_mean = 0.0;
  double true_ate = 0.0;
  Eigen::MatrixXd reject;  // p x p pairwise difference tests (upper triangle)
  // blocking comparison (posterior means), present when requested
  Eigen::VectorXd psi_small, psi_full, psi_block;
};

struct StudyReport {
  StudyOptions options;
  Eigen::VectorXd true_psi;
  std::vector<ReplicateResult> replicates;
  int failures = 0;
  double mean_rmse = 0.0;
  double mean_coverage = 0.0;
  Eigen::VectorXd mean_psi;      // mean over replicates of posterior-mean psi
  Eigen::MatrixXd rejection_rate;  // p x p
};

StudyReport replicate_study(const StudyOptions& options);

}  // namespace sepbart
