#pragma once

#include <vector>

#include <Eigen/Core>

#include "sepbart/dataset.hpp"
#include "sepbart/estimands.hpp"
#include "sepbart/model.hpp"

namespace sepbart {

// Potential scale reduction factor sqrt((W(m-1)/m + B/m) / W) with m the
// common chain length, W the mean within-chain variance, B/m the variance of
// chain means. Requires >= 2 chains of equal length >= 10. Returns +inf when
// W degenerates to zero with distinct chains.
double psrf(const std::vector<Eigen::VectorXd>& chains);

struct PositivityWindows {
  double low_a = 0.15;   // R(w0j) = [q(low_a), q(low_b)] of the j-th exposure
  double low_b = 0.35;
  double high_a = 0.65;  // R(w1j) = [q(high_a), q(high_b)]
  double high_b = 0.85;
};

struct PositivityReport {
  Eigen::MatrixXd p0;           // n x q: P(W_j in R(w0j) | X = x_i)
  Eigen::MatrixXd p1;           // n x q
  Eigen::VectorXd joint_min;    // n: min(prod_j p0, prod_j p1), working independence
  std::vector<bool> pass;       // per observation: min(p0j, p1j) > delta for all j
  Eigen::VectorXd pass_by_exposure;  // proportion passing each univariate criterion
  double pass_joint = 0.0;           // proportion passing all of them at once
  double delta = 0.01;
  PositivityWindows windows;
};

// Fits, per exposure, a Gaussian conditional with mean from an additive
// degree-3 polynomial regression on the raw covariates and constant residual
// variance; window bounds are empirical quantiles of each raw exposure.
PositivityReport positivity_report(const Dataset& raw, double delta = 0.01,
                                   PositivityWindows windows = {});

// Plug-in trimmed ATE: per-draw average CATE over observations with
// min(p0, p1) strictly above its sample median. Throws when the trimmed set
// is empty (exact ties at the median).
PosteriorSummary trimmed_ate(const PosteriorSet& set, const PositivityReport& report,
                             const ExposureContrast& contrast, double level = 0.95);
Eigen::VectorXd trimmed_ate_draws(const PosteriorSet& set, const PositivityReport& report,
                                  const ExposureContrast& contrast);

}  // namespace sepbart
