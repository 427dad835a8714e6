#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace sepbart {

struct Dataset {
  Eigen::VectorXd y;  // outcome, model scale
  Eigen::MatrixXd X;  // n x p covariates
  Eigen::MatrixXd W;  // n x q exposures
  std::string outcome_name = "y";
  std::vector<std::string> covariate_names;
  std::vector<std::string> exposure_names;

  Eigen::Index n() const { return y.size(); }
  Eigen::Index p() const { return X.cols(); }
  Eigen::Index q() const { return W.cols(); }

  // n >= 2, p >= 1, q >= 1, all entries finite; throws otherwise.
  void validate() const;
};

// Monotone empirical-quantile map raw -> (0, 1], rank/n with mid-ranks on ties.
// Piecewise-linear between observed values, constant outside their range.
class QuantileMap {
 public:
  static QuantileMap fit(const Eigen::Ref<const Eigen::VectorXd>& column, const std::string& name);

  double to_unit(double raw) const;
  double from_unit(double u) const;

  const std::vector<double>& knots() const { return values_; }
  const std::vector<double>& levels() const { return quants_; }
  static QuantileMap from_parts(std::vector<double> values, std::vector<double> quants);

 private:
  std::vector<double> values_;  // unique sorted raw values
  std::vector<double> quants_;  // mid-rank quantile of each value
};

struct NormalizationInfo {
  std::vector<QuantileMap> x_maps;
  std::vector<QuantileMap> w_maps;
  double y_center = 0.0;
  double y_scale = 1.0;
  Eigen::VectorXd x_anchor;  // column means of normalized X
  Eigen::VectorXd w_anchor;  // column means of normalized W

  Eigen::VectorXd normalize_x(const Eigen::VectorXd& raw) const;
  Eigen::VectorXd normalize_w(const Eigen::VectorXd& raw) const;
  double standardize_y(double raw) const { return (raw - y_center) / y_scale; }
  double destandardize_y(double std) const { return y_center + y_scale * std; }
};

// Quantile-normalizes every X and W column and centers/scales y (sd with n-1).
// Throws on constant columns, naming the column.
std::pair<Dataset, NormalizationInfo> normalize(const Dataset& ds);

Dataset load_csv(const std::string& path, const std::string& outcome_col,
                 const std::vector<std::string>& covariate_cols,
                 const std::vector<std::string>& exposure_cols);

// Shortest-round-trip doubles; header row y,x...,w... in dataset order.
void write_csv(const std::string& path, const Dataset& ds);

// Equal-tailed sample quantile, linear interpolation between order statistics.
double sample_quantile(Eigen::VectorXd values, double prob);

}  // namespace sepbart
