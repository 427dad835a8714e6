#include "sepbart/diagnostics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/QR>

namespace sepbart {

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

double psrf(const std::vector<Eigen::VectorXd>& chains) {
  const std::size_t c = chains.size();
  if (c < 2) throw std::invalid_argument("psrf: need at least 2 chains");
  const Eigen::Index m = chains[0].size();
  for (const auto& ch : chains)
    if (ch.size() != m) throw std::invalid_argument("psrf: chains must have equal length");
  if (m < 10) throw std::invalid_argument("psrf: chains must have length >= 10");

  Eigen::VectorXd means(static_cast<Eigen::Index>(c));
  double W = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    double mu = chains[i].mean();
    means[static_cast<Eigen::Index>(i)] = mu;
    W += (chains[i].array() - mu).square().sum() / static_cast<double>(m - 1);
  }
  W /= static_cast<double>(c);
  double grand = means.mean();
  double B_over_m = (means.array() - grand).square().sum() / static_cast<double>(c - 1);
  if (W <= 0.0) {
    if (B_over_m <= 0.0) return 1.0;  // identical constant chains
    return std::numeric_limits<double>::infinity();
  }
  double mm = static_cast<double>(m);
  return std::sqrt((W * (mm - 1.0) / mm + B_over_m) / W);
}

PositivityReport positivity_report(const Dataset& raw, double delta, PositivityWindows windows) {
  raw.validate();
  const Eigen::Index n = raw.n();
  const Eigen::Index p = raw.p();
  const Eigen::Index q = raw.q();

  PositivityReport rep;
  rep.delta = delta;
  rep.windows = windows;
  rep.p0.resize(n, q);
  rep.p1.resize(n, q);

  // additive degree-3 polynomial design on raw covariates
  Eigen::MatrixXd D(n, 1 + 3 * p);
  D.col(0).setOnes();
  for (Eigen::Index j = 0; j < p; ++j) {
    D.col(1 + 3 * j) = raw.X.col(j);
    D.col(2 + 3 * j) = raw.X.col(j).array().square();
    D.col(3 + 3 * j) = raw.X.col(j).array().cube();
  }
  if (n <= D.cols())
    throw std::invalid_argument("positivity_report: need more observations than regression terms");

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(D);
  for (Eigen::Index j = 0; j < q; ++j) {
    if (qr.rank() < D.cols()) {
      std::string name = static_cast<std::size_t>(j) < raw.exposure_names.size()
                             ? raw.exposure_names[static_cast<std::size_t>(j)]
                             : "w" + std::to_string(j + 1);
      throw std::runtime_error("positivity_report: rank-deficient regression for exposure \"" +
                               name + "\"");
    }
    Eigen::VectorXd beta = qr.solve(raw.W.col(j));
    Eigen::VectorXd mean = D * beta;
    double s2 = (raw.W.col(j) - mean).squaredNorm() / static_cast<double>(n - D.cols());
    if (!(s2 > 0.0)) {
      std::string name = static_cast<std::size_t>(j) < raw.exposure_names.size()
                             ? raw.exposure_names[static_cast<std::size_t>(j)]
                             : "w" + std::to_string(j + 1);
      throw std::runtime_error("positivity_report: degenerate residual variance for exposure \"" +
                               name + "\"");
    }
    double s = std::sqrt(s2);

    double lo_a = sample_quantile(raw.W.col(j), windows.low_a);
    double lo_b = sample_quantile(raw.W.col(j), windows.low_b);
    double hi_a = sample_quantile(raw.W.col(j), windows.high_a);
    double hi_b = sample_quantile(raw.W.col(j), windows.high_b);
    for (Eigen::Index i = 0; i < n; ++i) {
      rep.p0(i, j) = normal_cdf((lo_b - mean[i]) / s) - normal_cdf((lo_a - mean[i]) / s);
      rep.p1(i, j) = normal_cdf((hi_b - mean[i]) / s) - normal_cdf((hi_a - mean[i]) / s);
    }
  }

  rep.pass.assign(static_cast<std::size_t>(n), true);
  rep.pass_by_exposure = Eigen::VectorXd::Zero(q);
  rep.joint_min.resize(n);
  int joint_count = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    bool all = true;
    double prod0 = 1.0, prod1 = 1.0;
    for (Eigen::Index j = 0; j < q; ++j) {
      bool ok = std::min(rep.p0(i, j), rep.p1(i, j)) > delta;
      if (ok) rep.pass_by_exposure[j] += 1.0;
      all = all && ok;
      prod0 *= rep.p0(i, j);
      prod1 *= rep.p1(i, j);
    }
    rep.pass[static_cast<std::size_t>(i)] = all;
    rep.joint_min[i] = std::min(prod0, prod1);
    if (all) ++joint_count;
  }
  rep.pass_by_exposure /= static_cast<double>(n);
  rep.pass_joint = static_cast<double>(joint_count) / static_cast<double>(n);
  return rep;
}

Eigen::VectorXd trimmed_ate_draws(const PosteriorSet& set, const PositivityReport& report,
                                  const ExposureContrast& contrast) {
  const Eigen::Index n = set.ctx.n();
  if (report.joint_min.size() != n)
    throw std::invalid_argument("trimmed_ate: report size does not match the fitted data");

  double median = sample_quantile(report.joint_min, 0.5);
  std::vector<int> kept;
  for (Eigen::Index i = 0; i < n; ++i)
    if (report.joint_min[i] > median) kept.push_back(static_cast<int>(i));
  if (kept.empty()) throw std::runtime_error("trimmed_ate: trimmed set is empty");

  // CATE at the kept training covariate rows, averaged per draw
  Eigen::MatrixXd points(static_cast<Eigen::Index>(kept.size()), set.ctx.p());
  for (std::size_t r = 0; r < kept.size(); ++r) {
    // training rows are already normalized; invert to raw for the shared API
    for (Eigen::Index j = 0; j < set.ctx.p(); ++j)
      points(static_cast<Eigen::Index>(r), j) =
          set.ctx.norm.x_maps[static_cast<std::size_t>(j)].from_unit(set.ctx.Xn(kept[r], j));
  }
  Eigen::MatrixXd draws = cate_draws_at(set, points, contrast);
  return draws.rowwise().mean();
}

PosteriorSummary trimmed_ate(const PosteriorSet& set, const PositivityReport& report,
                             const ExposureContrast& contrast, double level) {
  return summarize(trimmed_ate_draws(set, report, contrast), level);
}

}  // namespace sepbart
