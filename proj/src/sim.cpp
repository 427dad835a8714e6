#include "sepbart/sim.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>

#include "sepbart/parallel.hpp"

namespace sepbart {

namespace {

double g_star_impl(const Eigen::VectorXd& w) {
  return (w[0] > 0.0 ? 1.0 : 0.0) + w[0] * std::exp(0.3 * w[2]) + std::atan(w[1]) +
         std::sin(w[1] * w[2] * M_PI) + std::min(std::abs(w[2]), 1.0);
}

double f_star_impl(const Eigen::VectorXd& x) { return x[0] + x[1] - 0.5 * x[2]; }

// heterogeneity multiplier: tau*(x, w) = dg(w) * (1 + mult(x))
double multiplier(ScenarioTag tag, const Eigen::VectorXd& x) {
  switch (tag) {
    case ScenarioTag::None:
      return 0.0;
    case ScenarioTag::Moderate:
      return 0.2 * (std::atan(4.0 * x[0]) + std::cos(M_PI * x[1]));
    case ScenarioTag::Strong:
      return 0.4 * (std::atan(4.0 * x[0]) + std::cos(M_PI * x[1]));
    case ScenarioTag::Violation1:
      return 0.5 * std::cos(x[0]) * std::cos(x[1]);
    case ScenarioTag::Violation2:
      return 0.35 * (x[0] < 1.0 ? 1.0 : 0.0) * (x[1] < 1.0 ? 1.0 : 0.0);
  }
  return 0.0;
}

// expectation of f(Z), Z ~ N(0,1), composite Simpson on [-10, 10]
double gauss_expect(const std::function<double(double)>& f) {
  const int n = 4000;  // even
  const double a = -10.0, b = 10.0, h = (b - a) / n;
  auto integrand = [&](double z) {
    return f(z) * std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
  };
  double acc = integrand(a) + integrand(b);
  for (int i = 1; i < n; ++i) acc += integrand(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

Eigen::VectorXd analytic_psi(ScenarioTag tag) {
  Eigen::VectorXd psi = Eigen::VectorXd::Zero(5);
  switch (tag) {
    case ScenarioTag::None:
      break;
    case ScenarioTag::Moderate:
    case ScenarioTag::Strong: {
      double va = gauss_expect([](double z) {
        double a = std::atan(4.0 * z);
        return a * a;
      });  // E arctan(4Z) = 0 by symmetry
      double vc = 0.5 * (1.0 + std::exp(-2.0 * M_PI * M_PI)) - std::exp(-M_PI * M_PI);
      psi[0] = va / (va + vc);
      psi[1] = vc / (va + vc);
      break;
    }
    case ScenarioTag::Violation1: {
      double ec = std::exp(-0.5);
      double ec2 = 0.5 * (1.0 + std::exp(-2.0));
      double varc = ec2 - ec * ec;
      double varprod = ec2 * ec2 - std::pow(ec, 4);
      psi[0] = psi[1] = 1.0 - ec * ec * varc / varprod;
      break;
    }
    case ScenarioTag::Violation2: {
      double p = normal_cdf(1.0);
      psi[0] = psi[1] = 1.0 - p / (1.0 + p);
      break;
    }
  }
  return psi;
}

double scenario_var_mult(ScenarioTag tag) {
  // Var_X of the heterogeneity multiplier
  switch (tag) {
    case ScenarioTag::None:
      return 0.0;
    case ScenarioTag::Moderate:
    case ScenarioTag::Strong: {
      double va = gauss_expect([](double z) {
        double a = std::atan(4.0 * z);
        return a * a;
      });
      double vc = 0.5 * (1.0 + std::exp(-2.0 * M_PI * M_PI)) - std::exp(-M_PI * M_PI);
      double c = tag == ScenarioTag::Moderate ? 0.2 : 0.4;
      return c * c * (va + vc);
    }
    case ScenarioTag::Violation1: {
      double ec2 = 0.5 * (1.0 + std::exp(-2.0));
      return 0.25 * (ec2 * ec2 - std::exp(-2.0));
    }
    case ScenarioTag::Violation2: {
      double p = normal_cdf(1.0);
      return 0.35 * 0.35 * (p * p - std::pow(p, 4));
    }
  }
  return 0.0;
}

Eigen::MatrixXd exposure_chol() {
  Eigen::MatrixXd sig = Eigen::MatrixXd::Constant(5, 5, 0.3);
  sig.diagonal().setOnes();
  return Eigen::LLT<Eigen::MatrixXd>(sig).matrixL();
}

}  // namespace

ScenarioTag scenario_from_string(const std::string& s) {
  if (s == "none") return ScenarioTag::None;
  if (s == "moderate") return ScenarioTag::Moderate;
  if (s == "strong") return ScenarioTag::Strong;
  if (s == "violation1") return ScenarioTag::Violation1;
  if (s == "violation2") return ScenarioTag::Violation2;
  throw std::invalid_argument("unknown scenario \"" + s + "\"");
}

std::string scenario_to_string(ScenarioTag tag) {
  switch (tag) {
    case ScenarioTag::None: return "none";
    case ScenarioTag::Moderate: return "moderate";
    case ScenarioTag::Strong: return "strong";
    case ScenarioTag::Violation1: return "violation1";
    case ScenarioTag::Violation2: return "violation2";
  }
  return "?";
}

Eigen::MatrixXd sample_covariates(int n, Rng& rng) {
  Eigen::MatrixXd X(n, 5);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 5; ++j) X(i, j) = rng.normal();
  return X;
}

Eigen::MatrixXd sample_exposures(const Eigen::MatrixXd& X, Rng& rng) {
  static const Eigen::MatrixXd L = exposure_chol();
  const Eigen::Index n = X.rows();
  Eigen::MatrixXd W(n, 5);
  Eigen::VectorXd z(5);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < 5; ++j) z[j] = rng.normal();
    Eigen::VectorXd eps = L * z;
    double x1 = X(i, 0), x2 = X(i, 1), x3 = X(i, 2), x4 = X(i, 3);
    W(i, 0) = std::exp(x1) / (1.0 + std::exp(x1)) - 0.5 + eps[0];
    W(i, 1) = 0.1 * x2 * x2 - 0.1 + eps[1];
    W(i, 2) = 0.3 * x3 + eps[2];
    W(i, 3) = std::sin(x2) + eps[3];
    W(i, 4) = 0.05 * x4 * x4 * x4 + eps[4];
  }
  return W;
}

std::pair<Dataset, GroundTruth> generate(const Scenario& scenario) {
  if (scenario.n < 50) throw std::invalid_argument("generate: scenario needs n >= 50");
  Rng rng(derive_seed(scenario.seed, 0xD6A));

  Dataset ds;
  ds.X = sample_covariates(scenario.n, rng);
  ds.W = sample_exposures(ds.X, rng);
  ds.y.resize(scenario.n);
  const ScenarioTag tag = scenario.tag;
  for (int i = 0; i < scenario.n; ++i) {
    Eigen::VectorXd x = ds.X.row(i).transpose();
    Eigen::VectorXd w = ds.W.row(i).transpose();
    double g = g_star_impl(w);
    ds.y[i] = f_star_impl(x) + g + multiplier(tag, x) * g + rng.normal();
  }
  for (int j = 1; j <= 5; ++j) {
    ds.covariate_names.push_back("x" + std::to_string(j));
    ds.exposure_names.push_back("w" + std::to_string(j));
  }

  GroundTruth truth;
  truth.tag = tag;
  truth.w0 = Eigen::VectorXd::Constant(5, -0.5);
  truth.f_star = f_star_impl;
  truth.g_star = g_star_impl;
  truth.h_star = [tag](const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
    return multiplier(tag, x) * g_star_impl(w);
  };
  Eigen::VectorXd w0 = truth.w0;
  truth.tau = [tag, w0](const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
    double dg = g_star_impl(w) - g_star_impl(w0);
    return dg * (1.0 + multiplier(tag, x));
  };
  truth.psi = analytic_psi(tag);

  if (tag != ScenarioTag::None) {
    // phi = Var_X(mult) * E_W[dg^2], the latter by seeded MC
    Rng mc(0x9e55);
    const int m = 200000;
    Eigen::MatrixXd Xm = sample_covariates(m, mc);
    Eigen::MatrixXd Wm = sample_exposures(Xm, mc);
    double g0 = g_star_impl(w0);
    double acc = 0.0;
    for (int i = 0; i < m; ++i) {
      double dg = g_star_impl(Wm.row(i).transpose()) - g0;
      acc += dg * dg;
    }
    truth.phi = scenario_var_mult(tag) * acc / m;
  }
  return {std::move(ds), std::move(truth)};
}

std::unique_ptr<TauFactorSource> truth_tau_source(ScenarioTag tag, const Eigen::MatrixXd& X,
                                                  const Eigen::MatrixXd& W,
                                                  const Eigen::VectorXd& w0) {
  const Eigen::Index n = X.rows();
  std::vector<ProductFeature> features;
  features.push_back(ProductFeature{});  // constant

  double coef = 0.0;
  switch (tag) {
    case ScenarioTag::None:
      break;
    case ScenarioTag::Moderate:
    case ScenarioTag::Strong: {
      coef = tag == ScenarioTag::Moderate ? 0.2 : 0.4;
      ProductFeature f1;
      f1.dims = {0};
      f1.factors = {[](double u) { return std::atan(4.0 * u); }};
      features.push_back(std::move(f1));
      ProductFeature f2;
      f2.dims = {1};
      f2.factors = {[](double u) { return std::cos(M_PI * u); }};
      features.push_back(std::move(f2));
      break;
    }
    case ScenarioTag::Violation1: {
      coef = 0.5;
      ProductFeature f;
      f.dims = {0, 1};
      f.factors = {[](double u) { return std::cos(u); }, [](double u) { return std::cos(u); }};
      features.push_back(std::move(f));
      break;
    }
    case ScenarioTag::Violation2: {
      coef = 0.35;
      ProductFeature f;
      f.dims = {0, 1};
      f.factors = {[](double u) { return u < 1.0 ? 1.0 : 0.0; },
                   [](double u) { return u < 1.0 ? 1.0 : 0.0; }};
      features.push_back(std::move(f));
      break;
    }
  }

  const Eigen::Index L = static_cast<Eigen::Index>(features.size());
  Eigen::MatrixXd loads(L, n);
  double g0 = g_star_impl(w0);
  for (Eigen::Index k = 0; k < n; ++k) {
    double dg = g_star_impl(W.row(k).transpose()) - g0;
    loads(0, k) = dg;
    for (Eigen::Index t = 1; t < L; ++t) loads(t, k) = coef * dg;
  }
  return std::make_unique<TauFactorSource>(X, std::move(features), std::move(loads));
}

TrueQuantities true_quantities(ScenarioTag tag, const ExposureContrast& contrast, int mc_draws,
                               std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x0AC1E));
  Eigen::MatrixXd X = sample_covariates(mc_draws, rng);
  Eigen::MatrixXd W = sample_exposures(X, rng);

  TrueQuantities out;
  std::vector<std::vector<int>> targets;
  for (int j = 0; j < 5; ++j) targets.push_back({j});

  VimOptions opt;
  opt.blocks = 1;
  opt.smoother = Smoother::Mean;
  VimResult res = vim_from_sources(
      [&](std::size_t) { return truth_tau_source(tag, X, W, contrast.w0); }, 1, mc_draws, targets,
      opt);
  out.phi = res.phi[0];
  out.psi = res.defined.empty() ? Eigen::VectorXd::Zero(5)
                                : res.psi_raw.row(0).transpose();

  double g1 = g_star_impl(contrast.w1), g0v = g_star_impl(contrast.w0);
  double acc = 0.0;
  for (int i = 0; i < mc_draws; ++i)
    acc += (g1 - g0v) * (1.0 + multiplier(tag, X.row(i).transpose()));
  out.ate = acc / mc_draws;
  return out;
}

StudyReport replicate_study(const StudyOptions& options) {
  const int R = options.replicates;
  if (R < 1) throw std::invalid_argument("replicate_study: need at least 1 replicate");

  StudyOptions opt = options;
  if (opt.contrast.w0.size() == 0) opt.contrast.w0 = Eigen::VectorXd::Constant(5, -0.5);
  if (opt.contrast.w1.size() == 0) opt.contrast.w1 = Eigen::VectorXd::Constant(5, 0.5);

  StudyReport report;
  report.options = opt;
  report.replicates.resize(static_cast<std::size_t>(R));
  {
    Scenario probe = opt.scenario;
    probe.seed = derive_seed(opt.scenario.seed, 0);
    report.true_psi = generate(probe).second.psi;
  }

  const std::uint64_t master = opt.scenario.seed;
  parallel_for(static_cast<std::size_t>(R), opt.threads, [&](std::size_t r) {
    ReplicateResult& res = report.replicates[r];
    try {
      Scenario sc = opt.scenario;
      sc.seed = derive_seed(master, r);
      auto [ds, truth] = generate(sc);
      auto [norm, info] = normalize(ds);

      FitConfig fit_cfg = opt.fit;
      fit_cfg.seed = derive_seed(master, 0x1000000 + r);
      fit_cfg.threads = 1;
      PosteriorSet set = fit_model(norm, info, fit_cfg);

      // fresh covariate test locations
      Rng point_rng(derive_seed(master, 0x2000000 + r));
      Eigen::MatrixXd points = sample_covariates(opt.cate_points, point_rng);
      Eigen::MatrixXd cates = cate_draws_at(set, points, opt.contrast);  // draws x points
      double rmse = 0.0;
      int covered = 0;
      for (int pt = 0; pt < opt.cate_points; ++pt) {
        double truth_cate = truth.tau(points.row(pt).transpose(), opt.contrast.w1) -
                            truth.tau(points.row(pt).transpose(), opt.contrast.w0);
        PosteriorSummary s = summarize(cates.col(pt), 0.95);
        double err = s.mean - truth_cate;
        rmse += err * err;
        if (truth_cate >= s.lower && truth_cate <= s.upper) ++covered;
      }
      res.cate_rmse = std::sqrt(rmse / opt.cate_points);
      res.coverage = static_cast<double>(covered) / opt.cate_points;

      Eigen::VectorXd ates = ate_draws(set, opt.contrast);
      res.ate_mean = ates.mean();
      {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < ds.X.rows(); ++i)
          acc += truth.tau(ds.X.row(i).transpose(), opt.contrast.w1) -
                 truth.tau(ds.X.row(i).transpose(), opt.contrast.w0);
        res.true_ate = acc / static_cast<double>(ds.X.rows());
      }

      VimOptions vopt = opt.vim;
      vopt.threads = 1;
      vopt.seed = derive_seed(master, 0x3000000 + r);
      VimResult vim_res = vim(set, opt.contrast.w0, vopt);

      const Eigen::Index T = vim_res.psi.cols();
      res.psi_mean = Eigen::VectorXd::Zero(T);
      res.psi_raw_mean = Eigen::VectorXd::Zero(T);
      res.phi_mean = 0.0;
      for (int d : vim_res.defined) {
        res.psi_mean += vim_res.psi.row(d).transpose();
        res.psi_raw_mean += vim_res.psi_raw.row(d).transpose();
      }
      if (!vim_res.defined.empty()) {
        res.psi_mean /= static_cast<double>(vim_res.defined.size());
        res.psi_raw_mean /= static_cast<double>(vim_res.defined.size());
      }
      res.phi_mean = vim_res.phi.mean();

      res.reject = Eigen::MatrixXd::Zero(T, T);
      for (Eigen::Index j = 0; j < T; ++j)
        for (Eigen::Index k = j + 1; k < T; ++k) {
          DifferenceTest t = vim_difference_test(vim_res, static_cast<int>(j),
                                                 static_cast<int>(k), opt.alpha);
          res.reject(j, k) = t.reject ? 1.0 : 0.0;
        }

      if (opt.blocking_compare) {
        auto mean_psi = [](const VimResult& v) {
          Eigen::VectorXd m = Eigen::VectorXd::Zero(v.psi.cols());
          for (int d : v.defined) m += v.psi.row(d).transpose();
          if (!v.defined.empty()) m /= static_cast<double>(v.defined.size());
          return m;
        };
        VimOptions full = vopt;
        full.blocks = 1;
        res.psi_full = mean_psi(vim(set, opt.contrast.w0, full));
        VimOptions block10 = vopt;
        block10.blocks = 10;
        res.psi_block = mean_psi(vim(set, opt.contrast.w0, block10));
        // Small: one random ~100-observation subset, used square
        int ksmall = std::max(1, static_cast<int>(set.ctx.n() / 100));
        auto blocks = detail::make_blocks(set.ctx.n(), ksmall, vopt.seed ^ 0x5a5a);
        std::vector<std::vector<int>> tgt;
        for (int j = 0; j < static_cast<int>(set.ctx.p()); ++j) tgt.push_back({j});
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(tgt.size()));
        int defined = 0;
        for (std::size_t d = 0; d < set.n_draws(); ++d) {
          auto src = draw_tau_source(set.ctx, set.draw(d), opt.contrast.w0);
          auto bp = detail::block_phi(*src, blocks[0], tgt, Smoother::Mean, vopt.seed);
          if (bp.phi > 1e-12) {
            ++defined;
            for (Eigen::Index t = 0; t < acc.size(); ++t)
              acc[t] += std::min(1.0, std::max(0.0, 1.0 - bp.phi_t[t] / bp.phi));
          }
        }
        res.psi_small = defined > 0 ? (acc / defined).eval() : acc;
      }
      res.ok = true;
    } catch (const std::exception& e) {
      res.ok = false;
      res.error = e.what();
    }
  });

  int ok_count = 0;
  for (const auto& r : report.replicates) {
    if (!r.ok) {
      ++report.failures;
      continue;
    }
    ++ok_count;
    report.mean_rmse += r.cate_rmse;
    report.mean_coverage += r.coverage;
    if (report.mean_psi.size() == 0) {
      report.mean_psi = Eigen::VectorXd::Zero(r.psi_mean.size());
      report.rejection_rate = Eigen::MatrixXd::Zero(r.reject.rows(), r.reject.cols());
    }
    report.mean_psi += r.psi_mean;
    report.rejection_rate += r.reject;
  }
  if (ok_count > 0) {
    report.mean_rmse /= ok_count;
    report.mean_coverage /= ok_count;
    report.mean_psi /= ok_count;
    report.rejection_rate /= ok_count;
  }
  return report;
}

}  // namespace sepbart
