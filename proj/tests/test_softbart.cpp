#include <doctest.h>

#include <cmath>

#include "sepbart/softbart.hpp"

using namespace sepbart;

namespace {

// Dense-covariance evidence oracle: log N(r; 0, sigma2 I + v L L'), computed
// directly, independent of the precision-form path in leaf_system.
double dense_log_evidence(const Eigen::MatrixXd& lambda, const Eigen::VectorXd& r, double sigma2,
                          double leaf_var) {
  const Eigen::Index n = r.size();
  Eigen::MatrixXd S = leaf_var * (lambda * lambda.transpose());
  S.diagonal().array() += sigma2;
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) logdet += std::log(llt.matrixLLT()(i, i));
  logdet *= 2.0;
  Eigen::VectorXd Sinv_r = llt.solve(r);
  return -0.5 * n * std::log(2.0 * M_PI) - 0.5 * logdet - 0.5 * r.dot(Sinv_r);
}

Eigen::MatrixXd random_unit_inputs(int n, int dim, Rng& rng) {
  Eigen::MatrixXd v(n, dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) v(i, j) = rng.uniform();
  return v;
}

}  // namespace

TEST_CASE("rng distribution sanity") {
  Rng rng(2024);
  const int n = 200000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    double g = rng.gamma(3.0);
    sum += g;
    sum2 += g * g;
  }
  double mean = sum / n, var = sum2 / n - mean * mean;
  CHECK(mean == doctest::Approx(3.0).epsilon(0.02));
  CHECK(var == doctest::Approx(3.0).epsilon(0.05));

  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(s / n == doctest::Approx(0.0).epsilon(0.02));
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.02));

  Eigen::VectorXd conc(4);
  conc << 0.5, 1.0, 2.0, 3.5;
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd d = rng.dirichlet(conc);
    CHECK(d.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.minCoeff() >= 0.0);
  }
}

TEST_CASE("forest prediction basics") {
  ForestConfig cfg;
  cfg.n_trees = 3;
  Forest f = Forest::make(2, cfg);
  Eigen::VectorXd v(2);
  v << 0.5, 0.5;
  CHECK(predict_forest(f, v) == 0.0);

  cfg.n_trees = 1;
  Forest f1 = Forest::make(2, cfg);
  f1.trees[0].nodes()[0].leaf_value = 1.5;
  CHECK(predict_forest(f1, v) == doctest::Approx(1.5));
}

TEST_CASE("forest prediction equals the sum of tree predictions") {
  Rng rng(88);
  ForestConfig cfg;
  cfg.n_trees = 7;
  Forest f = Forest::make(3, cfg);
  TreePrior prior;
  SplitProbs s = SplitProbs::uniform(3);
  // mutate trees into random shapes
  for (auto& t : f.trees)
    for (int k = 0; k < 5; ++k) {
      MoveProposal mp = propose_move(t, s, prior, rng);
      t = mp.tree;
      for (auto& nd : t.nodes())
        if (nd.is_leaf()) nd.leaf_value = rng.normal();
    }
  for (int k = 0; k < 100; ++k) {
    Eigen::VectorXd v(3);
    v << rng.uniform(), rng.uniform(), rng.uniform();
    double total = 0.0;
    for (const auto& t : f.trees) total += predict(t, v.data(), f.bandwidth);
    CHECK(predict_forest(f, v) == doctest::Approx(total).epsilon(1e-12));
  }
}

TEST_CASE("leaf evidence matches the dense-covariance oracle") {
  Rng rng(404);
  for (int rep = 0; rep < 20; ++rep) {
    int n = 8, b = 1 + rng.uniform_int(3);
    Eigen::MatrixXd lam(n, b);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < b; ++j) lam(i, j) = rng.uniform();
    Eigen::VectorXd r(n);
    for (int i = 0; i < n; ++i) r[i] = rng.normal();
    double sigma2 = 0.5 + rng.uniform();
    double v = 0.05 + 0.3 * rng.uniform();

    // rel evidence differences must match dense differences across two designs
    Eigen::MatrixXd lam2(n, b + 1);
    lam2.leftCols(b) = lam;
    for (int i = 0; i < n; ++i) lam2(i, b) = rng.uniform();

    auto s1 = detail::leaf_system(lam, r, sigma2, v);
    auto s2 = detail::leaf_system(lam2, r, sigma2, v);
    double dense1 = dense_log_evidence(lam, r, sigma2, v);
    double dense2 = dense_log_evidence(lam2, r, sigma2, v);
    CHECK(s2.rel_log_evidence - s1.rel_log_evidence ==
          doctest::Approx(dense2 - dense1).epsilon(1e-9));
  }
}

TEST_CASE("single-leaf conditional mean has the conjugate closed form") {
  Rng rng(55);
  const int n = 40;
  Eigen::MatrixXd lam = Eigen::MatrixXd::Ones(n, 1);
  Eigen::VectorXd r(n);
  for (int i = 0; i < n; ++i) r[i] = rng.normal(0.7, 1.0);
  const double sigma2 = 1.0;
  const int M = 20;
  const double sigma_mu = 0.3;
  double leaf_var = sigma_mu * sigma_mu / M;
  auto sys = detail::leaf_system(lam, r, sigma2, leaf_var);
  double mean = sys.llt.solve(sys.u)[0];
  double closed = r.sum() / (n + sigma2 * M / (sigma_mu * sigma_mu));
  CHECK(mean == doctest::Approx(closed).epsilon(1e-12));
}

TEST_CASE("marginal accept decisions replay against the dense oracle") {
  // fixed-seed replay: the same proposals re-evaluated with dense-covariance
  // evidence lead to the same accept/reject decisions
  Rng rng(606);
  const int n = 30;
  Eigen::MatrixXd V = random_unit_inputs(n, 2, rng);
  Eigen::MatrixXd Vt = V.transpose();
  Eigen::VectorXd r(n);
  for (int i = 0; i < n; ++i) r[i] = std::sin(6.0 * V(i, 0)) + 0.1 * rng.normal();

  ForestConfig cfg;
  cfg.n_trees = 1;
  Forest f = Forest::make(2, cfg);
  const double sigma2 = 0.25;

  int agreements = 0;
  for (int step = 0; step < 50; ++step) {
    double leaf_var = f.sigma_mu * f.sigma_mu / 1.0;
    Tree& tree = f.trees[0];
    Eigen::MatrixXd lam_cur, lam_prop;
    detail::leaf_weight_matrix(tree, Vt, f.bandwidth, nullptr, lam_cur);
    auto cur = detail::leaf_system(lam_cur, r, sigma2, leaf_var);

    Rng move_rng(derive_seed(909, static_cast<std::uint64_t>(step)));
    MoveProposal mp = propose_move(tree, f.split_probs, cfg.tree_prior, move_rng);
    detail::leaf_weight_matrix(mp.tree, Vt, f.bandwidth, nullptr, lam_prop);
    auto cand = detail::leaf_system(lam_prop, r, sigma2, leaf_var);

    double log_alpha_precision = cand.rel_log_evidence - cur.rel_log_evidence +
                                 mp.log_prior_ratio + mp.log_proposal_ratio;
    double log_alpha_dense = dense_log_evidence(lam_prop, r, sigma2, leaf_var) -
                             dense_log_evidence(lam_cur, r, sigma2, leaf_var) +
                             mp.log_prior_ratio + mp.log_proposal_ratio;
    double log_u = std::log(move_rng.uniform_pos());
    bool a1 = log_u < log_alpha_precision;
    bool a2 = log_u < log_alpha_dense;
    CHECK(a1 == a2);
    agreements += (a1 == a2);
    if (a1) {
      f.trees[0] = mp.tree;
      f.trees[0].set_leaf_values(detail::draw_leaves(cand, move_rng));
    } else {
      f.trees[0].set_leaf_values(detail::draw_leaves(cur, move_rng));
    }
  }
  CHECK(agreements == 50);
}

TEST_CASE("sweep shrinks toward zero on null residual") {
  Rng rng(77);
  const int n = 100;
  Eigen::MatrixXd V = random_unit_inputs(n, 2, rng);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(n);
  ForestConfig cfg;
  cfg.n_trees = 10;
  Forest f = Forest::make(2, cfg);
  for (int it = 0; it < 150; ++it) sweep(f, r, V, 1.0, rng);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += std::abs(f.predict(V.row(i).data()));
  CHECK(acc / n < 0.1);
}

TEST_CASE("sweep recovers a simple signal") {
  Rng rng(1234);
  const int n = 200;
  Eigen::MatrixXd V = random_unit_inputs(n, 2, rng);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = V(i, 0) + 0.05 * rng.normal();

  ForestConfig cfg;
  cfg.n_trees = 25;
  Forest f = Forest::make(2, cfg);
  const double sigma2 = 0.0025;

  const int total = 1000, burn = 600;
  Eigen::VectorXd post_mean = Eigen::VectorXd::Zero(21 * 21);
  int kept = 0;
  Eigen::MatrixXd grid(21 * 21, 2);
  for (int a = 0; a < 21; ++a)
    for (int b = 0; b < 21; ++b) {
      grid(a * 21 + b, 0) = a / 20.0;
      grid(a * 21 + b, 1) = b / 20.0;
    }
  for (int it = 0; it < total; ++it) {
    sweep(f, y, V, sigma2, rng);
    if (it >= burn) {
      for (int g = 0; g < grid.rows(); ++g) post_mean[g] += f.predict(grid.row(g).data());
      ++kept;
    }
  }
  post_mean /= kept;
  double rmse = 0.0;
  for (int g = 0; g < grid.rows(); ++g) {
    double err = post_mean[g] - grid(g, 0);
    rmse += err * err;
  }
  rmse = std::sqrt(rmse / grid.rows());
  CHECK(rmse < 0.1);
}

TEST_CASE("split probabilities stay on the simplex and bandwidth stays positive") {
  Rng rng(909);
  const int n = 60;
  Eigen::MatrixXd V = random_unit_inputs(n, 3, rng);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = std::cos(4.0 * V(i, 1)) + 0.2 * rng.normal();
  ForestConfig cfg;
  cfg.n_trees = 8;
  Forest f = Forest::make(3, cfg);
  for (int it = 0; it < 100; ++it) {
    sweep(f, y, V, 0.04, rng);
    CHECK(f.split_probs.probs.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(f.split_probs.probs.minCoeff() >= 0.0);
    CHECK(f.bandwidth > 0.0);
    CHECK(f.sigma_mu > 0.0);
  }
}

TEST_CASE("sweep rejects non-finite residuals") {
  Rng rng(3);
  Eigen::MatrixXd V = random_unit_inputs(10, 2, rng);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(10);
  r[3] = std::numeric_limits<double>::infinity();
  ForestConfig cfg;
  cfg.n_trees = 2;
  Forest f = Forest::make(2, cfg);
  CHECK_THROWS_AS(sweep(f, r, V, 1.0, rng), std::runtime_error);
}
