#include <doctest.h>

#include <cmath>

#include "sepbart/tsbart.hpp"

using namespace sepbart;

TEST_CASE("basis evaluation constants") {
  CosineBasisEntry flat{0.0, 0.0};
  CHECK(basis_eval(flat, 0.3) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(basis_eval(flat, 0.9) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CosineBasisEntry pi_entry{M_PI, 0.0};
  CHECK(basis_eval(pi_entry, 1.0) == doctest::Approx(-std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("random basis covariance approaches the squared-exponential kernel") {
  Rng rng(13579);
  const double rho = 1.0;
  const int draws = 100000;
  const double pairs[5][2] = {{0.1, 0.1}, {0.2, 0.5}, {0.0, 1.0}, {0.4, 0.6}, {0.8, 0.3}};
  for (const auto& pr : pairs) {
    double u = pr[0], up = pr[1];
    double sum = 0.0, sum2 = 0.0;
    for (int d = 0; d < draws; ++d) {
      CosineBasisEntry e{rng.normal() / rho, rng.uniform() * 2.0 * M_PI};
      double prod = basis_eval(e, u) * basis_eval(e, up);
      sum += prod;
      sum2 += prod * prod;
    }
    double mean = sum / draws;
    double se = std::sqrt((sum2 / draws - mean * mean) / draws);
    double truth = std::exp(-(u - up) * (u - up) / (2.0 * rho * rho));
    CHECK(std::abs(mean - truth) <= 3.0 * se);
  }
}

TEST_CASE("interaction prediction basics and the sum-of-products oracle") {
  Rng rng(24);
  ForestConfig cfg;
  cfg.n_trees = 6;
  InteractionForest f = InteractionForest::make(2, cfg, 1.0, rng);

  Eigen::VectorXd w(2);
  w << 0.3, 0.7;
  CHECK(predict_interaction(f, 0.5, w) == 0.0);  // all leaves zero

  // single tree, single leaf mu=1, flat basis -> sqrt(2) everywhere
  ForestConfig cfg1;
  cfg1.n_trees = 1;
  Rng rng1(25);
  InteractionForest f1 = InteractionForest::make(2, cfg1, 1.0, rng1);
  f1.basis.entries[0] = {0.0, 0.0};
  f1.forest.trees[0].nodes()[0].leaf_value = 1.0;
  CHECK(predict_interaction(f1, 0.2, w) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(predict_interaction(f1, 0.9, w) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));

  // random forest state: prediction equals a manual sum of products
  TreePrior prior;
  SplitProbs s = SplitProbs::uniform(2);
  for (auto& t : f.forest.trees)
    for (int k = 0; k < 4; ++k) {
      MoveProposal mp = propose_move(t, s, prior, rng);
      t = mp.tree;
      for (auto& nd : t.nodes())
        if (nd.is_leaf()) nd.leaf_value = rng.normal();
    }
  for (int k = 0; k < 100; ++k) {
    double xj = rng.uniform();
    Eigen::VectorXd wp(2);
    wp << rng.uniform(), rng.uniform();
    double manual = 0.0;
    for (int m = 0; m < f.n_trees(); ++m)
      manual += basis_eval(f.basis.entries[m], xj) *
                predict(f.forest.trees[m], wp.data(), f.forest.bandwidth);
    CHECK(predict_interaction(f, xj, wp) == doctest::Approx(manual).epsilon(1e-12));
  }
}

TEST_CASE("flat basis reduces the interaction sweep to a rescaled softbart sweep") {
  const int n = 80;
  Rng data_rng(31);
  Eigen::MatrixXd W(n, 2);
  Eigen::VectorXd x_col(n), r(n);
  for (int i = 0; i < n; ++i) {
    W(i, 0) = data_rng.uniform();
    W(i, 1) = data_rng.uniform();
    x_col[i] = data_rng.uniform();
    r[i] = std::sin(5.0 * W(i, 0)) + 0.1 * data_rng.normal();
  }

  ForestConfig cfg;
  cfg.n_trees = 5;
  cfg.update_tau = false;
  cfg.update_split_probs = false;
  cfg.update_sigma_mu = false;

  Rng rng_a(777);
  InteractionForest inter = InteractionForest::make(2, cfg, 1.0, rng_a);
  for (auto& e : inter.basis.entries) e = {0.0, 0.0};  // basis identically sqrt(2)
  double sigma_mu0 = inter.forest.sigma_mu;

  Forest plain = Forest::make(2, cfg);
  plain.sigma_mu = std::sqrt(2.0) * sigma_mu0;

  const double sigma2 = 0.04;
  Rng sweep_rng_a(4242), sweep_rng_b(4242);
  for (int it = 0; it < 25; ++it) {
    sweep_interaction(inter, r, x_col, W, sigma2, sweep_rng_a);
    sweep(plain, r, W, sigma2, sweep_rng_b);
  }

  REQUIRE(inter.forest.trees.size() == plain.trees.size());
  for (std::size_t m = 0; m < plain.trees.size(); ++m) {
    CHECK(inter.forest.trees[m].same_structure(plain.trees[m]));
    Eigen::VectorXd li = inter.forest.trees[m].leaf_values();
    Eigen::VectorXd lp = plain.trees[m].leaf_values();
    REQUIRE(li.size() == lp.size());
    for (Eigen::Index k = 0; k < li.size(); ++k)
      CHECK(std::abs(std::sqrt(2.0) * li[k] - lp[k]) < 1e-9);
  }
  // fitted functions agree pointwise
  Rng probe(5);
  for (int k = 0; k < 30; ++k) {
    Eigen::VectorXd wp(2);
    wp << probe.uniform(), probe.uniform();
    CHECK(std::abs(predict_interaction(inter, probe.uniform(), wp) - predict_forest(plain, wp)) <
          1e-9);
  }
}

TEST_CASE("interaction sweep recovers the sign pattern of a step function") {
  Rng rng(8080);
  const int n = 250;
  Eigen::MatrixXd W(n, 1);
  Eigen::VectorXd x_col(n), y(n);
  CosineBasisEntry known{2.0, 1.0};
  for (int i = 0; i < n; ++i) {
    W(i, 0) = rng.uniform();
    x_col[i] = rng.uniform();
    double step = W(i, 0) > 0.5 ? 0.5 : -0.5;
    y[i] = basis_eval(known, x_col[i]) * step + 0.05 * rng.normal();
  }

  ForestConfig cfg;
  cfg.n_trees = 10;
  InteractionForest f = InteractionForest::make(1, cfg, 1.0, rng);
  for (auto& e : f.basis.entries) e = known;

  const double sigma2 = 0.0025;
  const int total = 400, burn = 200;
  Eigen::VectorXd grid_w(8), acc(8 * 4);
  grid_w << 0.05, 0.2, 0.35, 0.45, 0.55, 0.7, 0.85, 0.95;
  Eigen::VectorXd grid_x(4);
  grid_x << 0.1, 0.35, 0.6, 0.9;
  acc.setZero();
  for (int it = 0; it < total; ++it) {
    sweep_interaction(f, y, x_col, W, sigma2, rng);
    if (it >= burn)
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 8; ++b) {
          Eigen::VectorXd wp(1);
          wp << grid_w[b];
          acc[a * 8 + b] += predict_interaction(f, grid_x[a], wp);
        }
  }
  acc /= (total - burn);
  int sign_ok = 0, considered = 0;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 8; ++b) {
      double truth = basis_eval(known, grid_x[a]) * (grid_w[b] > 0.5 ? 0.5 : -0.5);
      if (std::abs(truth) < 0.15) continue;
      ++considered;
      if (truth * acc[a * 8 + b] > 0.0) ++sign_ok;
    }
  CHECK(considered >= 20);
  CHECK(sign_ok == considered);
}

TEST_CASE("sigma_mu never exceeds the cap") {
  Rng rng(999);
  const int n = 120;
  Eigen::MatrixXd W(n, 1);
  Eigen::VectorXd x_col(n), y(n);
  for (int i = 0; i < n; ++i) {
    W(i, 0) = rng.uniform();
    x_col[i] = rng.uniform();
    y[i] = 5.0 * (W(i, 0) > 0.5 ? 1.0 : -1.0);  // strong signal pushes leaves up
  }
  ForestConfig cfg;
  cfg.n_trees = 4;
  InteractionForest f = InteractionForest::make(1, cfg, 1.0, rng);
  double cap = f.cap();
  CHECK(cap == doctest::Approx(3.5 / (2.0 * std::sqrt(4.0))));
  CHECK(f.forest.sigma_mu <= cap);
  for (int it = 0; it < 120; ++it) {
    sweep_interaction(f, y, x_col, W, 1.0, rng);
    CHECK(f.forest.sigma_mu <= cap);
  }
}

TEST_CASE("interaction prediction bound") {
  Rng rng(62);
  ForestConfig cfg;
  cfg.n_trees = 5;
  InteractionForest f = InteractionForest::make(2, cfg, 1.0, rng);
  TreePrior prior;
  SplitProbs s = SplitProbs::uniform(2);
  double max_leaf = 0.0;
  for (auto& t : f.forest.trees) {
    for (int k = 0; k < 3; ++k) t = propose_move(t, s, prior, rng).tree;
    for (auto& nd : t.nodes())
      if (nd.is_leaf()) {
        nd.leaf_value = rng.normal();
        max_leaf = std::max(max_leaf, std::abs(nd.leaf_value));
      }
  }
  double bound = std::sqrt(2.0) * f.n_trees() * max_leaf;
  for (int k = 0; k < 200; ++k) {
    Eigen::VectorXd wp(2);
    wp << rng.uniform(), rng.uniform();
    CHECK(std::abs(predict_interaction(f, rng.uniform(), wp)) <= bound + 1e-12);
  }
}
