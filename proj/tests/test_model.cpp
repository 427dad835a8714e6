#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "sepbart/model.hpp"
#include "sepbart/serialize.hpp"

using namespace sepbart;

namespace {

// small synthetic problem on the normalized scale
std::pair<Dataset, NormalizationInfo> toy_normalized(int n, int p, int q, std::uint64_t seed,
                                                     bool null_outcome = false) {
  Rng rng(seed);
  Dataset raw;
  raw.y.resize(n);
  raw.X.resize(n, p);
  raw.W.resize(n, q);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) raw.X(i, j) = rng.normal();
    for (int j = 0; j < q; ++j) raw.W(i, j) = rng.normal();
    raw.y[i] = null_outcome ? rng.normal() * 1e-6 + std::sin(double(i))
                            : raw.X(i, 0) + raw.W(i, 0) + 0.5 * rng.normal();
  }
  for (int j = 0; j < p; ++j) raw.covariate_names.push_back("x" + std::to_string(j + 1));
  for (int j = 0; j < q; ++j) raw.exposure_names.push_back("w" + std::to_string(j + 1));
  auto [norm, info] = normalize(raw);
  if (null_outcome) norm.y.setZero();
  return {std::move(norm), std::move(info)};
}

FitConfig small_config() {
  FitConfig cfg;
  cfg.iterations = 40;
  cfg.burn_in = 20;
  cfg.thin = 4;
  cfg.trees_f = 8;
  cfg.trees_g = 8;
  cfg.trees_h = 4;
  cfg.seed = 12;
  return cfg;
}

}  // namespace

TEST_CASE("config validation enumerates every problem at once") {
  FitConfig cfg;
  cfg.iterations = 10;
  cfg.burn_in = 10;   // not < iterations
  cfg.thin = 0;       // < 1
  cfg.chains = 0;     // < 1
  cfg.trees_h = 0;    // < 1
  auto errs = cfg.validate();
  CHECK(errs.size() == 4);
}

TEST_CASE("recentering identities hold on every retained draw") {
  auto [norm, info] = toy_normalized(80, 2, 2, 99);
  FitConfig cfg = small_config();
  PosteriorSet set = fit_model(norm, info, cfg);
  REQUIRE(set.n_draws() >= 4);

  Rng probe(7);
  for (std::size_t k = 0; k < set.n_draws(); ++k) {
    const PosteriorDraw& d = set.draw(k);
    IdentifiedView view = recenter(d.state, info.x_anchor, info.w_anchor);

    CHECK(std::abs(view.f(info.x_anchor)) <= 1e-8);
    CHECK(std::abs(view.g(info.w_anchor)) <= 1e-8);
    for (int r = 0; r < 10; ++r) {
      Eigen::VectorXd x(2), w(2);
      x << probe.uniform(), probe.uniform();
      w << probe.uniform(), probe.uniform();
      for (int j = 0; j < 2; ++j) {
        CHECK(std::abs(view.h(j, info.x_anchor[j], w)) <= 1e-8);
        CHECK(std::abs(view.h(j, x[j], info.w_anchor)) <= 1e-8);
      }
      // telescoping: identified components reproduce the raw surface
      CHECK(std::abs(view.mu(x, w) - view.mu_raw(x, w)) <= 1e-10);
    }
  }
}

TEST_CASE("training-point caches equal on-demand evaluation") {
  auto [norm, info] = toy_normalized(60, 2, 1, 5);
  FitConfig cfg = small_config();
  PosteriorSet set = fit_model(norm, info, cfg);
  const PosteriorDraw& d = set.draw(0);
  IdentifiedView view = recenter(d.state, info.x_anchor, info.w_anchor);
  for (int i = 0; i < 60; i += 7) {
    Eigen::VectorXd x = set.ctx.Xn.row(i).transpose();
    Eigen::VectorXd w = set.ctx.Wn.row(i).transpose();
    CHECK(std::abs(d.c_ident - view.c()) <= 1e-12);
    CHECK(std::abs(d.f_ident[i] - view.f(x)) <= 1e-12);
    CHECK(std::abs(d.g_ident[i] - view.g(w)) <= 1e-12);
    for (int j = 0; j < 2; ++j) CHECK(std::abs(d.h_ident(i, j) - view.h(j, x[j], w)) <= 1e-12);
    double mu_cached =
        info.destandardize_y(d.c_ident + d.f_ident[i] + d.g_ident[i] + d.h_ident.row(i).sum());
    CHECK(predict_mu(set.ctx, d, x, w) == doctest::Approx(mu_cached).epsilon(1e-12));
  }
}

TEST_CASE("null outcome keeps the fitted surface near zero") {
  auto [norm, info] = toy_normalized(100, 2, 2, 21, /*null_outcome=*/true);
  FitConfig cfg = small_config();
  cfg.iterations = 200;
  cfg.burn_in = 100;
  cfg.thin = 2;
  PosteriorSet set = fit_model(norm, info, cfg);

  // posterior mean of mu at training points, standardized scale
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(100);
  for (std::size_t k = 0; k < set.n_draws(); ++k) {
    const PosteriorDraw& d = set.draw(k);
    acc.array() += d.c_ident + d.f_ident.array() + d.g_ident.array() + d.h_ident.rowwise().sum().array();
  }
  acc /= static_cast<double>(set.n_draws());
  CHECK(acc.cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("fits are deterministic and draw files round-trip bit-exactly") {
  auto [norm, info] = toy_normalized(50, 2, 2, 31);
  FitConfig cfg = small_config();
  cfg.chains = 2;

  PosteriorSet a = fit_model(norm, info, cfg);
  PosteriorSet b = fit_model(norm, info, cfg);
  save_draws("./draws_a.jsonl", a, "h");
  save_draws("./draws_b.jsonl", b, "h");

  auto slurp = [](const char* p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  std::string ta = slurp("./draws_a.jsonl"), tb = slurp("./draws_b.jsonl");
  CHECK(ta == tb);
  CHECK(!ta.empty());

  PosteriorSet c = load_draws("./draws_a.jsonl");
  save_draws("./draws_c.jsonl", c, "h");
  CHECK(slurp("./draws_c.jsonl") == ta);

  // reloaded caches are bit-identical to the originals
  REQUIRE(c.n_draws() == a.n_draws());
  for (std::size_t k = 0; k < a.n_draws(); ++k) {
    CHECK(a.draw(k).c_ident == c.draw(k).c_ident);
    CHECK((a.draw(k).f_ident - c.draw(k).f_ident).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.draw(k).h_ident - c.draw(k).h_ident).cwiseAbs().maxCoeff() == 0.0);
  }
  std::remove("./draws_a.jsonl");
  std::remove("./draws_b.jsonl");
  std::remove("./draws_c.jsonl");
}

TEST_CASE("parallel chains reproduce serial chains") {
  auto [norm, info] = toy_normalized(40, 1, 1, 77);
  FitConfig cfg = small_config();
  cfg.chains = 2;
  cfg.threads = 2;
  PosteriorSet par = fit_model(norm, info, cfg);
  cfg.threads = 1;
  PosteriorSet ser = fit_model(norm, info, cfg);
  REQUIRE(par.n_draws() == ser.n_draws());
  for (std::size_t k = 0; k < par.n_draws(); ++k)
    CHECK(par.draw(k).state.c0 == ser.draw(k).state.c0);
}

TEST_CASE("sigma2 draws stay positive") {
  auto [norm, info] = toy_normalized(50, 1, 1, 41);
  FitConfig cfg = small_config();
  PosteriorSet set = fit_model(norm, info, cfg);
  for (std::size_t k = 0; k < set.n_draws(); ++k) CHECK(set.draw(k).state.sigma2 > 0.0);
}
