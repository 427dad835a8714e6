#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "sepbart/dataset.hpp"
#include "sepbart/rng.hpp"

using namespace sepbart;

namespace {

Dataset tiny_dataset() {
  Dataset ds;
  ds.y.resize(3);
  ds.y << 1.0, 2.0, 3.0;
  ds.X.resize(3, 1);
  ds.X << 3.0, 1.0, 2.0;
  ds.W.resize(3, 1);
  ds.W << 0.5, -0.5, 1.5;
  ds.covariate_names = {"x1"};
  ds.exposure_names = {"w1"};
  return ds;
}

std::string temp_path(const char* name) {
  return std::string("./") + name;
}

}  // namespace

TEST_CASE("load_csv parses a 3-row file") {
  std::string path = temp_path("tiny.csv");
  {
    std::ofstream f(path);
    f << "y,x1,w1\n1,3,0.5\n2,1,-0.5\n3,2,1.5\n";
  }
  Dataset ds = load_csv(path, "y", {"x1"}, {"w1"});
  CHECK(ds.n() == 3);
  CHECK(ds.p() == 1);
  CHECK(ds.q() == 1);
  CHECK(ds.y[1] == 2.0);
  CHECK(ds.X(0, 0) == 3.0);
  CHECK(ds.W(2, 0) == 1.5);
  std::remove(path.c_str());
}

TEST_CASE("load_csv errors name the offender") {
  std::string path = temp_path("bad.csv");
  {
    std::ofstream f(path);
    f << "y,x1\n1,2\n3,4\n";
  }
  CHECK_THROWS_WITH_AS(load_csv(path, "y", {"x1"}, {"w1"}),
                       doctest::Contains("\"w1\""), std::runtime_error);
  {
    std::ofstream f(path);
    f << "y,x1,w1\n1,2,3\n1,oops,3\n";
  }
  CHECK_THROWS_WITH_AS(load_csv(path, "y", {"x1"}, {"w1"}),
                       doctest::Contains("oops"), std::runtime_error);
  {
    std::ofstream f(path);
    f << "y,x1,w1\n1,2,3\n1,,3\n";
  }
  CHECK_THROWS_WITH_AS(load_csv(path, "y", {"x1"}, {"w1"}),
                       doctest::Contains("missing value"), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("quantile normalization follows rank/n with mid-rank ties") {
  Dataset ds = tiny_dataset();
  auto [norm, info] = normalize(ds);
  // column (3,1,2) -> (1.0, 1/3, 2/3)
  CHECK(norm.X(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(norm.X(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(norm.X(2, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  Dataset tied = tiny_dataset();
  tied.X << 1.0, 1.0, 2.0;
  auto [norm2, info2] = normalize(tied);
  CHECK(norm2.X(0, 0) == norm2.X(1, 0));
  CHECK(norm2.X(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(norm2.X(2, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("outcome centering and scaling") {
  Dataset ds = tiny_dataset();
  ds.y.resize(2);
  ds.y << 0.0, 2.0;
  ds.X.resize(2, 1);
  ds.X << 1.0, 2.0;
  ds.W.resize(2, 1);
  ds.W << 0.0, 1.0;
  auto [norm, info] = normalize(ds);
  // sample sd (n-1): sd(0,2) = sqrt(2); centered/scaled = (-a, a), a = 1/sqrt(2)
  double a = 1.0 / std::sqrt(2.0);
  CHECK(norm.y[0] == doctest::Approx(-a).epsilon(1e-15));
  CHECK(norm.y[1] == doctest::Approx(a).epsilon(1e-15));
  CHECK(norm.y.mean() == doctest::Approx(0.0).epsilon(1e-15));
  // inverse recovers y
  CHECK(info.destandardize_y(norm.y[0]) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(info.destandardize_y(norm.y[1]) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("constant column errors name the column") {
  Dataset ds = tiny_dataset();
  ds.X.col(0).setConstant(7.0);
  CHECK_THROWS_WITH_AS(normalize(ds), doctest::Contains("\"x1\""), std::invalid_argument);

  Dataset dy = tiny_dataset();
  dy.y.setConstant(1.0);
  CHECK_THROWS_WITH_AS(normalize(dy), doctest::Contains("\"y\""), std::invalid_argument);
}

TEST_CASE("normalize is idempotent and anchors match column means") {
  Dataset ds;
  int n = 57;
  ds.y.resize(n);
  ds.X.resize(n, 3);
  ds.W.resize(n, 2);
  Rng rng(99);
  for (int i = 0; i < n; ++i) {
    ds.y[i] = rng.normal();
    for (int j = 0; j < 3; ++j) ds.X(i, j) = rng.normal();
    for (int j = 0; j < 2; ++j) ds.W(i, j) = rng.normal();
  }
  // inject ties
  ds.X(5, 0) = ds.X(11, 0) = ds.X(29, 0);
  ds.covariate_names = {"a", "b", "c"};
  ds.exposure_names = {"u", "v"};

  auto [norm1, info1] = normalize(ds);
  auto [norm2, info2] = normalize(norm1);
  CHECK((norm2.X - norm1.X).cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK((norm2.W - norm1.W).cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-15));

  CHECK((info1.x_anchor - norm1.X.colwise().mean().transpose()).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((info1.w_anchor - norm1.W.colwise().mean().transpose()).cwiseAbs().maxCoeff() <= 1e-15);

  // observed values round-trip through the maps
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j) {
      double u = info1.x_maps[j].to_unit(ds.X(i, j));
      CHECK(info1.x_maps[j].from_unit(u) == doctest::Approx(ds.X(i, j)).epsilon(1e-12));
    }
}

TEST_CASE("sample_quantile interpolates order statistics") {
  Eigen::VectorXd v(5);
  v << 5, 1, 3, 2, 4;
  CHECK(sample_quantile(v, 0.0) == 1.0);
  CHECK(sample_quantile(v, 1.0) == 5.0);
  CHECK(sample_quantile(v, 0.5) == 3.0);
  CHECK(sample_quantile(v, 0.25) == 2.0);
  CHECK(sample_quantile(v, 0.125) == doctest::Approx(1.5));
}
