#include "sepbart/estimands.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "sepbart/parallel.hpp"

namespace sepbart {

namespace {

constexpr double kPhiFloor = 1e-12;

Eigen::VectorXd normalize_x_point(const FitContext& ctx, const Eigen::VectorXd& x_raw) {
  if (x_raw.size() != ctx.p()) throw std::invalid_argument("covariate point has wrong dimension");
  return ctx.norm.normalize_x(x_raw);
}

Eigen::VectorXd normalize_w_point(const FitContext& ctx, const Eigen::VectorXd& w_raw) {
  if (w_raw.size() != ctx.q()) throw std::invalid_argument("exposure point has wrong dimension");
  return ctx.norm.normalize_w(w_raw);
}

std::vector<int> iota_indices(Eigen::Index n) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = static_cast<int>(i);
  return idx;
}

// loadings of one draw at an arbitrary normalized exposure point, against w0:
// index 0 the g contrast, then tree contrasts per interaction forest; original
// outcome scale.
Eigen::VectorXd draw_loads_at(const FitContext& ctx, const PosteriorDraw& d,
                              const Eigen::VectorXd& w0n, const Eigen::VectorXd& wn) {
  const ModelState& st = d.state;
  int L = 1;
  for (const auto& hf : st.interactions) L += hf.n_trees();
  Eigen::VectorXd out(L);
  out[0] = st.forest_g.predict(wn.data()) - st.forest_g.predict(w0n.data());
  int t = 1;
  for (const auto& hf : st.interactions)
    for (int m = 0; m < hf.n_trees(); ++m)
      out[t++] = predict(hf.forest.trees[static_cast<std::size_t>(m)], wn.data(), hf.forest.bandwidth) -
                 predict(hf.forest.trees[static_cast<std::size_t>(m)], w0n.data(), hf.forest.bandwidth);
  return out * ctx.norm.y_scale;
}

double silverman_bandwidth(const Eigen::VectorXd& column, int dims, Eigen::Index n) {
  double mean = column.mean();
  double sd = std::sqrt((column.array() - mean).square().sum() / std::max<Eigen::Index>(n - 1, 1));
  double expo = 1.0 / (dims + 4.0);
  return sd * std::pow(4.0 / ((dims + 2.0) * static_cast<double>(n)), expo);
}

}  // namespace

PosteriorSummary summarize(const Eigen::VectorXd& draws, double level) {
  if (draws.size() == 0) throw std::invalid_argument("summarize: no draws");
  PosteriorSummary s;
  s.n_draws = static_cast<int>(draws.size());
  s.level = level;
  s.mean = draws.mean();
  s.sd = draws.size() > 1
             ? std::sqrt((draws.array() - s.mean).square().sum() / (draws.size() - 1))
             : 0.0;
  double a = (1.0 - level) / 2.0;
  s.lower = sample_quantile(draws, a);
  s.upper = sample_quantile(draws, 1.0 - a);
  return s;
}

double total_heterogeneity(const TauMatrix& matrix) {
  const Eigen::Index nc = matrix.values.cols();
  if (nc < 2) throw std::invalid_argument("total_heterogeneity: need at least 2 columns");
  double acc = 0.0;
  for (Eigen::Index k = 0; k < matrix.values.rows(); ++k) {
    double m = matrix.values.row(k).mean();
    acc += (matrix.values.row(k).array() - m).square().sum() / static_cast<double>(nc - 1);
  }
  return acc / static_cast<double>(matrix.values.rows());
}

// ---------------------------------------------------------------------------
// TauFactorSource
// ---------------------------------------------------------------------------

TauFactorSource::TauFactorSource(Eigen::MatrixXd covariates, std::vector<ProductFeature> features,
                                 Eigen::MatrixXd loadings)
    : covariates_(std::move(covariates)), features_(std::move(features)),
      loadings_(std::move(loadings)) {
  if (features_.empty() || !features_[0].dims.empty())
    throw std::invalid_argument("TauFactorSource: feature 0 must be the constant");
  if (loadings_.rows() != static_cast<Eigen::Index>(features_.size()))
    throw std::invalid_argument("TauFactorSource: loadings/features size mismatch");
  if (loadings_.cols() != covariates_.rows())
    throw std::invalid_argument("TauFactorSource: loadings/covariates size mismatch");
}

Eigen::MatrixXd TauFactorSource::row_loadings(const std::vector<int>& rows) const {
  Eigen::MatrixXd out(loadings_.rows(), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = loadings_.col(rows[k]);
  return out;
}

std::optional<std::vector<int>> TauFactorSource::mean_constant_features(
    const std::vector<int>& targets) const {
  std::vector<int> affected;
  for (std::size_t t = 1; t < features_.size(); ++t) {
    const auto& dims = features_[t].dims;
    int overlap = 0;
    for (int d : dims)
      if (std::find(targets.begin(), targets.end(), d) != targets.end()) ++overlap;
    if (overlap == 0) continue;
    if (overlap != static_cast<int>(dims.size())) return std::nullopt;
    affected.push_back(static_cast<int>(t));
  }
  return affected;
}

Eigen::MatrixXd TauFactorSource::col_features(const std::vector<int>& cols,
                                              const SmoothSpec* spec) const {
  const Eigen::Index nc = static_cast<Eigen::Index>(cols.size());
  const Eigen::Index L = static_cast<Eigen::Index>(features_.size());
  Eigen::MatrixXd out(nc, L);
  out.col(0).setOnes();

  auto in_targets = [&](int d) {
    return spec && std::find(spec->targets.begin(), spec->targets.end(), d) != spec->targets.end();
  };

  // raw values, and the split of each feature into target / non-target parts
  for (Eigen::Index t = 1; t < L; ++t) {
    const ProductFeature& f = features_[static_cast<std::size_t>(t)];
    bool touched = false;
    if (spec)
      for (int d : f.dims) touched = touched || in_targets(d);

    if (!spec || !touched) {
      for (Eigen::Index l = 0; l < nc; ++l) {
        double v = 1.0;
        for (std::size_t a = 0; a < f.dims.size(); ++a)
          v *= f.factors[a](covariates_(cols[static_cast<std::size_t>(l)], f.dims[a]));
        out(l, t) = v;
      }
      continue;
    }

    // non-target part at each column
    Eigen::VectorXd rest(nc);
    for (Eigen::Index l = 0; l < nc; ++l) {
      double v = 1.0;
      for (std::size_t a = 0; a < f.dims.size(); ++a)
        if (!in_targets(f.dims[a]))
          v *= f.factors[a](covariates_(cols[static_cast<std::size_t>(l)], f.dims[a]));
      rest[l] = v;
    }

    switch (spec->method) {
      case Smoother::Mean: {
        // joint swap: one donor supplies every targeted coordinate
        double acc = 0.0;
        for (Eigen::Index i = 0; i < nc; ++i) {
          double v = 1.0;
          for (std::size_t a = 0; a < f.dims.size(); ++a)
            if (in_targets(f.dims[a]))
              v *= f.factors[a](covariates_(cols[static_cast<std::size_t>(i)], f.dims[a]));
          acc += v;
        }
        out.col(t) = rest * (acc / static_cast<double>(nc));
        break;
      }
      case Smoother::Kernel: {
        // Nadaraya-Watson over the non-target covariates
        std::vector<int> rest_dims;
        for (Eigen::Index d = 0; d < covariates_.cols(); ++d)
          if (!in_targets(static_cast<int>(d))) rest_dims.push_back(static_cast<int>(d));
        Eigen::MatrixXd Z(nc, static_cast<Eigen::Index>(rest_dims.size()));
        for (std::size_t a = 0; a < rest_dims.size(); ++a)
          for (Eigen::Index l = 0; l < nc; ++l)
            Z(l, static_cast<Eigen::Index>(a)) =
                covariates_(cols[static_cast<std::size_t>(l)], rest_dims[a]);
        Eigen::VectorXd h(static_cast<Eigen::Index>(rest_dims.size()));
        for (Eigen::Index a = 0; a < h.size(); ++a) {
          h[a] = silverman_bandwidth(Z.col(a), static_cast<int>(rest_dims.size()), nc);
          if (!(h[a] > 0.0)) h[a] = 1.0;  // degenerate rest-dimension: uniform weight
        }
        Eigen::VectorXd donor(nc);
        for (Eigen::Index i = 0; i < nc; ++i) {
          double v = 1.0;
          for (std::size_t a = 0; a < f.dims.size(); ++a)
            if (in_targets(f.dims[a]))
              v *= f.factors[a](covariates_(cols[static_cast<std::size_t>(i)], f.dims[a]));
          donor[i] = v;
        }
        for (Eigen::Index l = 0; l < nc; ++l) {
          double wsum = 0.0, acc = 0.0;
          for (Eigen::Index i = 0; i < nc; ++i) {
            double d2 = 0.0;
            for (Eigen::Index a = 0; a < h.size(); ++a) {
              double z = (Z(i, a) - Z(l, a)) / h[a];
              d2 += z * z;
            }
            double w = std::exp(-0.5 * d2);
            wsum += w;
            acc += w * donor[i];
          }
          if (wsum <= 0.0)
            throw std::runtime_error("smooth: kernel weights vanished for a column");
          out(l, t) = rest[l] * (acc / wsum);
        }
        break;
      }
      case Smoother::Regression: {
        // Gaussian linear fit of each targeted coordinate on the non-target
        // covariates, then Gauss-Hermite averaging per targeted factor
        std::vector<int> rest_dims;
        for (Eigen::Index d = 0; d < covariates_.cols(); ++d)
          if (!in_targets(static_cast<int>(d))) rest_dims.push_back(static_cast<int>(d));
        Eigen::MatrixXd D(nc, 1 + static_cast<Eigen::Index>(rest_dims.size()));
        D.col(0).setOnes();
        for (std::size_t a = 0; a < rest_dims.size(); ++a)
          for (Eigen::Index l = 0; l < nc; ++l)
            D(l, 1 + static_cast<Eigen::Index>(a)) =
                covariates_(cols[static_cast<std::size_t>(l)], rest_dims[a]);

        Eigen::VectorXd nodes, weights;
        detail::gauss_hermite(25, nodes, weights);

        Eigen::VectorXd smoothed = rest;
        for (std::size_t a = 0; a < f.dims.size(); ++a) {
          if (!in_targets(f.dims[a])) continue;
          Eigen::VectorXd xj(nc);
          for (Eigen::Index l = 0; l < nc; ++l)
            xj[l] = covariates_(cols[static_cast<std::size_t>(l)], f.dims[a]);
          double sdx = std::sqrt((xj.array() - xj.mean()).square().sum() /
                                 std::max<Eigen::Index>(nc - 1, 1));
          if (!(sdx > 0.0))
            throw std::runtime_error("smooth: regression on a constant covariate " +
                                     std::to_string(f.dims[a] + 1));
          Eigen::VectorXd beta = D.colPivHouseholderQr().solve(xj);
          Eigen::VectorXd mean = D * beta;
          double dof = std::max<double>(static_cast<double>(nc) - static_cast<double>(D.cols()), 1.0);
          double s = std::sqrt((xj - mean).squaredNorm() / dof);
          const auto& fac = f.factors[a];
          for (Eigen::Index l = 0; l < nc; ++l) {
            double acc = 0.0;
            for (Eigen::Index g = 0; g < nodes.size(); ++g)
              acc += weights[g] * fac(mean[l] + std::sqrt(2.0) * s * nodes[g]);
            smoothed[l] *= acc / std::sqrt(M_PI);
          }
        }
        out.col(t) = smoothed;
        break;
      }
    }
  }
  return out;
}

TauMatrix TauFactorSource::dense(const std::vector<int>& rows, const std::vector<int>& cols,
                                 const SmoothSpec* spec) const {
  TauMatrix m;
  m.row_idx = rows;
  m.col_idx = cols;
  Eigen::MatrixXd feats = col_features(cols, spec);
  Eigen::MatrixXd loads = row_loadings(rows);
  m.values = (feats * loads).transpose();  // (k, l)
  return m;
}

// ---------------------------------------------------------------------------
// draw source
// ---------------------------------------------------------------------------

std::unique_ptr<TauFactorSource> draw_tau_source(const FitContext& ctx, const PosteriorDraw& draw,
                                                 const Eigen::VectorXd& w0_raw) {
  const Eigen::Index n = ctx.n();
  const ModelState& st = draw.state;
  Eigen::VectorXd w0n = normalize_w_point(ctx, w0_raw);

  int L = 1;
  for (const auto& hf : st.interactions) L += hf.n_trees();

  std::vector<ProductFeature> features;
  features.reserve(static_cast<std::size_t>(L));
  features.push_back(ProductFeature{});
  for (int j = 0; j < static_cast<int>(st.interactions.size()); ++j) {
    const auto& hf = st.interactions[static_cast<std::size_t>(j)];
    for (int m = 0; m < hf.n_trees(); ++m) {
      CosineBasisEntry e = hf.basis.entries[static_cast<std::size_t>(m)];
      ProductFeature f;
      f.dims = {j};
      f.factors = {[e](double u) { return basis_eval(e, u); }};
      features.push_back(std::move(f));
    }
  }

  Eigen::MatrixXd Wt = ctx.Wn.transpose();
  Eigen::MatrixXd loads(L, n);
  double g_w0 = st.forest_g.predict(w0n.data());
  for (Eigen::Index k = 0; k < n; ++k)
    loads(0, k) = st.forest_g.predict(Wt.data() + k * Wt.rows()) - g_w0;
  int t = 1;
  for (const auto& hf : st.interactions) {
    for (int m = 0; m < hf.n_trees(); ++m) {
      const Tree& tree = hf.forest.trees[static_cast<std::size_t>(m)];
      double at_w0 = predict(tree, w0n.data(), hf.forest.bandwidth);
      for (Eigen::Index k = 0; k < n; ++k)
        loads(t, k) = predict(tree, Wt.data() + k * Wt.rows(), hf.forest.bandwidth) - at_w0;
      ++t;
    }
  }
  loads *= ctx.norm.y_scale;
  return std::make_unique<TauFactorSource>(ctx.Xn, std::move(features), std::move(loads));
}

// ---------------------------------------------------------------------------
// CATE / ATE
// ---------------------------------------------------------------------------

Eigen::MatrixXd cate_draws_at(const PosteriorSet& set, const Eigen::MatrixXd& points_raw,
                              const ExposureContrast& contrast) {
  const FitContext& ctx = set.ctx;
  Eigen::VectorXd w0n = normalize_w_point(ctx, contrast.w0);
  Eigen::VectorXd w1n = normalize_w_point(ctx, contrast.w1);
  Eigen::MatrixXd points_n(points_raw.rows(), points_raw.cols());
  for (Eigen::Index r = 0; r < points_raw.rows(); ++r)
    points_n.row(r) = normalize_x_point(ctx, points_raw.row(r).transpose()).transpose();

  const std::size_t nd = set.n_draws();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(nd), points_raw.rows());
  for (std::size_t k = 0; k < nd; ++k) {
    const PosteriorDraw& d = set.draw(k);
    Eigen::VectorXd l1 = draw_loads_at(ctx, d, w0n, w1n);  // already y-scaled
    // l1[t] = load_t(w1) - load_t(w0); CATE(x) = sum_t feat_t(x) l1[t]
    for (Eigen::Index r = 0; r < points_n.rows(); ++r) {
      double acc = l1[0];
      int t = 1;
      for (int j = 0; j < static_cast<int>(d.state.interactions.size()); ++j) {
        const auto& hf = d.state.interactions[static_cast<std::size_t>(j)];
        for (int m = 0; m < hf.n_trees(); ++m)
          acc += basis_eval(hf.basis.entries[static_cast<std::size_t>(m)], points_n(r, j)) * l1[t++];
      }
      out(static_cast<Eigen::Index>(k), r) = acc;
    }
  }
  return out;
}

Eigen::VectorXd cate_draws(const PosteriorSet& set, const Eigen::VectorXd& x_raw,
                           const ExposureContrast& contrast) {
  if (set.n_draws() == 0) throw std::invalid_argument("cate: no posterior draws");
  return cate_draws_at(set, x_raw.transpose(), contrast).col(0);
}

PosteriorSummary cate(const PosteriorSet& set, const Eigen::VectorXd& x_raw,
                      const ExposureContrast& contrast, double level) {
  return summarize(cate_draws(set, x_raw, contrast), level);
}

Eigen::VectorXd ate_draws(const PosteriorSet& set, const ExposureContrast& contrast) {
  if (set.n_draws() == 0) throw std::invalid_argument("ate: no posterior draws");
  const FitContext& ctx = set.ctx;
  Eigen::VectorXd w0n = normalize_w_point(ctx, contrast.w0);
  Eigen::VectorXd w1n = normalize_w_point(ctx, contrast.w1);
  const std::size_t nd = set.n_draws();
  Eigen::VectorXd out(static_cast<Eigen::Index>(nd));
  for (std::size_t k = 0; k < nd; ++k) {
    const PosteriorDraw& d = set.draw(k);
    Eigen::VectorXd l1 = draw_loads_at(ctx, d, w0n, w1n);
    double acc = l1[0];
    int t = 1;
    for (int j = 0; j < static_cast<int>(d.state.interactions.size()); ++j) {
      const auto& hf = d.state.interactions[static_cast<std::size_t>(j)];
      for (int m = 0; m < hf.n_trees(); ++m) {
        const CosineBasisEntry e = hf.basis.entries[static_cast<std::size_t>(m)];
        double mean_b = 0.0;
        for (Eigen::Index i = 0; i < ctx.n(); ++i) mean_b += basis_eval(e, ctx.Xn(i, j));
        acc += (mean_b / static_cast<double>(ctx.n())) * l1[t++];
      }
    }
    out[static_cast<Eigen::Index>(k)] = acc;
  }
  return out;
}

PosteriorSummary ate(const PosteriorSet& set, const ExposureContrast& contrast, double level) {
  return summarize(ate_draws(set, contrast), level);
}

TauMatrix tau_matrix(const PosteriorSet& set, std::size_t draw_idx, const std::vector<int>& rows,
                     const std::vector<int>& cols, const Eigen::VectorXd& w0_raw) {
  auto src = draw_tau_source(set.ctx, set.draw(draw_idx), w0_raw);
  return src->dense(rows, cols, nullptr);
}

TauMatrix smooth_out_covariate(const PosteriorSet& set, std::size_t draw_idx,
                               const std::vector<int>& rows, const std::vector<int>& cols,
                               const Eigen::VectorXd& w0_raw, const std::vector<int>& targets,
                               Smoother method) {
  auto src = draw_tau_source(set.ctx, set.draw(draw_idx), w0_raw);
  SmoothSpec spec;
  spec.targets = targets;
  spec.method = method;
  return src->dense(rows, cols, &spec);
}

// ---------------------------------------------------------------------------
// VIM engine
// ---------------------------------------------------------------------------

namespace detail {

std::vector<std::vector<int>> make_blocks(Eigen::Index n, int k, std::uint64_t seed) {
  std::vector<int> idx = iota_indices(n);
  Rng rng(derive_seed(seed, 0x626c6f636bULL));
  rng.shuffle(idx);
  std::vector<std::vector<int>> blocks(static_cast<std::size_t>(k));
  Eigen::Index base = n / k, rem = n % k, pos = 0;
  for (int b = 0; b < k; ++b) {
    Eigen::Index size = base + (b < rem ? 1 : 0);
    blocks[static_cast<std::size_t>(b)].assign(idx.begin() + pos, idx.begin() + pos + size);
    pos += size;
  }
  return blocks;
}

void gauss_hermite(int order, Eigen::VectorXd& nodes, Eigen::VectorXd& weights) {
  static std::map<int, std::pair<Eigen::VectorXd, Eigen::VectorXd>> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(order);
  if (it == cache.end()) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(order, order);
    for (int i = 0; i + 1 < order; ++i) {
      double b = std::sqrt((i + 1) / 2.0);
      J(i, i + 1) = b;
      J(i + 1, i) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    Eigen::VectorXd nd = es.eigenvalues();
    Eigen::VectorXd wt(order);
    for (int i = 0; i < order; ++i) {
      double v0 = es.eigenvectors()(0, i);
      wt[i] = std::sqrt(M_PI) * v0 * v0;
    }
    it = cache.emplace(order, std::make_pair(nd, wt)).first;
  }
  nodes = it->second.first;
  weights = it->second.second;
}

BlockPhi block_phi(const TauFactorSource& src, const std::vector<int>& block,
                   const std::vector<std::vector<int>>& targets, Smoother method,
                   std::uint64_t seed) {
  const Eigen::Index nb = static_cast<Eigen::Index>(block.size());
  if (nb < 2) throw std::invalid_argument("block_phi: block needs at least 2 observations");

  Eigen::MatrixXd feats = src.col_features(block, nullptr);
  Eigen::MatrixXd loads = src.row_loadings(block);
  Eigen::RowVectorXd mean = feats.colwise().mean();
  Eigen::MatrixXd centered = feats.rowwise() - mean;
  Eigen::MatrixXd S = (centered.adjoint() * centered) / static_cast<double>(nb - 1);
  Eigen::MatrixXd V = S * loads;
  Eigen::RowVectorXd Q = (loads.array() * V.array()).colwise().sum();

  BlockPhi out;
  out.phi = Q.mean();
  out.phi_t.resize(static_cast<Eigen::Index>(targets.size()));

  for (std::size_t t = 0; t < targets.size(); ++t) {
    std::optional<std::vector<int>> fast;
    if (method == Smoother::Mean) fast = src.mean_constant_features(targets[t]);
    if (fast) {
      const std::vector<int>& B = *fast;
      if (B.empty()) {
        out.phi_t[static_cast<Eigen::Index>(t)] = out.phi;
        continue;
      }
      Eigen::MatrixXd loadsB(static_cast<Eigen::Index>(B.size()), nb);
      Eigen::MatrixXd VB(static_cast<Eigen::Index>(B.size()), nb);
      Eigen::MatrixXd SBB(static_cast<Eigen::Index>(B.size()), static_cast<Eigen::Index>(B.size()));
      for (std::size_t a = 0; a < B.size(); ++a) {
        loadsB.row(static_cast<Eigen::Index>(a)) = loads.row(B[a]);
        VB.row(static_cast<Eigen::Index>(a)) = V.row(B[a]);
        for (std::size_t b = 0; b < B.size(); ++b)
          SBB(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = S(B[a], B[b]);
      }
      Eigen::RowVectorXd t1 = (loadsB.array() * VB.array()).colwise().sum();
      Eigen::MatrixXd U = SBB * loadsB;
      Eigen::RowVectorXd t2 = (loadsB.array() * U.array()).colwise().sum();
      out.phi_t[static_cast<Eigen::Index>(t)] = (Q - 2.0 * t1 + t2).mean();
    } else {
      SmoothSpec spec;
      spec.targets = targets[t];
      spec.method = method;
      spec.seed = seed;
      Eigen::MatrixXd feats_t = src.col_features(block, &spec);
      Eigen::RowVectorXd mean_t = feats_t.colwise().mean();
      Eigen::MatrixXd centered_t = feats_t.rowwise() - mean_t;
      Eigen::MatrixXd St = (centered_t.adjoint() * centered_t) / static_cast<double>(nb - 1);
      Eigen::MatrixXd Vt = St * loads;
      out.phi_t[static_cast<Eigen::Index>(t)] = (loads.array() * Vt.array()).colwise().sum().mean();
    }
  }
  return out;
}

}  // namespace detail

VimResult vim_from_sources(
    const std::function<std::unique_ptr<TauFactorSource>(std::size_t)>& source_for_draw,
    std::size_t n_draws, Eigen::Index n_obs, const std::vector<std::vector<int>>& targets,
    const VimOptions& options) {
  if (n_draws == 0) throw std::invalid_argument("vim: no draws");
  int K = options.blocks > 0 ? options.blocks
                             : static_cast<int>((n_obs + 499) / 500);
  if (K < 1) K = 1;
  if (n_obs < 2 * K) throw std::invalid_argument("vim: need n >= 2K observations");
  auto blocks = detail::make_blocks(n_obs, K, options.seed);

  const Eigen::Index T = static_cast<Eigen::Index>(targets.size());
  VimResult res;
  res.blocks = K;
  res.smoother = options.smoother;
  res.targets = targets;
  res.phi.resize(static_cast<Eigen::Index>(n_draws));
  res.phi_t.resize(static_cast<Eigen::Index>(n_draws), T);
  res.psi_raw.resize(static_cast<Eigen::Index>(n_draws), T);
  res.psi.resize(static_cast<Eigen::Index>(n_draws), T);

  parallel_for(n_draws, options.threads, [&](std::size_t d) {
    auto src = source_for_draw(d);
    double phi_acc = 0.0;
    Eigen::VectorXd phit_acc = Eigen::VectorXd::Zero(T);
    for (const auto& block : blocks) {
      auto bp = detail::block_phi(*src, block, targets, options.smoother, options.seed);
      phi_acc += bp.phi;
      phit_acc += bp.phi_t;
    }
    phi_acc /= blocks.size();
    phit_acc /= static_cast<double>(blocks.size());
    const Eigen::Index di = static_cast<Eigen::Index>(d);
    res.phi[di] = phi_acc;
    res.phi_t.row(di) = phit_acc.transpose();
    if (phi_acc > kPhiFloor) {
      for (Eigen::Index t = 0; t < T; ++t) {
        double raw = 1.0 - phit_acc[t] / phi_acc;
        res.psi_raw(di, t) = raw;
        res.psi(di, t) = std::min(1.0, std::max(0.0, raw));
      }
    } else {
      res.psi_raw.row(di).setConstant(std::numeric_limits<double>::quiet_NaN());
      res.psi.row(di).setConstant(std::numeric_limits<double>::quiet_NaN());
    }
  });

  for (std::size_t d = 0; d < n_draws; ++d) {
    if (res.phi[static_cast<Eigen::Index>(d)] > kPhiFloor)
      res.defined.push_back(static_cast<int>(d));
    else
      ++res.undefined_count;
  }
  return res;
}

VimResult vim(const PosteriorSet& set, const Eigen::VectorXd& w0_raw, const VimOptions& options) {
  std::vector<std::vector<int>> targets = options.groups;
  if (targets.empty())
    for (int j = 0; j < static_cast<int>(set.ctx.p()); ++j) targets.push_back({j});
  return vim_from_sources(
      [&](std::size_t d) { return draw_tau_source(set.ctx, set.draw(d), w0_raw); }, set.n_draws(),
      set.ctx.n(), targets, options);
}

DifferenceTest vim_difference_test(const VimResult& result, int j, int k, double alpha) {
  if (j < 0 || k < 0 || j >= result.psi.cols() || k >= result.psi.cols())
    throw std::invalid_argument("vim_difference_test: target index out of range");
  if (static_cast<int>(result.defined.size()) < 50)
    throw std::runtime_error("vim_difference_test: fewer than 50 defined draws (" +
                             std::to_string(result.defined.size()) + ")");
  Eigen::VectorXd diffs(static_cast<Eigen::Index>(result.defined.size()));
  for (std::size_t i = 0; i < result.defined.size(); ++i)
    diffs[static_cast<Eigen::Index>(i)] = result.psi(result.defined[i], j) - result.psi(result.defined[i], k);
  DifferenceTest t;
  t.lower = sample_quantile(diffs, alpha / 2.0);
  t.upper = sample_quantile(diffs, 1.0 - alpha / 2.0);
  t.reject = (t.lower > 0.0) || (t.upper < 0.0);
  return t;
}

HeteroCurve hetero_curve(const PosteriorSet& set, int j, const ExposureContrast& contrast,
                         const Eigen::VectorXd& grid_raw, double level) {
  const FitContext& ctx = set.ctx;
  if (j < 0 || j >= ctx.p()) throw std::invalid_argument("hetero_curve: covariate index out of range");
  Eigen::VectorXd w0n = normalize_w_point(ctx, contrast.w0);
  Eigen::VectorXd w1n = normalize_w_point(ctx, contrast.w1);

  HeteroCurve curve;
  curve.grid_raw = grid_raw;
  const std::size_t nd = set.n_draws();
  curve.values.resize(static_cast<Eigen::Index>(nd), grid_raw.size());

  for (std::size_t k = 0; k < nd; ++k) {
    const PosteriorDraw& d = set.draw(k);
    const auto& hf = d.state.interactions[static_cast<std::size_t>(j)];
    const int mh = hf.n_trees();
    Eigen::VectorXd tree_diff(mh), basis_anchor(mh);
    for (int m = 0; m < mh; ++m) {
      const Tree& tree = hf.forest.trees[static_cast<std::size_t>(m)];
      tree_diff[m] = predict(tree, w1n.data(), hf.forest.bandwidth) -
                     predict(tree, w0n.data(), hf.forest.bandwidth);
      basis_anchor[m] = basis_eval(hf.basis.entries[static_cast<std::size_t>(m)],
                                   ctx.norm.x_anchor[j]);
    }
    for (Eigen::Index g = 0; g < grid_raw.size(); ++g) {
      double xg = ctx.norm.x_maps[static_cast<std::size_t>(j)].to_unit(grid_raw[g]);
      double acc = 0.0;
      for (int m = 0; m < mh; ++m)
        acc += (basis_eval(hf.basis.entries[static_cast<std::size_t>(m)], xg) - basis_anchor[m]) *
               tree_diff[m];
      curve.values(static_cast<Eigen::Index>(k), g) = ctx.norm.y_scale * acc;
    }
  }
  for (Eigen::Index g = 0; g < grid_raw.size(); ++g)
    curve.summaries.push_back(summarize(curve.values.col(g), level));
  return curve;
}

VimResult vim_exposure(const PosteriorSet& set, const Eigen::VectorXd& w0_raw,
                       const ExposureVimOptions& options) {
  const FitContext& ctx = set.ctx;
  const Eigen::Index n = ctx.n();
  const int q = static_cast<int>(ctx.q());
  Eigen::VectorXd w0n = normalize_w_point(ctx, w0_raw);

  int K = options.blocks > 0 ? options.blocks : static_cast<int>((n + 199) / 200);
  if (K < 1) K = 1;
  if (n < 2 * K) throw std::invalid_argument("vim_exposure: need n >= 2K observations");
  auto blocks = detail::make_blocks(n, K, options.seed);

  std::size_t nd = std::min(options.max_draws, set.n_draws());
  // even subsample over the pooled draws
  std::vector<std::size_t> picks(nd);
  for (std::size_t i = 0; i < nd; ++i) picks[i] = i * set.n_draws() / nd;

  VimResult res;
  res.blocks = K;
  res.smoother = Smoother::Mean;
  for (int d = 0; d < q; ++d) res.targets.push_back({d});
  res.phi.resize(static_cast<Eigen::Index>(nd));
  res.phi_t.resize(static_cast<Eigen::Index>(nd), q);
  res.psi_raw.resize(static_cast<Eigen::Index>(nd), q);
  res.psi.resize(static_cast<Eigen::Index>(nd), q);

  parallel_for(nd, options.threads, [&](std::size_t di) {
    const PosteriorDraw& draw = set.draw(picks[di]);
    auto src = draw_tau_source(ctx, draw, w0_raw);
    double phi_acc = 0.0;
    Eigen::VectorXd phit_acc = Eigen::VectorXd::Zero(q);
    for (const auto& block : blocks) {
      const Eigen::Index nb = static_cast<Eigen::Index>(block.size());
      Eigen::MatrixXd feats = src->col_features(block, nullptr);  // nb x L
      Eigen::MatrixXd loads = src->row_loadings(block);           // L x nb
      Eigen::MatrixXd D = feats * loads;                          // (l, k)
      // variance across exposure columns for each covariate row
      auto row_var_mean = [](const Eigen::MatrixXd& M) {
        double acc = 0.0;
        for (Eigen::Index r = 0; r < M.rows(); ++r) {
          double m = M.row(r).mean();
          acc += (M.row(r).array() - m).square().sum() / static_cast<double>(M.cols() - 1);
        }
        return acc / static_cast<double>(M.rows());
      };
      phi_acc += row_var_mean(D);
      for (int d = 0; d < q; ++d) {
        Eigen::MatrixXd sm_loads = Eigen::MatrixXd::Zero(loads.rows(), nb);
        Eigen::VectorXd wp(q);
        for (Eigen::Index k = 0; k < nb; ++k) {
          for (int a = 0; a < q; ++a) wp[a] = ctx.Wn(block[static_cast<std::size_t>(k)], a);
          for (Eigen::Index i = 0; i < nb; ++i) {
            wp[d] = ctx.Wn(block[static_cast<std::size_t>(i)], d);
            sm_loads.col(k) += draw_loads_at(ctx, draw, w0n, wp);
          }
          sm_loads.col(k) /= static_cast<double>(nb);
        }
        phit_acc[d] += row_var_mean(feats * sm_loads);
      }
    }
    phi_acc /= blocks.size();
    phit_acc /= static_cast<double>(blocks.size());
    const Eigen::Index r = static_cast<Eigen::Index>(di);
    res.phi[r] = phi_acc;
    res.phi_t.row(r) = phit_acc.transpose();
    if (phi_acc > kPhiFloor) {
      for (int d = 0; d < q; ++d) {
        double raw = 1.0 - phit_acc[d] / phi_acc;
        res.psi_raw(r, d) = raw;
        res.psi(r, d) = std::min(1.0, std::max(0.0, raw));
      }
    } else {
      res.psi_raw.row(r).setConstant(std::numeric_limits<double>::quiet_NaN());
      res.psi.row(r).setConstant(std::numeric_limits<double>::quiet_NaN());
    }
  });

  for (std::size_t d = 0; d < nd; ++d) {
    if (res.phi[static_cast<Eigen::Index>(d)] > kPhiFloor)
      res.defined.push_back(static_cast<int>(d));
    else
      ++res.undefined_count;
  }
  return res;
}

std::vector<std::string> contrast_warnings(const FitContext& ctx, const ExposureContrast& contrast) {
  std::vector<std::string> warnings;
  auto check = [&](const Eigen::VectorXd& w, const char* tag) {
    for (Eigen::Index j = 0; j < w.size(); ++j) {
      const auto& map = ctx.norm.w_maps[static_cast<std::size_t>(j)];
      if (w[j] < map.knots().front() || w[j] > map.knots().back()) {
        std::string name = static_cast<std::size_t>(j) < ctx.exposure_names.size()
                               ? ctx.exposure_names[static_cast<std::size_t>(j)]
                               : "w" + std::to_string(j + 1);
        warnings.push_back(std::string(tag) + " coordinate \"" + name +
                           "\" lies outside the observed exposure range");
      }
    }
  };
  check(contrast.w0, "w0");
  check(contrast.w1, "w1");
  return warnings;
}

}  // namespace sepbart
