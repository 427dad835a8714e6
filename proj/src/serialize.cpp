#include "sepbart/serialize.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace sepbart {

using nlohmann::json;

namespace {

json vec_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vec_from_json(const json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

json mat_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

Eigen::MatrixXd mat_from_json(const json& rows) {
  if (rows.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j].get<double>();
  return m;
}

json tree_to_json(const Tree& t) {
  json nodes = json::array();
  for (const auto& nd : t.nodes())
    nodes.push_back(json::array({nd.left, nd.right, nd.var, nd.cut, nd.leaf_value, nd.depth}));
  return nodes;
}

Tree tree_from_json(const json& nodes) {
  Tree t;
  t.nodes().clear();
  for (const auto& n : nodes) {
    TreeNode nd;
    nd.left = n[0].get<std::int32_t>();
    nd.right = n[1].get<std::int32_t>();
    nd.var = n[2].get<std::int32_t>();
    nd.cut = n[3].get<double>();
    nd.leaf_value = n[4].get<double>();
    nd.depth = n[5].get<std::int32_t>();
    t.nodes().push_back(nd);
  }
  return t;
}

json forest_to_json(const Forest& f) {
  json trees = json::array();
  for (const auto& t : f.trees) trees.push_back(tree_to_json(t));
  return json{{"bandwidth", f.bandwidth},
              {"sigma_mu", f.sigma_mu},
              {"split_probs", vec_to_json(f.split_probs.probs)},
              {"trees", std::move(trees)}};
}

void forest_from_json(const json& j, Forest& f) {
  f.bandwidth = j.at("bandwidth").get<double>();
  f.sigma_mu = j.at("sigma_mu").get<double>();
  f.split_probs.probs = vec_from_json(j.at("split_probs"));
  f.dim = static_cast<int>(f.split_probs.probs.size());
  f.trees.clear();
  for (const auto& t : j.at("trees")) f.trees.push_back(tree_from_json(t));
}

json quantile_map_to_json(const QuantileMap& m) {
  return json{{"values", m.knots()}, {"quants", m.levels()}};
}

QuantileMap quantile_map_from_json(const json& j) {
  return QuantileMap::from_parts(j.at("values").get<std::vector<double>>(),
                                 j.at("quants").get<std::vector<double>>());
}

}  // namespace

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json fit_config_to_json(const FitConfig& cfg) {
  return json{{"iterations", cfg.iterations},
              {"burn_in", cfg.burn_in},
              {"thin", cfg.thin},
              {"chains", cfg.chains},
              {"seed", cfg.seed},
              {"threads", cfg.threads},
              {"trees_f", cfg.trees_f},
              {"trees_g", cfg.trees_g},
              {"trees_h", cfg.trees_h},
              {"max_depth", cfg.max_depth},
              {"tau_prior_rate", cfg.tau_prior_rate},
              {"sigma_mu_scale", cfg.sigma_mu_scale},
              {"dirichlet_a", cfg.dirichlet_a},
              {"dirichlet_xi", cfg.dirichlet_xi},
              {"rho", cfg.rho},
              {"rho_update", cfg.rho_update}};
}

FitConfig fit_config_from_json(const json& j) {
  FitConfig cfg;
  cfg.iterations = j.at("iterations").get<int>();
  cfg.burn_in = j.at("burn_in").get<int>();
  cfg.thin = j.at("thin").get<int>();
  cfg.chains = j.at("chains").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.threads = j.at("threads").get<int>();
  cfg.trees_f = j.at("trees_f").get<int>();
  cfg.trees_g = j.at("trees_g").get<int>();
  cfg.trees_h = j.at("trees_h").get<int>();
  cfg.max_depth = j.at("max_depth").get<int>();
  cfg.tau_prior_rate = j.at("tau_prior_rate").get<double>();
  cfg.sigma_mu_scale = j.at("sigma_mu_scale").get<double>();
  cfg.dirichlet_a = j.at("dirichlet_a").get<double>();
  cfg.dirichlet_xi = j.at("dirichlet_xi").get<double>();
  cfg.rho = j.at("rho").get<double>();
  cfg.rho_update = j.at("rho_update").get<bool>();
  return cfg;
}

void atomic_write(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("atomic_write: cannot open \"" + tmp + "\"");
    f << content;
    if (!f) throw std::runtime_error("atomic_write: write failed for \"" + tmp + "\"");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("atomic_write: rename to \"" + path + "\" failed");
}

void save_draws(const std::string& path, const PosteriorSet& set, const std::string& config_hash) {
  std::string out;
  {
    json header{{"format_version", kDrawFormatVersion},
                {"kind", "sepbart_draws"},
                {"config", fit_config_to_json(set.config)},
                {"config_hash", config_hash},
                {"outcome_name", set.ctx.outcome_name},
                {"covariate_names", set.ctx.covariate_names},
                {"exposure_names", set.ctx.exposure_names},
                {"y_center", set.ctx.norm.y_center},
                {"y_scale", set.ctx.norm.y_scale},
                {"x_anchor", vec_to_json(set.ctx.norm.x_anchor)},
                {"w_anchor", vec_to_json(set.ctx.norm.w_anchor)},
                {"Xn", mat_to_json(set.ctx.Xn)},
                {"Wn", mat_to_json(set.ctx.Wn)},
                {"y_std", vec_to_json(set.ctx.y_std)}};
    json xmaps = json::array(), wmaps = json::array();
    for (const auto& m : set.ctx.norm.x_maps) xmaps.push_back(quantile_map_to_json(m));
    for (const auto& m : set.ctx.norm.w_maps) wmaps.push_back(quantile_map_to_json(m));
    header["x_maps"] = std::move(xmaps);
    header["w_maps"] = std::move(wmaps);
    json chain_meta = json::array();
    for (const auto& c : set.chains)
      chain_meta.push_back(json{{"chain_index", c.chain_index},
                                {"chain_seed", c.chain_seed},
                                {"n_draws", c.draws.size()}});
    header["chains"] = std::move(chain_meta);
    out += header.dump();
    out += "\n";
  }
  for (const auto& chain : set.chains) {
    for (const auto& d : chain.draws) {
      json interactions = json::array();
      for (const auto& hf : d.state.interactions) {
        json omegas = json::array(), phases = json::array();
        for (const auto& e : hf.basis.entries) {
          omegas.push_back(e.omega);
          phases.push_back(e.phase);
        }
        interactions.push_back(json{{"forest", forest_to_json(hf.forest)},
                                    {"rho", hf.basis.rho},
                                    {"omega", std::move(omegas)},
                                    {"phase", std::move(phases)}});
      }
      json line{{"c0", d.state.c0},
                {"sigma2", d.state.sigma2},
                {"f", forest_to_json(d.state.forest_f)},
                {"g", forest_to_json(d.state.forest_g)},
                {"h", std::move(interactions)}};
      out += line.dump();
      out += "\n";
    }
  }
  atomic_write(path, out);
}

PosteriorSet load_draws(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_draws: cannot open \"" + path + "\"");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_draws: empty file \"" + path + "\"");
  json header = json::parse(line);
  if (header.at("kind").get<std::string>() != "sepbart_draws")
    throw std::runtime_error("load_draws: not a draw file: \"" + path + "\"");
  if (header.at("format_version").get<int>() != kDrawFormatVersion)
    throw std::runtime_error("load_draws: unsupported format version in \"" + path + "\"");

  PosteriorSet set;
  set.config = fit_config_from_json(header.at("config"));
  set.ctx.outcome_name = header.at("outcome_name").get<std::string>();
  set.ctx.covariate_names = header.at("covariate_names").get<std::vector<std::string>>();
  set.ctx.exposure_names = header.at("exposure_names").get<std::vector<std::string>>();
  set.ctx.norm.y_center = header.at("y_center").get<double>();
  set.ctx.norm.y_scale = header.at("y_scale").get<double>();
  set.ctx.norm.x_anchor = vec_from_json(header.at("x_anchor"));
  set.ctx.norm.w_anchor = vec_from_json(header.at("w_anchor"));
  set.ctx.Xn = mat_from_json(header.at("Xn"));
  set.ctx.Wn = mat_from_json(header.at("Wn"));
  set.ctx.y_std = vec_from_json(header.at("y_std"));
  for (const auto& m : header.at("x_maps")) set.ctx.norm.x_maps.push_back(quantile_map_from_json(m));
  for (const auto& m : header.at("w_maps")) set.ctx.norm.w_maps.push_back(quantile_map_from_json(m));

  std::vector<std::pair<int, std::uint64_t>> chain_meta;
  std::vector<std::size_t> chain_sizes;
  for (const auto& c : header.at("chains")) {
    chain_meta.emplace_back(c.at("chain_index").get<int>(), c.at("chain_seed").get<std::uint64_t>());
    chain_sizes.push_back(c.at("n_draws").get<std::size_t>());
  }

  set.chains.resize(chain_meta.size());
  std::size_t chain_i = 0, in_chain = 0;
  for (std::size_t c = 0; c < chain_meta.size(); ++c) {
    set.chains[c].chain_index = chain_meta[c].first;
    set.chains[c].chain_seed = chain_meta[c].second;
    set.chains[c].draws.reserve(chain_sizes[c]);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    while (chain_i < chain_sizes.size() && in_chain >= chain_sizes[chain_i]) {
      ++chain_i;
      in_chain = 0;
    }
    if (chain_i >= chain_sizes.size())
      throw std::runtime_error("load_draws: more draws than header records in \"" + path + "\"");
    json j = json::parse(line);
    ModelState st;
    st.c0 = j.at("c0").get<double>();
    st.sigma2 = j.at("sigma2").get<double>();
    forest_from_json(j.at("f"), st.forest_f);
    forest_from_json(j.at("g"), st.forest_g);
    for (const auto& hj : j.at("h")) {
      InteractionForest hf;
      forest_from_json(hj.at("forest"), hf.forest);
      hf.basis.rho = hj.at("rho").get<double>();
      const auto& om = hj.at("omega");
      const auto& ph = hj.at("phase");
      for (std::size_t m = 0; m < om.size(); ++m)
        hf.basis.entries.push_back({om[m].get<double>(), ph[m].get<double>()});
      st.interactions.push_back(std::move(hf));
    }
    set.chains[chain_i].draws.push_back(snapshot_draw(set.ctx, st));
    ++in_chain;
  }
  return set;
}

}  // namespace sepbart
