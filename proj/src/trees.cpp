#include "sepbart/trees.hpp"

#include <array>
#include <stdexcept>

namespace sepbart {

int Tree::n_leaves() const {
  int k = 0;
  for (const auto& nd : nodes_)
    if (nd.is_leaf()) ++k;
  return k;
}

int Tree::depth() const {
  int d = 0;
  for (const auto& nd : nodes_) d = std::max(d, static_cast<int>(nd.depth));
  return d;
}

namespace {

template <typename Pred>
void dfs_collect(const std::vector<TreeNode>& nodes, Pred pred, std::vector<int>& out) {
  std::vector<int> stack{0};
  while (!stack.empty()) {
    int id = stack.back();
    stack.pop_back();
    const TreeNode& nd = nodes[static_cast<std::size_t>(id)];
    if (pred(nd)) out.push_back(id);
    if (!nd.is_leaf()) {
      // right pushed first so the left subtree is visited first
      stack.push_back(nd.right);
      stack.push_back(nd.left);
    }
  }
}

}  // namespace

std::vector<int> Tree::leaf_ids() const {
  std::vector<int> out;
  dfs_collect(nodes_, [](const TreeNode& nd) { return nd.is_leaf(); }, out);
  return out;
}

std::vector<int> Tree::growable_leaf_ids(int max_depth) const {
  std::vector<int> out;
  dfs_collect(nodes_, [max_depth](const TreeNode& nd) { return nd.is_leaf() && nd.depth < max_depth; }, out);
  return out;
}

std::vector<int> Tree::nog_ids() const {
  std::vector<int> out;
  dfs_collect(nodes_,
              [this](const TreeNode& nd) {
                return !nd.is_leaf() && nodes_[static_cast<std::size_t>(nd.left)].is_leaf() &&
                       nodes_[static_cast<std::size_t>(nd.right)].is_leaf();
              },
              out);
  return out;
}

std::vector<int> Tree::internal_ids() const {
  std::vector<int> out;
  dfs_collect(nodes_, [](const TreeNode& nd) { return !nd.is_leaf(); }, out);
  return out;
}

Eigen::VectorXd Tree::leaf_values() const {
  std::vector<int> ids = leaf_ids();
  Eigen::VectorXd v(static_cast<Eigen::Index>(ids.size()));
  for (std::size_t k = 0; k < ids.size(); ++k) v[static_cast<Eigen::Index>(k)] = nodes_[ids[k]].leaf_value;
  return v;
}

void Tree::set_leaf_values(const Eigen::VectorXd& values) {
  std::vector<int> ids = leaf_ids();
  if (static_cast<Eigen::Index>(ids.size()) != values.size())
    throw std::invalid_argument("set_leaf_values: size mismatch");
  for (std::size_t k = 0; k < ids.size(); ++k) nodes_[ids[k]].leaf_value = values[static_cast<Eigen::Index>(k)];
}

void Tree::grow(int leaf_id, int var, double cut) {
  TreeNode& nd = nodes_[static_cast<std::size_t>(leaf_id)];
  if (!nd.is_leaf()) throw std::invalid_argument("grow: node is not a leaf");
  int l = n_nodes();
  TreeNode child;
  child.depth = nd.depth + 1;
  nodes_.push_back(child);
  nodes_.push_back(child);
  TreeNode& nd2 = nodes_[static_cast<std::size_t>(leaf_id)];  // re-ref after push_back
  nd2.left = l;
  nd2.right = l + 1;
  nd2.var = var;
  nd2.cut = cut;
  nd2.leaf_value = 0.0;
}

void Tree::prune(int nog_id) {
  TreeNode& nd = nodes_[static_cast<std::size_t>(nog_id)];
  if (nd.is_leaf() || !nodes_[nd.left].is_leaf() || !nodes_[nd.right].is_leaf())
    throw std::invalid_argument("prune: node is not a no-grandchild internal node");
  nd.left = nd.right = -1;
  nd.var = -1;
  nd.cut = 0.0;
  nd.leaf_value = 0.0;

  // compact: rebuild via DFS so indices stay dense
  std::vector<TreeNode> fresh;
  fresh.reserve(nodes_.size());
  struct Item {
    int old_id;
    int new_parent;
    bool is_left;
  };
  std::vector<Item> stack{{0, -1, false}};
  while (!stack.empty()) {
    Item it = stack.back();
    stack.pop_back();
    int new_id = static_cast<int>(fresh.size());
    fresh.push_back(nodes_[static_cast<std::size_t>(it.old_id)]);
    if (it.new_parent >= 0) {
      if (it.is_left)
        fresh[static_cast<std::size_t>(it.new_parent)].left = new_id;
      else
        fresh[static_cast<std::size_t>(it.new_parent)].right = new_id;
    }
    const TreeNode& old = nodes_[static_cast<std::size_t>(it.old_id)];
    if (!old.is_leaf()) {
      stack.push_back({old.right, new_id, false});
      stack.push_back({old.left, new_id, true});
    }
  }
  nodes_ = std::move(fresh);
}

bool Tree::same_structure(const Tree& other) const {
  if (n_nodes() != other.n_nodes()) return false;
  // compare via parallel DFS
  std::vector<std::pair<int, int>> stack{{0, 0}};
  while (!stack.empty()) {
    auto [a, b] = stack.back();
    stack.pop_back();
    const TreeNode& na = nodes_[static_cast<std::size_t>(a)];
    const TreeNode& nb = other.nodes_[static_cast<std::size_t>(b)];
    if (na.is_leaf() != nb.is_leaf()) return false;
    if (!na.is_leaf()) {
      if (na.var != nb.var || na.cut != nb.cut) return false;
      stack.push_back({na.right, nb.right});
      stack.push_back({na.left, nb.left});
    }
  }
  return true;
}

void leaf_weights(const Tree& tree, const double* v, double bandwidth, std::vector<double>& out) {
  out.clear();
  const auto& nodes = tree.nodes();
  // DFS with accumulated path probability; matches leaf_ids() order
  struct Item {
    int id;
    double w;
  };
  std::vector<Item> stack;
  stack.push_back({0, 1.0});
  while (!stack.empty()) {
    Item it = stack.back();
    stack.pop_back();
    const TreeNode& nd = nodes[static_cast<std::size_t>(it.id)];
    if (nd.is_leaf()) {
      out.push_back(it.w);
      continue;
    }
    double pr = gate((v[nd.var] - nd.cut) / bandwidth);
    stack.push_back({nd.right, it.w * pr});
    stack.push_back({nd.left, it.w * (1.0 - pr)});
  }
}

double predict(const Tree& tree, const double* v, double bandwidth) {
  const auto& nodes = tree.nodes();
  if (nodes.size() == 1) return nodes[0].leaf_value;
  double acc = 0.0;
  struct Item {
    int id;
    double w;
  };
  std::vector<Item> stack;
  stack.push_back({0, 1.0});
  while (!stack.empty()) {
    Item it = stack.back();
    stack.pop_back();
    const TreeNode& nd = nodes[static_cast<std::size_t>(it.id)];
    if (nd.is_leaf()) {
      acc += it.w * nd.leaf_value;
      continue;
    }
    double pr = gate((v[nd.var] - nd.cut) / bandwidth);
    if (it.w * pr > 0.0) stack.push_back({nd.right, it.w * pr});
    if (it.w * (1.0 - pr) > 0.0) stack.push_back({nd.left, it.w * (1.0 - pr)});
  }
  return acc;
}

MoveProposal propose_move(const Tree& tree, const SplitProbs& s, const TreePrior& prior, Rng& rng) {
  std::vector<int> growable = tree.growable_leaf_ids(prior.max_depth);
  std::vector<int> nogs = tree.nog_ids();
  std::vector<int> internals = tree.internal_ids();

  double wg = growable.empty() ? 0.0 : prior.p_grow;
  double wp = nogs.empty() ? 0.0 : prior.p_prune;
  double wc = internals.empty() ? 0.0 : prior.p_change;
  double wsum = wg + wp + wc;
  if (wsum <= 0.0) throw std::runtime_error("propose_move: no feasible move");

  auto move_probs = [&](const Tree& t) {
    double g = t.growable_leaf_ids(prior.max_depth).empty() ? 0.0 : prior.p_grow;
    double p = t.nog_ids().empty() ? 0.0 : prior.p_prune;
    double c = t.internal_ids().empty() ? 0.0 : prior.p_change;
    double z = g + p + c;
    return std::array<double, 3>{g / z, p / z, c / z};
  };

  double u = rng.uniform() * wsum;
  MoveProposal out;

  if (u < wg) {
    out.kind = MoveKind::Grow;
    int pick = rng.uniform_int(static_cast<int>(growable.size()));
    int leaf = growable[static_cast<std::size_t>(pick)];
    int var = -1;
    {
      double uv = rng.uniform();
      double acc = 0.0;
      for (Eigen::Index j = 0; j < s.probs.size(); ++j) {
        acc += s.probs[j];
        if (uv <= acc || j + 1 == s.probs.size()) {
          var = static_cast<int>(j);
          break;
        }
      }
    }
    double cut = rng.uniform();
    int d = tree.nodes()[static_cast<std::size_t>(leaf)].depth;

    out.tree = tree;
    out.tree.grow(leaf, var, cut);

    double log_s = std::log(std::max(s.probs[var], 1e-300));
    double pg = prior.split_prob(d);
    double pg_child = prior.split_prob(d + 1);
    out.log_prior_ratio =
        std::log(pg) + log_s + 2.0 * std::log1p(-pg_child) - std::log1p(-pg);

    double fwd = std::log(wg / wsum) - std::log(static_cast<double>(growable.size())) + log_s;
    auto mp = move_probs(out.tree);
    double rev = std::log(mp[1]) - std::log(static_cast<double>(out.tree.nog_ids().size()));
    out.log_proposal_ratio = rev - fwd;
  } else if (u < wg + wp) {
    out.kind = MoveKind::Prune;
    int pick = rng.uniform_int(static_cast<int>(nogs.size()));
    int nog = nogs[static_cast<std::size_t>(pick)];
    const TreeNode& nd = tree.nodes()[static_cast<std::size_t>(nog)];
    int var = nd.var;
    int d = nd.depth;

    out.tree = tree;
    out.tree.prune(nog);

    double log_s = std::log(std::max(s.probs[var], 1e-300));
    double pg = prior.split_prob(d);
    double pg_child = prior.split_prob(d + 1);
    out.log_prior_ratio =
        std::log1p(-pg) - std::log(pg) - log_s - 2.0 * std::log1p(-pg_child);

    double fwd = std::log(wp / wsum) - std::log(static_cast<double>(nogs.size()));
    auto mp = move_probs(out.tree);
    double rev = std::log(mp[0]) -
                 std::log(static_cast<double>(out.tree.growable_leaf_ids(prior.max_depth).size())) +
                 log_s;
    out.log_proposal_ratio = rev - fwd;
  } else {
    out.kind = MoveKind::Change;
    int pick = rng.uniform_int(static_cast<int>(internals.size()));
    int node = internals[static_cast<std::size_t>(pick)];
    int old_var = tree.nodes()[static_cast<std::size_t>(node)].var;
    int new_var = -1;
    {
      double uv = rng.uniform();
      double acc = 0.0;
      for (Eigen::Index j = 0; j < s.probs.size(); ++j) {
        acc += s.probs[j];
        if (uv <= acc || j + 1 == s.probs.size()) {
          new_var = static_cast<int>(j);
          break;
        }
      }
    }
    double new_cut = rng.uniform();

    out.tree = tree;
    auto& nd = out.tree.nodes()[static_cast<std::size_t>(node)];
    nd.var = new_var;
    nd.cut = new_cut;

    double log_s_old = std::log(std::max(s.probs[old_var], 1e-300));
    double log_s_new = std::log(std::max(s.probs[new_var], 1e-300));
    out.log_prior_ratio = log_s_new - log_s_old;
    out.log_proposal_ratio = log_s_old - log_s_new;
  }
  return out;
}

}  // namespace sepbart
