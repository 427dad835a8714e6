#include "sepbart/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sepbart {

void Dataset::validate() const {
  if (n() < 2) throw std::invalid_argument("dataset: need at least 2 rows");
  if (p() < 1) throw std::invalid_argument("dataset: need at least 1 covariate");
  if (q() < 1) throw std::invalid_argument("dataset: need at least 1 exposure");
  if (X.rows() != n() || W.rows() != n()) throw std::invalid_argument("dataset: row count mismatch");
  if (!y.allFinite()) throw std::invalid_argument("dataset: non-finite outcome value");
  if (!X.allFinite()) throw std::invalid_argument("dataset: non-finite covariate value");
  if (!W.allFinite()) throw std::invalid_argument("dataset: non-finite exposure value");
}

QuantileMap QuantileMap::fit(const Eigen::Ref<const Eigen::VectorXd>& column, const std::string& name) {
  const Eigen::Index n = column.size();
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return column[a] < column[b]; });
  if (column[order.front()] == column[order.back()])
    throw std::invalid_argument("normalize: constant column \"" + name + "\"");

  QuantileMap m;
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j < n && column[order[j]] == column[order[i]]) ++j;
    // mid-rank of the tie block, 1-based ranks i+1 .. j
    double midrank = 0.5 * static_cast<double>(i + 1 + j);
    m.values_.push_back(column[order[i]]);
    m.quants_.push_back(midrank / static_cast<double>(n));
    i = j;
  }
  return m;
}

QuantileMap QuantileMap::from_parts(std::vector<double> values, std::vector<double> quants) {
  QuantileMap m;
  m.values_ = std::move(values);
  m.quants_ = std::move(quants);
  return m;
}

double QuantileMap::to_unit(double raw) const {
  if (raw <= values_.front()) return quants_.front();
  if (raw >= values_.back()) return quants_.back();
  auto it = std::lower_bound(values_.begin(), values_.end(), raw);
  std::size_t k = static_cast<std::size_t>(it - values_.begin());
  if (values_[k] == raw) return quants_[k];
  double t = (raw - values_[k - 1]) / (values_[k] - values_[k - 1]);
  return quants_[k - 1] + t * (quants_[k] - quants_[k - 1]);
}

double QuantileMap::from_unit(double u) const {
  if (u <= quants_.front()) return values_.front();
  if (u >= quants_.back()) return values_.back();
  auto it = std::lower_bound(quants_.begin(), quants_.end(), u);
  std::size_t k = static_cast<std::size_t>(it - quants_.begin());
  if (quants_[k] == u) return values_[k];
  double t = (u - quants_[k - 1]) / (quants_[k] - quants_[k - 1]);
  return values_[k - 1] + t * (values_[k] - values_[k - 1]);
}

Eigen::VectorXd NormalizationInfo::normalize_x(const Eigen::VectorXd& raw) const {
  Eigen::VectorXd out(raw.size());
  for (Eigen::Index j = 0; j < raw.size(); ++j) out[j] = x_maps[j].to_unit(raw[j]);
  return out;
}

Eigen::VectorXd NormalizationInfo::normalize_w(const Eigen::VectorXd& raw) const {
  Eigen::VectorXd out(raw.size());
  for (Eigen::Index j = 0; j < raw.size(); ++j) out[j] = w_maps[j].to_unit(raw[j]);
  return out;
}

std::pair<Dataset, NormalizationInfo> normalize(const Dataset& ds) {
  ds.validate();
  const Eigen::Index n = ds.n();
  Dataset out = ds;
  NormalizationInfo info;

  for (Eigen::Index j = 0; j < ds.p(); ++j) {
    std::string name = j < static_cast<Eigen::Index>(ds.covariate_names.size())
                           ? ds.covariate_names[j]
                           : "x" + std::to_string(j + 1);
    info.x_maps.push_back(QuantileMap::fit(ds.X.col(j), name));
    for (Eigen::Index i = 0; i < n; ++i) out.X(i, j) = info.x_maps.back().to_unit(ds.X(i, j));
  }
  for (Eigen::Index j = 0; j < ds.q(); ++j) {
    std::string name = j < static_cast<Eigen::Index>(ds.exposure_names.size())
                           ? ds.exposure_names[j]
                           : "w" + std::to_string(j + 1);
    info.w_maps.push_back(QuantileMap::fit(ds.W.col(j), name));
    for (Eigen::Index i = 0; i < n; ++i) out.W(i, j) = info.w_maps.back().to_unit(ds.W(i, j));
  }

  info.y_center = ds.y.mean();
  double ss = (ds.y.array() - info.y_center).square().sum();
  double var = ss / static_cast<double>(n - 1);
  if (!(var > 0.0))
    throw std::invalid_argument("normalize: constant column \"" + ds.outcome_name + "\"");
  info.y_scale = std::sqrt(var);
  out.y = (ds.y.array() - info.y_center) / info.y_scale;

  info.x_anchor = out.X.colwise().mean();
  info.w_anchor = out.W.colwise().mean();
  return {std::move(out), std::move(info)};
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  for (auto& f : fields) {
    std::size_t a = f.find_first_not_of(" \t");
    std::size_t b = f.find_last_not_of(" \t");
    f = (a == std::string::npos) ? std::string() : f.substr(a, b - a + 1);
  }
  return fields;
}

double parse_cell(const std::string& s, std::size_t row, const std::string& col) {
  if (s.empty())
    throw std::runtime_error("load_csv: missing value at row " + std::to_string(row) +
                             ", column \"" + col + "\"");
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  double v = 0.0;
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw std::runtime_error("load_csv: non-numeric value \"" + s + "\" at row " +
                             std::to_string(row) + ", column \"" + col + "\"");
  return v;
}

void format_double(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace

Dataset load_csv(const std::string& path, const std::string& outcome_col,
                 const std::vector<std::string>& covariate_cols,
                 const std::vector<std::string>& exposure_cols) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open \"" + path + "\"");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty file \"" + path + "\"");
  std::vector<std::string> header = split_csv_line(line);

  auto col_index = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw std::runtime_error("load_csv: missing column \"" + name + "\" in \"" + path + "\"");
    return static_cast<std::size_t>(it - header.begin());
  };

  std::size_t yi = col_index(outcome_col);
  std::vector<std::size_t> xi, wi;
  for (const auto& c : covariate_cols) xi.push_back(col_index(c));
  for (const auto& c : exposure_cols) wi.push_back(col_index(c));

  std::vector<std::vector<double>> rows;
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv_line(line);
    if (f.size() != header.size())
      throw std::runtime_error("load_csv: row " + std::to_string(row_no) + " has " +
                               std::to_string(f.size()) + " fields, expected " +
                               std::to_string(header.size()));
    std::vector<double> r;
    r.reserve(1 + xi.size() + wi.size());
    r.push_back(parse_cell(f[yi], row_no, outcome_col));
    for (std::size_t k = 0; k < xi.size(); ++k) r.push_back(parse_cell(f[xi[k]], row_no, covariate_cols[k]));
    for (std::size_t k = 0; k < wi.size(); ++k) r.push_back(parse_cell(f[wi[k]], row_no, exposure_cols[k]));
    rows.push_back(std::move(r));
  }

  Dataset ds;
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  ds.y.resize(n);
  ds.X.resize(n, static_cast<Eigen::Index>(xi.size()));
  ds.W.resize(n, static_cast<Eigen::Index>(wi.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    ds.y[i] = rows[i][0];
    for (std::size_t k = 0; k < xi.size(); ++k) ds.X(i, static_cast<Eigen::Index>(k)) = rows[i][1 + k];
    for (std::size_t k = 0; k < wi.size(); ++k)
      ds.W(i, static_cast<Eigen::Index>(k)) = rows[i][1 + xi.size() + k];
  }
  ds.outcome_name = outcome_col;
  ds.covariate_names = covariate_cols;
  ds.exposure_names = exposure_cols;
  ds.validate();
  return ds;
}

void write_csv(const std::string& path, const Dataset& ds) {
  std::string out;
  out += ds.outcome_name;
  for (const auto& c : ds.covariate_names) out += "," + c;
  for (const auto& c : ds.exposure_names) out += "," + c;
  out += "\n";
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    format_double(out, ds.y[i]);
    for (Eigen::Index j = 0; j < ds.p(); ++j) {
      out += ",";
      format_double(out, ds.X(i, j));
    }
    for (Eigen::Index j = 0; j < ds.q(); ++j) {
      out += ",";
      format_double(out, ds.W(i, j));
    }
    out += "\n";
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_csv: cannot open \"" + path + "\" for writing");
  f << out;
}

double sample_quantile(Eigen::VectorXd values, double prob) {
  if (values.size() == 0) throw std::invalid_argument("sample_quantile: empty input");
  std::sort(values.data(), values.data() + values.size());
  if (prob <= 0.0) return values[0];
  if (prob >= 1.0) return values[values.size() - 1];
  double h = prob * static_cast<double>(values.size() - 1);
  Eigen::Index lo = static_cast<Eigen::Index>(std::floor(h));
  double t = h - static_cast<double>(lo);
  if (lo + 1 >= values.size()) return values[lo];
  return values[lo] * (1.0 - t) + values[lo + 1] * t;
}

}  // namespace sepbart
