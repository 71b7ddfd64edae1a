// SPDX-License-Identifier: Apache-2.0
#include "temf/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string>

#include "temf/errors.hpp"

namespace temf {

double macro_f1(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.size() != y_pred.size()) {
    throw ContractError("macro_f1: " + std::to_string(y_true.size()) + " labels vs " +
                        std::to_string(y_pred.size()) + " predictions");
  }
  std::size_t tp[2] = {0, 0}, fp[2] = {0, 0}, fn[2] = {0, 0};
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i], p = y_pred[i];
    if ((t != 0 && t != 1) || (p != 0 && p != 1)) throw ContractError("macro_f1: labels must be 0 or 1");
    if (t == p) {
      ++tp[t];
    } else {
      ++fp[p];
      ++fn[t];
    }
  }
  double total = 0.0;
  for (int c = 0; c < 2; ++c) {
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    total += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
  }
  return total / 2.0;
}

double majority_baseline_f1(std::span<const int> y_true) {
  const auto ones = static_cast<std::size_t>(std::count(y_true.begin(), y_true.end(), 1));
  const int majority = ones > y_true.size() - ones ? 1 : 0;
  std::vector<int> pred(y_true.size(), majority);
  return macro_f1(y_true, pred);
}

void AgreementMatrix::validate() const {
  if (raters < 2) throw ContractError("agreement matrix: need at least 2 raters per item");
  if (counts.empty()) throw ContractError("agreement matrix: no items");
  const std::size_t k = counts.front().size();
  if (k < 2) throw ContractError("agreement matrix: need at least 2 categories");
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i].size() != k) {
      throw ContractError("agreement matrix: row " + std::to_string(i) + " has " + std::to_string(counts[i].size()) +
                          " categories, expected " + std::to_string(k));
    }
    int sum = 0;
    for (int c : counts[i]) {
      if (c < 0) throw ContractError("agreement matrix: negative count in row " + std::to_string(i));
      sum += c;
    }
    if (sum != raters) {
      throw ContractError("agreement matrix: row " + std::to_string(i) + " sums to " + std::to_string(sum) +
                          ", expected " + std::to_string(raters));
    }
  }
}

AgreementMatrix AgreementMatrix::parse(std::string_view text) {
  AgreementMatrix m;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    line.erase(std::remove_if(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }), line.end());
    if (line.empty()) continue;
    if (!have_header) {
      if (line.rfind("r=", 0) != 0) throw ParseError("expected header 'r=<raters>'", line_no);
      const std::string value = line.substr(2);
      auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), m.raters);
      if (ec != std::errc() || ptr != value.data() + value.size()) throw ParseError("bad rater count", line_no);
      have_header = true;
      continue;
    }
    std::vector<int> row;
    std::size_t start = 0;
    while (start <= line.size()) {
      const std::size_t comma = line.find(',', start);
      const std::string cell = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      int v = 0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw ParseError("bad count '" + cell + "'", line_no);
      }
      row.push_back(v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!m.counts.empty() && row.size() != m.counts.front().size()) {
      throw ParseError("row has " + std::to_string(row.size()) + " categories, expected " +
                           std::to_string(m.counts.front().size()),
                       line_no);
    }
    int sum = 0;
    for (int c : row) sum += c;
    if (sum != m.raters) {
      throw ParseError("row sums to " + std::to_string(sum) + ", expected " + std::to_string(m.raters), line_no);
    }
    m.counts.push_back(std::move(row));
  }
  if (!have_header) throw ParseError("missing header 'r=<raters>'", line_no == 0 ? 1 : line_no);
  if (m.counts.empty()) throw ParseError("no rating rows", line_no);
  return m;
}

AgreementMatrix AgreementMatrix::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open agreement matrix " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::optional<double> fleiss_kappa(const AgreementMatrix& m) {
  m.validate();
  const std::size_t n_items = m.counts.size();
  const std::size_t k = m.counts.front().size();
  const double r = static_cast<double>(m.raters);

  std::vector<double> category_totals(k, 0.0);
  double p_bar = 0.0;
  bool unanimous = true;
  for (const auto& row : m.counts) {
    double sq = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      sq += static_cast<double>(row[j]) * row[j];
      category_totals[j] += row[j];
    }
    p_bar += (sq - r) / (r * (r - 1.0));
    unanimous = unanimous && std::count(row.begin(), row.end(), 0) == static_cast<long>(k - 1);
  }
  p_bar /= static_cast<double>(n_items);

  double p_e = 0.0;
  for (double total : category_totals) {
    const double pj = total / (static_cast<double>(n_items) * r);
    p_e += pj * pj;
  }
  if (p_e >= 1.0) return std::nullopt;
  if (unanimous) return 1.0;
  return (p_bar - p_e) / (1.0 - p_e);
}

}  // namespace temf
