#pragma once

#include <charconv>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "core.hpp"
#include "error.hpp"
#include "eval.hpp"

namespace missforecast {

// Splits one CSV record. Double-quoted fields may contain commas and "" escapes.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"' && k + 1 < line.size() && line[k + 1] == '"') {
        cur += '"';
        ++k;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) throw InputError("unterminated quote in CSV line");
  out.push_back(std::move(cur));
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

inline bool is_missing_cell(const std::string& s) {
  const auto t = trim(s);
  return t.empty() || t == "NA";
}

inline double parse_number(const std::string& s, std::size_t row, const std::string& col) {
  const auto t = trim(s);
  double v = 0.0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size() || !std::isfinite(v))
    throw InputError("row " + std::to_string(row) + ", column '" + col + "': not a number: '" + t + "'");
  return v;
}

// Header row, one record per line; empty or NA cells are missing. Every column
// other than the outcome is a predictor.
inline MaskedDataset read_dataset_csv(std::istream& in, const std::string& outcome) {
  std::string line;
  if (!std::getline(in, line)) throw InputError("dataset CSV is empty");
  auto header = split_csv_line(line);
  for (auto& h : header) h = trim(h);
  std::size_t ycol = header.size();
  for (std::size_t k = 0; k < header.size(); ++k)
    if (header[k] == outcome) ycol = k;
  if (ycol == header.size()) throw InputError("outcome column '" + outcome + "' not in header");
  std::vector<std::string> names;
  for (std::size_t k = 0; k < header.size(); ++k)
    if (k != ycol) names.push_back(header[k]);
  if (names.empty()) throw InputError("dataset CSV has no predictor columns");

  std::vector<std::vector<double>> xs;
  std::vector<std::uint8_t> mx, my;
  std::vector<double> ys;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw InputError("row " + std::to_string(row) + " has " + std::to_string(f.size()) +
                       " fields, header has " + std::to_string(header.size()));
    std::vector<double> x;
    for (std::size_t k = 0; k < f.size(); ++k) {
      const bool miss = is_missing_cell(f[k]);
      const double v = miss ? 0.0 : parse_number(f[k], row, header[k]);
      if (k == ycol) {
        my.push_back(miss ? 1 : 0);
        ys.push_back(v);
      } else {
        mx.push_back(miss ? 1 : 0);
        x.push_back(v);
      }
    }
    xs.push_back(std::move(x));
  }
  if (xs.empty()) throw InputError("dataset CSV has no data rows");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < names.size(); ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = xs[i][j];
  Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  return MaskedDataset(std::move(x), std::move(mx), std::move(y), std::move(my), std::move(names),
                       outcome);
}

// Predictors in column order, then the outcome; missing cells written as NA.
inline void write_dataset_csv(std::ostream& os, const MaskedDataset& ds) {
  for (const auto& n : ds.column_names()) os << n << ',';
  os << ds.outcome_name() << '\n';
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (std::size_t j = 0; j < ds.p(); ++j)
      os << (ds.x_missing(i, j) ? std::string("NA") : format_real(ds.x(i, j))) << ',';
    os << (ds.y_missing(i) ? std::string("NA") : format_real(ds.y(i))) << '\n';
  }
}

}  // namespace missforecast
