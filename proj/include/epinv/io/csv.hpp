#pragma once

// Numeric CSV in full-precision scientific notation (%.17e).

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "epinv/errors.hpp"

namespace epinv::io {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17e", v);
  return buf;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ParseError("cannot open " + path + " for writing");
  return os;
}

/// Two columns: `id_header` (ids[i], or i when ids is empty) and `value_header`.
inline void write_indexed_csv(const std::string& path, const std::string& id_header,
                              const std::string& value_header, const VectorXd& v,
                              const std::vector<int>& ids = {}) {
  if (!ids.empty() && Index(ids.size()) != v.size()) throw ShapeMismatch("write_indexed_csv: id count mismatch");
  auto os = open_out(path);
  os << id_header << ',' << value_header << "\n";
  for (Index i = 0; i < v.size(); ++i) os << (ids.empty() ? int(i) : ids[std::size_t(i)]) << ',' << fmt(v(i)) << "\n";
}

/// Reads a two-column file written by write_indexed_csv; returns ids and values.
inline std::pair<std::vector<int>, VectorXd> read_indexed_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw ParseError(path + ": empty file");
  std::vector<int> ids;
  std::vector<double> vals;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    int id;
    char comma;
    double v;
    if (!(ls >> id >> comma >> v) || comma != ',') {
      throw ParseError(path + ": malformed row at line " + std::to_string(lineno));
    }
    ids.push_back(id);
    vals.push_back(v);
  }
  return {ids, Eigen::Map<VectorXd>(vals.data(), Index(vals.size()))};
}

/// Dense matrix, one row per line, no header.
inline void write_matrix_csv(const std::string& path, const MatrixXd& M) {
  auto os = open_out(path);
  for (Index i = 0; i < M.rows(); ++i) {
    for (Index j = 0; j < M.cols(); ++j) os << (j ? "," : "") << fmt(M(i, j));
    os << "\n";
  }
}

inline MatrixXd read_matrix_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      std::size_t pos = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &pos);
      } catch (const std::exception&) {
        throw ParseError(path + ": bad number '" + cell + "'");
      }
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) throw ParseError(path + ": ragged rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(path + ": empty matrix");
  MatrixXd M(Index(rows.size()), Index(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) M(Index(i), Index(j)) = rows[i][j];
  }
  return M;
}

}  // namespace epinv::io
