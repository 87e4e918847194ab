// Text format for StateSpace files used by the analyze/convert commands:
// three `key = value` header lines (n, m, p), then the rows of A, B, C, D
// as whitespace-separated decimals, one matrix row per line, with a blank
// line between matrices. See docs/formats.md for the grammar.
#pragma once

#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "smamba/errors.hpp"
#include "smamba/ssm.hpp"

namespace smamba {

namespace detail {

struct LineReader {
  std::istream& in;
  int line_no = 0;
  bool next(std::string& out) {
    if (!std::getline(in, out)) return false;
    ++line_no;
    if (!out.empty() && out.back() == '\r') out.pop_back();
    return true;
  }
};

inline bool is_blank(const std::string& s) {
  return s.find_first_not_of(" \t") == std::string::npos;
}

inline Index parse_header(LineReader& r, const std::string& key) {
  std::string line;
  do {
    if (!r.next(line))
      throw ParseError(r.line_no + 1, "expected `" + key + " = <count>`");
  } while (is_blank(line));
  std::istringstream ss(line);
  std::string k, eq;
  long long v = -1;
  ss >> k >> eq >> v;
  if (k != key || eq != "=" || v < 0 || !ss)
    throw ParseError(r.line_no, "expected `" + key + " = <count>`");
  return static_cast<Index>(v);
}

inline Matrix parse_matrix(LineReader& r, Index rows, Index cols,
                           const std::string& name) {
  Matrix m(rows, cols);
  std::string line;
  for (Index i = 0; i < rows; ++i) {
    do {
      if (!r.next(line))
        throw ParseError(r.line_no + 1, "missing row of matrix " + name);
    } while (is_blank(line));
    std::istringstream ss(line);
    for (Index j = 0; j < cols; ++j) {
      double v;
      if (!(ss >> v))
        throw ParseError(r.line_no, "bad entry in matrix " + name);
      if (!std::isfinite(v))
        throw ParseError(r.line_no, "non-finite entry in matrix " + name);
      m(i, j) = v;
    }
    std::string rest;
    if (ss >> rest)
      throw ParseError(r.line_no, "too many entries in matrix " + name);
  }
  return m;
}

}  // namespace detail

inline StateSpace read_statespace(std::istream& in) {
  detail::LineReader r{in};
  const Index n = detail::parse_header(r, "n");
  const Index m = detail::parse_header(r, "m");
  const Index p = detail::parse_header(r, "p");
  if (n < 1) throw ParseError(r.line_no, "n must be >= 1");
  if (m < 1 || p < 1) throw ParseError(r.line_no, "m and p must be >= 1");
  Matrix a = detail::parse_matrix(r, n, n, "A");
  Matrix b = detail::parse_matrix(r, n, m, "B");
  Matrix c = detail::parse_matrix(r, p, n, "C");
  Matrix d = detail::parse_matrix(r, p, m, "D");
  return StateSpace(std::move(a), std::move(b), std::move(c), std::move(d));
}

inline StateSpace read_statespace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open statespace file: " + path);
  return read_statespace(in);
}

inline void write_statespace(std::ostream& out, const StateSpace& s) {
  out << "n = " << s.n() << "\n"
      << "m = " << s.m() << "\n"
      << "p = " << s.p() << "\n";
  const auto emit = [&out](const Matrix& m) {
    out << "\n";
    out << std::setprecision(17);
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) {
        if (j) out << " ";
        out << m(i, j);
      }
      out << "\n";
    }
  };
  emit(s.A);
  emit(s.B);
  emit(s.C);
  emit(s.D);
}

inline void write_statespace_file(const std::string& path, const StateSpace& s) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open output file: " + path);
  write_statespace(out, s);
}

}  // namespace smamba
