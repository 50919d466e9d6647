#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "hmln/map_inference.hpp"

namespace hmln {

namespace detail {

inline std::string lp_number(const char* fmt, double v) {
  if (v == 0.0) v = 0.0;  // drop the sign of -0
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

inline std::string lp_term(double coef, const std::string& name,
                           const char* fmt) {
  std::string s = coef < 0.0 ? "- " : "+ ";
  s += lp_number(fmt, std::abs(coef));
  s += ' ';
  s += name;
  return s;
}

inline std::string lp_comment_safe(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

}  // namespace detail

// Writes the MAP program in CPLEX LP format. Objective terms are sorted by
// variable name with coefficients at 9 decimals; all variables are declared
// binary. Output depends only on the problem, so it is byte-stable.
inline void write_lp(const MapProblem& p, std::ostream& out) {
  out << "\\ HMLN MAP program\n";
  out << "\\ atom variables:\n";
  for (std::size_t v = 0; v < p.num_atom_vars; ++v) {
    out << "\\   " << p.variables[v].name << " = "
        << detail::lp_comment_safe(p.atom_ids[p.variables[v].source]) << '\n';
  }
  std::vector<std::size_t> order(p.variables.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return p.variables[a].name < p.variables[b].name;
  });

  out << "Maximize\n obj:";
  std::size_t written = 0;
  for (std::size_t v : order) {
    if (p.variables[v].kind == VarKind::kAtom && p.variables[v].objective == 0.0) {
      continue;
    }
    if (written != 0 && written % 4 == 0) out << "\n     ";
    out << ' '
        << detail::lp_term(p.variables[v].objective, p.variables[v].name, "%.9f");
    ++written;
  }
  if (written == 0) out << " 0";
  out << '\n';

  out << "Subject To\n";
  for (const auto& c : p.constraints) {
    out << ' ' << c.name << ':';
    for (const auto& t : c.terms) {
      out << ' ' << detail::lp_term(t.coef, p.variables[t.var].name, "%.9g");
    }
    out << (c.sense == Sense::kLessEqual ? " <= " : " >= ")
        << detail::lp_number("%.9g", c.rhs) << '\n';
  }

  out << "Binary\n";
  for (std::size_t v : order) out << ' ' << p.variables[v].name << '\n';
  out << "End\n";
}

}  // namespace hmln
