#pragma once

// Exhaustive reference for the gap-penalized monotone alignment: every
// strictly increasing column choice for the rows is enumerated.

#include <cstddef>
#include <limits>
#include <vector>

#include "ghostspec/alignment.hpp"

namespace oracle {

struct BruteAlignment {
  double best_cost = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> best_cols;
  std::size_t paths = 0;
};

// Costs are accumulated row by row as (cost + gap * rho) + d, the same
// association the recurrence uses, so equal paths give equal doubles.
inline double path_cost(const ghostspec::DistanceMatrix& d, const std::vector<std::size_t>& cols, double rho) {
  double cost = d(0, cols[0]);
  for (std::size_t i = 1; i < cols.size(); ++i) {
    cost = cost + static_cast<double>(cols[i] - cols[i - 1] - 1) * rho;
    cost = cost + d(i, cols[i]);
  }
  return cost;
}

inline BruteAlignment enumerate_alignments(const ghostspec::DistanceMatrix& d, double rho) {
  BruteAlignment out;
  const std::size_t n = d.rows(), m = d.cols();
  std::vector<std::size_t> cols(n);
  auto rec = [&](auto&& self, std::size_t i, std::size_t first) -> void {
    if (i == n) {
      ++out.paths;
      const double c = path_cost(d, cols, rho);
      if (c < out.best_cost) {
        out.best_cost = c;
        out.best_cols = cols;
      }
      return;
    }
    for (std::size_t j = first; j + (n - i) <= m; ++j) {
      cols[i] = j;
      self(self, i + 1, j + 1);
    }
  };
  rec(rec, 0, 0);
  return out;
}

}  // namespace oracle
