#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

// Closed-form reference functions written independently of the library.

namespace testing_oracles {

inline constexpr double kPi = std::numbers::pi;

// Textbook Branin, written out independently of the library.
inline double branin_reference(double x1, double x2) {
  const double b = 5.1 / (4 * kPi * kPi);
  const double c = 5 / kPi;
  const double t = 1 / (8 * kPi);
  return std::pow(x2 - b * x1 * x1 + c * x1 - 6, 2) + 10 * (1 - t) * std::cos(x1) + 10;
}

// Hartmann-3 from raw tables, alpha shifted per fidelity coordinate.
inline double hartmann3_reference(const double x[3], const double z[4]) {
  static const double alpha[4] = {1.0, 1.2, 3.0, 3.2};
  static const double A[4][3] = {{3, 10, 30}, {0.1, 10, 35}, {3, 10, 30}, {0.1, 10, 35}};
  static const double P[4][3] = {{3689e-4, 1170e-4, 2673e-4},
                                 {4699e-4, 4387e-4, 7470e-4},
                                 {1091e-4, 8732e-4, 5547e-4},
                                 {381e-4, 5743e-4, 8828e-4}};
  double sum = 0;
  for (int i = 0; i < 4; ++i) {
    double inner = 0;
    for (int j = 0; j < 3; ++j) inner += A[i][j] * (x[j] - P[i][j]) * (x[j] - P[i][j]);
    sum += (alpha[i] - 0.1 * (1 - z[i])) * std::exp(-inner);
  }
  return -sum;
}

// Dense grid, then compass search with step halving from the best few cells.
inline double hartmann3_grid_refine_minimum() {
  const double full[4] = {1, 1, 1, 1};
  const int n = 41;
  std::vector<std::pair<double, std::array<double, 3>>> cells;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c) {
        const double x[3] = {a / (n - 1.0), b / (n - 1.0), c / (n - 1.0)};
        cells.push_back({hartmann3_reference(x, full), {x[0], x[1], x[2]}});
      }
  std::partial_sort(cells.begin(), cells.begin() + 5, cells.end());
  double best = cells[0].first;
  for (int k = 0; k < 5; ++k) {
    auto x = cells[k].second;
    double fx = cells[k].first;
    for (double step = 1.0 / (n - 1); step > 1e-12; step /= 2) {
      bool moved = true;
      while (moved) {
        moved = false;
        for (int j = 0; j < 3; ++j)
          for (const double dir : {-1.0, 1.0}) {
            auto y = x;
            y[j] = std::clamp(y[j] + dir * step, 0.0, 1.0);
            const double fy = hartmann3_reference(y.data(), full);
            if (fy < fx) x = y, fx = fy, moved = true;
          }
      }
    }
    best = std::min(best, fx);
  }
  return best;
}

}  // namespace testing_oracles
