#pragma once

// Poisson-equation report for a kernel and drift table loaded from CSV.

#include <cstddef>
#include <optional>
#include <string>

#include "bsa/sa_core.hpp"

namespace bsa::bench {

struct PoissonReport {
  long states = 0;
  long dim = 0;
  double residual = 0;   // max |H_hat - P H_hat - H + 1 h^T|
  double centering = 0;  // max |v^T H_hat|
  double L_PH0 = 0;      // max over x of max(|H_hat(x)|, |P H_hat(x)|)
  double rho = 0, K_R = 1, second_eigenvalue = 0;
  std::optional<double> L_PH1;  // max_x |P H_hat(x) - P' H_hat'(x)| / dtheta
};

PoissonReport poisson_check(const Mat<double>& kernel, const Mat<double>& drift, std::size_t horizon = 200);

/// Adds the finite-difference L_PH1 between two parameter values dtheta apart.
PoissonReport poisson_check(const Mat<double>& kernel, const Mat<double>& drift, const Mat<double>& kernel2,
                            const Mat<double>& drift2, double dtheta, std::size_t horizon = 200);

std::string to_csv(const PoissonReport& r);

}  // namespace bsa::bench
