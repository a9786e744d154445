#include "bsa/bench/poisson_check.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "bsa/bench/report.hpp"
#include "bsa/markov.hpp"

namespace bsa::bench {

namespace {

struct Solved {
  PoissonSolution<double> sol;
  Mat<double> PH;
};

Solved solve(const Mat<double>& kernel, const Mat<double>& drift) {
  if (kernel.rows() != kernel.cols()) throw std::invalid_argument("kernel must be square");
  if (drift.rows() != kernel.rows())
    throw std::invalid_argument("drift has " + std::to_string(drift.rows()) + " rows but the kernel has " +
                                std::to_string(kernel.rows()) + " states");
  const FiniteKernel<double> k(kernel);
  const Vec<double> v = stationary_distribution(k);
  const Vec<double> h = drift.transpose() * v;
  Solved s{solve_poisson(k, drift, h), Mat<double>()};
  s.PH = kernel * s.sol.H_hat;
  return s;
}

}  // namespace

PoissonReport poisson_check(const Mat<double>& kernel, const Mat<double>& drift, std::size_t horizon) {
  const Solved s = solve(kernel, drift);
  PoissonReport r;
  r.states = kernel.rows();
  r.dim = drift.cols();
  r.residual = s.sol.residual;
  r.centering = (s.sol.H_hat.transpose() * s.sol.stationary).cwiseAbs().maxCoeff();
  for (Eigen::Index x = 0; x < kernel.rows(); ++x)
    r.L_PH0 = std::max({r.L_PH0, s.sol.H_hat.row(x).norm(), s.PH.row(x).norm()});
  const auto erg = ergodicity_constants(FiniteKernel<double>(kernel), horizon);
  r.rho = erg.rho;
  r.K_R = erg.K_R;
  r.second_eigenvalue = erg.second_eigenvalue;
  return r;
}

PoissonReport poisson_check(const Mat<double>& kernel, const Mat<double>& drift, const Mat<double>& kernel2,
                            const Mat<double>& drift2, double dtheta, std::size_t horizon) {
  if (!(dtheta > 0)) throw std::invalid_argument("dtheta must be positive");
  if (kernel2.rows() != kernel.rows() || drift2.rows() != drift.rows() || drift2.cols() != drift.cols())
    throw std::invalid_argument("second kernel/drift pair must match the first in shape");
  PoissonReport r = poisson_check(kernel, drift, horizon);
  const Solved a = solve(kernel, drift);
  const Solved b = solve(kernel2, drift2);
  double best = 0;
  for (Eigen::Index x = 0; x < kernel.rows(); ++x) best = std::max(best, (a.PH.row(x) - b.PH.row(x)).norm());
  r.L_PH1 = best / dtheta;
  return r;
}

std::string to_csv(const PoissonReport& r) {
  std::ostringstream o;
  o << "quantity,value\n";
  o << "states," << r.states << "\n";
  o << "dim," << r.dim << "\n";
  o << "residual," << format_number(r.residual) << "\n";
  o << "centering," << format_number(r.centering) << "\n";
  o << "L_PH0," << format_number(r.L_PH0) << "\n";
  if (r.L_PH1) o << "L_PH1," << format_number(*r.L_PH1) << "\n";
  o << "rho," << format_number(r.rho) << "\n";
  o << "K_R," << format_number(r.K_R) << "\n";
  o << "second_eigenvalue," << format_number(r.second_eigenvalue) << "\n";
  return o.str();
}

}  // namespace bsa::bench
