#include <Eigen/Dense>

#include <cmath>

#include "birq/verify.hpp"

namespace birq::verify {
namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(i, j);
  }
  return e;
}

Eigen::VectorXd to_eigen(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

double quad(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& x) {
  return x.dot(A * x) - 2.0 * b.dot(x);
}

void check(const ToyBilevelProblem& p) {
  const std::size_t d = p.dim();
  if (d < 1 || d > 4) throw ParameterError("toy bilevel: dimension must be in [1, 4]");
  for (const Quadratic* q : {&p.upper, &p.lower}) {
    if (q->A.rows() != d || q->A.cols() != d || q->b.size() != d) {
      throw ParameterError("toy bilevel: inconsistent quadratic shapes");
    }
    const Eigen::MatrixXd A = to_eigen(q->A);
    if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw ParameterError("toy bilevel: A must be symmetric");
  }
  if (!(p.delta >= 0.0)) throw ParameterError("toy bilevel: delta must be >= 0");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eg(to_eigen(p.lower.A));
  if (eg.eigenvalues().minCoeff() < -1e-12) throw ParameterError("toy bilevel: A_G must be positive semidefinite");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ef(to_eigen(p.upper.A));
  if (ef.eigenvalues().minCoeff() <= 1e-12) throw ParameterError("toy bilevel: A_F must be positive definite");
}

}  // namespace

ToyBilevelProblem hand_kkt_fixture() {
  ToyBilevelProblem p;
  p.upper = {Matrix{{1.0, 0.0}, {0.0, 1.0}}, {2.0, 0.0}};
  p.lower = {Matrix{{1.0, 0.0}, {0.0, 1.0}}, {0.0, 0.0}};
  p.delta = 1.0;
  return p;
}

double evaluate(const Quadratic& q, std::span<const double> x) {
  return quad(to_eigen(q.A), to_eigen(q.b), to_eigen(x));
}

double lower_minimum(const ToyBilevelProblem& p) {
  check(p);
  const Eigen::MatrixXd A = to_eigen(p.lower.A);
  const Eigen::VectorXd b = to_eigen(p.lower.b);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  const Eigen::VectorXd lam = es.eigenvalues();
  const Eigen::MatrixXd V = es.eigenvectors();
  const Eigen::VectorXd bc = V.transpose() * b;
  const double tol = 1e-12 * std::max(1.0, lam.cwiseAbs().maxCoeff());
  double value = 0.0;
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (lam(i) > tol) {
      value -= bc(i) * bc(i) / lam(i);
    } else if (std::abs(bc(i)) > 1e-12) {
      throw ParameterError("toy bilevel: lower-level objective is unbounded below");
    }
  }
  return value;
}

std::vector<double> solve_toy_oracle(const ToyBilevelProblem& p) {
  check(p);
  const Eigen::MatrixXd AF = to_eigen(p.upper.A), AG = to_eigen(p.lower.A);
  const Eigen::VectorXd bF = to_eigen(p.upper.b), bG = to_eigen(p.lower.b);
  const double gmin = lower_minimum(p);
  auto gap = [&](const Eigen::VectorXd& x) { return quad(AG, bG, x) - gmin; };

  const Eigen::VectorXd free_opt = AF.ldlt().solve(bF);
  if (gap(free_opt) <= p.delta) return to_std(free_opt);

  if (p.delta == 0.0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eg(AG);
    if (eg.eigenvalues().minCoeff() <= 1e-12) {
      throw ParameterError("toy bilevel: delta = 0 needs a strongly convex lower level");
    }
    return to_std(AG.ldlt().solve(bG));
  }

  // Stationarity: (A_F + mu A_G) x = b_F + mu b_G; the gap decreases in mu.
  auto at = [&](double mu) -> Eigen::VectorXd {
    return (AF + mu * AG).ldlt().solve(bF + mu * bG);
  };
  double lo = 0.0, hi = 1.0;
  int doublings = 0;
  while (gap(at(hi)) > p.delta) {
    lo = hi;
    hi *= 2.0;
    if (++doublings > 200) throw ParameterError("toy bilevel: feasible set unreachable");
  }
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (gap(at(mid)) > p.delta ? lo : hi) = mid;
  }
  return to_std(at(hi));
}

BilevelReport run_penalty_demo(const ToyBilevelProblem& p, std::span<const double> gammas, double step_size,
                               std::size_t steps) {
  check(p);
  if (!(step_size > 0.0)) throw ParameterError("penalty demo: step size must be > 0");
  const std::size_t d = p.dim();
  const double gmin = lower_minimum(p);
  BilevelReport report;
  for (double gamma : gammas) {
    if (!(gamma >= 0.0)) throw ParameterError("penalty demo: gamma must be >= 0");
    PenaltyPoint pt;
    pt.gamma = gamma;
    pt.w1 = std::isinf(gamma) ? 0.0 : 1.0 / (1.0 + gamma);
    pt.w2 = std::isinf(gamma) ? 1.0 : gamma / (1.0 + gamma);

    // Plain loops: this descent shares nothing with the trainer.
    std::vector<double> x(d, 0.0);
    auto objective = [&](const std::vector<double>& v) {
      return pt.w1 * evaluate(p.upper, v) + pt.w2 * evaluate(p.lower, v);
    };
    const double start = std::abs(objective(x)) + 1.0;
    std::vector<double> grad(d);
    for (std::size_t it = 0; it < steps; ++it) {
      for (std::size_t i = 0; i < d; ++i) {
        double gf = -p.upper.b[i], gg = -p.lower.b[i];
        for (std::size_t j = 0; j < d; ++j) {
          gf += p.upper.A(i, j) * x[j];
          gg += p.lower.A(i, j) * x[j];
        }
        grad[i] = 2.0 * (pt.w1 * gf + pt.w2 * gg);
      }
      for (std::size_t i = 0; i < d; ++i) x[i] -= step_size * grad[i];
      const double obj = objective(x);
      if (!std::isfinite(obj) || std::abs(obj) > 1e6 * start) {
        throw NumericError("penalty demo: gradient descent diverged; reduce the step size");
      }
    }
    pt.theta_penalty = x;
    pt.upper_value = evaluate(p.upper, x);
    pt.delta_measured = std::max(0.0, evaluate(p.lower, x) - gmin);

    ToyBilevelProblem at_delta = p;
    at_delta.delta = pt.delta_measured;
    pt.theta_oracle = solve_toy_oracle(at_delta);
    double dist = 0.0;
    for (std::size_t i = 0; i < d; ++i) dist += (x[i] - pt.theta_oracle[i]) * (x[i] - pt.theta_oracle[i]);
    pt.distance = std::sqrt(dist);
    report.points.push_back(std::move(pt));
  }
  return report;
}

}  // namespace birq::verify
