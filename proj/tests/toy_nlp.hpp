#pragma once

// Small hand-checkable parametric programs used across the solver and
// sensitivity tests.

#include "nnmpc/ocp.hpp"

namespace nnmpc::testing {

/// min 1/2 xi'H xi - p'xi, unconstrained. Solution xi* = Hinv p,
/// d xi*/dp = Hinv.
class QuadraticNlp final : public ParametricNlp {
 public:
  explicit QuadraticNlp(Mat h) : h_(std::move(h)), p_(Vec::Zero(h_.rows())) {}

  int dim() const override { return static_cast<int>(h_.rows()); }
  int num_eq() const override { return 0; }
  int num_ineq() const override { return 0; }
  int param_dim() const override { return dim(); }
  const Vec& param() const override { return p_; }
  void set_param(const Vec& p) override { p_ = p; }

  double cost(const Vec& xi) const override { return 0.5 * xi.dot(h_ * xi) - p_.dot(xi); }
  Vec cost_grad(const Vec& xi) const override { return h_ * xi - p_; }
  Mat cost_hessian(const Vec&) const override { return h_; }

  Vec eq_violation(const Vec&) const override { return Vec::Zero(0); }
  Mat eq_jacobian(const Vec&) const override { return Mat::Zero(0, dim()); }
  Vec ineq_value(const Vec&) const override { return Vec::Zero(0); }
  Mat ineq_jacobian(const Vec&) const override { return Mat::Zero(0, dim()); }

  Mat lagrangian_hessian(const Vec&, const Vec&, const Vec&) const override { return h_; }
  Mat stationarity_param_jacobian(const Vec&, const Vec&, const Vec&) const override {
    return -Mat::Identity(dim(), dim());
  }

 private:
  Mat h_;
  Vec p_;
};

/// min (xi - p)^2 s.t. xi >= 0, written as g = -xi <= 0. The minimizer is
/// max(p, 0), so d xi*/dp jumps from 1 to 0 where the bound activates.
class ClippedScalarNlp final : public ParametricNlp {
 public:
  ClippedScalarNlp() : p_(Vec::Zero(1)) {}

  int dim() const override { return 1; }
  int num_eq() const override { return 0; }
  int num_ineq() const override { return 1; }
  int param_dim() const override { return 1; }
  const Vec& param() const override { return p_; }
  void set_param(const Vec& p) override { p_ = p; }

  double cost(const Vec& xi) const override {
    const double d = xi[0] - p_[0];
    return d * d;
  }
  Vec cost_grad(const Vec& xi) const override { return Vec{{2.0 * (xi[0] - p_[0])}}; }
  Mat cost_hessian(const Vec&) const override { return Mat{{2.0}}; }

  Vec eq_violation(const Vec&) const override { return Vec::Zero(0); }
  Mat eq_jacobian(const Vec&) const override { return Mat::Zero(0, 1); }
  Vec ineq_value(const Vec& xi) const override { return Vec{{-xi[0]}}; }
  Mat ineq_jacobian(const Vec&) const override { return Mat{{-1.0}}; }

  Mat lagrangian_hessian(const Vec&, const Vec&, const Vec&) const override {
    return Mat{{2.0}};
  }
  Mat stationarity_param_jacobian(const Vec&, const Vec&, const Vec&) const override {
    return Mat{{-2.0}};
  }

 private:
  Vec p_;
};

/// Exact discrete matrices of a linear model under the RK4 step (the step is
/// linear, so the Jacobians anywhere are the matrices themselves).
inline void discrete_matrices(const DiscreteModel& model, Mat& ad, Mat& bd) {
  model.step_jacobians(Vec::Zero(model.state_dim()), Vec::Zero(model.input_dim()), ad, bd);
}

/// Finite-horizon discrete Riccati recursion for cost
/// sum x'Qx + u'Ru + terminal x'Px; returns the first-stage feedback gain K
/// with u_0 = -K x.
inline Mat lqr_first_gain(const Mat& ad, const Mat& bd, const Mat& q, const Mat& r,
                          const Mat& p_term, int horizon) {
  Mat p = p_term;
  Mat gain;
  for (int k = horizon - 1; k >= 0; --k) {
    const Mat s = r + bd.transpose() * p * bd;
    gain = s.ldlt().solve(bd.transpose() * p * ad);
    p = q + ad.transpose() * p * (ad - bd * gain);
  }
  return gain;
}

}  // namespace nnmpc::testing
