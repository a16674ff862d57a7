#pragma once

#include <Eigen/Dense>
#include <memory>

#include "nnmpc/errors.hpp"

namespace nnmpc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Physical parameters of the actuated pendulum.
/// State convention: x1 is the angle offset from the upright position (rad),
/// x2 the angular velocity (rad/s); the input is the motor torque (N·m).
struct PendulumParams {
  double mass = 1.0;     // kg
  double gravity = 9.81; // m/s^2
  double length = 1.0;   // m

  void validate() const;
};

/// Continuous-time dynamics with analytic Jacobians.
class OdeModel {
 public:
  virtual ~OdeModel() = default;

  virtual int state_dim() const = 0;
  virtual int input_dim() const = 0;

  /// Time derivative of the state.
  virtual Vec deriv(const Vec& x, const Vec& u) const = 0;

  /// dfdx (n_x x n_x) and dfdu (n_x x n_u) of deriv().
  virtual void deriv_jacobians(const Vec& x, const Vec& u, Mat& dfdx,
                               Mat& dfdu) const = 0;
};

class PendulumOde final : public OdeModel {
 public:
  explicit PendulumOde(PendulumParams params = {});

  int state_dim() const override { return 2; }
  int input_dim() const override { return 1; }
  Vec deriv(const Vec& x, const Vec& u) const override;
  void deriv_jacobians(const Vec& x, const Vec& u, Mat& dfdx,
                       Mat& dfdu) const override;

  const PendulumParams& params() const { return params_; }

 private:
  PendulumParams params_;
};

/// Linear dynamics xdot = a_c x + b_c u; closed forms make it the reference
/// model in most solver tests.
class LinearOde final : public OdeModel {
 public:
  LinearOde(Mat a_c, Mat b_c);

  int state_dim() const override { return static_cast<int>(a_c_.rows()); }
  int input_dim() const override { return static_cast<int>(b_c_.cols()); }
  Vec deriv(const Vec& x, const Vec& u) const override;
  void deriv_jacobians(const Vec& x, const Vec& u, Mat& dfdx,
                       Mat& dfdu) const override;

 private:
  Mat a_c_;
  Mat b_c_;
};

/// Fixed-step discretization of an OdeModel with a classical 4-stage
/// Runge-Kutta step and zero-order-hold input. Immutable; safe to share
/// across threads.
class DiscreteModel {
 public:
  DiscreteModel(std::shared_ptr<const OdeModel> ode, double step_length);

  int state_dim() const { return ode_->state_dim(); }
  int input_dim() const { return ode_->input_dim(); }
  double step_length() const { return h_; }
  const OdeModel& ode() const { return *ode_; }

  /// One discrete transition x -> x+.
  Vec step(const Vec& x, const Vec& u) const;

  /// Exact Jacobians of step() via the chain rule through the RK4 stages.
  void step_jacobians(const Vec& x, const Vec& u, Mat& a, Mat& b) const;

 private:
  std::shared_ptr<const OdeModel> ode_;
  double h_;
};

DiscreteModel make_pendulum_model(PendulumParams params = {},
                                  double step_length = 0.1);

}  // namespace nnmpc
