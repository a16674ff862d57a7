#include "nnmpc/model.hpp"

#include <cmath>
#include <utility>

namespace nnmpc {

namespace {

void check_dims(const OdeModel& ode, const Vec& x, const Vec& u) {
  if (x.size() != ode.state_dim() || u.size() != ode.input_dim()) {
    throw std::invalid_argument("model: state/input dimension mismatch");
  }
}

}  // namespace

void PendulumParams::validate() const {
  if (!(mass > 0.0) || !(gravity > 0.0) || !(length > 0.0)) {
    throw std::invalid_argument("pendulum parameters must be positive");
  }
}

PendulumOde::PendulumOde(PendulumParams params) : params_(params) {
  params_.validate();
}

Vec PendulumOde::deriv(const Vec& x, const Vec& u) const {
  check_dims(*this, x, u);
  const double ml2 = params_.mass * params_.length * params_.length;
  Vec dx(2);
  dx[0] = x[1];
  dx[1] = u[0] / ml2 - (params_.gravity / params_.length) * std::sin(x[0] + M_PI);
  return dx;
}

void PendulumOde::deriv_jacobians(const Vec& x, const Vec& u, Mat& dfdx,
                                  Mat& dfdu) const {
  check_dims(*this, x, u);
  const double ml2 = params_.mass * params_.length * params_.length;
  dfdx.setZero(2, 2);
  dfdx(0, 1) = 1.0;
  dfdx(1, 0) = -(params_.gravity / params_.length) * std::cos(x[0] + M_PI);
  dfdu.setZero(2, 1);
  dfdu(1, 0) = 1.0 / ml2;
}

LinearOde::LinearOde(Mat a_c, Mat b_c) : a_c_(std::move(a_c)), b_c_(std::move(b_c)) {
  if (a_c_.rows() != a_c_.cols() || b_c_.rows() != a_c_.rows()) {
    throw std::invalid_argument("linear model: inconsistent matrix shapes");
  }
}

Vec LinearOde::deriv(const Vec& x, const Vec& u) const {
  check_dims(*this, x, u);
  return a_c_ * x + b_c_ * u;
}

void LinearOde::deriv_jacobians(const Vec& x, const Vec& u, Mat& dfdx,
                                Mat& dfdu) const {
  check_dims(*this, x, u);
  dfdx = a_c_;
  dfdu = b_c_;
}

DiscreteModel::DiscreteModel(std::shared_ptr<const OdeModel> ode, double step_length)
    : ode_(std::move(ode)), h_(step_length) {
  if (!ode_) throw std::invalid_argument("discrete model: null ode");
  if (!(h_ > 0.0)) throw std::invalid_argument("discrete model: step must be positive");
}

Vec DiscreteModel::step(const Vec& x, const Vec& u) const {
  check_dims(*ode_, x, u);
  const Vec k1 = ode_->deriv(x, u);
  const Vec k2 = ode_->deriv(x + 0.5 * h_ * k1, u);
  const Vec k3 = ode_->deriv(x + 0.5 * h_ * k2, u);
  const Vec k4 = ode_->deriv(x + h_ * k3, u);
  Vec next = x + (h_ / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) {
    throw NumericalError("rk4 step produced non-finite values");
  }
  return next;
}

void DiscreteModel::step_jacobians(const Vec& x, const Vec& u, Mat& a, Mat& b) const {
  check_dims(*ode_, x, u);
  const int nx = state_dim();
  const int nu = input_dim();
  const Mat eye = Mat::Identity(nx, nx);

  const Vec k1 = ode_->deriv(x, u);
  const Vec x2 = x + 0.5 * h_ * k1;
  const Vec k2 = ode_->deriv(x2, u);
  const Vec x3 = x + 0.5 * h_ * k2;
  const Vec k3 = ode_->deriv(x3, u);
  const Vec x4 = x + h_ * k3;

  Mat fx(nx, nx), fu(nx, nu);

  ode_->deriv_jacobians(x, u, fx, fu);
  const Mat dk1_dx = fx;
  const Mat dk1_du = fu;

  ode_->deriv_jacobians(x2, u, fx, fu);
  const Mat dk2_dx = fx * (eye + 0.5 * h_ * dk1_dx);
  const Mat dk2_du = fx * (0.5 * h_ * dk1_du) + fu;

  ode_->deriv_jacobians(x3, u, fx, fu);
  const Mat dk3_dx = fx * (eye + 0.5 * h_ * dk2_dx);
  const Mat dk3_du = fx * (0.5 * h_ * dk2_du) + fu;

  ode_->deriv_jacobians(x4, u, fx, fu);
  const Mat dk4_dx = fx * (eye + h_ * dk3_dx);
  const Mat dk4_du = fx * (h_ * dk3_du) + fu;

  a = eye + (h_ / 6.0) * (dk1_dx + 2.0 * dk2_dx + 2.0 * dk3_dx + dk4_dx);
  b = (h_ / 6.0) * (dk1_du + 2.0 * dk2_du + 2.0 * dk3_du + dk4_du);
}

DiscreteModel make_pendulum_model(PendulumParams params, double step_length) {
  return DiscreteModel(std::make_shared<PendulumOde>(params), step_length);
}

}  // namespace nnmpc
