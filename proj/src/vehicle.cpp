#include "arlk/vehicle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "arlk/rng.hpp"

namespace arlk::vehicle {

VehicleState step(const VehicleState& s, const Action& a, double mu, const VehicleParams& p, bool* understeer) {
    if (!std::isfinite(s.x) || !std::isfinite(s.y) || !std::isfinite(s.yaw) || !std::isfinite(s.v) ||
        !std::isfinite(a.steer) || !std::isfinite(a.throttle)) {
        throw std::invalid_argument("non-finite vehicle state or action");
    }
    if (!std::isfinite(mu) || mu < 0.0) throw std::invalid_argument("friction must be finite and non-negative");
    if (p.dt <= 0.0 || p.dt > 0.1) throw std::invalid_argument("dt must be in (0, 0.1]");
    const double steer = std::clamp(a.steer, -1.0, 1.0);
    const double throttle = std::clamp(a.throttle, -1.0, 1.0);

    // Longitudinal: commanded acceleration against linear drag.
    const double accel = throttle * p.max_accel - p.drag_coeff * s.v;
    const double v_new = std::clamp(s.v + accel * p.dt, 0.0, p.max_speed);
    const double v_mid = 0.5 * (s.v + v_new);

    // Lateral: curvature from the bicycle model, saturated by friction
    // (|a_lat| = v^2 * kappa <= mu * g at the integration speed).
    double kappa = std::tan(steer * p.max_steer) / p.wheelbase;
    bool clamped = false;
    if (v_mid > 1e-9) {
        const double kappa_max = mu * p.gravity / (v_mid * v_mid);
        if (std::abs(kappa) > kappa_max) {
            kappa = std::copysign(kappa_max, kappa);
            clamped = true;
        }
    }
    if (understeer != nullptr) *understeer = clamped;

    VehicleState out = s;
    out.v = v_new;
    out.last_action = {steer, throttle};
    const double ds = v_mid * p.dt;
    if (std::abs(kappa) < 1e-9) {
        out.x = s.x + ds * std::cos(s.yaw);
        out.y = s.y + ds * std::sin(s.yaw);
    } else {
        const double yaw_new = s.yaw + kappa * ds;
        out.x = s.x + (std::sin(yaw_new) - std::sin(s.yaw)) / kappa;
        out.y = s.y - (std::cos(yaw_new) - std::cos(s.yaw)) / kappa;
        out.yaw = wrap_angle(yaw_new);
    }
    return out;
}

Termination check_termination(double d, double s, double lane_width, double s_total, double margin, int step_index,
                              int max_steps) {
    if (std::abs(d) > 0.5 * lane_width + margin) return Termination::lane_departure;
    if (s >= s_total - 1e-9) return Termination::route_complete;
    if (max_steps > 0 && step_index >= max_steps) return Termination::timeout;
    return Termination::running;
}

}  // namespace arlk::vehicle
