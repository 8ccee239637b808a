#pragma once

namespace arlk::vehicle {

struct VehicleParams {
    double wheelbase = 2.5;       // m
    double max_steer = 0.5;       // rad, physical steering at |steer| = 1
    double max_accel = 3.0;       // m/s^2 at |throttle| = 1
    double max_speed = 15.0;      // m/s
    double drag_coeff = 0.05;     // 1/s, linear speed damping
    double dt = 0.05;             // s
    double gravity = 9.81;        // m/s^2
    double departure_margin = 0.3;  // m beyond the half lane before termination
};

// Normalized commands; both are clamped to [-1, 1] before use.
struct Action {
    double steer = 0.0;
    double throttle = 0.0;
};

struct VehicleState {
    double x = 0.0;
    double y = 0.0;
    double yaw = 0.0;  // rad
    double v = 0.0;    // m/s, non-negative
    Action last_action;  // most recent executed command, for smoothness terms
};

// One kinematic bicycle step on a surface with friction coefficient mu.
// Lateral acceleration is saturated at mu*g by clamping the effective path
// curvature; *understeer reports whether the clamp engaged. The pose is
// integrated along the exact circular arc at the midpoint speed.
// Throws std::invalid_argument on non-finite state or action.
VehicleState step(const VehicleState& s, const Action& a, double mu, const VehicleParams& p,
                  bool* understeer = nullptr);

enum class Termination { running, lane_departure, route_complete, timeout };

// d: signed lateral deviation; s: arc-length progress along the route.
Termination check_termination(double d, double s, double lane_width, double s_total, double margin,
                              int step_index, int max_steps);

}  // namespace arlk::vehicle
