#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "arlk/rng.hpp"

namespace arlk::track {

struct Vec2 {
    double x = 0.0, y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::sqrt(dot(a, a)); }

struct Pose {
    Vec2 p;
    double heading = 0.0;  // rad, world frame
};

enum class EdgeKind { straight, arc_left, arc_right };

const char* to_string(EdgeKind k);
EdgeKind edge_kind_from_string(const std::string& s);

// A single centerline primitive: straight segment or circular arc. The
// geometry is anchored at the start pose; arcs subtend length/radius radians.
struct Primitive {
    EdgeKind kind = EdgeKind::straight;
    double length = 0.0;  // arc length, m
    double radius = 0.0;  // m, arcs only
};

// Pose after driving `u` meters along the primitive from `start`.
Pose advance(const Pose& start, const Primitive& prim, double u);

struct Node {
    Vec2 p;
    double heading = 0.0;  // shared tangent of all incident edges
};

struct Edge {
    int from = -1, to = -1;
    Primitive prim;
};

class NoRouteError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
class GraphError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
class FitError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Directed road graph. Nodes carry poses; each edge leaves its from-node
// along the node heading and arrives at the to-node pose exactly, so the
// network is G1-continuous by construction (validate() verifies it).
struct RouteGraph {
    std::vector<Node> nodes;
    std::vector<Edge> edges;
    double lane_width = 3.5;

    std::vector<std::vector<int>> out_edges;  // node id -> edge indices

    void build_adjacency();
    void validate() const;

    std::string to_json() const;
    static RouteGraph from_json(const std::string& text);
};

struct GraphSpec {
    int nodes = 12;  // exact node count of the generated circuit
    double min_radius = 15.0;
    double max_radius = 40.0;
    double straight_min = 20.0;
    double straight_max = 60.0;
    double straight_bias = 0.5;  // probability that a walk piece is straight
    double max_turn = 1.2;       // max subtended angle per arc piece, rad
    double lane_width = 3.5;
};

// Seeded procedural circuit with exactly spec.nodes nodes: a random piece
// walk closed by an arc-straight-arc connector back to the start pose.
RouteGraph generate_graph(std::uint64_t seed, const GraphSpec& spec);

// A route is a self-contained copy of the traversed geometry.
struct Route {
    struct Seg {
        Pose start;
        Primitive prim;
        double s0 = 0.0;  // cumulative arc length at segment start
    };
    std::vector<Seg> segs;
    double s_total = 0.0;
    double lane_width = 3.5;
    int start_node = -1, goal_node = -1;

    Pose pose_at(double s) const;  // clamped to [0, s_total]
    // World point at signed lateral offset from the centerline (+ = left).
    Vec2 offset_point(double s, double lateral) const;

    std::string to_json() const;
};

// Minimum-arc-length path via A* with the Euclidean heuristic.
// Throws NoRouteError when the goal is unreachable.
Route plan_route(const RouteGraph& graph, int start, int goal);

// Route built directly from a primitive chain; used by tests and the
// procedural environment for single-segment scenarios.
Route route_from_primitives(const Pose& start, const std::vector<Primitive>& prims, double lane_width);

struct LaneFrameError {
    double d = 0.0;    // signed lateral deviation, + = left of centerline
    double phi = 0.0;  // heading error, wrapped to (-pi, pi]
    double s = 0.0;    // arc-length progress of the projection
};

// Project a vehicle pose onto the route centerline. With s_hint >= 0 the
// search is restricted to +-window meters of hint (ties resolved toward
// larger s); a negative hint searches the whole route. Returns nullopt when
// the closest approach exceeds 3 lane widths (out of corridor).
std::optional<LaneFrameError> lane_frame(const Pose& vehicle, const Route& route,
                                         double s_hint = -1.0, double window = 10.0);

struct CenterlineCoeffs {
    double c0 = 0.0;  // m
    double c1 = 0.0;  // dimensionless
    double c2 = 0.0;  // 1/m
    double c3 = 0.0;  // 1/m^2

    double eval(double x) const { return c0 + x * (c1 + x * (c2 + x * c3)); }
};

struct CenterlineFit {
    CenterlineCoeffs coeffs;
    double residual_rms = 0.0;
};

// Least-squares cubic y(x) over vehicle-frame samples. Requires >= 8 samples
// with strictly increasing x spanning >= 5 m; rejects fits with
// |c0| > max_abs_c0. Throws FitError.
CenterlineFit fit_centerline(const std::vector<Vec2>& points, double max_abs_c0 = 3.5);

// Centerline sampled ahead of the vehicle and expressed in its frame
// (x forward, y left). Used for labeling rendered frames.
std::vector<Vec2> centerline_in_vehicle_frame(const Pose& vehicle, const Route& route, double s_from,
                                              double length, double step);

}  // namespace arlk::track
