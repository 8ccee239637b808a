#include "arlk/track.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <queue>
#include <sstream>

#include <json.hpp>

namespace arlk::track {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr double kTwoPi = 2.0 * kPi;

// Wrap to [0, 2*pi).
double wrap_2pi(double a) {
    a = std::fmod(a, kTwoPi);
    if (a < 0.0) a += kTwoPi;
    return a;
}

Vec2 heading_dir(double h) { return {std::cos(h), std::sin(h)}; }
Vec2 left_normal(double h) { return {-std::sin(h), std::cos(h)}; }

}  // namespace

const char* to_string(EdgeKind k) {
    switch (k) {
        case EdgeKind::straight: return "straight";
        case EdgeKind::arc_left: return "arc_left";
        case EdgeKind::arc_right: return "arc_right";
    }
    return "?";
}

EdgeKind edge_kind_from_string(const std::string& s) {
    if (s == "straight") return EdgeKind::straight;
    if (s == "arc_left") return EdgeKind::arc_left;
    if (s == "arc_right") return EdgeKind::arc_right;
    throw GraphError("unknown edge kind: " + s);
}

Pose advance(const Pose& start, const Primitive& prim, double u) {
    if (prim.kind == EdgeKind::straight) {
        return {start.p + u * heading_dir(start.heading), start.heading};
    }
    const double r = prim.radius;
    const double sweep = u / r;
    if (prim.kind == EdgeKind::arc_left) {
        const Vec2 c = start.p + r * left_normal(start.heading);
        const double a1 = (start.heading - 0.5 * kPi) + sweep;
        return {c + r * Vec2{std::cos(a1), std::sin(a1)}, start.heading + sweep};
    }
    const Vec2 c = start.p - r * left_normal(start.heading);
    const double a1 = (start.heading + 0.5 * kPi) - sweep;
    return {c + r * Vec2{std::cos(a1), std::sin(a1)}, start.heading - sweep};
}

// ---------------------------------------------------------------------------
// Pose-to-pose connector: arc / straight / arc with a fixed turn radius.
// The four circle-side combinations are constructed geometrically and each
// candidate is verified by propagating the start pose through its segments.
// ---------------------------------------------------------------------------

namespace {

struct Connector {
    std::array<Primitive, 3> prims;  // arc, straight, arc
    double total = 0.0;
};

Vec2 turn_center(const Pose& p, bool left, double r) {
    return left ? p.p + r * left_normal(p.heading) : p.p - r * left_normal(p.heading);
}

bool verify_chain(const Pose& a, const Pose& b, const std::array<Primitive, 3>& prims) {
    Pose cur = a;
    for (const auto& pr : prims) cur = advance(cur, pr, pr.length);
    return norm(cur.p - b.p) < 1e-6 && std::abs(wrap_angle(cur.heading - b.heading)) < 1e-9;
}

std::vector<Connector> connect_poses(const Pose& a, const Pose& b, double r) {
    std::vector<Connector> out;
    for (const bool left_a : {true, false}) {
        for (const bool left_b : {true, false}) {
            const Vec2 ca = turn_center(a, left_a, r);
            const Vec2 cb = turn_center(b, left_b, r);
            const Vec2 dvec = cb - ca;
            const double dist = norm(dvec);
            const double phi = std::atan2(dvec.y, dvec.x);
            double theta;   // tangent-line direction
            double straight;
            if (left_a == left_b) {
                theta = phi;
                straight = dist;
            } else {
                if (dist < 2.0 * r) continue;  // inner tangent does not exist
                const double off = std::asin(std::min(1.0, 2.0 * r / dist));
                theta = left_a ? phi + off : phi - off;
                straight = std::sqrt(std::max(0.0, dist * dist - 4.0 * r * r));
            }
            const double sweep_a = left_a ? wrap_2pi(theta - a.heading) : wrap_2pi(a.heading - theta);
            const double sweep_b = left_b ? wrap_2pi(b.heading - theta) : wrap_2pi(theta - b.heading);
            Connector c;
            c.prims[0] = {left_a ? EdgeKind::arc_left : EdgeKind::arc_right, r * sweep_a, r};
            c.prims[1] = {EdgeKind::straight, straight, 0.0};
            c.prims[2] = {left_b ? EdgeKind::arc_left : EdgeKind::arc_right, r * sweep_b, r};
            c.total = c.prims[0].length + c.prims[1].length + c.prims[2].length;
            if (!verify_chain(a, b, c.prims)) continue;
            out.push_back(c);
        }
    }
    std::sort(out.begin(), out.end(), [](const Connector& x, const Connector& y) { return x.total < y.total; });
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// RouteGraph
// ---------------------------------------------------------------------------

void RouteGraph::build_adjacency() {
    out_edges.assign(nodes.size(), {});
    for (int e = 0; e < static_cast<int>(edges.size()); ++e) {
        const Edge& edge = edges[e];
        if (edge.from < 0 || edge.from >= static_cast<int>(nodes.size()) || edge.to < 0 ||
            edge.to >= static_cast<int>(nodes.size())) {
            throw GraphError("edge endpoint out of range");
        }
        out_edges[edge.from].push_back(e);
    }
}

void RouteGraph::validate() const {
    if (lane_width <= 0.0) throw GraphError("lane_width must be positive");
    for (const Edge& e : edges) {
        if (e.prim.length <= 0.0) throw GraphError("edge length must be positive");
        if (e.prim.kind != EdgeKind::straight && e.prim.radius <= 0.0) {
            throw GraphError("arc radius must be positive");
        }
        const Node& a = nodes[e.from];
        const Node& b = nodes[e.to];
        const Pose end = advance({a.p, a.heading}, e.prim, e.prim.length);
        if (norm(end.p - b.p) > 1e-6 || std::abs(wrap_angle(end.heading - b.heading)) > 1e-6) {
            std::ostringstream os;
            os << "edge " << e.from << "->" << e.to << " breaks tangent continuity";
            throw GraphError(os.str());
        }
    }
}

std::string RouteGraph::to_json() const {
    nlohmann::json j;
    j["format"] = "arlk-graph";
    j["version"] = 1;
    j["lane_width"] = lane_width;
    j["nodes"] = nlohmann::json::array();
    for (const Node& n : nodes) {
        j["nodes"].push_back({{"x", n.p.x}, {"y", n.p.y}, {"heading", n.heading}});
    }
    j["edges"] = nlohmann::json::array();
    for (const Edge& e : edges) {
        j["edges"].push_back({{"from", e.from},
                              {"to", e.to},
                              {"kind", to_string(e.prim.kind)},
                              {"length", e.prim.length},
                              {"radius", e.prim.radius}});
    }
    return j.dump(2);
}

RouteGraph RouteGraph::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw GraphError(std::string("graph json parse error: ") + e.what());
    }
    if (j.value("format", "") != "arlk-graph") throw GraphError("not an arlk-graph document");
    if (j.value("version", 0) != 1) throw GraphError("unsupported graph version");
    RouteGraph g;
    g.lane_width = j.at("lane_width").get<double>();
    for (const auto& n : j.at("nodes")) {
        g.nodes.push_back({{n.at("x").get<double>(), n.at("y").get<double>()}, n.at("heading").get<double>()});
    }
    for (const auto& e : j.at("edges")) {
        Edge edge;
        edge.from = e.at("from").get<int>();
        edge.to = e.at("to").get<int>();
        edge.prim.kind = edge_kind_from_string(e.at("kind").get<std::string>());
        edge.prim.length = e.at("length").get<double>();
        edge.prim.radius = e.at("radius").get<double>();
        g.edges.push_back(edge);
    }
    g.build_adjacency();
    g.validate();
    return g;
}

// ---------------------------------------------------------------------------
// Procedural generation
// ---------------------------------------------------------------------------

namespace {

Primitive draw_piece(Rng& rng, const GraphSpec& spec, int force_kind /* -1 random */) {
    int kind = force_kind;
    if (kind < 0) kind = rng.bernoulli(spec.straight_bias) ? 0 : (rng.bernoulli(0.5) ? 1 : 2);
    if (kind == 0) return {EdgeKind::straight, rng.uniform(spec.straight_min, spec.straight_max), 0.0};
    const double r = rng.uniform(spec.min_radius, spec.max_radius);
    const double angle = rng.uniform(0.25, spec.max_turn);
    return {kind == 1 ? EdgeKind::arc_left : EdgeKind::arc_right, r * angle, r};
}

bool closure_degenerate(const Connector& c) {
    // Every closure segment becomes a graph edge, so each must carry real
    // length for the node count to be exact and the geometry non-trivial.
    return c.prims[0].length < 0.5 || c.prims[1].length < 1.0 || c.prims[2].length < 0.5;
}

}  // namespace

RouteGraph generate_graph(std::uint64_t seed, const GraphSpec& spec) {
    if (spec.nodes < 4) throw GraphError("graph needs at least 4 nodes");
    if (spec.min_radius <= 0.0 || spec.max_radius < spec.min_radius) throw GraphError("bad radius range");
    if (spec.straight_min <= 0.0 || spec.straight_max < spec.straight_min) throw GraphError("bad straight range");
    if (spec.straight_bias < 0.0 || spec.straight_bias > 1.0) throw GraphError("bad straight_bias");
    if (spec.max_turn <= 0.25 || spec.max_turn > kPi) throw GraphError("max_turn must be in (0.25, pi]");

    const int pieces = spec.nodes - 3;  // walk edges; closure contributes 3 more
    const Rng base = Rng(seed).child("track.graph");

    for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
        Rng rng = base.child(attempt);

        // Kind order for the first pieces. With >= 3 pieces all three kinds
        // are forced (in shuffled order) so coverage never depends on the
        // closure; smaller walks rely on the retry loop.
        std::array<int, 3> forced = {0, 1, 2};
        for (int i = 2; i > 0; --i) std::swap(forced[i], forced[rng.uniform_int(0, i)]);

        std::vector<Node> nodes;
        nodes.push_back({{0.0, 0.0}, 0.0});
        std::vector<Primitive> walk;
        Pose cur{{0.0, 0.0}, 0.0};
        for (int i = 0; i < pieces; ++i) {
            const int force = (pieces >= 3 && i < 3) ? forced[i] : (pieces < 3 ? 1 + rng.uniform_int(0, 1) : -1);
            const Primitive prim = draw_piece(rng, spec, force);
            cur = advance(cur, prim, prim.length);
            nodes.push_back({cur.p, cur.heading});
            walk.push_back(prim);
        }

        const double rc = rng.uniform(spec.min_radius, spec.max_radius);
        const auto candidates = connect_poses(cur, {{0.0, 0.0}, 0.0}, rc);
        const Connector* pick = nullptr;
        for (const Connector& c : candidates) {
            if (!closure_degenerate(c)) {
                pick = &c;
                break;
            }
        }
        if (pick == nullptr) continue;

        RouteGraph g;
        g.lane_width = spec.lane_width;
        g.nodes = nodes;
        for (int i = 0; i < pieces; ++i) g.edges.push_back({i, i + 1, walk[i]});
        Pose cl = cur;
        int last = pieces;
        for (int k = 0; k < 3; ++k) {
            cl = advance(cl, pick->prims[k], pick->prims[k].length);
            const int next = (k == 2) ? 0 : static_cast<int>(g.nodes.size());
            if (k != 2) g.nodes.push_back({cl.p, cl.heading});
            g.edges.push_back({last, next, pick->prims[k]});
            last = next;
        }

        bool has_straight = false, has_left = false, has_right = false;
        for (const Edge& e : g.edges) {
            has_straight |= e.prim.kind == EdgeKind::straight;
            has_left |= e.prim.kind == EdgeKind::arc_left;
            has_right |= e.prim.kind == EdgeKind::arc_right;
        }
        if (!has_straight || !has_left || !has_right) continue;
        if (static_cast<int>(g.nodes.size()) != spec.nodes) continue;  // defensive; closure filter should prevent

        g.build_adjacency();
        g.validate();
        return g;
    }
    throw GraphError("graph generation failed to close a circuit; widen the spec ranges");
}

// ---------------------------------------------------------------------------
// Routes
// ---------------------------------------------------------------------------

Pose Route::pose_at(double s) const {
    if (segs.empty()) throw GraphError("empty route");
    s = std::clamp(s, 0.0, s_total);
    // Last segment whose s0 <= s.
    int lo = 0, hi = static_cast<int>(segs.size()) - 1;
    while (lo < hi) {
        const int mid = (lo + hi + 1) / 2;
        if (segs[mid].s0 <= s) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    const Seg& seg = segs[lo];
    return advance(seg.start, seg.prim, std::min(s - seg.s0, seg.prim.length));
}

Vec2 Route::offset_point(double s, double lateral) const {
    const Pose pose = pose_at(s);
    return pose.p + lateral * left_normal(pose.heading);
}

std::string Route::to_json() const {
    nlohmann::json j;
    j["format"] = "arlk-route";
    j["version"] = 1;
    j["lane_width"] = lane_width;
    j["start_node"] = start_node;
    j["goal_node"] = goal_node;
    j["s_total"] = s_total;
    j["segs"] = nlohmann::json::array();
    for (const Seg& s : segs) {
        j["segs"].push_back({{"x", s.start.p.x},
                             {"y", s.start.p.y},
                             {"heading", s.start.heading},
                             {"kind", to_string(s.prim.kind)},
                             {"length", s.prim.length},
                             {"radius", s.prim.radius}});
    }
    return j.dump(2);
}

Route route_from_primitives(const Pose& start, const std::vector<Primitive>& prims, double lane_width) {
    Route r;
    r.lane_width = lane_width;
    Pose cur = start;
    double s = 0.0;
    for (const Primitive& p : prims) {
        if (p.length <= 0.0) throw GraphError("primitive length must be positive");
        r.segs.push_back({cur, p, s});
        cur = advance(cur, p, p.length);
        s += p.length;
    }
    r.s_total = s;
    return r;
}

Route plan_route(const RouteGraph& graph, int start, int goal) {
    const int n = static_cast<int>(graph.nodes.size());
    if (start < 0 || start >= n || goal < 0 || goal >= n) throw std::invalid_argument("route endpoint out of range");
    if (start == goal) throw std::invalid_argument("route start equals goal");
    if (graph.out_edges.size() != graph.nodes.size()) throw GraphError("adjacency not built");

    const auto heuristic = [&](int u) { return norm(graph.nodes[u].p - graph.nodes[goal].p); };

    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> g_cost(n, kInf);
    std::vector<int> via_edge(n, -1);
    using Item = std::pair<double, int>;  // (f, node); ties expand the smaller id
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> open;
    g_cost[start] = 0.0;
    open.push({heuristic(start), start});
    std::vector<char> closed(n, 0);

    while (!open.empty()) {
        const auto [f, u] = open.top();
        open.pop();
        if (closed[u]) continue;
        closed[u] = 1;
        if (u == goal) break;
        for (int ei : graph.out_edges[u]) {
            const Edge& e = graph.edges[ei];
            const double cand = g_cost[u] + e.prim.length;
            if (cand < g_cost[e.to]) {
                g_cost[e.to] = cand;
                via_edge[e.to] = ei;
                open.push({cand + heuristic(e.to), e.to});
            }
        }
    }
    if (via_edge[goal] < 0) throw NoRouteError("goal is unreachable from start");

    std::vector<int> path;  // edge indices, reversed
    for (int at = goal; at != start;) {
        const int ei = via_edge[at];
        path.push_back(ei);
        at = graph.edges[ei].from;
    }
    std::reverse(path.begin(), path.end());

    Route r;
    r.lane_width = graph.lane_width;
    r.start_node = start;
    r.goal_node = goal;
    double s = 0.0;
    for (int ei : path) {
        const Edge& e = graph.edges[ei];
        const Node& a = graph.nodes[e.from];
        r.segs.push_back({{a.p, a.heading}, e.prim, s});
        s += e.prim.length;
    }
    r.s_total = s;
    return r;
}

// ---------------------------------------------------------------------------
// Lane frame
// ---------------------------------------------------------------------------

namespace {

struct Projection {
    double dist = std::numeric_limits<double>::infinity();
    double s = 0.0;
    double d = 0.0;
    double tangent = 0.0;
};

// Closed-form closest point on one segment; candidates at clamped endpoints
// are still reported (an adjacent segment owns the true projection there).
Projection project_on_seg(const Vec2& p, const Route::Seg& seg) {
    Projection out;
    const Pose& a = seg.start;
    if (seg.prim.kind == EdgeKind::straight) {
        const Vec2 dir = heading_dir(a.heading);
        const double t = std::clamp(dot(p - a.p, dir), 0.0, seg.prim.length);
        const Vec2 q = a.p + t * dir;
        out.dist = norm(p - q);
        out.s = seg.s0 + t;
        out.tangent = a.heading;
        out.d = cross(dir, p - q) >= 0.0 ? out.dist : -out.dist;
        return out;
    }
    const bool left = seg.prim.kind == EdgeKind::arc_left;
    const double r = seg.prim.radius;
    const Vec2 c = left ? a.p + r * left_normal(a.heading) : a.p - r * left_normal(a.heading);
    const Vec2 rel = p - c;
    const double rho = norm(rel);
    const double sweep_total = seg.prim.length / r;
    const double psi0 = left ? a.heading - 0.5 * kPi : a.heading + 0.5 * kPi;
    const double psi = (rho > 1e-12) ? std::atan2(rel.y, rel.x) : psi0;
    const double sweep = left ? wrap_2pi(psi - psi0) : wrap_2pi(psi0 - psi);
    if (sweep <= sweep_total) {
        out.dist = std::abs(rho - r);
        out.s = seg.s0 + r * sweep;
        out.tangent = left ? a.heading + sweep : a.heading - sweep;
        out.d = left ? r - rho : rho - r;
        return out;
    }
    // Off-arc: the closer endpoint is the candidate.
    const Pose end = advance(a, seg.prim, seg.prim.length);
    const double d_start = norm(p - a.p), d_end = norm(p - end.p);
    if (d_start <= d_end) {
        out.dist = d_start;
        out.s = seg.s0;
        out.tangent = a.heading;
        out.d = cross(heading_dir(a.heading), p - a.p) >= 0.0 ? d_start : -d_start;
    } else {
        out.dist = d_end;
        out.s = seg.s0 + seg.prim.length;
        out.tangent = end.heading;
        out.d = cross(heading_dir(end.heading), p - end.p) >= 0.0 ? d_end : -d_end;
    }
    return out;
}

}  // namespace

std::optional<LaneFrameError> lane_frame(const Pose& vehicle, const Route& route, double s_hint, double window) {
    if (route.segs.empty()) throw GraphError("empty route");
    double lo = 0.0, hi = route.s_total;
    if (s_hint >= 0.0) {
        lo = std::max(0.0, s_hint - window);
        hi = std::min(route.s_total, s_hint + window);
    }
    Projection best;
    bool found = false;
    for (const auto& seg : route.segs) {
        if (seg.s0 + seg.prim.length < lo || seg.s0 > hi) continue;
        const Projection cand = project_on_seg(vehicle.p, seg);
        if (cand.s < lo - 1e-9 || cand.s > hi + 1e-9) continue;
        // Forward tie break: on equal distance keep the larger progress.
        if (!found || cand.dist < best.dist - 1e-12 ||
            (std::abs(cand.dist - best.dist) <= 1e-12 && cand.s > best.s)) {
            best = cand;
            found = true;
        }
    }
    if (!found || best.dist > 3.0 * route.lane_width) return std::nullopt;
    return LaneFrameError{best.d, wrap_angle(vehicle.heading - best.tangent), best.s};
}

// ---------------------------------------------------------------------------
// Centerline fitting
// ---------------------------------------------------------------------------

CenterlineFit fit_centerline(const std::vector<Vec2>& points, double max_abs_c0) {
    const int n = static_cast<int>(points.size());
    if (n < 8) throw FitError("centerline fit needs at least 8 samples");
    for (int i = 1; i < n; ++i) {
        if (!(points[i].x > points[i - 1].x)) throw FitError("centerline samples must increase in x");
    }
    if (points.back().x - points.front().x < 5.0) throw FitError("centerline samples must span at least 5 m");

    // Householder QR on the n x 4 Vandermonde matrix.
    constexpr int kCols = 4;
    std::vector<double> a(static_cast<size_t>(n) * kCols);
    std::vector<double> b(n);
    for (int i = 0; i < n; ++i) {
        const double x = points[i].x;
        a[i * kCols + 0] = 1.0;
        a[i * kCols + 1] = x;
        a[i * kCols + 2] = x * x;
        a[i * kCols + 3] = x * x * x;
        b[i] = points[i].y;
    }
    for (int j = 0; j < kCols; ++j) {
        double nrm = 0.0;
        for (int i = j; i < n; ++i) nrm += a[i * kCols + j] * a[i * kCols + j];
        nrm = std::sqrt(nrm);
        if (nrm < 1e-12) throw FitError("degenerate centerline design matrix");
        double alpha = a[j * kCols + j] >= 0.0 ? -nrm : nrm;
        std::vector<double> v(n - j);
        v[0] = a[j * kCols + j] - alpha;
        for (int i = j + 1; i < n; ++i) v[i - j] = a[i * kCols + j];
        double vnorm2 = 0.0;
        for (double x : v) vnorm2 += x * x;
        if (vnorm2 < 1e-300) continue;
        for (int col = j; col < kCols; ++col) {
            double proj = 0.0;
            for (int i = j; i < n; ++i) proj += v[i - j] * a[i * kCols + col];
            proj *= 2.0 / vnorm2;
            for (int i = j; i < n; ++i) a[i * kCols + col] -= proj * v[i - j];
        }
        double projb = 0.0;
        for (int i = j; i < n; ++i) projb += v[i - j] * b[i];
        projb *= 2.0 / vnorm2;
        for (int i = j; i < n; ++i) b[i] -= projb * v[i - j];
        a[j * kCols + j] = alpha;
    }
    std::array<double, kCols> coef{};
    for (int j = kCols - 1; j >= 0; --j) {
        double sum = b[j];
        for (int k = j + 1; k < kCols; ++k) sum -= a[j * kCols + k] * coef[k];
        coef[j] = sum / a[j * kCols + j];
    }

    CenterlineFit fit;
    fit.coeffs = {coef[0], coef[1], coef[2], coef[3]};
    double sq = 0.0;
    for (const Vec2& p : points) {
        const double e = fit.coeffs.eval(p.x) - p.y;
        sq += e * e;
    }
    fit.residual_rms = std::sqrt(sq / n);
    if (std::abs(fit.coeffs.c0) > max_abs_c0) throw FitError("centerline offset exceeds the lane corridor");
    return fit;
}

std::vector<Vec2> centerline_in_vehicle_frame(const Pose& vehicle, const Route& route, double s_from, double length,
                                              double step) {
    if (step <= 0.0) throw std::invalid_argument("step must be positive");
    std::vector<Vec2> out;
    const double ch = std::cos(vehicle.heading), sh = std::sin(vehicle.heading);
    const double s_end = std::min(s_from + length, route.s_total);
    for (double s = s_from; s <= s_end + 1e-9; s += step) {
        const Vec2 w = route.pose_at(std::min(s, route.s_total)).p;
        const Vec2 rel = w - vehicle.p;
        out.push_back({ch * rel.x + sh * rel.y, -sh * rel.x + ch * rel.y});
    }
    return out;
}

}  // namespace arlk::track
