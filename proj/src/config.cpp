#include "arlk/config.hpp"

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace arlk::config {

namespace {

enum class Kind { f64, i32, u64, boolean, text };

struct Entry {
    std::string key;
    Kind kind;
    std::function<void(Config&, const std::string&)> set;
    std::function<std::string(const Config&)> get;
};

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& s) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || s.empty() || errno == ERANGE || !std::isfinite(v)) {
        throw ConfigError("expected a finite number, got '" + s + "'");
    }
    return v;
}

long long parse_ll(const std::string& s) {
    errno = 0;
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size() || s.empty() || errno == ERANGE) {
        throw ConfigError("expected an integer, got '" + s + "'");
    }
    return v;
}

std::uint64_t parse_u64(const std::string& s) {
    errno = 0;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size() || s.empty() || s[0] == '-' || errno == ERANGE) {
        throw ConfigError("expected a non-negative integer, got '" + s + "'");
    }
    return v;
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("expected true/false, got '" + s + "'");
}

template <typename Get>
Entry reg_f64(std::string key, Get member) {
    return {std::move(key), Kind::f64, [member](Config& c, const std::string& v) { member(c) = parse_double(v); },
            [member](const Config& c) { return fmt_double(member(const_cast<Config&>(c))); }};
}

template <typename Get>
Entry reg_i32(std::string key, Get member) {
    return {std::move(key), Kind::i32,
            [member](Config& c, const std::string& v) {
                const long long x = parse_ll(v);
                if (x < INT32_MIN || x > INT32_MAX) throw ConfigError("integer out of range: '" + v + "'");
                member(c) = static_cast<int>(x);
            },
            [member](const Config& c) { return std::to_string(member(const_cast<Config&>(c))); }};
}

template <typename Get>
Entry reg_u64(std::string key, Get member) {
    return {std::move(key), Kind::u64, [member](Config& c, const std::string& v) { member(c) = parse_u64(v); },
            [member](const Config& c) { return std::to_string(member(const_cast<Config&>(c))); }};
}

template <typename Get>
Entry reg_bool(std::string key, Get member) {
    return {std::move(key), Kind::boolean, [member](Config& c, const std::string& v) { member(c) = parse_bool(v); },
            [member](const Config& c) { return member(const_cast<Config&>(c)) ? "true" : "false"; }};
}

template <typename Get>
Entry reg_text(std::string key, Get member) {
    return {std::move(key), Kind::text, [member](Config& c, const std::string& v) { member(c) = v; },
            [member](const Config& c) { return member(const_cast<Config&>(c)); }};
}

#define F(field) [](Config& c) -> auto& { return c.field; }

const std::vector<Entry>& registry() {
    static const std::vector<Entry> reg = {
        // Track generation.
        reg_i32("track.nodes", F(env.graph.nodes)),
        reg_f64("track.min_radius", F(env.graph.min_radius)),
        reg_f64("track.max_radius", F(env.graph.max_radius)),
        reg_f64("track.straight_min", F(env.graph.straight_min)),
        reg_f64("track.straight_max", F(env.graph.straight_max)),
        reg_f64("track.straight_bias", F(env.graph.straight_bias)),
        reg_f64("track.max_turn", F(env.graph.max_turn)),
        reg_f64("track.lane_width", F(env.graph.lane_width)),
        // Vehicle.
        reg_f64("vehicle.wheelbase", F(env.vparams.wheelbase)),
        reg_f64("vehicle.max_steer", F(env.vparams.max_steer)),
        reg_f64("vehicle.max_accel", F(env.vparams.max_accel)),
        reg_f64("vehicle.max_speed", F(env.vparams.max_speed)),
        reg_f64("vehicle.drag_coeff", F(env.vparams.drag_coeff)),
        reg_f64("vehicle.dt", F(env.vparams.dt)),
        reg_f64("vehicle.departure_margin", F(env.vparams.departure_margin)),
        // Environment.
        reg_f64("env.friction", F(env.friction)),
        reg_i32("env.max_steps", F(env.max_steps)),
        reg_f64("env.start_speed", F(env.start_speed)),
        reg_f64("env.start_d_jitter", F(env.start_d_jitter)),
        reg_f64("env.start_phi_jitter", F(env.start_phi_jitter)),
        reg_i32("env.min_route_edges", F(env.min_route_edges)),
        reg_bool("env.occlusion", F(env.occlusion)),
        // Occlusion sampling.
        reg_f64("occlusion.p_drop_one", F(env.occ_sampling.p_drop_one)),
        reg_f64("occlusion.p_drop_both", F(env.occ_sampling.p_drop_both)),
        reg_i32("occlusion.max_gaps", F(env.occ_sampling.max_gaps)),
        reg_f64("occlusion.gap_min", F(env.occ_sampling.gap_min)),
        reg_f64("occlusion.gap_max", F(env.occ_sampling.gap_max)),
        reg_f64("occlusion.density_min", F(env.occ_sampling.density_min)),
        reg_f64("occlusion.density_max", F(env.occ_sampling.density_max)),
        // Raster view.
        reg_i32("render.width", F(env.render.width)),
        reg_i32("render.height", F(env.render.height)),
        reg_f64("render.view_depth", F(env.render.view_depth)),
        reg_f64("render.view_width", F(env.render.view_width)),
        reg_f64("render.sample_step", F(env.render.sample_step)),
        reg_i32("render.speckle_max", F(env.render.speckle_max)),
        // Reward weights.
        reg_f64("reward.w_d", F(env.rewardw.w_d)),
        reg_f64("reward.w_phi", F(env.rewardw.w_phi)),
        reg_f64("reward.w_v", F(env.rewardw.w_v)),
        reg_f64("reward.lambda1", F(env.rewardw.lambda1)),
        reg_f64("reward.lambda2", F(env.rewardw.lambda2)),
        reg_f64("reward.crash_penalty", F(env.rewardw.crash_penalty)),
        // Observation scaling.
        reg_f64("scales.d", F(env.scales.d)),
        reg_f64("scales.phi", F(env.scales.phi)),
        reg_f64("scales.v", F(env.scales.v)),
        // Agent.
        reg_f64("agent.alpha", F(agent.alpha)),
        reg_f64("agent.gamma", F(agent.gamma)),
        reg_f64("agent.lr_actor", F(agent.lr_actor)),
        reg_f64("agent.lr_critic", F(agent.lr_critic)),
        reg_f64("agent.tau", F(agent.tau)),
        reg_i32("agent.hidden", F(agent.hidden)),
        reg_i32("agent.rnn_hidden", F(agent.rnn_hidden)),
        reg_i32("agent.bptt", F(agent.bptt)),
        reg_i32("agent.batch", F(agent.batch)),
        reg_i32("agent.seq_batch", F(agent.seq_batch)),
        reg_u64("agent.buffer_capacity", F(agent.buffer_capacity)),
        reg_i32("agent.updates_per_episode", F(agent.updates_per_episode)),
        reg_f64("agent.noise_std0", F(agent.noise_std0)),
        reg_f64("agent.noise_std_end", F(agent.noise_std_end)),
        reg_i32("agent.noise_decay_episodes", F(agent.noise_decay_episodes)),
        // Run.
        reg_text("run.variant", F(variant)),
        reg_text("run.observation", F(observation)),
        reg_u64("run.seed", F(seed)),
        reg_i32("run.episodes", F(episodes)),
        reg_i32("run.checkpoint_every", F(checkpoint_every)),
        reg_i32("run.curve_window", F(curve_window)),
        // Evaluation.
        reg_i32("eval.routes", F(eval_routes)),
        reg_f64("eval.alpha", F(eval_alpha)),
        reg_f64("eval.friction", F(eval_friction)),
        reg_u64("eval.seed", F(eval_seed)),
    };
    return reg;
}

#undef F

const Entry* find_entry(const std::string& key) {
    for (const auto& e : registry()) {
        if (e.key == key) return &e;
    }
    return nullptr;
}

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

// Keep the visual tower's input size in lockstep with the raster output.
void wire_derived(Config& c) {
    c.agent.img_w = c.env.render.width;
    c.agent.img_h = c.env.render.height;
    c.env.occ_sampling.route_length = 0.0;  // set per episode from the route
}

}  // namespace

std::vector<std::string> known_keys() {
    std::vector<std::string> out;
    out.reserve(registry().size());
    for (const auto& e : registry()) out.push_back(e.key);
    return out;
}

void apply_kv(Config& c, const std::string& key, const std::string& value) {
    const Entry* e = find_entry(key);
    if (e == nullptr) throw ConfigError("unknown config key '" + key + "'");
    e->set(c, value);
    wire_derived(c);
}

Config parse_text(const std::string& text, const std::string& origin) {
    Config c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            apply_kv(c, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    validate(c);
    return c;
}

Config parse_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_text(ss.str(), path);
}

std::string canonical(const Config& c) {
    std::string out;
    for (const auto& e : registry()) {
        out += e.key;
        out += " = ";
        out += e.get(c);
        out += "\n";
    }
    return out;
}

std::uint64_t config_hash(const Config& c) {
    const std::string s = canonical(c);
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

void validate(const Config& c) {
    auto fail = [](const std::string& msg) { throw ConfigError("invalid config: " + msg); };
    if (!agents::variant_from_string(c.variant)) fail("run.variant must be one of ddpg, ar-ddpg, ar-rdpg, ar-cadpg");
    if (c.observation != "truth" && c.observation != "perception") fail("run.observation must be truth or perception");
    if (c.episodes < 0) fail("run.episodes must be >= 0");
    if (c.checkpoint_every <= 0) fail("run.checkpoint_every must be > 0");
    if (c.curve_window <= 0) fail("run.curve_window must be > 0");
    if (c.eval_routes <= 0) fail("eval.routes must be > 0");
    if (c.eval_alpha < 0.0 || c.eval_alpha > 1.0) fail("eval.alpha must be in [0, 1]");
    if (c.eval_friction <= 0.0 || c.eval_friction > 1.0) fail("eval.friction must be in (0, 1]");
    if (c.env.friction <= 0.0 || c.env.friction > 1.0) fail("env.friction must be in (0, 1]");
    if (c.env.max_steps <= 0) fail("env.max_steps must be > 0");
    if (c.agent.alpha < 0.0 || c.agent.alpha > 1.0) fail("agent.alpha must be in [0, 1]");
    if (c.agent.gamma < 0.0 || c.agent.gamma >= 1.0) fail("agent.gamma must be in [0, 1)");
    if (c.agent.tau <= 0.0 || c.agent.tau > 1.0) fail("agent.tau must be in (0, 1]");
    if (c.agent.batch <= 0 || c.agent.seq_batch <= 0) fail("batch sizes must be > 0");
    if (c.agent.bptt <= 0) fail("agent.bptt must be > 0");
    if (c.agent.buffer_capacity == 0) fail("agent.buffer_capacity must be > 0");
    if (c.agent.lr_actor <= 0.0 || c.agent.lr_critic <= 0.0) fail("learning rates must be > 0");
    if (c.env.render.width <= 0 || c.env.render.height <= 0) fail("render size must be positive");
    if (c.env.graph.nodes < 4) fail("track.nodes must be >= 4");
}

}  // namespace arlk::config
