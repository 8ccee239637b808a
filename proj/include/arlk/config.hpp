#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "arlk/agents.hpp"
#include "arlk/env.hpp"

namespace arlk::config {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Everything a run needs, with desk-scale defaults. Parsed from a flat
// `key = value` file; every key in the registry has a default, unknown keys
// are rejected, and the canonical dump (all keys, fixed order, %.17g doubles)
// is what gets hashed into run manifests.
struct Config {
    env::EnvConfig env;
    agents::AgentConfig agent;

    std::string variant = "ar-ddpg";
    std::string observation = "truth";  // truth | perception
    std::uint64_t seed = 1;
    int episodes = 300;
    int checkpoint_every = 50;
    int curve_window = 20;

    int eval_routes = 20;
    double eval_alpha = 0.0;
    double eval_friction = 0.35;
    std::uint64_t eval_seed = 9000;
};

// Registry-backed access so the CLI can apply `--set key=value` style
// overrides through the same validation as the file parser.
std::vector<std::string> known_keys();
void apply_kv(Config& c, const std::string& key, const std::string& value);

Config parse_text(const std::string& text, const std::string& origin = "<string>");
Config parse_file(const std::string& path);

std::string canonical(const Config& c);
std::uint64_t config_hash(const Config& c);

// Range checks shared by the parser and programmatic construction.
void validate(const Config& c);

}  // namespace arlk::config
