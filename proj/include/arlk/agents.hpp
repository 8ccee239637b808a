#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "arlk/checkpoint.hpp"
#include "arlk/env.hpp"
#include "arlk/nn.hpp"
#include "arlk/replay.hpp"

namespace arlk::agents {

enum class Variant { ddpg, ar_ddpg, ar_rdpg, ar_cadpg };

const char* to_string(Variant v);
std::optional<Variant> variant_from_string(std::string_view s);

struct AgentConfig {
    double alpha = 0.1;  // adversarial mixing weight (0 for plain ddpg)
    double gamma = 0.95;
    double lr_actor = 2e-5;  // actor and adversary
    double lr_critic = 2e-4;
    double tau = 0.01;
    int hidden = 64;      // dense head width
    int rnn_hidden = 32;  // recurrent state size
    int bptt = 8;         // truncation window
    int batch = 64;       // flat / visual minibatch
    int seq_batch = 16;   // windows per recurrent update
    std::uint64_t buffer_capacity = 800000;
    int updates_per_episode = 0;  // 0 -> ceil(steps / batch)
    double noise_std0 = 0.2;
    double noise_std_end = 0.02;
    int noise_decay_episodes = 300;
    // Visual tower (ar-cadpg).
    int img_w = 64, img_h = 64;
    int conv1_ch = 8, conv2_ch = 16;
    int vis_embed = 64, kin_embed = 16, fusion_dim = 64;
};

// Executed action per the mixing rule, plus both raw proposals.
struct ActOutput {
    vehicle::Action executed;
    vehicle::Action mu;
    vehicle::Action adv;
};

// a_tilde = (1 - alpha) * a_mu + alpha * a_adv, then clamped to [-1, 1]^2.
vehicle::Action mix_actions(const vehicle::Action& a_mu, const vehicle::Action& a_adv, double alpha);

// y = r + gamma * (1 - done) * q_next.
double critic_target(double r, double q_next, double gamma, bool done);

struct UpdateStats {
    double critic_loss = 0.0;  // mean over the episode's updates
    double actor_obj = 0.0;    // mean Q under the actor
    double adv_obj = 0.0;      // mean Q under the adversary
    int updates = 0;
    bool finite = true;
};

class Agent {
  public:
    virtual ~Agent() = default;

    virtual Variant variant() const = 0;
    virtual const AgentConfig& config() const = 0;
    virtual void set_alpha(double a) = 0;  // evaluation-time override

    virtual void begin_episode(int episode_index) = 0;
    virtual ActOutput act(const env::Obs& obs, bool training) = 0;
    // Store the transition that `executed` produced. `prev_obs` is the
    // observation the action was computed from and `prev_state` the vehicle
    // state at that moment (needed to re-render replayed frames).
    virtual void observe(const env::LaneKeepEnv& e, const vehicle::VehicleState& prev_state, const env::Obs& prev_obs,
                         const ActOutput& executed, const env::StepOutcome& out) = 0;
    virtual void end_episode() = 0;
    virtual UpdateStats update(int steps_in_episode) = 0;

    virtual void save(Checkpoint& ck) = 0;
    virtual std::int64_t train_steps() const = 0;
};

// Fresh agent with seeded initialization. env_cfg supplies the pieces needed
// to re-render replayed visual frames.
std::unique_ptr<Agent> make_agent(Variant v, const AgentConfig& cfg, std::uint64_t seed,
                                  const env::EnvConfig& env_cfg);

// Rebuild an agent (architecture from the checkpoint manifest, parameters,
// optimizer moments, replay contents, RNG streams) for resume or evaluation.
std::unique_ptr<Agent> load_agent(const Checkpoint& ck, const env::EnvConfig& env_cfg);

// ---------------------------------------------------------------------------
// Exposed for unit and acceptance tests.
// ---------------------------------------------------------------------------

// Flattened raw gradient of the policy objective sign * mean Q(s, head(s))
// w.r.t. head parameters, with the critic frozen (its accumulated grads are
// discarded). sign = -1 gives the actor's descent direction on -Q, +1 the
// adversary's on +Q.
std::vector<double> policy_raw_grad(nn::Mlp& head, nn::Mlp& critic, const Tensor& feats, double sign);

}  // namespace arlk::agents
