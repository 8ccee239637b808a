#include "arlk/agents.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "arlk/rng.hpp"

namespace arlk::agents {

const char* to_string(Variant v) {
    switch (v) {
        case Variant::ddpg: return "ddpg";
        case Variant::ar_ddpg: return "ar-ddpg";
        case Variant::ar_rdpg: return "ar-rdpg";
        case Variant::ar_cadpg: return "ar-cadpg";
    }
    return "?";
}

std::optional<Variant> variant_from_string(std::string_view s) {
    if (s == "ddpg") return Variant::ddpg;
    if (s == "ar-ddpg") return Variant::ar_ddpg;
    if (s == "ar-rdpg") return Variant::ar_rdpg;
    if (s == "ar-cadpg") return Variant::ar_cadpg;
    return std::nullopt;
}

vehicle::Action mix_actions(const vehicle::Action& a_mu, const vehicle::Action& a_adv, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must be in [0, 1]");
    vehicle::Action out;
    out.steer = std::clamp((1.0 - alpha) * a_mu.steer + alpha * a_adv.steer, -1.0, 1.0);
    out.throttle = std::clamp((1.0 - alpha) * a_mu.throttle + alpha * a_adv.throttle, -1.0, 1.0);
    return out;
}

double critic_target(double r, double q_next, double gamma, bool done) {
    if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("gamma must be in [0, 1)");
    return r + gamma * (done ? 0.0 : 1.0) * q_next;
}

// ---------------------------------------------------------------------------
// Small tensor helpers.
// ---------------------------------------------------------------------------

namespace {

Tensor row3(const std::array<double, 3>& a) {
    Tensor t({1, 3});
    t[0] = a[0];
    t[1] = a[1];
    t[2] = a[2];
    return t;
}

Tensor hcat(const Tensor& a, const Tensor& b) {
    const std::int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    if (b.dim(0) != n) throw std::invalid_argument("hcat: row mismatch");
    Tensor out({n, ca + cb});
    for (std::int64_t r = 0; r < n; ++r) {
        for (std::int64_t c = 0; c < ca; ++c) out.at(r, c) = a.at(r, c);
        for (std::int64_t c = 0; c < cb; ++c) out.at(r, ca + c) = b.at(r, c);
    }
    return out;
}

Tensor reshape_copy(const Tensor& t, std::vector<std::int64_t> shape) {
    Tensor out(std::move(shape));
    if (out.numel() != t.numel()) throw std::invalid_argument("reshape: element count mismatch");
    std::copy(t.values().begin(), t.values().end(), out.values().begin());
    return out;
}

bool all_finite(const nn::ParamSet& ps) {
    for (const auto& p : ps) {
        for (double x : p.t->values()) {
            if (!std::isfinite(x)) return false;
        }
    }
    return true;
}

// a = head(feats); q = critic([feats, a]); accumulate d(sign * mean q)/dhead.
// The critic's polluted grads are cleared before returning. Returns mean q.
double policy_accumulate(nn::Mlp& head, nn::Mlp& critic, const Tensor& feats, double sign) {
    nn::Mlp::Ctx hctx;
    const Tensor a = head.forward(feats, &hctx);
    nn::Mlp::Ctx qctx;
    const Tensor q = critic.forward(hcat(feats, a), &qctx);
    const std::int64_t n = q.dim(0);
    Tensor dq({n, 1});
    dq.fill(sign / static_cast<double>(n));
    const Tensor dx = critic.backward(qctx, dq);
    Tensor da({n, a.dim(1)});
    for (std::int64_t r = 0; r < n; ++r) {
        for (std::int64_t c = 0; c < a.dim(1); ++c) da.at(r, c) = dx.at(r, feats.dim(1) + c);
    }
    head.backward(hctx, da);
    nn::zero_grads(critic.params(""));
    double mean_q = 0.0;
    for (std::int64_t i = 0; i < n; ++i) mean_q += q[i];
    return mean_q / static_cast<double>(n);
}

// One Adam step of the policy objective; returns mean Q under the head.
double policy_update(nn::Mlp& head, nn::Adam& opt, nn::Mlp& critic, const Tensor& feats, double sign) {
    nn::zero_grads(head.params(""));
    const double q = policy_accumulate(head, critic, feats, sign);
    opt.step();
    nn::zero_grads(head.params(""));
    return q;
}

// ---------------------------------------------------------------------------
// Checkpoint plumbing shared by all variants.
// ---------------------------------------------------------------------------

void save_net(Checkpoint& ck, const nn::ParamSet& ps) {
    for (const auto& p : ps) ck.put_tensor(p.name, *p.t);
}

void load_net(const Checkpoint& ck, const nn::ParamSet& ps) {
    for (const auto& p : ps) {
        const Tensor& t = ck.tensor(p.name);
        if (!t.same_shape(*p.t)) throw std::runtime_error("checkpoint shape mismatch for " + p.name);
        *p.t = t;
    }
}

void save_adam(Checkpoint& ck, nn::Adam& opt, const std::string& tag) {
    const auto& ps = opt.params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        ck.put_tensor("adam." + tag + ".m." + ps[i].name, opt.moment1(i));
        ck.put_tensor("adam." + tag + ".v." + ps[i].name, opt.moment2(i));
    }
    ck.put_u64("adam." + tag + ".steps", {static_cast<std::uint64_t>(opt.steps())});
}

void load_adam(const Checkpoint& ck, nn::Adam& opt, const std::string& tag) {
    const auto& ps = opt.params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        opt.moment1(i) = ck.tensor("adam." + tag + ".m." + ps[i].name);
        opt.moment2(i) = ck.tensor("adam." + tag + ".v." + ps[i].name);
    }
    opt.set_steps(static_cast<std::int64_t>(ck.u64("adam." + tag + ".steps")[0]));
}

nlohmann::json config_to_json(const AgentConfig& c) {
    return {{"alpha", c.alpha},
            {"gamma", c.gamma},
            {"lr_actor", c.lr_actor},
            {"lr_critic", c.lr_critic},
            {"tau", c.tau},
            {"hidden", c.hidden},
            {"rnn_hidden", c.rnn_hidden},
            {"bptt", c.bptt},
            {"batch", c.batch},
            {"seq_batch", c.seq_batch},
            {"buffer_capacity", c.buffer_capacity},
            {"updates_per_episode", c.updates_per_episode},
            {"noise_std0", c.noise_std0},
            {"noise_std_end", c.noise_std_end},
            {"noise_decay_episodes", c.noise_decay_episodes},
            {"img_w", c.img_w},
            {"img_h", c.img_h},
            {"conv1_ch", c.conv1_ch},
            {"conv2_ch", c.conv2_ch},
            {"vis_embed", c.vis_embed},
            {"kin_embed", c.kin_embed},
            {"fusion_dim", c.fusion_dim}};
}

AgentConfig config_from_json(const nlohmann::json& j) {
    AgentConfig c;
    c.alpha = j.at("alpha").get<double>();
    c.gamma = j.at("gamma").get<double>();
    c.lr_actor = j.at("lr_actor").get<double>();
    c.lr_critic = j.at("lr_critic").get<double>();
    c.tau = j.at("tau").get<double>();
    c.hidden = j.at("hidden").get<int>();
    c.rnn_hidden = j.at("rnn_hidden").get<int>();
    c.bptt = j.at("bptt").get<int>();
    c.batch = j.at("batch").get<int>();
    c.seq_batch = j.at("seq_batch").get<int>();
    c.buffer_capacity = j.at("buffer_capacity").get<std::uint64_t>();
    c.updates_per_episode = j.at("updates_per_episode").get<int>();
    c.noise_std0 = j.at("noise_std0").get<double>();
    c.noise_std_end = j.at("noise_std_end").get<double>();
    c.noise_decay_episodes = j.at("noise_decay_episodes").get<int>();
    c.img_w = j.at("img_w").get<int>();
    c.img_h = j.at("img_h").get<int>();
    c.conv1_ch = j.at("conv1_ch").get<int>();
    c.conv2_ch = j.at("conv2_ch").get<int>();
    c.vis_embed = j.at("vis_embed").get<int>();
    c.kin_embed = j.at("kin_embed").get<int>();
    c.fusion_dim = j.at("fusion_dim").get<int>();
    return c;
}

double noise_schedule(const AgentConfig& c, int episode) {
    if (c.noise_decay_episodes <= 0 || episode >= c.noise_decay_episodes) return c.noise_std_end;
    const double f = static_cast<double>(episode) / c.noise_decay_episodes;
    return c.noise_std0 + (c.noise_std_end - c.noise_std0) * f;
}

vehicle::Action action_from(const Tensor& t) {
    if (!std::isfinite(t.at(0, 0)) || !std::isfinite(t.at(0, 1))) {
        throw std::runtime_error("non-finite policy output");
    }
    return {t.at(0, 0), t.at(0, 1)};
}

}  // namespace

std::vector<double> policy_raw_grad(nn::Mlp& head, nn::Mlp& critic, const Tensor& feats, double sign) {
    nn::zero_grads(head.params(""));
    policy_accumulate(head, critic, feats, sign);
    std::vector<double> out;
    for (const auto& p : head.params("")) {
        const auto& g = p.t->grad();
        out.insert(out.end(), g.begin(), g.end());
    }
    nn::zero_grads(head.params(""));
    return out;
}

// ---------------------------------------------------------------------------
// Flat kinematic agent: DDPG and AR-DDPG.
// ---------------------------------------------------------------------------

namespace {

class FlatAgent final : public Agent {
  public:
    FlatAgent(Variant v, const AgentConfig& cfg, std::uint64_t seed)
        : variant_(v), cfg_(cfg), alpha_(v == Variant::ddpg ? 0.0 : cfg.alpha), buffer_(cfg.buffer_capacity) {
        Rng init = Rng(seed).child("agent.init");
        actor_ = nn::Mlp({3, cfg_.hidden, cfg_.hidden, 2}, true, init);
        adversary_ = nn::Mlp({3, cfg_.hidden, cfg_.hidden, 2}, true, init);
        critic_ = nn::Mlp({5, cfg_.hidden, cfg_.hidden, 1}, false, init);
        t_actor_ = actor_;
        t_critic_ = critic_;
        opt_actor_ = nn::Adam(actor_.params("actor"), {cfg_.lr_actor, 0.9, 0.999, 1e-8});
        opt_adversary_ = nn::Adam(adversary_.params("adversary"), {cfg_.lr_actor, 0.9, 0.999, 1e-8});
        opt_critic_ = nn::Adam(critic_.params("critic"), {cfg_.lr_critic, 0.9, 0.999, 1e-8});
        noise_rng_ = Rng(seed).child("agent.noise");
        sample_rng_ = Rng(seed).child("agent.sample");
    }

    Variant variant() const override { return variant_; }
    const AgentConfig& config() const override { return cfg_; }
    void set_alpha(double a) override { alpha_ = a; }

    void begin_episode(int episode_index) override { noise_std_ = noise_schedule(cfg_, episode_index); }

    ActOutput act(const env::Obs& obs, bool training) override {
        const Tensor x = row3(obs.kin);
        vehicle::Action mu = action_from(actor_.forward(x));
        if (training) {
            mu.steer += noise_std_ * noise_rng_.normal();
            mu.throttle += noise_std_ * noise_rng_.normal();
        }
        vehicle::Action adv{};
        if (alpha_ > 0.0) adv = action_from(adversary_.forward(x));
        return {mix_actions(mu, adv, alpha_), mu, adv};
    }

    void observe(const env::LaneKeepEnv&, const vehicle::VehicleState&, const env::Obs& prev_obs,
                 const ActOutput& executed, const env::StepOutcome& out) override {
        replay::FlatTransition t;
        t.obs = prev_obs.kin;
        t.action = {executed.executed.steer, executed.executed.throttle};
        t.reward = out.reward;
        t.obs2 = out.obs.kin;
        t.done = out.bootstrap_cut;
        buffer_.push(t);
    }

    void end_episode() override {}

    UpdateStats update(int steps_in_episode) override {
        UpdateStats st;
        if (buffer_.size() < static_cast<std::size_t>(cfg_.batch)) return st;
        const int iters = cfg_.updates_per_episode > 0 ? cfg_.updates_per_episode
                                                       : (steps_in_episode + cfg_.batch - 1) / cfg_.batch;
        const int b = cfg_.batch;
        for (int it = 0; it < iters; ++it) {
            Tensor x({b, 3}), a({b, 2}), x2({b, 3});
            std::vector<double> r(b), done(b);
            for (int i = 0; i < b; ++i) {
                const auto& tr = buffer_.sample(sample_rng_);
                for (int k = 0; k < 3; ++k) x.at(i, k) = tr.obs[k];
                for (int k = 0; k < 2; ++k) a.at(i, k) = tr.action[k];
                for (int k = 0; k < 3; ++k) x2.at(i, k) = tr.obs2[k];
                r[i] = tr.reward;
                done[i] = tr.done;
            }
            st.critic_loss += critic_update(x, a, r, x2, done);
            st.actor_obj += policy_update(actor_, opt_actor_, critic_, x, -1.0);
            if (variant_ != Variant::ddpg) st.adv_obj += policy_update(adversary_, opt_adversary_, critic_, x, 1.0);
            nn::soft_update(t_actor_.params(""), actor_.params(""), cfg_.tau);
            nn::soft_update(t_critic_.params(""), critic_.params(""), cfg_.tau);
            ++train_steps_;
            ++st.updates;
        }
        if (st.updates > 0) {
            st.critic_loss /= st.updates;
            st.actor_obj /= st.updates;
            st.adv_obj /= st.updates;
        }
        st.finite = std::isfinite(st.critic_loss) && all_finite(actor_.params("")) && all_finite(critic_.params(""));
        return st;
    }

    void save(Checkpoint& ck) override {
        nlohmann::json meta = {{"format", "arlk-agent"},
                               {"version", 1},
                               {"variant", to_string(variant_)},
                               {"train_steps", train_steps_},
                               {"config", config_to_json(cfg_)}};
        ck.set_meta(meta.dump());
        save_net(ck, actor_.params("actor"));
        save_net(ck, adversary_.params("adversary"));
        save_net(ck, critic_.params("critic"));
        save_net(ck, t_actor_.params("t_actor"));
        save_net(ck, t_critic_.params("t_critic"));
        save_adam(ck, opt_actor_, "actor");
        save_adam(ck, opt_adversary_, "adversary");
        save_adam(ck, opt_critic_, "critic");
        buffer_.save(ck, "buffer");
        ck.put_u64("rng", {noise_rng_.state(), sample_rng_.state()});
        ck.put_u64("train_steps", {static_cast<std::uint64_t>(train_steps_)});
    }

    void load(const Checkpoint& ck) {
        load_net(ck, actor_.params("actor"));
        load_net(ck, adversary_.params("adversary"));
        load_net(ck, critic_.params("critic"));
        load_net(ck, t_actor_.params("t_actor"));
        load_net(ck, t_critic_.params("t_critic"));
        load_adam(ck, opt_actor_, "actor");
        load_adam(ck, opt_adversary_, "adversary");
        load_adam(ck, opt_critic_, "critic");
        buffer_.load(ck, "buffer");
        const auto& rs = ck.u64("rng");
        noise_rng_.set_state(rs[0]);
        sample_rng_.set_state(rs[1]);
        train_steps_ = static_cast<std::int64_t>(ck.u64("train_steps")[0]);
    }

    std::int64_t train_steps() const override { return train_steps_; }

  private:
    double critic_update(const Tensor& x, const Tensor& a, const std::vector<double>& r, const Tensor& x2,
                         const std::vector<double>& done) {
        const std::int64_t b = x.dim(0);
        const Tensor a2 = t_actor_.forward(x2);
        const Tensor q2 = t_critic_.forward(hcat(x2, a2));
        nn::Mlp::Ctx ctx;
        const Tensor q = critic_.forward(hcat(x, a), &ctx);
        Tensor dq({b, 1});
        double loss = 0.0;
        for (std::int64_t i = 0; i < b; ++i) {
            const double y = critic_target(r[i], q2[i], cfg_.gamma, done[i] != 0.0);
            const double e = q[i] - y;
            loss += e * e;
            dq[i] = 2.0 * e / static_cast<double>(b);
        }
        critic_.backward(ctx, dq);
        opt_critic_.step();
        nn::zero_grads(critic_.params(""));
        return loss / static_cast<double>(b);
    }

    Variant variant_;
    AgentConfig cfg_;
    double alpha_;
    nn::Mlp actor_, adversary_, critic_, t_actor_, t_critic_;
    nn::Adam opt_actor_, opt_adversary_, opt_critic_;
    replay::FlatBuffer buffer_;
    Rng noise_rng_{0}, sample_rng_{0};
    double noise_std_ = 0.0;
    std::int64_t train_steps_ = 0;
};

// ---------------------------------------------------------------------------
// Recurrent agent: AR-RDPG. One recurrent cell shared by all heads; the cell
// is trained by the critic's TD loss through truncated BPTT, while actor and
// adversary heads treat the hidden state as a frozen feature.
// ---------------------------------------------------------------------------

class RdpgAgent final : public Agent {
  public:
    RdpgAgent(const AgentConfig& cfg, std::uint64_t seed)
        : cfg_(cfg), alpha_(cfg.alpha), buffer_(cfg.buffer_capacity, cfg.bptt) {
        Rng init = Rng(seed).child("agent.init");
        cell_ = nn::RnnCell(3, cfg_.rnn_hidden, init);
        actor_ = nn::Mlp({cfg_.rnn_hidden, cfg_.hidden, 2}, true, init);
        adversary_ = nn::Mlp({cfg_.rnn_hidden, cfg_.hidden, 2}, true, init);
        critic_ = nn::Mlp({cfg_.rnn_hidden + 2, cfg_.hidden, 1}, false, init);
        t_cell_ = cell_;
        t_actor_ = actor_;
        t_critic_ = critic_;
        opt_actor_ = nn::Adam(actor_.params("actor"), {cfg_.lr_actor, 0.9, 0.999, 1e-8});
        opt_adversary_ = nn::Adam(adversary_.params("adversary"), {cfg_.lr_actor, 0.9, 0.999, 1e-8});
        nn::ParamSet critic_ps = critic_.params("critic");
        for (const auto& p : cell_.params("rnn")) critic_ps.push_back(p);
        opt_critic_ = nn::Adam(critic_ps, {cfg_.lr_critic, 0.9, 0.999, 1e-8});
        noise_rng_ = Rng(seed).child("agent.noise");
        sample_rng_ = Rng(seed).child("agent.sample");
        h_ = Tensor({1, cfg_.rnn_hidden});
    }

    Variant variant() const override { return Variant::ar_rdpg; }
    const AgentConfig& config() const override { return cfg_; }
    void set_alpha(double a) override { alpha_ = a; }

    void begin_episode(int episode_index) override {
        noise_std_ = noise_schedule(cfg_, episode_index);
        h_.fill(0.0);
        buffer_.begin_episode();
    }

    ActOutput act(const env::Obs& obs, bool training) override {
        const Tensor o = row3(obs.kin);
        h_prev_store_ = h_.values();
        h_ = cell_.step(h_, o);
        vehicle::Action mu = action_from(actor_.forward(h_));
        if (training) {
            mu.steer += noise_std_ * noise_rng_.normal();
            mu.throttle += noise_std_ * noise_rng_.normal();
        }
        vehicle::Action adv{};
        if (alpha_ > 0.0) adv = action_from(adversary_.forward(h_));
        return {mix_actions(mu, adv, alpha_), mu, adv};
    }

    void observe(const env::LaneKeepEnv&, const vehicle::VehicleState&, const env::Obs& prev_obs,
                 const ActOutput& executed, const env::StepOutcome& out) override {
        replay::SeqStep s;
        s.obs = prev_obs.kin;
        s.hidden = h_prev_store_;
        s.action = {executed.executed.steer, executed.executed.throttle};
        s.reward = out.reward;
        s.obs2 = out.obs.kin;
        s.done = out.bootstrap_cut;
        buffer_.push_step(s);
    }

    void end_episode() override { buffer_.end_episode(); }

    UpdateStats update(int steps_in_episode) override {
        UpdateStats st;
        if (buffer_.size_steps() < static_cast<std::size_t>(cfg_.batch)) return st;
        const int iters = cfg_.updates_per_episode > 0 ? cfg_.updates_per_episode
                                                       : (steps_in_episode + cfg_.batch - 1) / cfg_.batch;
        for (int it = 0; it < iters; ++it) {
            std::vector<replay::SeqWindow> windows(cfg_.seq_batch);
            for (auto& w : windows) w = buffer_.sample(sample_rng_);
            st.critic_loss += critic_update(windows);
            // Fresh unrolls (post-critic-step cell) provide the features for
            // both policy heads.
            const Tensor feats = unroll_features(windows);
            st.actor_obj += policy_update(actor_, opt_actor_, critic_, feats, -1.0);
            st.adv_obj += policy_update(adversary_, opt_adversary_, critic_, feats, 1.0);
            nn::soft_update(t_cell_.params(""), cell_.params(""), cfg_.tau);
            nn::soft_update(t_actor_.params(""), actor_.params(""), cfg_.tau);
            nn::soft_update(t_critic_.params(""), critic_.params(""), cfg_.tau);
            ++train_steps_;
            ++st.updates;
        }
        if (st.updates > 0) {
            st.critic_loss /= st.updates;
            st.actor_obj /= st.updates;
            st.adv_obj /= st.updates;
        }
        st.finite = std::isfinite(st.critic_loss) && all_finite(actor_.params("")) && all_finite(critic_.params("")) &&
                    all_finite(cell_.params(""));
        return st;
    }

    void save(Checkpoint& ck) override {
        nlohmann::json meta = {{"format", "arlk-agent"},
                               {"version", 1},
                               {"variant", to_string(Variant::ar_rdpg)},
                               {"train_steps", train_steps_},
                               {"config", config_to_json(cfg_)}};
        ck.set_meta(meta.dump());
        save_net(ck, cell_.params("rnn"));
        save_net(ck, actor_.params("actor"));
        save_net(ck, adversary_.params("adversary"));
        save_net(ck, critic_.params("critic"));
        save_net(ck, t_cell_.params("t_rnn"));
        save_net(ck, t_actor_.params("t_actor"));
        save_net(ck, t_critic_.params("t_critic"));
        save_adam(ck, opt_actor_, "actor");
        save_adam(ck, opt_adversary_, "adversary");
        save_adam(ck, opt_critic_, "critic");
        buffer_.save(ck, "buffer");
        ck.put_u64("rng", {noise_rng_.state(), sample_rng_.state()});
        ck.put_u64("train_steps", {static_cast<std::uint64_t>(train_steps_)});
    }

    void load(const Checkpoint& ck) {
        load_net(ck, cell_.params("rnn"));
        load_net(ck, actor_.params("actor"));
        load_net(ck, adversary_.params("adversary"));
        load_net(ck, critic_.params("critic"));
        load_net(ck, t_cell_.params("t_rnn"));
        load_net(ck, t_actor_.params("t_actor"));
        load_net(ck, t_critic_.params("t_critic"));
        load_adam(ck, opt_actor_, "actor");
        load_adam(ck, opt_adversary_, "adversary");
        load_adam(ck, opt_critic_, "critic");
        buffer_.load(ck, "buffer", cfg_.rnn_hidden);
        const auto& rs = ck.u64("rng");
        noise_rng_.set_state(rs[0]);
        sample_rng_.set_state(rs[1]);
        train_steps_ = static_cast<std::int64_t>(ck.u64("train_steps")[0]);
    }

    std::int64_t train_steps() const override { return train_steps_; }

  private:
    Tensor window_h0(const replay::SeqWindow& w) const {
        Tensor h0({1, cfg_.rnn_hidden});
        const auto& hidden = (*w.episode)[w.start].hidden;
        std::copy(hidden.begin(), hidden.end(), h0.values().begin());
        return h0;
    }

    double critic_update(const std::vector<replay::SeqWindow>& windows) {
        nn::zero_grads(opt_critic_.params());
        int total = 0;
        for (const auto& w : windows) total += w.length;
        double loss = 0.0;
        for (const auto& w : windows) {
            const Tensor h0 = window_h0(w);
            std::vector<Tensor> obs(w.length), obs_t(w.length + 1);
            for (int i = 0; i < w.length; ++i) {
                obs[i] = row3((*w.episode)[w.start + i].obs);
                obs_t[i] = obs[i];
            }
            obs_t[w.length] = row3((*w.episode)[w.start + w.length - 1].obs2);
            const nn::RnnUnroll fwd = nn::rnn_forward(cell_, h0, obs);
            const nn::RnnUnroll fwd_t = nn::rnn_forward(t_cell_, h0, obs_t);
            std::vector<Tensor> dhs(w.length);
            for (int i = 0; i < w.length; ++i) {
                const auto& step = (*w.episode)[w.start + i];
                Tensor a({1, 2});
                a[0] = step.action[0];
                a[1] = step.action[1];
                const Tensor& h_next = fwd_t.hs[i + 1];
                const Tensor a2 = t_actor_.forward(h_next);
                const Tensor q2 = t_critic_.forward(hcat(h_next, a2));
                const double y = critic_target(step.reward, q2[0], cfg_.gamma, step.done != 0.0);
                nn::Mlp::Ctx ctx;
                const Tensor q = critic_.forward(hcat(fwd.hs[i], a), &ctx);
                const double e = q[0] - y;
                loss += e * e;
                Tensor dq({1, 1});
                dq[0] = 2.0 * e / static_cast<double>(total);
                const Tensor dx = critic_.backward(ctx, dq);
                Tensor dh({1, cfg_.rnn_hidden});
                for (int k = 0; k < cfg_.rnn_hidden; ++k) dh[k] = dx.at(0, k);
                dhs[i] = dh;
            }
            nn::rnn_backward(cell_, h0, obs, fwd, dhs);
        }
        opt_critic_.step();
        nn::zero_grads(opt_critic_.params());
        return loss / static_cast<double>(total);
    }

    Tensor unroll_features(const std::vector<replay::SeqWindow>& windows) const {
        int total = 0;
        for (const auto& w : windows) total += w.length;
        Tensor feats({total, cfg_.rnn_hidden});
        int at = 0;
        for (const auto& w : windows) {
            Tensor h = window_h0(w);
            for (int i = 0; i < w.length; ++i) {
                h = cell_.step(h, row3((*w.episode)[w.start + i].obs));
                for (int k = 0; k < cfg_.rnn_hidden; ++k) feats.at(at, k) = h[k];
                ++at;
            }
        }
        return feats;
    }

    AgentConfig cfg_;
    double alpha_;
    nn::RnnCell cell_, t_cell_;
    nn::Mlp actor_, adversary_, critic_, t_actor_, t_critic_;
    nn::Adam opt_actor_, opt_adversary_, opt_critic_;
    replay::SeqBuffer buffer_;
    Tensor h_;
    std::vector<double> h_prev_store_;
    Rng noise_rng_{0}, sample_rng_{0};
    double noise_std_ = 0.0;
    std::int64_t train_steps_ = 0;
};

}  // namespace

// ---------------------------------------------------------------------------
// Visual encoder and AR-CADPG agent.
// ---------------------------------------------------------------------------

namespace {

struct VisualEncoder {
    nn::Conv2d conv1, conv2;
    nn::SpatialAttention attn;
    nn::Dense dense_v, dense_k;
    nn::Fusion fuse;
    int img_h = 0, img_w = 0, h2 = 0, w2 = 0, flat_dim = 0;

    VisualEncoder() = default;
    VisualEncoder(const AgentConfig& c, Rng& rng)
        : conv1(1, c.conv1_ch, 5, 2, 2, rng),
          conv2(c.conv1_ch, c.conv2_ch, 3, 2, 1, rng),
          attn(rng),
          img_h(c.img_h),
          img_w(c.img_w) {
        const int h1 = conv1.out_h(c.img_h), w1 = conv1.out_w(c.img_w);
        h2 = conv2.out_h(h1);
        w2 = conv2.out_w(w1);
        flat_dim = c.conv2_ch * h2 * w2;
        dense_v = nn::Dense(flat_dim, c.vis_embed, rng);
        dense_k = nn::Dense(3, c.kin_embed, rng);
        fuse = nn::Fusion(c.vis_embed, c.kin_embed, c.fusion_dim, rng);
    }

    struct Ctx {
        Tensor x, kin;
        Tensor a1, a2;  // tanh outputs of the conv stages
        nn::SpatialAttention::Ctx actx;
        Tensor flat;
        Tensor zv, zk;  // tanh embeddings
        nn::Fusion::Ctx fctx;
    };

    Tensor forward(const Tensor& imgs, const Tensor& kin, Ctx* ctx) const {
        const Tensor c1 = conv1.forward(imgs);
        const Tensor a1 = nn::Tanh::forward(c1);
        const Tensor c2 = conv2.forward(a1);
        const Tensor a2 = nn::Tanh::forward(c2);
        nn::SpatialAttention::Ctx actx;
        const auto att = attn.forward(a2, ctx ? &ctx->actx : &actx);
        const std::int64_t n = imgs.dim(0);
        const Tensor flat = reshape_copy(att.attended, {n, flat_dim});
        const Tensor zv = nn::Tanh::forward(dense_v.forward(flat));
        const Tensor zk = nn::Tanh::forward(dense_k.forward(kin));
        nn::Fusion::Ctx fctx;
        const Tensor z = fuse.forward(zv, zk, ctx ? &ctx->fctx : &fctx);
        if (ctx != nullptr) {
            ctx->x = imgs;
            ctx->kin = kin;
            ctx->a1 = a1;
            ctx->a2 = a2;
            ctx->flat = flat;
            ctx->zv = zv;
            ctx->zk = zk;
        }
        return z;
    }

    void backward(Ctx& ctx, const Tensor& dz) {
        auto [dzv, dzk] = fuse.backward(ctx.fctx, dz);
        const Tensor dzk_lin = nn::Tanh::backward(ctx.zk, dzk);
        dense_k.backward(ctx.kin, dzk_lin);
        const Tensor dzv_lin = nn::Tanh::backward(ctx.zv, dzv);
        const Tensor dflat = dense_v.backward(ctx.flat, dzv_lin);
        const Tensor datt = reshape_copy(dflat, ctx.a2.shape());
        const Tensor da2 = attn.backward(ctx.a2, ctx.actx, datt);
        const Tensor dc2 = nn::Tanh::backward(ctx.a2, da2);
        const Tensor da1 = conv2.backward(ctx.a1, dc2);
        const Tensor dc1 = nn::Tanh::backward(ctx.a1, da1);
        conv1.backward(ctx.x, dc1);
    }

    nn::ParamSet params(const std::string& prefix) {
        nn::ParamSet ps = conv1.params(prefix + ".conv1");
        for (const auto& p : conv2.params(prefix + ".conv2")) ps.push_back(p);
        for (const auto& p : attn.params(prefix + ".attn")) ps.push_back(p);
        for (const auto& p : dense_v.params(prefix + ".dense_v")) ps.push_back(p);
        for (const auto& p : dense_k.params(prefix + ".dense_k")) ps.push_back(p);
        for (const auto& p : fuse.params(prefix + ".fuse")) ps.push_back(p);
        return ps;
    }
};

class CadpgAgent final : public Agent {
  public:
    CadpgAgent(const AgentConfig& cfg, std::uint64_t seed, const env::EnvConfig& env_cfg)
        : cfg_(cfg), alpha_(cfg.alpha), env_cfg_(env_cfg), buffer_(cfg.buffer_capacity) {
        Rng init = Rng(seed).child("agent.init");
        enc_ = VisualEncoder(cfg_, init);
        actor_ = nn::Mlp({cfg_.fusion_dim, cfg_.hidden, 2}, true, init);
        adversary_ = nn::Mlp({cfg_.fusion_dim, cfg_.hidden, 2}, true, init);
        critic_ = nn::Mlp({cfg_.fusion_dim + 2, cfg_.hidden, 1}, false, init);
        t_enc_ = enc_;
        t_actor_ = actor_;
        t_critic_ = critic_;
        opt_actor_ = nn::Adam(actor_.params("actor"), {cfg_.lr_actor, 0.9, 0.999, 1e-8});
        opt_adversary_ = nn::Adam(adversary_.params("adversary"), {cfg_.lr_actor, 0.9, 0.999, 1e-8});
        nn::ParamSet critic_ps = critic_.params("critic");
        for (const auto& p : enc_.params("enc")) critic_ps.push_back(p);
        opt_critic_ = nn::Adam(critic_ps, {cfg_.lr_critic, 0.9, 0.999, 1e-8});
        noise_rng_ = Rng(seed).child("agent.noise");
        sample_rng_ = Rng(seed).child("agent.sample");
    }

    Variant variant() const override { return Variant::ar_cadpg; }
    const AgentConfig& config() const override { return cfg_; }
    void set_alpha(double a) override { alpha_ = a; }

    void begin_episode(int episode_index) override { noise_std_ = noise_schedule(cfg_, episode_index); }

    ActOutput act(const env::Obs& obs, bool training) override {
        const Tensor z = encode_single(obs);
        vehicle::Action mu = action_from(actor_.forward(z));
        if (training) {
            mu.steer += noise_std_ * noise_rng_.normal();
            mu.throttle += noise_std_ * noise_rng_.normal();
        }
        vehicle::Action adv{};
        if (alpha_ > 0.0) adv = action_from(adversary_.forward(z));
        return {mix_actions(mu, adv, alpha_), mu, adv};
    }

    void observe(const env::LaneKeepEnv& e, const vehicle::VehicleState& prev_state, const env::Obs& prev_obs,
                 const ActOutput& executed, const env::StepOutcome& out) override {
        replay::VisualTransition t;
        t.route_seed = e.route_seed();
        t.frame0 = e.frame_index() - 1;
        t.occ = e.occlusion();
        t.s0 = prev_state;
        t.s1 = e.state();
        t.kin = prev_obs.kin;
        t.kin2 = out.obs.kin;
        t.action = {executed.executed.steer, executed.executed.throttle};
        t.reward = out.reward;
        t.done = out.bootstrap_cut;
        buffer_.push(t);
        route_for(t.route_seed);  // keep the cache warm for sampling
    }

    void end_episode() override {}

    UpdateStats update(int steps_in_episode) override {
        UpdateStats st;
        if (buffer_.size() < static_cast<std::size_t>(cfg_.batch)) return st;
        const int iters = cfg_.updates_per_episode > 0 ? cfg_.updates_per_episode
                                                       : (steps_in_episode + cfg_.batch - 1) / cfg_.batch;
        const int b = cfg_.batch;
        for (int it = 0; it < iters; ++it) {
            std::vector<const replay::VisualTransition*> batch(b);
            for (int i = 0; i < b; ++i) batch[i] = &buffer_.sample(sample_rng_);
            Tensor img0({b, 1, cfg_.img_h, cfg_.img_w}), img1({b, 1, cfg_.img_h, cfg_.img_w});
            Tensor kin0({b, 3}), kin1({b, 3}), a({b, 2});
            std::vector<double> r(b), done(b);
            for (int i = 0; i < b; ++i) {
                const auto& tr = *batch[i];
                const auto route = route_for(tr.route_seed);
                render_into(img0, i, tr.s0, *route, tr.occ, tr.frame0);
                render_into(img1, i, tr.s1, *route, tr.occ, tr.frame0 + 1);
                for (int k = 0; k < 3; ++k) kin0.at(i, k) = tr.kin[k];
                for (int k = 0; k < 3; ++k) kin1.at(i, k) = tr.kin2[k];
                a.at(i, 0) = tr.action[0];
                a.at(i, 1) = tr.action[1];
                r[i] = tr.reward;
                done[i] = tr.done;
            }
            st.critic_loss += critic_update(img0, kin0, a, r, img1, kin1, done);
            const Tensor z = enc_.forward(img0, kin0, nullptr);  // post-update features, stop-grad
            st.actor_obj += policy_update(actor_, opt_actor_, critic_, z, -1.0);
            st.adv_obj += policy_update(adversary_, opt_adversary_, critic_, z, 1.0);
            soft_update_all();
            ++train_steps_;
            ++st.updates;
        }
        if (st.updates > 0) {
            st.critic_loss /= st.updates;
            st.actor_obj /= st.updates;
            st.adv_obj /= st.updates;
        }
        st.finite = std::isfinite(st.critic_loss) && all_finite(actor_.params("")) && all_finite(critic_.params("")) &&
                    all_finite(enc_.params(""));
        return st;
    }

    void save(Checkpoint& ck) override {
        nlohmann::json meta = {{"format", "arlk-agent"},
                               {"version", 1},
                               {"variant", to_string(Variant::ar_cadpg)},
                               {"train_steps", train_steps_},
                               {"config", config_to_json(cfg_)}};
        ck.set_meta(meta.dump());
        save_net(ck, enc_.params("enc"));
        save_net(ck, actor_.params("actor"));
        save_net(ck, adversary_.params("adversary"));
        save_net(ck, critic_.params("critic"));
        save_net(ck, t_enc_.params("t_enc"));
        save_net(ck, t_actor_.params("t_actor"));
        save_net(ck, t_critic_.params("t_critic"));
        save_adam(ck, opt_actor_, "actor");
        save_adam(ck, opt_adversary_, "adversary");
        save_adam(ck, opt_critic_, "critic");
        buffer_.save(ck, "buffer");
        ck.put_u64("rng", {noise_rng_.state(), sample_rng_.state()});
        ck.put_u64("train_steps", {static_cast<std::uint64_t>(train_steps_)});
    }

    void load(const Checkpoint& ck) {
        load_net(ck, enc_.params("enc"));
        load_net(ck, actor_.params("actor"));
        load_net(ck, adversary_.params("adversary"));
        load_net(ck, critic_.params("critic"));
        load_net(ck, t_enc_.params("t_enc"));
        load_net(ck, t_actor_.params("t_actor"));
        load_net(ck, t_critic_.params("t_critic"));
        load_adam(ck, opt_actor_, "actor");
        load_adam(ck, opt_adversary_, "adversary");
        load_adam(ck, opt_critic_, "critic");
        buffer_.load(ck, "buffer");
        const auto& rs = ck.u64("rng");
        noise_rng_.set_state(rs[0]);
        sample_rng_.set_state(rs[1]);
        train_steps_ = static_cast<std::int64_t>(ck.u64("train_steps")[0]);
    }

    std::int64_t train_steps() const override { return train_steps_; }

  private:
    Tensor encode_single(const env::Obs& obs) {
        if (obs.image.width != cfg_.img_w || obs.image.height != cfg_.img_h) {
            throw std::invalid_argument("visual agent needs image observations of the configured size");
        }
        Tensor img({1, 1, cfg_.img_h, cfg_.img_w});
        std::copy(obs.image.pix.begin(), obs.image.pix.end(), img.values().begin());
        return enc_.forward(img, row3(obs.kin), nullptr);
    }

    std::shared_ptr<const track::Route> route_for(std::uint64_t seed) {
        auto it = route_cache_.find(seed);
        if (it != route_cache_.end()) return it->second;
        auto route = std::make_shared<const track::Route>(
            env::make_route(seed, env_cfg_.graph, env_cfg_.min_route_edges));
        route_cache_.emplace(seed, route);
        return route;
    }

    void render_into(Tensor& dst, int row, const vehicle::VehicleState& s, const track::Route& route,
                     const snow::OcclusionConfig& occ, std::uint64_t frame) const {
        const snow::RasterImage img = snow::render(s, route, occ, frame, env_cfg_.render);
        std::copy(img.pix.begin(), img.pix.end(),
                  dst.values().begin() + static_cast<std::size_t>(row) * img.pix.size());
    }

    double critic_update(const Tensor& img0, const Tensor& kin0, const Tensor& a, const std::vector<double>& r,
                         const Tensor& img1, const Tensor& kin1, const std::vector<double>& done) {
        const std::int64_t b = img0.dim(0);
        const Tensor z1 = t_enc_.forward(img1, kin1, nullptr);
        const Tensor a2 = t_actor_.forward(z1);
        const Tensor q2 = t_critic_.forward(hcat(z1, a2));
        VisualEncoder::Ctx ectx;
        const Tensor z0 = enc_.forward(img0, kin0, &ectx);
        nn::Mlp::Ctx qctx;
        const Tensor q = critic_.forward(hcat(z0, a), &qctx);
        Tensor dq({b, 1});
        double loss = 0.0;
        for (std::int64_t i = 0; i < b; ++i) {
            const double y = critic_target(r[i], q2[i], cfg_.gamma, done[i] != 0.0);
            const double e = q[i] - y;
            loss += e * e;
            dq[i] = 2.0 * e / static_cast<double>(b);
        }
        const Tensor dx = critic_.backward(qctx, dq);
        Tensor dz0({b, cfg_.fusion_dim});
        for (std::int64_t i = 0; i < b; ++i) {
            for (int k = 0; k < cfg_.fusion_dim; ++k) dz0.at(i, k) = dx.at(i, k);
        }
        enc_.backward(ectx, dz0);
        opt_critic_.step();
        nn::zero_grads(opt_critic_.params());
        return loss / static_cast<double>(b);
    }

    void soft_update_all() {
        nn::soft_update(t_enc_.params(""), enc_.params(""), cfg_.tau);
        nn::soft_update(t_actor_.params(""), actor_.params(""), cfg_.tau);
        nn::soft_update(t_critic_.params(""), critic_.params(""), cfg_.tau);
    }

    AgentConfig cfg_;
    double alpha_;
    env::EnvConfig env_cfg_;
    VisualEncoder enc_, t_enc_;
    nn::Mlp actor_, adversary_, critic_, t_actor_, t_critic_;
    nn::Adam opt_actor_, opt_adversary_, opt_critic_;
    replay::VisualBuffer buffer_;
    std::unordered_map<std::uint64_t, std::shared_ptr<const track::Route>> route_cache_;
    Rng noise_rng_{0}, sample_rng_{0};
    double noise_std_ = 0.0;
    std::int64_t train_steps_ = 0;
};

}  // namespace

std::unique_ptr<Agent> make_agent(Variant v, const AgentConfig& cfg, std::uint64_t seed,
                                  const env::EnvConfig& env_cfg) {
    switch (v) {
        case Variant::ddpg:
        case Variant::ar_ddpg: return std::make_unique<FlatAgent>(v, cfg, seed);
        case Variant::ar_rdpg: return std::make_unique<RdpgAgent>(cfg, seed);
        case Variant::ar_cadpg: return std::make_unique<CadpgAgent>(cfg, seed, env_cfg);
    }
    throw std::logic_error("unknown variant");
}

std::unique_ptr<Agent> load_agent(const Checkpoint& ck, const env::EnvConfig& env_cfg) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(ck.meta());
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(std::string("agent checkpoint meta is not json: ") + e.what());
    }
    if (meta.value("format", "") != "arlk-agent") throw std::runtime_error("not an agent checkpoint");
    if (meta.value("version", 0) != 1) throw std::runtime_error("unsupported agent checkpoint version");
    const auto v = variant_from_string(meta.at("variant").get<std::string>());
    if (!v) throw std::runtime_error("unknown variant in checkpoint");
    const AgentConfig cfg = config_from_json(meta.at("config"));
    switch (*v) {
        case Variant::ddpg:
        case Variant::ar_ddpg: {
            auto a = std::make_unique<FlatAgent>(*v, cfg, 0);
            a->load(ck);
            return a;
        }
        case Variant::ar_rdpg: {
            auto a = std::make_unique<RdpgAgent>(cfg, 0);
            a->load(ck);
            return a;
        }
        case Variant::ar_cadpg: {
            auto a = std::make_unique<CadpgAgent>(cfg, 0, env_cfg);
            a->load(ck);
            return a;
        }
    }
    throw std::logic_error("unknown variant");
}

}  // namespace arlk::agents
