#include <cmath>
#include <vector>

#include "doctest.h"

#include "arlk/agents.hpp"
#include "arlk/training.hpp"

using namespace arlk;
using agents::AgentConfig;
using agents::Variant;
using vehicle::Action;

namespace {

env::EnvConfig small_env() {
    env::EnvConfig cfg;
    cfg.max_steps = 40;
    return cfg;
}

AgentConfig small_agent() {
    AgentConfig cfg;
    cfg.batch = 8;
    cfg.seq_batch = 4;
    cfg.bptt = 4;
    cfg.buffer_capacity = 4096;
    cfg.hidden = 16;
    cfg.rnn_hidden = 8;
    return cfg;
}

[[maybe_unused]] std::vector<std::vector<double>> snapshot(const nn::ParamSet& ps) {
    std::vector<std::vector<double>> out;
    for (const auto& p : ps) out.push_back(p.t->values());
    return out;
}

}  // namespace

TEST_SUITE("agents") {
    TEST_CASE("action mixing follows the convex rule and clamps") {
        const Action mu{0.4, -0.2}, adv{-1.0, 1.0};
        const Action m0 = agents::mix_actions(mu, adv, 0.0);
        CHECK(m0.steer == 0.4);
        CHECK(m0.throttle == -0.2);
        const Action m1 = agents::mix_actions(mu, adv, 1.0);
        CHECK(m1.steer == -1.0);
        CHECK(m1.throttle == 1.0);
        for (double alpha : {0.1, 0.25, 0.5, 0.9}) {
            const Action m = agents::mix_actions(mu, adv, alpha);
            CHECK(m.steer == doctest::Approx((1 - alpha) * 0.4 + alpha * -1.0).epsilon(1e-15));
            CHECK(m.throttle == doctest::Approx((1 - alpha) * -0.2 + alpha * 1.0).epsilon(1e-15));
        }
        const Action big{3.0, -3.0};
        const Action mc = agents::mix_actions(big, big, 0.5);
        CHECK(mc.steer == 1.0);
        CHECK(mc.throttle == -1.0);
        CHECK_THROWS_AS(agents::mix_actions(mu, adv, -0.1), std::invalid_argument);
        CHECK_THROWS_AS(agents::mix_actions(mu, adv, 1.1), std::invalid_argument);
    }

    TEST_CASE("critic target bootstraps unless the state is absorbing") {
        CHECK(agents::critic_target(1.0, 2.0, 0.95, false) == doctest::Approx(2.9).epsilon(1e-15));
        CHECK(agents::critic_target(1.0, 2.0, 0.95, true) == 1.0);
        CHECK(agents::critic_target(-0.5, -1.0, 0.0, false) == -0.5);
        CHECK(agents::critic_target(0.0, 7.0, 0.5, false) == doctest::Approx(3.5).epsilon(1e-15));
        CHECK_THROWS_AS(agents::critic_target(0, 0, 1.0, false), std::invalid_argument);
        CHECK_THROWS_AS(agents::critic_target(0, 0, -0.1, false), std::invalid_argument);
    }

    TEST_CASE("variant names round-trip") {
        for (Variant v : {Variant::ddpg, Variant::ar_ddpg, Variant::ar_rdpg, Variant::ar_cadpg}) {
            const auto back = agents::variant_from_string(agents::to_string(v));
            REQUIRE(back.has_value());
            CHECK(*back == v);
        }
        CHECK_FALSE(agents::variant_from_string("ddgp").has_value());
    }

    TEST_CASE("actor and adversary raw gradients are exact negations") {
        Rng rng(100);
        nn::Mlp head({3, 8, 2}, true, rng);
        nn::Mlp critic({5, 8, 1}, false, rng);
        Tensor feats({6, 3});
        for (auto& v : feats.values()) v = rng.normal();
        const auto g_actor = agents::policy_raw_grad(head, critic, feats, -1.0);
        const auto g_adv = agents::policy_raw_grad(head, critic, feats, +1.0);
        REQUIRE(g_actor.size() == g_adv.size());
        REQUIRE(!g_actor.empty());
        double max_abs = 0.0;
        for (std::size_t i = 0; i < g_actor.size(); ++i) {
            CHECK(g_actor[i] == -g_adv[i]);  // IEEE-exact sign flip
            max_abs = std::max(max_abs, std::abs(g_actor[i]));
        }
        CHECK(max_abs > 0.0);
    }

    TEST_CASE("policy gradient ascends Q for the actor, descends for the adversary") {
        Rng rng(101);
        nn::Mlp critic({5, 16, 1}, false, rng);
        Tensor feats({16, 3});
        for (auto& v : feats.values()) v = rng.normal();
        auto mean_q = [&](nn::Mlp& head) {
            const Tensor a = head.forward(feats);
            Tensor xa({16, 5});
            for (int i = 0; i < 16; ++i) {
                for (int k = 0; k < 3; ++k) xa.at(i, k) = feats.at(i, k);
                for (int k = 0; k < 2; ++k) xa.at(i, 3 + k) = a.at(i, k);
            }
            const Tensor q = critic.forward(xa);
            double s = 0.0;
            for (int i = 0; i < 16; ++i) s += q[i];
            return s / 16.0;
        };
        for (double sign : {-1.0, +1.0}) {
            Rng hr(102);
            nn::Mlp head({3, 8, 2}, true, hr);
            const double before = mean_q(head);
            const auto grad = agents::policy_raw_grad(head, critic, feats, sign);
            std::size_t at = 0;
            const double eta = 1e-3;
            for (const auto& p : head.params("")) {
                for (auto& v : p.t->values()) v -= eta * grad[at++];
            }
            const double after = mean_q(head);
            if (sign < 0) CHECK(after > before);  // descent on -Q raises Q
            else CHECK(after < before);           // descent on +Q lowers Q
        }
    }

    TEST_CASE("flat agent: exploration noise only in training mode") {
        AgentConfig cfg = small_agent();
        cfg.noise_std0 = 0.3;
        auto agent = agents::make_agent(Variant::ar_ddpg, cfg, 5, small_env());
        env::Obs obs;
        obs.kin = {0.1, -0.2, 0.4};
        agent->begin_episode(0);
        const auto eval1 = agent->act(obs, false);
        const auto eval2 = agent->act(obs, false);
        CHECK(eval1.executed.steer == eval2.executed.steer);
        const auto tr1 = agent->act(obs, true);
        const auto tr2 = agent->act(obs, true);
        CHECK(tr1.executed.steer != tr2.executed.steer);  // fresh noise draws
        CHECK(std::abs(tr1.executed.steer) <= 1.0);
        CHECK(std::abs(tr1.executed.throttle) <= 1.0);
    }

    TEST_CASE("flat agent: executed action honors set_alpha") {
        AgentConfig cfg = small_agent();
        cfg.alpha = 0.0;
        auto agent = agents::make_agent(Variant::ar_ddpg, cfg, 6, small_env());
        env::Obs obs;
        obs.kin = {0.3, 0.1, 0.2};
        agent->begin_episode(0);
        const auto a0 = agent->act(obs, false);
        CHECK(a0.executed.steer == doctest::Approx(a0.mu.steer));
        agent->set_alpha(1.0);
        const auto a1 = agent->act(obs, false);
        CHECK(a1.executed.steer == doctest::Approx(a1.adv.steer));
        agent->set_alpha(0.5);
        const auto ah = agent->act(obs, false);
        CHECK(ah.executed.steer == doctest::Approx(0.5 * ah.mu.steer + 0.5 * ah.adv.steer));
    }

    TEST_CASE("critic loss shrinks when updating on a small fixed buffer") {
        AgentConfig cfg = small_agent();
        cfg.updates_per_episode = 1;
        cfg.noise_std0 = 0.0;
        cfg.noise_std_end = 0.0;
        env::EnvConfig ecfg = small_env();
        auto agent = agents::make_agent(Variant::ddpg, cfg, 7, ecfg);
        env::LaneKeepEnv e(ecfg);
        env::Obs obs = e.reset(123);
        agent->begin_episode(0);
        int pushed = 0;
        while (!e.done() && pushed < 16) {
            const auto act = agent->act(obs, true);
            const auto prev_state = e.state();
            const auto out = e.step(act.executed);
            agent->observe(e, prev_state, obs, act, out);
            obs = out.obs;
            ++pushed;
        }
        REQUIRE(pushed >= cfg.batch);
        std::vector<double> losses;
        for (int it = 0; it < 60; ++it) {
            const auto st = agent->update(cfg.batch);
            REQUIRE(st.updates == 1);
            REQUIRE(st.finite);
            losses.push_back(st.critic_loss);
        }
        int regressions = 0;
        for (std::size_t i = 1; i < losses.size(); ++i) regressions += losses[i] > losses[i - 1] ? 1 : 0;
        CHECK(regressions < static_cast<int>(losses.size()) / 2);
        CHECK(losses.back() < 0.5 * losses.front());
    }

    TEST_CASE("ddpg and ar-ddpg at alpha 0 produce identical actors and returns") {
        AgentConfig cfg = small_agent();
        cfg.alpha = 0.0;
        env::EnvConfig ecfg = small_env();
        auto a = agents::make_agent(Variant::ddpg, cfg, 9, ecfg);
        auto b = agents::make_agent(Variant::ar_ddpg, cfg, 9, ecfg);
        env::LaneKeepEnv ea(ecfg), eb(ecfg);
        for (int ep = 0; ep < 4; ++ep) {
            const auto ra = training::run_episode(ea, *a, training::episode_seed(1, ep), ep, true);
            const auto rb = training::run_episode(eb, *b, training::episode_seed(1, ep), ep, true);
            CHECK(ra.ret == rb.ret);
            CHECK(ra.steps == rb.steps);
        }
        // Actor and critic parameters must be bitwise identical; only the
        // (inert at alpha 0) adversary may differ through its own updates.
        Checkpoint ca, cb;
        a->save(ca);
        b->save(cb);
        for (const auto& name : ca.tensor_names()) {
            if (name.rfind("actor.", 0) == 0 || name.rfind("critic.", 0) == 0 || name.rfind("t_", 0) == 0) {
                CHECK(ca.tensor(name).values() == cb.tensor(name).values());
            }
        }
    }

    TEST_CASE("ar-ddpg with alpha > 0 diverges from ddpg") {
        AgentConfig cfg = small_agent();
        cfg.alpha = 0.3;
        env::EnvConfig ecfg = small_env();
        auto a = agents::make_agent(Variant::ddpg, cfg, 9, ecfg);
        auto b = agents::make_agent(Variant::ar_ddpg, cfg, 9, ecfg);
        env::LaneKeepEnv ea(ecfg), eb(ecfg);
        bool diverged = false;
        for (int ep = 0; ep < 4 && !diverged; ++ep) {
            const auto ra = training::run_episode(ea, *a, training::episode_seed(1, ep), ep, true);
            const auto rb = training::run_episode(eb, *b, training::episode_seed(1, ep), ep, true);
            diverged = ra.ret != rb.ret;
        }
        CHECK(diverged);
    }

    TEST_CASE("tau = 0 would freeze targets; small tau tracks slowly") {
        AgentConfig cfg = small_agent();
        cfg.tau = 1.0;
        env::EnvConfig ecfg = small_env();
        auto agent = agents::make_agent(Variant::ddpg, cfg, 13, ecfg);
        env::LaneKeepEnv e(ecfg);
        (void)training::run_episode(e, *agent, training::episode_seed(2, 0), 0, true);
        Checkpoint ck;
        agent->save(ck);
        // With tau = 1 the targets copy the online nets after every update.
        for (const auto& name : ck.tensor_names()) {
            if (name.rfind("actor.", 0) == 0) {
                const auto target = "t_" + name;
                CHECK(ck.tensor(target).values() == ck.tensor(name).values());
            }
        }
    }

    TEST_CASE("agent checkpoints round-trip bit-identically and resume identically") {
        for (Variant v : {Variant::ar_ddpg, Variant::ar_rdpg}) {
            CAPTURE(agents::to_string(v));
            AgentConfig cfg = small_agent();
            env::EnvConfig ecfg = small_env();
            auto agent = agents::make_agent(v, cfg, 21, ecfg);
            env::LaneKeepEnv e(ecfg);
            for (int ep = 0; ep < 3; ++ep) {
                (void)training::run_episode(e, *agent, training::episode_seed(3, ep), ep, true);
            }
            Checkpoint ck;
            agent->save(ck);
            auto clone = agents::load_agent(ck, ecfg);
            Checkpoint ck2;
            clone->save(ck2);
            CHECK(ck.serialize() == ck2.serialize());

            env::LaneKeepEnv e2(ecfg);
            const auto r1 = training::run_episode(e, *agent, training::episode_seed(3, 3), 3, true);
            const auto r2 = training::run_episode(e2, *clone, training::episode_seed(3, 3), 3, true);
            CHECK(r1.ret == r2.ret);
            Checkpoint ck3, ck4;
            agent->save(ck3);
            clone->save(ck4);
            CHECK(ck3.serialize() == ck4.serialize());
        }
    }

    TEST_CASE("visual agent: checkpoint round-trip and finite updates") {
        AgentConfig cfg = small_agent();
        cfg.batch = 4;
        env::EnvConfig ecfg = small_env();
        ecfg.max_steps = 12;
        ecfg.need_image = true;
        auto agent = agents::make_agent(Variant::ar_cadpg, cfg, 31, ecfg);
        env::LaneKeepEnv e(ecfg);
        agents::UpdateStats st;
        (void)training::run_episode(e, *agent, training::episode_seed(4, 0), 0, true, &st);
        CHECK(st.finite);
        CHECK(st.updates > 0);
        Checkpoint ck;
        agent->save(ck);
        auto clone = agents::load_agent(ck, ecfg);
        Checkpoint ck2;
        clone->save(ck2);
        CHECK(ck.serialize() == ck2.serialize());
        env::LaneKeepEnv e2(ecfg);
        const auto r1 = training::run_episode(e, *agent, training::episode_seed(4, 1), 1, true);
        const auto r2 = training::run_episode(e2, *clone, training::episode_seed(4, 1), 1, true);
        CHECK(r1.ret == r2.ret);
    }

    TEST_CASE("recurrent agent: fresh hidden state per episode") {
        AgentConfig cfg = small_agent();
        cfg.noise_std0 = 0.0;
        cfg.noise_std_end = 0.0;
        env::EnvConfig ecfg = small_env();
        auto agent = agents::make_agent(Variant::ar_rdpg, cfg, 41, ecfg);
        env::Obs obs;
        obs.kin = {0.2, 0.0, 0.3};
        agent->begin_episode(0);
        const auto first = agent->act(obs, false);
        (void)agent->act(obs, false);  // hidden state advanced
        const auto later = agent->act(obs, false);
        CHECK(first.executed.steer != later.executed.steer);
        agent->end_episode();
        agent->begin_episode(1);
        const auto fresh = agent->act(obs, false);
        CHECK(fresh.executed.steer == first.executed.steer);
    }

    TEST_CASE("update is a no-op until the buffer can fill a batch") {
        AgentConfig cfg = small_agent();
        cfg.batch = 64;
        auto agent = agents::make_agent(Variant::ddpg, cfg, 51, small_env());
        const auto st = agent->update(10);
        CHECK(st.updates == 0);
        CHECK(st.finite);
    }
}
