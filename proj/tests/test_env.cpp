#include <cmath>
#include <vector>

#include "doctest.h"

#include "arlk/env.hpp"
#include "arlk/rng.hpp"

using namespace arlk;
using vehicle::Action;

namespace {

track::LaneFrameError err_of(double d, double phi) {
    track::LaneFrameError e;
    e.d = d;
    e.phi = phi;
    e.s = 10.0;
    return e;
}

vehicle::VehicleState state_v(double v) {
    vehicle::VehicleState s;
    s.v = v;
    return s;
}

}  // namespace

TEST_SUITE("env") {
    TEST_CASE("step reward peaks at w_v for perfect tracking") {
        reward::RewardWeights w;
        const double r = reward::step_reward(err_of(0, 0), state_v(15.0), Action{0.2, 0.0},
                                             Action{0.2, 0.0}, vehicle::Termination::running, w, 3.5, 15.0);
        CHECK(r == doctest::Approx(w.w_v).epsilon(1e-15));
    }

    TEST_CASE("step reward is bounded above by w_v") {
        reward::RewardWeights w;
        Rng rng(7);
        for (int i = 0; i < 2000; ++i) {
            const auto e = err_of(rng.uniform(-2.0, 2.0), rng.uniform(-1.0, 1.0));
            const Action a{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
            const Action p{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
            const auto verdict = (i % 5 == 0) ? vehicle::Termination::lane_departure
                                              : vehicle::Termination::running;
            const double r = reward::step_reward(e, state_v(rng.uniform(0.0, 15.0)), a, p, verdict, w,
                                                 3.5, 15.0);
            CHECK(r <= w.w_v + 1e-12);
        }
    }

    TEST_CASE("departure penalty and deviation symmetry") {
        reward::RewardWeights w;
        const auto base = reward::step_reward(err_of(0.4, 0.05), state_v(8.0), Action{0.1, 0.2},
                                              Action{0.1, 0.2}, vehicle::Termination::running, w, 3.5, 15.0);
        const auto crashed = reward::step_reward(err_of(0.4, 0.05), state_v(8.0), Action{0.1, 0.2},
                                                 Action{0.1, 0.2}, vehicle::Termination::lane_departure,
                                                 w, 3.5, 15.0);
        CHECK(base - crashed == doctest::Approx(w.crash_penalty).epsilon(1e-12));

        const auto left = reward::step_reward(err_of(0.9, 0.0), state_v(8.0), Action{0, 0}, Action{0, 0},
                                              vehicle::Termination::running, w, 3.5, 15.0);
        const auto right = reward::step_reward(err_of(-0.9, 0.0), state_v(8.0), Action{0, 0}, Action{0, 0},
                                               vehicle::Termination::running, w, 3.5, 15.0);
        CHECK(left == right);
    }

    TEST_CASE("action roughness penalty matches lambda1 times the squared gap") {
        reward::RewardWeights w;
        const Action prev{0.0, 0.0};
        const Action a1{0.2, -0.1};
        const Action a2{0.6, 0.3};
        const double r1 = reward::step_reward(err_of(0, 0), state_v(5.0), a1, prev,
                                              vehicle::Termination::running, w, 3.5, 15.0);
        const double r2 = reward::step_reward(err_of(0, 0), state_v(5.0), a2, prev,
                                              vehicle::Termination::running, w, 3.5, 15.0);
        const double gap1 = a1.steer * a1.steer + a1.throttle * a1.throttle;
        const double gap2 = a2.steer * a2.steer + a2.throttle * a2.throttle;
        const double effort = w.lambda2 * (a2.throttle * a2.throttle - a1.throttle * a1.throttle);
        CHECK(r1 - r2 == doctest::Approx(w.lambda1 * (gap2 - gap1) + effort).epsilon(1e-12));
    }

    TEST_CASE("reset is deterministic in the episode seed") {
        env::EnvConfig cfg;
        env::LaneKeepEnv a(cfg), b(cfg);
        const auto oa = a.reset(424242);
        const auto ob = b.reset(424242);
        CHECK(oa.kin == ob.kin);
        CHECK(a.route().s_total == b.route().s_total);
        CHECK(a.state().x == b.state().x);
        CHECK(a.state().yaw == b.state().yaw);

        const auto oc = b.reset(424243);
        const bool differs = oc.kin != oa.kin || b.state().x != a.state().x;
        CHECK(differs);
    }

    TEST_CASE("step sequences replay identically") {
        env::EnvConfig cfg;
        env::LaneKeepEnv a(cfg), b(cfg);
        (void)a.reset(99);
        (void)b.reset(99);
        Rng rng(5);
        for (int i = 0; i < 30 && !a.done(); ++i) {
            const Action act{rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.5)};
            const auto sa = a.step(act);
            const auto sb = b.step(act);
            CHECK(sa.reward == sb.reward);
            CHECK(sa.obs.kin == sb.obs.kin);
            CHECK(sa.done == sb.done);
        }
    }

    TEST_CASE("observations are normalized lane-frame quantities") {
        env::EnvConfig cfg;
        env::LaneKeepEnv e(cfg);
        const auto obs = e.reset(1234);
        CHECK(obs.kin[0] == doctest::Approx(e.last_err().d / cfg.scales.d).epsilon(1e-15));
        CHECK(obs.kin[1] == doctest::Approx(e.last_err().phi / cfg.scales.phi).epsilon(1e-15));
        CHECK(obs.kin[2] == doctest::Approx(cfg.start_speed / cfg.scales.v).epsilon(1e-15));
        CHECK(obs.image.width == 0);  // no frame requested
    }

    TEST_CASE("need_image populates frames of the configured size") {
        env::EnvConfig cfg;
        cfg.need_image = true;
        env::LaneKeepEnv e(cfg);
        const auto obs = e.reset(77);
        CHECK(obs.image.width == cfg.render.width);
        CHECK(obs.image.height == cfg.render.height);
        const auto out = e.step(Action{0.0, 0.0});
        CHECK(out.obs.image.width == cfg.render.width);
        CHECK(e.frame_index() == 1);
    }

    TEST_CASE("hard steering departs the lane; departure cuts the bootstrap") {
        env::EnvConfig cfg;
        env::LaneKeepEnv e(cfg);
        (void)e.reset(2024);
        env::StepOutcome out;
        int steps = 0;
        while (!e.done() && steps < cfg.max_steps) {
            out = e.step(Action{1.0, 0.5});
            ++steps;
        }
        REQUIRE(e.done());
        CHECK(out.verdict == vehicle::Termination::lane_departure);
        CHECK(out.bootstrap_cut == 1.0);
        CHECK(out.reward < -0.5 * cfg.rewardw.crash_penalty);
        CHECK_THROWS_AS(e.step(Action{0, 0}), std::logic_error);
    }

    TEST_CASE("timeouts finish the episode but keep the bootstrap") {
        env::EnvConfig cfg;
        cfg.max_steps = 3;
        env::LaneKeepEnv e(cfg);
        (void)e.reset(31);
        env::StepOutcome out;
        for (int i = 0; i < 3; ++i) out = e.step(Action{0.0, 0.0});
        CHECK(out.done);
        CHECK(out.verdict == vehicle::Termination::timeout);
        CHECK(out.bootstrap_cut == 0.0);
    }

    TEST_CASE("routes from seeds are deterministic and varied") {
        track::GraphSpec spec;
        const auto r1 = env::make_route(555, spec, 3);
        const auto r2 = env::make_route(555, spec, 3);
        CHECK(r1.s_total == r2.s_total);
        CHECK(r1.segs.size() == r2.segs.size());
        bool varied = false;
        for (std::uint64_t s = 556; s < 561 && !varied; ++s) {
            varied = env::make_route(s, spec, 3).s_total != r1.s_total;
        }
        CHECK(varied);
        CHECK_THROWS_AS(env::make_route(1, spec, 0), std::invalid_argument);
    }

    TEST_CASE("perception observations require a predictor and follow its sign convention") {
        env::EnvConfig cfg;
        cfg.perception_obs = true;
        env::LaneKeepEnv e(cfg);
        CHECK_THROWS_AS(e.reset(1), std::logic_error);

        const double d_true = 0.7, phi_true = 0.05;
        e.set_coeff_predictor([&](const snow::RasterImage&) {
            track::CenterlineCoeffs c;
            c.c0 = -d_true;
            c.c1 = -std::tan(phi_true);
            return c;
        });
        const auto obs = e.reset(1);
        CHECK(obs.kin[0] == doctest::Approx(d_true / cfg.scales.d).epsilon(1e-12));
        CHECK(obs.kin[1] == doctest::Approx(phi_true / cfg.scales.phi).epsilon(1e-12));
        CHECK(obs.image.width == 0);  // frames are rendered internally, not exposed
    }

    TEST_CASE("environment validates its configuration") {
        env::EnvConfig cfg;
        cfg.friction = 0.0;
        CHECK_THROWS_AS(env::LaneKeepEnv{cfg}, std::invalid_argument);
        cfg.friction = 1.5;
        CHECK_THROWS_AS(env::LaneKeepEnv{cfg}, std::invalid_argument);
        cfg.friction = 0.6;
        cfg.max_steps = 0;
        CHECK_THROWS_AS(env::LaneKeepEnv{cfg}, std::invalid_argument);
    }
}
