#include <cmath>
#include <vector>

#include "doctest.h"

#include "arlk/rng.hpp"

using namespace arlk;

TEST_SUITE("rng") {
    TEST_CASE("same seed reproduces the stream, different seeds diverge") {
        Rng a(42), b(42), c(43);
        bool all_equal = true, any_diff = false;
        for (int i = 0; i < 64; ++i) {
            const auto x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
            all_equal = all_equal && (x == y);
            any_diff = any_diff || (x != z);
        }
        CHECK(all_equal);
        CHECK(any_diff);
    }

    TEST_CASE("child streams are independent of parent consumption") {
        Rng a(7);
        const Rng child_before = a.child("stream");
        (void)a.next_u64();
        (void)a.next_u64();
        Rng a2(7);
        (void)a2.next_u64();  // parent position must not matter...
        Rng parent_reset(7);
        const Rng child_after = parent_reset.child("stream");
        Rng cb = child_before, ca = child_after;
        for (int i = 0; i < 16; ++i) CHECK(cb.next_u64() == ca.next_u64());
    }

    TEST_CASE("distinct child names give distinct streams") {
        Rng a(7);
        Rng x = a.child("alpha"), y = a.child("beta"), z = a.child(3u);
        bool differ_xy = false, differ_xz = false;
        for (int i = 0; i < 16; ++i) {
            const auto vx = x.next_u64();
            differ_xy = differ_xy || (vx != y.next_u64());
            differ_xz = differ_xz || (vx != z.next_u64());
        }
        CHECK(differ_xy);
        CHECK(differ_xz);
    }

    TEST_CASE("uniform stays in range and is roughly uniform") {
        Rng r(1);
        double mn = 1e9, mx = -1e9, sum = 0.0;
        const int n = 20000;
        for (int i = 0; i < n; ++i) {
            const double u = r.uniform(2.0, 5.0);
            mn = std::min(mn, u);
            mx = std::max(mx, u);
            sum += u;
        }
        CHECK(mn >= 2.0);
        CHECK(mx < 5.0);
        CHECK(sum / n == doctest::Approx(3.5).epsilon(0.02));
    }

    TEST_CASE("normal has approximately unit moments") {
        Rng r(2);
        const int n = 40000;
        double sum = 0.0, sq = 0.0;
        for (int i = 0; i < n; ++i) {
            const double x = r.normal();
            sum += x;
            sq += x * x;
        }
        const double mean = sum / n;
        CHECK(std::abs(mean) < 0.02);
        CHECK(sq / n - mean * mean == doctest::Approx(1.0).epsilon(0.03));
    }

    TEST_CASE("next_below and uniform_int cover their ranges") {
        Rng r(3);
        std::vector<int> counts(5, 0);
        for (int i = 0; i < 5000; ++i) ++counts[r.next_below(5)];
        for (int c : counts) CHECK(c > 700);
        int lo_seen = 0, hi_seen = 0;
        for (int i = 0; i < 2000; ++i) {
            const int v = r.uniform_int(-2, 2);
            CHECK(v >= -2);
            CHECK(v <= 2);
            if (v == -2) ++lo_seen;
            if (v == 2) ++hi_seen;
        }
        CHECK(lo_seen > 0);
        CHECK(hi_seen > 0);
    }

    TEST_CASE("bernoulli respects probability bounds") {
        Rng r(4);
        int hits = 0;
        for (int i = 0; i < 10000; ++i) hits += r.bernoulli(0.3) ? 1 : 0;
        CHECK(hits / 10000.0 == doctest::Approx(0.3).epsilon(0.07));
        CHECK_FALSE(r.bernoulli(0.0));
        CHECK(r.bernoulli(1.0));
    }

    TEST_CASE("state round-trip resumes the identical stream") {
        Rng r(5);
        (void)r.normal();
        const auto st = r.state();
        std::vector<std::uint64_t> tail;
        for (int i = 0; i < 8; ++i) tail.push_back(r.next_u64());
        Rng r2(0);
        r2.set_state(st);
        for (int i = 0; i < 8; ++i) CHECK(r2.next_u64() == tail[i]);
    }

    TEST_CASE("wrap_angle maps into (-pi, pi]") {
        CHECK(wrap_angle(0.0) == doctest::Approx(0.0));
        CHECK(wrap_angle(3.5 * M_PI) == doctest::Approx(-0.5 * M_PI));
        CHECK(wrap_angle(-3.5 * M_PI) == doctest::Approx(0.5 * M_PI));
        CHECK(wrap_angle(M_PI) == doctest::Approx(M_PI));
        CHECK(wrap_angle(-M_PI) == doctest::Approx(M_PI));
        for (double a = -20.0; a < 20.0; a += 0.37) {
            const double w = wrap_angle(a);
            CHECK(w > -M_PI - 1e-15);
            CHECK(w <= M_PI + 1e-15);
            CHECK(std::abs(std::remainder(w - a, 2.0 * M_PI)) < 1e-9);
        }
    }
}
