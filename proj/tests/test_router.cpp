// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "pikv/errors.hpp"
#include "pikv/router.hpp"
#include "pikv/rng.hpp"

using namespace pikv;

namespace {

RouterConfig cfg_for(RouterStrategy s, int k) {
    RouterConfig c;
    c.strategy = s;
    c.k = k;
    return c;
}

const RouterStrategy kLogitStrategies[] = {
    RouterStrategy::TopK,      RouterStrategy::LoadBalanced,
    RouterStrategy::CacheAware, RouterStrategy::EntropyLB,
    RouterStrategy::Adaptive,  RouterStrategy::Hierarchical,
};

}  // namespace

TEST_SUITE_BEGIN("router");

TEST_CASE("base: round-robin with stride 1") {
    auto state = RouterState::init(4, 8, 1);
    auto cfg = cfg_for(RouterStrategy::Base, 1);
    std::vector<double> q(8, 0.0);
    for (int t = 0; t < 4; ++t) {
        auto d = route(q, state, cfg);
        REQUIRE(d.experts.size() == 1);
        CHECK(d.experts[0] == t);
        CHECK(d.gates[0] == doctest::Approx(1.0));
    }
}

TEST_CASE("topk: selection and gate values") {
    auto state = RouterState::init(4, 4, 1);
    auto cfg = cfg_for(RouterStrategy::TopK, 2);
    auto d = route_logits({2, 1, 0, -1}, state, cfg);
    CHECK(d.experts == std::vector<int>{0, 1});
    // softmax over the selected pair, computed independently
    CHECK(d.gates[0] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
    CHECK(d.gates[1] == doctest::Approx(0.2689414213699951).epsilon(1e-12));
}

TEST_CASE("load balanced: penalty displaces the loaded expert") {
    auto state = RouterState::init(4, 4, 1);
    state.load = {10, 0, 0, 0};
    auto cfg = cfg_for(RouterStrategy::LoadBalanced, 1);
    cfg.alpha = 0.5;
    auto d = route_logits({1, 1, 1, 1}, state, cfg);
    CHECK(d.experts[0] == 1);  // expert 0 penalized below the tie at index 1
}

TEST_CASE("cache aware: zero misses leave logits untouched") {
    auto s1 = RouterState::init(4, 4, 1);
    auto s2 = RouterState::init(4, 4, 1);
    auto top = cfg_for(RouterStrategy::TopK, 2);
    auto aware = cfg_for(RouterStrategy::CacheAware, 2);
    aware.lambda_miss = 3.0;
    auto a = route_logits({0.3, 0.1, 0.9, 0.2}, s1, top);
    auto b = route_logits({0.3, 0.1, 0.9, 0.2}, s2, aware);
    CHECK(a.experts == b.experts);
    CHECK(a.gates[0] == doctest::Approx(b.gates[0]));
}

TEST_CASE("record_miss: counters and range check") {
    auto state = RouterState::init(4, 4, 1);
    record_miss(state, 2);
    CHECK(state.miss_counts == std::vector<std::uint64_t>{0, 0, 1, 0});
    record_miss(state, 2);
    CHECK(state.miss_counts[2] == 2);
    CHECK_THROWS_AS(record_miss(state, 4), InvalidArgument);
    CHECK_THROWS_AS(record_miss(state, -1), InvalidArgument);
}

TEST_CASE("adapt: bandit update rule") {
    auto state = RouterState::init(4, 4, 1);
    auto cfg = cfg_for(RouterStrategy::Adaptive, 2);
    cfg.bandit_step = 0.1;
    RoutingDecision d;
    d.experts = {0, 2};

    SUBCASE("reward equal to mean bias is a no-op") {
        state.bandit_bias = {0.5, 0.5, 0.5, 0.5};
        adapt(state, d, 0.5, cfg);
        for (double b : state.bandit_bias) CHECK(b == doctest::Approx(0.5));
    }
    SUBCASE("zero bias, reward 1, step 0.1") {
        adapt(state, d, 1.0, cfg);
        CHECK(state.bandit_bias[0] == doctest::Approx(0.1));
        CHECK(state.bandit_bias[2] == doctest::Approx(0.1));
        CHECK(state.bandit_bias[1] == doctest::Approx(0.0));
    }
    SUBCASE("reward outside [0,1] rejected") {
        CHECK_THROWS_AS(adapt(state, d, 1.5, cfg), InvalidArgument);
        CHECK_THROWS_AS(adapt(state, d, -0.1, cfg), InvalidArgument);
    }
    SUBCASE("bias stays within the cap") {
        cfg.bandit_step = 10.0;
        for (int i = 0; i < 50; ++i) adapt(state, d, 1.0, cfg);
        CHECK(state.bandit_bias[0] <= cfg.bias_cap);
    }
}

TEST_CASE("adaptive: bandit learns the rewarded expert") {
    // Reward is 1 exactly when expert 0 is selected; its bias should end on
    // top by a wide margin.
    auto state = RouterState::init(8, 16, 42);
    auto cfg = cfg_for(RouterStrategy::Adaptive, 2);
    cfg.bandit_step = 0.05;
    Rng rng(42);
    for (int t = 0; t < 1000; ++t) {
        auto q = rng.normal_vector(16);
        auto d = route(q, state, cfg);
        bool hit = std::find(d.experts.begin(), d.experts.end(), 0) !=
                   d.experts.end();
        adapt(state, d, hit ? 1.0 : 0.0, cfg);
    }
    int argmax = static_cast<int>(
        std::max_element(state.bandit_bias.begin(), state.bandit_bias.end()) -
        state.bandit_bias.begin());
    CHECK(argmax == 0);
}

TEST_CASE("sparsity: every strategy returns exactly k distinct experts") {
    Rng rng(19);
    const int E = 16;
    for (auto strat : kLogitStrategies) {
        auto state = RouterState::init(E, 8, 7);
        auto cfg = cfg_for(strat, 4);
        cfg.groups = (strat == RouterStrategy::Hierarchical) ? 4 : 1;
        for (int t = 0; t < 500; ++t) {
            auto q = rng.normal_vector(8);
            auto d = route(q, state, cfg);
            std::set<int> unique(d.experts.begin(), d.experts.end());
            CHECK(unique.size() == 4);
            double gate_sum = 0.0;
            for (double g : d.gates) gate_sum += g;
            CHECK(std::abs(gate_sum - 1.0) < 1e-9);
        }
    }
    // Base as well.
    auto state = RouterState::init(E, 8, 7);
    auto cfg = cfg_for(RouterStrategy::Base, 4);
    for (int t = 0; t < 100; ++t) {
        auto d = route(std::vector<double>(8, 0.0), state, cfg);
        std::set<int> unique(d.experts.begin(), d.experts.end());
        CHECK(unique.size() == 4);
    }
}

TEST_CASE("shift invariance of the selected set") {
    Rng rng(23);
    const int E = 12;
    for (auto strat : kLogitStrategies) {
        for (int trial = 0; trial < 50; ++trial) {
            auto base_state = RouterState::init(E, 4, 3);
            // Random penalty state exercises every penalty path.
            for (int e = 0; e < E; ++e) {
                base_state.load[e] = rng.uniform(0.0, 5.0);
                base_state.miss_counts[e] = rng.below(20);
                base_state.usage_counts[e] = rng.below(50) + 1;
                base_state.total_usage += base_state.usage_counts[e];
                base_state.bandit_bias[e] = rng.uniform(-1.0, 1.0);
            }
            auto cfg = cfg_for(strat, 3);
            cfg.groups = (strat == RouterStrategy::Hierarchical) ? 3 : 1;
            auto logits = rng.normal_vector(E, 2.0);
            double c = rng.uniform(-100.0, 100.0);
            auto shifted = logits;
            for (auto& x : shifted) x += c;

            auto s1 = base_state;
            auto s2 = base_state;
            auto d1 = route_logits(logits, s1, cfg);
            auto d2 = route_logits(shifted, s2, cfg);
            std::set<int> set1(d1.experts.begin(), d1.experts.end());
            std::set<int> set2(d2.experts.begin(), d2.experts.end());
            CHECK(set1 == set2);
            for (std::size_t i = 0; i < d1.gates.size(); ++i) {
                CHECK(std::abs(d1.gates[i] - d2.gates[i]) < 1e-9);
            }
        }
    }
}

TEST_CASE("cache aware: more misses never pull an expert into the set") {
    Rng rng(29);
    const int E = 10;
    for (int trial = 0; trial < 100; ++trial) {
        auto state = RouterState::init(E, 4, 5);
        for (int e = 0; e < E; ++e) state.miss_counts[e] = rng.below(10);
        auto cfg = cfg_for(RouterStrategy::CacheAware, 3);
        cfg.lambda_miss = 0.7;
        auto logits = rng.normal_vector(E, 1.5);

        auto s1 = state;
        auto d1 = route_logits(logits, s1, cfg);
        std::set<int> selected(d1.experts.begin(), d1.experts.end());

        // Bump misses of one unselected expert; it must stay out.
        int outsider = 0;
        while (selected.count(outsider)) ++outsider;
        auto s2 = state;
        s2.miss_counts[outsider] += 1 + rng.below(100);
        auto d2 = route_logits(logits, s2, cfg);
        CHECK(std::find(d2.experts.begin(), d2.experts.end(), outsider) ==
              d2.experts.end());
    }
}

TEST_CASE("load balancing narrows the assignment spread") {
    const int E = 8, width = 16;
    auto run = [&](RouterStrategy strat, double alpha) {
        auto state = RouterState::init(E, width, 77);
        auto cfg = cfg_for(strat, 1);
        cfg.alpha = alpha;
        Rng rng(123);
        for (int t = 0; t < 10000; ++t) {
            auto q = rng.normal_vector(width);
            route(q, state, cfg);
        }
        double max_count = 0.0;
        double min_count = std::numeric_limits<double>::infinity();
        for (auto c : state.usage_counts) {
            max_count = std::max(max_count, static_cast<double>(c));
            min_count = std::min(min_count, static_cast<double>(c));
        }
        return min_count == 0.0 ? std::numeric_limits<double>::infinity()
                                : max_count / min_count;
    };
    double plain = run(RouterStrategy::TopK, 0.0);
    double balanced = run(RouterStrategy::LoadBalanced, 8.0);
    CHECK(balanced < plain);
}

TEST_CASE("hierarchical: groups=1 reduces to topk") {
    const int E = 16;
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        auto s1 = RouterState::init(E, 4, 9);
        auto s2 = RouterState::init(E, 4, 9);
        auto logits = rng.normal_vector(E, 2.0);
        auto top = cfg_for(RouterStrategy::TopK, 4);
        auto hier = cfg_for(RouterStrategy::Hierarchical, 4);
        hier.groups = 1;
        auto a = route_logits(logits, s1, top);
        auto b = route_logits(logits, s2, hier);
        std::set<int> sa(a.experts.begin(), a.experts.end());
        std::set<int> sb(b.experts.begin(), b.experts.end());
        CHECK(sa == sb);
    }
}

TEST_CASE("hierarchical: ragged cluster sizes still yield k experts") {
    // E=10, groups=3 -> clusters of 4,4,2; the union must grow until it
    // can cover k.
    auto state = RouterState::init(10, 4, 9);
    auto cfg = cfg_for(RouterStrategy::Hierarchical, 4);
    cfg.groups = 3;
    // Put the best logit in the small trailing cluster.
    std::vector<double> logits{0, 0, 0, 0, 0, 0, 0, 0, 5, 4};
    auto d = route_logits(logits, state, cfg);
    std::set<int> unique(d.experts.begin(), d.experts.end());
    CHECK(unique.size() == 4);
    CHECK(unique.count(8) == 1);
    CHECK(unique.count(9) == 1);
}

TEST_CASE("router errors") {
    auto state = RouterState::init(4, 4, 1);
    auto cfg = cfg_for(RouterStrategy::TopK, 5);
    CHECK_THROWS_AS(route_logits({0, 0, 0, 0}, state, cfg), InvalidConfig);
    cfg.k = 2;
    std::vector<double> bad{0.0, std::numeric_limits<double>::quiet_NaN(), 0.0,
                            0.0};
    CHECK_THROWS_AS(route_logits(bad, state, cfg), NumericalError);
    CHECK_THROWS_AS(route(std::vector<double>(3, 0.0), state, cfg),
                    InvalidArgument);
}

TEST_CASE("usage distribution sums to one after routing") {
    auto state = RouterState::init(6, 4, 2);
    auto cfg = cfg_for(RouterStrategy::TopK, 2);
    Rng rng(13);
    for (int t = 0; t < 50; ++t) {
        route(rng.normal_vector(4), state, cfg);
    }
    auto p = state.usage_p();
    double total = 0.0;
    for (double x : p) total += x;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_SUITE_END();
