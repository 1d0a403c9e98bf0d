// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "pikv/errors.hpp"
#include "pikv/scheduler.hpp"
#include "pikv/rng.hpp"

using namespace pikv;

namespace {

KVEntry entry_with_meta(double attn, std::uint64_t insert_step,
                        std::uint64_t last_access, std::uint64_t freq,
                        std::int64_t token_id = 100) {
    KVEntry e;
    e.token_id = token_id;
    e.key = {1.0, 0.0};
    e.value = {0.5, 0.5};
    e.meta.attn_mass = attn;
    e.meta.insert_step = insert_step;
    e.meta.last_access_step = last_access;
    e.meta.freq = freq;
    return e;
}

SchedulerConfig cfg_for(SchedStrategy s) {
    SchedulerConfig c;
    c.strategy = s;
    return c;
}

// A one-device store with one shard so page layout is easy to control.
struct StoreFixture {
    ModelConfig model;
    KVStore store;

    explicit StoreFixture(int capacity, int d = 2)
        : model(make_model(capacity, d)),
          store(model, StoreConfig{.n_tok = 1, .n_exp = 1}) {}

    static ModelConfig make_model(int capacity, int d) {
        ModelConfig m;
        m.d = d;
        m.head_width = 1;
        m.E = 4;
        m.k = 1;
        m.S = capacity;
        m.G = 1;
        return m;
    }

    const KVEntry* insert(double attn, std::int64_t token) {
        KVEntry e;
        e.token_id = token;
        e.expert_id = 0;
        e.key.assign(model.d, 1.0);
        e.value.assign(model.d, 1.0);
        e.meta.attn_mass = attn;
        store.insert(e);
        const KVEntry* out = nullptr;
        store.buffer(0, 0).for_each_live([&](const KVEntry& live) {
            if (live.token_id == token) out = &live;
        });
        return out;
    }
};

}  // namespace

TEST_SUITE_BEGIN("scheduler");

TEST_CASE("score: table strategies") {
    auto state = SchedulerState::init(SchedulerConfig{});
    std::vector<double> q{1.0, 0.0};

    SUBCASE("h2o passes attention mass through") {
        auto e = entry_with_meta(0.37, 0, 0, 0);
        CHECK(score_entry(e, q, state, cfg_for(SchedStrategy::H2O), nullptr, 5) ==
              doctest::Approx(0.37));
    }
    SUBCASE("lru is negative recency") {
        auto e = entry_with_meta(0, 0, 3, 0);
        CHECK(score_entry(e, q, state, cfg_for(SchedStrategy::LRU), nullptr, 5) ==
              doctest::Approx(-2.0));
    }
    SUBCASE("lru+ adds lambda * freq") {
        auto e = entry_with_meta(0, 0, 3, 3);  // r = 2 at now = 5
        auto cfg = cfg_for(SchedStrategy::LRUPlus);
        cfg.lambda_freq = 0.5;
        CHECK(score_entry(e, q, state, cfg, nullptr, 5) ==
              doctest::Approx(-0.5));  // -2 + 1.5
    }
    SUBCASE("adakv weighted features") {
        auto e = entry_with_meta(0.2, 5, 5, 4);  // age 0 at now = 5
        auto cfg = cfg_for(SchedStrategy::AdaKV);
        cfg.adakv_weights = {1.0, 0.5};  // phi = [a, f], third weight absent
        auto st = SchedulerState::init(cfg);
        CHECK(score_entry(e, q, st, cfg, nullptr, 5) ==
              doctest::Approx(2.2));  // 0.2 + 0.5*4
    }
    SUBCASE("sl keeps young entries and sinks") {
        auto cfg = cfg_for(SchedStrategy::SL);
        cfg.tau = 10;
        cfg.sink = 4;
        auto young = entry_with_meta(0, 95, 95, 0, 100);
        auto old_entry = entry_with_meta(0, 0, 0, 0, 100);
        auto sink = entry_with_meta(0, 0, 0, 0, 2);
        CHECK(score_entry(young, q, state, cfg, nullptr, 100) ==
              doctest::Approx(1.0));
        CHECK(score_entry(old_entry, q, state, cfg, nullptr, 100) ==
              doctest::Approx(0.0));
        CHECK(score_entry(sink, q, state, cfg, nullptr, 100) >
              score_entry(young, q, state, cfg, nullptr, 100));
    }
    SUBCASE("flex reads the plan by age bucket") {
        auto cfg = cfg_for(SchedStrategy::Flex);
        cfg.flex_plan = {1.0, 0.5, 0.0};
        cfg.flex_bucket = 10;
        auto fresh = entry_with_meta(0, 100, 100, 0);
        auto mid = entry_with_meta(0, 85, 85, 0);
        auto stale = entry_with_meta(0, 0, 0, 0);
        CHECK(score_entry(fresh, q, state, cfg, nullptr, 100) == 1.0);
        CHECK(score_entry(mid, q, state, cfg, nullptr, 100) == 0.5);
        CHECK(score_entry(stale, q, state, cfg, nullptr, 100) == 0.0);
    }
    SUBCASE("duo sums the recorded per-layer scores exactly") {
        Rng rng(3);
        for (int trial = 0; trial < 100; ++trial) {
            auto e = entry_with_meta(0, 0, 0, 0);
            double want = 0.0;
            int layers = 1 + static_cast<int>(rng.below(6));
            for (int l = 0; l < layers; ++l) {
                double a = rng.uniform();
                e.meta.per_layer_scores.push_back(a);
                want += a;
            }
            CHECK(score_entry(e, q, state, cfg_for(SchedStrategy::Duo), nullptr,
                              5) == doctest::Approx(want));
        }
    }
    SUBCASE("quest requires a fitted scorer") {
        auto e = entry_with_meta(0, 0, 0, 0);
        CHECK_THROWS_AS(
            score_entry(e, q, state, cfg_for(SchedStrategy::QUEST), nullptr, 5),
            NotFitted);
        QuestScorer unfitted;
        CHECK_THROWS_AS(score_entry(e, q, state, cfg_for(SchedStrategy::QUEST),
                                    &unfitted, 5),
                        NotFitted);
    }
}

TEST_CASE("quest: regression learns a monotone target") {
    Rng rng(7);
    std::vector<std::vector<double>> feats;
    std::vector<double> targets;
    for (int i = 0; i < 200; ++i) {
        auto f = rng.normal_vector(4);
        feats.push_back(f);
        targets.push_back(f[0] + 0.5 * f[2]);  // linear, easy
    }
    QuestScorer scorer;
    scorer.fit(feats, targets, 400, 0.02, 11);
    CHECK(scorer.fitted());
    double se = 0.0, var = 0.0;
    for (int i = 0; i < 200; ++i) {
        double pred = scorer.score(std::span(feats[i]).first(2),
                                   std::span(feats[i]).subspan(2));
        se += (pred - targets[i]) * (pred - targets[i]);
        var += targets[i] * targets[i];
    }
    CHECK(se < 0.1 * var);  // explains >90% of the variance
}

TEST_CASE("select_evictions: quoted cases") {
    SUBCASE("under budget is a no-op") {
        std::vector<PageScore> pages{{1, 1}, {2, 2}, {3, 3}};
        CHECK(select_evictions(pages, 5, false, 0).empty());
    }
    SUBCASE("budget evicts ascending score") {
        std::vector<PageScore> pages{{5, 1}, {1, 2}, {3, 3}, {2, 4}};
        auto out = select_evictions(pages, 2, false, 0);
        REQUIRE(out.size() == 2);
        CHECK(out[0].first == 1);  // score 1 first
        CHECK(out[1].first == 3);  // then score 2
        CHECK(out[0].second == EvictReason::Budget);
    }
    SUBCASE("adakv threshold drops below theta regardless of budget") {
        std::vector<PageScore> pages{{5, 1}, {1, 2}, {3, 3}};
        auto out = select_evictions(pages, 10, true, 4.0);
        REQUIRE(out.size() == 2);
        CHECK(out[0].first == 1);
        CHECK(out[1].first == 2);
        CHECK(out[0].second == EvictReason::Threshold);
        CHECK(out[1].second == EvictReason::Threshold);
    }
    SUBCASE("ties break oldest first") {
        std::vector<PageScore> pages{{1, 9}, {1, 2}, {1, 5}};
        auto out = select_evictions(pages, 1, false, 0);
        REQUIRE(out.size() == 2);
        CHECK(out[0].first == 1);  // oldest id 2
        CHECK(out[1].first == 2);  // id 5
    }
}

TEST_CASE("select_evictions: matches a full-sort oracle") {
    Rng rng(13);
    for (int trial = 0; trial < 200; ++trial) {
        int n = 1 + static_cast<int>(rng.below(64));
        int budget = 1 + static_cast<int>(rng.below(16));
        std::vector<PageScore> pages(n);
        for (int i = 0; i < n; ++i) {
            pages[i].aggregate = std::floor(rng.uniform(-8.0, 8.0));
            pages[i].oldest_id = rng.below(1000);
        }
        auto out = select_evictions(pages, budget, false, 0);

        // Oracle: full sort, bottom n-K.
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (pages[a].aggregate != pages[b].aggregate) {
                return pages[a].aggregate < pages[b].aggregate;
            }
            return pages[a].oldest_id < pages[b].oldest_id;
        });
        std::size_t expect = n > budget ? n - budget : 0;
        REQUIRE(out.size() == expect);
        for (std::size_t i = 0; i < expect; ++i) CHECK(out[i].first == order[i]);
    }
}

TEST_CASE("evict: applies the page budget on a live store") {
    StoreFixture fx(16);
    auto cfg = cfg_for(SchedStrategy::H2O);
    cfg.page_size = 1;
    cfg.budget_pages = 2;
    auto state = SchedulerState::init(cfg);

    fx.insert(5.0, 0);
    fx.insert(1.0, 1);
    fx.insert(3.0, 2);
    fx.insert(2.0, 3);

    auto report = evict(fx.store, state, cfg, nullptr, 4);
    CHECK(report.pages_before == 4);
    CHECK(report.pages_after == 2);
    REQUIRE(report.evicted.size() == 2);
    CHECK(report.evicted[0].token_id == 1);  // score 1
    CHECK(report.evicted[1].token_id == 3);  // score 2
    CHECK(fx.store.live_entries() == 2);

    // Under budget now: nothing further happens.
    auto again = evict(fx.store, state, cfg, nullptr, 5);
    CHECK(again.evicted.empty());
}

TEST_CASE("evict: pages group page_size entries and keep the budget") {
    StoreFixture fx(64);
    auto cfg = cfg_for(SchedStrategy::H2O);
    cfg.page_size = 4;
    cfg.budget_pages = 3;
    auto state = SchedulerState::init(cfg);
    Rng rng(17);
    for (std::int64_t t = 0; t < 40; ++t) fx.insert(rng.uniform(), t);

    auto report = evict(fx.store, state, cfg, nullptr, 40);
    CHECK(report.pages_before == 10);
    CHECK(report.pages_after == 3);
    CHECK(fx.store.live_entries() == 12);
    CHECK(report.evicted.size() == 28);
}

TEST_CASE("adakv threshold: update rule and sign invariant") {
    auto cfg = cfg_for(SchedStrategy::AdaKV);
    cfg.adakv_step = 0.1;
    cfg.target_hit = 0.9;
    cfg.theta0 = 0.5;
    cfg.hit_decay = 0.0;  // running hit tracks the step rate exactly
    auto state = SchedulerState::init(cfg);

    SUBCASE("direct update") {
        observe_hits(state, cfg, 7, 10);  // eta = 0.7
        adakv_update(state, cfg);
        CHECK(state.theta == doctest::Approx(0.52));
    }
    SUBCASE("fixed point at the target") {
        observe_hits(state, cfg, 9, 10);
        adakv_update(state, cfg);
        CHECK(state.theta == doctest::Approx(0.5));
    }
    SUBCASE("monotone climb while below target") {
        observe_hits(state, cfg, 1, 10);
        double prev = state.theta;
        for (int i = 0; i < 500; ++i) {
            adakv_update(state, cfg);
            CHECK(state.theta > prev);
            prev = state.theta;
        }
    }
    SUBCASE("sign of the step always matches the hit gap") {
        Rng rng(19);
        for (int i = 0; i < 300; ++i) {
            observe_hits(state, cfg, rng.below(11), 10);
            double before = state.theta;
            adakv_update(state, cfg);
            double delta = state.theta - before;
            double gap = cfg.target_hit - state.running_hit;
            if (gap > 0) CHECK(delta > 0);
            if (gap < 0) CHECK(delta < 0);
            if (gap == 0) CHECK(delta == 0);
        }
    }
}

TEST_CASE("reuse score") {
    SchedulerConfig cfg;
    cfg.gamma_sim = 0.5;

    KVEntry fresh;
    fresh.key = {0.0, 1.0};
    fresh.meta.freq = 0;
    std::vector<double> q{1.0, 0.0};
    CHECK(reuse_score(fresh, q, cfg, 0) == doctest::Approx(0.0));

    KVEntry warm;
    warm.key = {1.0, 0.0};
    warm.meta.freq = 3;
    warm.meta.insert_step = 0;
    CHECK(reuse_score(warm, q, cfg, 2) == doctest::Approx(1.5));  // 3/3 + 0.5

    // gamma_sim = 0 orders exactly by f / (1 + t).
    cfg.gamma_sim = 0.0;
    Rng rng(23);
    std::vector<KVEntry> entries;
    for (int i = 0; i < 20; ++i) {
        KVEntry e;
        e.key = rng.normal_vector(2);
        e.meta.freq = rng.below(10);
        e.meta.insert_step = 0;
        entries.push_back(e);
    }
    for (std::size_t i = 0; i + 1 < entries.size(); ++i) {
        double fa = static_cast<double>(entries[i].meta.freq) / 11.0;
        double fb = static_cast<double>(entries[i + 1].meta.freq) / 11.0;
        double sa = reuse_score(entries[i], q, cfg, 10);
        double sb = reuse_score(entries[i + 1], q, cfg, 10);
        CHECK(((fa < fb) == (sa < sb) || fa == fb));
    }
}

TEST_CASE("expert utility tracker") {
    ExpertUtilityTracker tracker;
    CHECK_FALSE(tracker.utility(3, 0).has_value());  // no queries yet

    tracker.note_query(3);
    tracker.note_attention(3, 10, 0.4);
    CHECK(tracker.utility(3, 10).value() == doctest::Approx(0.4));

    tracker.note_query(3);
    tracker.note_attention(3, 10, 0.6);
    CHECK(tracker.utility(3, 10).value() == doctest::Approx(0.5));  // (0.4+0.6)/2

    // A token never attended scores zero against the query count.
    CHECK(tracker.utility(3, 99).value() == doctest::Approx(0.0));
    CHECK(tracker.queries(3) == 2);
}

TEST_CASE("scheduler config validation") {
    SchedulerConfig cfg;
    cfg.budget_pages = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    cfg.budget_pages = 1;
    cfg.target_hit = 1.5;
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    cfg.target_hit = 0.5;
    cfg.flex_plan.clear();
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
}

TEST_SUITE_END();
