// SPDX-License-Identifier: Apache-2.0
#include "pikv/scheduler.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "pikv/errors.hpp"
#include "pikv/mathops.hpp"
#include "pikv/rng.hpp"

namespace pikv {

SchedStrategy sched_strategy_from_string(const std::string& name) {
    if (name == "H2O") return SchedStrategy::H2O;
    if (name == "SL") return SchedStrategy::SL;
    if (name == "QUEST") return SchedStrategy::QUEST;
    if (name == "Flex") return SchedStrategy::Flex;
    if (name == "LRU") return SchedStrategy::LRU;
    if (name == "LRUPlus") return SchedStrategy::LRUPlus;
    if (name == "AdaKV") return SchedStrategy::AdaKV;
    if (name == "Duo") return SchedStrategy::Duo;
    throw InvalidConfig("unknown scheduler strategy: " + name);
}

std::string to_string(SchedStrategy s) {
    switch (s) {
        case SchedStrategy::H2O: return "H2O";
        case SchedStrategy::SL: return "SL";
        case SchedStrategy::QUEST: return "QUEST";
        case SchedStrategy::Flex: return "Flex";
        case SchedStrategy::LRU: return "LRU";
        case SchedStrategy::LRUPlus: return "LRUPlus";
        case SchedStrategy::AdaKV: return "AdaKV";
        case SchedStrategy::Duo: return "Duo";
    }
    return "?";
}

const char* to_string(EvictReason r) {
    switch (r) {
        case EvictReason::Budget: return "budget";
        case EvictReason::Threshold: return "threshold";
        case EvictReason::Overwrite: return "overwrite";
    }
    return "?";
}

void SchedulerConfig::validate() const {
    if (budget_pages < 1) {
        throw InvalidConfig("SchedulerConfig: budget_pages must be >= 1");
    }
    if (page_size < 1) {
        throw InvalidConfig("SchedulerConfig: page_size must be >= 1");
    }
    if (lambda_freq < 0 || adakv_step < 0 || gamma_sim < 0) {
        throw InvalidConfig("SchedulerConfig: coefficients must be >= 0");
    }
    if (target_hit < 0.0 || target_hit > 1.0) {
        throw InvalidConfig("SchedulerConfig: target_hit must be in [0, 1]");
    }
    if (hit_decay < 0.0 || hit_decay >= 1.0) {
        throw InvalidConfig("SchedulerConfig: hit_decay must be in [0, 1)");
    }
    if (flex_plan.empty() || flex_bucket < 1) {
        throw InvalidConfig("SchedulerConfig: flex plan needs >= 1 bucket");
    }
    if (sink < 0 || tau < 0) {
        throw InvalidConfig("SchedulerConfig: sink and tau must be >= 0");
    }
}

SchedulerState SchedulerState::init(const SchedulerConfig& cfg) {
    cfg.validate();
    SchedulerState s;
    s.theta = cfg.theta0;
    s.running_hit = 0.0;
    s.feature_weights = cfg.adakv_weights;
    return s;
}

void QuestScorer::fit(const std::vector<std::vector<double>>& features,
                      const std::vector<double>& targets, int steps, double lr,
                      std::uint64_t seed) {
    if (features.empty() || features.size() != targets.size()) {
        throw InvalidArgument("QuestScorer::fit: bad training set");
    }
    const int n = static_cast<int>(features.size());
    input_width_ = static_cast<int>(features[0].size());
    Eigen::MatrixXd X(n, input_width_);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(features[i].size()) != input_width_) {
            throw InvalidArgument("QuestScorer::fit: ragged features");
        }
        for (int j = 0; j < input_width_; ++j) X(i, j) = features[i][j];
        y(i) = targets[i];
    }

    Rng rng(seed);
    double scale = 1.0 / std::sqrt(static_cast<double>(input_width_));
    Eigen::MatrixXd W1(kHidden, input_width_);
    Eigen::VectorXd B1 = Eigen::VectorXd::Zero(kHidden);
    Eigen::VectorXd W2(kHidden);
    double B2 = 0.0;
    for (int i = 0; i < kHidden; ++i) {
        for (int j = 0; j < input_width_; ++j) W1(i, j) = scale * rng.normal();
        W2(i) = rng.normal() / std::sqrt(static_cast<double>(kHidden));
    }

    // Adam on mean squared error.
    Eigen::MatrixXd mW1 = Eigen::MatrixXd::Zero(kHidden, input_width_), vW1 = mW1;
    Eigen::VectorXd mB1 = Eigen::VectorXd::Zero(kHidden), vB1 = mB1;
    Eigen::VectorXd mW2 = Eigen::VectorXd::Zero(kHidden), vW2 = mW2;
    double mB2 = 0.0, vB2 = 0.0;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int step = 1; step <= steps; ++step) {
        Eigen::MatrixXd pre = X * W1.transpose();  // n x hidden
        pre.rowwise() += B1.transpose();
        Eigen::MatrixXd hid = pre.array().tanh().matrix();
        Eigen::VectorXd out = hid * W2;
        out.array() += B2;
        Eigen::VectorXd resid = (out - y) * (2.0 / n);

        Eigen::VectorXd gW2 = hid.transpose() * resid;
        double gB2 = resid.sum();
        Eigen::MatrixXd dhid =
            (resid * W2.transpose()).array() * (1.0 - hid.array().square());
        Eigen::MatrixXd gW1 = dhid.transpose() * X;
        Eigen::VectorXd gB1 = dhid.colwise().sum();

        double corr1 = 1.0 - std::pow(b1, step);
        double corr2 = 1.0 - std::pow(b2, step);
        auto adam = [&](auto& param, auto& m, auto& v, const auto& g) {
            m = b1 * m + (1 - b1) * g;
            v = b2 * v + (1 - b2) * g.array().square().matrix();
            param.array() -=
                lr * (m.array() / corr1) / ((v.array() / corr2).sqrt() + eps);
        };
        adam(W1, mW1, vW1, gW1);
        adam(B1, mB1, vB1, gB1);
        adam(W2, mW2, vW2, gW2);
        mB2 = b1 * mB2 + (1 - b1) * gB2;
        vB2 = b2 * vB2 + (1 - b2) * gB2 * gB2;
        B2 -= lr * (mB2 / corr1) / (std::sqrt(vB2 / corr2) + eps);
    }

    w1_.assign(static_cast<std::size_t>(kHidden) * input_width_, 0.0);
    b1_.assign(kHidden, 0.0);
    w2_.assign(kHidden, 0.0);
    for (int i = 0; i < kHidden; ++i) {
        for (int j = 0; j < input_width_; ++j) {
            w1_[static_cast<std::size_t>(i) * input_width_ + j] = W1(i, j);
        }
        b1_[i] = B1(i);
        w2_[i] = W2(i);
    }
    b2_ = B2;
    fitted_ = true;
}

double QuestScorer::score(std::span<const double> key,
                          std::span<const double> value) const {
    if (!fitted_) throw NotFitted("QuestScorer: score before fit");
    if (static_cast<int>(key.size() + value.size()) != input_width_) {
        throw InvalidArgument("QuestScorer: feature width mismatch");
    }
    double out = b2_;
    for (int i = 0; i < kHidden; ++i) {
        const double* row = w1_.data() + static_cast<std::size_t>(i) * input_width_;
        double pre = b1_[i];
        for (std::size_t j = 0; j < key.size(); ++j) pre += row[j] * key[j];
        for (std::size_t j = 0; j < value.size(); ++j) {
            pre += row[key.size() + j] * value[j];
        }
        out += w2_[i] * std::tanh(pre);
    }
    return out;
}

double score_entry(const KVEntry& entry, std::span<const double> /*query*/,
                   const SchedulerState& state, const SchedulerConfig& cfg,
                   const QuestScorer* quest, std::uint64_t now) {
    const auto& m = entry.meta;
    switch (cfg.strategy) {
        case SchedStrategy::H2O:
            return m.attn_mass;
        case SchedStrategy::SL: {
            // Higher-is-retain reading of the age indicator, plus a sink
            // bonus so the first tokens survive the window.
            double u = m.age(now) <= cfg.tau ? 1.0 : 0.0;
            if (entry.token_id < cfg.sink) u += 2.0;
            return u;
        }
        case SchedStrategy::QUEST:
            if (quest == nullptr || !quest->fitted()) {
                throw NotFitted("score: QUEST scorer not fitted");
            }
            return quest->score(entry.key, entry.value);
        case SchedStrategy::Flex: {
            auto bucket = static_cast<std::size_t>(m.age(now)) /
                          static_cast<std::size_t>(cfg.flex_bucket);
            if (bucket >= cfg.flex_plan.size()) {
                bucket = cfg.flex_plan.size() - 1;
            }
            return cfg.flex_plan[bucket];
        }
        case SchedStrategy::LRU:
            return -static_cast<double>(m.recency(now));
        case SchedStrategy::LRUPlus:
            return -static_cast<double>(m.recency(now)) +
                   cfg.lambda_freq * static_cast<double>(m.freq);
        case SchedStrategy::AdaKV: {
            double phi[3] = {m.attn_mass, static_cast<double>(m.freq),
                             1.0 / (1.0 + static_cast<double>(m.age(now)))};
            double u = 0.0;
            for (std::size_t j = 0; j < state.feature_weights.size() && j < 3; ++j) {
                u += state.feature_weights[j] * phi[j];
            }
            return u;
        }
        case SchedStrategy::Duo: {
            double u = 0.0;
            for (double a : m.per_layer_scores) u += a;
            return u;
        }
    }
    throw InvalidConfig("score: unhandled strategy");
}

std::vector<std::pair<std::size_t, EvictReason>> select_evictions(
    const std::vector<PageScore>& pages, int budget_pages, bool use_theta,
    double theta) {
    std::vector<std::size_t> order(pages.size());
    for (std::size_t i = 0; i < pages.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (pages[a].aggregate != pages[b].aggregate) {
            return pages[a].aggregate < pages[b].aggregate;
        }
        return pages[a].oldest_id < pages[b].oldest_id;
    });

    std::vector<std::pair<std::size_t, EvictReason>> out;
    std::size_t remaining = pages.size();
    std::size_t cursor = 0;
    if (use_theta) {
        while (cursor < order.size() &&
               pages[order[cursor]].aggregate < theta) {
            out.emplace_back(order[cursor], EvictReason::Threshold);
            ++cursor;
            --remaining;
        }
    }
    while (remaining > static_cast<std::size_t>(budget_pages)) {
        out.emplace_back(order[cursor], EvictReason::Budget);
        ++cursor;
        --remaining;
    }
    return out;
}

EvictionReport evict(KVStore& store, SchedulerState& state,
                     const SchedulerConfig& cfg, const QuestScorer* quest,
                     std::uint64_t now) {
    cfg.validate();
    EvictionReport report;
    std::vector<double> no_query;

    for (int dev = 0; dev < store.devices(); ++dev) {
        // Pages are insertion-contiguous runs of page_size entries per shard.
        struct PageEntries {
            PageScore score;
            std::vector<const KVEntry*> members;
        };
        std::map<std::pair<int, std::uint64_t>, PageEntries> pages;
        for (int sh = 0; sh < store.shards_per_device(); ++sh) {
            store.buffer(dev, sh).for_each_live([&](const KVEntry& e) {
                auto key = std::make_pair(
                    sh, e.shard_seq / static_cast<std::uint64_t>(cfg.page_size));
                auto& page = pages[key];
                if (page.members.empty()) {
                    page.score.oldest_id = e.id;
                }
                page.score.oldest_id = std::min(page.score.oldest_id, e.id);
                page.score.aggregate +=
                    score_entry(e, no_query, state, cfg, quest, now);
                page.members.push_back(&e);
            });
        }

        std::vector<PageScore> scores;
        std::vector<const PageEntries*> flat;
        for (const auto& [key, page] : pages) {
            scores.push_back(page.score);
            flat.push_back(&page);
        }
        report.pages_before += static_cast<int>(scores.size());

        auto chosen = select_evictions(scores, cfg.budget_pages,
                                       cfg.strategy == SchedStrategy::AdaKV,
                                       state.theta);
        report.pages_after +=
            static_cast<int>(scores.size() - chosen.size());

        for (auto [idx, reason] : chosen) {
            // Capture the records before mutating the store.
            struct Victim {
                std::uint64_t id;
                std::int64_t token;
                int expert;
                double score;
            };
            std::vector<Victim> victims;
            for (const KVEntry* e : flat[idx]->members) {
                victims.push_back({e->id, e->token_id, e->expert_id,
                                   score_entry(*e, no_query, state, cfg, quest,
                                               now)});
            }
            std::sort(victims.begin(), victims.end(),
                      [](const Victim& a, const Victim& b) { return a.id < b.id; });
            for (const auto& v : victims) {
                store.erase(v.id);
                report.evicted.push_back({state.step, v.id, v.token, v.expert,
                                          dev, v.score, reason});
            }
        }
    }
    state.step += 1;
    return report;
}

void observe_hits(SchedulerState& state, const SchedulerConfig& cfg,
                  std::uint64_t hits, std::uint64_t lookups) {
    if (lookups == 0) return;
    double step_rate = static_cast<double>(hits) / static_cast<double>(lookups);
    state.running_hit =
        cfg.hit_decay * state.running_hit + (1.0 - cfg.hit_decay) * step_rate;
}

void adakv_update(SchedulerState& state, const SchedulerConfig& cfg) {
    state.theta += cfg.adakv_step * (cfg.target_hit - state.running_hit);
}

double reuse_score(const KVEntry& entry, std::span<const double> query,
                   const SchedulerConfig& cfg, std::uint64_t now) {
    double reuse = static_cast<double>(entry.meta.freq) /
                   (1.0 + static_cast<double>(entry.meta.age(now)));
    double sim = cosine_similarity(entry.key, query);
    return reuse + cfg.gamma_sim * sim;
}

void ExpertUtilityTracker::note_query(int expert) {
    query_counts_[expert] += 1;
}

void ExpertUtilityTracker::note_attention(int expert, std::int64_t token,
                                          double weight) {
    weight_sums_[expert][token] += weight;
}

std::optional<double> ExpertUtilityTracker::utility(int expert,
                                                    std::int64_t token) const {
    auto qc = query_counts_.find(expert);
    if (qc == query_counts_.end() || qc->second == 0) return std::nullopt;
    auto ws = weight_sums_.find(expert);
    double sum = 0.0;
    if (ws != weight_sums_.end()) {
        auto it = ws->second.find(token);
        if (it != ws->second.end()) sum = it->second;
    }
    return sum / static_cast<double>(qc->second);
}

std::uint64_t ExpertUtilityTracker::queries(int expert) const {
    auto it = query_counts_.find(expert);
    return it == query_counts_.end() ? 0 : it->second;
}

}  // namespace pikv
