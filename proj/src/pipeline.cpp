// SPDX-License-Identifier: Apache-2.0
#include "pikv/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "pikv/errors.hpp"
#include "pikv/mathops.hpp"
#include "pikv/rng.hpp"

namespace pikv {

namespace {
constexpr std::uint64_t kEncoderSalt = 0x71c9de52ae0aefULL;
constexpr std::uint64_t kRouterSalt = 0x2545f4914f6cdd1dULL;
constexpr std::uint64_t kCalibSalt = 0x9e3779b97f4a7c15ULL;

// Modeled element accesses for one fetched entry: two head-width reads for
// the key/value matrices plus the attention overhead term, all at the
// stored width.
std::uint64_t fetch_cost_elements(int head_width, int stored_width) {
    int h = std::min(head_width, stored_width);
    return 2ull * static_cast<std::uint64_t>(h) +
           static_cast<std::uint64_t>(stored_width);
}
}  // namespace

QueryEncoder::QueryEncoder(int width, std::uint64_t seed) : width_(width) {
    Rng rng(seed);
    double scale = 1.0 / std::sqrt(static_cast<double>(width));
    auto n = static_cast<std::size_t>(width) * width;
    w_query_ = rng.normal_vector(n, scale);
    w_key_ = rng.normal_vector(n, scale);
    w_value_ = rng.normal_vector(n, scale);
}

std::vector<double> QueryEncoder::apply(const std::vector<double>& matrix,
                                        std::span<const double> x) const {
    std::vector<double> out(width_, 0.0);
    for (int i = 0; i < width_; ++i) {
        const double* row = matrix.data() + static_cast<std::size_t>(i) * width_;
        double s = 0.0;
        for (int j = 0; j < width_; ++j) s += row[j] * x[j];
        out[i] = s;
    }
    return out;
}

QueryEncoder::Encoded QueryEncoder::encode(
    std::span<const double> embedding) const {
    if (static_cast<int>(embedding.size()) != width_) {
        throw InvalidArgument("QueryEncoder: embedding width mismatch");
    }
    return {apply(w_query_, embedding), apply(w_key_, embedding),
            apply(w_value_, embedding)};
}

AttentionOutput attention(std::span<const double> query,
                          const std::vector<const KVEntry*>& entries) {
    AttentionOutput out;
    out.retrieved = entries.size();
    if (entries.empty()) {
        out.output.assign(query.size(), 0.0);
        return out;
    }
    double scale = 1.0 / std::sqrt(static_cast<double>(query.size()));
    std::vector<double> scores;
    scores.reserve(entries.size());
    for (const KVEntry* e : entries) {
        if (e->key.size() != query.size()) {
            throw InvalidArgument("attention: key/query width mismatch");
        }
        scores.push_back(dot(query, e->key) * scale);
    }
    out.weights = softmax(scores);
    out.output.assign(entries[0]->value.size(), 0.0);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& v = entries[i]->value;
        for (std::size_t j = 0; j < v.size(); ++j) {
            out.output[j] += out.weights[i] * v[j];
        }
    }
    return out;
}

Engine::Engine(const EngineConfig& cfg)
    : cfg_(cfg),
      encoder_(cfg.model.d, cfg.seed ^ kEncoderSalt),
      store_(cfg.model, cfg.store),
      router_state_(RouterState::init(cfg.model.E, cfg.model.d,
                                      cfg.seed ^ kRouterSalt)),
      sched_state_(SchedulerState::init(cfg.scheduler)) {
    cfg_.model.validate();
    cfg_.router.validate(cfg_.model.E);

    // Calibration: encoder outputs for seeded embeddings, keys and values
    // pooled into one sample set.
    Rng rng(cfg.seed ^ kCalibSalt);
    std::vector<std::vector<double>> calibration;
    calibration.reserve(2 * static_cast<std::size_t>(cfg.compressor.calib_size));
    for (int i = 0; i < cfg.compressor.calib_size; ++i) {
        auto enc = encoder_.encode(rng.normal_vector(cfg.model.d));
        calibration.push_back(std::move(enc.key));
        calibration.push_back(std::move(enc.value));
    }
    if (!cfg.composition.empty()) {
        if (cfg.compressor.per_tensor) {
            throw InvalidConfig("Engine: per_tensor does not compose");
        }
        composite_ = CompositeCodec::fit(cfg.composition, calibration,
                                         cfg.compressor);
        // Stage chain output drives the stored width; keep a plain codec
        // around for reporting symmetry.
        codec_ = Codec::fit(Scheme::Identity, calibration, cfg.compressor);
    } else if (cfg.compressor.per_tensor) {
        if (cfg.compressor.scheme == Scheme::Chunk) {
            throw InvalidConfig(
                "Engine: per_tensor and Chunk share one block index; use the "
                "pooled codec");
        }
        // Keys on even rows, values on odd ones (the pooled layout above).
        std::vector<std::vector<double>> keys, values;
        for (std::size_t i = 0; i < calibration.size(); ++i) {
            (i % 2 == 0 ? keys : values).push_back(calibration[i]);
        }
        codec_ = Codec::fit(cfg.compressor.scheme, keys, cfg.compressor);
        codec_value_ = Codec::fit(cfg.compressor.scheme, values, cfg.compressor);
        if (codec_value_->stored_width() != codec_.stored_width()) {
            throw InvalidConfig("Engine: per-tensor widths diverge");
        }
    } else {
        codec_ = Codec::fit(cfg.compressor.scheme, calibration, cfg.compressor);
    }

    int sw = stored_width();
    if (sw != cfg_.model.d_prime()) {
        throw InvalidConfig(
            "Engine: model.rho disagrees with the fitted codec width; set "
            "rho = d / stored width");
    }
}

int Engine::stored_width() const {
    return composite_ ? composite_->stored_width() : codec_.stored_width();
}

std::vector<std::pair<std::int64_t, int>> Engine::insert_compressed(
    const std::vector<Staged>& staged, std::vector<EvictionRecord>& out) {
    std::vector<std::pair<std::int64_t, int>> inserted;
    if (staged.empty()) return inserted;

    // Compress first (pure), then mutate: a throw above leaves no partial
    // state behind.
    std::vector<KVEntry> ready;
    ready.reserve(staged.size());
    if (!composite_ && codec_.scheme() == Scheme::Chunk) {
        std::vector<std::pair<std::vector<double>, std::vector<double>>> block;
        block.reserve(staged.size());
        for (const auto& s : staged) block.emplace_back(s.key, s.value);
        auto encoded = codec_.encode_chunk(block);
        for (std::size_t i = 0; i < staged.size(); ++i) {
            KVEntry e;
            e.token_id = staged[i].token_id;
            e.expert_id = staged[i].expert_id;
            e.codec_block = encoded[i].block;
            e.key = std::move(encoded[i].key);
            e.value = std::move(encoded[i].value);
            e.meta.insert_step = now_;
            e.meta.last_access_step = now_;
            e.meta.per_layer_scores = staged[i].saliency;
            ready.push_back(std::move(e));
        }
    } else {
        for (const auto& s : staged) {
            CompressedKV c;
            if (composite_) {
                c = composite_->encode(s.key, s.value);
            } else if (codec_value_) {
                c.key = codec_.encode_vector(s.key);
                c.value = codec_value_->encode_vector(s.value);
            } else {
                c = codec_.encode(s.key, s.value);
            }
            KVEntry e;
            e.token_id = s.token_id;
            e.expert_id = s.expert_id;
            e.codec_block = c.block;
            e.key = std::move(c.key);
            e.value = std::move(c.value);
            e.meta.insert_step = now_;
            e.meta.last_access_step = now_;
            e.meta.per_layer_scores = s.saliency;
            ready.push_back(std::move(e));
        }
    }
    for (auto& e : ready) {
        auto token = e.token_id;
        auto expert = e.expert_id;
        auto displaced = store_.insert(std::move(e));
        inserted.emplace_back(token, expert);
        if (displaced.has_value()) {
            out.push_back({now_, displaced->id, displaced->token_id,
                           displaced->expert_id,
                           store_.locate(displaced->token_id,
                                         displaced->expert_id).device,
                           0.0, EvictReason::Overwrite});
        }
    }
    return inserted;
}

StepResult Engine::step(const TokenInput& input) {
    if (static_cast<int>(input.embedding.size()) != cfg_.model.d) {
        throw InvalidArgument("Engine::step: embedding width mismatch");
    }
    StepResult result;
    result.step = now_;
    auto token_id = static_cast<std::int64_t>(now_);

    // Route, then encode the token's KV pair.
    auto encoded = encoder_.encode(input.embedding);
    auto decision = route(encoded.query, router_state_, cfg_.router);
    result.experts = decision.experts;
    result.gates = decision.gates;

    // Stage one entry per selected expert.
    std::vector<Staged> staged;
    for (int e : decision.experts) {
        staged.push_back(
            {token_id, e, encoded.key, encoded.value, input.layer_saliency});
    }
    bool chunked = !composite_ && codec_.scheme() == Scheme::Chunk;
    if (chunked) {
        for (auto& s : staged) chunk_pending_.push_back(std::move(s));
        if (static_cast<int>(chunk_pending_.size()) >=
            cfg_.compressor.chunk_size) {
            auto ins = insert_compressed(chunk_pending_, result.evictions);
            result.inserted.insert(result.inserted.end(), ins.begin(), ins.end());
            chunk_pending_.clear();
        }
    } else {
        auto ins = insert_compressed(staged, result.evictions);
        result.inserted.insert(result.inserted.end(), ins.begin(), ins.end());
    }
    result.inserts = static_cast<int>(result.inserted.size());

    // Scheduling pass, after insertion.
    if (!cfg_.unbounded_budget) {
        auto report = evict(store_, sched_state_,  cfg_.scheduler,
                            quest_.has_value() ? &*quest_ : nullptr, now_);
        result.evictions.insert(result.evictions.end(), report.evicted.begin(),
                                report.evicted.end());
    }

    // Retrieval over the selected experts' shards.
    auto retrieval = store_.retrieve(decision.experts, token_id, now_);
    for (int e : retrieval.missed_experts) record_miss(router_state_, e);
    result.lookups = decision.experts.size();
    result.hits = result.lookups - retrieval.missed_experts.size();

    result.fetch_elements =
        retrieval.entries.size() *
        fetch_cost_elements(cfg_.model.head_width, store_.stored_width());

    // Attention in compressed space by default; full-width mode decodes the
    // stored entries first.
    std::vector<KVEntry> decoded_storage;
    std::vector<const KVEntry*> attend_list;
    std::vector<double> q_attn;
    if (cfg_.attend_full_width) {
        q_attn = encoded.query;
        decoded_storage.reserve(retrieval.entries.size());
        for (KVEntry* e : retrieval.entries) {
            KVEntry full = *e;
            if (composite_) {
                CompressedKV c;
                c.scheme = composite_->stages().back().scheme();
                c.original_width = cfg_.model.d;
                c.stored_width = stored_width();
                c.key = e->key;
                c.value = e->value;
                auto [k, v] = composite_->decode(c);
                full.key = std::move(k);
                full.value = std::move(v);
            } else {
                full.key = codec_.decode_vector(e->key, e->codec_block);
                full.value = (codec_value_ ? *codec_value_ : codec_)
                                 .decode_vector(e->value, e->codec_block);
            }
            decoded_storage.push_back(std::move(full));
        }
        for (const auto& e : decoded_storage) attend_list.push_back(&e);
    } else {
        q_attn = composite_ ? composite_->encode_vector(encoded.query)
                            : codec_.encode_vector(encoded.query);
        attend_list.assign(retrieval.entries.begin(), retrieval.entries.end());
    }
    result.attn = attention(q_attn, attend_list);

    // Fold the weights back into metadata and the utility tracker.
    for (int e : decision.experts) tracker_.note_query(e);
    for (std::size_t i = 0; i < retrieval.entries.size(); ++i) {
        KVEntry* e = retrieval.entries[i];
        double alpha = result.attn.weights[i];
        e->meta.attn_mass += alpha;
        if (!e->meta.per_layer_scores.empty()) {
            e->meta.per_layer_scores[now_ % e->meta.per_layer_scores.size()] +=
                alpha;
        }
        tracker_.note_attention(e->expert_id, e->token_id, alpha);

        AttendedEntry att;
        att.token_id = e->token_id;
        att.expert_id = e->expert_id;
        att.weight = alpha;
        if (cfg_.record_fidelity) {
            if (cfg_.attend_full_width) {
                att.full_value = decoded_storage[i].value;
            } else if (composite_) {
                CompressedKV c;
                c.scheme = composite_->stages().back().scheme();
                c.original_width = cfg_.model.d;
                c.stored_width = stored_width();
                c.key = e->key;
                c.value = e->value;
                att.full_value = composite_->decode(c).second;
            } else {
                att.full_value = (codec_value_ ? *codec_value_ : codec_)
                                     .decode_vector(e->value, e->codec_block);
            }
        }
        result.attended.push_back(std::move(att));
    }

    // Feedback paths: bandit reward and the adaptive threshold.
    if (cfg_.router.strategy == RouterStrategy::Adaptive) {
        double reward = result.lookups == 0
                            ? 0.0
                            : static_cast<double>(result.hits) / result.lookups;
        adapt(router_state_, decision, reward, cfg_.router);
    }
    observe_hits(sched_state_, cfg_.scheduler, result.hits, result.lookups);
    if (cfg_.scheduler.strategy == SchedStrategy::AdaKV &&
        !cfg_.unbounded_budget) {
        adakv_update(sched_state_, cfg_.scheduler);
    }

    now_ += 1;
    return result;
}

std::vector<std::pair<std::int64_t, int>> Engine::flush() {
    std::vector<EvictionRecord> dropped;
    auto inserted = insert_compressed(chunk_pending_, dropped);
    chunk_pending_.clear();
    return inserted;
}

ReferenceDecoder::ReferenceDecoder(const EngineConfig& cfg)
    : cfg_(cfg),
      encoder_(cfg.model.d, cfg.seed ^ kEncoderSalt),
      router_state_(RouterState::init(cfg.model.E, cfg.model.d,
                                      cfg.seed ^ kRouterSalt)),
      by_expert_(cfg.model.E) {}

StepResult ReferenceDecoder::step(const TokenInput& input) {
    StepResult result;
    result.step = now_;
    auto token_id = static_cast<std::int64_t>(now_);

    auto encoded = encoder_.encode(input.embedding);
    auto decision = route(encoded.query, router_state_, cfg_.router);
    result.experts = decision.experts;
    result.gates = decision.gates;

    for (int e : decision.experts) {
        by_expert_[e].push_back({token_id, e, encoded.key, encoded.value});
        result.inserted.emplace_back(token_id, e);
    }
    result.inserts = static_cast<int>(decision.experts.size());

    // Per-expert lists are already token-ordered; merge the selected ones
    // into the global (token, expert) order.
    result.lookups = decision.experts.size();
    std::vector<const Stored*> hits;
    struct Cursor {
        const std::vector<Stored>* list;
        std::size_t pos = 0;
    };
    std::vector<Cursor> cursors;
    for (int e : decision.experts) {
        const auto& list = by_expert_[e];
        if (!list.empty() && list.front().token_id < token_id) {
            result.hits += 1;
            cursors.push_back({&list, 0});
        } else {
            record_miss(router_state_, e);
        }
    }
    while (true) {
        const Stored* best = nullptr;
        Cursor* best_cursor = nullptr;
        for (auto& cur : cursors) {
            if (cur.pos >= cur.list->size()) continue;
            const Stored& cand = (*cur.list)[cur.pos];
            if (cand.token_id >= token_id) continue;
            if (best == nullptr || cand.token_id < best->token_id ||
                (cand.token_id == best->token_id &&
                 cand.expert_id < best->expert_id)) {
                best = &cand;
                best_cursor = &cur;
            }
        }
        if (best == nullptr) break;
        hits.push_back(best);
        best_cursor->pos += 1;
    }

    std::vector<KVEntry> view(hits.size());
    std::vector<const KVEntry*> attend_list(hits.size());
    for (std::size_t i = 0; i < hits.size(); ++i) {
        view[i].token_id = hits[i]->token_id;
        view[i].expert_id = hits[i]->expert_id;
        view[i].key = hits[i]->key;
        view[i].value = hits[i]->value;
        attend_list[i] = &view[i];
    }
    result.attn = attention(encoded.query, attend_list);
    result.fetch_elements =
        hits.size() *
        (2ull * std::min(cfg_.model.head_width, cfg_.model.d) + cfg_.model.d);

    for (std::size_t i = 0; i < hits.size(); ++i) {
        AttendedEntry att;
        att.token_id = hits[i]->token_id;
        att.expert_id = hits[i]->expert_id;
        att.weight = result.attn.weights[i];
        att.full_value = hits[i]->value;
        result.attended.push_back(std::move(att));
    }

    if (cfg_.router.strategy == RouterStrategy::Adaptive) {
        double reward = result.lookups == 0
                            ? 0.0
                            : static_cast<double>(result.hits) / result.lookups;
        adapt(router_state_, decision, reward, cfg_.router);
    }

    now_ += 1;
    return result;
}

double fidelity_step_loss(const StepResult& oracle, const StepResult& engine) {
    std::map<std::pair<std::int64_t, int>, const std::vector<double>*> got;
    for (const auto& att : engine.attended) {
        got[{att.token_id, att.expert_id}] = &att.full_value;
    }
    double loss = 0.0;
    for (const auto& att : oracle.attended) {
        auto it = got.find({att.token_id, att.expert_id});
        const std::vector<double>* v_hat_ptr =
            it == got.end() ? nullptr : it->second;
        for (std::size_t j = 0; j < att.full_value.size(); ++j) {
            double v = att.full_value[j];
            double v_hat =
                v_hat_ptr && j < v_hat_ptr->size() ? (*v_hat_ptr)[j] : 0.0;
            double diff = att.weight * (v - v_hat);
            loss += diff * diff;
        }
    }
    return loss;
}

FidelityLedger fidelity(const std::vector<StepResult>& oracle_steps,
                        const std::vector<StepResult>& engine_steps) {
    if (oracle_steps.size() != engine_steps.size()) {
        throw InvalidComparison("fidelity: stream length mismatch");
    }
    FidelityLedger ledger;
    for (std::size_t t = 0; t < oracle_steps.size(); ++t) {
        ledger.add(fidelity_step_loss(oracle_steps[t], engine_steps[t]));
    }
    return ledger;
}

}  // namespace pikv
