// SPDX-License-Identifier: Apache-2.0
#include "pikv/trace.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "pikv/errors.hpp"
#include "pikv/rng.hpp"

namespace pikv {

namespace {
constexpr char kMagic[4] = {'P', 'I', 'K', 'T'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("trace file truncated");
    return v;
}

std::vector<std::vector<double>> make_vocabulary(const TraceSpec& spec) {
    Rng rng(spec.seed);
    std::vector<std::vector<double>> vocab(spec.vocab);
    for (auto& v : vocab) v = rng.normal_vector(spec.width);
    return vocab;
}
}  // namespace

void TraceSpec::validate() const {
    if (width < 1) throw InvalidConfig("TraceSpec: width must be >= 1");
    if (vocab < 1) throw InvalidConfig("TraceSpec: vocab must be >= 1");
    if (zipf_skew < 0) throw InvalidConfig("TraceSpec: skew must be >= 0");
    if (layers < 1) throw InvalidConfig("TraceSpec: layers must be >= 1");
}

TokenInput Trace::token(std::size_t i) const {
    TokenInput tok;
    tok.embedding = vocabulary[events[i].embed_id];
    tok.layer_saliency.assign(events[i].layer_saliency.begin(),
                              events[i].layer_saliency.end());
    return tok;
}

Trace generate_trace(const TraceSpec& spec) {
    spec.validate();
    Trace trace;
    trace.spec = spec;
    trace.vocabulary = make_vocabulary(spec);

    // Inverse-CDF sampling over p_i ~ (i+1)^-skew.
    std::vector<double> cdf(spec.vocab);
    double total = 0.0;
    for (int i = 0; i < spec.vocab; ++i) {
        total += std::pow(static_cast<double>(i + 1), -spec.zipf_skew);
        cdf[i] = total;
    }
    for (auto& c : cdf) c /= total;

    Rng rng(spec.seed ^ 0x7ace5eedULL);
    trace.events.resize(spec.steps);
    for (auto& ev : trace.events) {
        double u = rng.uniform();
        auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
        ev.embed_id = static_cast<std::uint32_t>(
            std::min<std::ptrdiff_t>(it - cdf.begin(), spec.vocab - 1));
        ev.layer_saliency.resize(spec.layers);
        for (auto& s : ev.layer_saliency) {
            s = static_cast<float>(std::abs(rng.normal()) * 0.1);
        }
    }
    return trace;
}

void save_trace(const Trace& trace, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("trace save: cannot open " + path);
    out.write(kMagic, 4);
    write_pod<std::uint16_t>(out, kVersion);
    write_pod<std::uint64_t>(out, trace.spec.steps);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(trace.spec.width));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(trace.spec.vocab));
    write_pod<double>(out, trace.spec.zipf_skew);
    write_pod<std::uint64_t>(out, trace.spec.seed);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(trace.spec.layers));
    for (const auto& ev : trace.events) {
        write_pod<std::uint32_t>(out, ev.embed_id);
        for (float s : ev.layer_saliency) write_pod<float>(out, s);
    }
    if (!out) throw IoError("trace save: write failed");
}

Trace load_trace(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("trace load: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("trace load: bad magic");
    }
    if (read_pod<std::uint16_t>(in) != kVersion) {
        throw IoError("trace load: unsupported version");
    }
    Trace trace;
    trace.spec.steps = read_pod<std::uint64_t>(in);
    trace.spec.width = static_cast<int>(read_pod<std::uint32_t>(in));
    trace.spec.vocab = static_cast<int>(read_pod<std::uint32_t>(in));
    trace.spec.zipf_skew = read_pod<double>(in);
    trace.spec.seed = read_pod<std::uint64_t>(in);
    trace.spec.layers = static_cast<int>(read_pod<std::uint32_t>(in));
    trace.spec.validate();
    trace.vocabulary = make_vocabulary(trace.spec);
    trace.events.resize(trace.spec.steps);
    for (auto& ev : trace.events) {
        ev.embed_id = read_pod<std::uint32_t>(in);
        if (ev.embed_id >= static_cast<std::uint32_t>(trace.spec.vocab)) {
            throw IoError("trace load: embed id out of range");
        }
        ev.layer_saliency.resize(trace.spec.layers);
        for (auto& s : ev.layer_saliency) s = read_pod<float>(in);
    }
    return trace;
}

}  // namespace pikv
