// SPDX-License-Identifier: Apache-2.0
#include "pikv/mathops.hpp"

#include <algorithm>
#include <cmath>

#include "pikv/errors.hpp"

namespace pikv {

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) {
        throw InvalidArgument("softmax: empty input");
    }
    double max_logit = logits[0];
    for (double x : logits) {
        if (std::isnan(x)) {
            throw InvalidArgument("softmax: NaN logit");
        }
        max_logit = std::max(max_logit, x);
    }
    std::vector<double> out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - max_logit);
        total += out[i];
    }
    for (auto& x : out) x /= total;
    return out;
}

double entropy(std::span<const double> p) {
    double sum = 0.0;
    double h = 0.0;
    for (double x : p) {
        if (x < 0.0) {
            throw InvalidArgument("entropy: negative probability");
        }
        sum += x;
        if (x > 0.0) h -= x * std::log(x);
    }
    if (std::abs(sum - 1.0) > 1e-6) {
        throw InvalidArgument("entropy: probabilities do not sum to 1");
    }
    return h;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw InvalidArgument("dot: length mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw InvalidArgument("cosine_similarity: length mismatch");
    }
    double na = l2_norm(a);
    double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

}  // namespace pikv
