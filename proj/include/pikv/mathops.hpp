// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

namespace pikv {

// Max-shifted softmax. Throws InvalidArgument on empty input or NaN.
std::vector<double> softmax(std::span<const double> logits);

// Shannon entropy in nats, with 0*log(0) := 0. Input must be a probability
// vector (nonnegative, sums to 1 within 1e-6).
double entropy(std::span<const double> p);

// Cosine similarity in [-1, 1]. A zero-norm operand yields 0: freshly
// zero-initialized entries may be scored before their first write.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

}  // namespace pikv
