#pragma once

// Segmentation losses over N x C x D x H x W class scores.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "gliomaforge/conv.hpp"
#include "gliomaforge/tensor.hpp"

namespace gliomaforge {

inline constexpr double kDiceSmoothing = 1e-5;

/// Labels laid out N x D x H x W, one-hot encoded to N x C x D x H x W.
template <typename T>
Tensor<T> one_hot(std::span<const std::uint8_t> labels, const Shape& shape) {
    require(shape.size() >= 2, ErrorKind::shape, "one_hot needs N x C x ...");
    const std::int64_t n = shape[0], c = shape[1], S = shape_numel(shape) / (n * c);
    require(static_cast<std::int64_t>(labels.size()) == n * S, ErrorKind::shape, "label count does not match shape");
    std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)), T(0));
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t i = 0; i < S; ++i) {
            const std::uint8_t l = labels[static_cast<std::size_t>(b * S + i)];
            require(l < c, ErrorKind::label, "label " + std::to_string(l) + " outside [0, " + std::to_string(c) + ")");
            v[static_cast<std::size_t>((b * c + l) * S + i)] = T(1);
        }
    return Tensor<T>::from(shape, std::move(v));
}

/// Soft Dice over foreground classes 1..C-1, averaged over classes and batch:
/// 1 - (2 sum p g + eps) / (sum p + sum g + eps) per (sample, class).
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const Tensor<T>& target, double eps = kDiceSmoothing) {
    require(probs.shape() == target.shape(), ErrorKind::shape,
            "dice_loss: probs " + shape_str(probs.shape()) + " vs target " + shape_str(target.shape()));
    require(probs.rank() >= 3 && probs.dim(1) >= 2, ErrorKind::shape, "dice_loss needs N x C x spatial with C >= 2");
    const std::int64_t n = probs.dim(0), c = probs.dim(1), S = probs.numel() / (n * c);
    const auto& p = probs.values();
    const auto& g = target.values();
    const std::int64_t terms = n * (c - 1);
    std::vector<double> inter(static_cast<std::size_t>(n * c), 0.0), denom(static_cast<std::size_t>(n * c), 0.0);
    double loss = 0.0;
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t ch = 1; ch < c; ++ch) {
            const std::int64_t base = (b * c + ch) * S;
            double I = 0.0, sp = 0.0, sg = 0.0;
            for (std::int64_t i = 0; i < S; ++i) {
                const double pv = p[static_cast<std::size_t>(base + i)], gv = g[static_cast<std::size_t>(base + i)];
                I += pv * gv;
                sp += pv;
                sg += gv;
            }
            inter[static_cast<std::size_t>(b * c + ch)] = I;
            denom[static_cast<std::size_t>(b * c + ch)] = sp + sg + eps;
            loss += 1.0 - (2.0 * I + eps) / (sp + sg + eps);
        }
    loss /= static_cast<double>(terms);
    return make_result<T>({1}, {static_cast<T>(loss)}, {probs, target},
                          [=](Node<T>& self) {
                              T* gp = self.parent_grad(0);
                              if (!gp) return;
                              const auto& g = self.parents[1]->value;
                              const double upstream = static_cast<double>(self.grad[0]) / static_cast<double>(terms);
                              for (std::int64_t b = 0; b < n; ++b)
                                  for (std::int64_t ch = 1; ch < c; ++ch) {
                                      const double I = inter[static_cast<std::size_t>(b * c + ch)];
                                      const double D = denom[static_cast<std::size_t>(b * c + ch)];
                                      const std::int64_t base = (b * c + ch) * S;
                                      for (std::int64_t i = 0; i < S; ++i) {
                                          const double gv = g[static_cast<std::size_t>(base + i)];
                                          const double d = -(2.0 * gv * D - (2.0 * I + eps)) / (D * D);
                                          gp[base + i] += static_cast<T>(upstream * d);
                                      }
                                  }
                          },
                          "dice_loss");
}

/// Mean over voxels of -log softmax(logits)[label], via log-sum-exp.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
    require(logits.rank() >= 2, ErrorKind::shape, "cross_entropy needs N x C x ...");
    const std::int64_t n = logits.dim(0), c = logits.dim(1), S = logits.numel() / (n * c);
    require(static_cast<std::int64_t>(labels.size()) == n * S, ErrorKind::shape,
            "cross_entropy: " + std::to_string(labels.size()) + " labels for " + shape_str(logits.shape()));
    const auto& x = logits.values();
    auto probs = std::make_shared<std::vector<T>>(x.size());
    auto lab = std::make_shared<std::vector<std::uint8_t>>(labels.begin(), labels.end());
    double total = 0.0;
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t i = 0; i < S; ++i) {
            const std::uint8_t l = labels[static_cast<std::size_t>(b * S + i)];
            require(l < c, ErrorKind::label, "label " + std::to_string(l) + " outside [0, " + std::to_string(c) + ")");
            auto at = [&](std::int64_t ch) { return static_cast<std::size_t>((b * c + ch) * S + i); };
            double mx = x[at(0)];
            for (std::int64_t ch = 1; ch < c; ++ch) mx = std::max(mx, static_cast<double>(x[at(ch)]));
            double se = 0.0;
            for (std::int64_t ch = 0; ch < c; ++ch) se += std::exp(static_cast<double>(x[at(ch)]) - mx);
            const double lse = mx + std::log(se);
            total += lse - static_cast<double>(x[at(l)]);
            for (std::int64_t ch = 0; ch < c; ++ch)
                (*probs)[at(ch)] = static_cast<T>(std::exp(static_cast<double>(x[at(ch)]) - lse));
        }
    const double count = static_cast<double>(n * S);
    return make_result<T>({1}, {static_cast<T>(total / count)}, {logits},
                          [=](Node<T>& self) {
                              T* gx = self.parent_grad(0);
                              const T scale_factor = static_cast<T>(static_cast<double>(self.grad[0]) / count);
                              for (std::int64_t b = 0; b < n; ++b)
                                  for (std::int64_t i = 0; i < S; ++i) {
                                      const std::uint8_t l = (*lab)[static_cast<std::size_t>(b * S + i)];
                                      for (std::int64_t ch = 0; ch < c; ++ch) {
                                          const auto idx = static_cast<std::size_t>((b * c + ch) * S + i);
                                          gx[idx] += scale_factor * ((*probs)[idx] - (ch == l ? T(1) : T(0)));
                                      }
                                  }
                          },
                          "cross_entropy");
}

struct LossParts {
    double dice = 0.0;
    double cross_entropy = 0.0;
};

/// Dice over softmax probabilities plus cross-entropy on the logits.
template <typename T>
Tensor<T> composite_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels, LossParts* parts = nullptr) {
    const Tensor<T> target = one_hot<T>(labels, logits.shape());
    const Tensor<T> dice = dice_loss(softmax(logits, 1), target);
    const Tensor<T> ce = cross_entropy(logits, labels);
    if (parts) {
        parts->dice = static_cast<double>(dice.item());
        parts->cross_entropy = static_cast<double>(ce.item());
    }
    return add(dice, ce);
}

} // namespace gliomaforge
