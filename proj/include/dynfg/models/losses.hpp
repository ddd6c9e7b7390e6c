#pragma once

#include <span>

#include "dynfg/ops.hpp"

namespace dynfg::models {

/// Reconstructions are clamped to [kBceClamp, 1 - kBceClamp] before the log.
inline constexpr Real kBceClamp = Real(1e-7);

/// Binary cross-entropy between a reconstruction in [0,1] and its target,
/// averaged over every pixel (and channel) of every image. The gradient is
/// evaluated at the clamped value so saturated outputs still receive one.
Tensor bce_reconstruction_loss(const Tensor& output, const Tensor& target);

/// Mean over the batch of -log p[label].
Tensor nll_classification_loss(const Tensor& log_probs, std::span<const int> labels);

enum class ModelMode { Baseline, FilterGeneration };

struct LossBundle {
    Tensor rec;
    Tensor cls;
    Tensor total;
};

/// total = rec_weight * rec + cls. In baseline mode rec is a constant zero and
/// total is cls itself.
LossBundle total_loss(const Tensor& reconstruction, const Tensor& logits, const Tensor& target_images,
                      std::span<const int> labels, ModelMode mode, Real rec_weight = Real(1));

}  // namespace dynfg::models
