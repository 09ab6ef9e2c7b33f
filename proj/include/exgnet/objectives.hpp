#pragma once

#include <span>
#include <vector>

#include "exgnet/gtcam.hpp"
#include "exgnet/model.hpp"

namespace exg {

/// Weights of the four loss terms (base CE, feature CE, joint CE, CAM NCC).
struct LossWeights {
    double w_base = 2.0;
    double w_feature = 1.0;
    double w_joint = 1.0;
    double w_ncc = 0.2;

    void validate() const;
};

/// Batch-mean -log p_true with probabilities floored at 1e-12.
Tensor cross_entropy(const Tensor& probs, std::span<const std::size_t> labels);

/// Negative mean normalized cross-correlation between predicted and
/// ground-truth CAMs. Rows whose mask is all zeros (or flagged as lacking
/// beats) get zero weight.
Tensor ncc_loss(const Tensor& pred_cam, std::span<const GtCam> gt);

/// Row weights used by ncc_loss: 0 for excluded masks, 1 otherwise.
std::vector<double> ncc_row_weights(std::span<const GtCam> gt);

struct LossBreakdown {
    Tensor total;
    double ce_base = 0;
    double ce_feature = 0;
    double ce_joint = 0;
    double ncc = 0;
};

/// w_base*CE(base) + w_feature*CE(feature) + w_joint*CE(joint) + w_ncc*NCC.
/// All four components are required.
LossBreakdown total_loss(const ForwardOutputs& outputs, std::span<const std::size_t> labels,
                         std::span<const GtCam> gt, const Tensor& train_cam, const LossWeights& weights);

}  // namespace exg
