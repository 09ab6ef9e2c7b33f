#include "exgnet/objectives.hpp"

#include "exgnet/errors.hpp"
#include "exgnet/nn/ops.hpp"

namespace exg {

void LossWeights::validate() const {
    if (w_base < 0 || w_feature < 0 || w_joint < 0 || w_ncc < 0) throw UsageError("loss weights must be >= 0");
}

Tensor cross_entropy(const Tensor& probs, std::span<const std::size_t> labels) {
    return nn::cross_entropy(probs, labels);
}

std::vector<double> ncc_row_weights(std::span<const GtCam> gt) {
    std::vector<double> w(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) w[i] = (gt[i].insufficient_beats || gt[i].all_zero()) ? 0.0 : 1.0;
    return w;
}

Tensor ncc_loss(const Tensor& pred_cam, std::span<const GtCam> gt) {
    if (pred_cam.rank() != 2 || pred_cam.dim(0) != gt.size())
        throw ShapeError("ncc_loss: predicted CAM batch " + nn::shape_str(pred_cam.shape()) + " vs " +
                         std::to_string(gt.size()) + " masks");
    const std::size_t m = pred_cam.dim(1);
    std::vector<double> target;
    target.reserve(gt.size() * m);
    for (const auto& g : gt) {
        if (g.values.size() != m)
            throw ShapeError("ncc_loss: mask length " + std::to_string(g.values.size()) + " vs CAM length " +
                             std::to_string(m));
        target.insert(target.end(), g.values.begin(), g.values.end());
    }
    const auto weights = ncc_row_weights(gt);
    return nn::ncc_loss(pred_cam, Tensor::from(pred_cam.shape(), std::move(target)), weights);
}

LossBreakdown total_loss(const ForwardOutputs& outputs, std::span<const std::size_t> labels,
                         std::span<const GtCam> gt, const Tensor& train_cam, const LossWeights& weights) {
    weights.validate();
    if (!outputs.has_features || !outputs.probs_joint.defined() || !outputs.feature.probs_feat.defined())
        throw UsageError("total_loss needs feature-branch and joint outputs");
    if (!train_cam.defined()) throw UsageError("total_loss needs the training CAM");
    const Tensor ce_base = exg::cross_entropy(outputs.base.probs_base, labels);
    const Tensor ce_feat = exg::cross_entropy(outputs.feature.probs_feat, labels);
    const Tensor ce_joint = exg::cross_entropy(outputs.probs_joint, labels);
    const Tensor ncc = exg::ncc_loss(train_cam, gt);
    LossBreakdown out;
    const double w[] = {weights.w_base, weights.w_feature, weights.w_joint, weights.w_ncc};
    out.total = nn::weighted_sum({ce_base, ce_feat, ce_joint, ncc}, w);
    out.ce_base = ce_base.item();
    out.ce_feature = ce_feat.item();
    out.ce_joint = ce_joint.item();
    out.ncc = ncc.item();
    return out;
}

}  // namespace exg
