#pragma once

#include <span>
#include <string>
#include <vector>

#include "exgnet/gtcam.hpp"
#include "exgnet/model.hpp"

namespace exg {

/// d(sum_n scores[n, classes[n]]) / dA for a feature map A[N, E, S], computed
/// through the model head only. Parameter gradients are left untouched.
std::vector<double> cam_gradients(ExgNet& model, const Tensor& feat_map, std::span<const std::size_t> classes);

/// (H - min) / (max - min); all zeros when max == min.
std::vector<double> normalize_cam(std::span<const double> raw);

struct CamBatch {
    std::vector<std::vector<double>> cams;  // one [n_segments] map per record
    std::vector<std::size_t> predicted;
};

/// Gradient-weighted class activation map of the last block for the argmax
/// class: channel mean of A * dy_c/dA, min-max normalized.
CamBatch generate_cam(ExgNet& model, const Tensor& x, bool train = false);

/// Same map built from an existing (taped) feature map with the given target
/// classes. The channel weights are constants, so gradients reach A only and
/// the normalization uses constant min and max.
Tensor training_cam(ExgNet& model, const Tensor& feat_map, std::span<const std::size_t> classes);

struct Alignment {
    double ncc = 0;  // +1 for identical shape
    double l1 = 0;
    double l2 = 0;
    bool degenerate = false;  // one side constant; ncc reported as 0
};

Alignment alignment_metrics(std::span<const double> pred, std::span<const double> gt);

struct CamReport {
    std::string id;
    std::vector<double> pred_cam;
    GtCam gt_cam;
    Alignment alignment;
    std::size_t predicted_class = 0;
    std::size_t true_class = 0;
};

}  // namespace exg
