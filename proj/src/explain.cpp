#include "exgnet/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "exgnet/errors.hpp"
#include "exgnet/nn/ops.hpp"

namespace exg {

namespace {

/// Turns off gradient tracking on a set of parameters for its lifetime.
class FreezeParams {
public:
    explicit FreezeParams(std::vector<Tensor> params) : params_(std::move(params)) {
        for (auto& p : params_) p.set_requires_grad(false);
    }
    ~FreezeParams() {
        for (auto& p : params_) p.set_requires_grad(true);
    }
    FreezeParams(const FreezeParams&) = delete;
    FreezeParams& operator=(const FreezeParams&) = delete;

private:
    std::vector<Tensor> params_;
};

std::size_t argmax_row(std::span<const double> row) {
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

std::vector<double> cam_gradients(ExgNet& model, const Tensor& feat_map, std::span<const std::size_t> classes) {
    nn::GradModeGuard recording(true);
    FreezeParams frozen(model.parameters());
    Tensor leaf = feat_map.detach();
    leaf.set_requires_grad(true);
    const auto out = model.head(leaf);
    nn::pick_sum(out.scores_base, classes).backward();
    return std::vector<double>(leaf.grad().begin(), leaf.grad().end());
}

std::vector<double> normalize_cam(std::span<const double> raw) {
    std::vector<double> out(raw.size(), 0.0);
    if (raw.empty()) return out;
    const auto [mn, mx] = std::minmax_element(raw.begin(), raw.end());
    const double range = *mx - *mn;
    if (!(range > 0)) return out;
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - *mn) / range;
    return out;
}

CamBatch generate_cam(ExgNet& model, const Tensor& x, bool train) {
    Tensor feat_map;
    {
        nn::NoGradGuard no_grad;
        feat_map = model.features(x, train);
    }
    const std::size_t n = feat_map.dim(0), e = feat_map.dim(1), s = feat_map.dim(2);

    CamBatch batch;
    {
        nn::NoGradGuard no_grad;
        const auto scores = model.head(feat_map).scores_base;
        const std::size_t c = scores.dim(1);
        for (std::size_t i = 0; i < n; ++i)
            batch.predicted.push_back(argmax_row(scores.data().subspan(i * c, c)));
    }
    const auto grads = cam_gradients(model, feat_map, batch.predicted);
    const auto& a = feat_map.values();
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> raw(s, 0.0);
        for (std::size_t ch = 0; ch < e; ++ch)
            for (std::size_t t = 0; t < s; ++t) {
                const auto idx = (i * e + ch) * s + t;
                raw[t] += a[idx] * grads[idx];
            }
        for (auto& v : raw) v /= static_cast<double>(e);
        batch.cams.push_back(normalize_cam(raw));
    }
    return batch;
}

Tensor training_cam(ExgNet& model, const Tensor& feat_map, std::span<const std::size_t> classes) {
    const auto weights = cam_gradients(model, feat_map, classes);
    const Tensor raw = nn::channel_mean(nn::mul_const(feat_map, weights));  // [N, S]
    const std::size_t n = raw.dim(0), s = raw.dim(1);
    std::vector<double> shift(n), divisor(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = raw.data().subspan(i * s, s);
        const auto [mn, mx] = std::minmax_element(row.begin(), row.end());
        shift[i] = *mn;
        divisor[i] = *mx > *mn ? *mx - *mn : 1.0;
    }
    return nn::rowwise_affine_const(raw, shift, divisor);
}

Alignment alignment_metrics(std::span<const double> pred, std::span<const double> gt) {
    if (pred.size() != gt.size() || pred.empty())
        throw ShapeError("alignment_metrics: lengths " + std::to_string(pred.size()) + " and " + std::to_string(gt.size()));
    const double m = static_cast<double>(pred.size());
    Alignment out;
    double abs_sum = 0, sq_sum = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - gt[i];
        abs_sum += std::abs(d);
        sq_sum += d * d;
    }
    out.l1 = abs_sum / m;
    out.l2 = std::sqrt(sq_sum / m);

    const double mu_a = std::accumulate(pred.begin(), pred.end(), 0.0) / m;
    const double mu_b = std::accumulate(gt.begin(), gt.end(), 0.0) / m;
    double saa = 0, sbb = 0, sab = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double da = pred[i] - mu_a, db = gt[i] - mu_b;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (!(saa > 0) || !(sbb > 0)) {
        out.degenerate = true;
        out.ncc = 0;
        return out;
    }
    out.ncc = std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
    return out;
}

}  // namespace exg
