#include "exgnet/nn/layers.hpp"

#include <cmath>

#include "exgnet/errors.hpp"

namespace exg::nn {

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = dist(rng);
    return Tensor::from(std::move(shape), std::move(values), true);
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = dist(rng);
    return Tensor::from(std::move(shape), std::move(values), true);
}

void add_param(NamedArrays& out, const std::string& name, Tensor& t) {
    out.push_back({name, t.shape(), &t.node()->value, t});
}

}  // namespace

std::vector<Tensor> trainable(const NamedArrays& arrays) {
    std::vector<Tensor> out;
    for (const auto& a : arrays)
        if (a.param.defined()) out.push_back(a.param);
    return out;
}

Conv1d::Conv1d(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride_, std::mt19937_64& rng)
    : weight(he_normal({c_out, c_in, kernel}, c_in * kernel, rng)),
      bias(Tensor::zeros({c_out}, true)),
      stride(stride_) {}

void Conv1d::collect(NamedArrays& out, const std::string& prefix) {
    add_param(out, prefix + ".weight", weight);
    add_param(out, prefix + ".bias", bias);
}

DepthwiseConv1d::DepthwiseConv1d(std::size_t channels, std::size_t kernel, std::mt19937_64& rng)
    : weight(he_normal({channels, kernel}, kernel, rng)), bias(Tensor::zeros({channels}, true)) {}

void DepthwiseConv1d::collect(NamedArrays& out, const std::string& prefix) {
    add_param(out, prefix + ".weight", weight);
    add_param(out, prefix + ".bias", bias);
}

BatchNorm1d::BatchNorm1d(std::size_t channels)
    : gamma(Tensor::full({channels}, 1.0, true)), beta(Tensor::zeros({channels}, true)) {
    state.running_mean.assign(channels, 0.0);
    state.running_var.assign(channels, 1.0);
}

void BatchNorm1d::collect(NamedArrays& out, const std::string& prefix) {
    add_param(out, prefix + ".gamma", gamma);
    add_param(out, prefix + ".beta", beta);
    out.push_back({prefix + ".running_mean", {state.running_mean.size()}, &state.running_mean, {}});
    out.push_back({prefix + ".running_var", {state.running_var.size()}, &state.running_var, {}});
}

Dense::Dense(std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight(glorot_uniform({out, in}, in, out, rng)), bias(Tensor::zeros({out}, true)) {}

void Dense::collect(NamedArrays& out, const std::string& prefix) {
    add_param(out, prefix + ".weight", weight);
    add_param(out, prefix + ".bias", bias);
}

MultiHeadAttention::MultiHeadAttention(std::size_t dim, std::size_t heads_, std::mt19937_64& rng) : heads(heads_) {
    if (heads == 0 || dim % heads != 0)
        throw UsageError("attention embed dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
                         " heads");
    params.wq = glorot_uniform({dim, dim}, dim, dim, rng);
    params.wk = glorot_uniform({dim, dim}, dim, dim, rng);
    params.wv = glorot_uniform({dim, dim}, dim, dim, rng);
    params.wo = glorot_uniform({dim, dim}, dim, dim, rng);
    params.bq = Tensor::zeros({dim}, true);
    params.bk = Tensor::zeros({dim}, true);
    params.bv = Tensor::zeros({dim}, true);
    params.bo = Tensor::zeros({dim}, true);
}

void MultiHeadAttention::collect(NamedArrays& out, const std::string& prefix) {
    add_param(out, prefix + ".wq", params.wq);
    add_param(out, prefix + ".bq", params.bq);
    add_param(out, prefix + ".wk", params.wk);
    add_param(out, prefix + ".bk", params.bk);
    add_param(out, prefix + ".wv", params.wv);
    add_param(out, prefix + ".bv", params.bv);
    add_param(out, prefix + ".wo", params.wo);
    add_param(out, prefix + ".bo", params.bo);
}

}  // namespace exg::nn
