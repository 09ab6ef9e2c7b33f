#pragma once

#include <random>
#include <string>
#include <vector>

#include "exgnet/nn/ops.hpp"
#include "exgnet/nn/tensor.hpp"

namespace exg::nn {

/// A named array that belongs in a checkpoint. Trainable entries carry the
/// parameter tensor; running statistics only carry their storage.
struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double>* values = nullptr;
    Tensor param;  // defined when trainable
};

using NamedArrays = std::vector<NamedArray>;

std::vector<Tensor> trainable(const NamedArrays& arrays);

struct Conv1d {
    Tensor weight;  // [C_out, C_in, K]
    Tensor bias;    // [C_out]
    std::size_t stride = 1;

    Conv1d() = default;
    /// He-normal weights, zero bias.
    Conv1d(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride, std::mt19937_64& rng);
    Tensor operator()(const Tensor& x) const { return conv1d(x, weight, bias, stride); }
    void collect(NamedArrays& out, const std::string& prefix);
};

struct DepthwiseConv1d {
    Tensor weight;  // [C, K]
    Tensor bias;    // [C]

    DepthwiseConv1d() = default;
    DepthwiseConv1d(std::size_t channels, std::size_t kernel, std::mt19937_64& rng);
    Tensor operator()(const Tensor& x) const { return depthwise_conv1d(x, weight, bias); }
    void collect(NamedArrays& out, const std::string& prefix);
};

struct BatchNorm1d {
    Tensor gamma, beta;
    BatchNormState state;

    BatchNorm1d() = default;
    explicit BatchNorm1d(std::size_t channels);
    Tensor operator()(const Tensor& x, bool train) { return batchnorm1d(x, gamma, beta, state, train); }
    void collect(NamedArrays& out, const std::string& prefix);
};

struct Dense {
    Tensor weight;  // [U, F]
    Tensor bias;    // [U]

    Dense() = default;
    /// Glorot-uniform weights, zero bias.
    Dense(std::size_t in, std::size_t out, std::mt19937_64& rng);
    Tensor operator()(const Tensor& x) const { return dense(x, weight, bias); }
    void collect(NamedArrays& out, const std::string& prefix);
};

struct MultiHeadAttention {
    AttentionParams params;
    std::size_t heads = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(std::size_t dim, std::size_t heads, std::mt19937_64& rng);
    Tensor operator()(const Tensor& x, std::vector<double>* weights_out = nullptr) const {
        return multi_head_attention(x, params, heads, weights_out);
    }
    void collect(NamedArrays& out, const std::string& prefix);
};

}  // namespace exg::nn
