#pragma once

#include <random>
#include <span>
#include <vector>

#include "exgnet/nn/tensor.hpp"

namespace exg::nn {

/// Cross-correlation of x[N, C_in, L] with w[C_out, C_in, K] plus b[C_out]
/// (b may be undefined). Zero "same" padding: total pad
/// max((L_out - 1) * stride + K - L, 0) split with the smaller half on the
/// left; L_out = ceil(L / stride).
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride = 1);

/// Per-channel convolution of x[N, C, L] with w[C, K] plus b[C], stride 1.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, const Tensor& b);

/// Running statistics owned by a batch-norm layer; not part of the tape.
struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.9;
    double eps = 1e-5;
};

/// Normalizes x[N, C, L] (or x[N, C]) per channel. Training mode uses batch
/// statistics and updates `state` as running = momentum*running +
/// (1-momentum)*batch; eval mode uses the running statistics.
Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool train);

Tensor relu(const Tensor& x);

/// Window 2, stride 2 over the last axis; an odd tail forms its own window.
Tensor maxpool1d(const Tensor& x);

/// Inverted dropout: zeroes with probability `rate` and scales survivors by
/// 1/(1-rate) in training, identity otherwise.
Tensor dropout(const Tensor& x, double rate, bool train, std::mt19937_64& rng);

/// x[N, F] times w[U, F]^T plus b[U].
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);

/// Row-wise softmax of x[N, C].
Tensor softmax(const Tensor& x);

/// x[N, C, L] -> [N, C].
Tensor global_avg_pool(const Tensor& x);

/// Concatenation along axis 1 of tensors sharing all other axes.
Tensor concat(const std::vector<Tensor>& parts);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// [N, A, B] -> [N, B, A].
Tensor transpose12(const Tensor& x);

/// [N, C, L] -> [N, L], mean over channels.
Tensor channel_mean(const Tensor& x);

/// Sum over n of x[n, index[n]] for x[N, C].
Tensor pick_sum(const Tensor& x, std::span<const std::size_t> index);

/// Elementwise x times a constant of the same shape (no gradient to the constant).
Tensor mul_const(const Tensor& x, std::span<const double> factor);

/// Row-wise (x[n, :] - shift[n]) / divisor[n] with constant shift and divisor.
Tensor rowwise_affine_const(const Tensor& x, std::span<const double> shift, std::span<const double> divisor);

/// Weighted sum of scalar tensors.
Tensor weighted_sum(const std::vector<Tensor>& terms, std::span<const double> weights);

struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // w*: [D, D], b*: [D]
};

/// Unmasked scaled dot-product self-attention over x[N, L, D] with `heads`
/// heads of width D/heads, followed by the output projection. When
/// `weights_out` is given it receives the attention weights [N, heads, L, L].
Tensor multi_head_attention(const Tensor& x, const AttentionParams& p, std::size_t heads,
                            std::vector<double>* weights_out = nullptr);

inline constexpr double kProbFloor = 1e-12;

/// Mean over contributing rows of -log(max(probs[n, label[n]], 1e-12)).
/// `row_weight`, when non-empty, scales each row; the mean divides by the
/// sum of weights.
Tensor cross_entropy(const Tensor& probs, std::span<const std::size_t> labels,
                     std::span<const double> row_weight = {});

inline constexpr double kNccEps = 1e-8;

/// -(1/M) sum_j zA_j zB_j per row, z scored with population std plus eps,
/// averaged over rows with nonzero weight. Gradient flows to `pred` only.
Tensor ncc_loss(const Tensor& pred, const Tensor& target, std::span<const double> row_weight = {});

}  // namespace exg::nn
