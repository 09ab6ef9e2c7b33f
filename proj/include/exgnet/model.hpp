#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "exgnet/hrv.hpp"
#include "exgnet/nn/layers.hpp"

namespace exg {

using nn::Tensor;

struct ModelConfig {
    std::size_t n_blocks = 16;
    std::size_t base_channels = 32;
    std::size_t channel_doubling_every = 4;
    std::size_t kernel = 16;
    /// true: blocks 2, 4, 6, ... halve the length. false: every block does.
    bool subsample_every_other_block = true;
    std::size_t attention_heads = 8;
    std::size_t embed_dim = 256;
    double dropout_rate = 0.2;
    std::size_t n_classes = 5;
    std::size_t input_len = 5120;
    std::size_t n_segments = 20;
    std::size_t feature_hidden1 = 64;
    std::size_t feature_hidden2 = 32;
    std::size_t depthwise_kernel = 3;
    /// Block-average factor from the padded record to the model input.
    std::size_t input_decimation = 1;
    /// Start the base and joint classifiers at zero weights. At desk scale a
    /// random head on the GAP embedding produces huge early CE gradients that
    /// swamp the CAM term in Adam's second moment.
    bool zero_init_heads = false;
    std::string preset = "paper";

    static ModelConfig paper(std::size_t n_classes = 5);
    /// 4 blocks of 8/8/16/16 channels on a 320-sample input.
    static ModelConfig desk(std::size_t n_classes = 2);
    static ModelConfig for_preset(const std::string& preset, std::size_t n_classes);

    std::size_t block_channels(std::size_t block) const;
    bool block_subsamples(std::size_t block) const;
    std::size_t subsampling_blocks() const;
    /// Record samples consumed by one model input (input_len * decimation).
    std::size_t padded_record_len() const { return input_len * input_decimation; }

    /// Throws UsageError on any inconsistent field.
    void validate() const;

    std::map<std::string, std::string> to_kv() const;
    /// Overrides fields from `model.*` keys; unknown keys throw.
    void apply_kv(const std::string& key, const std::string& value);
};

/// Splits C into C/4, C/4 and the remainder.
std::array<std::size_t, 3> branch_widths(std::size_t channels);

/// Right-zero-pads (or crops) a preprocessed signal to padded_record_len and
/// block-averages by input_decimation.
std::vector<double> model_input(std::span<const double> signal, const ModelConfig& cfg);

/// Residual multiresolution block: three chained kernel-k convolutions whose
/// outputs are concatenated, then depthwise conv, batch norm, ReLU, dropout,
/// plus a shortcut (max-pooled when subsampling, 1x1-projected when the shape
/// changes).
class MultiresBlock {
public:
    struct Branches {
        Tensor a, b, c;
    };

    MultiresBlock(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t depthwise_kernel,
                  bool subsample, double dropout_rate, std::mt19937_64& rng);

    Tensor forward(const Tensor& x, bool train, std::mt19937_64& rng, Branches* branches = nullptr);
    void collect(nn::NamedArrays& out, const std::string& prefix);

    nn::Conv1d& conv_a() { return conv_a_; }
    nn::Conv1d& conv_b() { return conv_b_; }
    nn::Conv1d& conv_c() { return conv_c_; }
    nn::DepthwiseConv1d& depthwise() { return depthwise_; }
    bool has_projection() const { return projection_.weight.defined(); }

private:
    nn::Conv1d conv_a_, conv_b_, conv_c_;
    nn::DepthwiseConv1d depthwise_;
    nn::BatchNorm1d norm_;
    nn::Conv1d projection_;
    bool subsample_;
    double dropout_rate_;
};

struct BaseOutputs {
    Tensor feat_map;     // [N, embed_dim, n_segments]
    Tensor gap_embed;    // [N, embed_dim]
    Tensor scores_base;  // [N, classes], pre-softmax
    Tensor probs_base;   // [N, classes]
};

struct FeatureOutputs {
    Tensor hidden_h2;    // [N, feature_hidden2]
    Tensor probs_feat;   // [N, classes]
};

struct ForwardOutputs {
    BaseOutputs base;
    FeatureOutputs feature;
    Tensor probs_joint;  // [N, classes]
    bool has_features = false;
};

/// Base network, train-only feature branch and joint head.
class ExgNet {
public:
    ExgNet(ModelConfig cfg, std::uint64_t seed, bool with_feature_branch = true);
    ExgNet(const ExgNet&) = delete;
    ExgNet& operator=(const ExgNet&) = delete;

    const ModelConfig& config() const { return cfg_; }
    bool has_feature_branch() const { return has_features_; }

    /// x[N, 1, input_len] -> feature map A of the last block.
    Tensor features(const Tensor& x, bool train);
    /// Attention, GAP and the base dense head on a feature map.
    BaseOutputs head(const Tensor& feat_map);
    BaseOutputs base_forward(const Tensor& x, bool train);

    /// x_f[N, 17] scaled features.
    FeatureOutputs feature_forward(const Tensor& x_f, bool train);
    Tensor joint_forward(const Tensor& gap_embed, const Tensor& hidden_h2);

    ForwardOutputs forward(const Tensor& x, const Tensor& x_f, bool train);

    nn::NamedArrays named_arrays();
    std::vector<Tensor> parameters();
    std::size_t parameter_count();

    std::vector<MultiresBlock>& blocks() { return blocks_; }
    nn::MultiHeadAttention& attention() { return attention_; }
    nn::Dense& base_dense() { return base_dense_; }
    std::mt19937_64& rng() { return rng_; }

private:
    ModelConfig cfg_;
    bool has_features_;
    std::mt19937_64 rng_;
    std::vector<MultiresBlock> blocks_;
    nn::MultiHeadAttention attention_;
    nn::Dense base_dense_;
    nn::Dense feat_dense1_, feat_dense2_, feat_dense3_;
    nn::Dense joint_dense_;
};

/// Stacks equal-length rows into [N, 1, L].
Tensor batch_signals(std::span<const std::vector<double>> rows);
/// Stacks scaled feature vectors into [N, 17].
Tensor batch_features(std::span<const std::array<double, kFeatureCount>> rows);

}  // namespace exg
