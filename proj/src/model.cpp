#include "exgnet/model.hpp"

#include <algorithm>

#include "exgnet/errors.hpp"
#include "exgnet/text.hpp"

namespace exg {

ModelConfig ModelConfig::paper(std::size_t n_classes) {
    ModelConfig cfg;
    cfg.n_classes = n_classes;
    return cfg;
}

ModelConfig ModelConfig::desk(std::size_t n_classes) {
    ModelConfig cfg;
    cfg.n_blocks = 4;
    cfg.base_channels = 8;
    cfg.channel_doubling_every = 2;
    cfg.subsample_every_other_block = false;
    cfg.attention_heads = 2;
    cfg.embed_dim = 16;
    cfg.input_len = 320;
    cfg.input_decimation = 16;
    cfg.zero_init_heads = true;
    cfg.n_classes = n_classes;
    cfg.preset = "desk";
    return cfg;
}

ModelConfig ModelConfig::for_preset(const std::string& preset, std::size_t n_classes) {
    if (preset == "paper") return paper(n_classes);
    if (preset == "desk") return desk(n_classes);
    throw UsageError("unknown preset '" + preset + "' (expected paper or desk)");
}

std::size_t ModelConfig::block_channels(std::size_t block) const {
    return base_channels << (block / channel_doubling_every);
}

bool ModelConfig::block_subsamples(std::size_t block) const {
    return subsample_every_other_block ? block % 2 == 1 : true;
}

std::size_t ModelConfig::subsampling_blocks() const {
    std::size_t count = 0;
    for (std::size_t b = 0; b < n_blocks; ++b) count += block_subsamples(b) ? 1 : 0;
    return count;
}

void ModelConfig::validate() const {
    if (n_blocks < 1) throw UsageError("model.n_blocks must be >= 1");
    if (base_channels < 4) throw UsageError("model.base_channels must be >= 4");
    if (channel_doubling_every < 1) throw UsageError("model.channel_doubling_every must be >= 1");
    if (kernel < 1) throw UsageError("model.kernel must be >= 1");
    if (n_classes < 2) throw UsageError("model.n_classes must be >= 2");
    if (input_decimation < 1) throw UsageError("model.input_decimation must be >= 1");
    if (depthwise_kernel < 1) throw UsageError("model.depthwise_kernel must be >= 1");
    if (dropout_rate < 0 || dropout_rate >= 1) throw UsageError("model.dropout_rate must lie in [0, 1)");
    const std::size_t halvings = subsampling_blocks();
    if (halvings >= 64 || (input_len >> halvings) << halvings != input_len || (input_len >> halvings) != n_segments)
        throw UsageError("model.input_len " + std::to_string(input_len) + " / 2^" + std::to_string(halvings) +
                         " must equal model.n_segments " + std::to_string(n_segments));
    if (block_channels(n_blocks - 1) != embed_dim)
        throw UsageError("model.embed_dim " + std::to_string(embed_dim) + " must equal final block channels " +
                         std::to_string(block_channels(n_blocks - 1)));
    if (attention_heads == 0 || embed_dim % attention_heads != 0)
        throw UsageError("model.embed_dim must be divisible by model.attention_heads");
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
    return {
        {"model.n_blocks", std::to_string(n_blocks)},
        {"model.base_channels", std::to_string(base_channels)},
        {"model.channel_doubling_every", std::to_string(channel_doubling_every)},
        {"model.kernel", std::to_string(kernel)},
        {"model.subsample_every_other_block", subsample_every_other_block ? "true" : "false"},
        {"model.attention_heads", std::to_string(attention_heads)},
        {"model.embed_dim", std::to_string(embed_dim)},
        {"model.dropout_rate", format_double(dropout_rate)},
        {"model.n_classes", std::to_string(n_classes)},
        {"model.input_len", std::to_string(input_len)},
        {"model.n_segments", std::to_string(n_segments)},
        {"model.feature_hidden1", std::to_string(feature_hidden1)},
        {"model.feature_hidden2", std::to_string(feature_hidden2)},
        {"model.depthwise_kernel", std::to_string(depthwise_kernel)},
        {"model.input_decimation", std::to_string(input_decimation)},
        {"model.zero_init_heads", zero_init_heads ? "true" : "false"},
        {"model.preset", preset},
    };
}

void ModelConfig::apply_kv(const std::string& key, const std::string& value) {
    auto as_size = [&](std::size_t& field) {
        auto v = parse_int(value);
        if (!v || *v < 0) throw UsageError("bad integer for " + key + ": '" + value + "'");
        field = static_cast<std::size_t>(*v);
    };
    auto as_bool = [&](bool& field) {
        if (value != "true" && value != "false") throw UsageError("bad boolean for " + key + ": '" + value + "'");
        field = value == "true";
    };
    if (key == "model.n_blocks") as_size(n_blocks);
    else if (key == "model.base_channels") as_size(base_channels);
    else if (key == "model.channel_doubling_every") as_size(channel_doubling_every);
    else if (key == "model.kernel") as_size(kernel);
    else if (key == "model.subsample_every_other_block") as_bool(subsample_every_other_block);
    else if (key == "model.attention_heads") as_size(attention_heads);
    else if (key == "model.embed_dim") as_size(embed_dim);
    else if (key == "model.dropout_rate") {
        auto v = parse_double(value);
        if (!v) throw UsageError("bad number for " + key + ": '" + value + "'");
        dropout_rate = *v;
    } else if (key == "model.n_classes") as_size(n_classes);
    else if (key == "model.input_len") as_size(input_len);
    else if (key == "model.n_segments") as_size(n_segments);
    else if (key == "model.feature_hidden1") as_size(feature_hidden1);
    else if (key == "model.feature_hidden2") as_size(feature_hidden2);
    else if (key == "model.depthwise_kernel") as_size(depthwise_kernel);
    else if (key == "model.input_decimation") as_size(input_decimation);
    else if (key == "model.zero_init_heads") as_bool(zero_init_heads);
    else if (key == "model.preset") preset = value;
    else throw UsageError("unknown config key '" + key + "'");
}

std::array<std::size_t, 3> branch_widths(std::size_t channels) {
    const std::size_t quarter = channels / 4;
    return {quarter, quarter, channels - 2 * quarter};
}

std::vector<double> model_input(std::span<const double> signal, const ModelConfig& cfg) {
    const std::size_t padded = cfg.padded_record_len();
    std::vector<double> out(cfg.input_len, 0.0);
    const std::size_t usable = std::min(signal.size(), padded);
    for (std::size_t i = 0; i < usable; ++i) out[i / cfg.input_decimation] += signal[i];
    if (cfg.input_decimation > 1)
        for (auto& v : out) v /= static_cast<double>(cfg.input_decimation);
    return out;
}

MultiresBlock::MultiresBlock(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t depthwise_kernel,
                             bool subsample, double dropout_rate, std::mt19937_64& rng)
    : subsample_(subsample), dropout_rate_(dropout_rate) {
    const auto widths = branch_widths(c_out);
    if (widths[0] == 0) throw UsageError("block channels " + std::to_string(c_out) + " too small to split in branches");
    conv_a_ = nn::Conv1d(c_in, widths[0], kernel, subsample ? 2 : 1, rng);
    conv_b_ = nn::Conv1d(widths[0], widths[1], kernel, 1, rng);
    conv_c_ = nn::Conv1d(widths[1], widths[2], kernel, 1, rng);
    depthwise_ = nn::DepthwiseConv1d(c_out, depthwise_kernel, rng);
    norm_ = nn::BatchNorm1d(c_out);
    if (c_in != c_out || subsample) projection_ = nn::Conv1d(c_in, c_out, 1, 1, rng);
}

Tensor MultiresBlock::forward(const Tensor& x, bool train, std::mt19937_64& rng, Branches* branches) {
    const Tensor a = conv_a_(x);
    const Tensor b = conv_b_(a);
    const Tensor c = conv_c_(b);
    if (branches) *branches = {a, b, c};
    Tensor main = nn::concat({a, b, c});
    main = depthwise_(main);
    main = norm_(main, train);
    main = nn::relu(main);
    main = nn::dropout(main, dropout_rate_, train, rng);
    Tensor shortcut = subsample_ ? nn::maxpool1d(x) : x;
    if (has_projection()) shortcut = projection_(shortcut);
    return nn::add(main, shortcut);
}

void MultiresBlock::collect(nn::NamedArrays& out, const std::string& prefix) {
    conv_a_.collect(out, prefix + ".conv_a");
    conv_b_.collect(out, prefix + ".conv_b");
    conv_c_.collect(out, prefix + ".conv_c");
    depthwise_.collect(out, prefix + ".depthwise");
    norm_.collect(out, prefix + ".norm");
    if (has_projection()) projection_.collect(out, prefix + ".projection");
}

ExgNet::ExgNet(ModelConfig cfg, std::uint64_t seed, bool with_feature_branch)
    : cfg_(std::move(cfg)), has_features_(with_feature_branch), rng_(seed) {
    cfg_.validate();
    std::size_t c_in = 1;
    blocks_.reserve(cfg_.n_blocks);
    for (std::size_t b = 0; b < cfg_.n_blocks; ++b) {
        const std::size_t c_out = cfg_.block_channels(b);
        blocks_.emplace_back(c_in, c_out, cfg_.kernel, cfg_.depthwise_kernel, cfg_.block_subsamples(b),
                             cfg_.dropout_rate, rng_);
        c_in = c_out;
    }
    attention_ = nn::MultiHeadAttention(cfg_.embed_dim, cfg_.attention_heads, rng_);
    base_dense_ = nn::Dense(cfg_.embed_dim, cfg_.n_classes, rng_);
    if (has_features_) {
        feat_dense1_ = nn::Dense(kFeatureCount, cfg_.feature_hidden1, rng_);
        feat_dense2_ = nn::Dense(cfg_.feature_hidden1, cfg_.feature_hidden2, rng_);
        feat_dense3_ = nn::Dense(cfg_.feature_hidden2, cfg_.n_classes, rng_);
        joint_dense_ = nn::Dense(cfg_.embed_dim + cfg_.feature_hidden2, cfg_.n_classes, rng_);
    }
    if (cfg_.zero_init_heads) {
        std::fill(base_dense_.weight.data().begin(), base_dense_.weight.data().end(), 0.0);
        if (has_features_) std::fill(joint_dense_.weight.data().begin(), joint_dense_.weight.data().end(), 0.0);
    }
}

Tensor ExgNet::features(const Tensor& x, bool train) {
    if (x.rank() != 3 || x.dim(1) != 1 || x.dim(2) != cfg_.input_len)
        throw ShapeError("model input must be [N, 1, " + std::to_string(cfg_.input_len) + "], got " +
                         nn::shape_str(x.shape()));
    Tensor h = x;
    for (auto& block : blocks_) h = block.forward(h, train, rng_);
    return h;
}

BaseOutputs ExgNet::head(const Tensor& feat_map) {
    BaseOutputs out;
    out.feat_map = feat_map;
    const Tensor attended = attention_(nn::transpose12(feat_map));  // [N, S, E]
    out.gap_embed = nn::global_avg_pool(nn::transpose12(attended));
    out.scores_base = base_dense_(out.gap_embed);
    out.probs_base = nn::softmax(out.scores_base);
    return out;
}

BaseOutputs ExgNet::base_forward(const Tensor& x, bool train) { return head(features(x, train)); }

FeatureOutputs ExgNet::feature_forward(const Tensor& x_f, bool train) {
    (void)train;
    if (!has_features_) throw UsageError("model was built without the feature branch");
    if (x_f.rank() != 2 || x_f.dim(1) != kFeatureCount)
        throw ShapeError("feature input must be [N, 17], got " + nn::shape_str(x_f.shape()));
    FeatureOutputs out;
    const Tensor h1 = nn::relu(feat_dense1_(x_f));
    out.hidden_h2 = nn::relu(feat_dense2_(h1));
    out.probs_feat = nn::softmax(feat_dense3_(out.hidden_h2));
    return out;
}

Tensor ExgNet::joint_forward(const Tensor& gap_embed, const Tensor& hidden_h2) {
    if (!has_features_) throw UsageError("model was built without the joint head");
    return nn::softmax(joint_dense_(nn::concat({gap_embed, hidden_h2})));
}

ForwardOutputs ExgNet::forward(const Tensor& x, const Tensor& x_f, bool train) {
    ForwardOutputs out;
    out.base = base_forward(x, train);
    if (x_f.defined()) {
        out.feature = feature_forward(x_f, train);
        out.probs_joint = joint_forward(out.base.gap_embed, out.feature.hidden_h2);
        out.has_features = true;
    }
    return out;
}

nn::NamedArrays ExgNet::named_arrays() {
    nn::NamedArrays out;
    for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].collect(out, "base.block" + std::to_string(b));
    attention_.collect(out, "base.attention");
    base_dense_.collect(out, "base.dense");
    if (has_features_) {
        feat_dense1_.collect(out, "feature.dense1");
        feat_dense2_.collect(out, "feature.dense2");
        feat_dense3_.collect(out, "feature.dense3");
        joint_dense_.collect(out, "joint.dense");
    }
    return out;
}

std::vector<Tensor> ExgNet::parameters() { return nn::trainable(named_arrays()); }

std::size_t ExgNet::parameter_count() {
    std::size_t total = 0;
    for (const auto& p : parameters()) total += p.numel();
    return total;
}

Tensor batch_signals(std::span<const std::vector<double>> rows) {
    if (rows.empty()) throw ShapeError("empty batch");
    const std::size_t len = rows.front().size();
    std::vector<double> values;
    values.reserve(rows.size() * len);
    for (const auto& r : rows) {
        if (r.size() != len) throw ShapeError("batch rows differ in length");
        values.insert(values.end(), r.begin(), r.end());
    }
    return Tensor::from({rows.size(), 1, len}, std::move(values));
}

Tensor batch_features(std::span<const std::array<double, kFeatureCount>> rows) {
    if (rows.empty()) throw ShapeError("empty batch");
    std::vector<double> values;
    values.reserve(rows.size() * kFeatureCount);
    for (const auto& r : rows) values.insert(values.end(), r.begin(), r.end());
    return Tensor::from({rows.size(), kFeatureCount}, std::move(values));
}

}  // namespace exg
