#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "exgnet/errors.hpp"
#include "exgnet/model.hpp"
#include "exgnet/nn/checkpoint.hpp"
#include "testkit.hpp"

using namespace exg;

namespace {

// Width of the input region with nonzero gradient for one output sample.
std::size_t support(Tensor x, const Tensor& out, std::size_t position) {
    const std::size_t c = out.dim(1), l = out.dim(2);
    std::vector<double> pick(out.numel(), 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) pick[ch * l + position] = 1.0;
    x.zero_grad();
    nn::sum(nn::mul_const(out, pick)).backward();
    const auto g = x.grad();
    std::size_t first = g.size(), last = 0;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (g[i] != 0.0) {
            first = std::min(first, i);
            last = i;
        }
    return first > last ? 0 : last - first + 1;
}

std::vector<Tensor> params_with_prefix(ExgNet& model, const std::string& prefix) {
    std::vector<Tensor> out;
    for (const auto& a : model.named_arrays())
        if (a.param.defined() && a.name.rfind(prefix, 0) == 0) out.push_back(a.param);
    return out;
}

}  // namespace

TEST_CASE("branch widths") {
    CHECK(branch_widths(32) == std::array<std::size_t, 3>{8, 8, 16});
    CHECK(branch_widths(256) == std::array<std::size_t, 3>{64, 64, 128});
    CHECK(branch_widths(10) == std::array<std::size_t, 3>{2, 2, 6});
}

TEST_CASE("receptive fields of the three branches") {
    std::mt19937_64 rng(1);
    MultiresBlock block(1, 32, 16, 3, false, 0.0, rng);
    const Tensor x = testkit::leaf({1, 1, 200}, rng);
    MultiresBlock::Branches br;
    block.forward(x, false, rng, &br);
    CHECK(support(x, br.a, 100) == 16);
    CHECK(support(x, br.b, 100) == 31);
    CHECK(support(x, br.c, 100) == 46);
}

TEST_CASE("subsampling block halves the length") {
    std::mt19937_64 rng(2);
    MultiresBlock block(4, 8, 16, 3, true, 0.2, rng);
    const auto y = block.forward(testkit::leaf({2, 4, 40}, rng), true, rng);
    CHECK(y.shape() == nn::Shape{2, 8, 20});
    MultiresBlock keep(8, 8, 16, 3, false, 0.2, rng);
    CHECK(keep.forward(y, false, rng).shape() == nn::Shape{2, 8, 20});
}

TEST_CASE("zero main path leaves only the shortcut") {
    std::mt19937_64 rng(3);
    auto zero_main = [](MultiresBlock& b) {
        for (auto* conv : {&b.conv_a(), &b.conv_b(), &b.conv_c()}) {
            std::fill(conv->weight.data().begin(), conv->weight.data().end(), 0.0);
            std::fill(conv->bias.data().begin(), conv->bias.data().end(), 0.0);
        }
        std::fill(b.depthwise().weight.data().begin(), b.depthwise().weight.data().end(), 0.0);
    };

    MultiresBlock same(8, 8, 16, 3, false, 0.2, rng);
    zero_main(same);
    const Tensor x = testkit::leaf({2, 8, 30}, rng);
    CHECK(same.forward(x, false, rng).values() == x.values());

    MultiresBlock projected(4, 8, 16, 3, true, 0.2, rng);
    zero_main(projected);
    REQUIRE(projected.has_projection());
    const Tensor x2 = testkit::leaf({2, 4, 30}, rng);
    nn::NamedArrays arrays;
    projected.collect(arrays, "b");
    Tensor pw, pb;
    for (const auto& a : arrays) {
        if (a.name == "b.projection.weight") pw = a.param;
        if (a.name == "b.projection.bias") pb = a.param;
    }
    REQUIRE(pw.defined());
    const auto expected = nn::conv1d(nn::maxpool1d(x2), pw, pb);
    CHECK(projected.forward(x2, false, rng).values() == expected.values());
}

TEST_CASE("paper preset shapes") {
    const auto cfg = ModelConfig::paper(5);
    CHECK(cfg.input_len == 5120);
    CHECK(cfg.subsampling_blocks() == 8);
    CHECK(cfg.block_channels(0) == 32);
    CHECK(cfg.block_channels(4) == 64);
    CHECK(cfg.block_channels(15) == 256);
    ExgNet model(cfg, 1);
    // frozen: a change here means the architecture changed
    CHECK(model.parameter_count() == 2762415);

    std::mt19937_64 rng(4);
    nn::NoGradGuard no_grad;
    const auto out = model.base_forward(Tensor::from({1, 1, 5120}, testkit::randn(5120, rng)), false);
    CHECK(out.feat_map.shape() == nn::Shape{1, 256, 20});
    CHECK(out.gap_embed.shape() == nn::Shape{1, 256});
    CHECK(out.probs_base.shape() == nn::Shape{1, 5});
    double total = 0;
    for (double p : out.probs_base.values()) total += p;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("desk preset") {
    const auto cfg = ModelConfig::desk(2);
    CHECK((cfg.input_len >> cfg.subsampling_blocks()) == cfg.n_segments);
    CHECK(cfg.padded_record_len() == 5120);
    ExgNet a(cfg, 7), b(cfg, 7);
    CHECK(a.parameter_count() == b.parameter_count());
    CHECK(a.parameter_count() == 9102);
    ExgNet base_only(cfg, 7, false);
    CHECK(base_only.parameter_count() < a.parameter_count());
}

TEST_CASE("zero-initialised heads") {
    auto cfg = ModelConfig::desk(3);
    REQUIRE(cfg.zero_init_heads);
    ExgNet model(cfg, 7);
    for (double w : model.base_dense().weight.values()) CHECK(w == 0.0);
    std::mt19937_64 rng(9);
    nn::NoGradGuard no_grad;
    const auto out = model.forward(Tensor::from({2, 1, 320}, testkit::randn(640, rng)),
                                   Tensor::from({2, 17}, testkit::randn(34, rng)), false);
    // biases start at zero too, so both heads begin at the uniform prediction
    for (double p : out.base.probs_base.values()) CHECK(p == doctest::Approx(1.0 / 3));
    for (double p : out.probs_joint.values()) CHECK(p == doctest::Approx(1.0 / 3));

    // only the head weights change; every other draw is the same
    cfg.zero_init_heads = false;
    ExgNet random(cfg, 7);
    const auto a = model.named_arrays(), b = random.named_arrays();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].name == "base.dense.weight" || a[i].name == "joint.dense.weight") continue;
        CHECK(*a[i].values == *b[i].values);
    }
}

TEST_CASE("config validation") {
    auto cfg = ModelConfig::desk(2);
    cfg.input_len = 300;
    CHECK_THROWS_AS(cfg.validate(), UsageError);
    cfg = ModelConfig::desk(2);
    cfg.embed_dim = 8;
    CHECK_THROWS_AS(cfg.validate(), UsageError);
    cfg = ModelConfig::desk(2);
    cfg.dropout_rate = 1.0;
    CHECK_THROWS_AS(cfg.validate(), UsageError);
    CHECK_THROWS_AS(ModelConfig::for_preset("huge", 2), UsageError);

    cfg = ModelConfig::desk(3);
    auto copy = ModelConfig::paper(5);
    for (const auto& [k, v] : cfg.to_kv()) copy.apply_kv(k, v);
    CHECK(copy.to_kv() == cfg.to_kv());
    CHECK_THROWS_AS(copy.apply_kv("model.colour", "red"), UsageError);
}

TEST_CASE("model input pads and block-averages") {
    auto cfg = ModelConfig::desk(2);
    std::vector<double> sig(5000);
    for (std::size_t i = 0; i < sig.size(); ++i) sig[i] = static_cast<double>(i);
    const auto x = model_input(sig, cfg);
    REQUIRE(x.size() == 320);
    CHECK(x[0] == doctest::Approx(7.5));
    CHECK(x[1] == doctest::Approx(23.5));
    // last block holds 4992..4999 and eight zeros
    CHECK(x[312] == doctest::Approx((4992 + 4999) * 4.0 / 16.0));
    CHECK(x[319] == 0.0);

    const auto paper = model_input(sig, ModelConfig::paper(5));
    REQUIRE(paper.size() == 5120);
    CHECK(paper[4999] == 4999.0);
    CHECK(paper[5000] == 0.0);
}

TEST_CASE("forward is deterministic in eval mode and checks shapes") {
    std::mt19937_64 rng(5);
    ExgNet model(ModelConfig::desk(2), 11);
    const Tensor x = Tensor::from({3, 1, 320}, testkit::randn(960, rng));
    nn::NoGradGuard no_grad;
    const auto a = model.base_forward(x, false), b = model.base_forward(x, false);
    CHECK(a.scores_base.values() == b.scores_base.values());
    CHECK(a.feat_map.shape() == nn::Shape{3, 16, 20});
    CHECK_THROWS_AS(model.base_forward(Tensor::zeros({3, 1, 321}), false), ShapeError);
    CHECK_THROWS_AS(model.feature_forward(Tensor::zeros({3, 16}), false), ShapeError);
}

TEST_CASE("feature branch and joint head") {
    std::mt19937_64 rng(6);
    ExgNet model(ModelConfig::desk(2), 12);
    {
        nn::NoGradGuard no_grad;
        const auto out = model.feature_forward(Tensor::zeros({2, 17}), false);
        for (double v : out.hidden_h2.values()) CHECK(v == 0.0);
        CHECK(out.hidden_h2.shape() == nn::Shape{2, 32});
        const auto joint = model.joint_forward(Tensor::zeros({2, 16}), out.hidden_h2);
        CHECK(joint.values()[0] + joint.values()[1] == doctest::Approx(1.0));
    }

    const Tensor xf = testkit::leaf({3, 17}, rng);
    const Tensor embed = testkit::leaf({3, 16}, rng);
    const std::vector<double> r = testkit::randn(6, rng);
    auto feature_params = params_with_prefix(model, "feature.");
    feature_params.push_back(xf);
    const auto f = testkit::grad_check(
        [&] { return nn::sum(nn::mul_const(model.feature_forward(xf, true).probs_feat, r)); }, feature_params);
    CHECK(f.worst < 1e-5);

    auto joint_params = params_with_prefix(model, "joint.");
    joint_params.push_back(embed);
    joint_params.push_back(xf);
    const auto j = testkit::grad_check(
        [&] {
            return nn::sum(nn::mul_const(model.joint_forward(embed, model.feature_forward(xf, true).hidden_h2), r));
        },
        joint_params);
    CHECK(j.worst < 1e-5);

    ExgNet base_only(ModelConfig::desk(2), 12, false);
    CHECK_THROWS_AS(base_only.feature_forward(xf, false), UsageError);
}

TEST_CASE("base network gradient check") {
    std::mt19937_64 rng(7);
    auto cfg = ModelConfig::desk(2);
    cfg.dropout_rate = 0.0;
    cfg.zero_init_heads = false;
    ExgNet model(cfg, 13);
    const Tensor x = testkit::leaf({2, 1, 320}, rng);
    const std::vector<double> r = testkit::randn(4, rng);
    // eval mode keeps batch statistics out of the picture; the looser bound
    // absorbs differences that straddle ReLU and max-pool kinks
    const auto g = testkit::grad_check([&] { return nn::sum(nn::mul_const(model.base_forward(x, false).scores_base, r)); },
                                       {x, model.base_dense().weight, model.blocks().back().conv_c().weight});
    CHECK(g.worst < 1e-4);
}

TEST_CASE("base-only model reproduces base scores from a full checkpoint") {
    std::mt19937_64 rng(8);
    ExgNet full(ModelConfig::desk(2), 14);
    // move the running statistics away from their initial values
    for (int i = 0; i < 3; ++i) full.base_forward(Tensor::from({4, 1, 320}, testkit::randn(1280, rng)), true);
    const auto dir = testkit::temp_dir("model_ckpt");
    nn::save_checkpoint(dir, nn::snapshot(full.named_arrays()));
    const auto state = nn::load_checkpoint(dir);

    ExgNet reloaded(ModelConfig::desk(2), 99);
    nn::restore(reloaded.named_arrays(), state);
    ExgNet base_only(ModelConfig::desk(2), 98, false);
    CHECK_THROWS_AS(nn::restore(base_only.named_arrays(), state), IntegrityError);
    nn::restore(base_only.named_arrays(), state, true);

    const Tensor x = Tensor::from({3, 1, 320}, testkit::randn(960, rng));
    nn::NoGradGuard no_grad;
    const auto a = reloaded.forward(x, Tensor::from({3, 17}, testkit::randn(51, rng)), false);
    const auto b = base_only.base_forward(x, false);
    CHECK(a.base.scores_base.values() == b.scores_base.values());
}
