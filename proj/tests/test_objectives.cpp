#include <cmath>
#include <random>

#include "doctest.h"
#include "exgnet/errors.hpp"
#include "exgnet/nn/ops.hpp"
#include "exgnet/objectives.hpp"
#include "testkit.hpp"

using namespace exg;

namespace {

GtCam mask(std::vector<double> v) {
    GtCam g;
    g.values = std::move(v);
    return g;
}

// direct formula, population std, eps added to each std
double ncc_oracle(const std::vector<double>& a, const std::vector<double>& b) {
    const double m = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        ma += a[j] / m;
        mb += b[j] / m;
    }
    double va = 0, vb = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        va += (a[j] - ma) * (a[j] - ma) / m;
        vb += (b[j] - mb) * (b[j] - mb) / m;
    }
    const double sa = std::sqrt(va) + 1e-8, sb = std::sqrt(vb) + 1e-8;
    double acc = 0;
    for (std::size_t j = 0; j < a.size(); ++j) acc += (a[j] - ma) / sa * (b[j] - mb) / sb;
    return -acc / m;
}

double ncc_of(const std::vector<double>& a, const std::vector<double>& b) {
    const std::vector<GtCam> g{mask(b)};
    return exg::ncc_loss(Tensor::from({1, a.size()}, a), g).item();
}

ForwardOutputs fake_outputs(std::mt19937_64& rng, std::size_t n, std::size_t c) {
    ForwardOutputs out;
    out.has_features = true;
    out.base.probs_base = nn::softmax(testkit::leaf({n, c}, rng));
    out.feature.probs_feat = nn::softmax(testkit::leaf({n, c}, rng));
    out.probs_joint = nn::softmax(testkit::leaf({n, c}, rng));
    return out;
}

}  // namespace

TEST_CASE("cross entropy") {
    const std::vector<std::size_t> one{1};
    CHECK(exg::cross_entropy(Tensor::from({1, 3}, {0, 1, 0}), one).item() == 0.0);
    const std::vector<std::size_t> labels{0, 3};
    CHECK(exg::cross_entropy(Tensor::full({2, 5}, 0.2), labels).item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));
    // floor keeps a zero probability finite
    CHECK(exg::cross_entropy(Tensor::from({1, 2}, {1, 0}), one).item() == doctest::Approx(-std::log(1e-12)));
    const std::vector<std::size_t> bad{5};
    CHECK_THROWS_AS(exg::cross_entropy(Tensor::full({1, 5}, 0.2), bad), UsageError);

    std::mt19937_64 rng(4);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = testkit::pick(rng, 1, 8), c = testkit::pick(rng, 2, 6);
        const auto p = nn::softmax(Tensor::from({n, c}, testkit::randn(n * c, rng, 2)));
        std::vector<std::size_t> y(n);
        double expected = 0;
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = testkit::pick(rng, 0, c - 1);
            expected -= std::log(p.values()[i * c + y[i]]) / static_cast<double>(n);
        }
        CHECK(testkit::rel_diff(exg::cross_entropy(p, y).item(), expected) < 1e-9);
    }
}

TEST_CASE("ncc loss examples") {
    const std::vector<double> gt{0, 0, 0.8, 1, 0, 0.9, 0, 0};
    CHECK(ncc_of(gt, gt) == doctest::Approx(-1).epsilon(1e-6));
    std::vector<double> flipped(gt.size());
    for (std::size_t j = 0; j < gt.size(); ++j) flipped[j] = 3 - gt[j];
    CHECK(ncc_of(flipped, gt) == doctest::Approx(1).epsilon(1e-6));
    CHECK_THROWS_AS(ncc_of({1, 2, 3}, gt), ShapeError);
}

TEST_CASE("ncc loss matches the direct formula and stays bounded") {
    std::mt19937_64 rng(77);
    for (int t = 0; t < 1000; ++t) {
        const std::size_t m = testkit::pick(rng, 2, 30);
        const auto a = testkit::randn(m, rng, std::exp(testkit::uniform(1, rng, -4, 4)[0]));
        const auto b = testkit::uniform(m, rng, 0, 1);
        const double got = ncc_of(a, b);
        CHECK(std::abs(got - ncc_oracle(a, b)) <= 1e-9);
        CHECK(got >= -1 - 1e-6);
        CHECK(got <= 1 + 1e-6);
    }
}

TEST_CASE("ncc loss is affine invariant in either argument") {
    std::mt19937_64 rng(78);
    for (int t = 0; t < 200; ++t) {
        const auto a = testkit::randn(20, rng);
        const auto b = testkit::uniform(20, rng, 0, 1);
        const double scale = std::exp(testkit::uniform(1, rng, -2, 2)[0]), shift = testkit::randn(1, rng, 3)[0];
        auto a2 = a, b2 = b, a3 = a;
        for (auto& v : a2) v = scale * v + shift;
        for (auto& v : b2) v = scale * v + shift;
        for (auto& v : a3) v = -scale * v + shift;
        const double base = ncc_of(a, b);
        CHECK(std::abs(ncc_of(a2, b) - base) <= 1e-6);
        CHECK(std::abs(ncc_of(a, b2) - base) <= 1e-6);
        CHECK(std::abs(ncc_of(a3, b) + base) <= 1e-6);
    }
}

TEST_CASE("empty masks are excluded from the batch mean") {
    std::mt19937_64 rng(9);
    const auto a = testkit::randn(40, rng);
    const std::vector<double> row1(a.begin() + 20, a.end());
    const auto b = testkit::uniform(20, rng, 0, 1);

    std::vector<GtCam> gt{mask(std::vector<double>(20, 0.0)), mask(b)};
    const double both = exg::ncc_loss(Tensor::from({2, 20}, a), gt).item();
    CHECK(both == doctest::Approx(ncc_oracle(row1, b)).epsilon(1e-12));

    gt[0] = mask(b);
    gt[0].insufficient_beats = true;
    CHECK(exg::ncc_loss(Tensor::from({2, 20}, a), gt).item() == doctest::Approx(both).epsilon(1e-12));
    CHECK(ncc_row_weights(gt) == std::vector<double>{0, 1});

    // nothing contributes: zero loss, zero gradient
    const std::vector<GtCam> none{mask(std::vector<double>(20, 0.0))};
    auto x = Tensor::from({1, 20}, b, true);
    auto loss = exg::ncc_loss(x, none);
    CHECK(loss.item() == 0.0);
    loss.backward();
    for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("total loss") {
    std::mt19937_64 rng(31);
    const std::size_t n = 4, c = 3, m = 20;
    const auto out = fake_outputs(rng, n, c);
    const std::vector<std::size_t> labels{0, 2, 1, 2};
    std::vector<GtCam> gt;
    for (std::size_t i = 0; i < n; ++i) gt.push_back(mask(testkit::uniform(m, rng, 0, 1)));
    gt[2] = mask(std::vector<double>(m, 0.0));
    const Tensor cam = testkit::leaf({n, m}, rng);

    const double ce_b = exg::cross_entropy(out.base.probs_base, labels).item();
    const double ce_f = exg::cross_entropy(out.feature.probs_feat, labels).item();
    const double ce_j = exg::cross_entropy(out.probs_joint, labels).item();
    const double ncc = exg::ncc_loss(cam, gt).item();

    const auto paper = total_loss(out, labels, gt, cam, {});
    CHECK(std::abs(paper.total.item() - (2 * ce_b + ce_f + ce_j + 0.2 * ncc)) <= 1e-9);
    CHECK(paper.ce_base == ce_b);
    CHECK(paper.ce_feature == ce_f);
    CHECK(paper.ce_joint == ce_j);
    CHECK(paper.ncc == ncc);

    CHECK(total_loss(out, labels, gt, cam, {1, 0, 0, 0}).total.item() == ce_b);

    // linear in each weight
    const double w1 = total_loss(out, labels, gt, cam, {2, 1, 1, 1.0}).total.item();
    const double w3 = total_loss(out, labels, gt, cam, {2, 1, 1, 3.0}).total.item();
    CHECK(std::abs((w3 - w1) / 2 - ncc) <= 1e-9);

    CHECK_THROWS_AS(total_loss(out, labels, gt, cam, {-1, 1, 1, 1}), UsageError);
    auto missing = out;
    missing.has_features = false;
    CHECK_THROWS_AS(total_loss(missing, labels, gt, cam, {}), UsageError);
    CHECK_THROWS_AS(total_loss(out, labels, gt, Tensor{}, {}), UsageError);
}

TEST_CASE("loss gradients match finite differences") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 20; ++t) {
        const std::size_t n = testkit::pick(rng, 1, 4), c = testkit::pick(rng, 2, 5), m = testkit::pick(rng, 3, 20);
        const Tensor logits = testkit::leaf({n, c}, rng);
        const Tensor cam = testkit::leaf({n, m}, rng);
        std::vector<std::size_t> y(n);
        std::vector<GtCam> gt;
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = testkit::pick(rng, 0, c - 1);
            gt.push_back(mask(testkit::uniform(m, rng, 0, 1)));
        }
        const auto ce = testkit::grad_check([&] { return exg::cross_entropy(nn::softmax(logits), y); }, {logits});
        const auto ncc = testkit::grad_check([&] { return exg::ncc_loss(cam, gt); }, {cam});
        CHECK(ce.worst < 1e-5);
        CHECK(ncc.worst < 1e-5);
    }
}
