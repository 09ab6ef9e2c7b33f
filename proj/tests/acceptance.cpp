// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "exgnet/explain.hpp"
#include "exgnet/gtcam.hpp"
#include "exgnet/hrv.hpp"
#include "exgnet/model.hpp"
#include "exgnet/objectives.hpp"
#include "exgnet/synth.hpp"
#include "exgnet/text.hpp"
#include "exgnet/trainer.hpp"
#include "grad_suite.hpp"
#include "testkit.hpp"

using namespace exg;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::vector<PreparedRecord> synth_prepared(std::size_t n, std::uint64_t seed) {
    SynthCorpusConfig sc;
    sc.n_records = n;
    sc.seed = seed;
    std::vector<EcgRecord> recs;
    for (auto& s : synth_corpus(sc)) recs.push_back(s.record);
    return prepare_records(recs, ModelConfig::desk(2), LabelSet::first(2), {});
}

// 1
Outcome gradient_suite() {
    const auto results = testkit::run_grad_suite(20, 2024);
    double worst = 0;
    std::string name;
    for (const auto& r : results)
        if (r.worst >= worst) {
            worst = r.worst;
            name = r.name;
        }
    return {worst < 1e-5, std::to_string(results.size()) + " primitives x 20 shapes, worst " + fmt("%.2e", worst) +
                              " (" + name + ") < 1e-5 at 64-bit"};
}

// 2: the brute force works from the planted peaks, the library from the
// rendered waveform.
std::vector<double> brute_mask(const std::vector<std::size_t>& peaks, int fs, std::size_t len, std::size_t n_seg) {
    const std::size_t k = peaks.size() - 1;
    std::vector<double> rr(k);
    for (std::size_t i = 0; i < k; ++i) rr[i] = static_cast<double>(peaks[i + 1] - peaks[i]) * 1000.0 / fs;
    double mean = 0;
    for (double v : rr) mean += v;
    mean /= static_cast<double>(k);
    std::vector<double> dev(k);
    double dmean = 0, dmax = 0;
    for (std::size_t i = 0; i < k; ++i) {
        dev[i] = std::abs(rr[i] - mean);
        dmean += dev[i];
        dmax = std::max(dmax, dev[i]);
    }
    dmean /= static_cast<double>(k);
    std::vector<double> out(n_seg, 0.0);
    if (!(dmax > dmean)) return out;
    const std::size_t seg = len / n_seg;
    for (std::size_t s = 0; s < n_seg; ++s)
        for (std::size_t i = 0; i < k; ++i) {
            if (dev[i] < dmean) continue;
            const double v = 0.8 + 0.2 * (dev[i] - dmean) / (dmax - dmean);
            const std::size_t gap = peaks[i + 1] - peaks[i];
            const std::size_t marker = peaks[i] + (gap + 1) / 2;
            if (marker >= s * seg && marker < (s + 1) * seg) out[s] = std::max(out[s], v);
        }
    return out;
}

Outcome gt_mask_oracle() {
    std::mt19937_64 rng(77);
    std::size_t mismatches = 0, nonzero = 0;
    double worst = 0;
    for (int t = 0; t < 1000; ++t) {
        // a base rhythm with a few planted long or short intervals
        const double base = testkit::uniform(1, rng, 500, 1100)[0];
        std::vector<std::size_t> peaks;
        double pos = testkit::uniform(1, rng, 60, 400)[0];
        while (pos < 4940) {
            peaks.push_back(static_cast<std::size_t>(pos));
            double rr = base * testkit::uniform(1, rng, 0.97, 1.03)[0];
            const auto roll = testkit::pick(rng, 0, 9);
            if (roll == 0) rr *= testkit::uniform(1, rng, 1.3, 1.8)[0];
            if (roll == 1) rr *= testkit::uniform(1, rng, 0.6, 0.8)[0];
            pos += rr * 0.5;
        }
        std::mt19937_64 noise(t);
        const auto x = synth_beat_train(peaks, 500, 5000, {}, {0.0, 0.0}, noise);
        const auto got = generate_gt_cam(x, 500).values;
        const auto want = brute_mask(peaks, 500, 5000, 20);
        double d = 0;
        for (std::size_t s = 0; s < 20; ++s) d = std::max(d, std::abs(got[s] - want[s]));
        worst = std::max(worst, d);
        if (d > 1e-9) {
            ++mismatches;
            if (std::getenv("EXG_DEBUG")) {
                const auto det = detect_rpeaks(x, 500);
                std::fprintf(stderr, "case %d planted:", t);
                for (auto p : peaks) std::fprintf(stderr, " %zu", p);
                std::fprintf(stderr, "\ndetected:");
                for (auto p : det.indices) std::fprintf(stderr, " %zu", p);
                std::fprintf(stderr, "\n");
            }
        }
        if (std::any_of(want.begin(), want.end(), [](double v) { return v > 0; })) ++nonzero;
    }
    const auto ends = interval_values(std::vector<double>{0, 2, 4, 2});
    const bool endpoints = std::abs(ends[1] - 0.8) < 1e-12 && std::abs(ends[2] - 1.0) < 1e-12;
    return {mismatches == 0 && endpoints,
            std::to_string(1000 - mismatches) + "/1000 masks match (" + std::to_string(nonzero) +
                " non-empty), worst diff " + fmt("%.1e", worst) + "; endpoints mean->" + fmt("%.3f", ends[1]) +
                " max->" + fmt("%.3f", ends[2])};
}

// 3
std::size_t support_width(Tensor x, const Tensor& out, std::size_t position) {
    const std::size_t c = out.dim(1), l = out.dim(2);
    std::vector<double> pick(out.numel(), 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) pick[ch * l + position] = 1.0;
    x.zero_grad();
    nn::sum(nn::mul_const(out, pick)).backward();
    std::size_t first = SIZE_MAX, last = 0;
    for (std::size_t i = 0; i < x.numel(); ++i)
        if (x.grad()[i] != 0.0) {
            first = std::min(first, i);
            last = i;
        }
    return first == SIZE_MAX ? 0 : last - first + 1;
}

Outcome receptive_fields() {
    std::mt19937_64 rng(3);
    const auto cfg = ModelConfig::paper(5);
    MultiresBlock block(1, cfg.base_channels, cfg.kernel, cfg.depthwise_kernel, false, 0.0, rng);
    std::vector<double> impulse(256, 0.0);
    impulse[128] = 1.0;
    const Tensor x = Tensor::from({1, 1, 256}, impulse, true);
    MultiresBlock::Branches br;
    block.forward(x, false, rng, &br);
    const auto a = support_width(x, br.a, 128), b = support_width(x, br.b, 128), c = support_width(x, br.c, 128);
    return {a == 16 && b == 31 && c == 46,
            "branch supports " + std::to_string(a) + ", " + std::to_string(b) + ", " + std::to_string(c) +
                " (expected 16, 31, 46)"};
}

// 4
Outcome shape_contract() {
    std::mt19937_64 rng(4);
    ExgNet model(ModelConfig::paper(5), 1);
    const Tensor x = Tensor::from({1, 1, 5120}, testkit::randn(5120, rng));
    nn::Shape feat;
    {
        nn::NoGradGuard no_grad;
        feat = model.base_forward(x, false).feat_map.shape();
    }
    const auto cam = generate_cam(model, x).cams.at(0);
    const bool ok = feat == nn::Shape{1, 256, 20} && cam.size() == 20;
    return {ok, "feat_map " + nn::shape_str(feat) + ", CAM length " + std::to_string(cam.size())};
}

// 5
double ncc_of(const std::vector<double>& a, const std::vector<double>& b) {
    GtCam g;
    g.values = b;
    const std::vector<GtCam> gt{g};
    return exg::ncc_loss(Tensor::from({1, a.size()}, a), gt).item();
}

Outcome ncc_properties() {
    std::mt19937_64 rng(5);
    double lo = 1, hi = -1, ident = 0, affine = 0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t m = testkit::pick(rng, 3, 40);
        const auto a = testkit::randn(m, rng, std::exp(testkit::uniform(1, rng, -3, 3)[0]));
        const auto b = testkit::uniform(m, rng, 0, 1);
        const double v = ncc_of(a, b);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        ident = std::max(ident, std::abs(ncc_of(b, b) + 1));
        auto a2 = a;
        const double scale = std::exp(testkit::uniform(1, rng, -2, 2)[0]), shift = testkit::randn(1, rng, 3)[0];
        for (auto& x : a2) x = scale * x + shift;
        affine = std::max(affine, std::abs(ncc_of(a2, b) - v));
    }
    const bool ok = lo >= -1 - 1e-6 && hi <= 1 + 1e-6 && ident <= 1e-6 && affine <= 1e-6;
    return {ok, "range [" + fmt("%.6f", lo) + ", " + fmt("%.6f", hi) + "], identical " + fmt("%.1e", ident) +
                    ", affine " + fmt("%.1e", affine) + " (tol 1e-6)"};
}

// 6
double joint_ce(const TrainedModel& m, std::span<const PreparedRecord> recs) {
    const auto report = evaluate_prepared(m, recs, EvalMode::WithFeatures);
    double ce = 0;
    for (std::size_t i = 0; i < recs.size(); ++i)
        ce -= std::log(std::max(report.joint_probs[i][recs[i].label], 1e-12)) / static_cast<double>(recs.size());
    return ce;
}

Outcome tiny_overfit() {
    const auto set = synth_prepared(16, 21);
    auto tc = TrainConfig::desk();
    tc.seed = 1;
    const std::size_t per_epoch = (set.size() + tc.batch_size - 1) / tc.batch_size;
    tc.epochs = 300 / per_epoch;
    const auto a = train_fold(set, {}, ModelConfig::desk(2), tc, {}, 300);
    const auto b = train_fold(set, {}, ModelConfig::desk(2), tc, {}, 300);

    // training joint CE averaged over each epoch, i.e. over all 16 records
    std::size_t reached = 0;
    double best = 1e9;
    for (std::size_t lo = 0; lo + per_epoch <= a.steps.size(); lo += per_epoch) {
        double ce = 0;
        for (std::size_t i = lo; i < lo + per_epoch; ++i) ce += a.steps[i].ce_joint / static_cast<double>(per_epoch);
        best = std::min(best, ce);
        if (!reached && ce < 0.05) reached = lo + per_epoch;
    }
    const double eval_ce = joint_ce(a.last, set);
    bool same = a.steps.size() == b.steps.size();
    for (std::size_t i = 0; same && i < a.steps.size(); ++i)
        same = std::memcmp(&a.steps[i].total, &b.steps[i].total, sizeof(double)) == 0;
    same = same && joint_ce(b.last, set) == eval_ce;
    return {reached > 0 && reached <= 300 && eval_ce < 0.05 && same,
            "epoch-mean training joint CE < 0.05 " +
                (reached ? "after " + std::to_string(reached) + " steps" : std::string("never")) + " (lowest " +
                fmt("%.4f", best) + "), eval-mode CE after " + std::to_string(a.steps.size()) + " steps " +
                fmt("%.4f", eval_ce) + "; second run " + (same ? "bit-identical" : "DIFFERS")};
}

// 7
Outcome guidance_direction() {
    const auto train = synth_prepared(200, 1);
    const auto test = synth_prepared(100, 99);
    double mean[2] = {0, 0};
    std::string per_seed;
    for (int guided = 1; guided >= 0; --guided) {
        per_seed += guided ? "guided [" : " unguided [";
        for (std::uint64_t seed = 1; seed <= 3; ++seed) {
            auto tc = TrainConfig::desk();
            tc.seed = seed;
            tc.weights.w_ncc = guided ? 0.2 : 0.0;
            const auto run = train_fold(train, {}, ModelConfig::desk(2), tc);
            const double a = mean_alignment_ncc(explain_records(run.last, test));
            mean[guided] += a / 3;
            per_seed += fmt(seed == 1 ? "%.3f" : " %.3f", a);
        }
        per_seed += "]";
    }
    const double gap = mean[1] - mean[0];
    return {gap >= 0.2, "mean NCC guided " + fmt("%.3f", mean[1]) + " vs unguided " + fmt("%.3f", mean[0]) +
                            ", gap " + fmt("%.3f", gap) + " >= 0.2; " + per_seed};
}

// 8
Outcome metrics_oracle() {
    std::mt19937_64 rng(8);
    double worst = 0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t k = testkit::pick(rng, 2, 6);
        Confusion m(k, std::vector<std::size_t>(k));
        double total = 0;
        for (auto& row : m)
            for (auto& v : row) {
                v = testkit::pick(rng, 0, 150);
                total += static_cast<double>(v);
            }
        if (total == 0) m[0][0] = 1, total = 1;
        double trace = 0, f1 = 0, sens = 0, spec = 0;
        for (std::size_t c = 0; c < k; ++c) {
            trace += static_cast<double>(m[c][c]);
            double tp = static_cast<double>(m[c][c]), fn = 0, fp = 0;
            for (std::size_t j = 0; j < k; ++j)
                if (j != c) fn += static_cast<double>(m[c][j]), fp += static_cast<double>(m[j][c]);
            const double tn = total - tp - fn - fp;
            sens += (tp + fn > 0 ? tp / (tp + fn) : 0) / static_cast<double>(k);
            spec += (tn + fp > 0 ? tn / (tn + fp) : 0) / static_cast<double>(k);
            f1 += (2 * tp + fp + fn > 0 ? 2 * tp / (2 * tp + fp + fn) : 0) / static_cast<double>(k);
        }
        const auto got = metrics_from_confusion(m);
        worst = std::max({worst, std::abs(got.accuracy - trace / total), std::abs(got.macro_f1 - f1),
                          std::abs(got.macro_sensitivity - sens), std::abs(got.macro_specificity - spec)});
    }
    const auto worked = metrics_from_confusion({{40, 10}, {20, 30}}).per_class[0];
    const bool ok = worst <= 1e-12 && std::abs(worked.sensitivity - 0.8) < 1e-12 &&
                    std::abs(worked.specificity - 0.6) < 1e-12;
    return {ok, "1000 matrices, worst diff " + fmt("%.1e", worst) + " (tol 1e-12); [[40,10],[20,30]] sens " +
                    fmt("%.3f", worked.sensitivity) + " spec " + fmt("%.3f", worked.specificity)};
}

// 9
Outcome hrv_oracle() {
    std::ifstream in(std::string(EXG_TEST_DATA) + "/hrv_oracle.csv");
    if (!in) return {false, "missing hrv_oracle.csv"};
    std::string line;
    std::getline(in, line);
    std::size_t rows = 0;
    double worst = 0;
    while (std::getline(in, line)) {
        const auto cols = split(line, ',');
        RrSeries rr;
        for (const auto& tok : split(cols.at(0), ' ')) rr.intervals_ms.push_back(parse_double(tok).value());
        const auto f = compute_features(rr);
        for (std::size_t i = 0; i < kFeatureCount; ++i)
            worst = std::max(worst, testkit::rel_diff(f[i], parse_double(cols.at(i + 1)).value()));
        ++rows;
    }
    const auto c = compute_features({std::vector<double>(12, 800.0)});
    const bool limits = c.get("sdnn") == 0.0 && c.get("rmssd") == 0.0 && c.get("bpm") == 60000.0 / 800.0;
    return {rows == 100 && worst <= 1e-9 && limits,
            std::to_string(rows) + " series x 17 features, worst rel diff " + fmt("%.1e", worst) +
                " (tol 1e-9); constant 800 ms: bpm " + fmt("%.1f", c.get("bpm")) + ", sdnn " +
                fmt("%g", c.get("sdnn")) + ", rmssd " + fmt("%g", c.get("rmssd"))};
}

// 10
Outcome schedule() {
    const auto cfg = TrainConfig::paper();
    const double l0 = lr_at_epoch(0, cfg), l60 = lr_at_epoch(60, cfg), l100 = lr_at_epoch(100, cfg),
                 l70 = lr_at_epoch(70, cfg);
    const bool ok = l0 == 2e-4 && l60 == 1e-4 && l100 == 5e-5 && l70 == 5e-5;
    return {ok, "lr(0)=" + fmt("%g", l0) + " lr(60)=" + fmt("%g", l60) + " lr(100)=" + fmt("%g", l100) +
                    " lr(70)=" + fmt("%g", l70) + " (exact)"};
}

// 11
Outcome base_only_independence() {
    const auto train = synth_prepared(40, 11);
    auto tc = TrainConfig::desk();
    tc.epochs = 3;
    const auto dir = testkit::temp_dir("acceptance_ckpt");
    save_trained(dir, train_fold(train, {}, ModelConfig::desk(2), tc).last);
    const TrainedModel trained = load_trained(dir);

    SynthCorpusConfig sc;
    sc.n_records = 24;
    sc.seed = 12;
    std::vector<EcgRecord> recs;
    for (auto& s : synth_corpus(sc)) recs.push_back(s.record);

    const auto with = evaluate(trained, recs, LabelSet::first(2), EvalMode::WithFeatures);
    const auto before = hrv_invocations();
    const auto base = evaluate(trained, recs, LabelSet::first(2), EvalMode::BaseOnly);
    const auto hrv_calls = hrv_invocations() - before;

    // raw base scores: full network vs one built without the feature branch
    ExgNet full(trained.model, 0), bare(trained.model, 0, false);
    nn::restore(full.named_arrays(), trained.state);
    nn::restore(bare.named_arrays(), trained.state, true);
    const auto prepared = prepare_records(recs, trained.model, LabelSet::first(2), {});
    std::vector<std::vector<double>> rows;
    std::vector<const PreparedRecord*> ptrs;
    for (const auto& r : prepared) {
        rows.push_back(r.input);
        ptrs.push_back(&r);
    }
    const auto feats = scaled_features(ptrs, trained.scaler);
    nn::NoGradGuard no_grad;
    const auto a = full.forward(batch_signals(rows), batch_features(feats), false).base.scores_base.values();
    const auto b = bare.base_forward(batch_signals(rows), false).scores_base.values();
    std::size_t differing = std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0 ? 0 : 1;
    for (std::size_t i = 0; i < with.base_probs.size(); ++i)
        if (std::memcmp(with.base_probs[i].data(), base.base_probs[i].data(), 2 * sizeof(double)) != 0) ++differing;
    return {hrv_calls == 0 && differing == 0,
            std::to_string(hrv_calls) + " HRV computations in base-only mode; logits_base " +
                (differing == 0 ? "bit-identical" : "DIFFER") + " across " + std::to_string(recs.size()) + " records"};
}

struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all = {
        {1, "gradient suite", 120, gradient_suite},
        {2, "GT-mask oracle", 30, gt_mask_oracle},
        {3, "receptive fields", 30, receptive_fields},
        {4, "shape contract", 30, shape_contract},
        {5, "NCC properties", 10, ncc_properties},
        {6, "tiny overfit", 300, tiny_overfit},
        {7, "XAI-guidance direction", 1800, guidance_direction},
        {8, "metrics oracle", 10, metrics_oracle},
        {9, "HRV oracle", 10, hrv_oracle},
        {10, "schedule", 1, schedule},
        {11, "base-only independence", 60, base_only_independence},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& c : all) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool pass = out.pass && secs < c.limit_s;
        failed += pass ? 0 : 1;
        std::printf("%s  %2d  %-24s %s [%.1f s, limit %.0f s]\n", pass ? "PASS" : "FAIL", c.id, c.name,
                    out.detail.c_str(), secs, c.limit_s);
        std::fflush(stdout);
    }
    std::printf("%s: %d failed\n", failed ? "ACCEPTANCE FAILED" : "ACCEPTANCE PASSED", failed);
    return failed ? 1 : 0;
}
