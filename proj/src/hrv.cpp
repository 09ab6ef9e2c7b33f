#include "exgnet/hrv.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include "exgnet/errors.hpp"

namespace exg {

namespace {
std::atomic<std::uint64_t> g_invocations{0};
}  // namespace

std::uint64_t hrv_invocations() { return g_invocations.load(std::memory_order_relaxed); }

double QuantFeatures::get(std::string_view name) const {
    for (std::size_t i = 0; i < kFeatureCount; ++i)
        if (kFeatureNames[i] == name) return values[i];
    throw UsageError("unknown feature " + std::string(name));
}

namespace {

// Mean over [i - half, i + half] clipped to the signal.
std::vector<double> centered_mean(std::span<const double> x, std::size_t half) {
    const std::size_t n = x.size();
    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= half ? i - half : 0;
        const std::size_t hi = std::min(n, i + half + 1);
        out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
    }
    return out;
}

}  // namespace

RPeaks detect_rpeaks(std::span<const double> signal, int fs, const RPeakDetectorConfig& cfg) {
    g_invocations.fetch_add(1, std::memory_order_relaxed);
    if (fs <= 0) throw UsageError("sampling rate must be positive");
    const std::size_t n = signal.size();
    if (n < 2 * static_cast<std::size_t>(fs))
        throw InsufficientBeatsError("signal shorter than two seconds; cannot detect R peaks");

    const auto width = [fs](double seconds) {
        return static_cast<std::size_t>(std::max(0.0, std::round(seconds * fs / 2)));
    };
    const auto smooth = centered_mean(signal, width(cfg.smooth_seconds));
    const auto trend = centered_mean(signal, width(cfg.trend_seconds));

    std::vector<double> energy(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double d = ((smooth[i + 1] - trend[i + 1]) - (smooth[i - 1] - trend[i - 1])) * 0.5;
        energy[i] = d * d;
    }
    const auto integrated = centered_mean(energy, std::max<std::size_t>(1, width(cfg.integration_seconds)));

    std::vector<double> sorted = integrated;
    const auto robust_index = static_cast<std::size_t>(0.995 * static_cast<double>(n - 1));
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(robust_index), sorted.end());
    const double robust_max = sorted[robust_index];
    const double threshold = cfg.threshold_fraction * robust_max;

    std::vector<std::size_t> candidates;
    if (robust_max > 0) {
        std::size_t i = 0;
        while (i < n) {
            if (integrated[i] <= threshold) {
                ++i;
                continue;
            }
            std::size_t end = i;
            while (end < n && integrated[end] > threshold) ++end;
            std::size_t best = i;
            for (std::size_t j = i; j < end; ++j)
                if (signal[j] > signal[best]) best = j;
            candidates.push_back(best);
            i = end;
        }
    }

    const auto refractory = static_cast<std::size_t>(std::llround(cfg.refractory_seconds * fs));
    RPeaks peaks;
    for (auto c : candidates) {
        if (!peaks.indices.empty() && c - peaks.indices.back() < refractory) {
            if (signal[c] > signal[peaks.indices.back()]) peaks.indices.back() = c;
            continue;
        }
        peaks.indices.push_back(c);
    }
    if (peaks.indices.size() < 2)
        throw InsufficientBeatsError("found " + std::to_string(peaks.indices.size()) + " R peaks, need at least 2");
    return peaks;
}

RrSeries rr_from_peaks(const RPeaks& peaks, int fs) {
    if (peaks.indices.size() < 2) throw InsufficientBeatsError("need at least 2 R peaks for an RR interval");
    if (fs <= 0) throw UsageError("sampling rate must be positive");
    RrSeries rr;
    rr.intervals_ms.reserve(peaks.indices.size() - 1);
    for (std::size_t i = 0; i + 1 < peaks.indices.size(); ++i) {
        if (peaks.indices[i + 1] <= peaks.indices[i]) throw UsageError("R peaks must be strictly increasing");
        rr.intervals_ms.push_back(static_cast<double>(peaks.indices[i + 1] - peaks.indices[i]) * 1000.0 / fs);
    }
    return rr;
}

double percentile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw UsageError("percentile of empty data");
    const double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

namespace {

double mean_of(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v) {
    const double m = mean_of(v);
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

QuantFeatures compute_features(const RrSeries& rr) {
    g_invocations.fetch_add(1, std::memory_order_relaxed);
    const auto& nn = rr.intervals_ms;
    if (nn.size() < 3)
        throw InsufficientBeatsError("HRV features need at least 3 RR intervals, got " + std::to_string(nn.size()));

    std::vector<double> diffs(nn.size() - 1);
    for (std::size_t i = 0; i + 1 < nn.size(); ++i) diffs[i] = nn[i + 1] - nn[i];
    std::vector<double> sorted = nn;
    std::sort(sorted.begin(), sorted.end());

    const double mean_nn = mean_of(nn);
    const double sdnn = sample_std(nn);
    double sq = 0;
    for (double d : diffs) sq += d * d;
    const double rmssd = std::sqrt(sq / static_cast<double>(diffs.size()));
    const double median_nn = percentile_sorted(sorted, 50);

    std::vector<double> abs_dev(nn.size());
    for (std::size_t i = 0; i < nn.size(); ++i) abs_dev[i] = std::abs(nn[i] - median_nn);
    std::sort(abs_dev.begin(), abs_dev.end());
    const double mad_nn = kMadScale * percentile_sorted(abs_dev, 50);

    std::map<long long, std::size_t> histogram;
    for (double x : nn) ++histogram[static_cast<long long>(std::floor(x / kHtiBinMs))];
    std::size_t max_bin = 0;
    for (const auto& [bin, count] : histogram) max_bin = std::max(max_bin, count);

    QuantFeatures f;
    f.values = {
        60000.0 / mean_nn,
        mean_nn,
        sample_std(diffs),
        sdnn,
        rmssd,
        rmssd / mean_nn,
        sdnn / mean_nn,
        median_nn,
        mad_nn,
        mad_nn / median_nn,
        percentile_sorted(sorted, 75) - percentile_sorted(sorted, 25),
        rmssd > 0 ? sdnn / rmssd : 0.0,
        percentile_sorted(sorted, 20),
        percentile_sorted(sorted, 80),
        sorted.front(),
        sorted.back(),
        static_cast<double>(nn.size()) / static_cast<double>(max_bin),
    };
    return f;
}

FeatureScaler FeatureScaler::fit(std::span<const QuantFeatures> train) {
    if (train.size() < 2) throw UsageError("feature scaler needs at least 2 training vectors");
    std::array<double, kFeatureCount> mean{}, scale{};
    const auto n = static_cast<double>(train.size());
    for (std::size_t d = 0; d < kFeatureCount; ++d) {
        double s = 0;
        for (const auto& f : train) s += f[d];
        mean[d] = s / n;
        double ss = 0;
        for (const auto& f : train) ss += (f[d] - mean[d]) * (f[d] - mean[d]);
        const double sd = std::sqrt(ss / n);
        scale[d] = sd > 1e-12 * (1.0 + std::abs(mean[d])) ? sd : 0.0;
    }
    return FeatureScaler(mean, scale);
}

std::array<double, kFeatureCount> FeatureScaler::apply(const QuantFeatures& f) const {
    std::array<double, kFeatureCount> out{};
    for (std::size_t d = 0; d < kFeatureCount; ++d) out[d] = scale_[d] > 0 ? (f[d] - mean_[d]) / scale_[d] : 0.0;
    return out;
}

}  // namespace exg
