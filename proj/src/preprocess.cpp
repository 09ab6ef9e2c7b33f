#include "exgnet/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "exgnet/errors.hpp"

namespace exg {

void PreprocessConfig::validate() const {
    if (filter_widths_seconds.empty()) throw UsageError("at least one median filter width is required");
    for (std::size_t i = 0; i < filter_widths_seconds.size(); ++i) {
        if (!(filter_widths_seconds[i] > 0)) throw UsageError("median filter widths must be positive");
        if (i && !(filter_widths_seconds[i] > filter_widths_seconds[i - 1]))
            throw UsageError("median filter widths must be strictly increasing");
    }
    if (!(normalize_hi > normalize_lo)) throw UsageError("normalize range must satisfy lo < hi");
}

std::size_t seconds_to_odd_width(double seconds, int fs) {
    auto width = static_cast<std::size_t>(std::llround(seconds * fs));
    if (width % 2 == 0) ++width;
    return width;
}

std::vector<double> median_filter(std::span<const double> signal, std::size_t width) {
    if (width % 2 == 0) throw UsageError("median filter width must be odd, got " + std::to_string(width));
    if (width < 1 || width > signal.size())
        throw UsageError("median filter width " + std::to_string(width) + " outside [1, " +
                         std::to_string(signal.size()) + "]");
    const auto n = static_cast<std::ptrdiff_t>(signal.size());
    const auto half = static_cast<std::ptrdiff_t>(width / 2);
    auto at = [&](std::ptrdiff_t i) { return signal[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, n - 1))]; };

    std::vector<double> window;
    window.reserve(width);
    for (std::ptrdiff_t i = -half; i <= half; ++i) window.push_back(at(i));
    std::sort(window.begin(), window.end());

    std::vector<double> out(signal.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(i)] = window[static_cast<std::size_t>(half)];
        if (i + 1 == n) break;
        const double leaving = at(i - half);
        const double entering = at(i + half + 1);
        window.erase(std::lower_bound(window.begin(), window.end(), leaving));
        window.insert(std::upper_bound(window.begin(), window.end(), entering), entering);
    }
    return out;
}

std::vector<double> estimate_baseline(std::span<const double> signal, int fs, const PreprocessConfig& cfg) {
    cfg.validate();
    std::vector<double> baseline(signal.begin(), signal.end());
    std::vector<double> sum(signal.size(), 0.0);
    for (double seconds : cfg.filter_widths_seconds) {
        const auto width = seconds_to_odd_width(seconds, fs);
        if (width > signal.size())
            throw UsageError("signal of " + std::to_string(signal.size()) + " samples is shorter than filter width " +
                             std::to_string(width));
        if (cfg.cascade) {
            baseline = median_filter(baseline, width);
        } else {
            const auto filtered = median_filter(signal, width);
            for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += filtered[i];
        }
    }
    if (!cfg.cascade)
        for (std::size_t i = 0; i < sum.size(); ++i)
            baseline[i] = sum[i] / static_cast<double>(cfg.filter_widths_seconds.size());
    return baseline;
}

std::vector<double> remove_baseline(std::span<const double> signal, int fs, const PreprocessConfig& cfg) {
    auto out = estimate_baseline(signal, fs, cfg);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = signal[i] - out[i];
    return out;
}

std::vector<double> remove_baseline(const EcgRecord& record, const PreprocessConfig& cfg) {
    const auto signal = to_double(record.samples);
    return remove_baseline(signal, record.sampling_rate, cfg);
}

std::vector<double> minmax_normalize(std::span<const double> signal, double lo, double hi) {
    std::vector<double> out(signal.size(), lo);
    if (signal.empty()) return out;
    const auto [mn, mx] = std::minmax_element(signal.begin(), signal.end());
    const double low = *mn, high = *mx;
    if (high == low) return out;
    const double range = high - low;
    for (std::size_t i = 0; i < signal.size(); ++i)
        out[i] = std::clamp(lo + (signal[i] - low) / range * (hi - lo), lo, hi);
    return out;
}

std::vector<double> preprocess_record(const EcgRecord& record, const PreprocessConfig& cfg) {
    const auto detrended = remove_baseline(record, cfg);
    return minmax_normalize(detrended, cfg.normalize_lo, cfg.normalize_hi);
}

}  // namespace exg
