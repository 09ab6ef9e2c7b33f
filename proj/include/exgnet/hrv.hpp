#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace exg {

/// Strictly increasing R-wave sample positions.
struct RPeaks {
    std::vector<std::size_t> indices;
};

struct RrSeries {
    std::vector<double> intervals_ms;
};

inline constexpr std::size_t kFeatureCount = 17;

inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "bpm",     "mean_nn", "sdsd",    "sdnn",     "rmssd",    "cvsd",   "cvnn",   "median_nn", "mad_nn",
    "mcv_nn",  "iqr_nn",  "sdrmssd", "prc20_nn", "prc80_nn", "min_nn", "max_nn", "hti"};

/// The 17 time-domain HRV features, in kFeatureNames order.
struct QuantFeatures {
    std::array<double, kFeatureCount> values{};

    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }
    double get(std::string_view name) const;
};

struct RPeakDetectorConfig {
    double refractory_seconds = 0.2;
    /// Band-pass ahead of the derivative: a centered moving average of
    /// `smooth_seconds` minus one of `trend_seconds` (roughly 2 to 13 Hz).
    double smooth_seconds = 0.034;
    double trend_seconds = 0.2;
    double integration_seconds = 0.15;
    /// Fraction of the robust maximum of the integrated energy.
    double threshold_fraction = 0.3;
};

/// Band-pass, derivative, squaring and moving-window integration; each supra-threshold
/// region contributes the maximum of the input signal inside it. Peaks closer
/// than the refractory period keep the taller one.
RPeaks detect_rpeaks(std::span<const double> signal, int fs, const RPeakDetectorConfig& cfg = {});

RrSeries rr_from_peaks(const RPeaks& peaks, int fs);

/// Process-wide count of detect_rpeaks and compute_features calls.
std::uint64_t hrv_invocations();

/// Requires at least 3 intervals.
QuantFeatures compute_features(const RrSeries& rr);

/// Linear-interpolation percentile of sorted data, p in [0, 100].
double percentile_sorted(std::span<const double> sorted, double p);

inline constexpr double kHtiBinMs = 7.8125;
inline constexpr double kMadScale = 1.4826;

/// Per-dimension z-score fit on training features.
class FeatureScaler {
public:
    FeatureScaler() = default;
    FeatureScaler(std::array<double, kFeatureCount> mean, std::array<double, kFeatureCount> scale)
        : mean_(mean), scale_(scale) {}

    static FeatureScaler fit(std::span<const QuantFeatures> train);

    /// Zero-variance dimensions map to 0.
    std::array<double, kFeatureCount> apply(const QuantFeatures& f) const;

    const std::array<double, kFeatureCount>& mean() const { return mean_; }
    /// Population standard deviation; 0 marks a degenerate dimension.
    const std::array<double, kFeatureCount>& scale() const { return scale_; }

private:
    std::array<double, kFeatureCount> mean_{};
    std::array<double, kFeatureCount> scale_{};
};

}  // namespace exg
