#pragma once

#include <span>
#include <utility>
#include <vector>

#include "exgnet/records.hpp"

namespace exg {

struct PreprocessConfig {
    /// Median filter widths in seconds, applied as a cascade.
    std::vector<double> filter_widths_seconds{0.2, 0.6, 1.2};
    double normalize_lo = 0.0;
    double normalize_hi = 1.0;
    /// true: each filter smooths the previous output and the last one is the
    /// baseline. false: every filter sees the raw signal and the baseline is
    /// the mean of their outputs.
    bool cascade = true;

    void validate() const;
};

/// round(seconds * fs), bumped to the next odd number.
std::size_t seconds_to_odd_width(double seconds, int fs);

/// Centered running median with edge-replication padding. Width must be odd.
std::vector<double> median_filter(std::span<const double> signal, std::size_t width);

/// Cascaded median estimate of baseline wander.
std::vector<double> estimate_baseline(std::span<const double> signal, int fs, const PreprocessConfig& cfg);

/// signal - estimate_baseline(signal).
std::vector<double> remove_baseline(std::span<const double> signal, int fs, const PreprocessConfig& cfg);
std::vector<double> remove_baseline(const EcgRecord& record, const PreprocessConfig& cfg);

/// Affine map of [min, max] onto [lo, hi]; a constant signal maps to lo.
std::vector<double> minmax_normalize(std::span<const double> signal, double lo = 0.0, double hi = 1.0);

/// Baseline removal followed by normalization.
std::vector<double> preprocess_record(const EcgRecord& record, const PreprocessConfig& cfg);

}  // namespace exg
