#pragma once

#include <span>
#include <vector>

#include "exgnet/hrv.hpp"
#include "exgnet/records.hpp"

namespace exg {

inline constexpr double kDefaultMaskAlpha = 0.8;
inline constexpr std::size_t kDefaultSegments = 20;

/// Ground-truth attention mask over equal-length signal segments. Every value
/// is 0 or lies in [mask_alpha, 1].
struct GtCam {
    std::vector<double> values;
    double mask_alpha = kDefaultMaskAlpha;
    /// Set when R-peak detection failed; the mask is then all zeros and the
    /// record carries no CAM supervision.
    bool insufficient_beats = false;

    bool all_zero() const;
};

struct Marker {
    std::size_t position = 0;
    double value = 0;
};

struct GtCamConfig {
    double mask_alpha = kDefaultMaskAlpha;
    std::size_t n_segments = kDefaultSegments;
    /// Absolute deviation from the mean RR (default) or the signed difference.
    bool signed_deviation = false;
    RPeakDetectorConfig detector{};
};

/// |RR_i - mean(RR)|, or the signed difference when `signed_deviation`.
std::vector<double> rr_deviation(const RrSeries& rr, bool signed_deviation = false);

/// Intervals at or above the mean deviation are scaled into [alpha, 1],
/// the rest are 0. All-equal deviations give all zeros.
std::vector<double> interval_values(std::span<const double> deviation, double mask_alpha = kDefaultMaskAlpha);

/// Peak position plus half the following RR interval, rounded to a sample.
std::vector<std::size_t> marker_positions(const RPeaks& peaks, const RrSeries& rr, int fs);

struct MaskBuild {
    GtCam mask;
    std::size_t dropped_markers = 0;
};

/// Segment value = max of the marker values falling inside it, else 0.
MaskBuild build_mask(std::span<const Marker> markers, std::size_t signal_len, std::size_t n_segments,
                     double mask_alpha = kDefaultMaskAlpha);

/// Mask from already-detected peaks.
GtCam gt_cam_from_peaks(const RPeaks& peaks, int fs, std::size_t signal_len, const GtCamConfig& cfg = {});

/// Full chain on a baseline-corrected signal: R peaks, RR, deviations,
/// values, markers, segments. Throws InsufficientBeatsError.
GtCam generate_gt_cam(std::span<const double> signal, int fs, const GtCamConfig& cfg = {});

/// As above on a raw record (baseline removed first). Records without enough
/// beats get an all-zero mask flagged `insufficient_beats`.
GtCam generate_gt_cam_or_empty(const EcgRecord& record, const GtCamConfig& cfg = {});

}  // namespace exg
