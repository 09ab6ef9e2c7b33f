#include "exgnet/gtcam.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "exgnet/errors.hpp"
#include "exgnet/preprocess.hpp"

namespace exg {

bool GtCam::all_zero() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
}

std::vector<double> rr_deviation(const RrSeries& rr, bool signed_deviation) {
    const auto& v = rr.intervals_ms;
    if (v.size() < 2) throw InsufficientBeatsError("RR deviation needs at least 2 intervals");
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    std::vector<double> d(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) d[i] = signed_deviation ? v[i] - mean : std::abs(v[i] - mean);
    return d;
}

std::vector<double> interval_values(std::span<const double> deviation, double mask_alpha) {
    if (deviation.empty()) throw UsageError("interval_values needs at least one deviation");
    if (!(mask_alpha > 0 && mask_alpha < 1)) throw UsageError("mask_alpha must lie in (0, 1)");
    const double mean = std::accumulate(deviation.begin(), deviation.end(), 0.0) / static_cast<double>(deviation.size());
    const double max = *std::max_element(deviation.begin(), deviation.end());
    std::vector<double> values(deviation.size(), 0.0);
    if (!(max > mean)) return values;
    for (std::size_t i = 0; i < deviation.size(); ++i)
        if (deviation[i] >= mean)
            values[i] = std::min(1.0, mask_alpha + (1 - mask_alpha) * (deviation[i] - mean) / (max - mean));
    return values;
}

std::vector<std::size_t> marker_positions(const RPeaks& peaks, const RrSeries& rr, int fs) {
    if (rr.intervals_ms.size() + 1 != peaks.indices.size())
        throw UsageError("RR series length must be one less than the peak count");
    std::vector<std::size_t> markers(rr.intervals_ms.size());
    for (std::size_t i = 0; i < markers.size(); ++i)
        markers[i] = peaks.indices[i] + static_cast<std::size_t>(std::llround(rr.intervals_ms[i] * fs / 2000.0));
    return markers;
}

MaskBuild build_mask(std::span<const Marker> markers, std::size_t signal_len, std::size_t n_segments,
                     double mask_alpha) {
    if (n_segments == 0 || signal_len % n_segments != 0)
        throw UsageError("signal length " + std::to_string(signal_len) + " is not divisible into " +
                         std::to_string(n_segments) + " segments");
    const std::size_t seg_len = signal_len / n_segments;
    MaskBuild out;
    out.mask.mask_alpha = mask_alpha;
    out.mask.values.assign(n_segments, 0.0);
    for (const auto& m : markers) {
        if (m.position >= signal_len) {
            ++out.dropped_markers;
            continue;
        }
        auto& slot = out.mask.values[m.position / seg_len];
        slot = std::max(slot, m.value);
    }
    return out;
}

GtCam gt_cam_from_peaks(const RPeaks& peaks, int fs, std::size_t signal_len, const GtCamConfig& cfg) {
    const auto rr = rr_from_peaks(peaks, fs);
    const auto values = interval_values(rr_deviation(rr, cfg.signed_deviation), cfg.mask_alpha);
    const auto positions = marker_positions(peaks, rr, fs);
    std::vector<Marker> markers(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) markers[i] = {positions[i], values[i]};
    return build_mask(markers, signal_len, cfg.n_segments, cfg.mask_alpha).mask;
}

GtCam generate_gt_cam(std::span<const double> signal, int fs, const GtCamConfig& cfg) {
    const auto peaks = detect_rpeaks(signal, fs, cfg.detector);
    return gt_cam_from_peaks(peaks, fs, signal.size(), cfg);
}

GtCam generate_gt_cam_or_empty(const EcgRecord& record, const GtCamConfig& cfg) {
    try {
        const auto detrended = remove_baseline(record, PreprocessConfig{});
        return generate_gt_cam(detrended, record.sampling_rate, cfg);
    } catch (const InsufficientBeatsError&) {
        GtCam empty;
        empty.values.assign(cfg.n_segments, 0.0);
        empty.mask_alpha = cfg.mask_alpha;
        empty.insufficient_beats = true;
        return empty;
    }
}

}  // namespace exg
