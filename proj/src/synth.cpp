#include "exgnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "exgnet/errors.hpp"

namespace exg {

namespace {

struct Wave {
    double offset_ms;
    double width_ms;
    double amp;
};

}  // namespace

std::vector<double> synth_beat_train(std::span<const std::size_t> r_positions, int fs, std::size_t length,
                                     const BeatShape& shape, const SynthNoise& noise, std::mt19937_64& rng) {
    const Wave waves[] = {{-160, 25, shape.p_amp},
                          {-28, 8, shape.q_amp},
                          {0, 10, shape.r_amp},
                          {28, 9, shape.s_amp},
                          {260, 45, shape.t_amp}};
    std::vector<double> out(length, 0.0);
    for (auto r : r_positions)
        for (const auto& w : waves) {
            const double centre = static_cast<double>(r) + w.offset_ms * fs / 1000.0;
            const double sd = w.width_ms * fs / 1000.0;
            const auto lo = static_cast<std::ptrdiff_t>(std::floor(centre - 5 * sd));
            const auto hi = static_cast<std::ptrdiff_t>(std::ceil(centre + 5 * sd));
            for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(lo, 0); i <= hi && i < static_cast<std::ptrdiff_t>(length); ++i) {
                const double z = (static_cast<double>(i) - centre) / sd;
                out[static_cast<std::size_t>(i)] += w.amp * std::exp(-0.5 * z * z);
            }
        }
    std::normal_distribution<double> white(0.0, 1.0);
    for (std::size_t i = 0; i < length; ++i) {
        if (noise.white_sd > 0) out[i] += noise.white_sd * white(rng);
        if (noise.drift_amplitude != 0)
            out[i] += noise.drift_amplitude *
                      std::sin(2 * std::numbers::pi * noise.drift_hz * static_cast<double>(i) / fs + noise.drift_phase);
    }
    return out;
}

std::vector<std::size_t> regular_peaks(double rr_ms, std::size_t first, std::size_t length, int fs) {
    std::vector<std::size_t> peaks;
    for (double t = static_cast<double>(first); t < static_cast<double>(length); t += rr_ms * fs / 1000.0)
        peaks.push_back(static_cast<std::size_t>(std::llround(t)));
    while (!peaks.empty() && peaks.back() >= length) peaks.pop_back();
    return peaks;
}

std::vector<SynthRecord> synth_corpus(const SynthCorpusConfig& cfg) {
    if (cfg.n_classes < 2 || cfg.n_classes > 6) throw UsageError("synth: classes must lie in [2, 6]");
    if (cfg.n_records < cfg.n_classes) throw UsageError("synth: need at least one record per class");
    const auto labels = LabelSet::first(cfg.n_classes);
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const double len = static_cast<double>(cfg.length);
    const double margin = 0.2 * cfg.fs;  // keep peaks away from the record edges
    std::vector<SynthRecord> corpus;
    corpus.reserve(cfg.n_records);
    for (std::size_t r = 0; r < cfg.n_records; ++r) {
        SynthRecord rec;
        rec.class_index = r % cfg.n_classes;
        const double base_rr = (700.0 + 200.0 * unit(rng)) * cfg.fs / 1000.0;
        const double long_rr = cfg.long_rr_factor * base_rr;
        const double region = len / static_cast<double>(cfg.n_classes);
        const double region_lo = region * static_cast<double>(rec.class_index);
        // Midpoint of the long interval, away from the region borders.
        const double mid_lo = std::max(region_lo + 0.2 * region, margin + long_rr / 2 + 1);
        const double mid_hi = std::min(region_lo + 0.8 * region, len - margin - long_rr / 2 - 1);
        if (mid_hi <= mid_lo) throw UsageError("synth: record too short for the requested class count");
        const double mid = mid_lo + (mid_hi - mid_lo) * unit(rng);
        const double start = mid - long_rr / 2, end = mid + long_rr / 2;
        auto jitter = [&] { return cfg.rr_jitter_ms * cfg.fs / 1000.0 * std::clamp(gauss(rng), -2.0, 2.0); };

        std::vector<double> before;
        for (double t = start - (base_rr + jitter()); t >= margin; t -= base_rr + jitter()) before.push_back(t);
        std::vector<double> beats(before.rbegin(), before.rend());
        beats.push_back(start);
        rec.long_interval = beats.size() - 1;
        for (double t = end; t < len - margin; t += base_rr + jitter()) beats.push_back(t);
        for (double b : beats) rec.r_positions.push_back(static_cast<std::size_t>(std::llround(b)));

        BeatShape shape;
        shape.r_amp = 0.8 + 0.4 * unit(rng);
        shape.t_amp = 0.15 + 0.2 * unit(rng);
        SynthNoise noise;
        noise.white_sd = 0.015;
        noise.drift_amplitude = 0.15 * unit(rng);
        noise.drift_phase = 2 * std::numbers::pi * unit(rng);
        const auto signal = synth_beat_train(rec.r_positions, cfg.fs, cfg.length, shape, noise, rng);

        rec.record.id = "syn" + std::string(5 - std::min<std::size_t>(5, std::to_string(r).size()), '0') + std::to_string(r);
        rec.record.sampling_rate = cfg.fs;
        rec.record.label = labels.at(rec.class_index);
        rec.record.samples.assign(signal.begin(), signal.end());
        corpus.push_back(std::move(rec));
    }
    return corpus;
}

Manifest write_synth_corpus(const std::filesystem::path& dir, std::span<const SynthRecord> corpus) {
    std::filesystem::create_directories(dir / "records");
    Manifest manifest;
    manifest.base_dir = dir;
    for (const auto& rec : corpus) {
        const std::string rel = "records/" + rec.record.id + ".f32";
        write_record(dir / rel, rec.record);
        manifest.entries.push_back({rec.record.id, rel, rec.record.label, std::nullopt});
    }
    write_manifest(dir / "manifest.csv", manifest);
    return manifest;
}

}  // namespace exg
