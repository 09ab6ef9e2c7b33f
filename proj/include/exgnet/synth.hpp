#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "exgnet/records.hpp"

namespace exg {

struct BeatShape {
    double p_amp = 0.12, q_amp = -0.10, r_amp = 1.0, s_amp = -0.15, t_amp = 0.25;
};

struct SynthNoise {
    double white_sd = 0.02;
    double drift_amplitude = 0.0;
    double drift_hz = 0.3;
    double drift_phase = 0.0;
};

/// Sum-of-Gaussians ECG with R waves at the given sample positions plus
/// optional white noise and sinusoidal baseline drift.
std::vector<double> synth_beat_train(std::span<const std::size_t> r_positions, int fs, std::size_t length,
                                     const BeatShape& shape, const SynthNoise& noise, std::mt19937_64& rng);

/// R positions every `rr_ms` starting at `first`, stopping before `length`.
std::vector<std::size_t> regular_peaks(double rr_ms, std::size_t first, std::size_t length, int fs);

struct SynthCorpusConfig {
    std::size_t n_records = 200;
    std::size_t n_classes = 2;
    std::uint64_t seed = 1;
    int fs = kDefaultSamplingRate;
    std::size_t length = kDefaultRecordLength;
    /// The planted long interval lasts this multiple of the base RR.
    double long_rr_factor = 1.6;
    double rr_jitter_ms = 8.0;
};

struct SynthRecord {
    EcgRecord record;
    std::vector<std::size_t> r_positions;
    /// Index in r_positions of the beat that opens the long interval.
    std::size_t long_interval = 0;
    std::size_t class_index = 0;
};

/// Class c places one long RR interval whose midpoint lies in the c-th of
/// n_classes equal regions of the record. Classes alternate over records.
std::vector<SynthRecord> synth_corpus(const SynthCorpusConfig& cfg);

/// Writes `records/<id>.f32` and `manifest.csv` (fold column empty) under `dir`.
Manifest write_synth_corpus(const std::filesystem::path& dir, std::span<const SynthRecord> corpus);

}  // namespace exg
