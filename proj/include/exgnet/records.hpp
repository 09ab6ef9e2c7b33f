#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace exg {

enum class ClassLabel { SR, SB, ST, SA, AF_AFIB, AT_SVT };

inline constexpr ClassLabel kAllLabels[] = {ClassLabel::SR, ClassLabel::SB,      ClassLabel::ST,
                                           ClassLabel::SA, ClassLabel::AF_AFIB, ClassLabel::AT_SVT};

std::string_view to_string(ClassLabel label);
std::optional<ClassLabel> parse_label(std::string_view token);

/// Ordered set of classes a dataset uses; class index = position in the set.
class LabelSet {
public:
    LabelSet() = default;
    explicit LabelSet(std::vector<ClassLabel> labels);

    /// Chapman-Shaoxing drops SA, Ningbo drops AT_SVT.
    static LabelSet chapman();
    static LabelSet ningbo();
    /// First `n` labels of SR, SB, ST, AF_AFIB, AT_SVT, SA.
    static LabelSet first(std::size_t n);
    /// "chapman", "ningbo" or a comma list of label tokens.
    static LabelSet parse(std::string_view spec);

    std::size_t size() const { return labels_.size(); }
    bool contains(ClassLabel label) const;
    std::size_t index_of(ClassLabel label) const;
    ClassLabel at(std::size_t index) const { return labels_.at(index); }
    const std::vector<ClassLabel>& labels() const { return labels_; }
    std::string to_spec() const;

private:
    std::vector<ClassLabel> labels_;
};

inline constexpr int kDefaultSamplingRate = 500;
inline constexpr std::size_t kDefaultRecordLength = 5000;

struct EcgRecord {
    std::string id;
    int sampling_rate = kDefaultSamplingRate;
    std::vector<float> samples;
    ClassLabel label = ClassLabel::SR;

    std::size_t length() const { return samples.size(); }
    double duration_seconds() const { return static_cast<double>(samples.size()) / sampling_rate; }
};

std::vector<double> to_double(std::span<const float> samples);

struct ManifestEntry {
    std::string id;
    std::string path;  // relative to the manifest directory
    ClassLabel label = ClassLabel::SR;
    std::optional<int> fold;
};

struct Manifest {
    std::filesystem::path base_dir;
    std::vector<ManifestEntry> entries;
    /// Rows whose label is valid but outside the active LabelSet.
    std::size_t dropped_rows = 0;

    std::filesystem::path resolve(const ManifestEntry& entry) const { return base_dir / entry.path; }
    std::vector<ManifestEntry> fold_members(int fold) const;
    std::vector<ManifestEntry> excluding_fold(int fold) const;
};

/// Parses and validates `id,path,label,fold`. Rows with labels outside
/// `labels` are dropped; unknown tokens, duplicates and missing files throw.
Manifest load_manifest(const std::filesystem::path& path, const LabelSet& labels,
                       bool check_files = true);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Reads little-endian binary32 samples. Throws IntegrityError when the value
/// count differs from `expected_length` (0 disables the check).
std::vector<float> read_samples(const std::filesystem::path& path, std::size_t expected_length = 0);
void write_samples(const std::filesystem::path& path, std::span<const float> samples);

EcgRecord load_record(const Manifest& manifest, const ManifestEntry& entry,
                      std::size_t expected_length = kDefaultRecordLength,
                      int sampling_rate = kDefaultSamplingRate);
void write_record(const std::filesystem::path& path, const EcgRecord& record);

/// SplitMix64; the fold shuffle is defined in terms of this generator so it
/// can be reproduced outside C++.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
    std::uint64_t next();

private:
    std::uint64_t state_;
};

/// Stratified k-fold assignment. For each class in enum order, the class
/// members (in manifest order) are Fisher-Yates shuffled with
/// j = next() % (i + 1) for i = n-1 .. 1, using one SplitMix64 stream seeded
/// with `seed` and shared across classes. Shuffled members are then dealt to
/// folds round-robin from a cursor that carries over between classes.
Manifest assign_folds(Manifest manifest, int k, std::uint64_t seed);

}  // namespace exg
