#include "exgnet/records.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "exgnet/errors.hpp"
#include "exgnet/text.hpp"

namespace exg {

std::string_view to_string(ClassLabel label) {
    switch (label) {
        case ClassLabel::SR: return "SR";
        case ClassLabel::SB: return "SB";
        case ClassLabel::ST: return "ST";
        case ClassLabel::SA: return "SA";
        case ClassLabel::AF_AFIB: return "AF_AFIB";
        case ClassLabel::AT_SVT: return "AT_SVT";
    }
    return "?";
}

std::optional<ClassLabel> parse_label(std::string_view token) {
    for (auto label : kAllLabels)
        if (to_string(label) == token) return label;
    return std::nullopt;
}

LabelSet::LabelSet(std::vector<ClassLabel> labels) : labels_(std::move(labels)) {
    std::set<ClassLabel> seen(labels_.begin(), labels_.end());
    if (seen.size() != labels_.size()) throw UsageError("label set contains duplicates");
    if (labels_.size() < 2) throw UsageError("label set needs at least two classes");
}

LabelSet LabelSet::chapman() {
    return LabelSet({ClassLabel::SR, ClassLabel::SB, ClassLabel::ST, ClassLabel::AF_AFIB, ClassLabel::AT_SVT});
}

LabelSet LabelSet::ningbo() {
    return LabelSet({ClassLabel::SR, ClassLabel::SB, ClassLabel::ST, ClassLabel::SA, ClassLabel::AF_AFIB});
}

LabelSet LabelSet::first(std::size_t n) {
    static const std::vector<ClassLabel> order = {ClassLabel::SR,      ClassLabel::SB,     ClassLabel::ST,
                                                  ClassLabel::AF_AFIB, ClassLabel::AT_SVT, ClassLabel::SA};
    if (n < 2 || n > order.size()) throw UsageError("class count must be in [2, 6]");
    return LabelSet(std::vector<ClassLabel>(order.begin(), order.begin() + static_cast<long>(n)));
}

LabelSet LabelSet::parse(std::string_view spec) {
    const auto trimmed = trim(spec);
    if (trimmed == "chapman") return chapman();
    if (trimmed == "ningbo") return ningbo();
    std::vector<ClassLabel> labels;
    for (const auto& token : split(trimmed, ',')) {
        auto label = parse_label(trim(token));
        if (!label) throw UsageError("unknown label token '" + std::string(trim(token)) + "'");
        labels.push_back(*label);
    }
    return LabelSet(std::move(labels));
}

bool LabelSet::contains(ClassLabel label) const {
    return std::find(labels_.begin(), labels_.end(), label) != labels_.end();
}

std::size_t LabelSet::index_of(ClassLabel label) const {
    auto it = std::find(labels_.begin(), labels_.end(), label);
    if (it == labels_.end()) throw UsageError("label " + std::string(to_string(label)) + " not in label set");
    return static_cast<std::size_t>(it - labels_.begin());
}

std::string LabelSet::to_spec() const {
    std::string out;
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (i) out += ',';
        out += to_string(labels_[i]);
    }
    return out;
}

std::vector<double> to_double(std::span<const float> samples) {
    return std::vector<double>(samples.begin(), samples.end());
}

std::vector<ManifestEntry> Manifest::fold_members(int fold) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
        if (e.fold && *e.fold == fold) out.push_back(e);
    return out;
}

std::vector<ManifestEntry> Manifest::excluding_fold(int fold) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
        if (!e.fold || *e.fold != fold) out.push_back(e);
    return out;
}

Manifest load_manifest(const std::filesystem::path& path, const LabelSet& labels, bool check_files) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    const std::string file = path.string();

    Manifest manifest;
    manifest.base_dir = path.parent_path();
    std::set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        if (!header_seen) {
            if (trim(line) != "id,path,label,fold") throw ParseError(file, line_no, "expected header 'id,path,label,fold'");
            header_seen = true;
            continue;
        }
        const auto cols = split(line, ',');
        if (cols.size() != 4) throw ParseError(file, line_no, "expected 4 columns, got " + std::to_string(cols.size()));
        ManifestEntry entry;
        entry.id = std::string(trim(cols[0]));
        entry.path = std::string(trim(cols[1]));
        if (entry.id.empty()) throw ParseError(file, line_no, "empty id");
        if (entry.path.empty()) throw ParseError(file, line_no, "empty path");
        const auto label_token = trim(cols[2]);
        if (label_token.find_first_of("|;+ ") != std::string_view::npos)
            throw ParseError(file, line_no, "exactly one label per record is allowed");
        auto label = parse_label(label_token);
        if (!label) throw ParseError(file, line_no, "unknown label token '" + std::string(label_token) + "'");
        entry.label = *label;
        const auto fold_token = trim(cols[3]);
        if (!fold_token.empty()) {
            auto fold = parse_int(fold_token);
            if (!fold || *fold < 0) throw ParseError(file, line_no, "bad fold index '" + std::string(fold_token) + "'");
            entry.fold = static_cast<int>(*fold);
        }
        if (!ids.insert(entry.id).second) throw IntegrityError(file + ":" + std::to_string(line_no) + ": duplicate id '" + entry.id + "'");
        if (!labels.contains(entry.label)) {
            ++manifest.dropped_rows;
            continue;
        }
        if (check_files && !std::filesystem::exists(manifest.resolve(entry)))
            throw IoError(file + ":" + std::to_string(line_no) + ": missing sample file " + manifest.resolve(entry).string());
        manifest.entries.push_back(std::move(entry));
    }
    if (!header_seen) throw ParseError(file, line_no, "empty manifest");
    return manifest;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << "id,path,label,fold\n";
    for (const auto& e : manifest.entries) {
        out << e.id << ',' << e.path << ',' << to_string(e.label) << ',';
        if (e.fold) out << *e.fold;
        out << '\n';
    }
}

std::vector<float> read_samples(const std::filesystem::path& path, std::size_t expected_length) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open sample file " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % 4 != 0)
        throw IntegrityError(path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of 4");
    const std::size_t n = bytes.size() / 4;
    if (expected_length != 0 && n != expected_length)
        throw IntegrityError(path.string() + ": expected " + std::to_string(expected_length) + " samples, found " +
                             std::to_string(n));
    std::vector<float> samples(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
        samples[i] = std::bit_cast<float>(bits);
    }
    return samples;
}

void write_samples(const std::filesystem::path& path, std::span<const float> samples) {
    std::string bytes(samples.size() * 4, '\0');
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(samples[i]);
        for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write sample file " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

EcgRecord load_record(const Manifest& manifest, const ManifestEntry& entry, std::size_t expected_length,
                      int sampling_rate) {
    if (sampling_rate != kDefaultSamplingRate)
        throw IntegrityError("record " + entry.id + ": sampling rate " + std::to_string(sampling_rate) +
                             " Hz is not supported (500 Hz only)");
    EcgRecord record;
    record.id = entry.id;
    record.label = entry.label;
    record.sampling_rate = sampling_rate;
    record.samples = read_samples(manifest.resolve(entry), expected_length);
    return record;
}

void write_record(const std::filesystem::path& path, const EcgRecord& record) {
    write_samples(path, record.samples);
}

std::uint64_t SplitMix64::next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

Manifest assign_folds(Manifest manifest, int k, std::uint64_t seed) {
    if (k < 2) throw UsageError("fold count must be >= 2");
    std::map<ClassLabel, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) by_class[manifest.entries[i].label].push_back(i);
    for (const auto& [label, members] : by_class)
        if (members.size() < static_cast<std::size_t>(k))
            throw UsageError("class " + std::string(to_string(label)) + " has " + std::to_string(members.size()) +
                             " records, fewer than k=" + std::to_string(k));

    SplitMix64 rng(seed);
    std::size_t cursor = 0;
    for (auto& [label, members] : by_class) {
        for (std::size_t i = members.size() - 1; i >= 1; --i) {
            const auto j = static_cast<std::size_t>(rng.next() % (i + 1));
            std::swap(members[i], members[j]);
        }
        for (auto index : members) {
            manifest.entries[index].fold = static_cast<int>(cursor % static_cast<std::size_t>(k));
            ++cursor;
        }
    }
    return manifest;
}

}  // namespace exg
