#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "exgnet/gtcam.hpp"
#include "exgnet/model.hpp"
#include "exgnet/preprocess.hpp"
#include "exgnet/records.hpp"
#include "exgnet/trainer.hpp"

namespace exg {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// `key = value` lines; `#` starts a comment. Duplicate keys are an error.
KeyValues parse_key_values(const std::string& text, const std::string& origin = "<config>");
KeyValues read_key_values(const std::filesystem::path& path);

/// Everything a pipeline run depends on.
struct RunConfig {
    std::string preset = "paper";
    LabelSet labels = LabelSet::chapman();
    std::uint64_t seed = 0;
    std::size_t k_folds = 5;
    std::filesystem::path manifest;
    std::filesystem::path runs_dir = "runs";
    ModelConfig model;
    TrainConfig train;
    PreprocessConfig preprocess;
    GtCamConfig gtcam;

    /// Preset and label set come first (they pick the defaults), then every
    /// other key from `file`, then `overrides` on top. Unknown keys throw.
    static RunConfig resolve(const KeyValues& file, const KeyValues& overrides = {});

    void validate() const;
    /// Resolved config, one sorted `key = value` per line.
    std::string to_text() const;
    /// FNV-1a 64 over to_text() without the seed and paths.* lines, so moving
    /// the data or the runs directory keeps the name.
    std::uint64_t hash() const;
    /// runs_dir / "<hash hex>-seed<seed>".
    std::filesystem::path run_dir() const;
};

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace exg
