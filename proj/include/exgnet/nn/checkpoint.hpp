#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "exgnet/nn/layers.hpp"

namespace exg::nn {

/// In-memory copy of every named array.
struct StateDict {
    struct Entry {
        Shape shape;
        std::vector<double> values;
    };
    std::map<std::string, Entry> entries;
};

StateDict snapshot(const NamedArrays& arrays);

/// Copies matching entries into `arrays`. Missing names or shape mismatches
/// throw IntegrityError; entries not present in `arrays` are ignored when
/// `allow_extra`.
void restore(const NamedArrays& arrays, const StateDict& state, bool allow_extra = false);

/// Writes `index.txt` (one `name<TAB>shape<TAB>offset<TAB>count` line per
/// array, shape as d0xd1x...) and `params.f32` (little-endian binary32) into
/// `dir`. Values are rounded to binary32.
void save_checkpoint(const std::filesystem::path& dir, const StateDict& state);
StateDict load_checkpoint(const std::filesystem::path& dir);

}  // namespace exg::nn
