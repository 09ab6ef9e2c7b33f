#include "exgnet/nn/checkpoint.hpp"

#include <fstream>
#include <set>

#include "exgnet/errors.hpp"
#include "exgnet/records.hpp"
#include "exgnet/text.hpp"

namespace exg::nn {

StateDict snapshot(const NamedArrays& arrays) {
    StateDict state;
    for (const auto& a : arrays) {
        if (!state.entries.emplace(a.name, StateDict::Entry{a.shape, *a.values}).second)
            throw UsageError("duplicate array name " + a.name);
    }
    return state;
}

void restore(const NamedArrays& arrays, const StateDict& state, bool allow_extra) {
    std::set<std::string> used;
    for (const auto& a : arrays) {
        auto it = state.entries.find(a.name);
        if (it == state.entries.end()) throw IntegrityError("checkpoint is missing array " + a.name);
        if (it->second.shape != a.shape)
            throw IntegrityError("checkpoint array " + a.name + " has shape " + shape_str(it->second.shape) +
                                 ", model expects " + shape_str(a.shape));
        *a.values = it->second.values;
        used.insert(a.name);
    }
    if (!allow_extra)
        for (const auto& [name, entry] : state.entries)
            if (!used.count(name)) throw IntegrityError("checkpoint has unexpected array " + name);
}

void save_checkpoint(const std::filesystem::path& dir, const StateDict& state) {
    std::filesystem::create_directories(dir);
    std::ofstream index(dir / "index.txt");
    if (!index) throw IoError("cannot write checkpoint index in " + dir.string());
    std::vector<float> flat;
    for (const auto& [name, entry] : state.entries) {
        std::string shape;
        for (std::size_t i = 0; i < entry.shape.size(); ++i) shape += (i ? "x" : "") + std::to_string(entry.shape[i]);
        index << name << '\t' << shape << '\t' << flat.size() << '\t' << entry.values.size() << '\n';
        for (double v : entry.values) flat.push_back(static_cast<float>(v));
    }
    write_samples(dir / "params.f32", flat);
}

StateDict load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream index(dir / "index.txt");
    if (!index) throw IoError("cannot open checkpoint index in " + dir.string());
    const auto flat = read_samples(dir / "params.f32");
    StateDict state;
    std::string line;
    std::size_t line_no = 0;
    const auto file = (dir / "index.txt").string();
    while (std::getline(index, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cols = split(line, '\t');
        if (cols.size() != 4) throw ParseError(file, line_no, "expected 4 tab-separated fields");
        StateDict::Entry entry;
        for (const auto& d : split(cols[1], 'x')) {
            auto v = parse_int(d);
            if (!v || *v < 0) throw ParseError(file, line_no, "bad shape");
            entry.shape.push_back(static_cast<std::size_t>(*v));
        }
        const auto offset = parse_int(cols[2]);
        const auto count = parse_int(cols[3]);
        if (!offset || !count || *offset < 0 || *count < 0) throw ParseError(file, line_no, "bad offset or count");
        if (numel(entry.shape) != static_cast<std::size_t>(*count)) throw ParseError(file, line_no, "shape/count mismatch");
        if (static_cast<std::size_t>(*offset + *count) > flat.size())
            throw IntegrityError(file + ":" + std::to_string(line_no) + ": values exceed params.f32");
        entry.values.assign(flat.begin() + *offset, flat.begin() + *offset + *count);
        state.entries.emplace(std::string(cols[0]), std::move(entry));
    }
    return state;
}

}  // namespace exg::nn
