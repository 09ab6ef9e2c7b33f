#include "exgnet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "exgnet/errors.hpp"
#include "exgnet/text.hpp"

namespace exg {

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
    KeyValues out;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto body = trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string_view::npos) throw ParseError(origin, line_no, "expected key = value");
        std::string key(trim(body.substr(0, eq)));
        std::string value(trim(body.substr(eq + 1)));
        if (key.empty()) throw ParseError(origin, line_no, "empty key");
        if (!seen.insert(key).second) throw ParseError(origin, line_no, "duplicate key '" + key + "'");
        out.emplace_back(std::move(key), std::move(value));
    }
    return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_key_values(text.str(), path.string());
}

namespace {

std::optional<std::string> find_key(const KeyValues& kv, const std::string& key) {
    for (const auto& [k, v] : kv)
        if (k == key) return v;
    return std::nullopt;
}

std::size_t as_size(const std::string& key, const std::string& value) {
    auto v = parse_int(value);
    if (!v || *v < 0) throw UsageError("bad integer for " + key + ": '" + value + "'");
    return static_cast<std::size_t>(*v);
}

double as_double(const std::string& key, const std::string& value) {
    auto v = parse_double(value);
    if (!v) throw UsageError("bad number for " + key + ": '" + value + "'");
    return *v;
}

bool as_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw UsageError("bad boolean for " + key + ": '" + value + "'");
}

std::string cfg_bool(bool b) { return b ? "true" : "false"; }

std::string join_doubles(const std::vector<double>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + format_double(values[i]);
    return out;
}

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "preset" || key == "dataset.labels") return;  // consumed first
    if (key == "seed") {
        cfg.seed = as_size(key, value);
        cfg.train.seed = cfg.seed;
    } else if (key == "dataset.sampling_rate") {
        if (as_size(key, value) != static_cast<std::size_t>(kDefaultSamplingRate))
            throw UsageError("only 500 Hz records are supported");
    } else if (key == "cv.k") {
        cfg.k_folds = as_size(key, value);
    } else if (key == "paths.manifest") {
        cfg.manifest = value;
    } else if (key == "paths.runs") {
        cfg.runs_dir = value;
    } else if (key == "preprocess.filter_widths") {
        std::vector<double> widths;
        for (const auto& tok : split(value, ',')) widths.push_back(as_double(key, std::string(trim(tok))));
        cfg.preprocess.filter_widths_seconds = widths;
    } else if (key == "preprocess.normalize_lo") {
        cfg.preprocess.normalize_lo = as_double(key, value);
    } else if (key == "preprocess.normalize_hi") {
        cfg.preprocess.normalize_hi = as_double(key, value);
    } else if (key == "preprocess.cascade") {
        cfg.preprocess.cascade = as_bool(key, value);
    } else if (key == "gtcam.mask_alpha") {
        cfg.gtcam.mask_alpha = as_double(key, value);
    } else if (key == "gtcam.signed_deviation") {
        cfg.gtcam.signed_deviation = as_bool(key, value);
    } else if (key == "gtcam.refractory_s") {
        cfg.gtcam.detector.refractory_seconds = as_double(key, value);
    } else if (key.starts_with("model.")) {
        if (key == "model.preset") throw UsageError("set the preset with the top-level 'preset' key");
        cfg.model.apply_kv(key, value);
    } else if (key.starts_with("train.")) {
        if (key == "train.preset" || key == "train.seed")
            throw UsageError("'" + key + "' is set through the top-level key");
        cfg.train.apply_kv(key, value);
    } else {
        throw UsageError("unknown config key '" + key + "'");
    }
}

}  // namespace

RunConfig RunConfig::resolve(const KeyValues& file, const KeyValues& overrides) {
    auto pick = [&](const std::string& key) {
        auto v = find_key(overrides, key);
        return v ? v : find_key(file, key);
    };
    RunConfig cfg;
    cfg.preset = pick("preset").value_or("paper");
    if (cfg.preset != "paper" && cfg.preset != "desk")
        throw UsageError("unknown preset '" + cfg.preset + "' (expected paper or desk)");
    if (auto labels = pick("dataset.labels")) cfg.labels = LabelSet::parse(*labels);
    else cfg.labels = cfg.preset == "desk" ? LabelSet::first(2) : LabelSet::chapman();
    if (cfg.labels.size() < 2) throw UsageError("dataset.labels needs at least two classes");

    cfg.model = ModelConfig::for_preset(cfg.preset, cfg.labels.size());
    cfg.train = TrainConfig::for_preset(cfg.preset);
    // The Ningbo profile trains for 100 epochs instead of 200.
    if (cfg.preset == "paper" && pick("dataset.labels") && trim(*pick("dataset.labels")) == "ningbo")
        cfg.train.epochs = 100;
    cfg.gtcam.n_segments = cfg.model.n_segments;

    for (const auto& [k, v] : file)
        if (!find_key(overrides, k)) apply_key(cfg, k, v);
    for (const auto& [k, v] : overrides) apply_key(cfg, k, v);
    cfg.gtcam.n_segments = cfg.model.n_segments;
    cfg.validate();
    return cfg;
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    preprocess.validate();
    if (train.epochs < 1) throw UsageError("train.epochs must be >= 1");
    if (model.n_classes != labels.size())
        throw UsageError("model.n_classes (" + std::to_string(model.n_classes) + ") differs from the label set size (" +
                         std::to_string(labels.size()) + ")");
    if (k_folds < 2) throw UsageError("cv.k must be >= 2");
    if (!(gtcam.mask_alpha >= 0 && gtcam.mask_alpha <= 1)) throw UsageError("gtcam.mask_alpha must lie in [0, 1]");
}

std::string RunConfig::to_text() const {
    std::map<std::string, std::string> kv;
    for (const auto& [k, v] : model.to_kv())
        if (k != "model.preset") kv[k] = v;
    for (const auto& [k, v] : train.to_kv())
        if (k != "train.preset" && k != "train.seed") kv[k] = v;
    kv["preset"] = preset;
    kv["dataset.labels"] = labels.to_spec();
    kv["dataset.sampling_rate"] = std::to_string(kDefaultSamplingRate);
    kv["seed"] = std::to_string(seed);
    kv["cv.k"] = std::to_string(k_folds);
    kv["paths.manifest"] = manifest.string();
    kv["paths.runs"] = runs_dir.string();
    kv["preprocess.filter_widths"] = join_doubles(preprocess.filter_widths_seconds);
    kv["preprocess.normalize_lo"] = format_double(preprocess.normalize_lo);
    kv["preprocess.normalize_hi"] = format_double(preprocess.normalize_hi);
    kv["preprocess.cascade"] = cfg_bool(preprocess.cascade);
    kv["gtcam.mask_alpha"] = format_double(gtcam.mask_alpha);
    kv["gtcam.signed_deviation"] = cfg_bool(gtcam.signed_deviation);
    kv["gtcam.refractory_s"] = format_double(gtcam.detector.refractory_seconds);
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t RunConfig::hash() const {
    std::string text;
    std::istringstream in(to_text());
    std::string line;
    while (std::getline(in, line))
        if (!line.starts_with("seed =") && !line.starts_with("paths.")) text += line + "\n";
    return fnv1a64(text);
}

std::filesystem::path RunConfig::run_dir() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
    return runs_dir / (std::string(buf) + "-seed" + std::to_string(seed));
}

}  // namespace exg
