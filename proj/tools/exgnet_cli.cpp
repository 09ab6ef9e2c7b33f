// exgnet: one binary, one subcommand per pipeline stage. Stages talk through
// files; every subcommand prints a one-line JSON summary on stdout.
//
// Exit codes: 0 ok, 1 usage, 2 data integrity, 3 runtime failure.

#include <algorithm>
#include <functional>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "exgnet/config.hpp"
#include "exgnet/errors.hpp"
#include "exgnet/synth.hpp"
#include "exgnet/text.hpp"
#include "exgnet/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace exg;

namespace {

struct Flags {
    std::string manifest, config, out, preset, mode = "features";
    std::optional<std::uint64_t> seed;
    std::optional<int> fold;
    int parallel_folds = 1;
    // synth only
    std::size_t n = 200, classes = 2;
};

RunConfig resolve(const Flags& f) {
    const KeyValues file = f.config.empty() ? KeyValues{} : read_key_values(f.config);
    KeyValues over;
    if (!f.preset.empty()) over.emplace_back("preset", f.preset);
    if (f.seed) over.emplace_back("seed", std::to_string(*f.seed));
    if (!f.manifest.empty()) over.emplace_back("paths.manifest", f.manifest);
    return RunConfig::resolve(file, over);
}

fs::path require_out(const Flags& f) {
    if (f.out.empty()) throw UsageError("--out is required");
    return f.out;
}

void ensure_parent(const fs::path& file) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

std::ofstream open_out(const fs::path& file) {
    ensure_parent(file);
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot write " + file.string());
    return out;
}

Manifest load(const RunConfig& cfg) {
    if (cfg.manifest.empty()) throw UsageError("no manifest: pass --manifest or set paths.manifest");
    return load_manifest(cfg.manifest, cfg.labels);
}

std::vector<EcgRecord> load_all(const Manifest& m, const std::vector<ManifestEntry>& entries) {
    std::vector<EcgRecord> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(load_record(m, e));
    return out;
}

// Folds from the manifest when every row has one, otherwise the seeded
// stratified assignment.
Manifest with_folds(Manifest m, const RunConfig& cfg) {
    for (const auto& e : m.entries)
        if (!e.fold) return assign_folds(std::move(m), static_cast<int>(cfg.k_folds), cfg.seed);
    return m;
}

PrepareOptions prepare_options(const RunConfig& cfg, bool hrv = true) {
    PrepareOptions o;
    o.hrv = hrv;
    o.preprocess = cfg.preprocess;
    o.gtcam = cfg.gtcam;
    return o;
}

std::string csv_num(double v) { return format_double(v); }

void write_row(std::ostream& out, const std::string& id, std::span<const double> values) {
    out << id;
    for (double v : values) out << ',' << csv_num(v);
    out << '\n';
}

std::vector<int> folds_to_run(const Flags& f, const RunConfig& cfg) {
    if (f.fold) {
        if (*f.fold < 0 || static_cast<std::size_t>(*f.fold) >= cfg.k_folds)
            throw UsageError("--fold must lie in [0, " + std::to_string(cfg.k_folds - 1) + "]");
        return {*f.fold};
    }
    std::vector<int> all(cfg.k_folds);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    return all;
}

fs::path fold_dir(const RunConfig& cfg, int fold) { return cfg.run_dir() / ("fold" + std::to_string(fold)); }

json metrics_json(const Metrics& m) {
    return {{"accuracy", m.accuracy},
            {"macro_f1", m.macro_f1},
            {"macro_sensitivity", m.macro_sensitivity},
            {"macro_specificity", m.macro_specificity}};
}

void write_metrics_csv(const fs::path& path, const LabelSet& labels, const Metrics& m) {
    auto out = open_out(path);
    out << "class,tp,fn,fp,tn,accuracy,sensitivity,specificity,precision,f1\n";
    for (std::size_t c = 0; c < m.per_class.size(); ++c) {
        const auto& k = m.per_class[c];
        out << to_string(labels.at(c)) << ',' << k.tp << ',' << k.fn << ',' << k.fp << ',' << k.tn << ','
            << csv_num(k.accuracy) << ',' << csv_num(k.sensitivity) << ',' << csv_num(k.specificity) << ','
            << csv_num(k.precision) << ',' << csv_num(k.f1) << '\n';
    }
    // averages are unweighted over classes
    out << "macro,,,,," << csv_num(m.accuracy) << ',' << csv_num(m.macro_sensitivity) << ','
        << csv_num(m.macro_specificity) << ",," << csv_num(m.macro_f1) << '\n';
}

// --- subcommands ------------------------------------------------------------

json cmd_synth(const Flags& f) {
    SynthCorpusConfig sc;
    sc.n_records = f.n;
    sc.n_classes = f.classes;
    sc.seed = f.seed.value_or(1);
    if (sc.n_records == 0 || sc.n_classes < 2) throw UsageError("synth needs --n >= 1 and --classes >= 2");
    const fs::path dir = require_out(f);
    fs::create_directories(dir);
    const auto corpus = synth_corpus(sc);
    write_synth_corpus(dir, corpus);
    return {{"records", corpus.size()}, {"classes", sc.n_classes}, {"seed", sc.seed},
            {"outputs", {{"manifest", (dir / "manifest.csv").string()}, {"records", (dir / "records").string()}}}};
}

json cmd_ingest(const Flags& f) {
    const auto cfg = resolve(f);
    auto m = load(cfg);
    load_all(m, m.entries);  // length and format checks on every record
    const bool had_folds = std::all_of(m.entries.begin(), m.entries.end(), [](const auto& e) { return e.fold; });
    m = with_folds(std::move(m), cfg);

    const fs::path out = require_out(f);
    ensure_parent(out);
    const fs::path out_dir = fs::absolute(out).parent_path();
    Manifest written = m;
    written.base_dir = out_dir;
    for (auto& e : written.entries) e.path = fs::relative(fs::absolute(m.resolve(e)), out_dir).generic_string();
    write_manifest(out, written);

    json per_fold = json::array();
    for (std::size_t k = 0; k < cfg.k_folds; ++k) per_fold.push_back(m.fold_members(static_cast<int>(k)).size());
    return {{"records", m.entries.size()}, {"dropped_rows", m.dropped_rows}, {"folds_assigned", !had_folds},
            {"fold_sizes", per_fold}, {"outputs", {{"manifest", out.string()}}}};
}

json cmd_preprocess(const Flags& f) {
    const auto cfg = resolve(f);
    const auto m = load(cfg);
    const fs::path dir = require_out(f);
    fs::create_directories(dir / "records");
    Manifest written;
    written.base_dir = dir;
    for (const auto& e : m.entries) {
        const auto rec = load_record(m, e);
        const auto clean = preprocess_record(rec, cfg.preprocess);
        const std::vector<float> samples(clean.begin(), clean.end());
        write_samples(dir / "records" / (e.id + ".f32"), samples);
        written.entries.push_back({e.id, "records/" + e.id + ".f32", e.label, e.fold});
    }
    write_manifest(dir / "manifest.csv", written);
    return {{"records", written.entries.size()}, {"outputs", {{"manifest", (dir / "manifest.csv").string()}}}};
}

json cmd_hrv(const Flags& f) {
    const auto cfg = resolve(f);
    const auto m = load(cfg);
    const fs::path path = require_out(f);
    auto out = open_out(path);
    out << "id";
    for (auto name : kFeatureNames) out << ',' << name;
    out << '\n';
    std::size_t ok = 0, insufficient = 0;
    for (const auto& e : m.entries) {
        const auto p = prepare_record(load_record(m, e), cfg.model, cfg.labels, prepare_options(cfg));
        if (p.features) {
            write_row(out, e.id, p.features->values);
            ++ok;
        } else {
            // too few beats: the row is kept with empty fields
            out << e.id << std::string(kFeatureCount, ',') << '\n';
            ++insufficient;
        }
    }
    return {{"records", ok + insufficient}, {"with_features", ok}, {"insufficient_beats", insufficient},
            {"outputs", {{"features", path.string()}}}};
}

json cmd_gtcam(const Flags& f) {
    const auto cfg = resolve(f);
    const auto m = load(cfg);
    const fs::path path = require_out(f);
    auto out = open_out(path);
    out << "id";
    for (std::size_t s = 0; s < cfg.gtcam.n_segments; ++s) out << ",s" << s;
    out << '\n';
    std::size_t empty = 0, insufficient = 0;
    for (const auto& e : m.entries) {
        const auto mask = generate_gt_cam_or_empty(load_record(m, e), cfg.gtcam);
        insufficient += mask.insufficient_beats ? 1 : 0;
        empty += mask.all_zero() ? 1 : 0;
        write_row(out, e.id, mask.values);
    }
    return {{"records", m.entries.size()}, {"all_zero_masks", empty}, {"insufficient_beats", insufficient},
            {"outputs", {{"masks", path.string()}}}};
}

void write_epoch_log(const fs::path& path, const std::vector<EpochLog>& epochs) {
    auto out = open_out(path);
    out << "epoch,lr,loss_total,loss_ncc,val_acc,val_f1\n";
    for (const auto& e : epochs)
        out << e.epoch << ',' << csv_num(e.lr) << ',' << csv_num(e.loss_total) << ',' << csv_num(e.loss_ncc) << ','
            << csv_num(e.val_acc) << ',' << csv_num(e.val_f1) << '\n';
}

json cmd_train(const Flags& f) {
    auto cfg = resolve(f);
    if (!f.out.empty()) cfg.runs_dir = f.out;
    if (f.parallel_folds < 1) throw UsageError("--parallel-folds must be >= 1");
    const auto m = with_folds(load(cfg), cfg);
    const auto folds = folds_to_run(f, cfg);

    const auto records = load_all(m, m.entries);
    const auto prepared = prepare_records(records, cfg.model, cfg.labels, prepare_options(cfg));
    std::vector<int> fold_of;
    for (const auto& e : m.entries) fold_of.push_back(*e.fold);

    const fs::path run_dir = cfg.run_dir();
    fs::create_directories(run_dir);
    open_out(run_dir / "run.cfg") << cfg.to_text();

    std::vector<TrainResult> runs;
    if (folds.size() > 1) {
        auto cv = cross_validate(prepared, fold_of, cfg.model, cfg.train, static_cast<int>(cfg.k_folds),
                                 f.parallel_folds);
        runs = std::move(cv.runs);
    } else {
        std::vector<PreparedRecord> train, val;
        for (std::size_t i = 0; i < prepared.size(); ++i)
            (fold_of[i] == folds[0] ? val : train).push_back(prepared[i]);
        runs.push_back(train_fold(train, val, cfg.model, cfg.train));
    }

    json per_fold = json::array();
    for (std::size_t i = 0; i < folds.size(); ++i) {
        const fs::path dir = fold_dir(cfg, folds[i]);
        fs::create_directories(dir / "best");
        fs::create_directories(dir / "last");
        save_trained(dir / "best", runs[i].best);
        save_trained(dir / "last", runs[i].last);
        write_epoch_log(dir / "log.csv", runs[i].epochs);
        per_fold.push_back({{"fold", folds[i]},
                            {"best_epoch", runs[i].best_epoch},
                            {"best_val_f1", runs[i].best_val_f1},
                            {"checkpoint", (dir / "best").string()},
                            {"log", (dir / "log.csv").string()}});
    }
    return {{"records", prepared.size()}, {"run_dir", run_dir.string()}, {"config_hash", run_dir.filename().string()},
            {"folds", per_fold}};
}

EvalMode parse_mode(const std::string& mode) {
    if (mode == "base") return EvalMode::BaseOnly;
    if (mode == "features") return EvalMode::WithFeatures;
    throw UsageError("--mode must be base or features");
}

struct FoldJob {
    int fold;
    TrainedModel model;
    std::vector<ManifestEntry> entries;
};

std::vector<FoldJob> fold_jobs(const Flags& f, const RunConfig& cfg, const Manifest& m) {
    std::vector<FoldJob> jobs;
    for (int fold : folds_to_run(f, cfg)) {
        const fs::path dir = fold_dir(cfg, fold) / "best";
        if (!fs::exists(dir)) throw UsageError("no checkpoint at " + dir.string() + "; run train first");
        jobs.push_back({fold, load_trained(dir), m.fold_members(fold)});
    }
    return jobs;
}

json cmd_evaluate(const Flags& f) {
    const auto cfg = resolve(f);
    const auto mode = parse_mode(f.mode);
    const auto m = with_folds(load(cfg), cfg);
    const fs::path dir = require_out(f);
    fs::create_directories(dir);

    auto pred = open_out(dir / "predictions.csv");
    pred << "id,fold,true,predicted";
    for (std::size_t c = 0; c < cfg.labels.size(); ++c) pred << ",p_" << to_string(cfg.labels.at(c));
    pred << '\n';

    Confusion total(cfg.labels.size(), std::vector<std::size_t>(cfg.labels.size()));
    Metrics average;
    json per_fold = json::array();
    const auto jobs = fold_jobs(f, cfg, m);
    for (const auto& job : jobs) {
        const auto report = evaluate(job.model, load_all(m, job.entries), cfg.labels, mode, cfg.preprocess);
        const auto& probs = mode == EvalMode::BaseOnly ? report.base_probs : report.joint_probs;
        for (std::size_t i = 0; i < report.ids.size(); ++i) {
            pred << report.ids[i] << ',' << job.fold << ',' << to_string(cfg.labels.at(report.truth[i])) << ','
                 << to_string(cfg.labels.at(report.predicted[i]));
            for (double p : probs[i]) pred << ',' << csv_num(p);
            pred << '\n';
        }
        for (std::size_t r = 0; r < total.size(); ++r)
            for (std::size_t c = 0; c < total.size(); ++c) total[r][c] += report.confusion[r][c];
        const double n = static_cast<double>(jobs.size());
        average.accuracy += report.metrics.accuracy / n;
        average.macro_f1 += report.metrics.macro_f1 / n;
        average.macro_sensitivity += report.metrics.macro_sensitivity / n;
        average.macro_specificity += report.metrics.macro_specificity / n;
        per_fold.push_back({{"fold", job.fold}, {"records", report.ids.size()}, {"metrics", metrics_json(report.metrics)}});
    }
    const auto aggregated = metrics_from_confusion(total);
    write_metrics_csv(dir / "metrics.csv", cfg.labels, aggregated);
    return {{"mode", f.mode}, {"averaging", "macro"}, {"folds", per_fold}, {"fold_average", metrics_json(average)},
            {"aggregated", metrics_json(aggregated)}, {"confusion", total},
            {"outputs", {{"predictions", (dir / "predictions.csv").string()}, {"metrics", (dir / "metrics.csv").string()}}}};
}

json cmd_explain(const Flags& f) {
    const auto cfg = resolve(f);
    const auto m = with_folds(load(cfg), cfg);
    const fs::path path = require_out(f);
    auto out = open_out(path);
    out << "id,fold,true,predicted,ncc,l1,l2,degenerate";
    for (std::size_t s = 0; s < cfg.model.n_segments; ++s) out << ",cam" << s;
    for (std::size_t s = 0; s < cfg.model.n_segments; ++s) out << ",gt" << s;
    out << '\n';

    std::vector<CamReport> all;
    for (const auto& job : fold_jobs(f, cfg, m)) {
        const auto prepared = prepare_records(load_all(m, job.entries), job.model.model, cfg.labels, prepare_options(cfg));
        for (auto& r : explain_records(job.model, prepared)) {
            out << r.id << ',' << job.fold << ',' << to_string(cfg.labels.at(r.true_class)) << ','
                << to_string(cfg.labels.at(r.predicted_class)) << ',' << csv_num(r.alignment.ncc) << ','
                << csv_num(r.alignment.l1) << ',' << csv_num(r.alignment.l2) << ','
                << (r.alignment.degenerate ? 1 : 0);
            for (double v : r.pred_cam) out << ',' << csv_num(v);
            for (double v : r.gt_cam.values) out << ',' << csv_num(v);
            out << '\n';
            all.push_back(std::move(r));
        }
    }
    return {{"records", all.size()}, {"mean_alignment_ncc", mean_alignment_ncc(all)},
            {"outputs", {{"cams", path.string()}}}};
}

json cmd_embeddings(const Flags& f) {
    const auto cfg = resolve(f);
    const auto m = with_folds(load(cfg), cfg);
    const fs::path path = require_out(f);
    auto out = open_out(path);
    out << "id,fold,label";
    for (std::size_t d = 0; d < cfg.model.embed_dim; ++d) out << ",e" << d;
    out << '\n';
    std::size_t rows = 0;
    for (const auto& job : fold_jobs(f, cfg, m)) {
        // embeddings need no HRV features
        const auto prepared =
            prepare_records(load_all(m, job.entries), job.model.model, cfg.labels, prepare_options(cfg, false));
        const auto emb = export_embeddings(job.model, prepared);
        for (std::size_t i = 0; i < prepared.size(); ++i, ++rows) {
            out << prepared[i].id << ',' << job.fold << ',' << to_string(cfg.labels.at(prepared[i].label));
            for (double v : emb[i]) out << ',' << csv_num(v);
            out << '\n';
        }
    }
    return {{"records", rows}, {"width", cfg.model.embed_dim}, {"outputs", {{"embeddings", path.string()}}}};
}

int run_guarded(const std::string& name, const std::function<json()>& body) {
    json summary{{"command", name}};
    int code = 0;
    try {
        auto result = body();
        summary["status"] = "ok";
        summary.update(result);
    } catch (const UsageError& e) {
        code = 1;
        summary["status"] = "usage_error";
        summary["message"] = e.what();
    } catch (const IntegrityError& e) {
        code = 2;
        summary["status"] = "integrity_error";
        summary["message"] = e.what();
    } catch (const std::exception& e) {
        code = 3;
        summary["status"] = "runtime_error";
        summary["message"] = e.what();
    }
    if (code != 0) std::cerr << "exgnet " << name << ": " << summary["message"].get<std::string>() << '\n';
    std::cout << summary.dump() << std::endl;
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EXGnet single-lead ECG pipeline"};
    app.require_subcommand(1);
    Flags flags;

    struct Spec {
        const char* name;
        const char* help;
        std::function<json(const Flags&)> run;
    };
    const std::vector<Spec> specs = {
        {"ingest", "validate a manifest and its records, assign folds, write the manifest", cmd_ingest},
        {"preprocess", "baseline removal and min-max scaling; writes records plus a manifest", cmd_preprocess},
        {"hrv-features", "17 HRV features per record as CSV", cmd_hrv},
        {"gtcam", "ground-truth CAM masks per record as CSV", cmd_gtcam},
        {"train", "train one fold (--fold) or every fold", cmd_train},
        {"evaluate", "evaluate trained folds on their held-out records", cmd_evaluate},
        {"explain", "Grad-CAM maps and their alignment with the masks", cmd_explain},
        {"export-embeddings", "GAP embeddings per record as CSV", cmd_embeddings},
        {"synth", "generate the synthetic RR-anomaly corpus", cmd_synth},
    };

    std::string chosen;
    std::function<json(const Flags&)> chosen_run;
    for (const auto& s : specs) {
        auto* sub = app.add_subcommand(s.name, s.help);
        sub->add_option("--out", flags.out,
                        std::string(s.name) == "train" ? "runs directory (overrides paths.runs)" : "output file or directory");
        sub->add_option("--seed", flags.seed, "seed (overrides the config file)");
        if (std::string(s.name) == "synth") {
            sub->add_option("--n", flags.n, "number of records")->capture_default_str();
            sub->add_option("--classes", flags.classes, "number of classes")->capture_default_str();
        } else {
            sub->add_option("--manifest", flags.manifest, "manifest CSV (overrides paths.manifest)");
            sub->add_option("--config", flags.config, "key = value config file");
            sub->add_option("--preset", flags.preset, "paper or desk (overrides the config file)")
                ->check(CLI::IsMember({"paper", "desk"}));
        }
        const std::string name = s.name;
        if (name == "train" || name == "evaluate" || name == "explain" || name == "export-embeddings")
            sub->add_option("--fold", flags.fold, "single fold; default every fold");
        if (name == "evaluate")
            sub->add_option("--mode", flags.mode, "base or features")->check(CLI::IsMember({"base", "features"}));
        if (name == "train")
            sub->add_option("--parallel-folds", flags.parallel_folds, "folds trained concurrently")
                ->capture_default_str();
        sub->callback([&chosen, &chosen_run, s] {
            chosen = s.name;
            chosen_run = s.run;
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }
    return run_guarded(chosen, [&] { return chosen_run(flags); });
}
