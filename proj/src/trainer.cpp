#include "exgnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <numeric>
#include <thread>

#include "exgnet/errors.hpp"
#include "exgnet/nn/optim.hpp"
#include "exgnet/text.hpp"

namespace exg {

TrainConfig TrainConfig::paper() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
    TrainConfig cfg;
    cfg.lr_initial = 1e-3;
    cfg.epochs = 250;
    cfg.constant_epochs = 250;
    cfg.cosine_peak = 5e-4;
    cfg.cosine_period = 10;
    cfg.halve_every = 20;
    cfg.preset = "desk";
    return cfg;
}

TrainConfig TrainConfig::for_preset(const std::string& preset) {
    if (preset == "paper") return paper();
    if (preset == "desk") return desk();
    throw UsageError("unknown preset '" + preset + "' (expected paper or desk)");
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw UsageError("train.batch_size must be >= 1");
    if (!(lr_initial > 0) || !(cosine_peak > 0)) throw UsageError("learning rates must be positive");
    if (cosine_period < 1 || halve_every < 1) throw UsageError("train.cosine_period and train.halve_every must be >= 1");
    weights.validate();
}

std::map<std::string, std::string> TrainConfig::to_kv() const {
    return {
        {"train.batch_size", std::to_string(batch_size)},
        {"train.lr_initial", format_double(lr_initial)},
        {"train.epochs", std::to_string(epochs)},
        {"train.constant_epochs", std::to_string(constant_epochs)},
        {"train.cosine_peak", format_double(cosine_peak)},
        {"train.cosine_period", std::to_string(cosine_period)},
        {"train.halve_every", std::to_string(halve_every)},
        {"train.seed", std::to_string(seed)},
        {"train.w_base", format_double(weights.w_base)},
        {"train.w_feature", format_double(weights.w_feature)},
        {"train.w_joint", format_double(weights.w_joint)},
        {"train.w_ncc", format_double(weights.w_ncc)},
        {"train.preset", preset},
    };
}

void TrainConfig::apply_kv(const std::string& key, const std::string& value) {
    auto as_size = [&](std::size_t& field) {
        auto v = parse_int(value);
        if (!v || *v < 0) throw UsageError("bad integer for " + key + ": '" + value + "'");
        field = static_cast<std::size_t>(*v);
    };
    auto as_double = [&](double& field) {
        auto v = parse_double(value);
        if (!v) throw UsageError("bad number for " + key + ": '" + value + "'");
        field = *v;
    };
    if (key == "train.batch_size") as_size(batch_size);
    else if (key == "train.lr_initial") as_double(lr_initial);
    else if (key == "train.epochs") as_size(epochs);
    else if (key == "train.constant_epochs") as_size(constant_epochs);
    else if (key == "train.cosine_peak") as_double(cosine_peak);
    else if (key == "train.cosine_period") as_size(cosine_period);
    else if (key == "train.halve_every") as_size(halve_every);
    else if (key == "train.seed") {
        auto v = parse_int(value);
        if (!v || *v < 0) throw UsageError("bad integer for " + key + ": '" + value + "'");
        seed = static_cast<std::uint64_t>(*v);
    } else if (key == "train.w_base") as_double(weights.w_base);
    else if (key == "train.w_feature") as_double(weights.w_feature);
    else if (key == "train.w_joint") as_double(weights.w_joint);
    else if (key == "train.w_ncc") as_double(weights.w_ncc);
    else if (key == "train.preset") preset = value;
    else throw UsageError("unknown config key '" + key + "'");
}

double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg) {
    if (epoch < cfg.constant_epochs) return cfg.lr_initial;
    const std::size_t t = epoch - cfg.constant_epochs;
    const double peak = cfg.cosine_peak * std::pow(0.5, static_cast<double>(t / cfg.halve_every));
    const double phase = static_cast<double>(t % cfg.cosine_period) / static_cast<double>(cfg.cosine_period);
    return peak * (1.0 + std::cos(std::numbers::pi * phase)) / 2.0;
}

PreparedRecord prepare_record(const EcgRecord& record, const ModelConfig& model, const LabelSet& labels,
                              const PrepareOptions& options) {
    PreparedRecord out;
    out.id = record.id;
    out.label = labels.index_of(record.label);
    const auto detrended = remove_baseline(record, options.preprocess);
    const auto normalized =
        minmax_normalize(detrended, options.preprocess.normalize_lo, options.preprocess.normalize_hi);
    out.input = model_input(normalized, model);
    out.gt.values.assign(options.gtcam.n_segments, 0.0);
    out.gt.mask_alpha = options.gtcam.mask_alpha;
    if (!options.hrv) return out;
    try {
        const auto peaks = detect_rpeaks(detrended, record.sampling_rate, options.gtcam.detector);
        out.gt = gt_cam_from_peaks(peaks, record.sampling_rate, record.length(), options.gtcam);
        const auto rr = rr_from_peaks(peaks, record.sampling_rate);
        if (rr.intervals_ms.size() >= 3) out.features = compute_features(rr);
    } catch (const InsufficientBeatsError&) {
        out.gt.insufficient_beats = true;
    }
    return out;
}

std::vector<PreparedRecord> prepare_records(std::span<const EcgRecord> records, const ModelConfig& model,
                                            const LabelSet& labels, const PrepareOptions& options) {
    std::vector<PreparedRecord> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(prepare_record(r, model, labels, options));
    return out;
}

std::vector<std::array<double, kFeatureCount>> scaled_features(std::span<const PreparedRecord* const> batch,
                                                               const FeatureScaler& scaler) {
    std::vector<std::array<double, kFeatureCount>> rows;
    rows.reserve(batch.size());
    for (const auto* r : batch) rows.push_back(r->features ? scaler.apply(*r->features) : std::array<double, kFeatureCount>{});
    return rows;
}

FeatureScaler fit_scaler(std::span<const PreparedRecord> train) {
    std::vector<QuantFeatures> feats;
    for (const auto& r : train)
        if (r.features) feats.push_back(*r.features);
    if (feats.size() < 2) return FeatureScaler{};
    return FeatureScaler::fit(feats);
}

Confusion confusion_from(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                         std::size_t n_classes) {
    if (truth.size() != predicted.size()) throw UsageError("truth and prediction counts differ");
    Confusion cm(n_classes, std::vector<std::size_t>(n_classes, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= n_classes || predicted[i] >= n_classes) throw UsageError("class index out of range");
        ++cm[truth[i]][predicted[i]];
    }
    return cm;
}

Metrics metrics_from_confusion(const Confusion& cm) {
    const std::size_t k = cm.size();
    if (k == 0) throw UsageError("empty confusion matrix");
    std::size_t total = 0, trace = 0;
    for (std::size_t i = 0; i < k; ++i) {
        if (cm[i].size() != k) throw UsageError("confusion matrix must be square");
        trace += cm[i][i];
        total += std::accumulate(cm[i].begin(), cm[i].end(), std::size_t{0});
    }
    if (total == 0) throw UsageError("confusion matrix has no entries");
    auto ratio = [](double num, double den) { return den > 0 ? num / den : 0.0; };

    Metrics m;
    m.accuracy = static_cast<double>(trace) / static_cast<double>(total);
    for (std::size_t c = 0; c < k; ++c) {
        ClassMetrics cls;
        cls.tp = cm[c][c];
        for (std::size_t j = 0; j < k; ++j) {
            if (j == c) continue;
            cls.fn += cm[c][j];
            cls.fp += cm[j][c];
        }
        cls.tn = total - cls.tp - cls.fn - cls.fp;
        cls.support = cls.tp + cls.fn;
        const auto tp = static_cast<double>(cls.tp), fn = static_cast<double>(cls.fn);
        const auto fp = static_cast<double>(cls.fp), tn = static_cast<double>(cls.tn);
        cls.accuracy = ratio(tp + tn, tp + tn + fp + fn);
        cls.sensitivity = ratio(tp, tp + fn);
        cls.specificity = ratio(tn, tn + fp);
        cls.precision = ratio(tp, tp + fp);
        cls.f1 = ratio(2 * tp, 2 * tp + fp + fn);
        m.macro_f1 += cls.f1;
        m.macro_sensitivity += cls.sensitivity;
        m.macro_specificity += cls.specificity;
        m.per_class.push_back(cls);
    }
    m.macro_f1 /= static_cast<double>(k);
    m.macro_sensitivity /= static_cast<double>(k);
    m.macro_specificity /= static_cast<double>(k);
    return m;
}

namespace {

constexpr std::size_t kEvalChunk = 32;

bool finite_grads(const std::vector<Tensor>& params) {
    for (const auto& p : params)
        for (double g : p.grad())
            if (!std::isfinite(g)) return false;
    return true;
}

std::vector<double> row_of(const Tensor& t, std::size_t i) {
    const std::size_t c = t.dim(1);
    return std::vector<double>(t.data().begin() + static_cast<std::ptrdiff_t>(i * c),
                               t.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
}

std::size_t argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::unique_ptr<ExgNet> instantiate(const TrainedModel& trained, bool with_features) {
    auto net = std::make_unique<ExgNet>(trained.model, 0, with_features);
    nn::restore(net->named_arrays(), trained.state, /*allow_extra=*/!with_features);
    return net;
}

TrainedModel capture(ExgNet& net, const FeatureScaler& scaler) {
    return {net.config(), nn::snapshot(net.named_arrays()), scaler};
}

std::vector<const PreparedRecord*> pointers(std::span<const PreparedRecord> records, std::size_t lo, std::size_t hi) {
    std::vector<const PreparedRecord*> out;
    for (std::size_t i = lo; i < hi; ++i) out.push_back(&records[i]);
    return out;
}

Tensor inputs_of(std::span<const PreparedRecord* const> batch) {
    std::vector<std::vector<double>> rows;
    rows.reserve(batch.size());
    for (const auto* r : batch) rows.push_back(r->input);
    return batch_signals(rows);
}

/// Base-head predictions without building a tape.
std::vector<std::size_t> predict_base(ExgNet& net, std::span<const PreparedRecord> records) {
    nn::NoGradGuard no_grad;
    std::vector<std::size_t> out;
    for (std::size_t lo = 0; lo < records.size(); lo += kEvalChunk) {
        const auto batch = pointers(records, lo, std::min(records.size(), lo + kEvalChunk));
        const auto probs = net.base_forward(inputs_of(batch), false).probs_base;
        for (std::size_t i = 0; i < batch.size(); ++i) out.push_back(argmax(row_of(probs, i)));
    }
    return out;
}

}  // namespace

EvalReport evaluate_prepared(const TrainedModel& trained, std::span<const PreparedRecord> records, EvalMode mode) {
    if (records.empty()) throw UsageError("evaluate: empty record set");
    const bool with_features = mode == EvalMode::WithFeatures;
    auto net = instantiate(trained, with_features);
    nn::NoGradGuard no_grad;
    EvalReport report;
    for (std::size_t lo = 0; lo < records.size(); lo += kEvalChunk) {
        const auto batch = pointers(records, lo, std::min(records.size(), lo + kEvalChunk));
        const auto base = net->base_forward(inputs_of(batch), false);
        Tensor joint;
        if (with_features) {
            const auto feats = scaled_features(batch, trained.scaler);
            const auto fo = net->feature_forward(batch_features(feats), false);
            joint = net->joint_forward(base.gap_embed, fo.hidden_h2);
        }
        for (std::size_t i = 0; i < batch.size(); ++i) {
            report.ids.push_back(batch[i]->id);
            report.truth.push_back(batch[i]->label);
            report.base_probs.push_back(row_of(base.probs_base, i));
            if (with_features) report.joint_probs.push_back(row_of(joint, i));
            report.predicted.push_back(argmax(with_features ? report.joint_probs.back() : report.base_probs.back()));
        }
    }
    report.confusion = confusion_from(report.truth, report.predicted, trained.model.n_classes);
    report.metrics = metrics_from_confusion(report.confusion);
    return report;
}

EvalReport evaluate(const TrainedModel& trained, std::span<const EcgRecord> records, const LabelSet& labels,
                    EvalMode mode, const PreprocessConfig& preprocess) {
    if (records.empty()) throw UsageError("evaluate: empty record set");
    PrepareOptions options;
    options.hrv = mode == EvalMode::WithFeatures;
    options.preprocess = preprocess;
    options.gtcam.n_segments = trained.model.n_segments;
    const auto prepared = prepare_records(records, trained.model, labels, options);
    return evaluate_prepared(trained, prepared, mode);
}

TrainResult train_fold(std::span<const PreparedRecord> train, std::span<const PreparedRecord> val,
                       const ModelConfig& model_cfg, const TrainConfig& train_cfg, const EpochCallback& on_epoch,
                       std::size_t max_steps) {
    train_cfg.validate();
    if (train.empty()) throw UsageError("train_fold: empty training set");
    for (const auto& r : train)
        if (r.label >= model_cfg.n_classes) throw UsageError("train_fold: label out of range for " + r.id);

    ExgNet net(model_cfg, train_cfg.seed);
    const FeatureScaler scaler = fit_scaler(train);
    const auto params = net.parameters();
    nn::Adam adam(params);
    std::mt19937_64 order_rng(train_cfg.seed ^ 0x5DEECE66DULL);

    TrainResult result;
    result.best = capture(net, scaler);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t step = 0;
    bool stop = false;
    for (std::size_t epoch = 0; epoch < train_cfg.epochs && !stop; ++epoch) {
        const double lr = lr_at_epoch(epoch, train_cfg);
        std::shuffle(order.begin(), order.end(), order_rng);
        double loss_sum = 0, ncc_sum = 0;
        std::size_t batches = 0;
        for (std::size_t lo = 0; lo < order.size(); lo += train_cfg.batch_size) {
            std::vector<const PreparedRecord*> batch;
            for (std::size_t i = lo; i < std::min(order.size(), lo + train_cfg.batch_size); ++i)
                batch.push_back(&train[order[i]]);
            std::vector<std::size_t> labels;
            std::vector<GtCam> masks;
            for (const auto* r : batch) {
                labels.push_back(r->label);
                masks.push_back(r->gt);
            }

            const Tensor feat_map = net.features(inputs_of(batch), true);
            const Tensor cam = training_cam(net, feat_map, labels);
            ForwardOutputs out;
            out.base = net.head(feat_map);
            out.feature = net.feature_forward(batch_features(scaled_features(batch, scaler)), true);
            out.probs_joint = net.joint_forward(out.base.gap_embed, out.feature.hidden_h2);
            out.has_features = true;
            const auto loss = total_loss(out, labels, masks, cam, train_cfg.weights);
            const double total = loss.total.item();
            if (!std::isfinite(total))
                throw DivergenceError("loss became non-finite at epoch " + std::to_string(epoch) + ", step " +
                                      std::to_string(step) + " (ce_base=" + format_double(loss.ce_base) +
                                      ", ncc=" + format_double(loss.ncc) + ")");
            adam.zero_grad();
            loss.total.backward();
            // ReLU maps NaN to 0, so a poisoned batch can leave the loss finite
            if (!finite_grads(params))
                throw DivergenceError("non-finite gradient at epoch " + std::to_string(epoch) + ", step " +
                                      std::to_string(step));
            adam.step(lr);

            result.steps.push_back({step, loss.ce_base, loss.ce_feature, loss.ce_joint, loss.ncc, total});
            loss_sum += total;
            ncc_sum += loss.ncc;
            ++batches;
            ++step;
            if (max_steps && step >= max_steps) {
                stop = true;
                break;
            }
        }

        EpochLog log;
        log.epoch = epoch;
        log.lr = lr;
        log.loss_total = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
        log.loss_ncc = ncc_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
        if (!val.empty()) {
            const auto predicted = predict_base(net, val);
            std::vector<std::size_t> truth;
            for (const auto& r : val) truth.push_back(r.label);
            const auto m = metrics_from_confusion(confusion_from(truth, predicted, model_cfg.n_classes));
            log.val_acc = m.accuracy;
            log.val_f1 = m.macro_f1;
            if (m.macro_f1 >= result.best_val_f1) {
                result.best_val_f1 = m.macro_f1;
                result.best_epoch = epoch;
                result.best = capture(net, scaler);
            }
        } else {
            result.best_epoch = epoch;
            result.best = capture(net, scaler);
        }
        result.epochs.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    result.last = capture(net, scaler);
    return result;
}

CvReport cross_validate(std::span<const PreparedRecord> records, std::span<const int> fold_of,
                        const ModelConfig& model_cfg, const TrainConfig& train_cfg, int k, int parallel) {
    if (k < 2) throw UsageError("cross_validate: k must be >= 2");
    if (fold_of.size() != records.size()) throw UsageError("cross_validate: fold list length mismatch");
    CvReport report;
    report.folds.resize(static_cast<std::size_t>(k));
    report.runs.resize(static_cast<std::size_t>(k));

    auto run_fold = [&](int fold) {
        std::vector<PreparedRecord> train, val;
        for (std::size_t i = 0; i < records.size(); ++i) (fold_of[i] == fold ? val : train).push_back(records[i]);
        if (val.empty()) throw UsageError("fold " + std::to_string(fold) + " has no records");
        auto run = train_fold(train, val, model_cfg, train_cfg);
        report.folds[static_cast<std::size_t>(fold)] = evaluate_prepared(run.best, val, EvalMode::BaseOnly);
        report.runs[static_cast<std::size_t>(fold)] = std::move(run);
    };

    if (parallel <= 1) {
        for (int f = 0; f < k; ++f) run_fold(f);
    } else {
        std::mutex error_mutex;
        std::exception_ptr error;
        for (int lo = 0; lo < k; lo += parallel) {
            std::vector<std::thread> workers;
            for (int f = lo; f < std::min(k, lo + parallel); ++f)
                workers.emplace_back([&, f] {
                    try {
                        run_fold(f);
                    } catch (...) {
                        std::lock_guard lock(error_mutex);
                        if (!error) error = std::current_exception();
                    }
                });
            for (auto& w : workers) w.join();
        }
        if (error) std::rethrow_exception(error);
    }

    const std::size_t n_classes = model_cfg.n_classes;
    report.aggregated.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
    for (const auto& f : report.folds) {
        for (std::size_t i = 0; i < n_classes; ++i)
            for (std::size_t j = 0; j < n_classes; ++j) report.aggregated[i][j] += f.confusion[i][j];
        report.average.accuracy += f.metrics.accuracy / k;
        report.average.macro_f1 += f.metrics.macro_f1 / k;
        report.average.macro_sensitivity += f.metrics.macro_sensitivity / k;
        report.average.macro_specificity += f.metrics.macro_specificity / k;
    }
    return report;
}

std::vector<std::vector<double>> export_embeddings(const TrainedModel& trained, std::span<const PreparedRecord> records) {
    auto net = instantiate(trained, false);
    nn::NoGradGuard no_grad;
    std::vector<std::vector<double>> out;
    for (std::size_t lo = 0; lo < records.size(); lo += kEvalChunk) {
        const auto batch = pointers(records, lo, std::min(records.size(), lo + kEvalChunk));
        const auto base = net->base_forward(inputs_of(batch), false);
        for (std::size_t i = 0; i < batch.size(); ++i) out.push_back(row_of(base.gap_embed, i));
    }
    return out;
}

std::vector<CamReport> explain_records(const TrainedModel& trained, std::span<const PreparedRecord> records) {
    auto net = instantiate(trained, false);
    std::vector<CamReport> out;
    for (std::size_t lo = 0; lo < records.size(); lo += kEvalChunk) {
        const auto batch = pointers(records, lo, std::min(records.size(), lo + kEvalChunk));
        const auto cams = generate_cam(*net, inputs_of(batch), false);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            CamReport r;
            r.id = batch[i]->id;
            r.pred_cam = cams.cams[i];
            r.gt_cam = batch[i]->gt;
            r.alignment = alignment_metrics(r.pred_cam, r.gt_cam.values);
            r.predicted_class = cams.predicted[i];
            r.true_class = batch[i]->label;
            out.push_back(std::move(r));
        }
    }
    return out;
}

double mean_alignment_ncc(std::span<const CamReport> reports) {
    double total = 0;
    std::size_t count = 0;
    for (const auto& r : reports) {
        if (r.gt_cam.insufficient_beats || r.gt_cam.all_zero()) continue;
        total += r.alignment.ncc;
        ++count;
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

void save_trained(const std::filesystem::path& dir, const TrainedModel& trained) {
    nn::StateDict state = trained.state;
    state.entries["scaler.mean"] = {{kFeatureCount}, {trained.scaler.mean().begin(), trained.scaler.mean().end()}};
    state.entries["scaler.scale"] = {{kFeatureCount}, {trained.scaler.scale().begin(), trained.scaler.scale().end()}};
    nn::save_checkpoint(dir, state);
    std::ofstream cfg(dir / "model.cfg");
    if (!cfg) throw IoError("cannot write " + (dir / "model.cfg").string());
    for (const auto& [key, value] : trained.model.to_kv()) cfg << key << " = " << value << '\n';
}

TrainedModel load_trained(const std::filesystem::path& dir) {
    TrainedModel trained;
    std::ifstream cfg(dir / "model.cfg");
    if (!cfg) throw IoError("cannot open " + (dir / "model.cfg").string());
    std::string line;
    while (std::getline(cfg, line)) {
        const auto eq = line.find('=');
        if (trim(line).empty()) continue;
        if (eq == std::string::npos) throw IntegrityError("bad line in model.cfg: " + line);
        trained.model.apply_kv(std::string(trim(std::string_view(line).substr(0, eq))),
                               std::string(trim(std::string_view(line).substr(eq + 1))));
    }
    trained.model.validate();
    trained.state = nn::load_checkpoint(dir);
    auto take = [&](const std::string& name) {
        auto it = trained.state.entries.find(name);
        if (it == trained.state.entries.end() || it->second.values.size() != kFeatureCount)
            throw IntegrityError("checkpoint lacks " + name);
        std::array<double, kFeatureCount> a{};
        std::copy(it->second.values.begin(), it->second.values.end(), a.begin());
        trained.state.entries.erase(it);
        return a;
    };
    const auto mean = take("scaler.mean");
    const auto scale = take("scaler.scale");
    trained.scaler = FeatureScaler(mean, scale);
    return trained;
}

}  // namespace exg
