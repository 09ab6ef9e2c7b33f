#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "exgnet/explain.hpp"
#include "exgnet/gtcam.hpp"
#include "exgnet/hrv.hpp"
#include "exgnet/model.hpp"
#include "exgnet/nn/checkpoint.hpp"
#include "exgnet/objectives.hpp"
#include "exgnet/preprocess.hpp"
#include "exgnet/records.hpp"

namespace exg {

struct TrainConfig {
    std::size_t batch_size = 4;
    double lr_initial = 2e-4;
    std::size_t epochs = 200;
    /// Epochs at lr_initial before the cosine phases start.
    std::size_t constant_epochs = 60;
    double cosine_peak = 1e-4;
    std::size_t cosine_period = 20;
    /// The cosine peak halves every this many epochs.
    std::size_t halve_every = 40;
    std::uint64_t seed = 0;
    LossWeights weights{};
    std::string preset = "paper";

    static TrainConfig paper();
    /// 250 epochs at a constant 1e-3 for desk-scale runs.
    static TrainConfig desk();
    static TrainConfig for_preset(const std::string& preset);

    void validate() const;
    std::map<std::string, std::string> to_kv() const;
    void apply_kv(const std::string& key, const std::string& value);
};

/// Constant lr_initial for the first constant_epochs epochs, then cosine
/// phases of cosine_period epochs, peak * (1 + cos(pi * t / period)) / 2,
/// with the peak halved every halve_every epochs.
double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg);

/// A record reduced to what the network consumes.
struct PreparedRecord {
    std::string id;
    std::size_t label = 0;
    std::vector<double> input;  // model_input of the preprocessed signal
    GtCam gt;
    std::optional<QuantFeatures> features;
};

struct PrepareOptions {
    /// When false no R-peak detection or HRV work happens at all.
    bool hrv = true;
    PreprocessConfig preprocess{};
    GtCamConfig gtcam{};
};

PreparedRecord prepare_record(const EcgRecord& record, const ModelConfig& model, const LabelSet& labels,
                              const PrepareOptions& options);

std::vector<PreparedRecord> prepare_records(std::span<const EcgRecord> records, const ModelConfig& model,
                                            const LabelSet& labels, const PrepareOptions& options);

/// Records without features (too few beats) get the all-zero scaled vector.
std::vector<std::array<double, kFeatureCount>> scaled_features(std::span<const PreparedRecord* const> batch,
                                                               const FeatureScaler& scaler);

FeatureScaler fit_scaler(std::span<const PreparedRecord> train);

using Confusion = std::vector<std::vector<std::size_t>>;  // [true][predicted]

struct ClassMetrics {
    std::size_t tp = 0, fn = 0, fp = 0, tn = 0;
    double accuracy = 0, sensitivity = 0, specificity = 0, precision = 0, f1 = 0;
    std::size_t support = 0;
};

/// Macro (unweighted one-vs-rest) averages; accuracy is trace / total.
/// Zero denominators yield 0.
struct Metrics {
    double accuracy = 0;
    double macro_f1 = 0;
    double macro_sensitivity = 0;
    double macro_specificity = 0;
    std::vector<ClassMetrics> per_class;
};

Metrics metrics_from_confusion(const Confusion& confusion);
Confusion confusion_from(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                         std::size_t n_classes);

/// Everything needed to run a trained network.
struct TrainedModel {
    ModelConfig model;
    nn::StateDict state;
    FeatureScaler scaler;
};

enum class EvalMode { BaseOnly, WithFeatures };

struct EvalReport {
    Confusion confusion;
    Metrics metrics;
    std::vector<std::string> ids;
    std::vector<std::size_t> truth;
    std::vector<std::size_t> predicted;
    /// Softmax of the base head for every record (both modes).
    std::vector<std::vector<double>> base_probs;
    /// Softmax of the joint head; empty in BaseOnly mode.
    std::vector<std::vector<double>> joint_probs;
};

/// Evaluates prepared records. BaseOnly builds a network without the
/// feature branch and never touches features; WithFeatures predicts with the
/// joint head.
EvalReport evaluate_prepared(const TrainedModel& trained, std::span<const PreparedRecord> records, EvalMode mode);

/// Prepares raw records for the mode (no HRV work in BaseOnly) and evaluates.
EvalReport evaluate(const TrainedModel& trained, std::span<const EcgRecord> records, const LabelSet& labels,
                    EvalMode mode, const PreprocessConfig& preprocess = {});

struct EpochLog {
    std::size_t epoch = 0;
    double lr = 0;
    double loss_total = 0;
    double loss_ncc = 0;
    double val_acc = 0;
    double val_f1 = 0;
};

struct StepLog {
    std::size_t step = 0;
    double ce_base = 0, ce_feat = 0, ce_joint = 0, ncc = 0, total = 0;
};

struct TrainResult {
    TrainedModel best;   // best validation macro-F1 (latest on ties, last epoch without validation data)
    TrainedModel last;
    std::vector<EpochLog> epochs;
    std::vector<StepLog> steps;
    std::size_t best_epoch = 0;
    double best_val_f1 = -1;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains one fold: per step the base/feature/joint forward, training CAM,
/// weighted loss, backward and Adam update. Throws DivergenceError on a
/// non-finite loss. `max_steps` (0 = unlimited) stops early.
TrainResult train_fold(std::span<const PreparedRecord> train, std::span<const PreparedRecord> val,
                       const ModelConfig& model_cfg, const TrainConfig& train_cfg, const EpochCallback& on_epoch = {},
                       std::size_t max_steps = 0);

struct CvReport {
    std::vector<EvalReport> folds;
    Metrics average;  // arithmetic mean of fold metrics
    Confusion aggregated;
    std::vector<TrainResult> runs;
};

/// Trains k models, each validated on its held-out fold. `fold_of[i]` is the
/// fold of records[i]. Up to `parallel` folds train concurrently.
CvReport cross_validate(std::span<const PreparedRecord> records, std::span<const int> fold_of,
                        const ModelConfig& model_cfg, const TrainConfig& train_cfg, int k, int parallel = 1);

/// GAP embeddings (eval mode) for each record.
std::vector<std::vector<double>> export_embeddings(const TrainedModel& trained, std::span<const PreparedRecord> records);

/// Inference CAMs with their alignment against each record's mask.
std::vector<CamReport> explain_records(const TrainedModel& trained, std::span<const PreparedRecord> records);

/// Mean NCC alignment over records with a usable (non-zero) mask.
double mean_alignment_ncc(std::span<const CamReport> reports);

/// Saves the state dict plus the scaler (as `scaler.mean` / `scaler.scale`)
/// and `model.cfg` into `dir`.
void save_trained(const std::filesystem::path& dir, const TrainedModel& trained);
TrainedModel load_trained(const std::filesystem::path& dir);

}  // namespace exg
