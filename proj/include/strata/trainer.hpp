#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "strata/dataio.hpp"
#include "strata/errors.hpp"
#include "strata/graphbuild.hpp"
#include "strata/model.hpp"

namespace strata::train {

enum class Scheduler { Plateau, Step };

struct TrainConfig {
    double lr = 3e-4;
    double weight_decay = 1e-4;
    std::size_t epochs = 100;
    std::size_t patience = 12;
    double plateau_factor = 0.5;
    Scheduler scheduler = Scheduler::Plateau;
    std::size_t step_period = 75;
    double step_factor = 0.5;
    std::size_t batch_size = 4;
    std::uint64_t seed = 0;
    std::size_t trials = 5;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}, const std::string& path = "train");

/// Per-feature z-score statistics for (lat, lon, thickness).
struct NormStats {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> std{1.0, 1.0, 1.0};

    /// Pools every node of every input graph of the given sequences.
    static NormStats fit(const std::vector<const graph::TemporalGraphSequence*>& seqs);
    static NormStats fit(const std::vector<graph::TemporalGraphSequence>& seqs);
    void apply(num::Tensor& features) const;

    friend bool operator==(const NormStats&, const NormStats&) = default;
};

nlohmann::json to_json(const NormStats& s);
NormStats norm_stats_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Optimizer and schedules

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<num::Tensor> m;
    std::vector<num::Tensor> v;
};

/// One Adam update over every Param in store order. Weight decay is added to
/// the gradient as an L2 term. Unit-interval params are clamped afterwards.
/// Throws NumericalError naming the first param with a non-finite gradient.
void adam_step(num::ParamStore& params, AdamState& state, double lr, double weight_decay);

/// Halves (by `factor`) when the monitored loss has not strictly improved on the
/// best value for `patience` consecutive epochs; the counter then restarts.
class PlateauScheduler {
public:
    PlateauScheduler(double lr, std::size_t patience, double factor);
    /// Feeds one epoch's loss; returns the learning rate for the next epoch.
    double observe(double loss);
    double lr() const noexcept { return lr_; }
    std::size_t since_improvement() const noexcept { return counter_; }
    double best() const noexcept { return best_; }

private:
    double lr_;
    std::size_t patience_;
    double factor_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t counter_ = 0;
};

/// lr0 * factor^floor(epoch / period).
double step_schedule(double lr0, std::size_t epoch, std::size_t period, double factor = 0.5);

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
    std::size_t epoch = 0;
    double train_mse = 0.0;
    double val_mse = 0.0;
    double lr = 0.0;

    friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

void write_loss_trace(const std::filesystem::path& path, const std::vector<EpochLog>& trace);
std::string loss_trace_csv(const std::vector<EpochLog>& trace);

struct PreparedSet {
    std::vector<const graph::TemporalGraphSequence*> seqs;
    std::vector<model::ModelInput> inputs;
};

/// Normalizes inputs with `stats` and builds the aggregation lists once.
PreparedSet prepare(const std::vector<const graph::TemporalGraphSequence*>& seqs, const NormStats& stats,
                    graph::Aggregation agg);

/// Pooled MSE over every predicted entry of every record, eval mode.
double evaluate_mse(const model::StrataNet& net, const PreparedSet& set);
/// One [n, m] prediction per record, eval mode.
std::vector<num::Tensor> predict(const model::StrataNet& net, const PreparedSet& set);

struct TrainResult {
    model::StrataNet model;  // best-validation parameters restored
    NormStats norm;
    std::vector<EpochLog> trace;
    std::size_t best_epoch = 0;  // 0 with no epochs run
    double best_val = std::numeric_limits<double>::infinity();
    std::string rng_state;       // dropout stream after the final epoch
};

struct TrainHooks {
    std::function<void(const EpochLog&)> on_epoch;
};

/// Thrown when a training loss goes non-finite; carries the last good checkpoint.
class DivergenceError : public NumericalError {
public:
    DivergenceError(const std::string& what, nlohmann::json checkpoint)
        : NumericalError(what), checkpoint_(std::move(checkpoint)) {}
    const nlohmann::json& checkpoint() const noexcept { return checkpoint_; }

private:
    nlohmann::json checkpoint_;
};

/// Trains on `train_set`, selecting the epoch with the lowest validation MSE.
/// With an empty validation set the eval-mode training MSE is monitored instead.
/// All randomness derives from `seed`.
TrainResult train_one(const std::vector<const graph::TemporalGraphSequence*>& train_set,
                      const std::vector<const graph::TemporalGraphSequence*>& val_set, const model::ModelConfig& mcfg,
                      const TrainConfig& tcfg, std::uint64_t seed, const TrainHooks& hooks = {});

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
    static constexpr int format_version = 1;

    model::ModelConfig config;
    TrainConfig train;
    NormStats norm;
    graph::PartitionSpec partition;
    graph::HaversineMode haversine = graph::HaversineMode::AsPrinted;
    std::optional<data::DatasetSplit> split;
    std::vector<std::pair<std::string, num::Tensor>> params;
    std::vector<double> alpha_values;
    std::string rng_state;
    std::size_t best_epoch = 0;
    double best_val = 0.0;
    std::size_t trial = 0;  // 0 when not part of a trial protocol
    std::uint64_t train_seed = 0;

    /// Rebuilds the network; throws ValidationError if names or shapes disagree with the config.
    model::StrataNet restore() const;
};

Checkpoint make_checkpoint(const model::StrataNet& net, const TrainConfig& tcfg, const NormStats& norm);
nlohmann::json to_json(const Checkpoint& ck);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Experiment configuration file

struct GraphConfig {
    graph::PartitionSpec partition;
    graph::HaversineMode haversine = graph::HaversineMode::AsPrinted;
    std::size_t shallow = 5;
    std::size_t deep = 15;

    graph::SequenceOptions sequence_options() const { return {shallow, deep, partition, haversine}; }
    friend bool operator==(const GraphConfig&, const GraphConfig&) = default;
};

struct DataConfig {
    std::string records;  // JSONL radargram file
    std::string graphs;   // directory of graph caches
    std::size_t min_layers = 20;
    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct ExperimentConfig {
    model::ModelConfig model;
    TrainConfig train;
    DataConfig data;
    GraphConfig graph;
};

/// Parses {model, train, data, graph}. The graph section's shallow/deep counts
/// fix the model's k/m; conflicting explicit values are rejected.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, ExperimentConfig base = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path, ExperimentConfig base = {});
nlohmann::json to_json(const ExperimentConfig& cfg);

}  // namespace strata::train
