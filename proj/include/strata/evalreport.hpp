#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "strata/trainer.hpp"

namespace strata::eval {

/// sqrt(mean((pred - target)^2)) over every entry; shapes must agree.
double rmse(const num::Tensor& pred, const num::Tensor& target);
/// RMSE over all entries of all records pooled before the root.
double pooled_rmse(const std::vector<num::Tensor>& preds, const std::vector<num::Tensor>& targets);
/// Mean of the per-record RMSEs.
double mean_record_rmse(const std::vector<num::Tensor>& preds, const std::vector<num::Tensor>& targets);

/// Layers x columns (m x w) inputs: RMSE over the first and last p columns of
/// every layer, 2pm terms. Requires 1 <= p <= w/2.
double boundary_rmse(const num::Tensor& pred, const num::Tensor& target, std::size_t p);
/// Same metric on column-major predictions ([n, m], one row per column),
/// pooling the boundary terms of all records.
double pooled_boundary_rmse(const std::vector<num::Tensor>& preds, const std::vector<num::Tensor>& targets,
                            std::size_t p);

/// Mean absolute error per column, averaged over layers and records.
std::vector<double> column_mae_profile(const std::vector<num::Tensor>& preds, const std::vector<num::Tensor>& targets);
void write_mae_profile(const std::filesystem::path& path, const std::vector<double>& profile);

inline const std::vector<std::size_t> default_boundary_ps{1, 2, 5, 10};

struct TrialReport {
    std::string variant;
    std::size_t n_blocks = 0;
    double alpha0 = 0.0;
    std::size_t trial = 0;
    std::uint64_t split_seed = 0;
    std::uint64_t train_seed = 0;
    double rmse = 0.0;
    double mean_record_rmse = 0.0;
    std::map<std::size_t, double> boundary_rmse;
    std::string fingerprint;
    double wall_time = 0.0;
    std::vector<double> alphas;
    std::size_t best_epoch = 0;
    std::size_t test_records = 0;

    friend bool operator==(const TrialReport&, const TrialReport&) = default;
};

nlohmann::json to_json(const TrialReport& r);
TrialReport trial_report_from_json(const nlohmann::json& j);

struct Summary {
    std::string variant;
    std::size_t n_blocks = 0;
    double alpha0 = 0.0;
    std::vector<TrialReport> trials;
    double mean = 0.0;
    double std = 0.0;  // population
    std::map<std::size_t, double> boundary_mean;

    friend bool operator==(const Summary&, const Summary&) = default;
};

Summary summarize(std::vector<TrialReport> trials);
nlohmann::json to_json(const Summary& s);
Summary summary_from_json(const nlohmann::json& j);

/// variant_flags,n_blocks,alpha0,trial,rmse,brmse_p1,... ; one row per trial
/// plus "mean" and "std" rows per summary.
std::string report_csv(const std::vector<Summary>& rows, const std::vector<std::size_t>& ps = default_boundary_ps);
void write_reports(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                   const std::vector<Summary>& rows, const std::vector<std::size_t>& ps = default_boundary_ps);

/// FNV-1a of the canonical JSON of the run configuration, as 16 hex digits.
std::string config_fingerprint(const model::ModelConfig& m, const train::TrainConfig& t, const train::GraphConfig& g);

// ---------------------------------------------------------------------------

struct AblationVariant {
    bool graph = true;
    bool attention = true;
    bool lr_skip = true;
    bool localized = true;

    void validate() const;
    /// Active components joined by '+', e.g. "graph+attention+localized".
    std::string flags() const;
    friend bool operator==(const AblationVariant&, const AblationVariant&) = default;
};

/// The ten meaningful component combinations, graph-only rows first.
std::vector<AblationVariant> ablation_grid();

struct VariantSetup {
    model::ModelConfig model;
    train::GraphConfig graph;
    bool fully_connected = false;  // replace the partition with one window over all nodes
};

/// Graph off swaps the SAGE stack for a linear lift; attention off removes the
/// blocks; lr_skip off chains blocks directly; localized off connects all nodes.
VariantSetup apply_variant(const model::ModelConfig& base, const train::GraphConfig& graph, const AblationVariant& v);

struct TrialOptions {
    std::vector<std::size_t> boundary_ps = default_boundary_ps;
    bool per_record = false;  // headline rmse as the mean of per-record values instead of pooled
    std::function<void(const std::string&)> log;
    std::function<void(const train::EpochLog&)> on_epoch;
};

struct TrialOutcome {
    TrialReport report;
    train::TrainResult result;
    data::DatasetSplit split;
    std::vector<double> mae_profile;
};

/// Split with `split_seed`, build graphs, train with `train_seed`, score the test split.
TrialOutcome run_trial(const std::vector<data::ThicknessRecord>& records, const VariantSetup& setup,
                       const train::TrainConfig& tcfg, std::size_t trial, std::uint64_t split_seed,
                       std::uint64_t train_seed, const TrialOptions& opts = {}, const std::string& variant = "custom");

/// Trial t (1-based) always sees dataset permutation t, whatever the run seed;
/// the run seed drives initialization, dropout and shuffling.
std::uint64_t trial_split_seed(std::size_t trial);
std::uint64_t trial_train_seed(std::uint64_t run_seed, std::size_t trial);

/// Trials t = 1..tcfg.trials with the seeds above.
Summary run_trials(const std::vector<data::ThicknessRecord>& records, const VariantSetup& setup,
                   const train::TrainConfig& tcfg, const TrialOptions& opts = {}, const std::string& variant = "custom");

std::vector<Summary> run_ablation(const std::vector<data::ThicknessRecord>& records, const train::ExperimentConfig& base,
                                  const std::vector<AblationVariant>& variants, const TrialOptions& opts = {});

std::vector<Summary> run_alpha_sweep(const std::vector<data::ThicknessRecord>& records,
                                     const train::ExperimentConfig& base, const std::vector<std::size_t>& blocks,
                                     const std::vector<double>& alphas, const TrialOptions& opts = {});

}  // namespace strata::eval
