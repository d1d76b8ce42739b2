#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "strata/autograd.hpp"
#include "strata/graphbuild.hpp"
#include "strata/ops.hpp"

namespace strata::model {

enum class AlphaMode { PerBlock, Shared };
/// Sage: GraphSAGE stack. LinearLift: per-node 3->d map (attention-only ablation).
enum class SpatialEncoder { Sage, LinearLift };

struct ModelConfig {
    std::size_t d = 64;
    std::size_t sage_layers = 5;
    std::size_t blocks = 8;
    std::size_t heads = 8;
    std::size_t d_ff = 0;  // 0 means 4 * d
    double dropout = 0.1;
    double alpha0 = 0.25;
    std::size_t m = 15;
    std::size_t k = 5;
    graph::Aggregation aggregator = graph::Aggregation::Mean;
    AlphaMode alpha_mode = AlphaMode::PerBlock;
    bool shared_sage = true;
    SpatialEncoder encoder = SpatialEncoder::Sage;
    bool long_range_skip = true;
    double ln_eps = 1e-5;

    static constexpr std::size_t in_features = 3;

    std::size_t ff_width() const noexcept { return d_ff ? d_ff : 4 * d; }
    /// Throws ValidationError naming the offending field.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Starts from `base`, overriding only the fields present; unknown fields are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {}, const std::string& path = "model");

/// One sequence ready for the network: k graphs stacked time-major.
struct ModelInput {
    std::size_t n_nodes = 0;
    std::size_t k = 0;
    num::Tensor stacked_features;  // (k * n) x 3, graph t occupies rows [t*n, (t+1)*n)
    num::NeighborLists single;     // one graph
    num::NeighborLists stacked;    // block-diagonal over k graphs
};

/// Builds a ModelInput; `normalize` maps raw (lat, lon, thickness) rows in place.
ModelInput make_input(const graph::TemporalGraphSequence& seq, graph::Aggregation agg,
                      const std::function<void(num::Tensor&)>& normalize = {});

struct SageLayerParams {
    num::Param* root = nullptr;   // W1 [out x in]
    num::Param* neigh = nullptr;  // W2 [out x in]
    num::Param* bias = nullptr;   // [out], may be null
};

struct AttentionBlockParams {
    num::Param *wq = nullptr, *wk = nullptr, *wv = nullptr, *wo = nullptr;
    num::Param *ff1_w = nullptr, *ff1_b = nullptr, *ff2_w = nullptr, *ff2_b = nullptr;
    num::Param *ln1_g = nullptr, *ln1_b = nullptr, *ln2_g = nullptr, *ln2_b = nullptr;
};

struct SkipParams {
    num::Param* alpha = nullptr;
    num::Param* ln_g = nullptr;
    num::Param* ln_b = nullptr;
};

struct HeadParams {
    num::Param *temporal_w = nullptr, *temporal_b = nullptr;
    num::Param *fc1_w = nullptr, *fc1_b = nullptr, *fc2_w = nullptr, *fc2_b = nullptr;
    num::Param *out_w = nullptr, *out_b = nullptr;
};

/// x' = x W1^T + aggregate(x) W2^T (+ b).
num::Var sage_layer(num::Tape& tape, const num::Var& x, const num::NeighborLists& lists, const SageLayerParams& p);

/// Self-attention over the time axis of z [n, k, d] independently per node,
/// followed by the feed-forward sublayer; post-norm residual arrangement.
/// When `attention` is non-null the softmax weights [n*heads, k, k] are appended.
num::Var temporal_block(num::Tape& tape, const num::Var& z, const AttentionBlockParams& p, std::size_t heads,
                        double dropout, num::Rng& rng, bool train, double eps = 1e-5,
                        std::vector<num::Tensor>* attention = nullptr);

/// LayerNorm(alpha * x + (1 - alpha) * y) over the feature axis.
num::Var adaptive_lr_skip(num::Tape& tape, const num::Var& y, const num::Var& x, const SkipParams& p,
                          double eps = 1e-5);

/// Temporal projection k->1, then d->d->d->m with hardswish after the first two.
num::Var head(num::Tape& tape, const num::Var& z, const HeadParams& p);

struct ForwardTrace {
    num::Tensor embedding;                 // X [n, k, d]
    std::vector<num::Tensor> block_inputs; // Z_0 .. Z_N
    std::vector<num::Tensor> attention;
};

class StrataNet {
public:
    StrataNet(ModelConfig cfg, std::uint64_t init_seed);

    StrataNet(StrataNet&&) noexcept = default;
    StrataNet& operator=(StrataNet&&) noexcept = default;

    const ModelConfig& config() const noexcept { return cfg_; }
    num::ParamStore& params() noexcept { return params_; }
    const num::ParamStore& params() const noexcept { return params_; }

    num::Var spatial_encode(num::Tape& tape, const ModelInput& in) const;
    /// Predictions [n, m] in target units.
    num::Var forward(num::Tape& tape, const ModelInput& in, num::Rng& rng, bool train,
                     ForwardTrace* trace = nullptr) const;

    std::vector<double> alphas() const;
    void set_alphas(double value);

    const std::vector<AttentionBlockParams>& blocks() const noexcept { return blocks_; }
    const std::vector<SkipParams>& skips() const noexcept { return skips_; }
    const HeadParams& head_params() const noexcept { return head_; }
    const std::vector<std::vector<SageLayerParams>>& sage() const noexcept { return sage_; }

private:
    ModelConfig cfg_;
    num::ParamStore params_;
    std::vector<std::vector<SageLayerParams>> sage_;  // [graph or 0 when shared][layer]
    num::Param* lift_w_ = nullptr;
    num::Param* lift_b_ = nullptr;
    std::vector<AttentionBlockParams> blocks_;
    std::vector<SkipParams> skips_;
    HeadParams head_;
};

}  // namespace strata::model
