#include "strata/model.hpp"

#include <cmath>

#include "strata/errors.hpp"
#include "strata/jsonutil.hpp"

namespace strata::model {

using num::Param;
using num::Tape;
using num::Tensor;
using num::Var;

namespace {

std::string aggregator_name(graph::Aggregation a) { return a == graph::Aggregation::Mean ? "mean" : "weighted-mean"; }
std::string alpha_mode_name(AlphaMode a) { return a == AlphaMode::PerBlock ? "per-block" : "shared"; }
std::string encoder_name(SpatialEncoder e) { return e == SpatialEncoder::Sage ? "sage" : "linear-lift"; }

}  // namespace

void ModelConfig::validate() const {
    auto bad = [](const std::string& field, const std::string& what) {
        throw ValidationError("field 'model." + field + "': " + what);
    };
    if (d == 0) bad("d", "must be positive");
    if (heads == 0) bad("heads", "must be positive");
    if (blocks > 0 && d % heads != 0) bad("heads", "d=" + std::to_string(d) + " is not divisible by heads=" + std::to_string(heads));
    if (encoder == SpatialEncoder::Sage && sage_layers == 0) bad("sage_layers", "must be positive for the sage encoder");
    if (m == 0) bad("m", "must be positive");
    if (k == 0) bad("k", "must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) bad("dropout", "must lie in [0, 1)");
    if (!(alpha0 >= 0.0 && alpha0 <= 1.0)) bad("alpha0", "must lie in [0, 1]");
    if (!(ln_eps > 0.0)) bad("ln_eps", "must be positive");
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"d", c.d},
            {"sage_layers", c.sage_layers},
            {"blocks", c.blocks},
            {"heads", c.heads},
            {"d_ff", c.ff_width()},
            {"dropout", c.dropout},
            {"alpha0", c.alpha0},
            {"m", c.m},
            {"k", c.k},
            {"aggregator", aggregator_name(c.aggregator)},
            {"alpha_mode", alpha_mode_name(c.alpha_mode)},
            {"shared_sage", c.shared_sage},
            {"encoder", encoder_name(c.encoder)},
            {"long_range_skip", c.long_range_skip},
            {"ln_eps", c.ln_eps}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c, const std::string& path) {
    FieldReader r(j, path);
    r.get("d", c.d);
    r.get("sage_layers", c.sage_layers);
    r.get("blocks", c.blocks);
    r.get("heads", c.heads);
    r.get("d_ff", c.d_ff);
    r.get("dropout", c.dropout);
    r.get("alpha0", c.alpha0);
    r.get("m", c.m);
    r.get("k", c.k);
    r.get("shared_sage", c.shared_sage);
    r.get("long_range_skip", c.long_range_skip);
    r.get("ln_eps", c.ln_eps);
    std::string s;
    if (r.has("aggregator")) {
        r.get("aggregator", s);
        if (s == "mean") c.aggregator = graph::Aggregation::Mean;
        else if (s == "weighted-mean") c.aggregator = graph::Aggregation::WeightedMean;
        else r.fail("aggregator", "expected 'mean' or 'weighted-mean', got '" + s + "'");
    }
    if (r.has("alpha_mode")) {
        r.get("alpha_mode", s);
        if (s == "per-block") c.alpha_mode = AlphaMode::PerBlock;
        else if (s == "shared") c.alpha_mode = AlphaMode::Shared;
        else r.fail("alpha_mode", "expected 'per-block' or 'shared', got '" + s + "'");
    }
    if (r.has("encoder")) {
        r.get("encoder", s);
        if (s == "sage") c.encoder = SpatialEncoder::Sage;
        else if (s == "linear-lift") c.encoder = SpatialEncoder::LinearLift;
        else r.fail("encoder", "expected 'sage' or 'linear-lift', got '" + s + "'");
    }
    r.finish();
    c.validate();
    return c;
}

ModelInput make_input(const graph::TemporalGraphSequence& seq, graph::Aggregation agg,
                      const std::function<void(Tensor&)>& normalize) {
    ModelInput in;
    in.n_nodes = seq.n_nodes();
    in.k = seq.k();
    in.stacked_features = Tensor({in.k * in.n_nodes, ModelConfig::in_features});
    for (std::size_t t = 0; t < in.k; ++t) {
        Tensor f = seq.graphs[t].node_features;
        if (normalize) normalize(f);
        std::copy(f.data().begin(), f.data().end(), in.stacked_features.raw() + t * f.size());
    }
    in.single = seq.structure().aggregation_lists(agg);
    in.stacked = in.single.replicated(in.k);
    return in;
}

Var sage_layer(Tape& tape, const Var& x, const num::NeighborLists& lists, const SageLayerParams& p) {
    Var root = num::linear(x, tape.param(*p.root));
    Var neigh = num::linear(num::neighbor_aggregate(x, lists), tape.param(*p.neigh));
    Var out = num::add(root, neigh);
    return p.bias ? num::add_bias(out, tape.param(*p.bias)) : out;
}

Var temporal_block(Tape& tape, const Var& z, const AttentionBlockParams& p, std::size_t heads, double dropout,
                   num::Rng& rng, bool train, double eps, std::vector<Tensor>* attention) {
    const auto& shape = z.shape();
    if (shape.size() != 3) throw num::DimensionError("temporal_block expects [n, k, d], got " + num::shape_str(shape));
    const std::size_t n = shape[0], k = shape[1], d = shape[2];
    if (d % heads != 0) throw ValidationError("d=" + std::to_string(d) + " not divisible by heads=" + std::to_string(heads));
    const std::size_t dk = d / heads;

    // [n, k, d] -> [n * heads, k, dk]: every (node, head) pair attends over its k time steps.
    auto split_heads = [&](const Var& v) {
        return num::reshape(num::permute(num::reshape(v, {n, k, heads, dk}), {0, 2, 1, 3}), {n * heads, k, dk});
    };
    Var q = split_heads(num::linear(z, tape.param(*p.wq)));
    Var kk = split_heads(num::linear(z, tape.param(*p.wk)));
    Var v = split_heads(num::linear(z, tape.param(*p.wv)));

    Var scores = num::scale(num::bmm(q, kk, true), 1.0 / std::sqrt(static_cast<double>(dk)));
    Var weights = num::softmax_lastdim(scores);
    if (attention) attention->push_back(weights.value());
    Var ctx = num::bmm(weights, v);
    ctx = num::reshape(num::permute(num::reshape(ctx, {n, heads, k, dk}), {0, 2, 1, 3}), {n, k, d});
    Var mha = num::linear(ctx, tape.param(*p.wo));

    Var a = num::layernorm(num::add(z, num::dropout(mha, dropout, rng, train)), tape.param(*p.ln1_g),
                           tape.param(*p.ln1_b), eps);
    Var ff = num::linear(num::relu(num::linear(a, tape.param(*p.ff1_w), tape.param(*p.ff1_b))), tape.param(*p.ff2_w),
                         tape.param(*p.ff2_b));
    return num::layernorm(num::add(a, num::dropout(ff, dropout, rng, train)), tape.param(*p.ln2_g),
                          tape.param(*p.ln2_b), eps);
}

Var adaptive_lr_skip(Tape& tape, const Var& y, const Var& x, const SkipParams& p, double eps) {
    Var mixed = num::scalar_mix(tape.param(*p.alpha), x, y);
    return num::layernorm(mixed, tape.param(*p.ln_g), tape.param(*p.ln_b), eps);
}

Var head(Tape& tape, const Var& z, const HeadParams& p) {
    const auto& shape = z.shape();
    if (shape.size() != 3) throw num::DimensionError("head expects [n, k, d], got " + num::shape_str(shape));
    const std::size_t n = shape[0], d = shape[2];
    Var t = num::linear(num::permute(z, {0, 2, 1}), tape.param(*p.temporal_w), tape.param(*p.temporal_b));
    t = num::reshape(t, {n, d});
    Var h = num::hardswish(num::linear(t, tape.param(*p.fc1_w), tape.param(*p.fc1_b)));
    h = num::hardswish(num::linear(h, tape.param(*p.fc2_w), tape.param(*p.fc2_b)));
    return num::linear(h, tape.param(*p.out_w), tape.param(*p.out_b));
}

// ---------------------------------------------------------------------------

StrataNet::StrataNet(ModelConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    cfg_.d_ff = cfg_.ff_width();
    num::Rng rng(init_seed);
    const std::size_t d = cfg_.d;

    auto weight = [&](const std::string& name, std::size_t out, std::size_t in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> u(-bound, bound);
        Tensor t({out, in});
        for (auto& v : t.data()) v = u(rng);
        return &params_.add(name, std::move(t));
    };
    auto constant = [&](const std::string& name, std::size_t n, double value) {
        return &params_.add(name, Tensor({n}, value));
    };

    if (cfg_.encoder == SpatialEncoder::Sage) {
        const std::size_t groups = cfg_.shared_sage ? 1 : cfg_.k;
        for (std::size_t g = 0; g < groups; ++g) {
            const std::string prefix = cfg_.shared_sage ? "sage." : "sage.g" + std::to_string(g) + ".";
            std::vector<SageLayerParams> layers;
            for (std::size_t l = 0; l < cfg_.sage_layers; ++l) {
                const std::size_t in = l == 0 ? ModelConfig::in_features : d;
                const std::string base = prefix + std::to_string(l);
                SageLayerParams sp;
                sp.root = weight(base + ".root", d, in);
                sp.neigh = weight(base + ".neigh", d, in);
                sp.bias = constant(base + ".bias", d, 0.0);
                layers.push_back(sp);
            }
            sage_.push_back(std::move(layers));
        }
    } else {
        lift_w_ = weight("lift.weight", d, ModelConfig::in_features);
        lift_b_ = constant("lift.bias", d, 0.0);
    }

    Param* shared_alpha = nullptr;
    if (cfg_.blocks > 0 && cfg_.long_range_skip && cfg_.alpha_mode == AlphaMode::Shared) {
        shared_alpha = &params_.add("alpha", Tensor::scalar(cfg_.alpha0), true);
    }
    for (std::size_t b = 0; b < cfg_.blocks; ++b) {
        const std::string base = "blocks." + std::to_string(b) + ".";
        AttentionBlockParams bp;
        bp.wq = weight(base + "attn.wq", d, d);
        bp.wk = weight(base + "attn.wk", d, d);
        bp.wv = weight(base + "attn.wv", d, d);
        bp.wo = weight(base + "attn.wo", d, d);
        bp.ff1_w = weight(base + "ff1.weight", cfg_.ff_width(), d);
        bp.ff1_b = constant(base + "ff1.bias", cfg_.ff_width(), 0.0);
        bp.ff2_w = weight(base + "ff2.weight", d, cfg_.ff_width());
        bp.ff2_b = constant(base + "ff2.bias", d, 0.0);
        bp.ln1_g = constant(base + "ln1.gain", d, 1.0);
        bp.ln1_b = constant(base + "ln1.bias", d, 0.0);
        bp.ln2_g = constant(base + "ln2.gain", d, 1.0);
        bp.ln2_b = constant(base + "ln2.bias", d, 0.0);
        blocks_.push_back(bp);
        if (cfg_.long_range_skip) {
            SkipParams sp;
            sp.alpha = shared_alpha ? shared_alpha : &params_.add(base + "alpha", Tensor::scalar(cfg_.alpha0), true);
            sp.ln_g = constant(base + "skip_ln.gain", d, 1.0);
            sp.ln_b = constant(base + "skip_ln.bias", d, 0.0);
            skips_.push_back(sp);
        }
    }

    head_.temporal_w = weight("head.temporal.weight", 1, cfg_.k);
    head_.temporal_b = constant("head.temporal.bias", 1, 0.0);
    head_.fc1_w = weight("head.fc1.weight", d, d);
    head_.fc1_b = constant("head.fc1.bias", d, 0.0);
    head_.fc2_w = weight("head.fc2.weight", d, d);
    head_.fc2_b = constant("head.fc2.bias", d, 0.0);
    head_.out_w = weight("head.out.weight", cfg_.m, d);
    head_.out_b = constant("head.out.bias", cfg_.m, 0.0);
}

Var StrataNet::spatial_encode(Tape& tape, const ModelInput& in) const {
    const std::size_t n = in.n_nodes, k = in.k, d = cfg_.d;
    if (k != cfg_.k) {
        throw num::DimensionError("input has " + std::to_string(k) + " graphs, model expects k=" + std::to_string(cfg_.k));
    }
    Var stacked;
    if (cfg_.encoder == SpatialEncoder::LinearLift) {
        stacked = num::linear(tape.constant(in.stacked_features), tape.param(*lift_w_), tape.param(*lift_b_));
    } else if (cfg_.shared_sage) {
        Var h = tape.constant(in.stacked_features);
        for (std::size_t l = 0; l < sage_[0].size(); ++l) {
            h = sage_layer(tape, h, in.stacked, sage_[0][l]);
            if (l + 1 < sage_[0].size()) h = num::relu(h);
        }
        stacked = h;
    } else {
        std::vector<Var> per_graph;
        const std::size_t f = ModelConfig::in_features;
        for (std::size_t t = 0; t < k; ++t) {
            Tensor slice({n, f});
            std::copy_n(in.stacked_features.raw() + t * n * f, n * f, slice.raw());
            Var h = tape.constant(std::move(slice));
            for (std::size_t l = 0; l < sage_[t].size(); ++l) {
                h = sage_layer(tape, h, in.single, sage_[t][l]);
                if (l + 1 < sage_[t].size()) h = num::relu(h);
            }
            per_graph.push_back(h);
        }
        stacked = num::concat(per_graph, 0);
    }
    // time-major [k, n, d] -> node-major [n, k, d]
    return num::permute(num::reshape(stacked, {k, n, d}), {1, 0, 2});
}

Var StrataNet::forward(Tape& tape, const ModelInput& in, num::Rng& rng, bool train, ForwardTrace* trace) const {
    Var x = spatial_encode(tape, in);
    if (trace) {
        trace->embedding = x.value();
        trace->block_inputs.push_back(x.value());
    }
    Var z = x;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        Var y = temporal_block(tape, z, blocks_[b], cfg_.heads, cfg_.dropout, rng, train, cfg_.ln_eps,
                               trace ? &trace->attention : nullptr);
        z = cfg_.long_range_skip ? adaptive_lr_skip(tape, y, x, skips_[b], cfg_.ln_eps) : y;
        if (trace) trace->block_inputs.push_back(z.value());
    }
    return head(tape, z, head_);
}

std::vector<double> StrataNet::alphas() const {
    std::vector<double> out;
    for (const auto& s : skips_) out.push_back(s.alpha->value[0]);
    return out;
}

void StrataNet::set_alphas(double value) {
    for (auto& s : skips_) s.alpha->value[0] = value;
}

}  // namespace strata::model
