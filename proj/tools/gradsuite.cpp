#include <random>

#include "cli.hpp"
#include "strata/seeding.hpp"
#include "strata/trainer.hpp"

namespace strata::cli {

using namespace strata::num;

namespace {

struct OpCase {
    std::string name;
    std::vector<std::pair<std::string, Shape>> inputs;
    std::function<Var(Tape&, ParamStore&)> build;
};

Tensor uniform(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(shape);
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.data()) v = u(rng);
    return t;
}

Var in(Tape& t, ParamStore& p, const char* name) { return t.param(p.get(name)); }

std::vector<OpCase> op_cases() {
    const auto nl = NeighborLists::weighted_mean({{1, 2}, {0}, {0, 1, 3}, {2}}, {{1.0, 3.0}, {2.0}, {1, 1, 2}, {5}});
    const auto ml = NeighborLists::mean({{1, 3}, {0, 2, 3}, {1}, {0, 1}});
    return {
        {"linear", {{"x", {2, 3, 4}}, {"w", {5, 4}}, {"b", {5}}},
         [](Tape& t, ParamStore& p) { return linear(in(t, p, "x"), in(t, p, "w"), in(t, p, "b")); }},
        {"matmul", {{"a", {3, 4}}, {"b", {4, 2}}},
         [](Tape& t, ParamStore& p) { return matmul(in(t, p, "a"), in(t, p, "b")); }},
        {"bmm", {{"a", {3, 2, 4}}, {"b", {3, 4, 5}}},
         [](Tape& t, ParamStore& p) { return bmm(in(t, p, "a"), in(t, p, "b")); }},
        {"bmm_transposed", {{"a", {3, 2, 4}}, {"b", {3, 5, 4}}},
         [](Tape& t, ParamStore& p) { return bmm(in(t, p, "a"), in(t, p, "b"), true); }},
        {"add", {{"a", {3, 3}}, {"b", {3, 3}}}, [](Tape& t, ParamStore& p) { return add(in(t, p, "a"), in(t, p, "b")); }},
        {"sub", {{"a", {3, 3}}, {"b", {3, 3}}}, [](Tape& t, ParamStore& p) { return sub(in(t, p, "a"), in(t, p, "b")); }},
        {"scale", {{"x", {2, 5}}}, [](Tape& t, ParamStore& p) { return scale(in(t, p, "x"), -1.7); }},
        {"add_bias", {{"x", {4, 3}}, {"b", {3}}},
         [](Tape& t, ParamStore& p) { return add_bias(in(t, p, "x"), in(t, p, "b")); }},
        {"scalar_mix", {{"alpha", {1}}, {"x", {2, 3}}, {"y", {2, 3}}},
         [](Tape& t, ParamStore& p) { return scalar_mix(in(t, p, "alpha"), in(t, p, "x"), in(t, p, "y")); }},
        {"transpose", {{"x", {3, 4}}}, [](Tape& t, ParamStore& p) { return transpose(in(t, p, "x")); }},
        {"reshape", {{"x", {3, 4}}}, [](Tape& t, ParamStore& p) { return reshape(in(t, p, "x"), {2, 6}); }},
        {"permute", {{"x", {2, 3, 4, 2}}}, [](Tape& t, ParamStore& p) { return permute(in(t, p, "x"), {2, 0, 3, 1}); }},
        {"concat", {{"a", {2, 2, 3}}, {"b", {2, 1, 3}}},
         [](Tape& t, ParamStore& p) {
             std::vector<Var> v{in(t, p, "a"), in(t, p, "b")};
             return concat(v, 1);
         }},
        {"relu", {{"x", {4, 4}}}, [](Tape& t, ParamStore& p) { return relu(in(t, p, "x")); }},
        {"hardswish", {{"x", {4, 4}}}, [](Tape& t, ParamStore& p) { return hardswish(scale(in(t, p, "x"), 5.0)); }},
        {"softmax", {{"x", {3, 5}}}, [](Tape& t, ParamStore& p) { return softmax_lastdim(scale(in(t, p, "x"), 3.0)); }},
        {"layernorm", {{"x", {3, 6}}, {"g", {6}}, {"b", {6}}},
         [](Tape& t, ParamStore& p) { return layernorm(in(t, p, "x"), in(t, p, "g"), in(t, p, "b")); }},
        {"dropout", {{"x", {4, 4}}},
         [](Tape& t, ParamStore& p) {
             Rng r(3);
             return dropout(in(t, p, "x"), 0.4, r, true);
         }},
        {"neighbor_aggregate_weighted", {{"x", {4, 3}}},
         [nl](Tape& t, ParamStore& p) { return neighbor_aggregate(in(t, p, "x"), nl); }},
        {"neighbor_aggregate_mean", {{"x", {4, 3}}},
         [ml](Tape& t, ParamStore& p) { return neighbor_aggregate(in(t, p, "x"), ml); }},
        {"segment_mean", {{"x", {4, 3}}},
         [](Tape& t, ParamStore& p) { return segment_mean(in(t, p, "x"), {{1, 2}, {0}, {3, 1}, {0, 1, 2}}); }},
        {"sum", {{"x", {3, 2}}}, [](Tape& t, ParamStore& p) { return scale(sum(in(t, p, "x")), 0.5); }},
    };
}

GradCheckResult check_model(bool train, std::mt19937_64& rng) {
    model::ModelConfig cfg;
    cfg.d = 4;
    cfg.sage_layers = 2;
    cfg.blocks = 2;
    cfg.heads = 2;
    cfg.m = 2;
    cfg.k = 3;
    cfg.dropout = 0.1;

    const auto recs = data::to_thickness(data::synth_generate(1, rng(), {8, cfg.k + cfg.m + 1}));
    graph::SequenceOptions opts;
    opts.shallow = cfg.k;
    opts.deep = cfg.m;
    const auto seq = graph::build_sequence(recs[0], opts);
    const train::NormStats stats = train::NormStats::fit(std::vector<graph::TemporalGraphSequence>{seq});
    const auto input = model::make_input(seq, cfg.aggregator, [&](Tensor& f) { stats.apply(f); });

    model::StrataNet net(cfg, rng());
    for (auto& p : net.params()) {
        p->value = p->unit_interval ? uniform(p->value.shape(), rng, 0.2, 0.8) : uniform(p->value.shape(), rng);
    }
    const Tensor target = uniform({seq.n_nodes(), cfg.m}, rng, -2.0, 2.0);
    const std::uint64_t drop_seed = rng();
    return check_gradients(train ? "model_train" : "model_eval", net.params(), [&](Tape& tape) {
        Rng drop(drop_seed);
        return mse(net.forward(tape, input, drop, train), target);
    });
}

}  // namespace

std::vector<GradCheckResult> gradcheck_suite(std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, "gradcheck"));
    std::vector<GradCheckResult> out;
    for (const auto& c : op_cases()) {
        ParamStore ps;
        for (const auto& [name, shape] : c.inputs) {
            ps.add(name, name == "alpha" ? uniform(shape, rng, 0.1, 0.9) : uniform(shape, rng));
        }
        Tensor probe;
        {
            Tape t;
            probe = c.build(t, ps).value();
        }
        // A random quadratic read-out makes every output entry matter.
        const Tensor target = uniform(probe.shape(), rng, -2.0, 2.0);
        out.push_back(check_gradients(c.name, ps, [&](Tape& t) { return mse(c.build(t, ps), target); }));
    }
    out.push_back(check_model(false, rng));
    out.push_back(check_model(true, rng));
    return out;
}

}  // namespace strata::cli
