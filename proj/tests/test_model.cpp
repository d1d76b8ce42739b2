#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "strata/errors.hpp"
#include "strata/model.hpp"
#include "support.hpp"

using namespace strata;
using namespace strata::model;
using num::Shape;
using num::Tape;
using num::Tensor;
using num::Var;
using test::max_abs_diff;
using test::random_tensor;

namespace {

using Vec = std::vector<double>;

// ---- independent straight-line reference ---------------------------------

Vec matvec(const Tensor& w, const Vec& x) {
    Vec out(w.dim(0), 0.0);
    for (std::size_t r = 0; r < w.dim(0); ++r)
        for (std::size_t c = 0; c < w.dim(1); ++c) out[r] += w.at(r, c) * x[c];
    return out;
}

Vec plus(Vec a, const Vec& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}

Vec plus(Vec a, const Tensor& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}

Vec norm(const Vec& x, const Tensor& g, const Tensor& b, double eps) {
    double mu = 0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(x.size());
    double var = 0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(x.size());
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mu) / std::sqrt(var + eps) * g[i] + b[i];
    return out;
}

double hs(double x) { return x * std::min(std::max(x + 3.0, 0.0), 6.0) / 6.0; }

struct Graph {
    std::vector<std::vector<std::size_t>> nbr;
    std::vector<std::vector<double>> w;
};

Graph graph_of(const graph::SpatialStructure& s) {
    Graph g;
    g.nbr.resize(s.n_nodes);
    g.w.resize(s.n_nodes);
    for (std::size_t e = 0; e < s.edges.size(); ++e) {
        auto [i, j] = s.edges[e];
        g.nbr[i].push_back(j);
        g.w[i].push_back(s.weights[e]);
        g.nbr[j].push_back(i);
        g.w[j].push_back(s.weights[e]);
    }
    return g;
}

Vec aggregate(const std::vector<Vec>& h, const Graph& g, std::size_t i, bool weighted) {
    Vec acc(h[0].size(), 0.0);
    double total = 0;
    for (std::size_t e = 0; e < g.nbr[i].size(); ++e) {
        const double c = weighted ? g.w[i][e] : 1.0;
        total += c;
        for (std::size_t f = 0; f < acc.size(); ++f) acc[f] += c * h[g.nbr[i][e]][f];
    }
    for (auto& v : acc) v /= total;
    return acc;
}

// predictions [n][m]
std::vector<Vec> reference_forward(const StrataNet& net, const Tensor& stacked, const Graph& g, std::size_t n) {
    const auto& cfg = net.config();
    const auto& P = net.params();
    const bool weighted = cfg.aggregator == graph::Aggregation::WeightedMean;
    std::vector<std::vector<Vec>> x(n, std::vector<Vec>(cfg.k));  // [node][t]
    for (std::size_t t = 0; t < cfg.k; ++t) {
        std::vector<Vec> h(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t f = 0; f < 3; ++f) h[i].push_back(stacked.at(t * n + i, f));
        if (cfg.encoder == SpatialEncoder::LinearLift) {
            for (std::size_t i = 0; i < n; ++i)
                x[i][t] = plus(matvec(P.get("lift.weight").value, h[i]), P.get("lift.bias").value);
            continue;
        }
        const std::string pre = cfg.shared_sage ? "sage." : "sage.g" + std::to_string(t) + ".";
        for (std::size_t l = 0; l < cfg.sage_layers; ++l) {
            const std::string b = pre + std::to_string(l);
            std::vector<Vec> next(n);
            for (std::size_t i = 0; i < n; ++i) {
                next[i] = plus(plus(matvec(P.get(b + ".root").value, h[i]),
                                    matvec(P.get(b + ".neigh").value, aggregate(h, g, i, weighted))),
                               P.get(b + ".bias").value);
                if (l + 1 < cfg.sage_layers)
                    for (auto& v : next[i]) v = std::max(v, 0.0);
            }
            h = std::move(next);
        }
        for (std::size_t i = 0; i < n; ++i) x[i][t] = h[i];
    }

    const std::size_t k = cfg.k, d = cfg.d, dk = d / cfg.heads;
    std::vector<std::vector<Vec>> z = x;
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        const std::string pre = "blocks." + std::to_string(b) + ".";
        auto W = [&](const std::string& s) -> const Tensor& { return P.get(pre + s).value; };
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<Vec> q(k), kk(k), v(k), y(k);
            for (std::size_t t = 0; t < k; ++t) {
                q[t] = matvec(W("attn.wq"), z[i][t]);
                kk[t] = matvec(W("attn.wk"), z[i][t]);
                v[t] = matvec(W("attn.wv"), z[i][t]);
            }
            for (std::size_t t = 0; t < k; ++t) {
                Vec ctx(d, 0.0);
                for (std::size_t h = 0; h < cfg.heads; ++h) {
                    Vec s(k);
                    for (std::size_t u = 0; u < k; ++u) {
                        double dot = 0;
                        for (std::size_t c = h * dk; c < (h + 1) * dk; ++c) dot += q[t][c] * kk[u][c];
                        s[u] = dot / std::sqrt(static_cast<double>(dk));
                    }
                    const double mx = *std::max_element(s.begin(), s.end());
                    double tot = 0;
                    for (auto& e : s) tot += (e = std::exp(e - mx));
                    for (std::size_t u = 0; u < k; ++u)
                        for (std::size_t c = h * dk; c < (h + 1) * dk; ++c) ctx[c] += s[u] / tot * v[u][c];
                }
                Vec a = norm(plus(z[i][t], matvec(W("attn.wo"), ctx)), W("ln1.gain"), W("ln1.bias"), cfg.ln_eps);
                Vec hid = plus(matvec(W("ff1.weight"), a), W("ff1.bias"));
                for (auto& e : hid) e = std::max(e, 0.0);
                Vec ff = plus(matvec(W("ff2.weight"), hid), W("ff2.bias"));
                y[t] = norm(plus(a, ff), W("ln2.gain"), W("ln2.bias"), cfg.ln_eps);
            }
            for (std::size_t t = 0; t < k; ++t) {
                if (!cfg.long_range_skip) {
                    z[i][t] = y[t];
                    continue;
                }
                const double al = net.skips()[b].alpha->value[0];
                Vec mix(d);
                for (std::size_t c = 0; c < d; ++c) mix[c] = al * x[i][t][c] + (1 - al) * y[t][c];
                z[i][t] = norm(mix, W("skip_ln.gain"), W("skip_ln.bias"), cfg.ln_eps);
            }
        }
    }

    std::vector<Vec> out(n);
    const Tensor& tw = P.get("head.temporal.weight").value;
    for (std::size_t i = 0; i < n; ++i) {
        Vec tv(d, P.get("head.temporal.bias").value[0]);
        for (std::size_t t = 0; t < k; ++t)
            for (std::size_t c = 0; c < d; ++c) tv[c] += tw[t] * z[i][t][c];
        Vec h1 = plus(matvec(P.get("head.fc1.weight").value, tv), P.get("head.fc1.bias").value);
        for (auto& e : h1) e = hs(e);
        Vec h2 = plus(matvec(P.get("head.fc2.weight").value, h1), P.get("head.fc2.bias").value);
        for (auto& e : h2) e = hs(e);
        out[i] = plus(matvec(P.get("head.out.weight").value, h2), P.get("head.out.bias").value);
    }
    return out;
}

// ---- fixtures ---------------------------------------------------------------

struct Fixture {
    std::shared_ptr<const graph::SpatialStructure> structure;
    ModelInput input;
};

Fixture random_fixture(std::size_t n, std::size_t k, graph::Aggregation agg, std::mt19937_64& rng,
                       graph::PartitionSpec spec = {}) {
    std::vector<double> lat, lon;
    for (std::size_t i = 0; i < n; ++i) {
        lat.push_back(70.0 + 1e-3 * static_cast<double>(i));
        lon.push_back(-45.0 + 2e-3 * static_cast<double>(i) + 1e-4 * static_cast<double>(rng() % 7));
    }
    Fixture f;
    f.structure = graph::build_structure(lat, lon, spec);
    f.input.n_nodes = n;
    f.input.k = k;
    f.input.stacked_features = random_tensor({k * n, 3}, rng, -1.5, 1.5);
    f.input.single = f.structure->aggregation_lists(agg);
    f.input.stacked = f.input.single.replicated(k);
    return f;
}

ModelConfig tiny_config() {
    ModelConfig c;
    c.d = 4;
    c.sage_layers = 2;
    c.blocks = 2;
    c.heads = 2;
    c.m = 2;
    c.k = 3;
    c.dropout = 0.1;
    return c;
}

// Replaces every param with fresh random values; alpha params stay in [0,1].
void randomize(num::ParamStore& store, std::mt19937_64& rng, const std::string& prefix = "") {
    for (auto& p : store) {
        if (!p->name.starts_with(prefix)) continue;
        p->value = p->unit_interval ? random_tensor(p->value.shape(), rng, 0.0, 1.0)
                                    : random_tensor(p->value.shape(), rng, -0.8, 0.8);
    }
}

Tensor eval_forward(const StrataNet& net, const ModelInput& in, ForwardTrace* trace = nullptr) {
    Tape tape;
    num::Rng rng(0);
    return net.forward(tape, in, rng, false, trace).value();
}

}  // namespace

TEST_SUITE("sage_layer") {
    TEST_CASE("hand example with identity weights") {
        num::ParamStore store;
        SageLayerParams p{&store.add("root", Tensor::matrix(2, 2, {1, 0, 0, 1})),
                          &store.add("neigh", Tensor::matrix(2, 2, {1, 0, 0, 1})), nullptr};
        auto lists = num::NeighborLists::mean({{1, 2}, {0}, {0}});
        Tape tape;
        auto out = sage_layer(tape, tape.constant(Tensor::matrix(3, 2, {1, 0, 0, 2, 2, 0})), lists, p).value();
        CHECK(std::abs(out.at(0, 0) - 2.0) <= 1e-12);
        CHECK(std::abs(out.at(0, 1) - 1.0) <= 1e-12);
    }

    TEST_CASE("zero neighbor weights reduce to the root transform") {
        std::mt19937_64 rng(1);
        num::ParamStore store;
        SageLayerParams p{&test::random_param(store, "root", {3, 4}, rng), &store.add("neigh", Tensor({3, 4})),
                          &test::random_param(store, "bias", {3}, rng)};
        auto lists = num::NeighborLists::mean({{1}, {0, 2}, {1}});
        Tensor x = random_tensor({3, 4}, rng);
        Tape tape;
        auto out = sage_layer(tape, tape.constant(x), lists, p).value();
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t r = 0; r < 3; ++r) {
                double e = p.bias->value[r];
                for (std::size_t c = 0; c < 4; ++c) e += p.root->value.at(r, c) * x.at(i, c);
                CHECK(std::abs(out.at(i, r) - e) <= 1e-12);
            }
    }

    TEST_CASE("naive per-node loop on 100 random graphs") {
        std::mt19937_64 rng(2);
        double worst = 0;
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t n = 3 + rng() % 10, din = 1 + rng() % 5, dout = 1 + rng() % 5;
            const bool weighted = trial % 2;
            Graph g;
            g.nbr.resize(n);
            g.w.resize(n);
            std::uniform_real_distribution<double> wd(0.1, 3.0);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j)
                    if (j != i && rng() % 3 == 0) {
                        g.nbr[i].push_back(j);
                        g.w[i].push_back(wd(rng));
                    }
                if (g.nbr[i].empty()) {
                    g.nbr[i].push_back((i + 1) % n);
                    g.w[i].push_back(wd(rng));
                }
            }
            num::ParamStore store;
            SageLayerParams p{&test::random_param(store, "r", {dout, din}, rng),
                              &test::random_param(store, "n", {dout, din}, rng),
                              &test::random_param(store, "b", {dout}, rng)};
            Tensor x = random_tensor({n, din}, rng);
            auto lists = weighted ? num::NeighborLists::weighted_mean(g.nbr, g.w) : num::NeighborLists::mean(g.nbr);
            Tape tape;
            auto out = sage_layer(tape, tape.constant(x), lists, p).value();
            std::vector<Vec> rows(n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < din; ++c) rows[i].push_back(x.at(i, c));
            for (std::size_t i = 0; i < n; ++i) {
                Vec e = plus(plus(matvec(p.root->value, rows[i]), matvec(p.neigh->value, aggregate(rows, g, i, weighted))),
                             p.bias->value);
                for (std::size_t r = 0; r < dout; ++r) worst = std::max(worst, std::abs(out.at(i, r) - e[r]));
            }
        }
        CHECK(worst <= 1e-12);
    }

    TEST_CASE("relabeling nodes permutes the output") {
        std::mt19937_64 rng(3);
        const std::size_t n = 9;
        std::vector<std::vector<std::size_t>> nbr(n);
        for (std::size_t i = 0; i < n; ++i) {
            nbr[i] = {(i + 1) % n, (i + 4) % n};
            std::sort(nbr[i].begin(), nbr[i].end());
        }
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);  // old i -> new perm[i]
        std::vector<std::vector<std::size_t>> pn(n);
        for (std::size_t i = 0; i < n; ++i)
            for (auto j : nbr[i]) pn[perm[i]].push_back(perm[j]);
        num::ParamStore store;
        SageLayerParams p{&test::random_param(store, "r", {3, 2}, rng), &test::random_param(store, "n", {3, 2}, rng),
                          &test::random_param(store, "b", {3}, rng)};
        Tensor x = random_tensor({n, 2}, rng), px({n, 2});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < 2; ++c) px.at(perm[i], c) = x.at(i, c);
        Tape tape;
        auto a = sage_layer(tape, tape.constant(x), num::NeighborLists::mean(nbr), p).value();
        auto b = sage_layer(tape, tape.constant(px), num::NeighborLists::mean(pn), p).value();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(a.at(i, c) - b.at(perm[i], c)) <= 1e-12);
    }
}

TEST_SUITE("spatial_encode") {
    TEST_CASE("single graph keeps a time extent of one") {
        std::mt19937_64 rng(4);
        auto cfg = tiny_config();
        cfg.k = 1;
        StrataNet net(cfg, 7);
        auto fx = random_fixture(8, 1, cfg.aggregator, rng);
        Tape tape;
        auto x = net.spatial_encode(tape, fx.input).value();
        CHECK(x.shape() == Shape{8, 1, 4});

        Var h = tape.constant(fx.input.stacked_features);
        for (std::size_t l = 0; l < cfg.sage_layers; ++l) {
            h = sage_layer(tape, h, fx.input.single, net.sage()[0][l]);
            if (l + 1 < cfg.sage_layers) h = num::relu(h);
        }
        CHECK(max_abs_diff(x, h.value().reshaped({8, 1, 4})) == 0.0);
    }

    TEST_CASE("permuting the input graphs permutes the time axis") {
        std::mt19937_64 rng(5);
        auto cfg = tiny_config();
        StrataNet net(cfg, 8);
        auto fx = random_fixture(8, 3, cfg.aggregator, rng);
        ModelInput swapped = fx.input;
        const std::vector<std::size_t> order{2, 0, 1};
        for (std::size_t t = 0; t < 3; ++t)
            for (std::size_t i = 0; i < 8; ++i)
                for (std::size_t f = 0; f < 3; ++f)
                    swapped.stacked_features.at(t * 8 + i, f) = fx.input.stacked_features.at(order[t] * 8 + i, f);
        Tape tape;
        auto a = net.spatial_encode(tape, fx.input).value();
        auto b = net.spatial_encode(tape, swapped).value();
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t t = 0; t < 3; ++t)
                for (std::size_t c = 0; c < 4; ++c)
                    CHECK(b[(i * 3 + t) * 4 + c] == a[(i * 3 + order[t]) * 4 + c]);
    }

    TEST_CASE("mismatched graph count is rejected") {
        std::mt19937_64 rng(6);
        StrataNet net(tiny_config(), 1);
        auto fx = random_fixture(8, 2, graph::Aggregation::Mean, rng);
        Tape tape;
        CHECK_THROWS_AS(net.spatial_encode(tape, fx.input), num::DimensionError);
    }
}

TEST_SUITE("temporal_block") {
    TEST_CASE("attention rows sum to one") {
        std::mt19937_64 rng(7);
        auto cfg = tiny_config();
        cfg.k = 5;
        cfg.d = 8;
        StrataNet net(cfg, 3);
        randomize(net.params(), rng);
        auto fx = random_fixture(10, 5, cfg.aggregator, rng);
        ForwardTrace trace;
        eval_forward(net, fx.input, &trace);
        REQUIRE(trace.attention.size() == 2);
        for (const auto& a : trace.attention) {
            CHECK(a.shape() == Shape{10 * 2, 5, 5});
            for (std::size_t r = 0; r < a.size() / 5; ++r) {
                double s = 0;
                for (std::size_t c = 0; c < 5; ++c) s += a[r * 5 + c];
                CHECK(std::abs(s - 1.0) <= 1e-12);
            }
        }
    }

    TEST_CASE("single time step attends to itself") {
        std::mt19937_64 rng(8);
        StrataNet net([] {
            auto c = tiny_config();
            c.k = 1;
            return c;
        }(), 4);
        std::vector<Tensor> attn;
        Tape tape;
        num::Rng drop(1);
        auto z = tape.constant(random_tensor({6, 1, 4}, rng));
        auto out = temporal_block(tape, z, net.blocks()[0], 2, 0.1, drop, false, 1e-5, &attn);
        CHECK(out.shape() == Shape{6, 1, 4});
        for (double v : attn.at(0).data()) CHECK(v == 1.0);
    }

    TEST_CASE("zero query and key projections give uniform attention") {
        std::mt19937_64 rng(9);
        num::ParamStore s;
        const std::size_t d = 3;
        AttentionBlockParams p;
        p.wq = &s.add("wq", Tensor({d, d}));
        p.wk = &s.add("wk", Tensor({d, d}));
        p.wv = &test::random_param(s, "wv", {d, d}, rng);
        p.wo = &test::random_param(s, "wo", {d, d}, rng);
        p.ff1_w = &s.add("f1", Tensor({5, d}));
        p.ff1_b = &s.add("f1b", Tensor({5}));
        p.ff2_w = &s.add("f2", Tensor({d, 5}));
        p.ff2_b = &s.add("f2b", Tensor({d}));
        p.ln1_g = &s.add("g1", Tensor({d}, 1.0));
        p.ln1_b = &s.add("b1", Tensor({d}));
        p.ln2_g = &s.add("g2", Tensor({d}, 1.0));
        p.ln2_b = &s.add("b2", Tensor({d}));
        Tensor z = random_tensor({1, 2, d}, rng);
        std::vector<Tensor> attn;
        Tape tape;
        num::Rng drop(0);
        auto out = temporal_block(tape, tape.constant(z), p, 1, 0.0, drop, false, 1e-5, &attn).value();
        for (double v : attn[0].data()) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));

        Vec z0(z.raw(), z.raw() + d), z1(z.raw() + d, z.raw() + 2 * d);
        Vec vmean = matvec(p.wv->value, z0);
        Vec v1 = matvec(p.wv->value, z1);
        for (std::size_t c = 0; c < d; ++c) vmean[c] = 0.5 * (vmean[c] + v1[c]);
        Vec mha = matvec(p.wo->value, vmean);
        for (std::size_t t = 0; t < 2; ++t) {
            Vec a = norm(plus(t ? z1 : z0, mha), p.ln1_g->value, p.ln1_b->value, 1e-5);
            Vec e = norm(a, p.ln2_g->value, p.ln2_b->value, 1e-5);  // zero FFN
            for (std::size_t c = 0; c < d; ++c) CHECK(std::abs(out[t * d + c] - e[c]) <= 1e-12);
        }
    }
}

TEST_SUITE("adaptive_lr_skip") {
    TEST_CASE("mixing limits and the scalar mix") {
        std::mt19937_64 rng(10);
        num::ParamStore s;
        SkipParams p{&s.add("a", Tensor::scalar(1.0), true), &test::random_param(s, "g", {4}, rng),
                     &test::random_param(s, "b", {4}, rng)};
        Tensor x = random_tensor({3, 2, 4}, rng), y = random_tensor({3, 2, 4}, rng);
        Tape tape;
        auto X = tape.constant(x);
        auto ln_x = num::layernorm(X, tape.param(*p.ln_g), tape.param(*p.ln_b)).value();
        auto ln_y = num::layernorm(tape.constant(y), tape.param(*p.ln_g), tape.param(*p.ln_b)).value();
        CHECK(max_abs_diff(adaptive_lr_skip(tape, tape.constant(y), X, p).value(), ln_x) <= 1e-12);
        p.alpha->value[0] = 0.0;
        CHECK(max_abs_diff(adaptive_lr_skip(tape, tape.constant(y), X, p).value(), ln_y) <= 1e-12);

        p.alpha->value[0] = 0.25;
        Tensor y2 = x;
        for (auto& v : y2.data()) v *= 2.0;
        auto got = adaptive_lr_skip(tape, tape.constant(y2), X, p).value();
        for (std::size_t r = 0; r < 6; ++r) {
            Vec mix(4);
            for (std::size_t c = 0; c < 4; ++c) mix[c] = 1.75 * x[r * 4 + c];
            Vec e = norm(mix, p.ln_g->value, p.ln_b->value, 1e-5);
            for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(got[r * 4 + c] - e[c]) <= 1e-12);
        }
    }
}

TEST_SUITE("head") {
    TEST_CASE("zero weights yield the output bias") {
        std::mt19937_64 rng(11);
        StrataNet net(tiny_config(), 2);
        for (auto& p : net.params())
            if (p->name.starts_with("head.")) p->value.fill(0.0);
        net.params().get("head.out.bias").value = Tensor::vector({1.5, -2.25});
        Tape tape;
        auto out = head(tape, tape.constant(random_tensor({5, 3, 4}, rng)), net.head_params()).value();
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(out.at(i, 0) == 1.5);
            CHECK(out.at(i, 1) == -2.25);
        }
    }

    TEST_CASE("unit temporal weight passes the feature vector through") {
        std::mt19937_64 rng(12);
        auto cfg = tiny_config();
        cfg.k = 1;
        cfg.m = 4;
        StrataNet net(cfg, 2);
        const auto eye = Tensor::matrix(4, 4, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
        auto& P = net.params();
        P.get("head.temporal.weight").value = Tensor::matrix(1, 1, {1.0});
        P.get("head.fc1.weight").value = eye;
        P.get("head.fc2.weight").value = eye;
        P.get("head.out.weight").value = eye;
        Tensor z = random_tensor({3, 1, 4}, rng, -4, 4);
        Tape tape;
        auto out = head(tape, tape.constant(z), net.head_params()).value();
        for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(out[i] - hs(hs(z[i]))) <= 1e-15);
    }
}

TEST_SUITE("forward") {
    TEST_CASE("matches the straight-line reference") {
        std::mt19937_64 rng(13);
        struct Case {
            const char* name;
            ModelConfig cfg;
        };
        std::vector<Case> cases;
        cases.push_back({"tiny", tiny_config()});
        auto c = tiny_config();
        c.aggregator = graph::Aggregation::WeightedMean;
        c.alpha_mode = AlphaMode::Shared;
        cases.push_back({"weighted shared-alpha", c});
        c = tiny_config();
        c.shared_sage = false;
        c.long_range_skip = false;
        c.d = 6;
        c.heads = 3;
        cases.push_back({"per-graph sage, no skip", c});
        c = tiny_config();
        c.encoder = SpatialEncoder::LinearLift;
        cases.push_back({"linear lift", c});
        c = tiny_config();
        c.blocks = 0;
        cases.push_back({"graph only", c});
        for (auto& cs : cases) {
            CAPTURE(cs.name);
            StrataNet net(cs.cfg, 21);
            randomize(net.params(), rng);
            auto fx = random_fixture(9, cs.cfg.k, cs.cfg.aggregator, rng);
            auto got = eval_forward(net, fx.input);
            auto want = reference_forward(net, fx.input.stacked_features, graph_of(*fx.structure), 9);
            REQUIRE(got.shape() == Shape{9, cs.cfg.m});
            double worst = 0;
            for (std::size_t i = 0; i < 9; ++i)
                for (std::size_t j = 0; j < cs.cfg.m; ++j) worst = std::max(worst, std::abs(got.at(i, j) - want[i][j]));
            CHECK(worst <= 1e-12);
        }
    }

    TEST_CASE("shape contract across configurations") {
        std::mt19937_64 rng(14);
        for (std::size_t n : {5u, 12u})
            for (std::size_t k : {1u, 2u, 4u})
                for (std::size_t blocks : {0u, 1u, 3u})
                    for (std::size_t m : {1u, 3u}) {
                        ModelConfig c = tiny_config();
                        c.k = k;
                        c.blocks = blocks;
                        c.m = m;
                        StrataNet net(c, 1);
                        auto fx = random_fixture(n, k, c.aggregator, rng);
                        CHECK(eval_forward(net, fx.input).shape() == Shape{n, m});
                    }
    }

    TEST_CASE("eval mode is deterministic and train mode uses dropout") {
        std::mt19937_64 rng(15);
        auto cfg = tiny_config();
        cfg.dropout = 0.5;
        StrataNet net(cfg, 5);
        auto fx = random_fixture(8, 3, cfg.aggregator, rng);
        CHECK(eval_forward(net, fx.input) == eval_forward(net, fx.input));
        Tape tape;
        num::Rng r1(1), r2(1);
        auto a = net.forward(tape, fx.input, r1, true).value();
        auto b = net.forward(tape, fx.input, r2, true).value();
        CHECK(a == b);
        CHECK(a != eval_forward(net, fx.input));
    }

    TEST_CASE("alpha fixed at one makes the output independent of the blocks") {
        std::mt19937_64 rng(16);
        auto cfg = tiny_config();
        cfg.blocks = 3;
        StrataNet net(cfg, 6);
        randomize(net.params(), rng);
        net.set_alphas(1.0);
        auto fx = random_fixture(8, 3, cfg.aggregator, rng);
        auto base = eval_forward(net, fx.input);
        for (int rep = 0; rep < 5; ++rep) {
            for (auto& p : net.params()) {
                const bool block_internal = p->name.starts_with("blocks.") && p->name.find(".alpha") == std::string::npos &&
                                            p->name.find("skip_ln") == std::string::npos;
                if (block_internal) p->value = random_tensor(p->value.shape(), rng, -2, 2);
            }
            CHECK(max_abs_diff(eval_forward(net, fx.input), base) <= 1e-12);
        }
    }

    TEST_CASE("alpha fixed at zero equals the normalized block chain") {
        std::mt19937_64 rng(17);
        auto cfg = tiny_config();
        StrataNet net(cfg, 9);
        randomize(net.params(), rng);
        net.set_alphas(0.0);
        auto fx = random_fixture(8, 3, cfg.aggregator, rng);
        auto got = eval_forward(net, fx.input);

        Tape tape;
        num::Rng drop(0);
        Var z = net.spatial_encode(tape, fx.input);
        for (std::size_t b = 0; b < cfg.blocks; ++b) {
            z = temporal_block(tape, z, net.blocks()[b], cfg.heads, cfg.dropout, drop, false);
            z = num::layernorm(z, tape.param(*net.skips()[b].ln_g), tape.param(*net.skips()[b].ln_b));
        }
        CHECK(max_abs_diff(got, head(tape, z, net.head_params()).value()) <= 1e-12);
    }

    TEST_CASE("trace records the embedding and every block input") {
        std::mt19937_64 rng(18);
        StrataNet net(tiny_config(), 3);
        auto fx = random_fixture(8, 3, graph::Aggregation::Mean, rng);
        ForwardTrace tr;
        eval_forward(net, fx.input, &tr);
        CHECK(tr.block_inputs.size() == 3);
        CHECK(tr.block_inputs[0] == tr.embedding);
        CHECK(tr.embedding.shape() == Shape{8, 3, 4});
    }
}

TEST_SUITE("parameters") {
    std::size_t expected_count(const ModelConfig& c) {
        const std::size_t d = c.d, f = c.ff_width();
        std::size_t n = 0;
        if (c.encoder == SpatialEncoder::Sage) {
            std::size_t sage = 2 * d * 3 + d;
            sage += (c.sage_layers - 1) * (2 * d * d + d);
            n += sage * (c.shared_sage ? 1 : c.k);
        } else {
            n += 3 * d + d;
        }
        const std::size_t block = 4 * d * d + f * d + f + d * f + d + 4 * d;
        n += c.blocks * block;
        if (c.long_range_skip && c.blocks) n += c.blocks * 2 * d + (c.alpha_mode == AlphaMode::PerBlock ? c.blocks : 1);
        n += c.k + 1 + 2 * (d * d + d) + c.m * d + c.m;
        return n;
    }

    TEST_CASE("count is a function of the configuration only") {
        for (auto mutate : std::vector<std::function<void(ModelConfig&)>>{
                 [](ModelConfig&) {}, [](ModelConfig& c) { c.blocks = 0; },
                 [](ModelConfig& c) { c.alpha_mode = AlphaMode::Shared; },
                 [](ModelConfig& c) { c.shared_sage = false; }, [](ModelConfig& c) { c.long_range_skip = false; },
                 [](ModelConfig& c) { c.encoder = SpatialEncoder::LinearLift; },
                 [](ModelConfig& c) { c.d_ff = 7; }}) {
            ModelConfig c;
            mutate(c);
            StrataNet a(c, 1), b(c, 99);
            CHECK(a.params().scalar_count() == b.params().scalar_count());
            CHECK(a.params().scalar_count() == expected_count(c));
        }
    }

    TEST_CASE("graph-only model has no attention parameters") {
        auto cfg = tiny_config();
        cfg.blocks = 0;
        StrataNet net(cfg, 1);
        for (const auto& p : net.params()) {
            CHECK_FALSE(p->name.starts_with("blocks."));
            CHECK(p->name != "alpha");
        }
        CHECK(net.alphas().empty());
    }

    TEST_CASE("initialization follows the fan-in rule and alpha starts at alpha0") {
        ModelConfig cfg;
        cfg.alpha0 = 0.75;
        StrataNet net(cfg, 2);
        for (const auto& p : net.params()) {
            if (p->unit_interval) {
                CHECK(p->value[0] == 0.75);
            } else if (p->value.rank() == 2) {
                const double bound = 1.0 / std::sqrt(static_cast<double>(p->value.dim(1)));
                for (double v : p->value.data()) CHECK(std::abs(v) <= bound);
            } else if (p->name.ends_with(".gain")) {
                for (double v : p->value.data()) CHECK(v == 1.0);
            } else {
                for (double v : p->value.data()) CHECK(v == 0.0);
            }
        }
        CHECK(net.alphas() == std::vector<double>(8, 0.75));
        StrataNet again(cfg, 2);
        for (const auto& p : net.params()) CHECK(again.params().get(p->name).value == p->value);
    }
}

TEST_SUITE("gradients") {
    TEST_CASE("full tiny model matches finite differences") {
        std::mt19937_64 rng(19);
        auto cfg = tiny_config();  // n=8, k=3, d=4, 2 blocks, 2 heads, m=2
        for (bool train : {false, true}) {
            CAPTURE(train);
            StrataNet net(cfg, 11);
            randomize(net.params(), rng);
            strata::num::Param* a0 = net.skips()[0].alpha;
            a0->value[0] = 0.3;
            auto fx = random_fixture(8, 3, cfg.aggregator, rng);
            Tensor target = random_tensor({8, 2}, rng, -2, 2);
            auto loss = [&](Tape& tape) {
                num::Rng drop(1234);
                return num::mse(net.forward(tape, fx.input, drop, train), target);
            };
            auto res = test::finite_difference_check(net.params(), loss);
            CAPTURE(res.worst);
            CHECK(res.max_rel <= 1e-4);
        }
    }

    TEST_CASE("every reachable parameter receives gradient") {
        std::mt19937_64 rng(20);
        for (auto mutate : std::vector<std::function<void(ModelConfig&)>>{
                 [](ModelConfig&) {}, [](ModelConfig& c) { c.blocks = 0; },
                 [](ModelConfig& c) { c.long_range_skip = false; },
                 [](ModelConfig& c) { c.encoder = SpatialEncoder::LinearLift; },
                 [](ModelConfig& c) { c.alpha_mode = AlphaMode::Shared; }}) {
            auto cfg = tiny_config();
            cfg.d = 8;
            mutate(cfg);
            StrataNet net(cfg, 3);
            auto fx = random_fixture(10, 3, cfg.aggregator, rng);
            Tensor target = random_tensor({10, 2}, rng, 5, 10);
            Tape tape;
            num::Rng drop(0);
            net.params().zero_grad();
            tape.backward(num::mse(net.forward(tape, fx.input, drop, true), target));
            for (const auto& p : net.params()) {
                CAPTURE(p->name);
                double mx = 0;
                for (double g : p->grad.data()) mx = std::max(mx, std::abs(g));
                CHECK(mx > 0.0);
            }
        }
    }
}

TEST_SUITE("config") {
    TEST_CASE("validation names the field") {
        ModelConfig c;
        c.heads = 5;
        CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("model.heads"), ValidationError);
        c = {};
        c.alpha0 = 1.5;
        CHECK_THROWS_AS(c.validate(), ValidationError);
        c = {};
        c.m = 0;
        CHECK_THROWS_AS(StrataNet(c, 0), ValidationError);
    }

    TEST_CASE("json round trip and strict parsing") {
        ModelConfig c;
        c.d = 32;
        c.blocks = 4;
        c.aggregator = graph::Aggregation::WeightedMean;
        c.alpha_mode = AlphaMode::Shared;
        c.encoder = SpatialEncoder::LinearLift;
        auto back = model_config_from_json(to_json(c));
        c.d_ff = c.ff_width();
        CHECK(back == c);
        CHECK_THROWS_WITH_AS(model_config_from_json(nlohmann::json{{"depth", 3}}), doctest::Contains("model.depth"),
                             ValidationError);
        CHECK_THROWS_WITH_AS(model_config_from_json(nlohmann::json{{"d", "big"}}), doctest::Contains("model.d"),
                             ValidationError);
        CHECK_THROWS_AS(model_config_from_json(nlohmann::json{{"aggregator", "max"}}), ValidationError);
    }
}
