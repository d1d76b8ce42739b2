#include "strata/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

#include "strata/errors.hpp"
#include "strata/seeding.hpp"

namespace strata::data {

using nlohmann::json;

namespace {

[[noreturn]] void invalid(const RadargramRecord& rec, const std::string& what) {
    throw ValidationError("record '" + rec.id + "': " + what);
}

std::vector<double> number_array(const json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_array()) throw std::invalid_argument(std::string("missing array '") + key + "'");
    std::vector<double> out;
    out.reserve(j.at(key).size());
    for (const auto& v : j.at(key)) {
        if (!v.is_number()) throw std::invalid_argument(std::string("non-numeric entry in '") + key + "'");
        out.push_back(v.get<double>());
    }
    return out;
}

RadargramRecord from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("line is not a JSON object");
    RadargramRecord rec;
    if (!j.contains("id") || !j.at("id").is_string()) throw std::invalid_argument("missing string 'id'");
    rec.id = j.at("id").get<std::string>();
    if (!j.contains("width") || !j.at("width").is_number_unsigned()) {
        throw std::invalid_argument("missing non-negative integer 'width'");
    }
    rec.width = j.at("width").get<std::size_t>();
    rec.lat = number_array(j, "lat");
    rec.lon = number_array(j, "lon");
    if (!j.contains("boundaries") || !j.at("boundaries").is_array()) throw std::invalid_argument("missing array 'boundaries'");
    for (const auto& b : j.at("boundaries")) {
        if (!b.is_array()) throw std::invalid_argument("boundary entry is not an array");
        Profile p;
        p.reserve(b.size());
        for (const auto& v : b) {
            if (v.is_null()) {
                p.emplace_back(std::nullopt);
            } else if (v.is_number()) {
                p.emplace_back(v.get<double>());
            } else {
                throw std::invalid_argument("boundary value must be a number or null");
            }
        }
        rec.boundaries.push_back(std::move(p));
    }
    return rec;
}

json to_json(const RadargramRecord& rec) {
    json bounds = json::array();
    for (const auto& p : rec.boundaries) {
        json row = json::array();
        for (const auto& v : p) row.push_back(v ? json(*v) : json(nullptr));
        bounds.push_back(std::move(row));
    }
    return json{{"id", rec.id}, {"width", rec.width}, {"lat", rec.lat}, {"lon", rec.lon}, {"boundaries", std::move(bounds)}};
}

}  // namespace

void validate(const RadargramRecord& rec) {
    if (rec.width == 0) invalid(rec, "width must be positive");
    if (rec.lat.size() != rec.width || rec.lon.size() != rec.width) {
        invalid(rec, "lat/lon must have exactly width=" + std::to_string(rec.width) + " entries");
    }
    for (std::size_t c = 0; c < rec.width; ++c) {
        if (!std::isfinite(rec.lat[c]) || rec.lat[c] < -90.0 || rec.lat[c] > 90.0) {
            invalid(rec, "latitude out of [-90, 90] at column " + std::to_string(c));
        }
        if (!std::isfinite(rec.lon[c]) || rec.lon[c] < -180.0 || rec.lon[c] > 180.0) {
            invalid(rec, "longitude out of [-180, 180] at column " + std::to_string(c));
        }
    }
    for (std::size_t b = 0; b < rec.boundaries.size(); ++b) {
        if (rec.boundaries[b].size() != rec.width) {
            invalid(rec, "boundary " + std::to_string(b) + " has " + std::to_string(rec.boundaries[b].size()) +
                             " entries, expected " + std::to_string(rec.width));
        }
        for (std::size_t c = 0; c < rec.width; ++c) {
            const auto& v = rec.boundaries[b][c];
            if (v && !std::isfinite(*v)) invalid(rec, "non-finite boundary " + std::to_string(b) + " at column " + std::to_string(c));
        }
    }
    for (std::size_t c = 0; c < rec.width; ++c) {
        std::optional<double> prev;
        for (std::size_t b = 0; b < rec.boundaries.size(); ++b) {
            const auto& v = rec.boundaries[b][c];
            if (!v) continue;
            if (prev && !(*v > *prev)) {
                invalid(rec, "boundaries not strictly increasing at column " + std::to_string(c) + " (boundary " +
                                 std::to_string(b) + ")");
            }
            prev = v;
        }
    }
}

std::vector<RadargramRecord> parse_records(std::istream& in, const std::string& source) {
    std::vector<RadargramRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (std::all_of(line.begin(), line.end(), [](unsigned char ch) { return std::isspace(ch); })) continue;
        RadargramRecord rec;
        try {
            rec = from_json(json::parse(line));
        } catch (const json::exception& e) {
            throw ParseError(source, lineno, e.what());
        } catch (const std::invalid_argument& e) {
            throw ParseError(source, lineno, e.what());
        }
        validate(rec);
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<RadargramRecord> load_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    return parse_records(in, path.string());
}

void write_records(std::ostream& out, const std::vector<RadargramRecord>& recs) {
    for (const auto& r : recs) out << to_json(r).dump() << '\n';
}

void save_records(const std::filesystem::path& path, const std::vector<RadargramRecord>& recs) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    write_records(out, recs);
}

bool ThicknessRecord::layer_complete(std::size_t layer) const {
    const auto& p = layers.at(layer);
    return std::all_of(p.begin(), p.end(), [](const MaybeValue& v) { return v.has_value(); });
}

std::vector<double> ThicknessRecord::layer_values(std::size_t layer) const {
    std::vector<double> out;
    out.reserve(width);
    for (std::size_t c = 0; c < width; ++c) {
        const auto& v = layers.at(layer)[c];
        if (!v) throw ValidationError("record '" + id + "': layer " + std::to_string(layer) + " missing at column " + std::to_string(c));
        out.push_back(*v);
    }
    return out;
}

ThicknessRecord to_thickness(const RadargramRecord& rec) {
    if (rec.boundaries.size() < 2) throw ValidationError("record '" + rec.id + "': need at least 2 boundaries");
    ThicknessRecord t;
    t.id = rec.id;
    t.width = rec.width;
    t.lat = rec.lat;
    t.lon = rec.lon;
    t.layers.resize(rec.boundaries.size() - 1, Profile(rec.width));
    for (std::size_t i = 0; i + 1 < rec.boundaries.size(); ++i) {
        for (std::size_t c = 0; c < rec.width; ++c) {
            const auto& top = rec.boundaries[i][c];
            const auto& bottom = rec.boundaries[i + 1][c];
            if (top && bottom) t.layers[i][c] = *bottom - *top;
        }
    }
    return t;
}

std::vector<ThicknessRecord> to_thickness(const std::vector<RadargramRecord>& recs) {
    std::vector<ThicknessRecord> out;
    out.reserve(recs.size());
    for (const auto& r : recs) out.push_back(to_thickness(r));
    return out;
}

RadargramRecord from_thickness(const ThicknessRecord& rec, const std::vector<double>& top_boundary) {
    if (top_boundary.size() != rec.width) throw ValidationError("record '" + rec.id + "': top boundary width mismatch");
    RadargramRecord out;
    out.id = rec.id;
    out.width = rec.width;
    out.lat = rec.lat;
    out.lon = rec.lon;
    std::vector<double> running = top_boundary;
    out.boundaries.emplace_back(running.begin(), running.end());
    for (std::size_t i = 0; i < rec.layer_count(); ++i) {
        const auto vals = rec.layer_values(i);
        for (std::size_t c = 0; c < rec.width; ++c) running[c] += vals[c];
        out.boundaries.emplace_back(running.begin(), running.end());
    }
    return out;
}

std::vector<ThicknessRecord> filter_complete(const std::vector<ThicknessRecord>& recs, std::size_t min_layers) {
    std::vector<ThicknessRecord> out;
    for (const auto& r : recs) {
        if (r.layer_count() < min_layers) continue;
        bool ok = true;
        for (std::size_t i = 0; ok && i < min_layers; ++i) ok = r.layer_complete(i);
        if (ok) out.push_back(r);
    }
    return out;
}

DatasetSplit split(const std::vector<std::string>& ids, std::uint64_t seed) {
    const std::size_t n = ids.size();
    if (n < 5) throw ValidationError("split needs at least 5 records, got " + std::to_string(n));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(seed, "split"));
    std::shuffle(order.begin(), order.end(), rng);

    const auto n_train = static_cast<std::size_t>(std::llround(3.0 * static_cast<double>(n) / 5.0));
    const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) / 5.0));
    DatasetSplit s;
    s.seed = seed;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& id = ids[order[i]];
        if (i < n_train) {
            s.train.push_back(id);
        } else if (i < n_train + n_val) {
            s.val.push_back(id);
        } else {
            s.test.push_back(id);
        }
    }
    return s;
}

DatasetSplit split(const std::vector<ThicknessRecord>& recs, std::uint64_t seed) {
    std::vector<std::string> ids;
    ids.reserve(recs.size());
    for (const auto& r : recs) ids.push_back(r.id);
    return split(ids, seed);
}

namespace {

struct Wave {
    double amplitude, cycles, phase;
    double at(double u) const { return amplitude * std::sin(2.0 * std::numbers::pi * cycles * u + phase); }
};

// Sum of 2-4 low-frequency sinusoids over u in [0, 1] with total amplitude `budget`.
std::vector<Wave> random_waves(std::mt19937_64& rng, double budget, double max_cycles) {
    std::uniform_int_distribution<int> count(2, 4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int k = count(rng);
    std::vector<double> share(static_cast<std::size_t>(k));
    for (auto& s : share) s = 0.2 + u(rng);
    const double total = std::accumulate(share.begin(), share.end(), 0.0);
    std::vector<Wave> waves;
    for (double s : share) {
        waves.push_back({budget * s / total, 0.3 + (max_cycles - 0.3) * u(rng), 2.0 * std::numbers::pi * u(rng)});
    }
    return waves;
}

double eval_waves(const std::vector<Wave>& ws, double u) {
    double s = 0.0;
    for (const auto& w : ws) s += w.at(u);
    return s;
}

RadargramRecord synth_one(std::size_t index, std::uint64_t seed, const SynthOptions& opts) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(index)));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t w = opts.width;
    const std::size_t layers = opts.boundaries - 1;

    RadargramRecord rec;
    rec.id = "synth-" + std::to_string(seed) + "-" + std::to_string(index);
    rec.width = w;

    // Flight path: straight segment of ~0.05 degrees plus slight wobble.
    const double lat0 = 66.0 + 13.0 * u(rng);
    const double lon0 = -58.0 + 26.0 * u(rng);
    const double heading = 2.0 * std::numbers::pi * u(rng);
    const double span = 0.02 + 0.04 * u(rng);
    const auto wobble_lat = random_waves(rng, 2e-4, 2.0);
    const auto wobble_lon = random_waves(rng, 2e-4, 2.0);
    rec.lat.resize(w);
    rec.lon.resize(w);
    for (std::size_t c = 0; c < w; ++c) {
        const double s = w > 1 ? static_cast<double>(c) / static_cast<double>(w - 1) : 0.0;
        rec.lat[c] = std::clamp(lat0 + span * s * std::cos(heading) + eval_waves(wobble_lat, s), 65.0, 80.0);
        rec.lon[c] = std::clamp(lon0 + 2.0 * span * s * std::sin(heading) + eval_waves(wobble_lon, s), -60.0, -30.0);
    }

    // Accumulation rate scales every layer; deeper layers are compacted.
    const double accumulation = 0.65 + 0.55 * u(rng);
    const auto shared = random_waves(rng, 0.3, 3.0);
    const auto surface = random_waves(rng, 4.0, 2.0);
    const double top = 20.0 + 40.0 * u(rng);

    std::vector<std::vector<double>> thickness(layers, std::vector<double>(w));
    for (std::size_t i = 0; i < layers; ++i) {
        const double depth = layers > 1 ? static_cast<double>(i) / static_cast<double>(layers - 1) : 0.0;
        const double base = std::clamp(accumulation * (20.0 - 11.0 * depth) * (0.95 + 0.1 * u(rng)), 5.0, 25.0);
        const double gain = 0.6 + 0.4 * u(rng);
        const auto own = random_waves(rng, 0.08, 4.0);
        for (std::size_t c = 0; c < w; ++c) {
            const double s = w > 1 ? static_cast<double>(c) / static_cast<double>(w - 1) : 0.0;
            // |shared| <= 0.3 and |own| <= 0.08 keep the factor above 0.6.
            thickness[i][c] = base * (1.0 + gain * eval_waves(shared, s) + eval_waves(own, s));
        }
    }

    std::vector<double> running(w);
    for (std::size_t c = 0; c < w; ++c) {
        const double s = w > 1 ? static_cast<double>(c) / static_cast<double>(w - 1) : 0.0;
        running[c] = top + eval_waves(surface, s);
    }
    rec.boundaries.emplace_back(running.begin(), running.end());
    for (std::size_t i = 0; i < layers; ++i) {
        for (std::size_t c = 0; c < w; ++c) running[c] += thickness[i][c];
        rec.boundaries.emplace_back(running.begin(), running.end());
    }
    return rec;
}

}  // namespace

std::vector<RadargramRecord> synth_generate(std::size_t count, std::uint64_t seed, const SynthOptions& opts) {
    if (count == 0) throw ValidationError("synth_generate: count must be at least 1");
    if (opts.width < 2) throw ValidationError("synth_generate: width must be at least 2");
    if (opts.boundaries < 2) throw ValidationError("synth_generate: need at least 2 boundaries");
    std::vector<RadargramRecord> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(synth_one(i, seed, opts));
    return out;
}

}  // namespace strata::data
