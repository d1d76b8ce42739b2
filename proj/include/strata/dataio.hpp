#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace strata::data {

/// Boundary row in pixels; std::nullopt marks an untraced column.
using MaybeValue = std::optional<double>;
using Profile = std::vector<MaybeValue>;

/// One traced radargram: per-column geocoordinates and per-layer boundary
/// rows ordered top to bottom.
struct RadargramRecord {
    std::string id;
    std::size_t width = 0;
    std::vector<double> lat;
    std::vector<double> lon;
    std::vector<Profile> boundaries;
};

/// Layer i at column c is boundaries[i + 1][c] - boundaries[i][c].
struct ThicknessRecord {
    std::string id;
    std::size_t width = 0;
    std::vector<double> lat;
    std::vector<double> lon;
    std::vector<Profile> layers;

    std::size_t layer_count() const noexcept { return layers.size(); }
    bool layer_complete(std::size_t layer) const;
    /// Values of a complete layer; throws if any column is missing.
    std::vector<double> layer_values(std::size_t layer) const;
};

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
    std::uint64_t seed = 0;
};

/// Throws ValidationError naming the record (and column/boundary when relevant).
void validate(const RadargramRecord& rec);

std::vector<RadargramRecord> parse_records(std::istream& in, const std::string& source = "<stream>");
std::vector<RadargramRecord> load_records(const std::filesystem::path& path);
void write_records(std::ostream& out, const std::vector<RadargramRecord>& recs);
void save_records(const std::filesystem::path& path, const std::vector<RadargramRecord>& recs);

ThicknessRecord to_thickness(const RadargramRecord& rec);
std::vector<ThicknessRecord> to_thickness(const std::vector<RadargramRecord>& recs);
/// Cumulative-sum inverse of to_thickness; requires complete layers.
RadargramRecord from_thickness(const ThicknessRecord& rec, const std::vector<double>& top_boundary);

/// Keeps records whose first `min_layers` layers have a value at every column.
std::vector<ThicknessRecord> filter_complete(const std::vector<ThicknessRecord>& recs, std::size_t min_layers = 20);

/// Seeded permutation followed by a contiguous 3:1:1 partition.
DatasetSplit split(const std::vector<std::string>& ids, std::uint64_t seed);
DatasetSplit split(const std::vector<ThicknessRecord>& recs, std::uint64_t seed);

struct SynthOptions {
    std::size_t width = 256;
    std::size_t boundaries = 21;
};

/// Deterministic stand-in radargrams: smooth flight paths over Greenland and
/// layer thicknesses built from a shared accumulation pattern plus per-layer
/// low-frequency sinusoids. Every record passes filter_complete(boundaries - 1).
std::vector<RadargramRecord> synth_generate(std::size_t count, std::uint64_t seed, const SynthOptions& opts = {});

}  // namespace strata::data
