#pragma once

#include <set>
#include <string>
#include <type_traits>

#include "json.hpp"

#include "strata/errors.hpp"

namespace strata {

/// Reads optional fields from a JSON object, rejecting type mismatches and
/// (on finish) keys that were never consumed. Errors name the dotted field path.
class FieldReader {
public:
    FieldReader(const nlohmann::json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ValidationError("field '" + path_ + "': expected an object");
    }

    bool has(const std::string& key) const { return obj_.contains(key); }
    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    template <class T>
    void get(const std::string& key, T& out) {
        if (!obj_.contains(key)) return;
        seen_.insert(key);
        const auto& v = obj_.at(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) fail(key, "expected a boolean");
        } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
            if (!v.is_number_unsigned()) fail(key, "expected a non-negative integer");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) fail(key, "expected an integer");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) fail(key, "expected a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) fail(key, "expected a string");
        }
        try {
            out = v.get<T>();
        } catch (const nlohmann::json::exception& e) {
            fail(key, e.what());
        }
    }

    const nlohmann::json* child(const std::string& key) {
        if (!obj_.contains(key)) return nullptr;
        seen_.insert(key);
        return &obj_.at(key);
    }

    [[noreturn]] void fail(const std::string& key, const std::string& what) const {
        throw ValidationError("field '" + field(key) + "': " + what);
    }

    void finish() const {
        for (const auto& [k, v] : obj_.items()) {
            if (!seen_.contains(k)) throw ValidationError("unknown field '" + field(k) + "'");
        }
    }

private:
    const nlohmann::json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace strata
