#pragma once

// Strict JSON access helpers: configs and manifests reject unknown keys so
// typos fail loudly instead of silently falling back to defaults.

#include <fstream>
#include <initializer_list>
#include <string>

#include "json.hpp"

#include "sigshot/common.hpp"

namespace sigshot::jsonutil {

using nlohmann::json;

inline void check_keys(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    if (!j.is_object()) throw DataError("SchemaError", where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw DataError("SchemaError", where + ": unknown key \"" + it.key() + "\"");
    }
}

inline const json& require(const json& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) throw DataError("SchemaError", where + ": missing key \"" + key + "\"");
    return *it;
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    try {
        return it->get<T>();
    } catch (const json::exception& e) {
        throw DataError("SchemaError", std::string("bad value for \"") + key + "\": " + e.what());
    }
}

template <class T>
T get_req(const json& j, const char* key, const std::string& where) {
    try {
        return require(j, key, where).get<T>();
    } catch (const json::exception& e) {
        throw DataError("SchemaError", where + ": bad value for \"" + key + "\": " + e.what());
    }
}

inline json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("IoError", "cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("SchemaError", path + ": " + e.what());
    }
}

} // namespace sigshot::jsonutil
