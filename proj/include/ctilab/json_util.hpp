#pragma once

#include <complex>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "error.hpp"

namespace ctilab {

using Json = nlohmann::ordered_json;

/// Fetch a required member, reporting the dotted field path on failure.
template <typename T>
T json_field(const Json& j, const std::string& key, const std::string& context)
{
    const std::string path = context.empty() ? key : context + "." + key;
    if (!j.is_object() || !j.contains(key))
        fail(ErrorKind::Schema, "missing field '" + path + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        fail(ErrorKind::Schema, "field '" + path + "' has the wrong type");
    }
}

inline const Json& json_object(const Json& j, const std::string& key, const std::string& context)
{
    const std::string path = context.empty() ? key : context + "." + key;
    if (!j.is_object() || !j.contains(key) || !j.at(key).is_object())
        fail(ErrorKind::Schema, "missing object '" + path + "'");
    return j.at(key);
}

inline Json complex_to_json(std::complex<double> z) { return Json::array({z.real(), z.imag()}); }

inline std::complex<double> complex_field(const Json& j, const std::string& key, const std::string& context)
{
    const std::string path = context.empty() ? key : context + "." + key;
    if (!j.contains(key) || !j.at(key).is_array() || j.at(key).size() != 2 || !j.at(key)[0].is_number() ||
        !j.at(key)[1].is_number())
        fail(ErrorKind::Schema, "field '" + path + "' must be a [re, im] pair");
    return {j.at(key)[0].get<double>(), j.at(key)[1].get<double>()};
}

inline Json read_json_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        fail(ErrorKind::Io, "cannot open for reading: " + path.string());
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::Schema, path.string() + ": " + e.what());
    }
}

inline void write_json_file(const std::filesystem::path& path, const Json& j)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        fail(ErrorKind::Io, "cannot open for writing: " + path.string());
    out << j.dump(2) << '\n';
    if (!out)
        fail(ErrorKind::Io, "write failed: " + path.string());
}

} // namespace ctilab
