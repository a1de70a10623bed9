#pragma once

#include <filesystem>

#include "ctilab/cti_models.hpp"

namespace testing_support {

inline std::filesystem::path source_path(const std::string& rel) { return std::filesystem::path(CTILAB_SOURCE_DIR) / rel; }

inline const ctilab::Calibration& shipped_calibration()
{
    static const auto cal = ctilab::calibration_from_json(ctilab::read_json_file(source_path("data/calibration.json")));
    return cal;
}

inline ctilab::CollisionScene shipped_scene(const std::string& name)
{
    return ctilab::scene_from_json(ctilab::read_json_file(source_path("data/scenes/" + name + ".json")));
}

inline std::filesystem::path temp_dir(const std::string& name)
{
    const auto d = std::filesystem::temp_directory_path() / ("ctilab_" + name);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

} // namespace testing_support
