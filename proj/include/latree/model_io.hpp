#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "latree/timetree.hpp"

namespace latree {

// "MAJOR.MINOR". Readers accept any minor up to their own within the same
// major; fields added in later minors take their defaults.
inline constexpr int kModelFormatMajor = 1;
inline constexpr int kModelFormatMinor = 1;
std::string model_format_version();

nlohmann::json model_to_json(const TimeModel& model);
TimeModel model_from_json(const nlohmann::json& doc);

std::string save_model(const TimeModel& model);
// Throws DataError on malformed, truncated, or incompatible input.
TimeModel load_model(std::string_view text);

void save_model_file(const TimeModel& model, const std::filesystem::path& path);
TimeModel load_model_file(const std::filesystem::path& path);

nlohmann::json fit_params_to_json(const FitParams& params);
FitParams fit_params_from_json(const nlohmann::json& j, int minor);

// Shared helpers for the other versioned documents.
std::pair<int, int> parse_format_version(const nlohmann::json& doc, std::string_view what);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace latree
