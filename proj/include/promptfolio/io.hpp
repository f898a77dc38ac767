#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

namespace promptfolio {

// Write to a sibling temp file, then rename over the target.
void atomic_write(const std::filesystem::path& path, const std::string& content);

// Replaces non-finite numbers by the string "nan"; returns how many were replaced.
int sanitize_nonfinite(nlohmann::json& j);

std::optional<nlohmann::json> read_json_if_exists(const std::filesystem::path& path);

}  // namespace promptfolio
