#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace dlens {

// Structured run configuration file (JSON object, flat keys). Unknown keys are
// rejected with the nearest valid key named in the error.
nlohmann::json load_config_file(const std::string& path,
                                const std::vector<std::string>& known_keys);

// Edit distance used for the nearest-key suggestion.
size_t levenshtein(const std::string& a, const std::string& b);
std::string nearest_key(const std::string& key, const std::vector<std::string>& known_keys);

}  // namespace dlens
