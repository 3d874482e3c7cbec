#include "dlens/runconfig.hpp"

#include <algorithm>
#include <fstream>

#include "dlens/errors.hpp"

namespace dlens {

size_t levenshtein(const std::string& a, const std::string& b) {
    std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= b.size(); ++j) {
            const size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

std::string nearest_key(const std::string& key, const std::vector<std::string>& known_keys) {
    std::string best;
    size_t best_dist = SIZE_MAX;
    for (const std::string& k : known_keys) {
        const size_t d = levenshtein(key, k);
        if (d < best_dist) {
            best_dist = d;
            best = k;
        }
    }
    return best;
}

nlohmann::json load_config_file(const std::string& path,
                                const std::vector<std::string>& known_keys) {
    std::ifstream f(path);
    if (!f) throw IoError("config: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: malformed JSON in " + path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: expected a JSON object in " + path);
    for (const auto& [key, value] : j.items()) {
        if (std::find(known_keys.begin(), known_keys.end(), key) == known_keys.end())
            throw ConfigError("config: unknown key '" + key + "'; nearest valid key is '" +
                              nearest_key(key, known_keys) + "'");
    }
    return j;
}

}  // namespace dlens
