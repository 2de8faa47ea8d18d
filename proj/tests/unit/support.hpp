#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "qplan/schema.hpp"

namespace testing {

inline std::filesystem::path fixture_dir() { return QPLAN_FIXTURE_DIR; }

// a(1000) -> b(100) -> c(10), keyed chain
inline qplan::SchemaModel chain_schema() {
    return qplan::summarize_schema({
        {"a", 1000, {{"id", 1000}, {"x", 100}, {"y", 10}}},
        {"b", 100, {{"id", 100}, {"aid", 50}, {"z", 5}}},
        {"c", 10, {{"id", 10}, {"bid", 10}, {"w", 2}}},
    });
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("qplan-unit-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace testing
