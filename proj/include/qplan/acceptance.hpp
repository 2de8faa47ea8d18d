#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qplan/engine.hpp"
#include "qplan/schema.hpp"

namespace qplan {

// A fixture schema directory: one CSV per table (file stem = table name) and
// queries.sql with one query per line ('--' lines are comments).
struct FixtureSchema {
    std::string name;
    Database data;
    SchemaModel schema;
    std::vector<std::string> queries;
};

FixtureSchema load_fixture(const std::filesystem::path& dir);
// Every subdirectory holding a queries.sql, in name order.
std::vector<FixtureSchema> load_fixtures(const std::filesystem::path& root);

struct AcceptanceOptions {
    std::filesystem::path fixture_dir;
    std::filesystem::path work_dir;  // empty: a fresh directory under the system temp dir
    std::uint64_t seed = 42;
    std::size_t n_queries = 120;
    std::size_t oracle_queries = 100;
};

struct CriterionResult {
    int id = 0;
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0;
};

// Runs criteria 1-9 (or the listed subset) and reports one result each.
std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options, const std::vector<int>& only = {});

// "PASS [n] name: detail (t s)"
std::string format_result(const CriterionResult& result);

}  // namespace qplan
