#pragma once

#include "json.hpp"
#include "qplan/cost_model.hpp"

namespace qplan::detail {

nlohmann::ordered_json tree_to_json(const RegressionTree& tree);
RegressionTree tree_from_json(const nlohmann::ordered_json& j, std::size_t dim);

// Field access that reports FormatError instead of json exceptions.
const nlohmann::ordered_json& require(const nlohmann::ordered_json& j, const char* key);

}  // namespace qplan::detail
