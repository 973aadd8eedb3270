#pragma once

#include <json.hpp>

#include "contactsense/models.hpp"
#include "contactsense/preprocessing.hpp"

namespace contactsense {

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);  // throws DataError on bad input

nlohmann::json preprocessing_to_json(const PreprocessingParams& params);
PreprocessingParams preprocessing_from_json(const nlohmann::json& j);

}  // namespace contactsense
