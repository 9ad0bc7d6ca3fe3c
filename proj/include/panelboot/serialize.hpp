#pragma once

// JSON forms of single-run results. Non-finite numbers are written as null.

#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "panelboot/block_newton.hpp"
#include "panelboot/bootstrap.hpp"
#include "panelboot/inference.hpp"

namespace panelboot {

using Json = nlohmann::ordered_json;

Json to_json(const FitResult& fit, const std::string& model, const std::optional<SigmaHat>& sigma = std::nullopt);
Json to_json(const IntervalReport& r);
Json to_json(const EllipsoidSet& e);

// Two-space indented dump with a trailing newline.
std::string dump(const Json& j);

}  // namespace panelboot
