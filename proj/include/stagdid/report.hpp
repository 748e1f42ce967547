// JSON and CSV serialization of estimates and Monte Carlo reports.
#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "stagdid/estimators.hpp"
#include "stagdid/inference.hpp"
#include "stagdid/panel.hpp"
#include "stagdid/simlab.hpp"

namespace stagdid {

nlohmann::json to_json(const GroupTally& tally);
nlohmann::json to_json(const std::vector<CheckResult>& checks);
nlohmann::json to_json(const CellEstimate& cell, double level);
nlohmann::json to_json(const AggregateEstimate& agg);
nlohmann::json to_json(const TwfeResult& r, double level);
nlohmann::json to_json(const McSummary& s);
nlohmann::json to_json(const McReport& report);

/// g,t,estimate,se,n_treated,n_comparison,method
std::string cells_csv(const std::vector<CellEstimate>& cells);
/// method,kind,index,estimate,se,lo,hi,level,partial
std::string aggregates_csv(const std::vector<AggregateEstimate>& aggs);
/// s,estimate,lo,hi for dynamic aggregates of one method
std::string event_study_csv(const std::vector<AggregateEstimate>& dynamic);
/// Table-1 layout: one row per method.
std::string mc_csv(const McReport& report);
std::string mc_detail_csv(const McReport& report);

/// The same tables rebuilt from a saved JSON report.
std::string cells_csv(const nlohmann::json& report);
std::string aggregates_csv(const nlohmann::json& report);
std::string mc_csv(const nlohmann::json& report);

}  // namespace stagdid
