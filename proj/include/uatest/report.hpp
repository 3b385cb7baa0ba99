#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "uatest/investigations.hpp"

namespace uatest {

using Json = nlohmann::ordered_json;

/// "1.23e-04"; values below 1e-300 render as "<1e-300".
std::string format_p_value(double p);
/// 494436 -> "494,436".
std::string group_thousands(std::uint64_t n);
/// Integer percentages of `counts` that sum to exactly 100 (largest
/// remainder); all zeros when the total is zero.
std::vector<int> rounded_percentages(std::span<const std::int64_t> counts);

std::string render_text(const ReportModel& report);
std::string render_json(const ReportModel& report);
/// Inverse of render_json; throws DataError on malformed input.
ReportModel parse_json(std::string_view text);

Json to_json(const ReportModel& report);
ReportModel report_from_json(const Json& j);
Json to_json(const Context& context);
Context context_from_json(const Json& j);
Json to_json(const InvestigationSpec& spec);
InvestigationSpec spec_from_json(const Json& j);
Json to_json(const TrainResult& trained);
TrainResult train_result_from_json(const Json& j);

} // namespace uatest
