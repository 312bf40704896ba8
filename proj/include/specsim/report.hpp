#pragma once

// JSON reports, CSV sample export and text summaries.

#include <string>
#include <vector>

#include <json.hpp>

#include "specsim/attacks.hpp"
#include "specsim/pipeline.hpp"

namespace specsim {

using Json = nlohmann::ordered_json;

inline constexpr const char* kReportSchema = "specsim.report/1";

/// Wraps a command result. Run-specific fields (timestamp, wall time) go
/// under "volatile" so reruns can be compared with strip_volatile().
Json make_report(const std::string& command, Json args, Json result, double wall_seconds);
Json strip_volatile(Json report);
std::string dump(const Json& j);

std::string hex_string(uint64_t v);
/// Accepts decimal or 0x-prefixed hexadecimal; throws ConfigError.
uint64_t parse_address(const std::string& text);

Json to_json(const RunResult& r);
Json to_json(const PredictorDetection& d);
Json to_json(const BufferLimits& b);
Json to_json(const Calibration& c);
Json to_json(const ProbeVerdict& v);
Json to_json(const ReadResult& r);
Json to_json(const GuardDemo& g);
Json to_json(const RangeStats& s);
Json to_json(const TimingSample& s);
TimingSample sample_from_json(const Json& j);

Json to_json(const DerandomizationReport& r, bool with_samples = false);
DerandomizationReport derandomization_from_json(const Json& j);

/// Columns: address, trial, cycles, verdict.
std::string samples_csv(const std::vector<TimingSample>& samples);

std::string summary_text(const DerandomizationReport& r);

}  // namespace specsim
