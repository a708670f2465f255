#ifndef TILQ_IO_HPP
#define TILQ_IO_HPP

#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "tilq/flow.hpp"
#include "tilq/simulate.hpp"
#include "tilq/verify.hpp"

namespace tilq {

// 17-significant-digit decimal form (round-trips exactly).
std::string fmt17(double v);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// FNV-1a 64-bit content hash, hex encoded.
std::string fnv1a_hex(const std::string& bytes);
std::string file_hash(const std::string& path);

nlohmann::json flow_solution_to_json(const FlowSolution& flow);
nlohmann::json feedback_law_to_json(const FeedbackLaw& law);
FlowSolution flow_solution_from_json(const nlohmann::json& j);
FeedbackLaw feedback_law_from_json(const nlohmann::json& j);
nlohmann::json cost_estimate_to_json(const CostEstimate& est);
nlohmann::json spike_report_to_json(const SpikeReport& rep);
nlohmann::json variation_order_to_json(const VariationOrderReport& rep);
nlohmann::json inconsistency_to_json(const InconsistencyReport& rep);
nlohmann::json validation_report_to_json(const ValidationReport& rep);
nlohmann::json second_order_report_to_json(const SecondOrderReport& rep);

// Plot CSVs: comma separated, header row, 17 significant digits, LF.
std::string diagonals_csv(const FlowSolution& flow, const FeedbackLaw& law);
std::string ensemble_summary_csv(const PathEnsemble& ensemble);
std::string spike_csv(const SpikeReport& rep);

// One manifest per CLI run: inputs, resolved seed, and the hash of every
// emitted file.
struct RunManifest {
    std::string command;
    std::string config_path;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string version;
    double duration_seconds = 0.0;
    std::vector<std::pair<std::string, std::string>> outputs;  // path, hash

    void add_output(const std::string& path);
    nlohmann::json to_json() const;
};

} // namespace tilq

#endif
