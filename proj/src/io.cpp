#include "tilq/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace tilq {

using nlohmann::json;

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << content;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t hash = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001B3ULL;
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(hash));
    return buf;
}

std::string file_hash(const std::string& path) {
    return fnv1a_hex(read_text_file(path));
}

namespace {

json field_to_json(const TriangularField& f) {
    const int np = f.grid().size();
    json entries = json::array();
    for (int i = 0; i < np; ++i)
        for (int j = i; j < np; ++j) {
            json rec;
            rec["i"] = i;
            rec["j"] = j;
            rec["t"] = f.grid().node(i);
            rec["s"] = f.grid().node(j);
            const double* p = f.at(i, j);
            json vals = json::array();
            for (std::size_t q = 0; q < f.entry_size(); ++q) vals.push_back(p[q]);
            rec["value"] = vals;
            entries.push_back(std::move(rec));
        }
    json out;
    out["rows"] = f.rows();
    out["cols"] = f.cols();
    out["entries"] = std::move(entries);
    return out;
}

json vec_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (int q = 0; q < v.size(); ++q) a.push_back(v[q]);
    return a;
}

json mat_to_json(const Eigen::MatrixXd& m) {
    json a = json::array();
    for (int r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        a.push_back(row);
    }
    return a;
}

} // namespace

json flow_solution_to_json(const FlowSolution& flow) {
    json out;
    out["grid"] = {{"T", flow.M.grid().horizon()}, {"N", flow.M.grid().steps()}};
    out["M"] = field_to_json(flow.M);
    out["Mbar"] = field_to_json(flow.Mbar);
    out["Upsilon"] = field_to_json(flow.Upsilon);
    out["phi"] = field_to_json(flow.phi);
    json diag;
    diag["theta_cond"] = flow.diagnostics.theta_cond;
    diag["corrector_iters"] = flow.diagnostics.corrector_iters;
    diag["experimental"] = flow.diagnostics.experimental;
    if (!flow.diagnostics.picard_trace.empty())
        diag["picard_trace"] = flow.diagnostics.picard_trace;
    out["diagnostics"] = diag;
    return out;
}

json feedback_law_to_json(const FeedbackLaw& law) {
    json out;
    out["grid"] = {{"T", law.grid.horizon()}, {"N", law.grid.steps()}};
    json gains = json::array();
    for (int i = 0; i < law.grid.size(); ++i) {
        json rec;
        rec["i"] = i;
        rec["t"] = law.grid.node(i);
        rec["Psi"] = mat_to_json(law.Psi[i]);
        rec["psi"] = vec_to_json(law.psi[i]);
        gains.push_back(std::move(rec));
    }
    out["gains"] = std::move(gains);
    out["convention"] = "u = -Psi x - psi";
    return out;
}

namespace {

TriangularField field_from_json(const json& j, const TimeGrid& grid) {
    const int rows = j.at("rows").get<int>();
    const int cols = j.at("cols").get<int>();
    TriangularField f(grid, rows, cols);
    for (const auto& rec : j.at("entries")) {
        const int i = rec.at("i").get<int>();
        const int jj = rec.at("j").get<int>();
        const auto& vals = rec.at("value");
        double* p = f.at(i, jj);
        if (vals.size() != f.entry_size())
            throw ConfigError("flow document: entry size mismatch");
        for (std::size_t q = 0; q < f.entry_size(); ++q)
            p[q] = vals[q].get<double>();
    }
    return f;
}

} // namespace

FlowSolution flow_solution_from_json(const json& j) {
    const TimeGrid grid(j.at("grid").at("T").get<double>(),
                        j.at("grid").at("N").get<int>());
    FlowSolution flow{field_from_json(j.at("M"), grid),
                      field_from_json(j.at("Mbar"), grid),
                      field_from_json(j.at("Upsilon"), grid),
                      field_from_json(j.at("phi"), grid),
                      {}};
    const auto& d = j.at("diagnostics");
    flow.diagnostics.theta_cond = d.at("theta_cond").get<std::vector<double>>();
    flow.diagnostics.corrector_iters =
        d.at("corrector_iters").get<std::vector<int>>();
    flow.diagnostics.experimental = d.at("experimental").get<bool>();
    if (d.contains("picard_trace"))
        flow.diagnostics.picard_trace =
            d.at("picard_trace").get<std::vector<double>>();
    return flow;
}

FeedbackLaw feedback_law_from_json(const json& j) {
    FeedbackLaw law;
    law.grid = TimeGrid(j.at("grid").at("T").get<double>(),
                        j.at("grid").at("N").get<int>());
    const auto& gains = j.at("gains");
    if (static_cast<int>(gains.size()) != law.grid.size())
        throw ConfigError("law document: gain count mismatch");
    law.Psi.resize(gains.size());
    law.psi.resize(gains.size());
    for (const auto& rec : gains) {
        const int i = rec.at("i").get<int>();
        const auto& P = rec.at("Psi");
        const int m = static_cast<int>(P.size());
        const int n = static_cast<int>(P[0].size());
        Eigen::MatrixXd Psi(m, n);
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < n; ++c) Psi(r, c) = P[r][c].get<double>();
        const auto& p = rec.at("psi");
        Eigen::VectorXd psi(p.size());
        for (std::size_t q = 0; q < p.size(); ++q) psi[q] = p[q].get<double>();
        law.Psi[i] = Psi;
        law.psi[i] = psi;
    }
    return law;
}

json cost_estimate_to_json(const CostEstimate& est) {
    json out;
    out["mean"] = est.mean;
    out["std_error"] = est.std_error;
    out["paths"] = est.paths;
    out["breakdown"] = {{"running_q", est.parts.running_q},
                        {"running_qbar", est.parts.running_qbar},
                        {"running_r", est.parts.running_r},
                        {"terminal_linear", est.parts.terminal_linear},
                        {"terminal_g", est.parts.terminal_g},
                        {"terminal_gbar", est.parts.terminal_gbar}};
    return out;
}

json spike_report_to_json(const SpikeReport& rep) {
    json out;
    out["t_index"] = rep.t_index;
    out["t"] = rep.t;
    out["v"] = vec_to_json(rep.v);
    out["xi"] = vec_to_json(rep.xi);
    out["eps_steps"] = rep.eps_steps;
    out["dj_over_eps"] = rep.dj_over_eps;
    out["dj_stderr"] = rep.dj_stderr;
    out["extrapolated"] = rep.extrapolated;
    out["extrapolated_stderr"] = rep.extrapolated_stderr;
    out["slack"] = rep.slack;
    out["verdict"] = rep.equilibrium_consistent ? "equilibrium-consistent"
                                                : "fails";
    out["paths"] = rep.paths;
    out["seed"] = rep.seed;
    return out;
}

json variation_order_to_json(const VariationOrderReport& rep) {
    json out;
    out["eps_steps"] = rep.eps_steps;
    out["e_sup_y2"] = rep.e_sup_y2;
    out["e_sup_z2"] = rep.e_sup_z2;
    out["stderr_y2"] = rep.stderr_y2;
    out["stderr_z2"] = rep.stderr_z2;
    out["slope_y"] = rep.slope_y;
    out["slope_z"] = rep.slope_z;
    out["y_skipped"] = rep.y_skipped;
    out["z_skipped"] = rep.z_skipped;
    if (!rep.note.empty()) out["note"] = rep.note;
    out["max_y_mean_over_stderr"] = rep.max_y_mean_over_stderr;
    out["y_mean_ok"] = rep.y_mean_ok;
    return out;
}

json inconsistency_to_json(const InconsistencyReport& rep) {
    json out;
    out["M_t"] = rep.M_t;
    out["r_index"] = rep.r_index;
    out["precommitted_mean_abs_at_r"] = rep.margin_mean_abs;
    out["precommitted_stderr"] = rep.margin_stderr;
    out["resolved_control_at_r"] = rep.resolved_at_r;
    out["contradiction"] = rep.contradiction;
    out["adversarial_v"] = rep.adversarial_v;
    out["precommitted_spike"] = spike_report_to_json(rep.precommitted_spike);
    out["companion_spike"] = spike_report_to_json(rep.companion_spike);
    out["companion_gain"] = rep.companion_gain;
    return out;
}

json validation_report_to_json(const ValidationReport& rep) {
    json out;
    out["min_eig_R_diag"] = rep.min_eig_R_diag;
    out["min_eig_G"] = rep.min_eig_G;
    out["min_eig_Q_row"] = rep.min_eig_Q_row;
    out["h2_ok"] = rep.h2_ok;
    out["h1_ok"] = rep.h1_ok;
    out["h1_warnings"] = rep.h1_warnings;
    return out;
}

json second_order_report_to_json(const SecondOrderReport& rep) {
    json out;
    out["min_eig"] = rep.min_eig;
    out["pass"] = rep.pass;
    out["tol"] = rep.tol;
    return out;
}

std::string diagonals_csv(const FlowSolution& flow, const FeedbackLaw& law) {
    const TimeGrid& g = flow.M.grid();
    std::ostringstream out;
    out << "s";
    const auto emit_header = [&](const std::string& name, std::size_t count) {
        for (std::size_t q = 0; q < count; ++q)
            out << "," << name << (count > 1 ? "_" + std::to_string(q) : "");
    };
    emit_header("M", flow.M.entry_size());
    emit_header("Upsilon", flow.Upsilon.entry_size());
    emit_header("Psi", static_cast<std::size_t>(law.Psi[0].size()));
    emit_header("psi", static_cast<std::size_t>(law.psi[0].size()));
    out << "\n";
    for (int i = 0; i < g.size(); ++i) {
        out << fmt17(g.node(i));
        const double* m = flow.M.at(i, i);
        for (std::size_t q = 0; q < flow.M.entry_size(); ++q)
            out << "," << fmt17(m[q]);
        const double* u = flow.Upsilon.at(i, i);
        for (std::size_t q = 0; q < flow.Upsilon.entry_size(); ++q)
            out << "," << fmt17(u[q]);
        for (int q = 0; q < law.Psi[i].size(); ++q)
            out << "," << fmt17(law.Psi[i].data()[q]);
        for (int q = 0; q < law.psi[i].size(); ++q)
            out << "," << fmt17(law.psi[i][q]);
        out << "\n";
    }
    return out.str();
}

std::string ensemble_summary_csv(const PathEnsemble& ens) {
    std::ostringstream out;
    out << "node,s";
    for (int q = 1; q <= ens.n; ++q) out << ",mean_X_" << q;
    for (int q = 1; q <= ens.n; ++q) out << ",stderr_" << q;
    out << "\n";
    const long P = ens.paths;
    for (int i = ens.t_start; i <= ens.grid.steps(); ++i) {
        std::vector<double> mean(ens.n, 0.0), var(ens.n, 0.0);
        for (long p = 0; p < P; ++p) {
            const double* x = ens.state(p, i);
            for (int q = 0; q < ens.n; ++q) mean[q] += x[q];
        }
        for (int q = 0; q < ens.n; ++q) mean[q] /= static_cast<double>(P);
        for (long p = 0; p < P; ++p) {
            const double* x = ens.state(p, i);
            for (int q = 0; q < ens.n; ++q)
                var[q] += (x[q] - mean[q]) * (x[q] - mean[q]);
        }
        out << i << "," << fmt17(ens.grid.node(i));
        for (int q = 0; q < ens.n; ++q) out << "," << fmt17(mean[q]);
        for (int q = 0; q < ens.n; ++q)
            out << ","
                << fmt17(P > 1 ? std::sqrt(var[q] / static_cast<double>(P - 1) /
                                           static_cast<double>(P))
                               : 0.0);
        out << "\n";
    }
    return out.str();
}

std::string spike_csv(const SpikeReport& rep) {
    std::ostringstream out;
    out << "epsilon,dJ_over_eps,stderr\n";
    for (std::size_t e = 0; e < rep.eps_steps.size(); ++e)
        out << fmt17(rep.eps_steps[e] * rep.step) << ","
            << fmt17(rep.dj_over_eps[e]) << "," << fmt17(rep.dj_stderr[e])
            << "\n";
    return out.str();
}

void RunManifest::add_output(const std::string& path) {
    outputs.emplace_back(path, file_hash(path));
}

json RunManifest::to_json() const {
    json out;
    out["command"] = command;
    out["config"] = config_path;
    out["config_hash"] = config_hash;
    out["seed"] = seed;
    out["version"] = version;
    out["duration_seconds"] = duration_seconds;
    json files = json::array();
    for (const auto& [path, hash] : outputs)
        files.push_back({{"path", path}, {"hash", hash}});
    out["outputs"] = files;
    return out;
}

} // namespace tilq
