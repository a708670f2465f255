#include "tilq/config.hpp"

#include <cmath>
#include <fstream>

#include "tilq/families.hpp"

namespace tilq {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& key, const std::string& what) {
    throw ConfigError(key + ": " + what);
}

double as_number(const json& v, const std::string& key) {
    if (!v.is_number()) fail(key, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail(key, "non-finite sample");
    return x;
}

// Scalars broadcast to v*I for square shapes and constant vectors for
// column shapes; anything else needs explicit nested arrays.
Eigen::MatrixXd parse_value(const json& v, int rows, int cols,
                            const std::string& key) {
    if (v.is_number()) {
        const double x = as_number(v, key);
        if (cols == 1) return Eigen::VectorXd::Constant(rows, x);
        if (rows == cols)
            return x * Eigen::MatrixXd::Identity(rows, cols);
        fail(key, "scalar value cannot fill a non-square matrix");
    }
    if (!v.is_array()) fail(key, "expected a number or array");
    // vector form
    if (!v.empty() && v[0].is_number()) {
        if (cols != 1 || static_cast<int>(v.size()) != rows)
            fail(key, "wrong vector length");
        Eigen::VectorXd out(rows);
        for (int i = 0; i < rows; ++i) out[i] = as_number(v[i], key);
        return out;
    }
    if (static_cast<int>(v.size()) != rows) fail(key, "wrong row count");
    Eigen::MatrixXd out(rows, cols);
    for (int r = 0; r < rows; ++r) {
        const json& row = v[r];
        if (!row.is_array() || static_cast<int>(row.size()) != cols)
            fail(key, "wrong column count in row " + std::to_string(r));
        for (int c = 0; c < cols; ++c) out(r, c) = as_number(row[c], key);
    }
    return out;
}

struct Profile {
    FamilySpec family;
    Eigen::MatrixXd value;
    bool has_family = false;
};

Profile parse_profile(const json& entry, int rows, int cols,
                      const std::string& key) {
    Profile p;
    if (!entry.is_object()) fail(key, "expected an object");
    if (entry.contains("family")) {
        if (!entry["family"].is_string()) fail(key + ".family", "expected a string");
        p.family = FamilySpec::parse(entry["family"].get<std::string>(), key);
        p.has_family = true;
        switch (p.family.kind) {
            case FamilySpec::Kind::Affine:
                p.family.a0 = entry.contains("a0") ? as_number(entry["a0"], key + ".a0") : 0.0;
                p.family.a1 = entry.contains("a1") ? as_number(entry["a1"], key + ".a1") : 0.0;
                break;
            case FamilySpec::Kind::ExpDiscount:
                p.family.delta =
                    entry.contains("delta") ? as_number(entry["delta"], key + ".delta") : 0.0;
                break;
            case FamilySpec::Kind::Hyperbolic:
                p.family.kappa =
                    entry.contains("kappa") ? as_number(entry["kappa"], key + ".kappa") : 0.0;
                break;
            case FamilySpec::Kind::QuasiHyperbolic:
                p.family.beta =
                    entry.contains("beta") ? as_number(entry["beta"], key + ".beta") : 1.0;
                p.family.delta =
                    entry.contains("delta") ? as_number(entry["delta"], key + ".delta") : 0.0;
                break;
            case FamilySpec::Kind::Constant:
                break;
        }
        p.value = entry.contains("value")
                      ? parse_value(entry["value"], rows, cols, key + ".value")
                      : parse_value(json(1.0), rows, cols, key + ".value");
        return p;
    }
    if (entry.contains("table")) return p;  // handled by the caller
    fail(key, "expected 'family' or 'table'");
}

std::vector<Eigen::MatrixXd> node_table(const json* entry, const TimeGrid& grid,
                                        int rows, int cols,
                                        const std::string& key) {
    const int np = grid.size();
    std::vector<Eigen::MatrixXd> out(np, Eigen::MatrixXd::Zero(rows, cols));
    if (!entry) return out;
    if (entry->contains("table")) {
        const json& tab = (*entry)["table"];
        if (!tab.is_array() || static_cast<int>(tab.size()) != np)
            fail(key + ".table", "expected " + std::to_string(np) + " samples");
        for (int i = 0; i < np; ++i)
            out[i] = parse_value(tab[i], rows, cols,
                                 key + ".table[" + std::to_string(i) + "]");
        return out;
    }
    const Profile p = parse_profile(*entry, rows, cols, key);
    for (int i = 0; i < np; ++i) out[i] = p.family(grid.node(i)) * p.value;
    return out;
}

std::vector<Eigen::VectorXd> node_table_vec(const json* entry,
                                            const TimeGrid& grid, int rows,
                                            const std::string& key) {
    auto mats = node_table(entry, grid, rows, 1, key);
    std::vector<Eigen::VectorXd> out(mats.size());
    for (std::size_t i = 0; i < mats.size(); ++i) out[i] = mats[i].col(0);
    return out;
}

TriangularField triangle_table(const json* entry, const TimeGrid& grid,
                               int rows, int cols, const std::string& key,
                               bool symmetrize) {
    const int np = grid.size();
    TriangularField f(grid, rows, cols);
    if (!entry) return f;
    if (entry->contains("table")) {
        const json& tab = (*entry)["table"];
        if (!tab.is_array() || static_cast<int>(tab.size()) != np)
            fail(key + ".table", "expected " + std::to_string(np) + " rows");
        for (int i = 0; i < np; ++i) {
            const json& row = tab[i];
            if (!row.is_array() || static_cast<int>(row.size()) != np - i)
                fail(key + ".table[" + std::to_string(i) + "]",
                     "expected " + std::to_string(np - i) + " entries");
            for (int j = i; j < np; ++j) {
                Eigen::MatrixXd v = parse_value(
                    row[j - i], rows, cols,
                    key + ".table[" + std::to_string(i) + "][" +
                        std::to_string(j - i) + "]");
                f.set(i, j, symmetrize ? symmetrized(v) : v);
            }
        }
        return f;
    }
    const Profile p = parse_profile(*entry, rows, cols, key);
    const Eigen::MatrixXd base = symmetrize ? symmetrized(p.value) : p.value;
    for (int i = 0; i < np; ++i) {
        const Eigen::MatrixXd vi = p.family(grid.node(i)) * base;
        for (int j = i; j < np; ++j) f.set(i, j, vi);
    }
    return f;
}

const json* find(const json& obj, const std::string& name) {
    auto it = obj.find(name);
    return it == obj.end() ? nullptr : &*it;
}

template <class Fn>
auto indexed_tables(const json* entry, int count, const std::string& key, Fn fn)
    -> std::vector<decltype(fn(nullptr, key))> {
    std::vector<decltype(fn(nullptr, key))> out;
    out.reserve(count);
    if (!entry) {
        for (int i = 0; i < count; ++i) out.push_back(fn(nullptr, key));
        return out;
    }
    if (entry->is_array()) {
        if (static_cast<int>(entry->size()) != count)
            fail(key, "expected " + std::to_string(count) + " entries");
        for (int i = 0; i < count; ++i)
            out.push_back(fn(&(*entry)[i], key + "[" + std::to_string(i) + "]"));
        return out;
    }
    if (count != 1) fail(key, "expected an array of entries");
    out.push_back(fn(entry, key));
    return out;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    if (m.cols() == 1 && m.rows() == 1) return json(m(0, 0));
    if (m.cols() == 1) {
        json a = json::array();
        for (int r = 0; r < m.rows(); ++r) a.push_back(m(r, 0));
        return a;
    }
    json a = json::array();
    for (int r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        a.push_back(row);
    }
    return a;
}

template <class Tab>
json node_table_to_json(const Tab& tab) {
    json t = json::array();
    for (const auto& v : tab) t.push_back(matrix_to_json(v));
    return json{{"table", t}};
}

json triangle_to_json(const TriangularField& f) {
    const int np = f.grid().size();
    json rows = json::array();
    for (int i = 0; i < np; ++i) {
        json row = json::array();
        for (int j = i; j < np; ++j) row.push_back(matrix_to_json(f.mat(i, j)));
        rows.push_back(row);
    }
    return json{{"table", rows}};
}

} // namespace

ProblemSpec build_problem(const json& config) {
    if (!config.is_object()) throw ConfigError("config: expected an object");

    ProblemSpec spec;
    const json* dims = find(config, "dims");
    if (!dims) throw ConfigError("dims: missing");
    spec.n = dims->contains("n") ? (*dims)["n"].get<int>() : 1;
    spec.m = dims->contains("m") ? (*dims)["m"].get<int>() : 1;
    spec.d = dims->contains("d") ? (*dims)["d"].get<int>() : 1;
    if (spec.n < 1) fail("dims.n", "must be >= 1");
    if (spec.m < 1) fail("dims.m", "must be >= 1");
    if (spec.d < 0) fail("dims.d", "must be >= 0");

    const json* grid = find(config, "grid");
    if (!grid) throw ConfigError("grid: missing");
    if (!grid->contains("T")) fail("grid.T", "missing");
    if (!grid->contains("N")) fail("grid.N", "missing");
    spec.grid = TimeGrid(as_number((*grid)["T"], "grid.T"), (*grid)["N"].get<int>());

    if (const json* jumps = find(config, "jumps")) {
        const json* marks = find(*jumps, "marks");
        const json* intens = find(*jumps, "intensities");
        const std::size_t K = marks ? marks->size() : 0;
        if (!intens || intens->size() != K)
            fail("jumps.intensities", "length must match jumps.marks");
        for (std::size_t k = 0; k < K; ++k) {
            const json& mk = (*marks)[k];
            Eigen::VectorXd z;
            if (mk.is_number()) {
                z.resize(1);
                z[0] = as_number(mk, "jumps.marks[" + std::to_string(k) + "]");
            } else {
                z = parse_value(mk, static_cast<int>(mk.size()), 1,
                                "jumps.marks[" + std::to_string(k) + "]")
                        .col(0);
            }
            spec.jumps.marks.push_back(z);
            spec.jumps.intensities.push_back(
                as_number((*intens)[k], "jumps.intensities[" + std::to_string(k) + "]"));
        }
    }
    const int K = spec.jumps.count();

    const json empty = json::object();
    const json& coeff = config.contains("coeff") ? config["coeff"] : empty;
    const auto& g = spec.grid;
    spec.coeffs.A = node_table(find(coeff, "A"), g, spec.n, spec.n, "coeff.A");
    spec.coeffs.B = node_table(find(coeff, "B"), g, spec.n, spec.m, "coeff.B");
    spec.coeffs.b = node_table_vec(find(coeff, "b"), g, spec.n, "coeff.b");
    spec.coeffs.C = indexed_tables(
        find(coeff, "C"), spec.d, "coeff.C", [&](const json* e, const std::string& k) {
            return node_table(e, g, spec.n, spec.n, k);
        });
    spec.coeffs.D = indexed_tables(
        find(coeff, "D"), spec.d, "coeff.D", [&](const json* e, const std::string& k) {
            return node_table(e, g, spec.n, spec.m, k);
        });
    spec.coeffs.sigma = indexed_tables(
        find(coeff, "sigma"), spec.d, "coeff.sigma",
        [&](const json* e, const std::string& k) {
            return node_table_vec(e, g, spec.n, k);
        });
    spec.coeffs.E = indexed_tables(
        find(coeff, "E"), K, "coeff.E", [&](const json* e, const std::string& k) {
            return node_table(e, g, spec.n, spec.n, k);
        });
    spec.coeffs.F = indexed_tables(
        find(coeff, "F"), K, "coeff.F", [&](const json* e, const std::string& k) {
            return node_table(e, g, spec.n, spec.m, k);
        });
    spec.coeffs.c = indexed_tables(
        find(coeff, "c"), K, "coeff.c", [&](const json* e, const std::string& k) {
            return node_table_vec(e, g, spec.n, k);
        });

    const json& cost = config.contains("cost") ? config["cost"] : empty;
    spec.costs.Q = triangle_table(find(cost, "Q"), g, spec.n, spec.n, "cost.Q", true);
    spec.costs.Qbar =
        triangle_table(find(cost, "Qbar"), g, spec.n, spec.n, "cost.Qbar", true);
    spec.costs.R = triangle_table(find(cost, "R"), g, spec.m, spec.m, "cost.R", true);
    spec.costs.G = node_table(find(cost, "G"), g, spec.n, spec.n, "cost.G");
    spec.costs.Gbar = node_table(find(cost, "Gbar"), g, spec.n, spec.n, "cost.Gbar");
    for (auto& v : spec.costs.G) v = symmetrized(v);
    for (auto& v : spec.costs.Gbar) v = symmetrized(v);
    spec.costs.mu1 = node_table(find(cost, "mu1"), g, spec.n, spec.n, "cost.mu1");
    spec.costs.mu2 = node_table_vec(find(cost, "mu2"), g, spec.n, "cost.mu2");

    if (config.contains("x0"))
        spec.x0 = parse_value(config["x0"], spec.n, 1, "x0").col(0);
    else
        spec.x0 = Eigen::VectorXd::Zero(spec.n);

    spec.validate();
    return spec;
}

ProblemSpec load_problem(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config: parse failure in '" + path + "': " + e.what());
    }
    return build_problem(j);
}

json serialize(const ProblemSpec& spec) {
    json out;
    out["dims"] = {{"n", spec.n}, {"m", spec.m}, {"d", spec.d}};
    out["grid"] = {{"T", spec.grid.horizon()}, {"N", spec.grid.steps()}};
    json marks = json::array(), intens = json::array();
    for (int k = 0; k < spec.jumps.count(); ++k) {
        marks.push_back(matrix_to_json(spec.jumps.marks[k]));
        intens.push_back(spec.jumps.intensities[k]);
    }
    out["jumps"] = {{"marks", marks}, {"intensities", intens}};

    json coeff;
    coeff["A"] = node_table_to_json(spec.coeffs.A);
    coeff["B"] = node_table_to_json(spec.coeffs.B);
    coeff["b"] = node_table_to_json(spec.coeffs.b);
    auto per_index = [](const auto& tabs) {
        json a = json::array();
        for (const auto& t : tabs) a.push_back(node_table_to_json(t));
        return a;
    };
    coeff["C"] = per_index(spec.coeffs.C);
    coeff["D"] = per_index(spec.coeffs.D);
    coeff["sigma"] = per_index(spec.coeffs.sigma);
    coeff["E"] = per_index(spec.coeffs.E);
    coeff["F"] = per_index(spec.coeffs.F);
    coeff["c"] = per_index(spec.coeffs.c);
    out["coeff"] = coeff;

    json cost;
    cost["Q"] = triangle_to_json(spec.costs.Q);
    cost["Qbar"] = triangle_to_json(spec.costs.Qbar);
    cost["R"] = triangle_to_json(spec.costs.R);
    cost["G"] = node_table_to_json(spec.costs.G);
    cost["Gbar"] = node_table_to_json(spec.costs.Gbar);
    cost["mu1"] = node_table_to_json(spec.costs.mu1);
    cost["mu2"] = node_table_to_json(spec.costs.mu2);
    out["cost"] = cost;

    out["x0"] = matrix_to_json(spec.x0);
    return out;
}

} // namespace tilq
