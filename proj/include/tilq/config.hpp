#ifndef TILQ_CONFIG_HPP
#define TILQ_CONFIG_HPP

#include <json.hpp>
#include <string>

#include "tilq/problem.hpp"

namespace tilq {

// Builds a fully sampled ProblemSpec from a configuration document.
// Coefficients are given either as explicit sample tables or as a named
// parametric family (constant, affine, exp, hyperbolic, quasi_hyperbolic);
// families are evaluated at every grid node, and in the first argument on
// the triangle for two-argument weights. Errors name the offending key.
ProblemSpec build_problem(const nlohmann::json& config);

ProblemSpec load_problem(const std::string& path);

// Self-describing document with every sampled table; build_problem on the
// result reproduces the spec bit-exactly.
nlohmann::json serialize(const ProblemSpec& spec);

} // namespace tilq

#endif
