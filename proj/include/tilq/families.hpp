#ifndef TILQ_FAMILIES_HPP
#define TILQ_FAMILIES_HPP

#include <string>

#include "tilq/errors.hpp"

namespace tilq {

// Built-in scalar time profiles for coefficients and cost weights.
// Two-argument weights apply the profile in the first (initial-time)
// argument: W(t, s) = f(t) * V.
struct FamilySpec {
    enum class Kind {
        Constant,        // 1
        Affine,          // a0 + a1 t
        ExpDiscount,     // exp(-delta t)
        Hyperbolic,      // 1 / (1 + kappa t)
        QuasiHyperbolic, // 1 at t = 0, beta * exp(-delta t) for t > 0
    };

    Kind kind = Kind::Constant;
    double a0 = 0.0;
    double a1 = 0.0;
    double delta = 0.0;
    double kappa = 0.0;
    double beta = 1.0;

    double operator()(double t) const;

    static FamilySpec parse(const std::string& name, const std::string& key_path);
    static bool known(const std::string& name);
};

} // namespace tilq

#endif
