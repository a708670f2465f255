#include "tilq/families.hpp"

#include <cmath>

namespace tilq {

double FamilySpec::operator()(double t) const {
    switch (kind) {
        case Kind::Constant: return 1.0;
        case Kind::Affine: return a0 + a1 * t;
        case Kind::ExpDiscount: return std::exp(-delta * t);
        case Kind::Hyperbolic: return 1.0 / (1.0 + kappa * t);
        case Kind::QuasiHyperbolic:
            return t == 0.0 ? 1.0 : beta * std::exp(-delta * t);
    }
    return 0.0;
}

FamilySpec FamilySpec::parse(const std::string& name, const std::string& key_path) {
    FamilySpec f;
    if (name == "constant") f.kind = Kind::Constant;
    else if (name == "affine") f.kind = Kind::Affine;
    else if (name == "exp" || name == "exponential") f.kind = Kind::ExpDiscount;
    else if (name == "hyperbolic") f.kind = Kind::Hyperbolic;
    else if (name == "quasi_hyperbolic" || name == "quasi-hyperbolic")
        f.kind = Kind::QuasiHyperbolic;
    else
        throw ConfigError(key_path + ".family: unknown family '" + name + "'");
    return f;
}

bool FamilySpec::known(const std::string& name) {
    return name == "constant" || name == "affine" || name == "exp" ||
           name == "exponential" || name == "hyperbolic" ||
           name == "quasi_hyperbolic" || name == "quasi-hyperbolic";
}

} // namespace tilq
