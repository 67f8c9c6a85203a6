#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "calib/core.hpp"
#include "calib/errors.hpp"
#include "calib/rng.hpp"

namespace calib {

enum class PriorFamily { gaussian, gamma, uniform };

inline std::string to_string(PriorFamily f) {
    switch (f) {
        case PriorFamily::gaussian: return "gaussian";
        case PriorFamily::gamma: return "gamma";
        case PriorFamily::uniform: return "unif";
    }
    throw domain_error("unknown prior family");
}

inline PriorFamily prior_family_from_string(const std::string& s) {
    if (s == "gaussian") return PriorFamily::gaussian;
    if (s == "gamma") return PriorFamily::gamma;
    if (s == "unif") return PriorFamily::uniform;
    throw config_error("unknown prior family '" + s + "'");
}

// One marginal prior: gaussian(m, V), gamma(shape a, scale k) or unif(a, b).
class PriorSpec {
  public:
    PriorSpec(PriorFamily family, double p1, double p2) : family_(family), p1_(p1), p2_(p2) {
        switch (family_) {
            case PriorFamily::gaussian:
                if (p2_ <= 0) throw domain_error("gaussian prior requires V > 0");
                break;
            case PriorFamily::gamma:
                if (p1_ <= 0 || p2_ <= 0)
                    throw domain_error("gamma prior requires a > 0 and k > 0");
                break;
            case PriorFamily::uniform:
                if (p1_ >= p2_) throw domain_error("uniform prior requires a < b");
                break;
        }
    }

    PriorFamily family() const { return family_; }
    double param1() const { return p1_; }
    double param2() const { return p2_; }

    bool positive_support() const {
        switch (family_) {
            case PriorFamily::gamma: return true;
            case PriorFamily::uniform: return p1_ >= 0;
            case PriorFamily::gaussian: return false;
        }
        return false;
    }

    double log_density(double x) const {
        constexpr double neg_inf = -std::numeric_limits<double>::infinity();
        switch (family_) {
            case PriorFamily::gaussian: {
                const double z = x - p1_;
                return -0.5 * std::log(2 * M_PI * p2_) - 0.5 * z * z / p2_;
            }
            case PriorFamily::gamma:
                if (x <= 0) return neg_inf;
                return -p1_ * std::log(p2_) - std::lgamma(p1_) + (p1_ - 1) * std::log(x) -
                       x / p2_;
            case PriorFamily::uniform:
                if (x < p1_ || x > p2_) return neg_inf;
                return -std::log(p2_ - p1_);
        }
        return neg_inf;
    }

    double sample(Rng& rng) const {
        switch (family_) {
            case PriorFamily::gaussian:
                return p1_ + std::sqrt(p2_) * rnorm(rng);
            case PriorFamily::gamma:
                return std::gamma_distribution<double>(p1_, p2_)(rng);
            case PriorFamily::uniform:
                return std::uniform_real_distribution<double>(p1_, p2_)(rng);
        }
        throw domain_error("unknown prior family");
    }

  private:
    PriorFamily family_;
    double p1_, p2_;
};

// Ordered slot-wise priors matching a ParameterLayout: theta first, then the
// discrepancy pair when present, the noise variance last. Variance slots must
// have nonnegative support.
struct PriorSet {
    std::vector<PriorSpec> slots;

    void validate_for(const ParameterLayout& layout) const {
        if (static_cast<int>(slots.size()) != layout.total())
            throw structural_error("prior count " + std::to_string(slots.size()) +
                                   " does not match layout total " +
                                   std::to_string(layout.total()));
        auto check_positive = [&](int slot, const std::string& name) {
            if (!slots[static_cast<size_t>(slot)].positive_support())
                throw domain_error("prior for " + name + " must have support in (0, inf)");
        };
        if (layout.has_discrepancy) {
            check_positive(layout.p, "sigma_delta2");
            check_positive(layout.p + 1, "psi_delta");
        }
        check_positive(layout.total() - 1, "sigma_e2");
    }
};

inline double log_prior_total(const PriorSet& set, const Eigen::VectorXd& v) {
    if (static_cast<Eigen::Index>(set.slots.size()) != v.size())
        throw structural_error("prior set length does not match parameter vector");
    double total = 0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        total += set.slots[static_cast<size_t>(i)].log_density(v(i));
        if (!std::isfinite(total)) return -std::numeric_limits<double>::infinity();
    }
    return total;
}

inline Eigen::VectorXd sample_prior(const PriorSet& set, Rng& rng) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(set.slots.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i)
        v(i) = set.slots[static_cast<size_t>(i)].sample(rng);
    return v;
}

inline nlohmann::json to_json(const PriorSpec& spec) {
    return {{"type", to_string(spec.family())}, {"opt", {spec.param1(), spec.param2()}}};
}

inline PriorSpec prior_from_json(const nlohmann::json& j) {
    if (!j.contains("type") || !j.contains("opt") || !j["opt"].is_array() || j["opt"].size() != 2)
        throw config_error("prior entry must be {\"type\": ..., \"opt\": [a, b]}");
    return PriorSpec(prior_family_from_string(j["type"].get<std::string>()),
                     j["opt"][0].get<double>(), j["opt"][1].get<double>());
}

inline nlohmann::json to_json(const PriorSet& set) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : set.slots) arr.push_back(to_json(s));
    return arr;
}

inline PriorSet prior_set_from_json(const nlohmann::json& arr) {
    PriorSet set;
    for (const auto& j : arr) set.slots.push_back(prior_from_json(j));
    return set;
}

}  // namespace calib
