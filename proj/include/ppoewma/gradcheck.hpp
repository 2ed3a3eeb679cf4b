#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ppoewma {

struct GradcheckOptions {
    int instances = 100;
    std::uint64_t seed = 1;
    double fd_tolerance = 1e-4;        // max relative error vs central differences
    double identity_tolerance = 1e-12; // max abs error for exact identities
    /// Mutation fixture: negates the analytic gradient of the clip family so
    /// that the suite can be shown to catch a sign error.
    bool flip_clip_gradient_sign = false;
};

struct GradcheckEntry {
    std::string name;
    std::string kind;  // "finite-difference" or "identity"
    int checked = 0;
    int skipped = 0;   // instances too close to a clip or cap kink
    double max_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;

    bool passed() const;
    /// One line per entry followed by an overall PASS/FAIL line.
    std::string format() const;
    std::string csv() const;
};

/// Finite-difference checks of every objective x policy configuration, the
/// value and auxiliary losses and network backward passes, plus the exact
/// identities between objective variants, GAE and the EWMA.
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

}  // namespace ppoewma
