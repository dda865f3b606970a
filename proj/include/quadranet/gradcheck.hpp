#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace quadranet {

struct GradCheckEntry {
    std::string name;
    double rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;   // over the finite-difference entries
    bool pass = false;
    std::string summary() const;
};

// Finite-difference checks (h = 1e-5, rel err < 1e-5) for every tape op and a
// full QuadraBlock, over `num_seeds` seeds starting at `seed`, plus the
// optimized-vs-full-retention quadconv backward equivalence (<= 1e-12).
GradCheckReport run_gradient_checks(std::uint64_t seed, int num_seeds = 5);

}  // namespace quadranet
