#pragma once

#include <string>
#include <vector>

namespace tgv::verify {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail; // includes the tolerance the check ran at
};

// The cross-cutting oracle suite: dense-encode equivalence, cache
// exactness, router gradients and weight identities, ledger
// decompositions, fusion set equality, budget monotonicity, and the
// binary format round trips.
std::vector<CheckResult> run_all(uint64_t seed = 7);

bool all_pass(const std::vector<CheckResult>& results);

} // namespace tgv::verify
