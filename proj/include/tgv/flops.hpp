#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace tgv {

// Per-stage FLOP accounting.
//
// Conventions (fixed for the whole project):
//   - one multiply-accumulate       = 2 FLOPs
//   - elementwise op                = 1 FLOP per output element
//   - softmax                       = 5 FLOPs per element (max, sub, exp, sum, div)
//   - layer norm                    = 8 FLOPs per element
//   - data movement (gather/concat) = 0 FLOPs
//
// Counts are accumulated only on forward ops; backward passes are not
// metered. Entries never decrease.
class FlopsLedger {
public:
    void add(const std::string& stage, uint64_t flops) {
        if (flops == 0) return;
        entries_[stage] += flops;
        total_ += flops;
    }

    uint64_t total() const { return total_; }

    uint64_t stage(const std::string& name) const {
        auto it = entries_.find(name);
        return it == entries_.end() ? 0 : it->second;
    }

    const std::map<std::string, uint64_t>& entries() const { return entries_; }

    void reset() {
        entries_.clear();
        total_ = 0;
    }

private:
    std::map<std::string, uint64_t> entries_; // ordered: deterministic iteration
    uint64_t total_ = 0;
};

// RAII scope routing op-level FLOP counts into (ledger, stage name).
// Ops executed with no active scope are not metered. Scopes nest; the
// innermost one wins.
class FlopsScope {
public:
    FlopsScope(FlopsLedger& ledger, std::string stage);
    ~FlopsScope();

    FlopsScope(const FlopsScope&) = delete;
    FlopsScope& operator=(const FlopsScope&) = delete;

    // Called by tensor ops; no-op without an active scope.
    static void count(uint64_t flops);
    static bool active();

private:
    FlopsLedger* saved_ledger_;
    std::string saved_stage_;
};

} // namespace tgv
