#include "tgv/flops.hpp"

namespace tgv {

namespace {
thread_local FlopsLedger* g_ledger = nullptr;
thread_local std::string g_stage;
} // namespace

FlopsScope::FlopsScope(FlopsLedger& ledger, std::string stage)
    : saved_ledger_(g_ledger), saved_stage_(std::move(g_stage)) {
    g_ledger = &ledger;
    g_stage = std::move(stage);
}

FlopsScope::~FlopsScope() {
    g_ledger = saved_ledger_;
    g_stage = std::move(saved_stage_);
}

void FlopsScope::count(uint64_t flops) {
    if (g_ledger != nullptr) g_ledger->add(g_stage, flops);
}

bool FlopsScope::active() { return g_ledger != nullptr; }

} // namespace tgv
