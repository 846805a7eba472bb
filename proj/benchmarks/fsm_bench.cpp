#include <benchmark/benchmark.h>

#include "opforge/fsm.hpp"

namespace fsm = opforge::fsm;

namespace {

// Full sweep of the transition table per iteration.
void BM_NextStateSweep(benchmark::State& state) {
  for (auto _ : state) {
    for (std::size_t s = 0; s < fsm::kStateCount; ++s) {
      for (std::size_t e = 0; e < fsm::kEventCount; ++e) {
        for (int calls = 0; calls <= 15; calls += 5) {
          benchmark::DoNotOptimize(fsm::next_state(static_cast<fsm::FsmState>(s),
                                                   static_cast<fsm::EventKind>(e), {calls, 2, true}));
        }
      }
    }
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * fsm::kStateCount * fsm::kEventCount * 4));
}
BENCHMARK(BM_NextStateSweep);

void BM_NextStateMainPath(benchmark::State& state) {
  using fsm::EventKind;
  using fsm::FsmState;
  const EventKind path[] = {EventKind::kPromptBuilt, EventKind::kResponseParsed, EventKind::kLintPassed,
                            EventKind::kAllTestsPassed};
  for (auto _ : state) {
    FsmState s = FsmState::kInitialPrompt;
    for (auto e : path) s = fsm::next_state(s, e, {15, 2, true});
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_NextStateMainPath);

}  // namespace
