// Micro-benchmarks for the inner loops behind the access-path scenarios.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "evidx/bench/dataset.hpp"
#include "evidx/bench/scenario.hpp"
#include "evidx/event_directory.hpp"
#include "evidx/query.hpp"
#include "evidx/tag_db.hpp"

namespace {

using namespace evidx;

std::vector<TagRecord> make_tags(std::size_t n) {
  const TagSchema& schema = TagSchema::builtin();
  bench::DatasetSpec spec = bench::DatasetSpec::small();
  const bench::FlagModel model(spec);
  const FlagFunction flags = model.function();
  bench::Rng rng(11);
  std::vector<TagRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    EventRecord ev;
    ev.kind = RecordKind::kEvent;
    ev.run = 1;
    ev.event = static_cast<std::uint32_t>(i + 1);
    ev.payload = encode_summary(bench::generate_summary(rng, spec));
    out.push_back(derive_tag(ev, schema, flags));
  }
  return out;
}

void BM_DeriveTag(benchmark::State& state) {
  const TagSchema& schema = TagSchema::builtin();
  const bench::DatasetSpec spec = bench::DatasetSpec::small();
  const FlagFunction flags = bench::FlagModel(spec).function();
  bench::Rng rng(3);
  EventRecord ev;
  ev.kind = RecordKind::kEvent;
  ev.run = 1;
  ev.event = 1;
  ev.payload = encode_summary(bench::generate_summary(rng, spec));
  for (auto _ : state) benchmark::DoNotOptimize(derive_tag(ev, schema, flags));
}
BENCHMARK(BM_DeriveTag);

void BM_CompiledQuery(benchmark::State& state) {
  const auto tags = make_tags(4096);
  const TagSchema& schema = TagSchema::builtin();
  const auto k = static_cast<std::uint32_t>(state.range(0));
  const CompiledQuery q(parse_query(bench::variable_sweep_query(k), schema), schema);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(q.matches(tags[i].slab().data()));
    i = (i + 1) & 4095;
  }
}
BENCHMARK(BM_CompiledQuery)->DenseRange(0, 6);

void BM_InterpretedQuery(benchmark::State& state) {
  const auto tags = make_tags(4096);
  const QueryAST ast = parse_query("ET_TOTAL > 30 and flag(OFFLINE, 0)", TagSchema::builtin());
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(evaluate(ast, tags[i].view()));
    i = (i + 1) & 4095;
  }
}
BENCHMARK(BM_InterpretedQuery);

void BM_DirectorySelect(benchmark::State& state) {
  EventDirectory dir;
  dir.files.push_back({1, "mdst/events.evst", ""});
  std::mt19937_64 rng(5);
  for (std::uint32_t i = 0; i < 50000; ++i) {
    DirEntry e;
    e.seq_id = i + 1;
    e.run = 1;
    e.event = i + 1;
    e.offset = 16 + std::uint64_t{i} * 25025;
    for (auto& w : e.flags.words) w = static_cast<std::uint32_t>(rng());
    dir.entries.push_back(e);
  }
  const FlagExpr expr = FlagExpr::flag(3) && !FlagExpr::flag(0);
  for (auto _ : state) benchmark::DoNotOptimize(count_selected(dir, expr));
  state.SetItemsProcessed(state.iterations() * 50000);
}
BENCHMARK(BM_DirectorySelect);

}  // namespace
BENCHMARK_MAIN();
