// Serial reference kernels against the OpenMP versions on layer-sized products.
// Args: rows (pixels in a batch), inner width, output width, threads.

#include <benchmark/benchmark.h>

#include <vector>

#include "protoadapt/kernels.hpp"
#include "protoadapt/rng.hpp"

using namespace protoadapt;

namespace {

std::vector<float> filled(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

struct Operands {
  std::size_t m, k, n;
  std::vector<float> a, b, bt, grad, c, ct;

  explicit Operands(const benchmark::State& st)
      : m(static_cast<std::size_t>(st.range(0))),
        k(static_cast<std::size_t>(st.range(1))),
        n(static_cast<std::size_t>(st.range(2))),
        a(filled(m * k, 1)),
        b(filled(k * n, 2)),
        bt(filled(n * k, 3)),
        grad(filled(m * n, 4)),
        c(m * n),
        ct(k * n) {}
};

void set_counters(benchmark::State& st, const Operands& o) {
  st.counters["GFLOP/s"] = benchmark::Counter(2.0 * static_cast<double>(o.m * o.k * o.n),
                                              benchmark::Counter::kIsIterationInvariantRate,
                                              benchmark::Counter::kIs1000);
}

void BM_SerialNN(benchmark::State& st) {
  Operands o(st);
  for (auto _ : st) {
    kernels::serial::matmul_nn<float>(o.a, o.b, o.c, o.m, o.k, o.n);
    benchmark::DoNotOptimize(o.c.data());
  }
  set_counters(st, o);
}

void BM_ParallelNN(benchmark::State& st) {
  Operands o(st);
  kernels::set_num_threads(static_cast<int>(st.range(3)));
  for (auto _ : st) {
    kernels::parallel::matmul_nn<float>(o.a, o.b, o.c, o.m, o.k, o.n);
    benchmark::DoNotOptimize(o.c.data());
  }
  set_counters(st, o);
}

// Weight gradient: X^T * dY.
void BM_SerialTN(benchmark::State& st) {
  Operands o(st);
  for (auto _ : st) {
    kernels::serial::matmul_tn<float>(o.a, o.grad, o.ct, o.m, o.k, o.n);
    benchmark::DoNotOptimize(o.ct.data());
  }
  set_counters(st, o);
}

void BM_ParallelTN(benchmark::State& st) {
  Operands o(st);
  kernels::set_num_threads(static_cast<int>(st.range(3)));
  for (auto _ : st) {
    kernels::parallel::matmul_tn<float>(o.a, o.grad, o.ct, o.m, o.k, o.n);
    benchmark::DoNotOptimize(o.ct.data());
  }
  set_counters(st, o);
}

// Input gradient: dY * W^T.
void BM_SerialNT(benchmark::State& st) {
  Operands o(st);
  for (auto _ : st) {
    kernels::serial::matmul_nt<float>(o.a, o.bt, o.c, o.m, o.k, o.n);
    benchmark::DoNotOptimize(o.c.data());
  }
  set_counters(st, o);
}

void BM_ParallelNT(benchmark::State& st) {
  Operands o(st);
  kernels::set_num_threads(static_cast<int>(st.range(3)));
  for (auto _ : st) {
    kernels::parallel::matmul_nt<float>(o.a, o.bt, o.c, o.m, o.k, o.n);
    benchmark::DoNotOptimize(o.c.data());
  }
  set_counters(st, o);
}

constexpr long kShapes[][3] = {{1024, 27, 64}, {1024, 64, 32}, {8192, 32, 5}};

void serial_shapes(benchmark::internal::Benchmark* b) {
  for (const auto& s : kShapes) b->Args({s[0], s[1], s[2], 1});
  b->Unit(benchmark::kMicrosecond)->UseRealTime();
}

void parallel_shapes(benchmark::internal::Benchmark* b) {
  for (long threads : {1, 2, 4, 8})
    for (const auto& s : kShapes) b->Args({s[0], s[1], s[2], threads});
  b->Unit(benchmark::kMicrosecond)->UseRealTime();
}

}  // namespace

BENCHMARK(BM_SerialNN)->Apply(serial_shapes);
BENCHMARK(BM_ParallelNN)->Apply(parallel_shapes);
BENCHMARK(BM_SerialTN)->Apply(serial_shapes);
BENCHMARK(BM_ParallelTN)->Apply(parallel_shapes);
BENCHMARK(BM_SerialNT)->Apply(serial_shapes);
BENCHMARK(BM_ParallelNT)->Apply(parallel_shapes);

BENCHMARK_MAIN();
