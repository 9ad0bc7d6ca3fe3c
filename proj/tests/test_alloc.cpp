// Watches allocation sizes during a large fit: the solver must never build
// the dense (n + dim_phi)^2 Hessian.

#include <atomic>
#include <cstdio>
#include <cstdlib>

#include "panelboot/block_newton.hpp"
#include "panelboot/models.hpp"

namespace {
std::atomic<std::size_t> largest{0};
std::atomic<bool> watching{false};

void note(std::size_t n) {
  if (!watching.load(std::memory_order_relaxed)) return;
  std::size_t cur = largest.load(std::memory_order_relaxed);
  while (n > cur && !largest.compare_exchange_weak(cur, n)) {
  }
}
}  // namespace

// glibc lets the executable interpose malloc; Eigen and operator new both
// allocate through it.
extern "C" {
void* __libc_malloc(std::size_t);
void* __libc_calloc(std::size_t, std::size_t);
void* __libc_realloc(void*, std::size_t);

void* malloc(std::size_t n) {
  note(n);
  return __libc_malloc(n);
}
void* calloc(std::size_t k, std::size_t n) {
  note(k * n);
  return __libc_calloc(k, n);
}
void* realloc(void* p, std::size_t n) {
  note(n);
  return __libc_realloc(p, n);
}
}

int main() {
  using namespace panelboot;
  const std::size_t n = 20000, m = 6;
  Rng rng = make_stream(1, {});
  const PanelDataset d = dl_simulate(0.5, Vec::LinSpaced(static_cast<long>(n), -1, 1), m, InitialCondition::stationary, rng);
  DynamicLogitModel dl;
  watching = true;
  const FitResult f = fit(dl, d);
  watching = false;
  const double dense = double(n + 1) * double(n + 1) * 8.0;
  const std::size_t big = largest.load();
  const bool ok = f.converged && double(big) < dense / 1000.0;
  std::printf("%s largest allocation %zu bytes (dense Hessian would be %.0f)\n", ok ? "PASS" : "FAIL", big, dense);
  return ok ? 0 : 1;
}
