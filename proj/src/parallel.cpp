#include "panelboot/parallel.hpp"

#include <omp.h>

#include "panelboot/errors.hpp"

namespace panelboot {

void set_thread_budget(int threads) {
  if (threads < 1) throw UsageError("thread budget must be >= 1");
  omp_set_max_active_levels(1);
  omp_set_num_threads(threads);
}

int thread_budget() { return omp_get_max_threads(); }

bool in_parallel_region() { return omp_in_parallel() != 0; }

}  // namespace panelboot
