#pragma once

namespace panelboot {

// Sets the OpenMP thread budget used by every parallel kernel. Only one level
// of parallelism is ever active: loops nested inside a parallel region run
// serially on the calling thread. Results never depend on the budget.
void set_thread_budget(int threads);
int thread_budget();

// True when called from inside an active parallel region.
bool in_parallel_region();

}  // namespace panelboot
