#ifndef TILQ_PARALLEL_HPP
#define TILQ_PARALLEL_HPP

namespace tilq {

// Execution mode for the data-parallel kernels (path generation, row
// sweeps). Serial is the reference implementation; OpenMP must produce
// bit-identical results, which the kernels guarantee by writing each
// path/row into its own slot and reducing in a fixed order.
enum class ExecMode { Serial, OpenMP };

ExecMode exec_mode();
void set_exec_mode(ExecMode mode);

// Threads used in OpenMP regions (0 = library default).
int exec_threads();
void set_exec_threads(int threads);

} // namespace tilq

#endif
