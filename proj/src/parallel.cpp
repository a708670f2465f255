#include "tilq/parallel.hpp"

namespace tilq {

namespace {
#ifdef _OPENMP
ExecMode g_mode = ExecMode::OpenMP;
#else
ExecMode g_mode = ExecMode::Serial;
#endif
int g_threads = 0;
} // namespace

ExecMode exec_mode() { return g_mode; }

void set_exec_mode(ExecMode mode) {
#ifndef _OPENMP
    (void)mode;
    g_mode = ExecMode::Serial;
#else
    g_mode = mode;
#endif
}

int exec_threads() { return g_threads; }
void set_exec_threads(int threads) { g_threads = threads < 0 ? 0 : threads; }

} // namespace tilq
