#include "permflow/blas.hpp"

#include <cblas.h>

#include <cstdlib>
#include <mutex>
#include <thread>

extern "C" void openblas_set_num_threads(int);

namespace permflow {

namespace {

std::once_flag g_blas_once;

// OpenBLAS picks its kernels from CPUID. Some virtualized hosts hide
// the CPU model, which makes it fall back to a pre-AVX kernel that is
// several times slower. If the instruction sets are actually there,
// pin a matching core type before the first BLAS call.
void setup_core_type() {
#if defined(__x86_64__) || defined(__i386__)
  if (std::getenv("OPENBLAS_CORETYPE") == nullptr) {
    __builtin_cpu_init();
    if (__builtin_cpu_supports("avx512f") && __builtin_cpu_supports("avx512vl")) {
      setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 1);
    } else if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
      setenv("OPENBLAS_CORETYPE", "HASWELL", 1);
    }
  }
#endif
}

void blas_init() { setup_core_type(); }

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a,
          int lda, const double* b, int ldb, double beta, double* c, int ldc) {
  std::call_once(g_blas_once, blas_init);
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c,
              ldc);
}

void set_blas_threads(int n) {
  std::call_once(g_blas_once, blas_init);
  openblas_set_num_threads(n);
}

int hardware_threads() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

}  // namespace permflow
