#pragma once

// Dense fp64 inner-loop kernels. A scalar reference implementation is always
// compiled; an AVX2+FMA variant is compiled on x86-64 and selected at runtime
// when the CPU supports it. Every kernel computes each output row from its own
// input row only, so results for row i never depend on how many rows follow.
//
// All matrices are row-major and densely packed.

#include <cstddef>
#include <string_view>

namespace cirl::kernels {

enum class Backend { Scalar, Avx2 };

std::string_view backend_name(Backend backend);
bool backend_available(Backend backend);

// The active backend is chosen once: CIRL_SIMD=scalar|avx2 overrides the CPU probe.
Backend active_backend();
void set_backend(Backend backend);

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);
// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);
// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);

double dot(const double* a, const double* b, std::size_t n);
// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n);

struct KernelTable {
  void (*gemm_nn)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
  void (*gemm_nt)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
  void (*gemm_tn)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
  double (*dot)(const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
};

// Direct access to one backend's table, used by the equivalence tests.
const KernelTable& table(Backend backend);

namespace scalar {
extern const KernelTable kTable;
}
#if defined(CIRL_HAVE_AVX2_KERNELS)
namespace avx2 {
extern const KernelTable kTable;
}
#endif

}  // namespace cirl::kernels
