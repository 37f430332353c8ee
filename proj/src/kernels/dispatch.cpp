#include <atomic>
#include <cstdlib>
#include <string>

#include "cirl/kernels.hpp"

namespace cirl::kernels {

namespace {

bool cpu_has_avx2() {
#if defined(CIRL_HAVE_AVX2_KERNELS) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend probe() {
  if (const char* env = std::getenv("CIRL_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return Backend::Scalar;
    if (want == "avx2" && cpu_has_avx2()) return Backend::Avx2;
  }
  return cpu_has_avx2() ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<const KernelTable*>& active_table() {
  static std::atomic<const KernelTable*> t{&table(probe())};
  return t;
}

}  // namespace

std::string_view backend_name(Backend backend) {
  return backend == Backend::Avx2 ? "avx2" : "scalar";
}

bool backend_available(Backend backend) {
  return backend == Backend::Scalar || cpu_has_avx2();
}

const KernelTable& table(Backend backend) {
#if defined(CIRL_HAVE_AVX2_KERNELS)
  if (backend == Backend::Avx2) return avx2::kTable;
#endif
  (void)backend;
  return scalar::kTable;
}

Backend active_backend() {
  return active_table().load() == &scalar::kTable ? Backend::Scalar : Backend::Avx2;
}

void set_backend(Backend backend) {
  if (!backend_available(backend)) backend = Backend::Scalar;
  active_table().store(&table(backend));
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  active_table().load(std::memory_order_relaxed)->gemm_nn(m, n, k, a, b, c);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  active_table().load(std::memory_order_relaxed)->gemm_nt(m, n, k, a, b, c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  active_table().load(std::memory_order_relaxed)->gemm_tn(m, n, k, a, b, c);
}

double dot(const double* a, const double* b, std::size_t n) {
  return active_table().load(std::memory_order_relaxed)->dot(a, b, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active_table().load(std::memory_order_relaxed)->axpy(alpha, x, y, n);
}

}  // namespace cirl::kernels
